#include "rollvid/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <cstdlib>
#include <new>
#include <unordered_set>

// Every heap block starts on a 64-byte boundary. Eigen's vectorized kernels
// peel unaligned heads, so with malloc's 16-byte alignment the same product
// could round differently from one allocation to the next.
void* operator new(std::size_t n) {
    if (void* p = std::aligned_alloc(64, (std::max<std::size_t>(n, 1) + 63) & ~std::size_t{63})) return p;
    throw std::bad_alloc();
}
void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

namespace rollvid {

namespace {

std::atomic<std::int64_t> g_live_bytes{0};
std::atomic<std::int64_t> g_peak_bytes{0};
thread_local bool t_grad_enabled = true;

void track_alloc(std::int64_t bytes) {
    const std::int64_t now = g_live_bytes.fetch_add(bytes) + bytes;
    std::int64_t peak = g_peak_bytes.load();
    while (now > peak && !g_peak_bytes.compare_exchange_weak(peak, now)) {
    }
}

void track_free(std::int64_t bytes) { g_live_bytes.fetch_sub(bytes); }

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0) throw contract_error("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

TensorImpl::TensorImpl(Shape s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != static_cast<std::int64_t>(data.size()))
        throw contract_error("tensor data length does not match shape " + shape_str(shape));
    track_alloc(static_cast<std::int64_t>(data.size() * sizeof(float)));
}

TensorImpl::~TensorImpl() {
    track_free(static_cast<std::int64_t>((data.size() + grad.size()) * sizeof(float)));
}

std::vector<float>& TensorImpl::grad_buffer() {
    if (grad.empty() && !data.empty()) {
        grad.assign(data.size(), 0.0f);
        track_alloc(static_cast<std::int64_t>(grad.size() * sizeof(float)));
    }
    return grad;
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>(shape, std::vector<float>(shape_numel(shape), 0.0f));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(const Shape& shape, float value) {
    return Tensor(std::make_shared<TensorImpl>(shape, std::vector<float>(shape_numel(shape), value)));
}

Tensor Tensor::from(const Shape& shape, std::vector<float> values, bool requires_grad) {
    auto impl = std::make_shared<TensorImpl>(shape, std::move(values));
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(float value) { return from({}, {value}); }

const Shape& Tensor::shape() const {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->shape;
}

std::int64_t Tensor::dim(int i) const {
    const auto& s = shape();
    if (i < 0) i += static_cast<int>(s.size());
    if (i < 0 || i >= static_cast<int>(s.size())) throw contract_error("dimension index out of range");
    return s[static_cast<std::size_t>(i)];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_ ? impl_->data.size() : 0); }

std::span<float> Tensor::data() {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->data;
}

std::span<const float> Tensor::data() const {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->data;
}

std::span<const float> Tensor::grad() const {
    if (!impl_) throw contract_error("use of undefined tensor");
    return impl_->grad;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

float Tensor::item() const {
    if (numel() != 1) throw contract_error("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
}

double Tensor::value() const {
    const float v = item();
    return impl_->exact ? *impl_->exact : static_cast<double>(v);
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
    if (!impl_) throw contract_error("use of undefined tensor");
    impl_->requires_grad = on;
}

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0f);
}

void Tensor::backward() const {
    if (numel() != 1) throw contract_error("backward() requires a single-element tensor");
    if (!impl_->requires_grad) throw contract_error("backward() on a tensor that does not require grad");

    // Iterative post-order DFS gives a topological order of the tape.
    std::vector<TensorImpl*> order;
    std::unordered_set<TensorImpl*> seen;
    std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            TensorImpl* child = node->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->grad_buffer()[0] += 1.0f;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn(*node);
    }
}

Tensor Tensor::detach() const {
    if (!impl_) return {};
    return Tensor(std::make_shared<TensorImpl>(impl_->shape, impl_->data));
}

Tensor Tensor::reshape(const Shape& new_shape) const {
    if (shape_numel(new_shape) != numel())
        throw contract_error("reshape " + shape_str(shape()) + " -> " + shape_str(new_shape));
    return make_result(new_shape, impl_->data, {*this}, [](TensorImpl& self) {
        auto& in = *self.inputs[0];
        if (!in.requires_grad) return;
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>(std::move(shape), std::move(data));
    if (t_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            impl->requires_grad = true;
            impl->inputs.reserve(inputs.size());
            for (auto& t : inputs) impl->inputs.push_back(t.impl_ptr());
            impl->backward_fn = std::move(backward_fn);
        }
    }
    return Tensor(std::move(impl));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

MemoryStats memory_stats() { return {g_live_bytes.load(), g_peak_bytes.load()}; }

void reset_peak_memory() { g_peak_bytes.store(g_live_bytes.load()); }

bool all_finite(std::span<const float> values) {
    return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace rollvid
