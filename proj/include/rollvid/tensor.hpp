#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rollvid {

using Shape = std::vector<std::int64_t>;

// Raised when an op's preconditions (shapes, arguments) are violated.
struct contract_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Raised when a computation produces or would produce NaN/Inf.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

struct TensorImpl {
    Shape shape;
    std::vector<float> data;
    std::vector<float> grad;  // empty until a backward pass touches it
    bool requires_grad = false;
    std::vector<TensorImplPtr> inputs;
    std::function<void(TensorImpl&)> backward_fn;
    // Unrounded value of a single-element result whose reduction ran in double.
    std::optional<double> exact;

    TensorImpl(Shape s, std::vector<float> d);
    ~TensorImpl();
    TensorImpl(const TensorImpl&) = delete;
    TensorImpl& operator=(const TensorImpl&) = delete;

    std::vector<float>& grad_buffer();
};

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, float value);
    static Tensor from(const Shape& shape, std::vector<float> values, bool requires_grad = false);
    static Tensor scalar(float value);

    bool defined() const { return static_cast<bool>(impl_); }
    const Shape& shape() const;
    std::int64_t dim(int i) const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::int64_t numel() const;

    std::span<float> data();
    std::span<const float> data() const;
    std::span<const float> grad() const;
    bool has_grad() const;
    float item() const;
    // Like item(), but returns the double-precision reduction value when one was kept.
    double value() const;

    bool requires_grad() const;
    void set_requires_grad(bool on);
    void zero_grad();

    // Reverse-mode pass from a single-element tensor.
    void backward() const;

    // Fresh storage, detached from the tape.
    Tensor detach() const;
    Tensor reshape(const Shape& shape) const;

    TensorImpl* impl() const { return impl_.get(); }
    const TensorImplPtr& impl_ptr() const { return impl_; }

private:
    TensorImplPtr impl_;
};

// Builds a result tensor; records it on the tape only when grad mode is on
// and at least one input requires grad.
Tensor make_result(Shape shape, std::vector<float> data, std::vector<Tensor> inputs,
                   std::function<void(TensorImpl&)> backward_fn);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

struct MemoryStats {
    std::int64_t live_bytes = 0;
    std::int64_t peak_bytes = 0;
};

// Process-wide accounting of tensor storage (data + grad buffers).
MemoryStats memory_stats();
void reset_peak_memory();

bool all_finite(std::span<const float> values);

}  // namespace rollvid
