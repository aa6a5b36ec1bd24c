#include "rollvid/params.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "rollvid/serialize.hpp"

namespace rollvid {

namespace {

constexpr char kCheckpointMagic[4] = {'L', 'V', 'C', 'K'};

template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T get(const std::string& in, std::size_t& pos) {
    if (pos + sizeof(T) > in.size()) throw io_error("checkpoint truncated");
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

}  // namespace

Tensor xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out, float gain) {
    const double a = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::vector<float> v(static_cast<std::size_t>(fan_in * fan_out));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-a, a));
    return Tensor::from({fan_in, fan_out}, std::move(v), true);
}

Tensor zeros_param(const Shape& shape) { return Tensor::zeros(shape, true); }

Tensor ones_param(const Shape& shape) {
    auto t = Tensor::full(shape, 1.0f);
    t.set_requires_grad(true);
    return t;
}

void zero_grads(const std::vector<NamedParam>& params) {
    for (const auto& p : params) p.tensor->zero_grad();
}

const Tensor& CheckpointData::at(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return t;
    throw io_error("checkpoint has no tensor '" + name + "'");
}

bool CheckpointData::contains(const std::string& name) const {
    for (const auto& [n, t] : tensors)
        if (n == name) return true;
    return false;
}

std::string encode_checkpoint(const CheckpointData& data) {
    nlohmann::json index;
    index["meta"] = data.meta;
    auto& entries = index["tensors"] = nlohmann::json::array();
    for (const auto& [name, t] : data.tensors) entries.push_back({{"name", name}, {"shape", t.shape()}});
    const std::string idx = index.dump();

    std::string out(kCheckpointMagic, 4);
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint64_t>(out, idx.size());
    out += idx;
    std::ostringstream os(std::ios::binary);
    for (const auto& [name, t] : data.tensors) write_tensor(os, t);
    out += os.str();
    return out;
}

CheckpointData decode_checkpoint(const std::string& bytes) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw io_error("bad checkpoint magic");
    std::size_t pos = 4;
    const auto version = get<std::uint32_t>(bytes, pos);
    if (version != kCheckpointVersion)
        throw io_error("checkpoint version " + std::to_string(version) + " unsupported (want " +
                       std::to_string(kCheckpointVersion) + ")");
    const auto len = get<std::uint64_t>(bytes, pos);
    if (pos + len > bytes.size()) throw io_error("checkpoint index truncated");
    nlohmann::json index;
    try {
        index = nlohmann::json::parse(bytes.substr(pos, len));
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("checkpoint index unreadable: ") + e.what());
    }
    pos += len;
    CheckpointData out;
    out.meta = index.at("meta");
    std::istringstream is(bytes.substr(pos), std::ios::binary);
    for (const auto& e : index.at("tensors")) {
        auto t = read_tensor(is);
        if (t.shape() != e.at("shape").get<Shape>()) throw io_error("checkpoint record shape disagrees with index");
        out.tensors.emplace_back(e.at("name").get<std::string>(), std::move(t));
    }
    if (is.peek() != std::char_traits<char>::eof()) throw io_error("trailing bytes after checkpoint records");
    return out;
}

void save_checkpoint_file(const std::filesystem::path& path, const CheckpointData& data) {
    write_file_atomic(path, encode_checkpoint(data));
}

CheckpointData load_checkpoint_file(const std::filesystem::path& path) { return decode_checkpoint(read_file(path)); }

void assign_params(const std::vector<NamedParam>& params, const CheckpointData& src, const std::string& prefix) {
    for (const auto& p : params) {
        const auto& t = src.at(prefix + p.name);
        if (t.shape() != p.tensor->shape())
            throw io_error("shape mismatch for '" + prefix + p.name + "': " + shape_str(t.shape()) + " vs " +
                           shape_str(p.tensor->shape()));
        std::copy(t.data().begin(), t.data().end(), p.tensor->data().begin());
    }
}

void append_params(CheckpointData& dst, const std::vector<NamedParam>& params, const std::string& prefix) {
    for (const auto& p : params) dst.tensors.emplace_back(prefix + p.name, p.tensor->detach());
}

void AdamW::step(const std::vector<NamedParam>& params, const std::function<bool(const std::string&)>& trainable) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
    for (const auto& p : params) {
        if (!trainable(p.name)) continue;
        auto w = p.tensor->data();
        auto& m = m_[p.name];
        auto& v = v_[p.name];
        if (m.empty()) {
            m.assign(w.size(), 0.0f);
            v.assign(w.size(), 0.0f);
        }
        const bool has = p.tensor->has_grad();
        auto g = p.tensor->grad();
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = has ? g[i] : 0.0;
            m[i] = static_cast<float>(opts_.beta1 * m[i] + (1.0 - opts_.beta1) * gi);
            v[i] = static_cast<float>(opts_.beta2 * v[i] + (1.0 - opts_.beta2) * gi * gi);
            const double mh = m[i] / bc1, vh = v[i] / bc2;
            const double upd = opts_.lr * (mh / (std::sqrt(vh) + opts_.eps) + opts_.weight_decay * w[i]);
            w[i] = static_cast<float>(w[i] - upd);
        }
    }
}

void AdamW::save(CheckpointData& dst) const {
    dst.meta["adam"] = {{"t", t_}, {"lr", opts_.lr}};
    for (const auto& [name, m] : m_) dst.tensors.emplace_back("adam.m." + name, Tensor::from({static_cast<std::int64_t>(m.size())}, m));
    for (const auto& [name, v] : v_) dst.tensors.emplace_back("adam.v." + name, Tensor::from({static_cast<std::int64_t>(v.size())}, v));
}

void AdamW::load(const CheckpointData& src) {
    m_.clear();
    v_.clear();
    t_ = src.meta.at("adam").at("t").get<std::int64_t>();
    opts_.lr = src.meta.at("adam").at("lr").get<double>();
    for (const auto& [name, t] : src.tensors) {
        auto d = t.data();
        if (name.rfind("adam.m.", 0) == 0) m_[name.substr(7)].assign(d.begin(), d.end());
        if (name.rfind("adam.v.", 0) == 0) v_[name.substr(7)].assign(d.begin(), d.end());
    }
}

}  // namespace rollvid
