#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "rollvid/rng.hpp"
#include "rollvid/tensor.hpp"

namespace rollvid {

struct NamedParam {
    std::string name;
    Tensor* tensor;
};

// Glorot-uniform weight of shape [fan_in x fan_out], trainable.
Tensor xavier(Rng& rng, std::int64_t fan_in, std::int64_t fan_out, float gain = 1.0f);
Tensor zeros_param(const Shape& shape);
Tensor ones_param(const Shape& shape);

void zero_grads(const std::vector<NamedParam>& params);

// Checkpoint container: "LVCK", u32 version, u64 index length, JSON index,
// then one LVT1 record per tensor in index order.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointData {
    nlohmann::json meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& at(const std::string& name) const;
    bool contains(const std::string& name) const;
};

std::string encode_checkpoint(const CheckpointData& data);
CheckpointData decode_checkpoint(const std::string& bytes);
void save_checkpoint_file(const std::filesystem::path& path, const CheckpointData& data);
CheckpointData load_checkpoint_file(const std::filesystem::path& path);

// Copies tensor values from `src` into same-named params; every param must be present.
void assign_params(const std::vector<NamedParam>& params, const CheckpointData& src, const std::string& prefix = "");
void append_params(CheckpointData& dst, const std::vector<NamedParam>& params, const std::string& prefix = "");

// Decoupled-weight-decay Adam over a named parameter list. Parameters whose
// name fails `trainable` are never touched.
class AdamW {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double weight_decay = 0.01;
    };

    AdamW() = default;
    explicit AdamW(Options opts) : opts_(opts) {}

    void step(const std::vector<NamedParam>& params, const std::function<bool(const std::string&)>& trainable);
    void set_lr(double lr) { opts_.lr = lr; }
    const Options& options() const { return opts_; }
    std::int64_t steps() const { return t_; }

    void save(CheckpointData& dst) const;
    void load(const CheckpointData& src);

private:
    Options opts_{};
    std::int64_t t_ = 0;
    std::map<std::string, std::vector<float>> m_, v_;
};

}  // namespace rollvid
