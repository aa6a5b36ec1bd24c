#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "rollvid/tensor.hpp"

namespace rollvid {

// Tensor record: magic "LVT1", u32 rank, u64 dims[rank], f32 data — all little-endian.
inline constexpr char kTensorMagic[4] = {'L', 'V', 'T', '1'};

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);
std::size_t tensor_record_bytes(const Shape& shape);

void write_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors);
std::vector<Tensor> read_tensors(const std::filesystem::path& path);

// Writes to a temp file beside `path`, then renames over it.
void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

struct io_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace rollvid
