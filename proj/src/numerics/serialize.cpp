#include "rollvid/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace rollvid {

namespace {

static_assert(std::endian::native == std::endian::little, "record format assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw io_error("truncated tensor record");
    return v;
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor& t) {
    os.write(kTensorMagic, 4);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(os, static_cast<std::uint64_t>(d));
    auto d = t.data();
    os.write(reinterpret_cast<const char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(float)));
    if (!os) throw io_error("failed writing tensor record");
}

Tensor read_tensor(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4)) throw io_error("truncated tensor record");
    if (std::memcmp(magic, kTensorMagic, 4) != 0) throw io_error("bad tensor magic");
    const auto rank = get<std::uint32_t>(is);
    if (rank > 8) throw io_error("implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) {
        const auto v = get<std::uint64_t>(is);
        if (v > (std::uint64_t{1} << 32)) throw io_error("implausible tensor dimension");
        d = static_cast<std::int64_t>(v);
    }
    std::vector<float> data(static_cast<std::size_t>(shape_numel(shape)));
    if (!is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float))))
        throw io_error("truncated tensor data");
    return Tensor::from(shape, std::move(data));
}

std::size_t tensor_record_bytes(const Shape& shape) {
    return 4 + 4 + 8 * shape.size() + static_cast<std::size_t>(shape_numel(shape)) * sizeof(float);
}

void write_tensors(const std::filesystem::path& path, const std::vector<Tensor>& tensors) {
    std::ostringstream os(std::ios::binary);
    for (const auto& t : tensors) write_tensor(os, t);
    write_file_atomic(path, os.str());
}

std::vector<Tensor> read_tensors(const std::filesystem::path& path) {
    std::istringstream is(read_file(path), std::ios::binary);
    std::vector<Tensor> out;
    while (is.peek() != std::char_traits<char>::eof()) out.push_back(read_tensor(is));
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw io_error("cannot open " + tmp.string() + " for writing");
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw io_error("failed writing " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw io_error("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace rollvid
