#include "rhee/grid_io.hpp"

#include "rhee/errors.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rhee {

namespace {

template <typename T>
void append_le(std::vector<std::uint8_t>& out, T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    }
    out.insert(out.end(), raw, raw + sizeof(T));
}

template <typename T>
T read_le(const std::uint8_t* p) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, p, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(raw[i], raw[sizeof(T) - 1 - i]);
    }
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
}

}  // namespace

void ByteWriter::put_u32(std::uint32_t v) { append_le(bytes_, v); }
void ByteWriter::put_u64(std::uint64_t v) { append_le(bytes_, v); }
void ByteWriter::put_f64(double v) { append_le(bytes_, v); }

void ByteReader::need(std::size_t n) const {
    if (remaining() < n) throw UsageError("ByteReader: truncated input");
}

std::uint32_t ByteReader::get_u32() {
    need(4);
    auto v = read_le<std::uint32_t>(bytes_.data() + pos_);
    pos_ += 4;
    return v;
}

std::uint64_t ByteReader::get_u64() {
    need(8);
    auto v = read_le<std::uint64_t>(bytes_.data() + pos_);
    pos_ += 8;
    return v;
}

double ByteReader::get_f64() {
    need(8);
    auto v = read_le<double>(bytes_.data() + pos_);
    pos_ += 8;
    return v;
}

void write_coefficients(ByteWriter& out, const CoefficientVector& c) {
    out.put_u32(static_cast<std::uint32_t>(c.size()));
    for (std::size_t j = 0; j < c.size(); ++j) out.put_f64(c[j]);
}

CoefficientVector read_coefficients(ByteReader& in) {
    const std::uint32_t n = in.get_u32();
    if (in.remaining() < static_cast<std::size_t>(n) * 8) throw UsageError("read_coefficients: truncated input");
    auto c = CoefficientVector::zeros(n);
    for (std::uint32_t j = 0; j < n; ++j) c[j] = in.get_f64();
    return c;
}

std::vector<std::uint8_t> encode_grid(const SpatialGrid& grid) {
    ByteWriter w;
    const int nu = grid.domain().dims();
    w.put_u32(static_cast<std::uint32_t>(nu));
    for (int c : grid.cells()) w.put_u32(static_cast<std::uint32_t>(c));
    for (double l : grid.domain().bounds()) w.put_f64(l);
    for (Eigen::Index j = 0; j < grid.values().size(); ++j) w.put_f64(grid.values()[j]);
    return w.take();
}

SpatialGrid decode_grid(std::span<const std::uint8_t> bytes) {
    ByteReader r(bytes);
    const std::uint32_t nu = r.get_u32();
    if (nu == 0 || nu > 16) throw UsageError("decode_grid: implausible dimension count");
    std::vector<int> cells(nu);
    std::size_t total = 1;
    for (auto& c : cells) {
        c = static_cast<int>(r.get_u32());
        total *= static_cast<std::size_t>(c);
    }
    std::vector<double> bounds(nu);
    for (auto& l : bounds) l = r.get_f64();
    if (r.remaining() != total * 8) throw UsageError("decode_grid: payload size does not match the header");
    Eigen::VectorXd values(static_cast<Eigen::Index>(total));
    for (std::size_t j = 0; j < total; ++j) values[static_cast<Eigen::Index>(j)] = r.get_f64();
    return SpatialGrid(SearchDomain(std::move(bounds)), std::move(cells), std::move(values));
}

void save_grid(const SpatialGrid& grid, const std::filesystem::path& path) {
    const auto bytes = encode_grid(grid);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_grid: cannot open " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

SpatialGrid load_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_grid: cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_grid(bytes);
}

}  // namespace rhee
