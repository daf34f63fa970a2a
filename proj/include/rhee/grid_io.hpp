#pragma once

// Binary formats shared by traces, the coefficient exchange and the CLI.
//
// CoefficientVector:  u32 count, then count f64.
// SpatialGrid file:   u32 nu, nu x u32 cell counts, nu x f64 bounds, then the
//                     cell values as f64 in row-major order.
// All fields little-endian.

#include "rhee/fourier.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace rhee {

class ByteWriter {
public:
    void put_u32(std::uint32_t v);
    void put_u64(std::uint64_t v);
    void put_f64(double v);
    std::vector<std::uint8_t>& bytes() { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
    std::uint32_t get_u32();
    std::uint64_t get_u64();
    double get_f64();
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const;
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

void write_coefficients(ByteWriter& out, const CoefficientVector& c);
CoefficientVector read_coefficients(ByteReader& in);

std::vector<std::uint8_t> encode_grid(const SpatialGrid& grid);
SpatialGrid decode_grid(std::span<const std::uint8_t> bytes);

void save_grid(const SpatialGrid& grid, const std::filesystem::path& path);
SpatialGrid load_grid(const std::filesystem::path& path);

}  // namespace rhee
