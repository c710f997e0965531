#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "td/params.hpp"
#include "td/tensor.hpp"

namespace td {

// "TDW1" tensor container.
//
// Layout (all integers little-endian):
//   magic "TDW1"
//   u32 entry_count
//   manifest: per entry u16 name_len, name bytes, u8 dtype (0=f32, 1=f64),
//             u8 ndim, u32 dims[ndim]
//   payloads: raw little-endian values, one block per entry in manifest order
struct TensorRecord {
    std::string name;
    uint8_t dtype = 0;  // 0 = f32, 1 = f64
    Shape shape;
    std::vector<float> f32;
    std::vector<double> f64;

    static TensorRecord from(std::string name, const Tensor& t) {
        return {std::move(name), 0, t.shape(), t.vec(), {}};
    }
    static TensorRecord from(std::string name, const Tensor64& t) {
        return {std::move(name), 1, t.shape(), {}, t.vec()};
    }
    Tensor to_tensor() const;
    Tensor64 to_tensor64() const;
};

void write_tensor_file(const std::filesystem::path& path, std::span<const TensorRecord> records);
std::vector<TensorRecord> read_tensor_file(const std::filesystem::path& path);

// ParamSet helpers (records named after the parameters, in set order).
std::vector<TensorRecord> records_from_params(const ParamSet& params, const std::string& prefix = "");
void load_params_from_records(ParamSet& params, const std::vector<TensorRecord>& records,
                              const std::string& prefix = "");

// Writes to "<path>.tmp" then renames, so a crash never leaves a partial file
// at the final path.
void atomic_write_file(const std::filesystem::path& path, std::span<const char> bytes);

}  // namespace td
