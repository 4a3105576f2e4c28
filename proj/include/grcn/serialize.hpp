#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "grcn/tensor.hpp"

namespace grcn {

// Tensor binary format, all integers and floats little-endian:
//   "GRCN" | u32 version (=1) | u32 rank | rank x u32 dims | f64 data (row-major)

void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

std::string encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::string& bytes);

}  // namespace grcn
