#include "grcn/serialize.hpp"

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "grcn/error.hpp"

namespace grcn {
namespace {

constexpr std::array<char, 4> kMagic{'G', 'R', 'C', 'N'};
constexpr std::uint32_t kVersion = 1;

template <class U>
void put_le(std::ostream& out, U v) {
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <class U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes{};
  if (!in.read(reinterpret_cast<char*>(bytes.data()), bytes.size())) throw FormatError("truncated tensor stream");
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[i]) << (8 * i);
  return v;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint32_t>(out, kVersion);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) {
    if (d > std::numeric_limits<std::uint32_t>::max()) throw FormatError("tensor dimension exceeds u32");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  for (double v : t.data()) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  if (!out) throw FormatError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic) throw FormatError("bad tensor magic");
  const auto version = get_le<std::uint32_t>(in);
  if (version != kVersion) throw FormatError("unsupported tensor format version " + std::to_string(version));
  const auto rank = get_le<std::uint32_t>(in);
  if (rank > 16) throw FormatError("implausible tensor rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& d : shape) {
    d = get_le<std::uint32_t>(in);
    if (d == 0) throw FormatError("zero tensor dimension");
  }
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return read_tensor(in);
}

std::string encode_tensor(const Tensor& t) {
  std::ostringstream out(std::ios::binary);
  write_tensor(out, t);
  return out.str();
}

Tensor decode_tensor(const std::string& bytes) {
  std::istringstream in(bytes, std::ios::binary);
  return read_tensor(in);
}

}  // namespace grcn
