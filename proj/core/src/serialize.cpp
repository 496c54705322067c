#include "grerank/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "grerank/error.hpp"

namespace grerank::io {

namespace {

template <class T>
void put_le(std::ostream& out, T v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

std::uint64_t get_le(std::istream& in) {
  unsigned char bytes[8];
  if (!in.read(reinterpret_cast<char*>(bytes), 8)) throw ParseError("truncated parameter file", 0);
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return bits;
}

}  // namespace

void write_blob(std::ostream& out, const Magic& magic, const ParamBlob& blob) {
  out.write(magic.data(), magic.size());
  put_le(out, blob.version);
  for (std::int64_t h : blob.header) put_le(out, h);
  for (const diff::Array& a : blob.arrays) {
    for (double x : a.values()) put_le(out, x);
  }
}

void write_blob(const std::filesystem::path& path, const Magic& magic, const ParamBlob& blob) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_blob(out, magic, blob);
  if (!out) throw std::runtime_error("write to " + path.string() + " failed");
}

std::int64_t read_i64(std::istream& in) { return static_cast<std::int64_t>(get_le(in)); }

double read_f64(std::istream& in) {
  const std::uint64_t bits = get_le(in);
  double v;
  std::memcpy(&v, &bits, sizeof v);
  return v;
}

void read_magic(std::istream& in, const Magic& magic) {
  Magic got{};
  if (!in.read(got.data(), got.size()) || got != magic) throw ParseError("bad magic in parameter file", 0);
}

}  // namespace grerank::io
