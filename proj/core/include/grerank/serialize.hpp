#pragma once

// Flat binary parameter files: an 8-byte magic, then little-endian int64
// version and header fields, then each array as row-major float64 in order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <istream>
#include <string>
#include <vector>

#include "grerank/diff.hpp"
#include "grerank/error.hpp"

namespace grerank::io {

using Magic = std::array<char, 8>;

struct ParamBlob {
  std::int64_t version = 1;
  std::vector<std::int64_t> header;
  std::vector<diff::Array> arrays;
};

/// Array shapes are implied by the header; the writer stores only entries.
void write_blob(std::ostream& out, const Magic& magic, const ParamBlob& blob);
void write_blob(const std::filesystem::path& path, const Magic& magic, const ParamBlob& blob);

/// Reads a blob whose header has `header_fields` entries; `shapes` maps the
/// parsed header to the expected array shapes. Throws ParseError on a wrong
/// magic, version mismatch, or truncated file.
template <class ShapeFn>
ParamBlob read_blob(std::istream& in, const Magic& magic, std::int64_t version, std::size_t header_fields,
                    ShapeFn shapes);

std::int64_t read_i64(std::istream& in);
double read_f64(std::istream& in);
void read_magic(std::istream& in, const Magic& magic);

template <class ShapeFn>
ParamBlob read_blob(std::istream& in, const Magic& magic, std::int64_t version, std::size_t header_fields,
                    ShapeFn shapes) {
  read_magic(in, magic);
  ParamBlob blob;
  blob.version = read_i64(in);
  if (blob.version != version) {
    throw ParseError("unsupported version " + std::to_string(blob.version), 0);
  }
  blob.header.resize(header_fields);
  for (auto& h : blob.header) h = read_i64(in);
  for (const diff::Shape& s : shapes(blob.header)) {
    diff::Array a(s);
    for (double& x : a.values()) x = read_f64(in);
    blob.arrays.push_back(std::move(a));
  }
  return blob;
}

}  // namespace grerank::io
