#pragma once

#include <filesystem>
#include <string>

#include "octpair/common.hpp"

namespace octpair {

// Dense 2-D float32 array file: 8-byte magic "OCTPAIRA", one JSON header line
// (dims, dtype, modality tag, element order, format version), then the raw
// row-major little-endian payload.
inline constexpr char kArrayMagic[8] = {'O', 'C', 'T', 'P', 'A', 'I', 'R', 'A'};
inline constexpr int kArrayFormatVersion = 1;

void write_array(const std::filesystem::path& path, const MatrixF& data,
                 const std::string& modality);

struct LoadedArray {
  MatrixF data;
  std::string modality;
};

LoadedArray read_array(const std::filesystem::path& path);

}  // namespace octpair
