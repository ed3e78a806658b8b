#include "octpair/array_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace octpair {

static_assert(std::endian::native == std::endian::little,
              "array files are little-endian; big-endian hosts are unsupported");

void write_array(const std::filesystem::path& path, const MatrixF& data,
                 const std::string& modality) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for write: " + path.string());

  nlohmann::json header = {
      {"dims", {data.rows(), data.cols()}},
      {"dtype", "float32"},
      {"modality", modality},
      {"order", "row-major"},
      {"version", kArrayFormatVersion},
  };
  std::string header_line = header.dump();
  out.write(kArrayMagic, sizeof(kArrayMagic));
  out.write(header_line.data(), static_cast<std::streamsize>(header_line.size()));
  out.put('\n');

  std::vector<float> row(static_cast<std::size_t>(data.cols()));
  for (Eigen::Index r = 0; r < data.rows(); ++r) {
    for (Eigen::Index c = 0; c < data.cols(); ++c)
      row[static_cast<std::size_t>(c)] = data(r, c);
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

LoadedArray read_array(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());

  char magic[sizeof(kArrayMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kArrayMagic, sizeof(magic)) != 0)
    throw IoError("bad magic in array file: " + path.string());

  std::string header_line;
  if (!std::getline(in, header_line))
    throw IoError("missing header in array file: " + path.string());

  nlohmann::json header = nlohmann::json::parse(header_line, nullptr, false);
  if (header.is_discarded()) throw IoError("malformed header: " + path.string());
  if (header.value("version", -1) != kArrayFormatVersion)
    throw IoError("unsupported array format version in " + path.string());
  if (header.value("dtype", "") != "float32")
    throw IoError("unsupported dtype in " + path.string());

  auto dims = header.at("dims");
  Eigen::Index rows = dims.at(0).get<Eigen::Index>();
  Eigen::Index cols = dims.at(1).get<Eigen::Index>();
  if (rows < 0 || cols < 0) throw IoError("negative dims in " + path.string());

  LoadedArray result;
  result.modality = header.value("modality", "");
  result.data.resize(rows, cols);

  std::vector<float> row(static_cast<std::size_t>(cols));
  for (Eigen::Index r = 0; r < rows; ++r) {
    in.read(reinterpret_cast<char*>(row.data()),
            static_cast<std::streamsize>(row.size() * sizeof(float)));
    if (!in) throw IoError("truncated array file: " + path.string());
    for (Eigen::Index c = 0; c < cols; ++c)
      result.data(r, c) = row[static_cast<std::size_t>(c)];
  }
  return result;
}

}  // namespace octpair
