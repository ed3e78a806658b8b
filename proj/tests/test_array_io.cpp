#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "octpair/array_io.hpp"

using namespace octpair;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path dir = fs::temp_directory_path() / "octpair_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST_SUITE("array_io") {

TEST_CASE("roundtrip preserves values and modality") {
  const fs::path dir = temp_dir("array_roundtrip");
  MatrixF m(3, 5);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) m(r, c) = static_cast<float>(r * 10 + c) * 0.25f;

  write_array(dir / "a.f32", m, "phase");
  LoadedArray loaded = read_array(dir / "a.f32");
  CHECK(loaded.modality == "phase");
  CHECK(loaded.data.rows() == 3);
  CHECK(loaded.data.cols() == 5);
  CHECK(loaded.data == m);
}

TEST_CASE("bad magic rejected") {
  const fs::path dir = temp_dir("array_bad");
  std::ofstream(dir / "junk.f32") << "not an array";
  CHECK_THROWS_AS(read_array(dir / "junk.f32"), IoError);
}

TEST_CASE("truncated payload rejected") {
  const fs::path dir = temp_dir("array_trunc");
  MatrixF m = MatrixF::Ones(4, 4);
  write_array(dir / "a.f32", m, "intensity");
  const auto size = fs::file_size(dir / "a.f32");
  fs::resize_file(dir / "a.f32", size - 8);
  CHECK_THROWS_AS(read_array(dir / "a.f32"), IoError);
}

}  // TEST_SUITE
