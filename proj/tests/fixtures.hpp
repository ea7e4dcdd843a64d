#pragma once

#include "vlaforge/synthgen.hpp"

#include <filesystem>
#include <string>

namespace fixtures {

// 4 identities x 2 videos x 2 frames: 8 train and 8 test frames, half fake.
inline vlaforge::synthgen::BenchmarkConfig tiny_benchmark(uint64_t seed = 5) {
  vlaforge::synthgen::BenchmarkConfig c;
  c.num_identities = 4;
  c.videos_per_identity = 2;
  c.frames_per_video = 2;
  c.seed = seed;
  return c;
}

inline const vlaforge::synthgen::Benchmark& tiny() {
  static const auto bench = vlaforge::synthgen::generate_benchmark(tiny_benchmark());
  return bench;
}

// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("vlaforge_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixtures
