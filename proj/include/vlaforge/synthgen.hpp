#pragma once

#include <torch/torch.h>

#include <json.hpp>

#include <array>
#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

namespace vlaforge::synthgen {

enum class Family { None, Blend, Warp, Texture, Fullface };

std::string to_string(Family family);
// Throws ValidationError for unknown names.
Family parse_family(const std::string& name);

using Rgb = std::array<double, 3>;

// Geometry and colours of one synthetic face, in pixels of a 64x64 canvas
// (scaled to other sizes at render time).
struct FaceParams {
  double cx = 32, cy = 33, rx = 17, ry = 21;
  double eye_dx = 7, eye_dy = 5, eye_r = 2.6;
  double brow_dy = 4;
  double nose_dy = 3, nose_r = 1.8;
  double mouth_dy = 10, mouth_w = 6, mouth_h = 2;
  Rgb skin{}, hair{}, iris{}, lip{}, bg_a{}, bg_b{};
  double bg_fx = 0.2, bg_fy = 0.1, bg_phase = 0;
};

struct Identity {
  int64_t id = 0;
  uint64_t seed = 0;
  FaceParams face;
};

// face params are a pure function of the seed.
Identity make_identity(int64_t id, uint64_t seed);

struct Jitter {
  double tx = 0, ty = 0;     // within +-2 px
  double brightness = 1.0;  // within [0.95, 1.05]
};
Jitter frame_jitter(uint64_t jitter_seed, int64_t frame_index);

struct SynthOptions {
  int64_t image_size = 64;
  double sensor_amplitude = 0.05;   // fixed-phase checkerboard of the capture device
  double sensor_noise = 0.008;
};

// Everything needed to re-render the pristine scene of a frame.
struct RenderInfo {
  Identity identity;
  Jitter jitter;
  int64_t frame_index = 0;
  uint64_t jitter_seed = 0;
  SynthOptions options;
};

struct FrameSample {
  torch::Tensor image;  // [h, w, 3] in [0, 1], multiples of 1/255
  int64_t label = 0;
  torch::Tensor mask;   // [h, w] in [0, 1], multiples of 1/255
  std::string video_id;
  int64_t identity_id = 0;
  Family family = Family::None;
  RenderInfo render;
};

struct VideoSample {
  std::string video_id;
  int64_t identity_id = 0;
  Family family = Family::None;
  int64_t label = 0;
  std::string split;
  std::vector<FrameSample> frames;
};

struct SplitProtocol {
  std::set<Family> train_families{Family::Blend, Family::Warp};
  std::set<Family> test_families{Family::Texture, Family::Fullface};

  std::vector<std::string> validate() const;
};

struct BenchmarkConfig {
  int64_t num_identities = 32;
  int64_t videos_per_identity = 4;
  int64_t frames_per_video = 8;
  uint64_t seed = 1024;
  double strength_min = 0.7;
  double strength_max = 1.0;
  SynthOptions options;
  SplitProtocol protocol;

  std::vector<std::string> validate() const;
};

nlohmann::json to_json(const BenchmarkConfig& config);
BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j, BenchmarkConfig base,
                                           std::vector<std::string>& problems);

// Pristine scene without the sensor pattern, [h, w, 3].
torch::Tensor render_clean(const FaceParams& face, const Jitter& jitter, int64_t size);

// Real frame: clean scene + sensor pattern, quantized. y = 0, G = 0.
FrameSample render_real(const Identity& identity, int64_t frame_index, uint64_t jitter_seed,
                        const SynthOptions& options = {});

// Plants a manipulation into `real`; only pixels with G > 0 change.
// Throws ValidationError for family None, strength <= 0 or > 1, or a donor equal to the
// source identity for blend/fullface.
FrameSample apply_manipulation(const FrameSample& real, Family family, const Identity& donor, double strength,
                               uint64_t rng_seed);

struct Benchmark {
  BenchmarkConfig config;
  std::vector<Identity> identities;
  std::vector<VideoSample> videos;
};

// Identities are split in half (train/test); in each, even-numbered videos are real
// and odd-numbered ones fake, with families cycling through the split's set.
Benchmark generate_benchmark(const BenchmarkConfig& config);

inline constexpr int kManifestSchemaVersion = 1;

// frames/{video_id}/{k}.png, masks/{video_id}/{k}.png, manifest.jsonl, benchmark.json.
// Returns the manifest path.
std::filesystem::path write_benchmark(const Benchmark& benchmark, const std::filesystem::path& dir);
std::filesystem::path build_benchmark(const BenchmarkConfig& config, const std::filesystem::path& dir);

// Stacked frames of one split, in manifest order.
struct FrameSet {
  torch::Tensor images;  // [N, h, w, 3]
  torch::Tensor masks;   // [N, h, w]
  torch::Tensor labels;  // [N] int64
  std::vector<std::string> video_ids;
  std::vector<int64_t> identity_ids;
  std::vector<Family> families;

  int64_t size() const { return static_cast<int64_t>(video_ids.size()); }
};

FrameSet load_benchmark(const std::filesystem::path& dir, const std::string& split);
FrameSet frames_of(const Benchmark& benchmark, const std::string& split);

}  // namespace vlaforge::synthgen
