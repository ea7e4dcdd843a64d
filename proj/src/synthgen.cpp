#include "vlaforge/synthgen.hpp"

#include "json_fields.hpp"
#include "vlaforge/errors.hpp"
#include "vlaforge/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

namespace vlaforge::synthgen {
namespace {

constexpr double kPi = std::numbers::pi;

uint64_t splitmix64(uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

uint64_t mix_seed(uint64_t a, uint64_t b) { return splitmix64(a ^ splitmix64(b)); }

// Working image in double precision, row-major [h][w][c].
struct Canvas {
  int64_t size = 0;
  int64_t channels = 3;
  std::vector<double> data;

  Canvas(int64_t n, int64_t c) : size(n), channels(c), data(static_cast<size_t>(n * n * c), 0.0) {}
  double& at(int64_t y, int64_t x, int64_t c = 0) { return data[static_cast<size_t>((y * size + x) * channels + c)]; }
  double at(int64_t y, int64_t x, int64_t c = 0) const {
    return data[static_cast<size_t>((y * size + x) * channels + c)];
  }
};

// Values are snapped to the 8-bit grid so that a PNG round trip is exact.
torch::Tensor to_tensor(const Canvas& canvas) {
  auto bytes = torch::empty({static_cast<int64_t>(canvas.data.size())}, torch::kUInt8);
  auto* out = bytes.data_ptr<uint8_t>();
  for (size_t i = 0; i < canvas.data.size(); ++i) {
    out[i] = static_cast<uint8_t>(std::lround(std::clamp(canvas.data[i], 0.0, 1.0) * 255.0));
  }
  auto shape = canvas.channels == 1 ? std::vector<int64_t>{canvas.size, canvas.size}
                                    : std::vector<int64_t>{canvas.size, canvas.size, canvas.channels};
  return bytes.reshape(shape).to(torch::kFloat32) / 255.0;
}

Canvas from_tensor(const torch::Tensor& t) {
  const auto channels = t.dim() == 3 ? t.size(2) : 1;
  Canvas canvas(t.size(0), channels);
  auto c = t.to(torch::kFloat64).contiguous();
  std::copy(c.data_ptr<double>(), c.data_ptr<double>() + c.numel(), canvas.data.begin());
  return canvas;
}

Rgb mix(const Rgb& a, const Rgb& b, double t) {
  return {a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t};
}

Rgb scale(const Rgb& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

// Approximate signed distance (negative inside) to an axis-aligned ellipse.
double ellipse_sd(double u, double v, double cx, double cy, double rx, double ry) {
  const double r = std::hypot((u - cx) / rx, (v - cy) / ry);
  return (r - 1.0) * std::min(rx, ry);
}

double coverage(double sd) { return std::clamp(0.5 - sd, 0.0, 1.0); }

double feather(double sd, double width) { return std::clamp(0.5 - sd / width, 0.0, 1.0); }

Rgb scene_color(const FaceParams& f, double u, double v) {
  const double t = 0.5 + 0.5 * std::sin(f.bg_fx * u + f.bg_fy * v + f.bg_phase);
  Rgb c = mix(f.bg_a, f.bg_b, t);
  c = mix(c, f.hair, coverage(ellipse_sd(u, v, f.cx, f.cy - 0.3 * f.ry, 1.12 * f.rx, 0.9 * f.ry)));

  const double rr = std::pow((u - f.cx) / f.rx, 2) + std::pow((v - f.cy) / f.ry, 2);
  c = mix(c, scale(f.skin, 1.0 - 0.12 * rr), coverage(ellipse_sd(u, v, f.cx, f.cy, f.rx, f.ry)));

  for (double side : {-1.0, 1.0}) {
    const double ex = f.cx + side * f.eye_dx;
    const double ey = f.cy - f.eye_dy;
    c = mix(c, f.hair, coverage(ellipse_sd(u, v, ex, ey - f.brow_dy, 1.3 * f.eye_r, 0.7)));
    c = mix(c, Rgb{0.92, 0.92, 0.9}, coverage(ellipse_sd(u, v, ex, ey, 1.2 * f.eye_r, 0.8 * f.eye_r)));
    c = mix(c, f.iris, coverage(ellipse_sd(u, v, ex, ey, 0.55 * f.eye_r, 0.55 * f.eye_r)));
  }
  c = mix(c, scale(f.skin, 0.78), coverage(ellipse_sd(u, v, f.cx, f.cy + f.nose_dy, f.nose_r, 1.4 * f.nose_r)));
  c = mix(c, f.lip, coverage(ellipse_sd(u, v, f.cx, f.cy + f.mouth_dy, f.mouth_w, f.mouth_h)));
  return c;
}

// Pixel centre (x, y) of an n-pixel canvas in the 64-unit scene frame.
std::pair<double, double> scene_coords(int64_t x, int64_t y, int64_t n, const Jitter& j) {
  const double s = 64.0 / static_cast<double>(n);
  return {(static_cast<double>(x) + 0.5) * s - j.tx, (static_cast<double>(y) + 0.5) * s - j.ty};
}

template <typename Fn>
Canvas render_with(int64_t n, const Jitter& jitter, Fn&& color) {
  Canvas canvas(n, 3);
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      auto [u, v] = scene_coords(x, y, n, jitter);
      const Rgb c = color(u, v);
      for (int64_t k = 0; k < 3; ++k) canvas.at(y, x, k) = c[static_cast<size_t>(k)] * jitter.brightness;
    }
  }
  return canvas;
}

template <typename Fn>
Canvas mask_with(int64_t n, const Jitter& jitter, Fn&& alpha) {
  Canvas canvas(n, 1);
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      auto [u, v] = scene_coords(x, y, n, jitter);
      canvas.at(y, x) = alpha(u, v);
    }
  }
  return canvas;
}

// Separable [1, 2, 1] / 4 filter with replicated borders.
Canvas binomial_blur(const Canvas& in) {
  const auto n = in.size;
  auto clampi = [n](int64_t i) { return std::clamp<int64_t>(i, 0, n - 1); };
  Canvas tmp(n, in.channels), out(n, in.channels);
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x)
      for (int64_t c = 0; c < in.channels; ++c)
        tmp.at(y, x, c) = 0.25 * in.at(y, clampi(x - 1), c) + 0.5 * in.at(y, x, c) + 0.25 * in.at(y, clampi(x + 1), c);
  for (int64_t y = 0; y < n; ++y)
    for (int64_t x = 0; x < n; ++x)
      for (int64_t c = 0; c < in.channels; ++c)
        out.at(y, x, c) = 0.25 * tmp.at(clampi(y - 1), x, c) + 0.5 * tmp.at(y, x, c) + 0.25 * tmp.at(clampi(y + 1), x, c);
  return out;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb random_rgb(std::mt19937_64& rng, double lo, double hi) {
  return {uniform(rng, lo, hi), uniform(rng, lo, hi), uniform(rng, lo, hi)};
}

std::string video_name(int64_t identity, int64_t video) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id%03lld_v%lld", static_cast<long long>(identity), static_cast<long long>(video));
  return buf;
}

}  // namespace

std::string to_string(Family family) {
  switch (family) {
    case Family::None: return "none";
    case Family::Blend: return "blend";
    case Family::Warp: return "warp";
    case Family::Texture: return "texture";
    case Family::Fullface: return "fullface";
  }
  return "?";
}

Family parse_family(const std::string& name) {
  for (auto f : {Family::None, Family::Blend, Family::Warp, Family::Texture, Family::Fullface}) {
    if (to_string(f) == name) return f;
  }
  throw ValidationError("unknown manipulation family '" + name + "'");
}

Identity make_identity(int64_t id, uint64_t seed) {
  std::mt19937_64 rng(splitmix64(seed));
  FaceParams f;
  f.cx = 32.0 + uniform(rng, -2, 2);
  f.cy = 33.0 + uniform(rng, -2, 2);
  f.rx = uniform(rng, 16, 19);
  f.ry = uniform(rng, 20, 23);
  f.eye_dx = uniform(rng, 5.5, 8);
  f.eye_dy = uniform(rng, 3.5, 6);
  f.eye_r = uniform(rng, 2, 3);
  f.brow_dy = uniform(rng, 3, 4.5);
  f.nose_dy = uniform(rng, 1.5, 4);
  f.nose_r = uniform(rng, 1.4, 2.2);
  f.mouth_dy = uniform(rng, 8.5, 12);
  f.mouth_w = uniform(rng, 4.5, 7.5);
  f.mouth_h = uniform(rng, 1.3, 2.6);
  const double tone = uniform(rng, 0.35, 0.9);
  f.skin = {tone, tone * uniform(rng, 0.7, 0.85), tone * uniform(rng, 0.55, 0.75)};
  f.hair = random_rgb(rng, 0.05, 0.6);
  f.iris = random_rgb(rng, 0.1, 0.6);
  f.lip = {uniform(rng, 0.5, 0.85), uniform(rng, 0.15, 0.4), uniform(rng, 0.2, 0.45)};
  f.bg_a = random_rgb(rng, 0.1, 0.9);
  f.bg_b = random_rgb(rng, 0.1, 0.9);
  f.bg_fx = uniform(rng, -0.35, 0.35);
  f.bg_fy = uniform(rng, -0.35, 0.35);
  f.bg_phase = uniform(rng, 0, 2 * kPi);
  return {id, seed, f};
}

Jitter frame_jitter(uint64_t jitter_seed, int64_t frame_index) {
  std::mt19937_64 rng(mix_seed(jitter_seed, static_cast<uint64_t>(frame_index)));
  Jitter j;
  j.tx = uniform(rng, -2, 2);
  j.ty = uniform(rng, -2, 2);
  j.brightness = uniform(rng, 0.95, 1.05);
  return j;
}

torch::Tensor render_clean(const FaceParams& face, const Jitter& jitter, int64_t size) {
  return to_tensor(render_with(size, jitter, [&](double u, double v) { return scene_color(face, u, v); }));
}

FrameSample render_real(const Identity& identity, int64_t frame_index, uint64_t jitter_seed,
                        const SynthOptions& options) {
  const auto n = options.image_size;
  const Jitter jitter = frame_jitter(jitter_seed, frame_index);
  Canvas canvas = render_with(n, jitter, [&](double u, double v) { return scene_color(identity.face, u, v); });

  std::mt19937_64 rng(mix_seed(mix_seed(identity.seed, jitter_seed), static_cast<uint64_t>(frame_index) + 1));
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const double pattern = ((x + y) % 2 == 0 ? 1.0 : -1.0) * options.sensor_amplitude;
      for (int64_t c = 0; c < 3; ++c) canvas.at(y, x, c) += pattern + options.sensor_noise * noise(rng);
    }
  }

  FrameSample s;
  s.image = to_tensor(canvas);
  s.mask = torch::zeros({n, n}, torch::kFloat32);
  s.label = 0;
  s.identity_id = identity.id;
  s.family = Family::None;
  s.render = {identity, jitter, frame_index, jitter_seed, options};
  return s;
}

FrameSample apply_manipulation(const FrameSample& real, Family family, const Identity& donor, double strength,
                               uint64_t rng_seed) {
  std::vector<std::string> problems;
  if (family == Family::None) problems.push_back("family must not be 'none' for a manipulated frame");
  if (!(strength > 0.0 && strength <= 1.0)) {
    problems.push_back("strength must lie in (0, 1], got " + std::to_string(strength));
  }
  const auto& source = real.render.identity;
  if ((family == Family::Blend || family == Family::Fullface) && donor.seed == source.seed) {
    problems.push_back("donor identity must differ from the source for " + to_string(family));
  }
  if (real.label != 0) problems.push_back("apply_manipulation expects a real frame");
  if (!problems.empty()) throw ValidationError(problems);

  const auto n = real.render.options.image_size;
  const auto& j = real.render.jitter;
  const FaceParams& f = source.face;
  std::mt19937_64 rng(splitmix64(rng_seed));

  Canvas content(n, 3), alpha(n, 1);
  switch (family) {
    case Family::Blend: {
      FaceParams mixed = f;
      mixed.skin = donor.face.skin;
      mixed.iris = donor.face.iris;
      mixed.lip = donor.face.lip;
      mixed.hair = donor.face.hair;  // brows
      content = binomial_blur(render_with(n, j, [&](double u, double v) { return scene_color(mixed, u, v); }));
      alpha = mask_with(n, j, [&](double u, double v) {
        return feather(ellipse_sd(u, v, f.cx, f.cy + 1.0, 0.62 * f.rx, 0.62 * f.ry), 3.0);
      });
      break;
    }
    case Family::Warp: {
      struct Bump {
        double cx, cy, ax, ay, sigma;
      };
      std::vector<std::pair<double, double>> sites = {
          {f.cx - f.eye_dx, f.cy - f.eye_dy}, {f.cx + f.eye_dx, f.cy - f.eye_dy}, {f.cx, f.cy + f.mouth_dy}};
      std::vector<Bump> bumps;
      for (auto [sx, sy] : sites) {
        const bool keep = uniform(rng, 0, 1) < 0.7;
        const double amp = uniform(rng, 1.5, 3.0);
        const double angle = uniform(rng, 0, 2 * kPi);
        const double sigma = uniform(rng, 2.5, 3.5);
        if (keep) bumps.push_back({sx, sy, amp * std::cos(angle), amp * std::sin(angle), sigma});
      }
      if (bumps.empty()) bumps.push_back({sites[2].first, sites[2].second, 2.0, 0.0, 3.0});
      auto weight = [](const Bump& b, double u, double v) {
        return std::exp(-(std::pow(u - b.cx, 2) + std::pow(v - b.cy, 2)) / (2 * b.sigma * b.sigma));
      };
      content = binomial_blur(render_with(n, j, [&](double u, double v) {
        double du = 0, dv = 0;
        for (const auto& b : bumps) {
          const double w = weight(b, u, v);
          du += b.ax * w;
          dv += b.ay * w;
        }
        return scene_color(f, u - du, v - dv);
      }));
      alpha = mask_with(n, j, [&](double u, double v) {
        double g = 0;
        for (const auto& b : bumps) g = std::max(g, weight(b, u, v));
        return g < 0.05 ? 0.0 : g;
      });
      break;
    }
    case Family::Texture: {
      const std::pair<double, double> sites[] = {
          {f.cx - 0.45 * f.rx, f.cy + 0.25 * f.ry}, {f.cx + 0.45 * f.rx, f.cy + 0.25 * f.ry}, {f.cx, f.cy - 0.6 * f.ry}};
      const auto [px, py] = sites[std::uniform_int_distribution<int>(0, 2)(rng)];
      const double prx = uniform(rng, 6.0, 8.0);
      const double pry = uniform(rng, 5.5, 7.5);
      struct Wave {
        double freq, cos_t, sin_t, phase[3];
      };
      std::vector<Wave> waves;
      for (int k = 0; k < 3; ++k) {
        const double theta = uniform(rng, 0, kPi);
        waves.push_back({uniform(rng, 0.6, 1.2), std::cos(theta), std::sin(theta),
                         {uniform(rng, 0, 2 * kPi), uniform(rng, 0, 2 * kPi), uniform(rng, 0, 2 * kPi)}});
      }
      Canvas base = binomial_blur(render_with(n, j, [&](double u, double v) { return scene_color(f, u, v); }));
      Canvas texture = render_with(n, Jitter{j.tx, j.ty, 1.0}, [&](double u, double v) {
        Rgb c{0, 0, 0};
        for (const auto& w : waves) {
          for (size_t k = 0; k < 3; ++k) c[k] += std::sin(w.freq * (u * w.cos_t + v * w.sin_t) + w.phase[k]);
        }
        return scale(c, 0.07 / std::sqrt(3.0));
      });
      content = base;
      for (size_t i = 0; i < content.data.size(); ++i) content.data[i] += texture.data[i];
      alpha = mask_with(n, j, [&](double u, double v) { return feather(ellipse_sd(u, v, px, py, prx, pry), 3.0); });
      break;
    }
    case Family::Fullface: {
      FaceParams mixed = donor.face;
      mixed.cx = f.cx;
      mixed.cy = f.cy;
      mixed.rx = f.rx;
      mixed.ry = f.ry;
      mixed.bg_a = f.bg_a;
      mixed.bg_b = f.bg_b;
      mixed.bg_fx = f.bg_fx;
      mixed.bg_fy = f.bg_fy;
      mixed.bg_phase = f.bg_phase;
      content = binomial_blur(render_with(n, j, [&](double u, double v) { return scene_color(mixed, u, v); }));
      alpha = mask_with(n, j, [&](double u, double v) { return feather(ellipse_sd(u, v, f.cx, f.cy, f.rx, f.ry), 2.0); });
      break;
    }
    case Family::None: break;
  }

  // Snap G to the 8-bit grid first so that G == 0 leaves pixels bit-identical.
  const torch::Tensor mask = to_tensor(alpha);
  const Canvas g = from_tensor(mask);
  Canvas out = from_tensor(real.image);
  for (int64_t y = 0; y < n; ++y) {
    for (int64_t x = 0; x < n; ++x) {
      const double a = strength * g.at(y, x);
      if (a == 0.0) continue;
      for (int64_t c = 0; c < 3; ++c) out.at(y, x, c) += a * (content.at(y, x, c) - out.at(y, x, c));
    }
  }

  FrameSample s = real;
  s.image = to_tensor(out);
  s.mask = mask;
  s.label = 1;
  s.family = family;
  return s;
}

std::vector<std::string> SplitProtocol::validate() const {
  std::vector<std::string> problems;
  if (train_families.empty()) problems.push_back("protocol.train_families must not be empty");
  if (test_families.empty()) problems.push_back("protocol.test_families must not be empty");
  if (train_families.count(Family::None) || test_families.count(Family::None)) {
    problems.push_back("protocol families must not include 'none'");
  }
  for (auto fam : train_families) {
    if (test_families.count(fam)) {
      problems.push_back("protocol family '" + to_string(fam) + "' appears in both train and test");
    }
  }
  return problems;
}

std::vector<std::string> BenchmarkConfig::validate() const {
  std::vector<std::string> problems = protocol.validate();
  if (num_identities < 4) problems.push_back("data.num_identities must be >= 4");
  if (videos_per_identity < 2) problems.push_back("data.videos_per_identity must be >= 2");
  if (frames_per_video < 1) problems.push_back("data.frames_per_video must be >= 1");
  if (!(strength_min > 0.0 && strength_min <= strength_max && strength_max <= 1.0)) {
    problems.push_back("data.strength_min/strength_max must satisfy 0 < min <= max <= 1");
  }
  if (options.image_size < 16) problems.push_back("data.image_size must be >= 16");
  if (options.sensor_amplitude < 0.0) problems.push_back("data.sensor_amplitude must be >= 0");
  if (options.sensor_noise < 0.0) problems.push_back("data.sensor_noise must be >= 0");
  return problems;
}

nlohmann::json to_json(const BenchmarkConfig& c) {
  auto names = [](const std::set<Family>& set) {
    std::vector<std::string> out;
    for (auto f : set) out.push_back(to_string(f));
    return out;
  };
  return {{"num_identities", c.num_identities},
          {"videos_per_identity", c.videos_per_identity},
          {"frames_per_video", c.frames_per_video},
          {"seed", c.seed},
          {"strength_min", c.strength_min},
          {"strength_max", c.strength_max},
          {"image_size", c.options.image_size},
          {"sensor_amplitude", c.options.sensor_amplitude},
          {"sensor_noise", c.options.sensor_noise},
          {"train_families", names(c.protocol.train_families)},
          {"test_families", names(c.protocol.test_families)}};
}

BenchmarkConfig benchmark_config_from_json(const nlohmann::json& j, BenchmarkConfig base,
                                           std::vector<std::string>& problems) {
  detail::FieldReader r(j, "data", problems);
  r.field("num_identities", base.num_identities)
      .field("videos_per_identity", base.videos_per_identity)
      .field("frames_per_video", base.frames_per_video)
      .field("seed", base.seed)
      .field("strength_min", base.strength_min)
      .field("strength_max", base.strength_max)
      .field("image_size", base.options.image_size)
      .field("sensor_amplitude", base.options.sensor_amplitude)
      .field("sensor_noise", base.options.sensor_noise);
  auto families = [&](const char* key, std::set<Family>& out) {
    std::vector<std::string> names;
    r.field(key, names);
    if (!r.has(key)) return;
    out.clear();
    for (const auto& name : names) {
      try {
        out.insert(parse_family(name));
      } catch (const ValidationError&) {
        problems.push_back(r.name_of(key) + " names unknown family '" + name + "'");
      }
    }
  };
  families("train_families", base.protocol.train_families);
  families("test_families", base.protocol.test_families);
  return base;
}

Benchmark generate_benchmark(const BenchmarkConfig& config) {
  if (auto problems = config.validate(); !problems.empty()) throw ValidationError(problems);

  Benchmark bench;
  bench.config = config;
  const auto n = config.num_identities;
  for (int64_t id = 0; id < n; ++id) {
    bench.identities.push_back(make_identity(id, mix_seed(config.seed, 0x1000 + static_cast<uint64_t>(id))));
  }

  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 split_rng(splitmix64(config.seed));
  std::shuffle(order.begin(), order.end(), split_rng);
  std::vector<int64_t> train_ids(order.begin(), order.begin() + n / 2);
  std::vector<int64_t> test_ids(order.begin() + n / 2, order.end());
  std::sort(train_ids.begin(), train_ids.end());
  std::sort(test_ids.begin(), test_ids.end());

  auto emit = [&](const std::vector<int64_t>& ids, const std::set<Family>& family_set, const std::string& split) {
    const std::vector<Family> families(family_set.begin(), family_set.end());
    for (size_t pos = 0; pos < ids.size(); ++pos) {
      const Identity& identity = bench.identities[static_cast<size_t>(ids[pos])];
      for (int64_t v = 0; v < config.videos_per_identity; ++v) {
        std::mt19937_64 rng(mix_seed(mix_seed(config.seed, static_cast<uint64_t>(identity.id)), static_cast<uint64_t>(v)));
        VideoSample video;
        video.video_id = video_name(identity.id, v);
        video.identity_id = identity.id;
        video.label = v % 2;
        video.split = split;
        const uint64_t jitter_seed = rng();
        const uint64_t manip_seed = rng();
        const double strength = uniform(rng, config.strength_min, config.strength_max);
        const auto offset = 1 + static_cast<size_t>(rng() % (ids.size() - 1));
        const Identity& donor = bench.identities[static_cast<size_t>(ids[(pos + offset) % ids.size()])];
        if (video.label == 1) {
          video.family = families[(pos + static_cast<size_t>(v / 2)) % families.size()];
        }
        for (int64_t k = 0; k < config.frames_per_video; ++k) {
          FrameSample frame = render_real(identity, k, jitter_seed, config.options);
          if (video.label == 1) frame = apply_manipulation(frame, video.family, donor, strength, manip_seed);
          frame.video_id = video.video_id;
          video.frames.push_back(std::move(frame));
        }
        bench.videos.push_back(std::move(video));
      }
    }
  };
  emit(train_ids, config.protocol.train_families, "train");
  emit(test_ids, config.protocol.test_families, "test");
  return bench;
}

std::filesystem::path write_benchmark(const Benchmark& bench, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create benchmark directory " + dir.string() + ": " + ec.message());

  const auto manifest_path = dir / "manifest.jsonl";
  std::ofstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open " + manifest_path.string() + " for writing");

  int64_t frames = 0, fake_videos = 0;
  for (const auto& video : bench.videos) {
    fake_videos += video.label;
    for (size_t k = 0; k < video.frames.size(); ++k) {
      const auto& frame = video.frames[k];
      const std::string image_rel = "frames/" + video.video_id + "/" + std::to_string(k) + ".png";
      const std::string mask_rel = "masks/" + video.video_id + "/" + std::to_string(k) + ".png";
      io::write_rgb_png(dir / image_rel, frame.image);
      io::write_gray_png(dir / mask_rel, frame.mask);
      nlohmann::json record = {{"schema_version", kManifestSchemaVersion},
                               {"video_id", video.video_id},
                               {"frame", k},
                               {"identity_id", video.identity_id},
                               {"identity_seed", frame.render.identity.seed},
                               {"family", to_string(video.family)},
                               {"label", video.label},
                               {"split", video.split},
                               {"image", image_rel},
                               {"mask", mask_rel}};
      manifest << record.dump() << '\n';
      ++frames;
    }
  }
  manifest.close();
  if (!manifest) throw IoError("failed writing " + manifest_path.string());

  std::ofstream meta(dir / "benchmark.json");
  if (!meta) throw IoError("cannot open " + (dir / "benchmark.json").string() + " for writing");
  nlohmann::json summary = {{"schema_version", kManifestSchemaVersion},
                            {"config", to_json(bench.config)},
                            {"videos", bench.videos.size()},
                            {"fake_videos", fake_videos},
                            {"frames", frames}};
  meta << summary.dump(2) << '\n';
  return manifest_path;
}

std::filesystem::path build_benchmark(const BenchmarkConfig& config, const std::filesystem::path& dir) {
  return write_benchmark(generate_benchmark(config), dir);
}

namespace {

FrameSet stack(std::vector<torch::Tensor>& images, std::vector<torch::Tensor>& masks, std::vector<int64_t>& labels,
               FrameSet set) {
  if (images.empty()) throw ValidationError("split contains no frames");
  set.images = torch::stack(images);
  set.masks = torch::stack(masks);
  set.labels = torch::tensor(labels, torch::kInt64);
  return set;
}

void check_split(const std::string& split) {
  if (split != "train" && split != "test" && split != "all") {
    throw ValidationError("split must be 'train', 'test' or 'all', got '" + split + "'");
  }
}

}  // namespace

FrameSet load_benchmark(const std::filesystem::path& dir, const std::string& split) {
  check_split(split);
  const auto manifest_path = dir / "manifest.jsonl";
  std::ifstream manifest(manifest_path);
  if (!manifest) throw IoError("cannot open manifest " + manifest_path.string());

  FrameSet set;
  std::vector<torch::Tensor> images, masks;
  std::vector<int64_t> labels;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(manifest, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
      if (record.at("schema_version").get<int>() != kManifestSchemaVersion) {
        throw IoError(manifest_path.string() + ":" + std::to_string(line_no) + ": unsupported schema version");
      }
      if (split != "all" && record.at("split").get<std::string>() != split) continue;
      images.push_back(io::read_rgb_png(dir / record.at("image").get<std::string>()));
      masks.push_back(io::read_gray_png(dir / record.at("mask").get<std::string>()));
      labels.push_back(record.at("label").get<int64_t>());
      set.video_ids.push_back(record.at("video_id").get<std::string>());
      set.identity_ids.push_back(record.at("identity_id").get<int64_t>());
      set.families.push_back(parse_family(record.at("family").get<std::string>()));
    } catch (const nlohmann::json::exception& e) {
      throw IoError(manifest_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return stack(images, masks, labels, std::move(set));
}

FrameSet frames_of(const Benchmark& bench, const std::string& split) {
  check_split(split);
  FrameSet set;
  std::vector<torch::Tensor> images, masks;
  std::vector<int64_t> labels;
  for (const auto& video : bench.videos) {
    if (split != "all" && video.split != split) continue;
    for (const auto& frame : video.frames) {
      images.push_back(frame.image);
      masks.push_back(frame.mask);
      labels.push_back(video.label);
      set.video_ids.push_back(video.video_id);
      set.identity_ids.push_back(video.identity_id);
      set.families.push_back(video.family);
    }
  }
  return stack(images, masks, labels, std::move(set));
}

}  // namespace vlaforge::synthgen
