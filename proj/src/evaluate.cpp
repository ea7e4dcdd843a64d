#include "vlaforge/evaluate.hpp"

#include "vlaforge/errors.hpp"
#include "vlaforge/image_io.hpp"
#include "vlaforge/metrics.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace vlaforge::evalkit {

FrameScores score_frames(pipeline::VlaForgeModelImpl& model, const synthgen::FrameSet& frames, double alpha,
                         int64_t chunk) {
  pipeline::fuse_scores(0.5, 0.5, alpha);  // validates alpha
  torch::NoGradGuard no_grad;
  model.eval();
  FrameScores out;
  const auto n = frames.images.size(0);
  for (int64_t start = 0; start < n; start += chunk) {
    auto batch = frames.images.slice(0, start, std::min(start + chunk, n));
    auto scores = model.branch_scores(model.forward_images(batch));
    auto g = scores.global.to(torch::kFloat64).contiguous();
    auto l = scores.local.to(torch::kFloat64).contiguous();
    for (int64_t i = 0; i < g.size(0); ++i) {
      const double sg = g[i].item<double>();
      const double sl = l[i].item<double>();
      out.global.push_back(sg);
      out.local.push_back(sl);
      out.fused.push_back(pipeline::fuse_scores(sg, sl, alpha));
    }
  }
  return out;
}

EvalReport evaluate_scores(const std::vector<double>& scores, const synthgen::FrameSet& frames) {
  if (static_cast<int64_t>(scores.size()) != frames.size()) {
    throw MetricError("score count does not match the frame set");
  }
  std::vector<int> labels;
  auto label_acc = frames.labels.accessor<int64_t, 1>();
  for (int64_t i = 0; i < frames.size(); ++i) labels.push_back(static_cast<int>(label_acc[i]));

  EvalReport report;
  report.n_frames = frames.size();
  report.frame_auroc = auroc(scores, labels);
  const auto videos = aggregate_videos(scores, labels, frames.video_ids);
  report.n_videos = static_cast<int64_t>(videos.video_ids.size());
  report.video_auroc = auroc(videos.scores, videos.labels);

  std::set<synthgen::Family> families;
  for (auto f : frames.families) {
    if (f != synthgen::Family::None) families.insert(f);
  }
  for (auto family : families) {
    std::vector<double> s;
    std::vector<int> y;
    std::vector<std::string> ids;
    for (size_t i = 0; i < scores.size(); ++i) {
      if (frames.families[i] == family || labels[i] == 0) {
        s.push_back(scores[i]);
        y.push_back(labels[i]);
        ids.push_back(frames.video_ids[i]);
      }
    }
    if (std::find(y.begin(), y.end(), 0) == y.end()) continue;
    const auto name = synthgen::to_string(family);
    report.family_frame_auroc[name] = auroc(s, y);
    const auto v = aggregate_videos(s, y, ids);
    report.family_video_auroc[name] = auroc(v.scores, v.labels);
  }
  return report;
}

EvalReport evaluate(pipeline::VlaForgeModelImpl& model, const synthgen::FrameSet& frames, double alpha) {
  auto report = evaluate_scores(score_frames(model, frames, alpha).fused, frames);
  report.alpha = alpha;
  report.variant = pipeline::to_string(model.variant());
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  return {{"variant", r.variant},
          {"alpha", r.alpha},
          {"frame_auroc", r.frame_auroc},
          {"video_auroc", r.video_auroc},
          {"family_frame_auroc", r.family_frame_auroc},
          {"family_video_auroc", r.family_video_auroc},
          {"n_frames", r.n_frames},
          {"n_videos", r.n_videos}};
}

namespace {

std::string fixed(double v, int digits = 4) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(const std::string& s, size_t width) { return s.size() >= width ? s : s + std::string(width - s.size(), ' '); }

}  // namespace

std::string format_report(const EvalReport& r) {
  std::ostringstream os;
  os << "variant " << r.variant << "  alpha " << fixed(r.alpha, 2) << "  frames " << r.n_frames << "  videos "
     << r.n_videos << '\n';
  os << pad("subset", 12) << pad("frame_auroc", 14) << "video_auroc\n";
  os << pad("all", 12) << pad(fixed(r.frame_auroc), 14) << fixed(r.video_auroc) << '\n';
  for (const auto& [family, value] : r.family_frame_auroc) {
    os << pad(family, 12) << pad(fixed(value), 14) << fixed(r.family_video_auroc.at(family)) << '\n';
  }
  return os.str();
}

AblationTable run_ablation(const synthgen::FrameSet& train, const synthgen::FrameSet& test,
                           const std::vector<pipeline::ModelVariant>& variants, const std::vector<uint64_t>& seeds,
                           const AblationOptions& options) {
  if (variants.empty() || seeds.empty()) throw ValidationError("ablation needs at least one variant and one seed");
  AblationTable table;
  for (auto variant : variants) {
    AblationMean mean;
    mean.variant = pipeline::to_string(variant);
    for (auto seed : seeds) {
      auto config = options.model;
      config.variant = variant;
      config.seed = seed;
      auto train_options = options.train;
      train_options.seed = seed;

      AblationRow row;
      row.variant = mean.variant;
      row.seed = seed;
      pipeline::VlaForgeModel model(config);
      pipeline::Trainer trainer(model, train.images, train.masks, train.labels, train_options);
      const auto result = trainer.train();
      if (result.diverged) {
        row.diverged = true;
        row.note = "non-finite loss in epoch " + std::to_string(result.epochs.back().epoch);
      } else {
        const auto report = evaluate(*model, test, options.alpha);
        row.frame_auroc = report.frame_auroc;
        row.video_auroc = report.video_auroc;
        mean.frame_auroc += row.frame_auroc;
        mean.video_auroc += row.video_auroc;
        ++mean.runs;
      }
      if (options.on_row) options.on_row(row);
      table.rows.push_back(row);
    }
    if (mean.runs > 0) {
      mean.frame_auroc /= static_cast<double>(mean.runs);
      mean.video_auroc /= static_cast<double>(mean.runs);
    }
    table.means.push_back(mean);
  }
  return table;
}

nlohmann::json to_json(const AblationTable& t) {
  nlohmann::json rows = nlohmann::json::array(), means = nlohmann::json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"variant", r.variant},
                    {"seed", r.seed},
                    {"frame_auroc", r.frame_auroc},
                    {"video_auroc", r.video_auroc},
                    {"diverged", r.diverged},
                    {"note", r.note}});
  }
  for (const auto& m : t.means) {
    means.push_back(
        {{"variant", m.variant}, {"frame_auroc", m.frame_auroc}, {"video_auroc", m.video_auroc}, {"runs", m.runs}});
  }
  return {{"rows", rows}, {"means", means}};
}

std::string format_table(const AblationTable& t) {
  std::ostringstream os;
  os << pad("variant", 9) << pad("seed", 8) << pad("frame_auroc", 13) << pad("video_auroc", 13) << "status\n";
  for (const auto& r : t.rows) {
    os << pad(r.variant, 9) << pad(std::to_string(r.seed), 8)
       << pad(r.diverged ? "-" : fixed(r.frame_auroc), 13) << pad(r.diverged ? "-" : fixed(r.video_auroc), 13)
       << (r.diverged ? "DIVERGED (" + r.note + ")" : std::string("ok")) << '\n';
  }
  for (const auto& m : t.means) {
    os << pad(m.variant, 9) << pad("mean", 8) << pad(fixed(m.frame_auroc), 13) << pad(fixed(m.video_auroc), 13)
       << m.runs << " run(s)\n";
  }
  return os.str();
}

torch::Tensor min_max_normalize(const torch::Tensor& map) {
  const auto lo = map.min();
  const auto hi = map.max();
  if ((hi - lo).item<double>() <= 0.0) return torch::zeros_like(map);
  return (map - lo) / (hi - lo);
}

namespace {

void write_overlay(const std::filesystem::path& path, const torch::Tensor& image, const torch::Tensor& map) {
  const int h = static_cast<int>(image.size(0));
  const int w = static_cast<int>(image.size(1));
  auto heat_bytes = (map.to(torch::kFloat64) * 255.0).round().clamp(0, 255).to(torch::kUInt8).contiguous();
  cv::Mat heat(h, w, CV_8UC1, heat_bytes.data_ptr<uint8_t>());
  cv::Mat colored;
  cv::applyColorMap(heat, colored, cv::COLORMAP_JET);
  cv::Mat rgb;
  cv::cvtColor(colored, rgb, cv::COLOR_BGR2RGB);
  auto color = torch::from_blob(rgb.data, {h, w, 3}, torch::kUInt8).to(torch::kFloat32) / 255.0;
  io::write_rgb_png(path, 0.5 * image.to(torch::kFloat32) + 0.5 * color);
}

nlohmann::json raw_map(const torch::Tensor& map) {
  auto m = map.to(torch::kFloat64).contiguous();
  std::vector<double> values(m.data_ptr<double>(), m.data_ptr<double>() + m.numel());
  return {{"shape", m.sizes().vec()}, {"values", values}};
}

}  // namespace

std::vector<std::filesystem::path> export_heatmaps(pipeline::VlaForgeModelImpl& model, const torch::Tensor& image,
                                                   const std::filesystem::path& out_dir) {
  const auto features = pipeline::features_of(model.variant());
  if (!features.global_branch || !features.vla_map) {
    throw ConfigError("heatmap export needs variant T3 or T4, got " + pipeline::to_string(model.variant()));
  }
  if (image.dim() != 3 || image.size(2) != 3) throw ShapeError("export_heatmaps expects one [h, w, 3] frame");
  torch::NoGradGuard no_grad;
  model.eval();
  const auto r = model.forward_images(image.unsqueeze(0));
  const auto h = image.size(0);
  const auto w = image.size(1);

  std::vector<std::pair<std::string, torch::Tensor>> maps;
  const auto q = r.masks.query_masks.size(1);
  for (int64_t j = 0; j < q; ++j) maps.emplace_back("mask_q" + std::to_string(j), r.masks.query_masks[0][j]);
  maps.emplace_back("locmap", r.masks.loc_map[0]);
  maps.emplace_back("vlamap", r.vla_map[0]);
  maps.emplace_back("fused", r.masks.loc_map[0] * r.vla_map[0]);

  std::vector<std::filesystem::path> written;
  nlohmann::json raw = nlohmann::json::object();
  for (const auto& [name, map] : maps) {
    raw[name] = raw_map(map);
    const auto full = min_max_normalize(perceiver::bilinear_upsample(map.to(torch::kFloat64), h, w));
    const auto path = out_dir / (name + ".png");
    io::write_gray_png(path, full);
    write_overlay(out_dir / "overlays" / (name + ".png"), image, full);
    written.push_back(path);
  }
  const auto raw_path = out_dir / "raw" / "maps.json";
  std::filesystem::create_directories(raw_path.parent_path());
  std::ofstream out(raw_path);
  if (!out) throw IoError("cannot write " + raw_path.string());
  out << raw.dump() << '\n';
  return written;
}

}  // namespace vlaforge::evalkit
