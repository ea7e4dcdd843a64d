#pragma once

#include "vlaforge/model.hpp"
#include "vlaforge/synthgen.hpp"
#include "vlaforge/trainer.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vlaforge::evalkit {

struct FrameScores {
  std::vector<double> global;  // s_g
  std::vector<double> local;   // s_VLA
  std::vector<double> fused;   // s
};

// Scores every frame of the set with the fused rule at `alpha`.
FrameScores score_frames(pipeline::VlaForgeModelImpl& model, const synthgen::FrameSet& frames, double alpha,
                         int64_t chunk = 64);

struct EvalReport {
  double frame_auroc = 0;
  double video_auroc = 0;
  // Each manipulation family's fakes against all real frames / videos of the set.
  std::map<std::string, double> family_frame_auroc;
  std::map<std::string, double> family_video_auroc;
  int64_t n_frames = 0;
  int64_t n_videos = 0;
  double alpha = 0.5;
  std::string variant;
};

EvalReport evaluate_scores(const std::vector<double>& scores, const synthgen::FrameSet& frames);
EvalReport evaluate(pipeline::VlaForgeModelImpl& model, const synthgen::FrameSet& frames, double alpha);

nlohmann::json to_json(const EvalReport& report);
std::string format_report(const EvalReport& report);

struct AblationRow {
  std::string variant;
  uint64_t seed = 0;
  double frame_auroc = 0;
  double video_auroc = 0;
  bool diverged = false;  // non-finite loss during training; metrics are not meaningful
  std::string note;
};

struct AblationMean {
  std::string variant;
  double frame_auroc = 0;
  double video_auroc = 0;
  int64_t runs = 0;  // rows that did not diverge
};

struct AblationTable {
  std::vector<AblationRow> rows;
  std::vector<AblationMean> means;  // variant order of the request
};

struct AblationOptions {
  pipeline::ModelConfig model;        // variant and seed are overridden per row
  pipeline::TrainOptions train;       // seed is overridden per row
  double alpha = 0.5;
  std::function<void(const AblationRow&)> on_row;
};

// Trains every variant for every seed on `train` and evaluates on `test`.
AblationTable run_ablation(const synthgen::FrameSet& train, const synthgen::FrameSet& test,
                           const std::vector<pipeline::ModelVariant>& variants, const std::vector<uint64_t>& seeds,
                           const AblationOptions& options);

nlohmann::json to_json(const AblationTable& table);
std::string format_table(const AblationTable& table);

// Writes mask_q{j}.png for each query, locmap.png, vlamap.png and fused.png (min-max
// normalized grayscale at image resolution), colour overlays under overlays/ and the
// unnormalized maps under raw/. Needs a variant with masks and a VLA map (T3 or T4).
// Returns the grayscale files.
std::vector<std::filesystem::path> export_heatmaps(pipeline::VlaForgeModelImpl& model, const torch::Tensor& image,
                                                   const std::filesystem::path& out_dir);

// (m - min) / (max - min), or zeros for a constant map.
torch::Tensor min_max_normalize(const torch::Tensor& map);

}  // namespace vlaforge::evalkit
