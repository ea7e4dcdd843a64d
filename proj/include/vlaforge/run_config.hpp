#pragma once

#include "vlaforge/model.hpp"
#include "vlaforge/synthgen.hpp"
#include "vlaforge/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace vlaforge::cli {

struct RunConfig {
  pipeline::ModelConfig model;
  synthgen::BenchmarkConfig data;
  pipeline::OptimizerProfile profile = pipeline::toy_profile();
  double orth_weight = 1.0;
  int64_t max_steps = -1;
  uint64_t seed = 1024;
  double alpha = 0.5;
  std::filesystem::path dataset = "bench";
  std::filesystem::path output = "runs/default";
  std::filesystem::path checkpoint;  // empty: <output>/model.ckpt
  std::filesystem::path resume;      // train: continue from this trainer checkpoint
  bool eval_untrained = false;
  std::string device = "cpu";
  std::vector<pipeline::ModelVariant> ablate_variants{pipeline::ModelVariant::Base, pipeline::ModelVariant::T1,
                                                      pipeline::ModelVariant::T2, pipeline::ModelVariant::T3,
                                                      pipeline::ModelVariant::T4};
  std::vector<uint64_t> ablate_seeds{1024, 0, 1111};
  std::string viz_video;  // empty: first fake test video
  int64_t viz_frame = 0;

  pipeline::TrainOptions train_options() const;
  std::filesystem::path checkpoint_path() const;
};

struct Overrides {
  std::optional<uint64_t> seed;
  std::optional<double> alpha;
  std::optional<std::filesystem::path> out;
  std::optional<std::string> device;
};

// Defaults, then the file (may be absent), then the flag overrides. Every problem
// found along the way is collected into one ValidationError.
RunConfig load_run_config(const std::optional<std::filesystem::path>& file, const Overrides& overrides);
RunConfig run_config_from_json(const nlohmann::json& j, const Overrides& overrides);

nlohmann::json to_json(const RunConfig& config);

}  // namespace vlaforge::cli
