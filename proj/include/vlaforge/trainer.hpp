#pragma once

#include "vlaforge/model.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace vlaforge::pipeline {

struct OptimizerProfile {
  std::string name = "toy";
  double learning_rate = 1e-3;
  double weight_decay = 5e-4;
  int64_t batch_size = 16;
  int64_t epochs = 30;
};

OptimizerProfile toy_profile();
OptimizerProfile paper_profile();
// "toy" or "paper"; anything else is a ValidationError.
OptimizerProfile optimizer_profile(const std::string& name);

struct EpochRecord {
  int64_t epoch = 0;  // 1-based
  LossValues loss;    // batch means over the epoch
  int64_t steps = 0;
  bool finite = true;
};
nlohmann::json to_json(const EpochRecord& record);

struct TrainOptions {
  OptimizerProfile profile = toy_profile();
  double orth_weight = 1.0;  // 0 drops the orthogonality regulariser
  uint64_t seed = 1024;      // batch order
  int64_t max_steps = -1;    // stop after this many optimizer steps; -1 runs every epoch
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochRecord> epochs;
  int64_t steps = 0;
  bool diverged = false;
};

// Frozen-backbone features for a whole frame set, computed once.
backbone::BackboneOutput encode_frames(backbone::BackboneImpl& backbone, const torch::Tensor& images,
                                       int64_t chunk = 64);

class Trainer {
 public:
  // images [N, h, w, 3], masks [N, h, w], labels [N].
  Trainer(VlaForgeModel model, const torch::Tensor& images, const torch::Tensor& masks, const torch::Tensor& labels,
          TrainOptions options);

  // One pass over the shuffled frames. The order depends only on (seed, epoch).
  EpochRecord run_epoch();
  // Runs the remaining epochs (or until max_steps); stops on a non-finite objective.
  TrainResult train();

  // Model parameters, optimizer moments and the epoch counter.
  void save(const std::filesystem::path& path) const;
  void resume(const std::filesystem::path& path);

  int64_t epochs_done() const { return epoch_; }
  int64_t steps_done() const { return steps_; }
  const VlaForgeModel& model() const { return model_; }

 private:
  VlaForgeModel model_;
  backbone::BackboneOutput features_;
  torch::Tensor masks_;
  torch::Tensor labels_;
  TrainOptions options_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::vector<std::pair<std::string, torch::Tensor>> params_;
  int64_t epoch_ = 0;
  int64_t steps_ = 0;
};

}  // namespace vlaforge::pipeline
