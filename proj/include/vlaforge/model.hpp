#pragma once

#include "vlaforge/backbone.hpp"
#include "vlaforge/forge_perceiver.hpp"
#include "vlaforge/vla_scoring.hpp"

#include <torch/torch.h>

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace vlaforge::pipeline {

// Ablation ladder. Each tag enables a strict superset of the previous one:
//   Base  frozen similarity scoring, nothing trained
//   T1    localization map -> fusion net -> local score   (L_loc + L_L)
//   T2    + forgery-aware masks biasing replicated class tokens (L_G, L_orth)
//   T3    + VLA map from generic prompts                   (L_VLA)
//   T4    + identity-prior substitution in the prompts
enum class ModelVariant { Base, T1, T2, T3, T4 };

std::string to_string(ModelVariant variant);
ModelVariant parse_variant(const std::string& text);

struct VariantFeatures {
  bool trainable = false;
  bool global_branch = false;
  bool vla_map = false;
  bool id_prompts = false;
};
VariantFeatures features_of(ModelVariant variant);

struct ModelConfig {
  backbone::BackboneConfig backbone;
  perceiver::PerceiverConfig perceiver;
  ModelVariant variant = ModelVariant::T4;
  int64_t fusion_dim = 32;
  double vla_logit_scale = 1.0;  // 1.0 keeps the plain two-way softmax
  uint64_t seed = 1024;          // adapter initialisation

  std::vector<std::string> validate() const;
};

nlohmann::json to_json(const ModelConfig& config);
// Reads keys present in `j` over `base`; unknown keys are reported as problems.
ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base, std::vector<std::string>& problems);

struct ForwardResult {
  perceiver::ForgeryMaskSet masks;
  torch::Tensor refined_class_tokens;  // [B, q, d_p]      (global branch)
  torch::Tensor global_logits;         // [B, 2]           (global branch)
  torch::Tensor vla_map;               // [B, h_p, w_p]    (T3+)
  vla::TextFeatures text;              //                  (T3+)
  vla::FusionOutput local;             //                  (T1+)
  torch::Tensor base_score;            // [B]              (Base)
};

struct LossBreakdown {
  torch::Tensor loc;
  torch::Tensor vla;
  torch::Tensor global;
  torch::Tensor local;
  torch::Tensor orth;  // regulariser, reported apart from the task loss
  torch::Tensor final_loss;

  torch::Tensor objective(double orth_weight) const { return final_loss + orth_weight * orth; }
};

struct LossValues {
  double loc = 0, vla = 0, global = 0, local = 0, orth = 0, final_loss = 0;
};
LossValues values_of(const LossBreakdown& losses);

struct ScorePair {
  double global = 0.5;  // s_g
  double local = 0.5;   // s_VLA
  double fused = 0.5;   // s
  double alpha = 0.5;
};

// s = alpha * s_g + (1 - alpha) * s_VLA. Throws ValidationError for alpha outside [0, 1].
double fuse_scores(double global, double local, double alpha);

// Fake probability of a two-way softmax over cos(image, F_r) and cos(image, F_f).
// image [..., d_t] (any norm); text features unit-norm.
torch::Tensor similarity_fake_probability(const torch::Tensor& image_embedding, const vla::TextFeatures& text);

struct BranchScores {
  torch::Tensor global;  // [B]
  torch::Tensor local;   // [B]
};

// Trainable parameter groups the optimizer may touch for the full model.
const std::set<std::string>& declared_trainable_groups();
// Maps a registered parameter name onto its group ("queries", "g1", "perceiver_vit", "backbone", ...).
std::string parameter_group(const std::string& name);

class VlaForgeModelImpl : public torch::nn::Module {
 public:
  explicit VlaForgeModelImpl(const ModelConfig& config);

  // Forward from precomputed (frozen) backbone features, batched [B, ...].
  ForwardResult forward(const backbone::BackboneOutput& features);
  ForwardResult forward_images(const torch::Tensor& images);

  // Per-variant gated losses, batch-averaged. masks [B, h, w] in [0, 1]; labels [B] int64.
  LossBreakdown training_losses(const ForwardResult& result, const torch::Tensor& masks,
                                const torch::Tensor& labels);

  BranchScores branch_scores(const ForwardResult& result) const;
  ScorePair infer(const torch::Tensor& image, double alpha);
  double base_variant_score(const torch::Tensor& image);

  std::vector<std::pair<std::string, torch::Tensor>> named_trainable_parameters() const;
  std::vector<torch::Tensor> trainable_parameters() const;
  std::set<std::string> trainable_groups() const;
  int64_t trainable_parameter_count() const;

  const ModelConfig& config() const { return config_; }
  ModelVariant variant() const { return config_.variant; }
  const vla::PromptPair& prompts() const { return prompts_; }

  backbone::Backbone backbone{nullptr};
  perceiver::ForgePerceiver perceiver{nullptr};
  torch::nn::Linear eta1{nullptr};
  vla::VlaAdapter phi{nullptr};
  vla::IdProjection w_id{nullptr};
  vla::FusionNet psi{nullptr};
  torch::nn::Linear eta2{nullptr};

 private:
  torch::Tensor base_scores(const backbone::BackboneOutput& features);
  vla::TextFeatures text_features(const backbone::BackboneOutput& features);

  ModelConfig config_;
  VariantFeatures features_;
  vla::PromptPair prompts_;
};
TORCH_MODULE(VlaForgeModel);

// Checkpoint container with the model config in the header and every
// parameter (backbone included) as a named tensor.
void save_model(const std::filesystem::path& path, const VlaForgeModelImpl& model,
                const nlohmann::json& extra_header = nlohmann::json::object(),
                const std::vector<std::pair<std::string, torch::Tensor>>& extra_tensors = {});
VlaForgeModel load_model(const std::filesystem::path& path);
// Copies parameters named in the checkpoint into `model`; shapes must match.
void load_parameters(VlaForgeModelImpl& model, const std::filesystem::path& path);

}  // namespace vlaforge::pipeline
