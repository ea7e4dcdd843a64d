#pragma once

#include "vlaforge/backbone.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>

namespace vlaforge::vla {

inline constexpr const char* kRealTemplate = "This is a real photo of <id> person.";
inline constexpr const char* kFakeTemplate = "This is a fake photo of <id> person.";

struct PromptPair {
  std::string real_template = kRealTemplate;
  std::string fake_template = kFakeTemplate;
  backbone::TextPromptEmbedding real;
  backbone::TextPromptEmbedding fake;
};

// Tokenizes and embeds both templates with the backbone's (frozen) token table.
PromptPair make_prompt_pair(backbone::BackboneImpl& backbone);

struct TextFeatures {
  torch::Tensor real;  // F_r [..., d_t], unit norm
  torch::Tensor fake;  // F_f [..., d_t], unit norm
};

struct VlaMap {
  torch::Tensor map;  // M_VLA [..., h_p, w_p], per-patch fake probability
  TextFeatures text;
};

struct FusionOutput {
  torch::Tensor fused_feature;  // F_x [..., d_f]
  torch::Tensor logits;         // [..., 2] (real, fake)
  torch::Tensor local_score;    // s_VLA [...], softmax fake probability
};

// W_id: d_p -> d_tk. Starts as the identity when the widths match.
class IdProjectionImpl : public torch::nn::Module {
 public:
  IdProjectionImpl(int64_t visual_dim, int64_t token_dim);
  torch::Tensor forward(const torch::Tensor& class_token);

  torch::nn::Linear linear{nullptr};
};
TORCH_MODULE(IdProjection);

// phi: d_p -> d_t, linear -> GELU -> linear.
class VlaAdapterImpl : public torch::nn::Module {
 public:
  VlaAdapterImpl(int64_t visual_dim, int64_t text_dim);
  torch::Tensor forward(const torch::Tensor& patch_tokens);

  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(VlaAdapter);

// psi: two 3x3 convs + global average pooling -> F_x [..., d_f].
class FusionNetImpl : public torch::nn::Module {
 public:
  explicit FusionNetImpl(int64_t fused_dim, int64_t hidden = 16);
  // map [..., h, w] -> [..., d_f]
  torch::Tensor forward(const torch::Tensor& map);

  torch::nn::Conv2d conv1{nullptr};
  torch::nn::Conv2d conv2{nullptr};
};
TORCH_MODULE(FusionNet);

// ID-aware text features: W_id(z^(L)) substituted at <id> in both templates.
TextFeatures build_id_prompts(backbone::BackboneImpl& backbone, const PromptPair& prompts, IdProjectionImpl& w_id,
                              const torch::Tensor& final_class);

// Generic text features: templates encoded with the literal placeholder retained.
TextFeatures generic_prompts(backbone::BackboneImpl& backbone, const PromptPair& prompts);

// Two-way softmax of projected patches against F_r / F_f.
// projected [..., h, w, d_t]; features broadcast over [..., d_t].
// logit_scale multiplies both similarities (1.0 reproduces the plain form).
VlaMap vla_attention_map(const torch::Tensor& projected_patches, const TextFeatures& text, double logit_scale = 1.0);

// 1 - (2 sum(p g) + eps) / (sum p + sum g + eps) over the last two axes. Shapes must match.
torch::Tensor dice_loss(const torch::Tensor& prediction, const torch::Tensor& truth, double eps = 1.0);

// Dice between the bilinearly upsampled VLA map and the image-resolution mask.
torch::Tensor vla_map_loss(const torch::Tensor& vla_map, const torch::Tensor& truth, double eps = 1.0);

// psi(M_loc * M_VLA) -> eta2 -> s_VLA. An undefined vla_map stands for an all-ones map.
FusionOutput fuse_and_score(FusionNetImpl& psi, torch::nn::LinearImpl& eta2, const torch::Tensor& loc_map,
                            const torch::Tensor& vla_map);

}  // namespace vlaforge::vla
