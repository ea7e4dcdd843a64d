#pragma once

#include "vlaforge/layers.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <vector>

namespace vlaforge::perceiver {

struct PerceiverConfig {
  int64_t num_queries = 8;
  int64_t width = 48;
  int64_t depth = 2;
  int64_t heads_internal = 3;
  int64_t backbone_heads = 4;
  int64_t mlp_ratio = 4;
  int64_t loc_hidden = 16;       // channels of the 1x1 stage of the localization head
  int64_t loc_context_kernel = 3;  // 0 disables the spatial stage (1x1 only)

  std::vector<std::string> validate() const;
};

struct PerceiverTokens {
  torch::Tensor visual;   // [..., h_v, w_v, d_v]
  torch::Tensor queries;  // [..., q, d_v]
};

struct ForgeryMaskSet {
  torch::Tensor head_masks;       // M   [..., H, q, h_v, w_v]
  torch::Tensor query_masks;      // M^  [..., q, h_v, w_v], head mean of M
  torch::Tensor loc_query_maps;   // M~  [..., q, h_v, w_v]
  torch::Tensor loc_map;          // M_loc [..., h_v, w_v] in (0, 1)
};

// --- pure math, shared by the module and the tests' oracles ---------------

// Q^ [..., q, d] against per-head visual features V^ [..., h, w, H*d]:
// M_i = Q^ V^_i^T for every head i. Returns [..., H, q, h, w].
torch::Tensor head_similarity(const torch::Tensor& query_proj, const torch::Tensor& visual_proj, int64_t heads);

// Sum over ordered pairs u != v of |cos(vec(M^_u), vec(M^_v))|, norms guarded by eps.
// masks [..., q, h, w] -> [...]. Returns zeros for q == 1; throws for q == 0.
torch::Tensor orthogonality_loss(const torch::Tensor& query_masks, double eps = 1e-8);

// Mean pairwise |cos| over unordered query pairs, [...]. Diagnostic of mask diversity.
torch::Tensor mean_pairwise_abs_cosine(const torch::Tensor& query_masks, double eps = 1e-8);

// Bilinear resize of [..., h, w] maps to [..., out_h, out_w] (half-pixel centres).
torch::Tensor bilinear_upsample(const torch::Tensor& maps, int64_t out_h, int64_t out_w);

// Per-frame MSE between the upsampled localization map and the ground truth.
// loc_map [..., h_v, w_v], truth [..., h, w] in [0, 1] -> [...].
torch::Tensor localization_loss(const torch::Tensor& loc_map, const torch::Tensor& truth);

// Throws ValidationError unless every value lies in [0, 1].
void check_unit_range(const torch::Tensor& mask, const std::string& what);

// --- modules ----------------------------------------------------------------

// h(.): 1x1 conv over the q channels -> GELU -> kxk conv -> 1 channel -> sigmoid.
class LocalizationHeadImpl : public torch::nn::Module {
 public:
  LocalizationHeadImpl(int64_t in_channels, int64_t hidden, int64_t context_kernel);
  // [..., q, h, w] -> [..., h, w]
  torch::Tensor forward(const torch::Tensor& query_maps);

  torch::nn::Conv2d pointwise{nullptr};
  torch::nn::Conv2d context{nullptr};
};
TORCH_MODULE(LocalizationHead);

class ForgePerceiverImpl : public torch::nn::Module {
 public:
  // with_head_masks=false skips g1 (variants without the biased global branch).
  ForgePerceiverImpl(const PerceiverConfig& config, int64_t input_dim, int64_t grid, bool with_head_masks);

  // V: [..., h_v, w_v, d_in] patch embeddings -> processed visual and query streams.
  PerceiverTokens run(const torch::Tensor& patch_embeddings);
  // Fills head_masks and query_masks.
  void compute_head_masks(const PerceiverTokens& tokens, ForgeryMaskSet& out);
  // Fills loc_query_maps and loc_map.
  void localization_map(const PerceiverTokens& tokens, ForgeryMaskSet& out);

  bool has_head_masks() const { return !g1.is_empty(); }
  const PerceiverConfig& config() const { return config_; }

  torch::nn::Linear input_proj{nullptr};
  torch::Tensor pos_embed;
  torch::Tensor queries;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm ln_out{nullptr};
  torch::nn::Linear g1{nullptr};
  torch::nn::Linear g2{nullptr};
  torch::nn::Linear g3{nullptr};
  LocalizationHead loc_head{nullptr};

 private:
  PerceiverConfig config_;
  int64_t grid_;
};
TORCH_MODULE(ForgePerceiver);

}  // namespace vlaforge::perceiver
