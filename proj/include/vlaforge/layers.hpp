#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace vlaforge {

// Multi-head self-attention with a fused qkv projection. Written out by hand
// (rather than nn::MultiheadAttention) so the observer path can reuse the
// exact projections on replica tokens.
class SelfAttentionImpl : public torch::nn::Module {
 public:
  SelfAttentionImpl(int64_t dim, int64_t heads);

  // x: [..., T, dim]; additive_mask broadcastable to [..., heads, T, T] or undefined.
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& additive_mask = {});

  // [..., T, dim] -> [..., heads, T, head_dim]
  torch::Tensor split_heads(const torch::Tensor& x) const;
  // [..., heads, T, head_dim] -> [..., T, dim]
  torch::Tensor merge_heads(const torch::Tensor& x) const;

  int64_t dim() const { return dim_; }
  int64_t heads() const { return heads_; }
  int64_t head_dim() const { return dim_ / heads_; }

  torch::nn::Linear qkv{nullptr};
  torch::nn::Linear out{nullptr};

 private:
  int64_t dim_;
  int64_t heads_;
};
TORCH_MODULE(SelfAttention);

class MlpImpl : public torch::nn::Module {
 public:
  MlpImpl(int64_t dim, int64_t hidden);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(Mlp);

// Pre-norm transformer block: x + attn(ln1(x)), then x + mlp(ln2(x)).
class TransformerBlockImpl : public torch::nn::Module {
 public:
  TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& additive_mask = {});

  torch::nn::LayerNorm ln1{nullptr};
  SelfAttention attn{nullptr};
  torch::nn::LayerNorm ln2{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(TransformerBlock);

}  // namespace vlaforge
