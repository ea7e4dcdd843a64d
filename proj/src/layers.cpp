#include "vlaforge/layers.hpp"

#include "vlaforge/errors.hpp"

#include <cmath>
#include <string>

namespace vlaforge {

SelfAttentionImpl::SelfAttentionImpl(int64_t dim, int64_t heads) : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ShapeError("attention width " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
  out = register_module("out", torch::nn::Linear(dim, dim));
}

torch::Tensor SelfAttentionImpl::split_heads(const torch::Tensor& x) const {
  auto sizes = x.sizes().vec();
  sizes.back() = heads_;
  sizes.push_back(head_dim());
  return x.reshape(sizes).transpose(-3, -2);
}

torch::Tensor SelfAttentionImpl::merge_heads(const torch::Tensor& x) const {
  auto y = x.transpose(-3, -2);
  auto sizes = y.sizes().vec();
  sizes.pop_back();
  sizes.back() = dim_;
  return y.reshape(sizes);
}

torch::Tensor SelfAttentionImpl::forward(const torch::Tensor& x, const torch::Tensor& additive_mask) {
  auto parts = qkv->forward(x).chunk(3, -1);
  auto q = split_heads(parts[0]);
  auto k = split_heads(parts[1]);
  auto v = split_heads(parts[2]);
  auto logits = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim()));
  if (additive_mask.defined()) {
    logits = logits + additive_mask;
  }
  auto attn = torch::softmax(logits, -1);
  return out->forward(merge_heads(torch::matmul(attn, v)));
}

MlpImpl::MlpImpl(int64_t dim, int64_t hidden) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
  return fc2->forward(torch::gelu(fc1->forward(x)));
}

TransformerBlockImpl::TransformerBlockImpl(int64_t dim, int64_t heads, int64_t mlp_ratio) {
  ln1 = register_module("ln1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", SelfAttention(dim, heads));
  ln2 = register_module("ln2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp = register_module("mlp", Mlp(dim, dim * mlp_ratio));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x, const torch::Tensor& additive_mask) {
  auto h = x + attn->forward(ln1->forward(x), additive_mask);
  return h + mlp->forward(ln2->forward(h));
}

}  // namespace vlaforge
