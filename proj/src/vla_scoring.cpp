#include "vlaforge/vla_scoring.hpp"

#include "vlaforge/errors.hpp"
#include "vlaforge/forge_perceiver.hpp"

namespace vlaforge::vla {

PromptPair make_prompt_pair(backbone::BackboneImpl& backbone) {
  PromptPair pair;
  pair.real = backbone.embed_prompt(pair.real_template, backbone::PromptClass::Real);
  pair.fake = backbone.embed_prompt(pair.fake_template, backbone::PromptClass::Fake);
  return pair;
}

IdProjectionImpl::IdProjectionImpl(int64_t visual_dim, int64_t token_dim) {
  linear = register_module("linear", torch::nn::Linear(visual_dim, token_dim));
  if (visual_dim == token_dim) {
    torch::NoGradGuard no_grad;
    linear->weight.copy_(torch::eye(visual_dim));
    linear->bias.zero_();
  }
}

torch::Tensor IdProjectionImpl::forward(const torch::Tensor& class_token) {
  return linear->forward(class_token);
}

VlaAdapterImpl::VlaAdapterImpl(int64_t visual_dim, int64_t text_dim) {
  fc1 = register_module("fc1", torch::nn::Linear(visual_dim, text_dim));
  fc2 = register_module("fc2", torch::nn::Linear(text_dim, text_dim));
}

torch::Tensor VlaAdapterImpl::forward(const torch::Tensor& patch_tokens) {
  return fc2->forward(torch::gelu(fc1->forward(patch_tokens)));
}

FusionNetImpl::FusionNetImpl(int64_t fused_dim, int64_t hidden) {
  conv1 = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(1, hidden, 3).padding(1)));
  conv2 = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, fused_dim, 3).padding(1)));
}

torch::Tensor FusionNetImpl::forward(const torch::Tensor& map) {
  const auto h = map.size(-2);
  const auto w = map.size(-1);
  auto x = map.reshape({-1, 1, h, w});
  x = torch::gelu(conv1->forward(x));
  x = torch::gelu(conv2->forward(x));
  auto pooled = x.mean({-2, -1});  // [B, d_f]
  auto sizes = map.sizes().vec();
  sizes.resize(sizes.size() - 2);
  sizes.push_back(pooled.size(-1));
  return pooled.reshape(sizes);
}

TextFeatures build_id_prompts(backbone::BackboneImpl& backbone, const PromptPair& prompts, IdProjectionImpl& w_id,
                              const torch::Tensor& final_class) {
  auto id_embedding = w_id.forward(final_class);
  return {backbone.encode_text_with_substitution(prompts.real, id_embedding),
          backbone.encode_text_with_substitution(prompts.fake, id_embedding)};
}

TextFeatures generic_prompts(backbone::BackboneImpl& backbone, const PromptPair& prompts) {
  return {backbone.encode_text(prompts.real), backbone.encode_text(prompts.fake)};
}

VlaMap vla_attention_map(const torch::Tensor& projected_patches, const TextFeatures& text, double logit_scale) {
  const auto dim = projected_patches.size(-1);
  if (text.real.size(-1) != dim || text.fake.size(-1) != dim) {
    throw ShapeError("text features and projected patches disagree on width");
  }
  // Broadcast [..., d] features over the [h, w] grid.
  auto real = text.real.unsqueeze(-2).unsqueeze(-2);
  auto fake = text.fake.unsqueeze(-2).unsqueeze(-2);
  auto sim_real = (projected_patches * real).sum(-1) * logit_scale;
  auto sim_fake = (projected_patches * fake).sum(-1) * logit_scale;
  auto probs = torch::softmax(torch::stack({sim_real, sim_fake}, -1), -1);
  return {probs.select(-1, 1), text};
}

torch::Tensor dice_loss(const torch::Tensor& prediction, const torch::Tensor& truth, double eps) {
  if (prediction.sizes() != truth.sizes()) {
    throw ShapeError("dice loss needs prediction and truth of identical shape");
  }
  perceiver::check_unit_range(truth, "ground-truth mask");
  perceiver::check_unit_range(prediction.detach(), "dice prediction");
  auto g = truth.to(prediction.scalar_type());
  auto overlap = (prediction * g).sum({-2, -1});
  auto total = prediction.sum({-2, -1}) + g.sum({-2, -1});
  return 1.0 - (2.0 * overlap + eps) / (total + eps);
}

torch::Tensor vla_map_loss(const torch::Tensor& vla_map, const torch::Tensor& truth, double eps) {
  return dice_loss(perceiver::bilinear_upsample(vla_map, truth.size(-2), truth.size(-1)), truth, eps);
}

FusionOutput fuse_and_score(FusionNetImpl& psi, torch::nn::LinearImpl& eta2, const torch::Tensor& loc_map,
                            const torch::Tensor& vla_map) {
  torch::Tensor fused = loc_map;
  if (vla_map.defined()) {
    if (vla_map.sizes() != loc_map.sizes()) {
      throw ShapeError("localization and VLA maps must share one grid");
    }
    fused = loc_map * vla_map;
  }
  FusionOutput out;
  out.fused_feature = psi.forward(fused);
  out.logits = eta2.forward(out.fused_feature);
  out.local_score = torch::softmax(out.logits, -1).select(-1, 1);
  return out;
}

}  // namespace vlaforge::vla
