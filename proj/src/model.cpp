#include "vlaforge/model.hpp"

#include "json_fields.hpp"
#include "vlaforge/checkpoint.hpp"
#include "vlaforge/errors.hpp"

#include <algorithm>
#include <cctype>

namespace vlaforge::pipeline {

using nlohmann::json;

std::string to_string(ModelVariant variant) {
  switch (variant) {
    case ModelVariant::Base: return "Base";
    case ModelVariant::T1: return "T1";
    case ModelVariant::T2: return "T2";
    case ModelVariant::T3: return "T3";
    case ModelVariant::T4: return "T4";
  }
  return "?";
}

ModelVariant parse_variant(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
  if (!t.empty() && t.front() == '+') t.erase(t.begin());
  if (t == "BASE") return ModelVariant::Base;
  if (t == "T1") return ModelVariant::T1;
  if (t == "T2") return ModelVariant::T2;
  if (t == "T3") return ModelVariant::T3;
  if (t == "T4" || t == "FULL") return ModelVariant::T4;
  throw ValidationError("unknown variant '" + text + "' (expected Base, T1, T2, T3 or T4)");
}

VariantFeatures features_of(ModelVariant variant) {
  const int level = static_cast<int>(variant);
  VariantFeatures f;
  f.trainable = level >= 1;
  f.global_branch = level >= 2;
  f.vla_map = level >= 3;
  f.id_prompts = level >= 4;
  return f;
}

std::vector<std::string> ModelConfig::validate() const {
  auto problems = backbone.validate();
  for (auto& p : perceiver.validate()) problems.push_back(std::move(p));
  if (perceiver.backbone_heads != backbone.num_heads) {
    problems.push_back("perceiver.backbone_heads must equal backbone.num_heads");
  }
  if (fusion_dim < 1) problems.push_back("model.fusion_dim must be >= 1");
  if (!(vla_logit_scale > 0.0)) problems.push_back("model.vla_logit_scale must be positive");
  return problems;
}

json to_json(const ModelConfig& c) {
  const auto& b = c.backbone;
  const auto& p = c.perceiver;
  return json{
      {"backbone",
       {{"image_size", b.image_size}, {"patch_size", b.patch_size}, {"num_blocks", b.num_blocks},
        {"embed_dim", b.embed_dim}, {"num_heads", b.num_heads}, {"mlp_ratio", b.mlp_ratio},
        {"text_vocab", b.text_vocab}, {"text_len_max", b.text_len_max}, {"text_token_dim", b.text_token_dim},
        {"text_out_dim", b.text_out_dim}, {"text_layers", b.text_layers}, {"text_heads", b.text_heads},
        {"frozen", b.frozen}, {"init_seed", b.init_seed}}},
      {"perceiver",
       {{"num_queries", p.num_queries}, {"width", p.width}, {"depth", p.depth}, {"heads_internal", p.heads_internal},
        {"backbone_heads", p.backbone_heads}, {"mlp_ratio", p.mlp_ratio}, {"loc_hidden", p.loc_hidden},
        {"loc_context_kernel", p.loc_context_kernel}}},
      {"variant", to_string(c.variant)},
      {"fusion_dim", c.fusion_dim},
      {"vla_logit_scale", c.vla_logit_scale},
      {"seed", c.seed}};
}

ModelConfig model_config_from_json(const json& j, ModelConfig base, std::vector<std::string>& problems) {
  detail::FieldReader top(j, "model", problems);
  top.known("backbone").known("perceiver").known("variant");
  top.field("fusion_dim", base.fusion_dim).field("vla_logit_scale", base.vla_logit_scale).field("seed", base.seed);
  if (top.has("backbone")) {
    auto& b = base.backbone;
    detail::FieldReader r(top.at("backbone"), "backbone", problems);
    r.field("image_size", b.image_size).field("patch_size", b.patch_size).field("num_blocks", b.num_blocks)
        .field("embed_dim", b.embed_dim).field("num_heads", b.num_heads).field("mlp_ratio", b.mlp_ratio)
        .field("text_vocab", b.text_vocab).field("text_len_max", b.text_len_max)
        .field("text_token_dim", b.text_token_dim).field("text_out_dim", b.text_out_dim)
        .field("text_layers", b.text_layers).field("text_heads", b.text_heads).field("frozen", b.frozen)
        .field("init_seed", b.init_seed);
  }
  if (top.has("perceiver")) {
    auto& p = base.perceiver;
    detail::FieldReader r(top.at("perceiver"), "perceiver", problems);
    r.field("num_queries", p.num_queries).field("width", p.width).field("depth", p.depth)
        .field("heads_internal", p.heads_internal).field("backbone_heads", p.backbone_heads)
        .field("mlp_ratio", p.mlp_ratio).field("loc_hidden", p.loc_hidden)
        .field("loc_context_kernel", p.loc_context_kernel);
  }
  if (top.has("variant")) {
    try {
      base.variant = parse_variant(top.at("variant").get<std::string>());
    } catch (const std::exception&) {
      problems.push_back("variant must be one of Base, T1, T2, T3, T4");
    }
  }
  return base;
}

LossValues values_of(const LossBreakdown& l) {
  auto v = [](const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; };
  return {v(l.loc), v(l.vla), v(l.global), v(l.local), v(l.orth), v(l.final_loss)};
}

torch::Tensor similarity_fake_probability(const torch::Tensor& image_embedding, const vla::TextFeatures& text) {
  auto image = image_embedding / image_embedding.norm(2, -1, /*keepdim=*/true);
  auto cos_real = (image * text.real).sum(-1);
  auto cos_fake = (image * text.fake).sum(-1);
  return torch::softmax(torch::stack({cos_real, cos_fake}, -1), -1).select(-1, 1);
}

double fuse_scores(double global, double local, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ValidationError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  return alpha * global + (1.0 - alpha) * local;
}

const std::set<std::string>& declared_trainable_groups() {
  static const std::set<std::string> groups = {"queries", "g1",  "g2",  "g3",  "loc_head",     "eta1",
                                               "eta2",    "psi", "phi", "w_id", "perceiver_vit"};
  return groups;
}

std::string parameter_group(const std::string& name) {
  auto starts = [&](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  if (starts("backbone.")) return "backbone";
  if (name == "perceiver.queries") return "queries";
  if (starts("perceiver.g1.")) return "g1";
  if (starts("perceiver.g2.")) return "g2";
  if (starts("perceiver.g3.")) return "g3";
  if (starts("perceiver.loc_head.")) return "loc_head";
  if (starts("perceiver.")) return "perceiver_vit";
  auto dot = name.find('.');
  return name.substr(0, dot);
}

// ---------------------------------------------------------------------------

VlaForgeModelImpl::VlaForgeModelImpl(const ModelConfig& config) : config_(config), features_(features_of(config.variant)) {
  if (auto problems = config.validate(); !problems.empty()) {
    throw ValidationError(problems);
  }
  const auto& b = config.backbone;
  backbone = register_module("backbone", backbone::Backbone(b));
  prompts_ = vla::make_prompt_pair(*backbone);

  torch::manual_seed(config.seed);
  if (features_.trainable) {
    perceiver = register_module(
        "perceiver", perceiver::ForgePerceiver(config.perceiver, b.embed_dim, b.grid(), features_.global_branch));
    psi = register_module("psi", vla::FusionNet(config.fusion_dim));
    eta2 = register_module("eta2", torch::nn::Linear(config.fusion_dim, 2));
  }
  if (features_.global_branch) {
    eta1 = register_module("eta1", torch::nn::Linear(b.embed_dim, 2));
  }
  if (features_.vla_map) {
    phi = register_module("phi", vla::VlaAdapter(b.embed_dim, b.text_out_dim));
  }
  if (features_.id_prompts) {
    w_id = register_module("w_id", vla::IdProjection(b.embed_dim, b.text_token_dim));
  }
}

vla::TextFeatures VlaForgeModelImpl::text_features(const backbone::BackboneOutput& features) {
  // Token embeddings follow the module dtype (the model may have been cast).
  prompts_.real.token_embeddings = backbone->text->embed_ids(prompts_.real.token_ids);
  prompts_.fake.token_embeddings = backbone->text->embed_ids(prompts_.fake.token_ids);
  if (features_.id_prompts) {
    return vla::build_id_prompts(*backbone, prompts_, *w_id, features.final_class());
  }
  return vla::generic_prompts(*backbone, prompts_);
}

torch::Tensor VlaForgeModelImpl::base_scores(const backbone::BackboneOutput& features) {
  prompts_.real.token_embeddings = backbone->text->embed_ids(prompts_.real.token_ids);
  prompts_.fake.token_embeddings = backbone->text->embed_ids(prompts_.fake.token_ids);
  auto text = vla::generic_prompts(*backbone, prompts_);
  return similarity_fake_probability(backbone->vision->project_class(features.final_class()), text);
}

ForwardResult VlaForgeModelImpl::forward(const backbone::BackboneOutput& features) {
  ForwardResult r;
  if (!features_.trainable) {
    r.base_score = base_scores(features);
    return r;
  }
  auto tokens = perceiver->run(features.patch_embeddings);
  perceiver->localization_map(tokens, r.masks);

  if (features_.global_branch) {
    perceiver->compute_head_masks(tokens, r.masks);
    auto bias = r.masks.head_masks.flatten(-2);  // [B, H, q, N]
    const auto q = config_.perceiver.num_queries;
    const auto& cls = features.class_tokens.front();
    auto replica_shape = cls.sizes().vec();
    replica_shape.insert(replica_shape.end() - 1, q);
    auto replicas = cls.unsqueeze(-2).expand(replica_shape);
    r.refined_class_tokens = backbone->observe_class_tokens(features, replicas, bias);
    r.global_logits = eta1->forward(r.refined_class_tokens.mean(-2));
  }

  if (features_.vla_map) {
    r.text = text_features(features);
    r.vla_map = vla::vla_attention_map(phi->forward(features.final_patches()), r.text, config_.vla_logit_scale).map;
  }
  r.local = vla::fuse_and_score(*psi, *eta2, r.masks.loc_map, r.vla_map);
  return r;
}

ForwardResult VlaForgeModelImpl::forward_images(const torch::Tensor& images) {
  return forward(backbone->encode_image(images));
}

LossBreakdown VlaForgeModelImpl::training_losses(const ForwardResult& r, const torch::Tensor& masks,
                                                 const torch::Tensor& labels) {
  auto zero = [&] {
    auto dtype = r.local.logits.defined() ? r.local.logits.scalar_type() : torch::kFloat32;
    return torch::zeros({}, torch::TensorOptions().dtype(dtype));
  };
  LossBreakdown l;
  l.loc = zero();
  l.vla = zero();
  l.global = zero();
  l.local = zero();
  l.orth = zero();
  if (!features_.trainable) {
    l.final_loss = zero();
    return l;
  }
  if (!masks.defined()) {
    throw ConfigError("variant " + to_string(config_.variant) + " needs ground-truth masks for every frame");
  }
  if (!labels.defined()) {
    throw ConfigError("training needs labels for every frame");
  }
  namespace F = torch::nn::functional;
  const auto targets = labels.to(torch::kInt64);

  l.loc = perceiver::localization_loss(r.masks.loc_map, masks).mean();
  l.local = F::cross_entropy(r.local.logits, targets);
  if (features_.global_branch) {
    l.global = F::cross_entropy(r.global_logits, targets);
    l.orth = perceiver::orthogonality_loss(r.masks.query_masks).mean();
  }
  if (features_.vla_map) {
    l.vla = vla::vla_map_loss(r.vla_map, masks).mean();
  }
  l.final_loss = l.loc + l.vla + l.global + l.local;
  return l;
}

BranchScores VlaForgeModelImpl::branch_scores(const ForwardResult& r) const {
  if (!features_.trainable) {
    return {r.base_score, r.base_score};
  }
  BranchScores s;
  s.local = r.local.local_score;
  // Without the biased global branch (T1) the local score stands in for both.
  s.global = features_.global_branch ? torch::softmax(r.global_logits, -1).select(-1, 1) : s.local;
  return s;
}

ScorePair VlaForgeModelImpl::infer(const torch::Tensor& image, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ValidationError("alpha must lie in [0, 1], got " + std::to_string(alpha));
  }
  torch::NoGradGuard no_grad;
  auto r = forward_images(image.unsqueeze(0));
  auto s = branch_scores(r);
  ScorePair out;
  out.global = s.global.item<double>();
  out.local = s.local.item<double>();
  out.alpha = alpha;
  out.fused = fuse_scores(out.global, out.local, alpha);
  return out;
}

double VlaForgeModelImpl::base_variant_score(const torch::Tensor& image) {
  torch::NoGradGuard no_grad;
  return base_scores(backbone->encode_image(image.unsqueeze(0))).item<double>();
}

std::vector<std::pair<std::string, torch::Tensor>> VlaForgeModelImpl::named_trainable_parameters() const {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : named_parameters()) {
    if (item.value().requires_grad()) {
      out.emplace_back(item.key(), item.value());
    }
  }
  return out;
}

std::vector<torch::Tensor> VlaForgeModelImpl::trainable_parameters() const {
  std::vector<torch::Tensor> out;
  for (auto& [name, t] : named_trainable_parameters()) out.push_back(t);
  return out;
}

std::set<std::string> VlaForgeModelImpl::trainable_groups() const {
  std::set<std::string> out;
  for (auto& [name, t] : named_trainable_parameters()) out.insert(parameter_group(name));
  return out;
}

int64_t VlaForgeModelImpl::trainable_parameter_count() const {
  int64_t n = 0;
  for (auto& [name, t] : named_trainable_parameters()) n += t.numel();
  return n;
}

// ---------------------------------------------------------------------------

void save_model(const std::filesystem::path& path, const VlaForgeModelImpl& model, const json& extra_header,
                const std::vector<std::pair<std::string, torch::Tensor>>& extra_tensors) {
  CheckpointFile file;
  file.header = {{"format", "vlaforge-checkpoint"}, {"model", to_json(model.config())}};
  for (const auto& item : extra_header.items()) {
    file.header[item.key()] = item.value();
  }
  for (const auto& item : model.named_parameters()) {
    file.tensors.emplace_back(item.key(), item.value());
  }
  for (const auto& t : extra_tensors) {
    file.tensors.push_back(t);
  }
  write_checkpoint(path, file);
}

void load_parameters(VlaForgeModelImpl& model, const std::filesystem::path& path) {
  const auto file = read_checkpoint(path);
  torch::NoGradGuard no_grad;
  for (auto& item : model.named_parameters()) {
    const auto* src = file.find(item.key());
    if (src == nullptr) {
      throw IoError("checkpoint " + path.string() + " lacks parameter '" + item.key() + "'");
    }
    if (src->sizes() != item.value().sizes()) {
      throw ShapeError("checkpoint parameter '" + item.key() + "' has the wrong shape");
    }
    item.value().copy_(*src);
  }
}

VlaForgeModel load_model(const std::filesystem::path& path) {
  const auto file = read_checkpoint(path);
  if (!file.header.contains("model")) {
    throw IoError("checkpoint " + path.string() + " has no model config");
  }
  std::vector<std::string> problems;
  auto config = model_config_from_json(file.header.at("model"), ModelConfig{}, problems);
  if (!problems.empty()) {
    throw ValidationError(problems);
  }
  VlaForgeModel model(config);
  load_parameters(*model, path);
  return model;
}

}  // namespace vlaforge::pipeline
