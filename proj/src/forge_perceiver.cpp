#include "vlaforge/forge_perceiver.hpp"

#include "vlaforge/errors.hpp"

namespace vlaforge::perceiver {
namespace {

std::vector<int64_t> lead_dims(const torch::Tensor& t, int64_t trailing) {
  auto sizes = t.sizes().vec();
  sizes.resize(sizes.size() - trailing);
  return sizes;
}

std::vector<int64_t> concat(std::vector<int64_t> a, std::initializer_list<int64_t> b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// |cos| matrix over the query axis: [..., q, h, w] -> [..., q, q].
torch::Tensor abs_cosine_matrix(const torch::Tensor& query_masks, double eps) {
  auto flat = query_masks.flatten(-2);
  auto norms = flat.norm(2, -1);
  auto gram = torch::matmul(flat, flat.transpose(-2, -1));
  auto denom = norms.unsqueeze(-1) * norms.unsqueeze(-2) + eps;
  return (gram / denom).abs();
}

}  // namespace

std::vector<std::string> PerceiverConfig::validate() const {
  std::vector<std::string> problems;
  if (num_queries < 1) problems.push_back("perceiver.num_queries must be >= 1");
  if (width < 1 || heads_internal < 1 || width % heads_internal != 0) {
    problems.push_back("perceiver.width must be a positive multiple of perceiver.heads_internal");
  }
  if (depth < 1) problems.push_back("perceiver.depth must be >= 1");
  if (backbone_heads < 1) problems.push_back("perceiver.backbone_heads must be >= 1");
  if (loc_hidden < 1) problems.push_back("perceiver.loc_hidden must be >= 1");
  if (loc_context_kernel < 0 || (loc_context_kernel > 0 && loc_context_kernel % 2 == 0)) {
    problems.push_back("perceiver.loc_context_kernel must be 0 or odd");
  }
  return problems;
}

torch::Tensor head_similarity(const torch::Tensor& query_proj, const torch::Tensor& visual_proj, int64_t heads) {
  const auto d = query_proj.size(-1);
  if (visual_proj.dim() < 3 || visual_proj.size(-1) != d * heads) {
    throw ShapeError("head-specific visual features must have " + std::to_string(d * heads) + " channels");
  }
  const auto h = visual_proj.size(-3);
  const auto w = visual_proj.size(-2);
  const auto q = query_proj.size(-2);
  // [..., h, w, H*d] -> [..., H, d, h*w]
  auto v = visual_proj.reshape(concat(lead_dims(visual_proj, 3), {h * w, heads, d}))
               .transpose(-3, -2)
               .transpose(-2, -1);
  auto m = torch::matmul(query_proj.unsqueeze(-3), v);  // [..., H, q, h*w]
  return m.reshape(concat(lead_dims(m, 3), {heads, q, h, w}));
}

torch::Tensor orthogonality_loss(const torch::Tensor& query_masks, double eps) {
  if (query_masks.dim() < 3) {
    throw ShapeError("query masks must be [..., q, h, w]");
  }
  const auto q = query_masks.size(-3);
  if (q == 0) {
    throw ShapeError("orthogonality loss needs at least one query mask");
  }
  auto cos = abs_cosine_matrix(query_masks, eps);
  auto off_diagonal = 1.0 - torch::eye(q, cos.options());
  return (cos * off_diagonal).sum({-2, -1});
}

torch::Tensor mean_pairwise_abs_cosine(const torch::Tensor& query_masks, double eps) {
  const auto q = query_masks.size(-3);
  if (q < 2) {
    return torch::zeros(lead_dims(query_masks, 3), query_masks.options());
  }
  return orthogonality_loss(query_masks, eps) / static_cast<double>(q * (q - 1));
}

torch::Tensor bilinear_upsample(const torch::Tensor& maps, int64_t out_h, int64_t out_w) {
  if (maps.dim() < 2) {
    throw ShapeError("maps must be [..., h, w]");
  }
  const auto h = maps.size(-2);
  const auto w = maps.size(-1);
  if (h == out_h && w == out_w) {
    return maps;
  }
  namespace F = torch::nn::functional;
  auto x = maps.reshape({-1, 1, h, w});
  auto y = F::interpolate(
      x, F::InterpolateFuncOptions().size(std::vector<int64_t>{out_h, out_w}).mode(torch::kBilinear).align_corners(false));
  return y.reshape(concat(lead_dims(maps, 2), {out_h, out_w}));
}

void check_unit_range(const torch::Tensor& mask, const std::string& what) {
  if (!mask.defined()) {
    throw ConfigError(what + " is required but missing");
  }
  if (mask.numel() == 0) {
    return;
  }
  auto lo = mask.min().item<double>();
  auto hi = mask.max().item<double>();
  if (!(lo >= 0.0 && hi <= 1.0)) {
    throw ValidationError(what + " values must lie in [0, 1], got [" + std::to_string(lo) + ", " +
                          std::to_string(hi) + "]");
  }
}

torch::Tensor localization_loss(const torch::Tensor& loc_map, const torch::Tensor& truth) {
  check_unit_range(truth, "ground-truth mask");
  auto up = bilinear_upsample(loc_map, truth.size(-2), truth.size(-1));
  return (up - truth.to(up.scalar_type())).pow(2).mean({-2, -1});
}

// ---------------------------------------------------------------------------

LocalizationHeadImpl::LocalizationHeadImpl(int64_t in_channels, int64_t hidden, int64_t context_kernel) {
  if (context_kernel == 0) {
    pointwise = register_module("pointwise", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, 1, 1)));
    return;
  }
  pointwise = register_module("pointwise", torch::nn::Conv2d(torch::nn::Conv2dOptions(in_channels, hidden, 1)));
  context = register_module(
      "context", torch::nn::Conv2d(torch::nn::Conv2dOptions(hidden, 1, context_kernel).padding(context_kernel / 2)));
}

torch::Tensor LocalizationHeadImpl::forward(const torch::Tensor& query_maps) {
  const auto q = query_maps.size(-3);
  const auto h = query_maps.size(-2);
  const auto w = query_maps.size(-1);
  auto x = pointwise->forward(query_maps.reshape({-1, q, h, w}));
  if (!context.is_empty()) {
    x = context->forward(torch::gelu(x));
  }
  return torch::sigmoid(x).reshape(concat(lead_dims(query_maps, 3), {h, w}));
}

ForgePerceiverImpl::ForgePerceiverImpl(const PerceiverConfig& config, int64_t input_dim, int64_t grid,
                                       bool with_head_masks)
    : config_(config), grid_(grid) {
  if (auto problems = config.validate(); !problems.empty()) {
    throw ValidationError(problems);
  }
  const auto d = config.width;
  input_proj = register_module("input_proj", torch::nn::Linear(input_dim, d));
  pos_embed = register_parameter("pos_embed", torch::randn({grid * grid, d}) * 0.02);
  queries = register_parameter("queries", torch::randn({config.num_queries, d}));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < config.depth; ++i) {
    blocks->push_back(TransformerBlock(d, config.heads_internal, config.mlp_ratio));
  }
  ln_out = register_module("ln_out", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  if (with_head_masks) {
    g1 = register_module("g1", torch::nn::Linear(d, d * config.backbone_heads));
  }
  g2 = register_module("g2", torch::nn::Linear(d, d));
  g3 = register_module("g3", torch::nn::Linear(d, d));
  loc_head = register_module("loc_head",
                             LocalizationHead(config.num_queries, config.loc_hidden, config.loc_context_kernel));
}

PerceiverTokens ForgePerceiverImpl::run(const torch::Tensor& patch_embeddings) {
  if (patch_embeddings.dim() < 3 || patch_embeddings.size(-3) != grid_ || patch_embeddings.size(-2) != grid_ ||
      patch_embeddings.size(-1) != input_proj->options.in_features()) {
    throw ShapeError("perceiver input must be [..., " + std::to_string(grid_) + ", " + std::to_string(grid_) + ", " +
                     std::to_string(input_proj->options.in_features()) + "]");
  }
  const auto lead = lead_dims(patch_embeddings, 3);
  const auto n = grid_ * grid_;
  const auto q = config_.num_queries;
  const auto d = config_.width;

  auto visual = input_proj->forward(patch_embeddings.reshape({-1, n, patch_embeddings.size(-1)})) + pos_embed;
  const auto batch = visual.size(0);
  auto seq = torch::cat({visual, queries.unsqueeze(0).expand({batch, q, d})}, 1);
  for (const auto& block : *blocks) {
    seq = block->as<TransformerBlockImpl>()->forward(seq);
  }
  seq = ln_out->forward(seq);
  PerceiverTokens out;
  out.visual = seq.narrow(1, 0, n).reshape(concat(lead, {grid_, grid_, d}));
  out.queries = seq.narrow(1, n, q).reshape(concat(lead, {q, d}));
  return out;
}

void ForgePerceiverImpl::compute_head_masks(const PerceiverTokens& tokens, ForgeryMaskSet& out) {
  if (g1.is_empty()) {
    throw ConfigError("this perceiver was built without head-specific masks (g1)");
  }
  out.head_masks = head_similarity(g2->forward(tokens.queries), g1->forward(tokens.visual), config_.backbone_heads);
  out.query_masks = out.head_masks.mean(-4);
}

void ForgePerceiverImpl::localization_map(const PerceiverTokens& tokens, ForgeryMaskSet& out) {
  out.loc_query_maps = head_similarity(g2->forward(tokens.queries), g3->forward(tokens.visual), 1).squeeze(-4);
  out.loc_map = loc_head->forward(out.loc_query_maps);
}

}  // namespace vlaforge::perceiver
