#include "vlaforge/backbone.hpp"

#include "vlaforge/checkpoint.hpp"
#include "vlaforge/errors.hpp"

#include <cmath>
#include <limits>

namespace vlaforge::backbone {
namespace {

std::string shape_str(const torch::Tensor& t) {
  std::string s = "[";
  for (int64_t i = 0; i < t.dim(); ++i) {
    s += (i ? ", " : "") + std::to_string(t.size(i));
  }
  return s + "]";
}

std::vector<int64_t> lead_dims(const torch::Tensor& t, int64_t trailing) {
  auto sizes = t.sizes().vec();
  sizes.resize(sizes.size() - trailing);
  return sizes;
}

std::vector<int64_t> concat(std::vector<int64_t> a, std::initializer_list<int64_t> b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

std::vector<std::string> BackboneConfig::validate() const {
  std::vector<std::string> problems;
  if (image_size <= 0) problems.push_back("backbone.image_size must be positive");
  if (patch_size <= 0) problems.push_back("backbone.patch_size must be positive");
  if (image_size > 0 && patch_size > 0 && image_size % patch_size != 0) {
    problems.push_back("backbone.image_size must be divisible by backbone.patch_size");
  }
  if (num_blocks < 1) problems.push_back("backbone.num_blocks must be >= 1");
  if (num_heads < 1) problems.push_back("backbone.num_heads must be >= 1");
  if (embed_dim < 1 || (num_heads > 0 && embed_dim % num_heads != 0)) {
    problems.push_back("backbone.embed_dim must be a positive multiple of backbone.num_heads");
  }
  if (text_heads < 1 || text_token_dim < 1 || text_token_dim % text_heads != 0) {
    problems.push_back("backbone.text_token_dim must be a positive multiple of backbone.text_heads");
  }
  if (text_out_dim < 1) problems.push_back("backbone.text_out_dim must be positive");
  if (text_layers < 1) problems.push_back("backbone.text_layers must be >= 1");
  if (text_len_max < 4) problems.push_back("backbone.text_len_max must be >= 4");
  if (text_vocab < 32) problems.push_back("backbone.text_vocab must be >= 32");
  if (mlp_ratio < 1) problems.push_back("backbone.mlp_ratio must be >= 1");
  return problems;
}

BackboneOutput BackboneOutput::index_select(const torch::Tensor& rows) const {
  BackboneOutput out;
  out.patch_embeddings = patch_embeddings.index_select(0, rows);
  for (const auto& t : class_tokens) out.class_tokens.push_back(t.index_select(0, rows));
  for (const auto& t : patch_tokens) out.patch_tokens.push_back(t.index_select(0, rows));
  return out;
}

BackboneOutput BackboneOutput::to(torch::ScalarType dtype) const {
  BackboneOutput out;
  out.patch_embeddings = patch_embeddings.to(dtype);
  for (const auto& t : class_tokens) out.class_tokens.push_back(t.to(dtype));
  for (const auto& t : patch_tokens) out.patch_tokens.push_back(t.to(dtype));
  return out;
}

// ---------------------------------------------------------------------------
// Vision encoder
// ---------------------------------------------------------------------------

VisionEncoderImpl::VisionEncoderImpl(const BackboneConfig& config) : config_(config) {
  const auto d = config.embed_dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  patch_embed = register_module(
      "patch_embed",
      torch::nn::Conv2d(torch::nn::Conv2dOptions(3, d, config.patch_size).stride(config.patch_size).bias(false)));
  class_embedding = register_parameter("class_embedding", torch::randn({d}) * scale);
  positional_embedding =
      register_parameter("positional_embedding", torch::randn({config.num_patches() + 1, d}) * scale);
  ln_pre = register_module("ln_pre", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < config.num_blocks; ++i) {
    blocks->push_back(TransformerBlock(d, config.num_heads, config.mlp_ratio));
  }
  ln_post = register_module("ln_post", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  proj = register_parameter("proj", torch::randn({d, config.text_out_dim}) * scale);
}

BackboneOutput VisionEncoderImpl::forward(const torch::Tensor& images) {
  const auto s = config_.image_size;
  if (images.dim() < 3 || images.size(-1) != 3 || images.size(-2) != s || images.size(-3) != s) {
    throw ShapeError("image must be [..., " + std::to_string(s) + ", " + std::to_string(s) +
                     ", 3], got " + shape_str(images));
  }
  const auto lead = lead_dims(images, 3);
  const auto d = config_.embed_dim;
  const auto g = config_.grid();

  auto x = images.reshape({-1, s, s, 3}).permute({0, 3, 1, 2}).to(class_embedding.scalar_type());
  x = (x - 0.5) / 0.25;
  auto patches = patch_embed->forward(x).permute({0, 2, 3, 1}).contiguous();  // [B, g, g, d]
  const auto batch = patches.size(0);

  BackboneOutput out;
  out.patch_embeddings = patches.reshape(concat(lead, {g, g, d}));

  auto cls = class_embedding.reshape({1, 1, d}).expand({batch, 1, d});
  auto seq = torch::cat({cls, patches.reshape({batch, g * g, d})}, 1) + positional_embedding;
  seq = ln_pre->forward(seq);

  auto record = [&](const torch::Tensor& tokens) {
    out.class_tokens.push_back(tokens.select(1, 0).reshape(concat(lead, {d})));
    out.patch_tokens.push_back(tokens.narrow(1, 1, g * g).reshape(concat(lead, {g, g, d})));
  };
  record(seq);
  for (const auto& block : *blocks) {
    seq = block->as<TransformerBlockImpl>()->forward(seq);
    record(seq);
  }
  return out;
}

torch::Tensor VisionEncoderImpl::observe_block(TransformerBlockImpl& block, const torch::Tensor& replicas,
                                               const torch::Tensor& patches, const torch::Tensor& bias) const {
  auto& attn = *block.attn;
  const auto num_patches = patches.size(-2);
  const double root = std::sqrt(static_cast<double>(attn.head_dim()));

  auto z_parts = attn.qkv->forward(block.ln1->forward(replicas)).chunk(3, -1);
  auto p_parts = attn.qkv->forward(block.ln1->forward(patches)).chunk(3, -1);
  auto q_z = attn.split_heads(z_parts[0]);  // [..., H, q, dh]
  auto k_z = attn.split_heads(z_parts[1]);
  auto v_z = attn.split_heads(z_parts[2]);
  auto k_p = attn.split_heads(p_parts[1]);  // [..., H, N, dh]
  auto v_p = attn.split_heads(p_parts[2]);

  auto self_logit = (q_z * k_z).sum(-1, /*keepdim=*/true) / root;           // [..., H, q, 1]
  auto patch_logits = torch::matmul(q_z, k_p.transpose(-2, -1)) / root + bias;  // [..., H, q, N]
  auto self_sizes = patch_logits.sizes().vec();
  self_sizes.back() = 1;
  auto weights = torch::softmax(torch::cat({self_logit.expand(self_sizes), patch_logits}, -1), -1);
  auto mixed = weights.narrow(-1, 0, 1) * v_z + torch::matmul(weights.narrow(-1, 1, num_patches), v_p);

  auto h = replicas + attn.out->forward(attn.merge_heads(mixed));
  return h + block.mlp->forward(block.ln2->forward(h));
}

torch::Tensor VisionEncoderImpl::observe(const BackboneOutput& output, const torch::Tensor& replicas,
                                         const torch::Tensor& bias) {
  const auto d = config_.embed_dim;
  const auto heads = config_.num_heads;
  const auto n = config_.num_patches();
  if (replicas.dim() < 2 || replicas.size(-1) != d) {
    throw ShapeError("replicas must be [..., q, " + std::to_string(d) + "], got " + shape_str(replicas));
  }
  const auto q = replicas.size(-2);
  if (q == 0) {
    throw ShapeError("observer needs at least one replica class token");
  }
  if (bias.dim() < 3 || bias.size(-3) != heads || bias.size(-2) != q || bias.size(-1) != n) {
    throw ShapeError("bias must be [..., " + std::to_string(heads) + ", " + std::to_string(q) + ", " +
                     std::to_string(n) + "], got " + shape_str(bias));
  }
  if (output.num_blocks() != config_.num_blocks) {
    throw ShapeError("backbone output has " + std::to_string(output.num_blocks()) + " blocks, expected " +
                     std::to_string(config_.num_blocks));
  }

  auto z = replicas;
  for (int64_t l = 1; l <= config_.num_blocks; ++l) {
    const auto& grid = output.patch_tokens[l - 1];
    auto patches = grid.reshape(concat(lead_dims(grid, 3), {n, d}));
    z = observe_block(*blocks[l - 1]->as<TransformerBlockImpl>(), z, patches, bias);
  }
  return z;
}

torch::Tensor VisionEncoderImpl::project_class(const torch::Tensor& class_token) {
  return torch::matmul(ln_post->forward(class_token), proj);
}

// ---------------------------------------------------------------------------
// Text encoder
// ---------------------------------------------------------------------------

TextEncoderImpl::TextEncoderImpl(const BackboneConfig& config) : config_(config) {
  const auto d = config.text_token_dim;
  token_embedding = register_module("token_embedding", torch::nn::Embedding(config.text_vocab, d));
  positional_embedding = register_parameter("positional_embedding", torch::randn({config.text_len_max, d}) * 0.1);
  blocks = register_module("blocks", torch::nn::ModuleList());
  for (int64_t i = 0; i < config.text_layers; ++i) {
    blocks->push_back(TransformerBlock(d, config.text_heads, config.mlp_ratio));
  }
  ln_final = register_module("ln_final", torch::nn::LayerNorm(torch::nn::LayerNormOptions({d})));
  projection = register_parameter("projection",
                                  torch::randn({d, config.text_out_dim}) / std::sqrt(static_cast<double>(d)));
}

torch::Tensor TextEncoderImpl::embed_ids(const std::vector<int64_t>& ids) {
  auto index = torch::tensor(ids, torch::kInt64);
  return token_embedding->forward(index);
}

torch::Tensor TextEncoderImpl::forward(const torch::Tensor& token_embeddings) {
  const auto len = token_embeddings.size(-2);
  if (token_embeddings.size(-1) != config_.text_token_dim || len > config_.text_len_max || len < 1) {
    throw ShapeError("text token embeddings must be [..., T<=" + std::to_string(config_.text_len_max) + ", " +
                     std::to_string(config_.text_token_dim) + "], got " + shape_str(token_embeddings));
  }
  auto x = token_embeddings + positional_embedding.narrow(0, 0, len);
  auto causal = torch::full({len, len}, -std::numeric_limits<double>::infinity(), x.options()).triu(1);
  for (const auto& block : *blocks) {
    x = block->as<TransformerBlockImpl>()->forward(x, causal);
  }
  auto last = ln_final->forward(x.select(-2, len - 1));
  auto features = torch::matmul(last, projection);
  return features / features.norm(2, -1, /*keepdim=*/true);
}

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

BackboneImpl::BackboneImpl(const BackboneConfig& config)
    : config_(config), tokenizer_(config.text_vocab) {
  if (auto problems = config.validate(); !problems.empty()) {
    throw ValidationError(problems);
  }
  torch::manual_seed(config.init_seed);
  vision = register_module("vision", VisionEncoder(config));
  text = register_module("text", TextEncoder(config));
  if (config.frozen) {
    freeze();
  }
}

BackboneOutput BackboneImpl::encode_image(const torch::Tensor& images) {
  if (config_.frozen) {
    torch::NoGradGuard no_grad;
    return vision->forward(images);
  }
  return vision->forward(images);
}

torch::Tensor BackboneImpl::observe_class_tokens(const BackboneOutput& output, const torch::Tensor& replicas,
                                                 const torch::Tensor& bias) {
  return vision->observe(output, replicas, bias);
}

TextPromptEmbedding BackboneImpl::embed_prompt(const std::string& text_in, PromptClass tag) {
  TextPromptEmbedding prompt;
  prompt.token_ids = tokenizer_.encode(text_in);
  prompt.class_tag = tag;
  int64_t found = 0;
  for (size_t i = 0; i < prompt.token_ids.size(); ++i) {
    if (prompt.token_ids[i] == Tokenizer::kId) {
      prompt.id_position = static_cast<int64_t>(i);
      ++found;
    }
  }
  if (found != 1) {
    throw ValidationError("prompt must contain exactly one <id> placeholder: \"" + text_in + "\"");
  }
  if (static_cast<int64_t>(prompt.token_ids.size()) > config_.text_len_max) {
    throw ValidationError("prompt longer than text_len_max: \"" + text_in + "\"");
  }
  prompt.token_embeddings = text->embed_ids(prompt.token_ids);
  return prompt;
}

torch::Tensor BackboneImpl::encode_text_with_substitution(const TextPromptEmbedding& prompt,
                                                          const torch::Tensor& id_embedding) {
  const auto& emb = prompt.token_embeddings;
  const auto len = emb.size(0);
  const auto dim = emb.size(1);
  const auto tau = prompt.id_position;
  if (tau < 0 || tau >= len) {
    throw IndexError("placeholder position " + std::to_string(tau) + " outside prompt of length " +
                     std::to_string(len));
  }
  if (id_embedding.dim() < 1 || id_embedding.size(-1) != dim) {
    throw ShapeError("id embedding must be [..., " + std::to_string(dim) + "], got " + shape_str(id_embedding));
  }
  const auto lead = lead_dims(id_embedding, 1);
  auto before = emb.narrow(0, 0, tau).expand(concat(lead, {tau, dim}));
  auto after = emb.narrow(0, tau + 1, len - tau - 1).expand(concat(lead, {len - tau - 1, dim}));
  auto tokens = torch::cat({before, id_embedding.unsqueeze(-2).to(emb.scalar_type()), after}, -2);
  return text->forward(tokens);
}

torch::Tensor BackboneImpl::encode_text(const TextPromptEmbedding& prompt) {
  return text->forward(prompt.token_embeddings);
}

void BackboneImpl::freeze() {
  for (auto& p : parameters()) {
    p.set_requires_grad(false);
  }
}

uint64_t BackboneImpl::checksum() const {
  return tensor_checksum(parameters());
}

void BackboneImpl::load_external_weights(const std::filesystem::path& path) {
  const auto file = read_checkpoint(path);
  torch::NoGradGuard no_grad;
  for (auto& item : named_parameters()) {
    const auto* src = file.find("backbone." + item.key());
    if (src == nullptr) {
      throw IoError("missing backbone tensor '" + item.key() + "' in " + path.string());
    }
    if (src->sizes() != item.value().sizes()) {
      throw ShapeError("backbone tensor '" + item.key() + "' has shape " + shape_str(*src) + ", expected " +
                       shape_str(item.value()));
    }
    item.value().copy_(*src);
  }
}

}  // namespace vlaforge::backbone
