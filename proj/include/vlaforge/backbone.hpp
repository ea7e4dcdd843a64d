#pragma once

#include "vlaforge/layers.hpp"
#include "vlaforge/tokenizer.hpp"

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace vlaforge::backbone {

struct BackboneConfig {
  int64_t image_size = 64;
  int64_t patch_size = 8;
  int64_t num_blocks = 4;
  int64_t embed_dim = 64;
  int64_t num_heads = 4;
  int64_t mlp_ratio = 4;
  int64_t text_vocab = 256;
  int64_t text_len_max = 16;
  int64_t text_token_dim = 64;
  int64_t text_out_dim = 64;
  int64_t text_layers = 2;
  int64_t text_heads = 4;
  bool frozen = true;
  uint64_t init_seed = 7;

  int64_t grid() const { return image_size / patch_size; }
  int64_t num_patches() const { return grid() * grid(); }
  int64_t head_dim() const { return embed_dim / num_heads; }

  // Empty when valid; otherwise one message per offending field.
  std::vector<std::string> validate() const;
};

/// Per-block tokens of the visual encoder. Every tensor may carry leading
/// batch dimensions; the shapes below are for a single image.
struct BackboneOutput {
  torch::Tensor patch_embeddings;            // [h_p, w_p, d_p], patch projection before the transformer
  std::vector<torch::Tensor> class_tokens;   // L+1 x [d_p]; index 0 is the embedded input
  std::vector<torch::Tensor> patch_tokens;   // L+1 x [h_p, w_p, d_p]

  const torch::Tensor& final_class() const { return class_tokens.back(); }
  const torch::Tensor& final_patches() const { return patch_tokens.back(); }
  int64_t num_blocks() const { return static_cast<int64_t>(class_tokens.size()) - 1; }

  // Selects rows along the leading batch dimension.
  BackboneOutput index_select(const torch::Tensor& rows) const;
  BackboneOutput to(torch::ScalarType dtype) const;
};

enum class PromptClass { Real, Fake };

struct TextPromptEmbedding {
  std::vector<int64_t> token_ids;
  torch::Tensor token_embeddings;  // [T, d_tk]
  int64_t id_position = 0;         // index of the <id> placeholder
  PromptClass class_tag = PromptClass::Real;
};

class VisionEncoderImpl : public torch::nn::Module {
 public:
  explicit VisionEncoderImpl(const BackboneConfig& config);

  // images: [..., h, w, 3] in [0, 1].
  BackboneOutput forward(const torch::Tensor& images);

  // Replicated class tokens attend over {self, frozen patch tokens of block l-1}
  // in every block l = 1..L with `bias` added to the patch logits of each head.
  //   replicas: [..., q, d_p]    bias: [..., H, q, h_p*w_p]
  // The same bias is applied in every block. Returns the refined [..., q, d_p].
  torch::Tensor observe(const BackboneOutput& output, const torch::Tensor& replicas,
                        const torch::Tensor& bias);

  // ln_post(z) @ proj: the image-side embedding in the joint text space.
  torch::Tensor project_class(const torch::Tensor& class_token);

  const BackboneConfig& config() const { return config_; }

  torch::nn::Conv2d patch_embed{nullptr};
  torch::Tensor class_embedding;
  torch::Tensor positional_embedding;
  torch::nn::LayerNorm ln_pre{nullptr};
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm ln_post{nullptr};
  torch::Tensor proj;

 private:
  torch::Tensor observe_block(TransformerBlockImpl& block, const torch::Tensor& replicas,
                              const torch::Tensor& patches, const torch::Tensor& bias) const;

  BackboneConfig config_;
};
TORCH_MODULE(VisionEncoder);

class TextEncoderImpl : public torch::nn::Module {
 public:
  explicit TextEncoderImpl(const BackboneConfig& config);

  // token embeddings [..., T, d_tk] -> unit-norm features [..., d_t] taken at the final position.
  torch::Tensor forward(const torch::Tensor& token_embeddings);

  torch::Tensor embed_ids(const std::vector<int64_t>& ids);

  torch::nn::Embedding token_embedding{nullptr};
  torch::Tensor positional_embedding;
  torch::nn::ModuleList blocks{nullptr};
  torch::nn::LayerNorm ln_final{nullptr};
  torch::Tensor projection;

 private:
  BackboneConfig config_;
};
TORCH_MODULE(TextEncoder);

/// Frozen vision-language stand-in: visual encoder, text encoder, tokenizer.
class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(const BackboneConfig& config);

  BackboneOutput encode_image(const torch::Tensor& images);

  torch::Tensor observe_class_tokens(const BackboneOutput& output, const torch::Tensor& replicas,
                                     const torch::Tensor& bias);

  // Tokenizes `text`, which must contain exactly one <id> placeholder.
  TextPromptEmbedding embed_prompt(const std::string& text, PromptClass tag);

  // Replaces the embedding at the placeholder with `id_embedding` ([..., d_tk]) and
  // encodes. Returns [..., d_t], unit-norm.
  torch::Tensor encode_text_with_substitution(const TextPromptEmbedding& prompt,
                                              const torch::Tensor& id_embedding);
  // Encodes the prompt with its own placeholder embedding retained.
  torch::Tensor encode_text(const TextPromptEmbedding& prompt);

  // Freezes every parameter (requires_grad = false).
  void freeze();
  // Order-stable hash of every parameter's bytes.
  uint64_t checksum() const;

  // Hook for externally trained weights in the checkpoint container format
  // (tensor names under "backbone."). Shapes must match the config.
  void load_external_weights(const std::filesystem::path& path);

  const BackboneConfig& config() const { return config_; }
  const Tokenizer& tokenizer() const { return tokenizer_; }

  VisionEncoder vision{nullptr};
  TextEncoder text{nullptr};

 private:
  BackboneConfig config_;
  Tokenizer tokenizer_;
};
TORCH_MODULE(Backbone);

}  // namespace vlaforge::backbone
