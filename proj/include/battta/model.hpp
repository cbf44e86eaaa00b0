#pragma once

#include <cstdint>
#include "json.hpp"
#include <string>
#include <string_view>
#include <vector>

#include "battta/tensor.hpp"
#include "battta/tokenizer.hpp"

namespace battta::clip {

struct ArchConfig {
  std::size_t image_size = 16;
  std::size_t channels = 3;
  std::size_t patch_size = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t layers = 2;
  std::size_t mlp_hidden = 256;
  std::size_t embed_dim = 32;
  std::size_t max_len = 12;
  double ln_eps = 1e-5;
  std::vector<std::string> vocab;  // full word list including the reserved ids

  std::size_t patches() const { return (image_size / patch_size) * (image_size / patch_size); }
  void validate() const;

  nlohmann::json to_json() const;
  static ArchConfig from_json(const nlohmann::json& j);
  bool operator==(const ArchConfig&) const = default;
};

// Default desk-scale architecture with the given vocabulary; `width` and
// `mlp_hidden` scale together for the reduced models used in gradient audits.
ArchConfig default_arch(const Vocabulary& vocab, std::size_t width = 64);

enum class Tower { vision, text, shared };

struct Parameter {
  std::string name;
  Tensor value;
  bool is_layernorm = false;
  Tower tower = Tower::shared;
};

// Vision/text encoder pair sharing one embedding space. Both towers are
// pre-LN transformers; the vision tower embeds 4x4 patches, the text tower
// word tokens. Features are pooled by mean over tokens (non-pad tokens for
// text), passed through a final LayerNorm and projected to embed_dim.
class DualEncoder {
 public:
  DualEncoder(ArchConfig arch, std::uint64_t seed);

  const ArchConfig& arch() const { return arch_; }
  const Vocabulary& vocabulary() const { return vocab_; }

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  // Throws ContractError for an unknown name.
  const Parameter& param(std::string_view name) const;
  Parameter& param(std::string_view name);
  std::size_t parameter_count() const;

  // Trainable (requires_grad) exactly for the given names; everything else frozen.
  void set_trainable(const std::vector<std::string>& names);

  // images: [B x H x W x C] -> [B x embed_dim]
  Tensor encode_image(const Tensor& images) const;
  // One row per class, in class order.
  Tensor encode_text(const PromptTemplate& prompt) const;
  // ids: one max_len sequence per row -> [rows x embed_dim]
  Tensor encode_tokens(const std::vector<std::vector<int>>& ids) const;

  // Learnable log-scale s; the softmax temperature is exp(-s).
  const Tensor& logit_scale() const { return param("logit_scale").value; }
  double temperature() const;

  // Deep copy of every parameter.
  DualEncoder clone() const;

 private:
  Tensor& add_param(std::string name, Tensor value, Tower tower, bool is_layernorm = false);
  Tensor transformer(Tensor x, std::size_t batch, std::size_t tokens, const std::string& prefix) const;
  Tensor linear(const Tensor& x, const std::string& prefix, bool bias = true) const;

  ArchConfig arch_;
  Vocabulary vocab_;
  std::vector<Parameter> params_;
};

enum class ScopeSelector { ln_both, ln_vision, ln_text, all, none };

ScopeSelector parse_scope(const std::string& name);
std::string to_string(ScopeSelector scope);

struct ParamScope {
  ScopeSelector selector = ScopeSelector::ln_both;
  std::vector<std::string> resolved_names;

  // Registry order; `all` excludes the temperature, which stays frozen after pretraining.
  static ParamScope resolve(ScopeSelector selector, const DualEncoder& model);
};

}  // namespace battta::clip
