#include "battta/model.hpp"

#include <cmath>
#include <numeric>
#include <random>

#include "battta/errors.hpp"
#include "battta/ops.hpp"

namespace battta::clip {

void ArchConfig::validate() const {
  if (image_size == 0 || patch_size == 0 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be a positive multiple of patch_size");
  }
  if (width == 0 || heads == 0 || width % heads != 0) throw ConfigError("width must be divisible by heads");
  if (layers == 0 || mlp_hidden == 0 || embed_dim == 0 || max_len == 0 || channels == 0) {
    throw ConfigError("architecture sizes must be positive");
  }
  if (vocab.size() < 3) throw ConfigError("vocabulary must hold at least one word besides the reserved ids");
  if (!(ln_eps > 0.0)) throw ConfigError("ln_eps must be positive");
}

nlohmann::json ArchConfig::to_json() const {
  return {{"image_size", image_size}, {"channels", channels}, {"patch_size", patch_size},
          {"width", width},           {"heads", heads},       {"layers", layers},
          {"mlp_hidden", mlp_hidden}, {"embed_dim", embed_dim}, {"max_len", max_len},
          {"ln_eps", ln_eps},         {"vocab", vocab}};
}

ArchConfig ArchConfig::from_json(const nlohmann::json& j) {
  ArchConfig a;
  a.image_size = j.at("image_size").get<std::size_t>();
  a.channels = j.at("channels").get<std::size_t>();
  a.patch_size = j.at("patch_size").get<std::size_t>();
  a.width = j.at("width").get<std::size_t>();
  a.heads = j.at("heads").get<std::size_t>();
  a.layers = j.at("layers").get<std::size_t>();
  a.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  a.embed_dim = j.at("embed_dim").get<std::size_t>();
  a.max_len = j.at("max_len").get<std::size_t>();
  a.ln_eps = j.at("ln_eps").get<double>();
  a.vocab = j.at("vocab").get<std::vector<std::string>>();
  return a;
}

ArchConfig default_arch(const Vocabulary& vocab, std::size_t width) {
  ArchConfig a;
  a.width = width;
  a.mlp_hidden = 4 * width;
  a.vocab = vocab.words();
  return a;
}

namespace {

// Fixed input normalisation applied while cutting patches.
constexpr double kPixelMean = 0.5;
constexpr double kPixelStd = 0.25;

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

}  // namespace

DualEncoder::DualEncoder(ArchConfig arch, std::uint64_t seed)
    : arch_(std::move(arch)), vocab_(Vocabulary::from_words(arch_.vocab)) {
  arch_.validate();
  if (vocab_.words() != arch_.vocab) throw ConfigError("vocabulary must start with the reserved ids and be unique");
  std::mt19937_64 rng(seed);
  const std::size_t w = arch_.width, h = arch_.mlp_hidden, d = arch_.embed_dim;
  const double sw = 1.0 / std::sqrt(static_cast<double>(w));

  auto add_blocks = [&](const std::string& prefix, Tower tower) {
    for (std::size_t l = 0; l < arch_.layers; ++l) {
      const std::string b = prefix + ".blocks." + std::to_string(l);
      add_param(b + ".ln1.gamma", Tensor::full({w}, 1.0, true), tower, true);
      add_param(b + ".ln1.beta", Tensor::zeros({w}, true), tower, true);
      add_param(b + ".attn.qkv.weight", normal_tensor({w, 3 * w}, sw, rng), tower);
      add_param(b + ".attn.qkv.bias", Tensor::zeros({3 * w}, true), tower);
      add_param(b + ".attn.out.weight", normal_tensor({w, w}, 0.5 * sw, rng), tower);
      add_param(b + ".attn.out.bias", Tensor::zeros({w}, true), tower);
      add_param(b + ".ln2.gamma", Tensor::full({w}, 1.0, true), tower, true);
      add_param(b + ".ln2.beta", Tensor::zeros({w}, true), tower, true);
      add_param(b + ".mlp.fc1.weight", normal_tensor({w, h}, sw, rng), tower);
      add_param(b + ".mlp.fc1.bias", Tensor::zeros({h}, true), tower);
      add_param(b + ".mlp.fc2.weight", normal_tensor({h, w}, 0.5 / std::sqrt(static_cast<double>(h)), rng), tower);
      add_param(b + ".mlp.fc2.bias", Tensor::zeros({w}, true), tower);
    }
  };

  const std::size_t patch_dim = arch_.patch_size * arch_.patch_size * arch_.channels;
  add_param("visual.patch_embed.weight", normal_tensor({patch_dim, w}, 1.0 / std::sqrt(double(patch_dim)), rng),
            Tower::vision);
  add_param("visual.patch_embed.bias", Tensor::zeros({w}, true), Tower::vision);
  add_param("visual.pos_embed", normal_tensor({arch_.patches(), w}, 0.1, rng), Tower::vision);
  add_blocks("visual", Tower::vision);
  add_param("visual.ln_post.gamma", Tensor::full({w}, 1.0, true), Tower::vision, true);
  add_param("visual.ln_post.beta", Tensor::zeros({w}, true), Tower::vision, true);
  add_param("visual.proj", normal_tensor({w, d}, sw, rng), Tower::vision);

  add_param("text.token_embed", normal_tensor({vocab_.size(), w}, 0.5, rng), Tower::text);
  add_param("text.pos_embed", normal_tensor({arch_.max_len, w}, 0.1, rng), Tower::text);
  add_blocks("text", Tower::text);
  add_param("text.ln_final.gamma", Tensor::full({w}, 1.0, true), Tower::text, true);
  add_param("text.ln_final.beta", Tensor::zeros({w}, true), Tower::text, true);
  add_param("text.proj", normal_tensor({w, d}, sw, rng), Tower::text);

  add_param("logit_scale", Tensor({1}, {std::log(1.0 / 0.07)}, true), Tower::shared);
}

Tensor& DualEncoder::add_param(std::string name, Tensor value, Tower tower, bool is_layernorm) {
  for (const auto& p : params_)
    if (p.name == name) throw ContractError("duplicate parameter name " + name);
  params_.push_back({std::move(name), std::move(value), is_layernorm, tower});
  return params_.back().value;
}

const Parameter& DualEncoder::param(std::string_view name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ContractError("unknown parameter " + std::string(name));
}

Parameter& DualEncoder::param(std::string_view name) {
  return const_cast<Parameter&>(std::as_const(*this).param(name));
}

std::size_t DualEncoder::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void DualEncoder::set_trainable(const std::vector<std::string>& names) {
  for (auto& p : params_) {
    p.value.set_requires_grad(false);
    p.value.zero_grad();
  }
  for (const auto& n : names) param(n).value.set_requires_grad(true);
}

double DualEncoder::temperature() const { return std::exp(-logit_scale().item()); }

DualEncoder DualEncoder::clone() const {
  DualEncoder copy = *this;
  for (auto& p : copy.params_) p.value = p.value.clone();
  return copy;
}

Tensor DualEncoder::linear(const Tensor& x, const std::string& prefix, bool bias) const {
  Tensor y = ops::matmul(x, param(prefix + ".weight").value);
  return bias ? ops::add_bias(y, param(prefix + ".bias").value) : y;
}

Tensor DualEncoder::transformer(Tensor x, std::size_t batch, std::size_t tokens, const std::string& prefix) const {
  const double eps = arch_.ln_eps;
  for (std::size_t l = 0; l < arch_.layers; ++l) {
    const std::string b = prefix + ".blocks." + std::to_string(l);
    Tensor h = ops::layer_norm(x, param(b + ".ln1.gamma").value, param(b + ".ln1.beta").value, eps);
    Tensor a = ops::self_attention(linear(h, b + ".attn.qkv"), batch, tokens, arch_.heads);
    x = ops::add(x, linear(a, b + ".attn.out"));
    h = ops::layer_norm(x, param(b + ".ln2.gamma").value, param(b + ".ln2.beta").value, eps);
    x = ops::add(x, linear(ops::gelu(linear(h, b + ".mlp.fc1")), b + ".mlp.fc2"));
  }
  return x;
}

Tensor DualEncoder::encode_image(const Tensor& images) const {
  const std::size_t s = arch_.image_size, ps = arch_.patch_size, ch = arch_.channels;
  if (images.ndim() != 4 || images.dim(1) != s || images.dim(2) != s || images.dim(3) != ch) {
    throw DimensionError("encode_image: expected [B x " + std::to_string(s) + " x " + std::to_string(s) + " x " +
                         std::to_string(ch) + "], got " + shape_str(images.shape()));
  }
  const std::size_t batch = images.dim(0), grid = s / ps, tokens = grid * grid;
  const std::size_t patch_dim = ps * ps * ch;
  if (batch == 0) throw DimensionError("encode_image: empty batch");

  std::vector<double> patches(batch * tokens * patch_dim);
  const double* src = images.data().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t gy = 0; gy < grid; ++gy)
      for (std::size_t gx = 0; gx < grid; ++gx) {
        double* dst = patches.data() + ((b * tokens) + gy * grid + gx) * patch_dim;
        for (std::size_t y = 0; y < ps; ++y)
          for (std::size_t x = 0; x < ps; ++x)
            for (std::size_t c = 0; c < ch; ++c)
              *dst++ = (src[((b * s + gy * ps + y) * s + gx * ps + x) * ch + c] - kPixelMean) / kPixelStd;
      }
  Tensor x = linear(Tensor({batch * tokens, patch_dim}, std::move(patches)), "visual.patch_embed");

  std::vector<std::size_t> pos(batch * tokens);
  std::vector<int> group(batch * tokens);
  for (std::size_t i = 0; i < pos.size(); ++i) {
    pos[i] = i % tokens;
    group[i] = static_cast<int>(i / tokens);
  }
  x = ops::add(x, ops::gather_rows(param("visual.pos_embed").value, pos));
  x = transformer(std::move(x), batch, tokens, "visual");
  Tensor pooled = ops::segment_mean(x, group, batch);
  pooled = ops::layer_norm(pooled, param("visual.ln_post.gamma").value, param("visual.ln_post.beta").value,
                           arch_.ln_eps);
  return ops::matmul(pooled, param("visual.proj").value);
}

Tensor DualEncoder::encode_tokens(const std::vector<std::vector<int>>& ids) const {
  const std::size_t rows = ids.size(), len = arch_.max_len;
  if (rows == 0) throw DimensionError("encode_tokens: no sequences");
  std::vector<std::size_t> tok(rows * len), pos(rows * len);
  std::vector<int> group(rows * len);
  for (std::size_t r = 0; r < rows; ++r) {
    if (ids[r].size() != len) {
      throw DimensionError("encode_tokens: sequence length " + std::to_string(ids[r].size()) + " != " +
                           std::to_string(len));
    }
    for (std::size_t t = 0; t < len; ++t) {
      const int id = ids[r][t];
      if (id < 0 || static_cast<std::size_t>(id) >= vocab_.size()) {
        throw TokenizerError("token id " + std::to_string(id) + " outside the vocabulary");
      }
      tok[r * len + t] = static_cast<std::size_t>(id);
      pos[r * len + t] = t;
      group[r * len + t] = id == Vocabulary::kPad ? -1 : static_cast<int>(r);
    }
  }
  Tensor x = ops::add(ops::gather_rows(param("text.token_embed").value, tok),
                      ops::gather_rows(param("text.pos_embed").value, pos));
  x = transformer(std::move(x), rows, len, "text");
  Tensor pooled = ops::segment_mean(x, group, rows);
  pooled = ops::layer_norm(pooled, param("text.ln_final.gamma").value, param("text.ln_final.beta").value,
                           arch_.ln_eps);
  return ops::matmul(pooled, param("text.proj").value);
}

Tensor DualEncoder::encode_text(const PromptTemplate& prompt) const {
  prompt.validate();
  std::vector<std::vector<int>> ids;
  for (std::size_t c = 0; c < prompt.num_classes(); ++c) {
    if (split_words(prompt.render(c)).size() > arch_.max_len) {
      throw TokenizerError("class '" + prompt.class_names[c] + "' exceeds the maximum sequence length " +
                           std::to_string(arch_.max_len));
    }
    ids.push_back(tokenize(prompt, c, vocab_, arch_.max_len));
  }
  return encode_tokens(ids);
}

ScopeSelector parse_scope(const std::string& name) {
  if (name == "ln_both") return ScopeSelector::ln_both;
  if (name == "ln_vision") return ScopeSelector::ln_vision;
  if (name == "ln_text") return ScopeSelector::ln_text;
  if (name == "all") return ScopeSelector::all;
  if (name == "none") return ScopeSelector::none;
  throw ConfigError("unknown parameter scope '" + name + "'");
}

std::string to_string(ScopeSelector scope) {
  switch (scope) {
    case ScopeSelector::ln_both:
      return "ln_both";
    case ScopeSelector::ln_vision:
      return "ln_vision";
    case ScopeSelector::ln_text:
      return "ln_text";
    case ScopeSelector::all:
      return "all";
    case ScopeSelector::none:
      return "none";
  }
  return "none";
}

ParamScope ParamScope::resolve(ScopeSelector selector, const DualEncoder& model) {
  ParamScope scope{selector, {}};
  for (const auto& p : model.parameters()) {
    bool take = false;
    switch (selector) {
      case ScopeSelector::ln_both:
        take = p.is_layernorm;
        break;
      case ScopeSelector::ln_vision:
        take = p.is_layernorm && p.tower == Tower::vision;
        break;
      case ScopeSelector::ln_text:
        take = p.is_layernorm && p.tower == Tower::text;
        break;
      case ScopeSelector::all:
        take = p.tower != Tower::shared;
        break;
      case ScopeSelector::none:
        break;
    }
    if (take) scope.resolved_names.push_back(p.name);
  }
  return scope;
}

}  // namespace battta::clip
