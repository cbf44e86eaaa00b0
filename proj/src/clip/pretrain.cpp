#include "battta/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <set>

#include "battta/errors.hpp"
#include "battta/ops.hpp"
#include "battta/optimizer.hpp"
#include "battta/rng.hpp"

namespace battta::clip {

std::vector<std::string> pretrain_templates() {
  return {kDefaultTemplate, "a picture of a <CLS>.", "an image of the <CLS>.", "a drawing of a <CLS>."};
}

namespace {

// Upper bound on the logit scale (temperature >= 0.01).
const double kMaxLogitScale = std::log(100.0);

Tensor image_batch(const ImageSet& set, const std::vector<std::size_t>& index, std::size_t begin, std::size_t end) {
  const std::size_t per = set.pixels_per_image();
  std::vector<double> data;
  data.reserve((end - begin) * per);
  for (std::size_t i = begin; i < end; ++i) {
    auto src = set.images.data().subspan(index[i] * per, per);
    data.insert(data.end(), src.begin(), src.end());
  }
  Shape shape = set.images.shape();
  shape[0] = end - begin;
  return Tensor(std::move(shape), std::move(data));
}

}  // namespace

Checkpoint pretrain_contrastive(DualEncoder& model, const ImageSet& clean, const PretrainConfig& cfg,
                                PretrainLog* log, const std::function<void(std::size_t, double)>& on_epoch) {
  clean.validate();
  const std::set<int> present(clean.labels.begin(), clean.labels.end());
  if (present.size() < 2 || clean.class_names.size() < 2) {
    throw ContractError("pretraining needs at least 2 classes, found " + std::to_string(present.size()));
  }
  if (cfg.batch_size == 0 || cfg.templates.empty()) throw ConfigError("pretraining needs a batch size and templates");

  std::vector<std::string> names;
  for (const auto& p : model.parameters()) names.push_back(p.name);
  model.set_trainable(names);
  std::vector<NamedParam> params;
  for (auto& p : model.parameters()) params.push_back({p.name, p.value});

  OptimizerConfig opt;
  opt.kind = OptimizerKind::adamw;
  opt.lr = cfg.lr;
  opt.weight_decay = cfg.weight_decay;
  OptimizerState state;

  const std::size_t n = clean.size(), classes = clean.class_names.size();
  std::vector<std::size_t> order(n);
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(steps_per_epoch * cfg.epochs);
  const double warmup = static_cast<double>(steps_per_epoch);
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(derive_seed(cfg.seed, {epoch}));
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t batches = 0;

    for (std::size_t begin = 0; begin < n; begin += cfg.batch_size, ++step) {
      const std::size_t end = std::min(n, begin + cfg.batch_size), b = end - begin;
      PromptTemplate prompt{cfg.templates[step % cfg.templates.size()], clean.class_names};
      Tensor text = model.encode_text(prompt);
      Tensor img = model.encode_image(image_batch(clean, order, begin, end));
      Tensor logits = ops::mul_scalar(ops::cosine_matrix(img, text), ops::exp(model.param("logit_scale").value));

      std::vector<double> i2t(b * classes, 0.0), t2i(classes * b, 0.0), count(classes, 0.0);
      for (std::size_t k = 0; k < b; ++k) count[clean.labels[order[begin + k]]] += 1.0;
      std::size_t present_classes = 0;
      for (double c : count) present_classes += c > 0.0 ? 1 : 0;
      for (std::size_t k = 0; k < b; ++k) {
        const auto y = static_cast<std::size_t>(clean.labels[order[begin + k]]);
        i2t[k * classes + y] = 1.0 / static_cast<double>(b);
        t2i[y * b + k] = 1.0 / (count[y] * static_cast<double>(present_classes));
      }
      Tensor l_i2t = ops::sum(ops::mul(ops::log_softmax_rows(logits, 1.0), Tensor({b, classes}, std::move(i2t))));
      Tensor l_t2i = ops::sum(
          ops::mul(ops::log_softmax_rows(ops::transpose(logits), 1.0), Tensor({classes, b}, std::move(t2i))));
      Tensor loss = ops::scale(ops::add(l_i2t, l_t2i), -0.5);
      if (!std::isfinite(loss.item())) {
        throw NumericalError("pretraining diverged (non-finite loss) in epoch " + std::to_string(epoch));
      }
      for (auto& p : params) p.value.zero_grad();
      loss.backward();
      // Linear warmup over the first epoch, cosine decay afterwards.
      const double t = static_cast<double>(step);
      opt.lr = cfg.lr * std::min(1.0, (t + 1.0) / warmup) * 0.5 * (1.0 + std::cos(std::numbers::pi * t / total_steps));
      step_adamw(params, state, opt);
      auto& s = model.param("logit_scale").value.mutable_data()[0];
      s = std::clamp(s, 0.0, kMaxLogitScale);
      epoch_loss += loss.item();
      ++batches;
    }
    epoch_loss /= static_cast<double>(batches);
    if (log) {
      log->epoch_loss.push_back(epoch_loss);
      log->epoch_tau.push_back(model.temperature());
    }
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  model.set_trainable({});
  return snapshot(model);
}

std::vector<int> predict(const DualEncoder& model, const Tensor& images, const Tensor& text_features,
                         std::size_t batch_size) {
  NoGradGuard no_grad;
  const std::size_t n = images.dim(0), per = images.size() / std::max<std::size_t>(n, 1);
  std::vector<int> out;
  out.reserve(n);
  for (std::size_t begin = 0; begin < n; begin += batch_size) {
    const std::size_t end = std::min(n, begin + batch_size);
    Shape shape = images.shape();
    shape[0] = end - begin;
    auto src = images.data().subspan(begin * per, (end - begin) * per);
    Tensor sims = ops::cosine_matrix(model.encode_image(Tensor(shape, {src.begin(), src.end()})), text_features);
    const std::size_t c = sims.dim(1);
    for (std::size_t r = 0; r < end - begin; ++r) {
      auto row = sims.data().subspan(r * c, c);
      out.push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }
  return out;
}

double zero_shot_accuracy(const DualEncoder& model, const ImageSet& set, const std::string& template_text) {
  NoGradGuard no_grad;
  Tensor text = model.encode_text({template_text, set.class_names});
  auto pred = predict(model, set.images, text);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == set.labels[i] ? 1 : 0;
  return set.size() == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(set.size());
}

}  // namespace battta::clip
