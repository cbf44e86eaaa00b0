#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "battta/image_set.hpp"
#include "battta/losses.hpp"
#include "battta/model.hpp"
#include "battta/optimizer.hpp"
#include "battta/pretrain.hpp"
#include "battta/task.hpp"
#include "json.hpp"

namespace battta::adapt {

// When per-batch accuracy is measured.
enum class Accounting {
  predict_then_adapt,  // each batch scored on the parameters before its own update
  post_hoc,            // every batch re-scored with the final adapted parameters
};

struct AdaptConfig {
  clip::ScopeSelector scope = clip::ScopeSelector::ln_both;
  OptimizerKind optimizer = OptimizerKind::adamw;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // forced to 0 for plain Adam
  std::size_t iterations_per_batch = 1;
  tta::ObjectiveWeights weights;
  std::size_t batch_size = 200;
  std::uint64_t seed = 0;
  bool reset_per_task = true;
  Accounting accounting = Accounting::predict_then_adapt;
  std::string template_text = clip::kDefaultTemplate;

  // Throws ConfigError on out-of-range values.
  void validate() const;
  OptimizerConfig optimizer_config() const;

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys raise ConfigError.
  static AdaptConfig from_json(const nlohmann::json& j);
  // FNV-1a of the canonical JSON form.
  std::string fingerprint() const;
};

std::string to_string(Accounting a);
std::string to_string(OptimizerKind k);

struct BatchRecord {
  std::size_t index = 0;
  std::size_t size = 0;
  std::size_t correct = 0;
  double accuracy = 0.0;  // percent
  double loss = 0.0;      // objective at the first iteration
  double ent = 0.0;
  double pm = 0.0;
  double sp = 0.0;
  std::size_t present_classes = 0;
  double grad_norm_vision = 0.0;  // objective gradient over scoped vision params
  double grad_norm_text = 0.0;
};

struct SourceEval {
  double adapted = 0.0;
  double pretrained = 0.0;
  double drop = 0.0;  // pretrained - adapted; negative when adaptation helped
};

struct AdaptationReport {
  std::string task_id;
  std::string method = "batclip";
  std::string corruption;
  int severity = 0;
  std::uint64_t seed = 0;
  std::size_t samples = 0;
  std::vector<BatchRecord> per_batch;
  double accuracy = 0.0;             // mean over batches of the batch accuracy
  double zero_shot_accuracy = 0.0;   // same batches, pre-task parameters
  std::optional<SourceEval> source;  // clean-set accuracy after adaptation
  std::string config_fingerprint;

  double gain() const { return accuracy - zero_shot_accuracy; }
  nlohmann::json to_json() const;
  static std::string csv_header();
  std::string csv_row() const;
};

// Optional clean set to score after adaptation, before any reset.
struct SourceCheck {
  const ImageSet* clean = nullptr;
  double pretrained_accuracy = 0.0;
};

// Online adaptation of `model` over the batches of `task`. Ground-truth
// labels are only counted for accuracy. With reset_per_task the parameters
// are restored bit-exactly afterwards and the optimizer state is dropped.
//
// Scope `none` performs no updates and reproduces zero-shot evaluation. A
// different scope that resolves to no parameters raises ConfigError; a
// non-finite objective raises NumericalError naming the batch.
AdaptationReport adapt_task(clip::DualEncoder& model, const Task& task, const AdaptConfig& cfg,
                            const SourceCheck& source = {});

// Clean-set accuracy of the adapted parameters next to the pretrained value.
SourceEval eval_source_after(const clip::DualEncoder& adapted, const ImageSet& clean, double pretrained_accuracy,
                             const std::string& template_text = clip::kDefaultTemplate);

enum class MethodKind { batclip, zero_shot, entropy_only, ablation };

// A named objective/scope combination.
struct Method {
  std::string name;
  MethodKind kind = MethodKind::batclip;
  double lambda_pm = 1.0;
  double lambda_sp = 1.0;
  clip::ScopeSelector scope = clip::ScopeSelector::ln_both;

  static Method batclip();
  static Method zero_shot();
  // Entropy only on the vision LayerNorms, i.e. ablation(0, 0, ln_vision).
  static Method entropy_only();
  static Method ablation(double lambda_pm, double lambda_sp, clip::ScopeSelector scope, std::string name = {});

  // `base` with this method's weights and scope.
  AdaptConfig apply(AdaptConfig base) const;

  nlohmann::json to_json() const;
  // Accepts "batclip", "zero_shot", "entropy_only" or an ablation object
  // {"name", "lambda_pm", "lambda_sp", "scope"}.
  static Method from_json(const nlohmann::json& j);
};

AdaptationReport run_baseline(clip::DualEncoder& model, const Task& task, const Method& which,
                              const AdaptConfig& base = {}, const SourceCheck& source = {});

}  // namespace battta::adapt
