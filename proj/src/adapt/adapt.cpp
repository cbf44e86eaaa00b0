#include "battta/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "battta/checkpoint.hpp"
#include "battta/errors.hpp"
#include "battta/json_util.hpp"
#include "battta/ops.hpp"

namespace battta::adapt {

using nlohmann::json;

std::string to_string(Accounting a) { return a == Accounting::post_hoc ? "post_hoc" : "predict_then_adapt"; }

std::string to_string(OptimizerKind k) { return k == OptimizerKind::adam ? "adam" : "adamw"; }

namespace {

Accounting parse_accounting(const std::string& s) {
  if (s == "predict_then_adapt") return Accounting::predict_then_adapt;
  if (s == "post_hoc") return Accounting::post_hoc;
  throw ConfigError("unknown accounting mode '" + s + "'");
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw ConfigError("unknown optimizer '" + s + "'");
}

std::string pm_divisor_name(tta::PmDivisor d) {
  return d == tta::PmDivisor::present_classes ? "present_classes" : "all_classes";
}

tta::PmDivisor parse_pm_divisor(const std::string& s) {
  if (s == "all_classes") return tta::PmDivisor::all_classes;
  if (s == "present_classes") return tta::PmDivisor::present_classes;
  throw ConfigError("unknown pm_divisor '" + s + "'");
}

std::size_t count_correct(const std::vector<int>& pred, const std::vector<int>& truth) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) n += pred[i] == truth[i] ? 1 : 0;
  return n;
}

double percent(std::size_t correct, std::size_t n) {
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

double mean_batch_accuracy(const std::vector<BatchRecord>& rows) {
  if (rows.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : rows) s += r.accuracy;
  return s / static_cast<double>(rows.size());
}

struct ScopedParam {
  NamedParam param;
  clip::Tower tower;
};

}  // namespace

void AdaptConfig::validate() const {
  optimizer_config().validate();
  if (iterations_per_batch < 1) throw ConfigError("iterations_per_batch must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  weights.validate();
}

OptimizerConfig AdaptConfig::optimizer_config() const {
  OptimizerConfig o;
  o.kind = optimizer;
  o.lr = lr;
  o.beta1 = beta1;
  o.beta2 = beta2;
  o.eps = eps;
  o.weight_decay = optimizer == OptimizerKind::adam ? 0.0 : weight_decay;
  return o;
}

json AdaptConfig::to_json() const {
  return {{"scope", clip::to_string(scope)},
          {"optimizer", to_string(optimizer)},
          {"lr", lr},
          {"betas", {beta1, beta2}},
          {"eps", eps},
          {"weight_decay", weight_decay},
          {"iterations_per_batch", iterations_per_batch},
          {"lambda_pm", weights.lambda_pm},
          {"lambda_sp", weights.lambda_sp},
          {"pm_divisor", pm_divisor_name(weights.pm_divisor)},
          {"batch_size", batch_size},
          {"seed", seed},
          {"reset_per_task", reset_per_task},
          {"accounting", to_string(accounting)},
          {"template", template_text}};
}

AdaptConfig AdaptConfig::from_json(const json& j) {
  require_keys(j,
               {"scope", "optimizer", "lr", "betas", "eps", "weight_decay", "iterations_per_batch", "lambda_pm",
                "lambda_sp", "pm_divisor", "batch_size", "seed", "reset_per_task", "accounting", "template"},
               "adapt config");
  AdaptConfig c;
  std::string s;
  if (j.contains("scope")) {
    read_opt(j, "scope", s);
    c.scope = clip::parse_scope(s);
  }
  if (j.contains("optimizer")) {
    read_opt(j, "optimizer", s);
    c.optimizer = parse_optimizer(s);
  }
  read_opt(j, "lr", c.lr);
  if (j.contains("betas")) {
    std::vector<double> b;
    read_opt(j, "betas", b);
    if (b.size() != 2) throw ConfigError("betas must hold two values");
    c.beta1 = b[0];
    c.beta2 = b[1];
  }
  read_opt(j, "eps", c.eps);
  read_opt(j, "weight_decay", c.weight_decay);
  read_opt(j, "iterations_per_batch", c.iterations_per_batch);
  read_opt(j, "lambda_pm", c.weights.lambda_pm);
  read_opt(j, "lambda_sp", c.weights.lambda_sp);
  if (j.contains("pm_divisor")) {
    read_opt(j, "pm_divisor", s);
    c.weights.pm_divisor = parse_pm_divisor(s);
  }
  read_opt(j, "batch_size", c.batch_size);
  read_opt(j, "seed", c.seed);
  read_opt(j, "reset_per_task", c.reset_per_task);
  if (j.contains("accounting")) {
    read_opt(j, "accounting", s);
    c.accounting = parse_accounting(s);
  }
  read_opt(j, "template", c.template_text);
  c.validate();
  return c;
}

std::string AdaptConfig::fingerprint() const {
  const std::string text = to_json().dump();
  return clip::fingerprint({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

json AdaptationReport::to_json() const {
  json batches = json::array();
  for (const auto& b : per_batch) {
    batches.push_back({{"index", b.index},
                       {"size", b.size},
                       {"correct", b.correct},
                       {"accuracy", b.accuracy},
                       {"loss", b.loss},
                       {"l_ent", b.ent},
                       {"l_pm", b.pm},
                       {"l_sp", b.sp},
                       {"present_classes", b.present_classes},
                       {"grad_norm_vision", b.grad_norm_vision},
                       {"grad_norm_text", b.grad_norm_text}});
  }
  json summary = {{"method", method},
                  {"seed", seed},
                  {"samples", samples},
                  {"batches", per_batch.size()},
                  {"accuracy", accuracy},
                  {"zero_shot_accuracy", zero_shot_accuracy},
                  {"gain", gain()},
                  {"config_fingerprint", config_fingerprint}};
  if (source) {
    summary["source_after"] = {
        {"adapted", source->adapted}, {"pretrained", source->pretrained}, {"drop", source->drop}};
  }
  return {{"task", task_id},
          {"corruption", corruption},
          {"severity", severity},
          {"per_batch", std::move(batches)},
          {"summary", std::move(summary)}};
}

std::string AdaptationReport::csv_header() {
  return "task,method,corruption,severity,seed,samples,batches,accuracy,zero_shot_accuracy,gain,"
         "source_adapted,source_pretrained,source_drop,config_fingerprint";
}

std::string AdaptationReport::csv_row() const {
  std::ostringstream o;
  o << task_id << ',' << method << ',' << corruption << ',' << severity << ',' << seed << ',' << samples << ','
    << per_batch.size() << ',' << fixed(accuracy) << ',' << fixed(zero_shot_accuracy) << ',' << fixed(gain()) << ',';
  if (source) {
    o << fixed(source->adapted) << ',' << fixed(source->pretrained) << ',' << fixed(source->drop);
  } else {
    o << ",,";
  }
  o << ',' << config_fingerprint;
  return o.str();
}

SourceEval eval_source_after(const clip::DualEncoder& adapted, const ImageSet& clean, double pretrained_accuracy,
                             const std::string& template_text) {
  SourceEval e;
  e.adapted = clip::zero_shot_accuracy(adapted, clean, template_text);
  e.pretrained = pretrained_accuracy;
  e.drop = e.pretrained - e.adapted;
  return e;
}

AdaptationReport adapt_task(clip::DualEncoder& model, const Task& task, const AdaptConfig& cfg,
                            const SourceCheck& source) {
  cfg.validate();
  if (task.batches.empty()) throw ConfigError("task '" + task.spec.label() + "' has no batches");
  const auto scope = clip::ParamScope::resolve(cfg.scope, model);
  const bool updates = cfg.scope != clip::ScopeSelector::none;
  if (updates && scope.resolved_names.empty()) {
    throw ConfigError("parameter scope '" + clip::to_string(cfg.scope) + "' resolves to no parameters");
  }

  AdaptationReport report;
  report.task_id = task.spec.label();
  report.corruption = std::string(corrupt::name(task.spec.kind));
  report.severity = task.spec.severity;
  report.seed = cfg.seed;
  report.samples = task.sample_count();
  report.config_fingerprint = cfg.fingerprint();

  const clip::PromptTemplate prompt{cfg.template_text, task.class_names};
  prompt.validate();
  const std::size_t classes = task.class_names.size();
  const double tau = model.temperature();

  // Zero-shot reference on the pre-task parameters.
  {
    NoGradGuard no_grad;
    const Tensor text = model.encode_text(prompt);
    double acc = 0.0;
    for (const auto& b : task.batches) acc += percent(count_correct(clip::predict(model, b.images, text), b.labels), b.labels.size());
    report.zero_shot_accuracy = acc / static_cast<double>(task.batches.size());
  }

  const clip::Checkpoint before = clip::snapshot(model);
  model.set_trainable(updates ? scope.resolved_names : std::vector<std::string>{});
  std::vector<ScopedParam> scoped;
  for (auto& p : model.parameters())
    if (p.value.requires_grad()) scoped.push_back({{p.name, p.value}, p.tower});
  std::vector<NamedParam> named;
  for (auto& s : scoped) named.push_back(s.param);
  OptimizerState state;
  const OptimizerConfig opt = cfg.optimizer_config();

  try {
    for (std::size_t bi = 0; bi < task.batches.size(); ++bi) {
      const Batch& batch = task.batches[bi];
      BatchRecord rec;
      rec.index = bi;
      rec.size = batch.labels.size();
      const std::size_t iterations = updates ? cfg.iterations_per_batch : 1;
      for (std::size_t it = 0; it < iterations; ++it) {
        const Tensor text = model.encode_text(prompt);
        const Tensor feats = model.encode_image(batch.images);
        const auto lm = tta::likelihood(feats, text, tau);
        const auto labels = tta::pseudo_label(lm);
        const auto protos = tta::prototypes(feats, labels, classes);
        const auto terms = tta::objective_terms(lm, protos, text, cfg.weights);
        const double loss = terms.total.item();
        if (!std::isfinite(loss)) {
          throw NumericalError("non-finite adaptation loss at batch " + std::to_string(bi) + " of task " +
                               report.task_id);
        }
        if (it == 0) {
          // Pseudo-labels are the model's predictions on the current parameters.
          rec.correct = count_correct(labels.labels, batch.labels);
          rec.accuracy = percent(rec.correct, rec.size);
          rec.loss = loss;
          rec.ent = terms.ent.item();
          rec.pm = terms.pm.item();
          rec.sp = terms.sp.item();
          rec.present_classes = protos.present.size();
        }
        if (!updates) break;
        for (auto& s : scoped) s.param.value.zero_grad();
        terms.total.backward();
        if (it == 0) {
          double gv = 0.0, gt = 0.0;
          for (const auto& s : scoped) {
            double sq = 0.0;
            for (double g : s.param.value.grad()) sq += g * g;
            (s.tower == clip::Tower::text ? gt : gv) += sq;
          }
          rec.grad_norm_vision = std::sqrt(gv);
          rec.grad_norm_text = std::sqrt(gt);
        }
        step_adamw(named, state, opt);
      }
      report.per_batch.push_back(rec);
    }

    if (cfg.accounting == Accounting::post_hoc) {
      NoGradGuard no_grad;
      const Tensor text = model.encode_text(prompt);
      for (auto& rec : report.per_batch) {
        const Batch& b = task.batches[rec.index];
        rec.correct = count_correct(clip::predict(model, b.images, text), b.labels);
        rec.accuracy = percent(rec.correct, rec.size);
      }
    }
    report.accuracy = mean_batch_accuracy(report.per_batch);
    if (source.clean) report.source = eval_source_after(model, *source.clean, source.pretrained_accuracy, cfg.template_text);
  } catch (...) {
    model.set_trainable({});
    if (cfg.reset_per_task) clip::restore(model, before);
    throw;
  }

  model.set_trainable({});
  if (cfg.reset_per_task) clip::restore(model, before);
  return report;
}

Method Method::batclip() { return {"batclip", MethodKind::batclip, 1.0, 1.0, clip::ScopeSelector::ln_both}; }

Method Method::zero_shot() { return {"zero_shot", MethodKind::zero_shot, 0.0, 0.0, clip::ScopeSelector::none}; }

Method Method::entropy_only() {
  return {"entropy_only", MethodKind::entropy_only, 0.0, 0.0, clip::ScopeSelector::ln_vision};
}

Method Method::ablation(double lambda_pm, double lambda_sp, clip::ScopeSelector scope, std::string name) {
  if (name.empty()) {
    name = "ablation(pm=" + fixed(lambda_pm, 2) + ",sp=" + fixed(lambda_sp, 2) + "," + clip::to_string(scope) + ")";
  }
  return {std::move(name), MethodKind::ablation, lambda_pm, lambda_sp, scope};
}

AdaptConfig Method::apply(AdaptConfig base) const {
  base.weights.lambda_pm = lambda_pm;
  base.weights.lambda_sp = lambda_sp;
  base.scope = scope;
  return base;
}

json Method::to_json() const {
  switch (kind) {
    case MethodKind::batclip:
      return "batclip";
    case MethodKind::zero_shot:
      return "zero_shot";
    case MethodKind::entropy_only:
      return "entropy_only";
    case MethodKind::ablation:
      break;
  }
  return {{"name", name}, {"lambda_pm", lambda_pm}, {"lambda_sp", lambda_sp}, {"scope", clip::to_string(scope)}};
}

Method Method::from_json(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "batclip") return batclip();
    if (s == "zero_shot") return zero_shot();
    if (s == "entropy_only") return entropy_only();
    throw ConfigError("unknown method '" + s + "'");
  }
  require_keys(j, {"name", "lambda_pm", "lambda_sp", "scope"}, "ablation method");
  double pm = 1.0, sp = 1.0;
  std::string scope = "ln_both", name;
  read_opt(j, "lambda_pm", pm);
  read_opt(j, "lambda_sp", sp);
  read_opt(j, "scope", scope);
  read_opt(j, "name", name);
  Method m = ablation(pm, sp, clip::parse_scope(scope), name);
  tta::ObjectiveWeights{pm, sp}.validate();
  return m;
}

AdaptationReport run_baseline(clip::DualEncoder& model, const Task& task, const Method& which,
                              const AdaptConfig& base, const SourceCheck& source) {
  AdaptationReport r = adapt_task(model, task, which.apply(base), source);
  r.method = which.name;
  return r;
}

}  // namespace battta::adapt
