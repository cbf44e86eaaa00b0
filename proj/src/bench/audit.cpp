#include "battta/audit.hpp"

#include <algorithm>
#include <functional>
#include <optional>
#include <random>
#include <set>

#include "battta/bench.hpp"
#include "battta/corruption.hpp"
#include "battta/datasets.hpp"
#include "battta/gradcheck.hpp"
#include "battta/json_util.hpp"
#include "battta/losses.hpp"
#include "battta/model.hpp"
#include "battta/ops.hpp"
#include "battta/pretrain.hpp"

namespace battta::bench {

using nlohmann::json;

namespace {

Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(numel(shape));
  for (double& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data), true);
}

// Contracts any tensor to a scalar with fixed pseudo-random weights so that
// every output entry influences the loss differently.
Tensor probe(const Tensor& y) {
  std::vector<double> w(y.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = 0.5 + 0.37 * static_cast<double>((i * 7) % 11);
  return ops::sum(ops::mul(y, Tensor(y.shape(), std::move(w))));
}

AuditCheck check(std::string name, std::uint64_t seed, const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                 double tolerance, double step, std::size_t max_entries = 0) {
  const auto r = gradcheck(f, wrt, step, max_entries);
  return {std::move(name), seed, r.max_rel_error, r.entries_checked, r.max_rel_error < tolerance};
}

}  // namespace

json AuditConfig::to_json() const {
  return {{"width", width},         {"seeds", seeds},   {"classes", classes},
          {"images_per_class", images_per_class}, {"tolerance", tolerance}, {"step", step},
          {"encoder_entries", encoder_entries},   {"fault_op", fault_op},   {"fault_factor", fault_factor}};
}

AuditConfig AuditConfig::from_json(const json& j) {
  require_keys(j,
               {"width", "seeds", "classes", "images_per_class", "tolerance", "step", "encoder_entries", "fault_op",
                "fault_factor"},
               "gradcheck config");
  AuditConfig c;
  read_opt(j, "width", c.width);
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "classes", c.classes);
  read_opt(j, "images_per_class", c.images_per_class);
  read_opt(j, "tolerance", c.tolerance);
  read_opt(j, "step", c.step);
  read_opt(j, "encoder_entries", c.encoder_entries);
  read_opt(j, "fault_op", c.fault_op);
  read_opt(j, "fault_factor", c.fault_factor);
  if (c.width == 0 || c.classes < 2 || c.images_per_class == 0 || c.seeds.empty()) {
    throw ConfigError("gradcheck needs width > 0, classes >= 2, images_per_class > 0 and at least one seed");
  }
  if (!(c.tolerance > 0.0) || !(c.step > 0.0)) throw ConfigError("gradcheck tolerance and step must be positive");
  return c;
}

bool AuditReport::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const AuditCheck& c) { return c.passed; });
}

std::vector<std::string> AuditReport::failed_checks() const {
  std::vector<std::string> out;
  for (const auto& c : checks)
    if (!c.passed && std::find(out.begin(), out.end(), c.name) == out.end()) out.push_back(c.name);
  return out;
}

json AuditReport::to_json() const {
  json rows = json::array();
  for (const auto& c : checks) {
    rows.push_back({{"name", c.name},
                    {"seed", c.seed},
                    {"max_rel_error", c.max_rel_error},
                    {"entries", c.entries},
                    {"passed", c.passed}});
  }
  return {{"config", config.to_json()},
          {"passed", passed()},
          {"max_rel_error", max_rel_error},
          {"failed_checks", failed_checks()},
          {"checks", std::move(rows)}};
}

std::vector<AuditCheck> audit_ops(std::uint64_t seed, double tolerance, double step) {
  std::mt19937_64 rng(seed * 7919 + 17);
  Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({4, 2}, rng);
  Tensor bias = random_tensor({4}, rng), s = random_tensor({1}, rng, 0.5, 2.0);
  Tensor pos = random_tensor({3, 4}, rng, 0.05, 1.0);
  Tensor v = random_tensor({5}, rng), z = random_tensor({5}, rng);
  Tensor gamma = random_tensor({4}, rng, 0.5, 1.5), beta = random_tensor({4}, rng);
  Tensor qkv = random_tensor({2 * 3, 12}, rng);
  const std::vector<std::size_t> idx{2, 0, 2, 1};
  const std::vector<int> groups{1, -1, 1};

  std::vector<AuditCheck> out;
  auto add = [&](const char* op, std::function<Tensor()> f, std::vector<Tensor> wrt) {
    out.push_back(check(std::string("op/") + op, seed, f, std::move(wrt), tolerance, step));
  };
  add("matmul", [&] { return probe(ops::matmul(a, c)); }, {a, c});
  add("transpose", [&] { return probe(ops::transpose(a)); }, {a});
  add("add", [&] { return probe(ops::add(a, b)); }, {a, b});
  add("sub", [&] { return probe(ops::sub(a, b)); }, {a, b});
  add("mul", [&] { return probe(ops::mul(a, b)); }, {a, b});
  add("add_bias", [&] { return probe(ops::add_bias(a, bias)); }, {a, bias});
  add("scale", [&] { return probe(ops::scale(a, -1.7)); }, {a});
  add("add_scalar", [&] { return probe(ops::mul(ops::add_scalar(a, 0.3), b)); }, {a});
  add("mul_scalar", [&] { return probe(ops::mul_scalar(a, s)); }, {a, s});
  add("exp", [&] { return probe(ops::exp(a)); }, {a});
  add("gelu", [&] { return probe(ops::gelu(ops::scale(a, 3.0))); }, {a});
  add("sum", [&] { return ops::mul(ops::sum(ops::mul(a, b)), ops::sum(a)); }, {a, b});
  add("sum_rows", [&] { return probe(ops::sum_rows(a)); }, {a});
  add("reshape", [&] { return probe(ops::reshape(a, {2, 6})); }, {a});
  add("gather_rows", [&] { return probe(ops::gather_rows(a, idx)); }, {a});
  add("segment_mean", [&] { return probe(ops::segment_mean(a, groups, 2)); }, {a});
  add("layer_norm", [&] { return probe(ops::layer_norm(a, gamma, beta)); }, {a, gamma, beta});
  add("softmax", [&] { return probe(ops::softmax(v, 0.7)); }, {v});
  add("softmax_rows", [&] { return probe(ops::softmax_rows(a, 0.3)); }, {a});
  add("log_softmax_rows", [&] { return probe(ops::log_softmax_rows(a, 0.3)); }, {a});
  add("entropy_rows", [&] { return probe(ops::entropy_rows(pos)); }, {pos});
  add("cosine_sim", [&] { return ops::cosine_sim(v, z); }, {v, z});
  add("l2_normalize_rows", [&] { return probe(ops::l2_normalize_rows(a)); }, {a});
  add("self_attention", [&] { return probe(ops::self_attention(qkv, 2, 3, 2)); }, {qkv});
  return out;
}

std::vector<AuditCheck> audit_model(const AuditConfig& cfg, std::uint64_t seed) {
  ImageSet set = gen_shapes(cfg.images_per_class, cfg.classes, 16, seed);
  set = corrupt::corrupt(set, corrupt::CorruptionSpec::make(corrupt::Kind::gaussian_noise, 3), seed);
  const auto vocab = clip::Vocabulary::build(clip::pretrain_templates(), set.class_names);
  clip::DualEncoder model(clip::default_arch(vocab, cfg.width), seed);

  // Move LayerNorm affines off their identity initialisation.
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& p : model.parameters()) {
    if (!p.is_layernorm) continue;
    const bool is_gamma = p.name.ends_with("gamma");
    for (double& x : p.value.mutable_data()) x = is_gamma ? 1.0 + 0.2 * n(rng) : 0.1 * n(rng);
  }

  const clip::PromptTemplate prompt{clip::kDefaultTemplate, set.class_names};
  const double tau = model.temperature();
  const Tensor images = set.images;
  const auto ln = clip::ParamScope::resolve(clip::ScopeSelector::ln_both, model);
  model.set_trainable(ln.resolved_names);
  std::vector<Tensor> ln_params;
  for (const auto& name : ln.resolved_names) ln_params.push_back(model.param(name).value);

  // Pseudo-labels are constants of the objective; fix them at the unperturbed point.
  tta::PseudoLabels labels;
  {
    NoGradGuard no_grad;
    labels = tta::pseudo_label(tta::likelihood(model.encode_image(images), model.encode_text(prompt), tau));
  }
  // A collapsed assignment would leave L_sp constant; use the true labels instead.
  if (std::set<int>(labels.labels.begin(), labels.labels.end()).size() < 2) labels.labels = set.labels;
  struct Forward {
    tta::LikelihoodMatrix lm;
    tta::PrototypeSet protos;
    Tensor text;
  };
  auto forward = [&] {
    Tensor text = model.encode_text(prompt);
    Tensor feats = model.encode_image(images);
    auto lm = tta::likelihood(feats, text, tau);
    return Forward{lm, tta::prototypes(feats, labels, cfg.classes), text};
  };

  std::vector<AuditCheck> out;
  auto loss_check = [&](const char* name, std::function<Tensor(const Forward&)> f) {
    out.push_back(check(std::string("loss/") + name, seed, [&] { return f(forward()); }, ln_params, cfg.tolerance,
                        cfg.step));
  };
  loss_check("L_ent", [](const Forward& f) { return tta::loss_ent(f.lm); });
  loss_check("L_pm", [](const Forward& f) { return tta::loss_pm(f.protos, f.text); });
  loss_check("L_sp", [](const Forward& f) { return tta::loss_sp(f.protos); });
  loss_check("objective", [](const Forward& f) { return tta::objective(f.lm, f.protos, f.text); });

  // Encoder paths w.r.t. every parameter of each tower (strided entries).
  for (auto tower : {clip::Tower::vision, clip::Tower::text}) {
    std::vector<std::string> names;
    for (const auto& p : model.parameters())
      if (p.tower == tower) names.push_back(p.name);
    model.set_trainable(names);
    std::vector<Tensor> wrt;
    for (const auto& name : names) wrt.push_back(model.param(name).value);
    const bool vision = tower == clip::Tower::vision;
    out.push_back(check(vision ? "encoder/vision" : "encoder/text", seed,
                        [&] { return probe(vision ? model.encode_image(images) : model.encode_text(prompt)); }, wrt,
                        cfg.tolerance, cfg.step, cfg.encoder_entries));
  }
  model.set_trainable({});
  return out;
}

AuditReport run_gradient_audit(const AuditConfig& cfg) {
  AuditReport report;
  report.config = cfg;
  // One job per seed; the fault hook is per thread, so each job installs it.
  std::vector<std::vector<AuditCheck>> per_seed(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), worker_count(cfg.seeds.size()), [&](std::size_t i) {
    std::optional<GradientFaultGuard> fault;
    if (!cfg.fault_op.empty()) fault.emplace(cfg.fault_op, cfg.fault_factor);
    per_seed[i] = audit_ops(cfg.seeds[i], cfg.tolerance, cfg.step);
    for (auto& c : audit_model(cfg, cfg.seeds[i])) per_seed[i].push_back(std::move(c));
  });
  for (auto& checks : per_seed)
    for (auto& c : checks) report.checks.push_back(std::move(c));
  for (const auto& c : report.checks) report.max_rel_error = std::max(report.max_rel_error, c.max_rel_error);
  return report;
}

}  // namespace battta::bench
