#include <malloc.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "battta/adapt.hpp"
#include "battta/bench.hpp"
#include "battta/checkpoint.hpp"
#include "battta/datasets.hpp"
#include "battta/losses.hpp"
#include "battta/ops.hpp"

namespace {

using namespace battta;
namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

int failures = 0;
// Command progress goes here instead of stdout.
std::ostringstream command_log;

void report(int id, const std::string& title, bool ok, const std::string& detail) {
  std::printf("[%d] %s: %s (%s)\n", id, title.c_str(), ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!ok) ++failures;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int digits = 3) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("battta_acceptance_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<double> flat(const clip::DualEncoder& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

bool same_bits(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin());
}

Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> d(r * c);
  for (double& v : d) v = u(rng);
  return Tensor({r, c}, std::move(d));
}

// Rows of a CSV keyed by their first field.
std::map<std::string, std::map<std::string, std::string>> read_csv(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::string line;
  std::vector<std::string> header;
  std::map<std::string, std::map<std::string, std::string>> rows;
  auto split = [](const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
  };
  std::getline(in, line);
  header = split(line);
  while (std::getline(in, line)) {
    const auto f = split(line);
    for (std::size_t i = 1; i < f.size() && i < header.size(); ++i) rows[f[0]][header[i]] = f[i];
  }
  return rows;
}

void gradient_audit() {
  bench::AuditConfig cfg;
  const auto t0 = Clock::now();
  const auto r = bench::run_gradient_audit(cfg);
  const double secs = seconds_since(t0);
  std::size_t loss_checks = 0;
  for (const auto& c : r.checks) loss_checks += c.name.starts_with("loss/");
  const bool ok = r.passed() && r.max_rel_error < 1e-5 && secs < 60.0 && loss_checks == 4 * cfg.seeds.size();
  report(1, "gradient audit", ok,
         std::to_string(r.checks.size()) + " checks over " + std::to_string(cfg.seeds.size()) +
             " seeds, max rel error " + num(r.max_rel_error) + ", " + num(secs) + " s");
}

void oracle_equivalence() {
  std::mt19937_64 rng(2024);
  double worst_proto = 0.0, worst_sp = 0.0;
  std::size_t with_absent = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t b = 1 + rng() % 64, c = 2 + rng() % 9, d = 2 + rng() % 8;
    const Tensor f = random_matrix(b, d, rng);
    std::vector<int> labels(b);
    const std::size_t used = 1 + rng() % c;
    for (auto& l : labels) l = static_cast<int>(rng() % used);
    const auto p = tta::prototypes(f, {labels}, c);

    std::map<int, std::vector<double>> sums;
    std::map<int, double> counts;
    for (std::size_t k = 0; k < b; ++k) {
      auto& s = sums[labels[k]];
      s.resize(d, 0.0);
      for (std::size_t j = 0; j < d; ++j) s[j] += f.at(k * d + j);
      counts[labels[k]] += 1.0;
    }
    for (auto& [cls, s] : sums)
      for (double& v : s) v /= counts[cls];
    with_absent += sums.size() < c;
    if (p.present.size() != sums.size()) worst_proto = INFINITY;
    for (const auto& [cls, s] : sums)
      for (std::size_t j = 0; j < d; ++j)
        worst_proto = std::max(worst_proto, std::abs(p.means.at(static_cast<std::size_t>(cls) * d + j) - s[j]));

    double sp = 0.0;
    for (const auto& [l, a] : sums)
      for (const auto& [k, bb] : sums) {
        if (l == k) continue;
        double dot = 0.0, na = 0.0, nb = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          dot += a[j] * bb[j];
          na += a[j] * a[j];
          nb += bb[j] * bb[j];
        }
        sp += 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
      }
    worst_sp = std::max(worst_sp, std::abs(tta::loss_sp(p).item() - sp));
  }
  report(2, "oracle equivalence", worst_proto <= 1e-12 && worst_sp <= 1e-12 && with_absent > 0,
         "100 batches (" + std::to_string(with_absent) + " with absent classes), prototype err " + num(worst_proto) +
             ", L_sp err " + num(worst_sp));
}

void closed_forms() {
  const std::size_t c = 10;
  const double h_uniform = tta::loss_ent({Tensor::full({4, c}, 0.1), Tensor({4, c}), 1.0}).item();
  std::vector<double> onehot(4 * c, 0.0);
  for (std::size_t r = 0; r < 4; ++r) onehot[r * c + (r * 3) % c] = 1.0;
  const double h_onehot = tta::loss_ent({Tensor({4, c}, onehot), Tensor({4, c}), 1.0}).item();

  const Tensor ortho({3, 3}, {2, 0, 0, 0, 0.5, 0, 0, 0, 3});
  const double sp = tta::loss_sp(tta::prototypes(ortho, {{0, 1, 2}}, 3)).item();

  const Tensor unit({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const Tensor text({3, 3}, {4, 0, 0, 0, 0.25, 0, 0, 0, 7});
  const double pm = tta::loss_pm(tta::prototypes(unit, {{0, 1, 2}}, 3), text).item();

  const bool ok = std::abs(h_uniform - std::log(10.0)) <= 1e-9 && h_onehot == 0.0 && std::abs(sp - 6.0) <= 1e-12 &&
                  std::abs(pm - 1.0) <= 1e-12;
  report(3, "closed-form values", ok,
         "H(uniform10) - ln10 = " + num(h_uniform - std::log(10.0)) + ", H(onehot) = " + num(h_onehot) +
             ", L_sp = " + num(sp, 15) + ", L_pm = " + num(pm, 15));
}

adapt::AdaptConfig ln_both_config() {
  adapt::AdaptConfig c;
  c.batch_size = 16;
  return c;
}

void scope_and_reset(clip::DualEncoder& model, const Task& task) {
  const auto before = flat(model);
  bool non_ln_same = true, reset_same = true, moved = false;
  std::size_t runs = 0;
  for (auto opt : {OptimizerKind::adamw, OptimizerKind::adam}) {
    for (std::size_t iters : {1u, 3u}) {
      auto cfg = ln_both_config();
      cfg.optimizer = opt;
      cfg.iterations_per_batch = iters;

      auto m = model.clone();
      cfg.reset_per_task = false;
      adapt::adapt_task(m, task, cfg);
      for (const auto& p : m.parameters()) {
        const bool same = same_bits(p.value.data(), model.param(p.name).value.data());
        if (!p.is_layernorm && !same) non_ln_same = false;
        if (p.is_layernorm && !same) moved = true;
      }

      cfg.reset_per_task = true;
      adapt::adapt_task(model, task, cfg);
      if (!same_bits(flat(model), before)) reset_same = false;
      runs += 2;
    }
  }
  report(4, "scope and reset", non_ln_same && reset_same && moved,
         std::to_string(runs) + " runs; non-LayerNorm bit-identical: " + (non_ln_same ? "yes" : "no") +
             ", reset bit-identical: " + (reset_same ? "yes" : "no") +
             ", LayerNorm moved: " + (moved ? "yes" : "no"));
}

void bimodality(clip::DualEncoder& model, const Task& task) {
  auto m = model.clone();
  auto cfg = ln_both_config();
  cfg.reset_per_task = false;
  const auto r = adapt::adapt_task(m, task, cfg);
  std::size_t vision_changed = 0, text_changed = 0, zero_text_grad = 0;
  for (const auto& p : m.parameters()) {
    if (!p.is_layernorm || same_bits(p.value.data(), model.param(p.name).value.data())) continue;
    (p.tower == clip::Tower::text ? text_changed : vision_changed) += 1;
  }
  double min_text = INFINITY;
  for (const auto& b : r.per_batch) {
    zero_text_grad += !(b.grad_norm_text > 0.0);
    min_text = std::min(min_text, b.grad_norm_text);
  }
  report(5, "bimodality witness", vision_changed > 0 && text_changed > 0 && zero_text_grad == 0,
         std::to_string(vision_changed) + " vision / " + std::to_string(text_changed) +
             " text LayerNorm tensors changed, min text grad norm " + num(min_text) + " over " +
             std::to_string(r.per_batch.size()) + " batches");
}

void directional(const fs::path& root, double pretrain_secs) {
  bench::ExperimentConfig cfg;
  cfg.corruptions = {corrupt::Kind::gaussian_noise, corrupt::Kind::defocus_blur, corrupt::Kind::contrast};
  cfg.severities = {5};
  cfg.seeds = {0, 1, 2};
  cfg.methods = {adapt::Method::zero_shot(), adapt::Method::batclip(), adapt::Method::entropy_only()};
  const auto dir = root / "directional";
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const int code = bench::cmd_adapt({cfg, dir, root / "checkpoint.btc", &command_log});
  const double secs = pretrain_secs + seconds_since(t0);

  const auto log = json::parse(slurp(root / "pretrain_log.json"));
  const double clean = log.at("heldout_accuracy").get<double>();
  const auto table = read_csv(dir / "table.csv");
  double min_drop = INFINITY;
  for (const char* col : {"gaussian_noise-5", "defocus_blur-5", "contrast-5"}) {
    min_drop = std::min(min_drop, clean - std::stod(table.at("zero_shot").at(col)));
  }
  const double zs = std::stod(table.at("zero_shot").at("mean"));
  const double bat = std::stod(table.at("batclip").at("mean"));
  const double ent = std::stod(table.at("entropy_only").at("mean"));
  const std::size_t test_images = cfg.dataset.classes * cfg.dataset.test_per_class;
  const bool ok = code == 0 && cfg.dataset.classes >= 5 && test_images >= 1000 && min_drop >= 15.0 &&
                  bat - zs >= 2.0 && bat >= ent - 0.5 && secs < 600.0;
  report(6, "directional reproduction", ok,
         "clean " + num(clean, 4) + ", min severity-5 drop " + num(min_drop, 4) + ", zero-shot " + num(zs, 4) +
             ", batclip " + num(bat, 4) + " (gain " + num(bat - zs, 3) + "), entropy-only " + num(ent, 4) + ", " +
             num(secs, 4) + " s incl. pretraining");
}

void label_hygiene(clip::DualEncoder& model, const Task& task) {
  auto cfg = ln_both_config();
  cfg.reset_per_task = false;
  auto ref = model.clone();
  adapt::adapt_task(ref, task, cfg);
  const auto expected = flat(ref);

  std::mt19937_64 rng(99);
  std::size_t identical = 0;
  const int variants = 3;
  for (int v = 0; v < variants; ++v) {
    Task noisy = task;
    for (auto& b : noisy.batches)
      for (auto& l : b.labels) l = v == 0 ? 0 : v == 1 ? (l + 1) % 5 : static_cast<int>(rng() % 5);
    auto m = model.clone();
    adapt::adapt_task(m, noisy, cfg);
    identical += same_bits(flat(m), expected);
  }
  report(7, "label hygiene", identical == variants,
         std::to_string(identical) + "/" + std::to_string(variants) +
             " perturbed-label runs bit-identical after adaptation");
}

bench::ExperimentConfig small_bench() {
  bench::ExperimentConfig cfg;
  cfg.dataset.test_per_class = 60;
  cfg.corruptions = {corrupt::Kind::gaussian_noise, corrupt::Kind::fog};
  cfg.severities = {3, 5};
  cfg.seeds = {0, 1};
  cfg.eval_source = true;
  return cfg;
}

void determinism(const fs::path& root) {
  auto cfg = small_bench();
  cfg.sweeps.iterations = {1, 2};
  const auto a = root / "det_a", b = root / "det_b";
  fs::create_directories(a);
  fs::create_directories(b);
  const int ca = bench::cmd_adapt({cfg, a, root / "checkpoint.btc", &command_log});
  const int cb = bench::cmd_adapt({cfg, b, root / "checkpoint.btc", &command_log});
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), a);
    ++files;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) ++differ;
  }
  std::size_t files_b = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) files_b += e.is_regular_file();
  report(8, "determinism", ca == 0 && cb == 0 && differ == 0 && files == files_b && files > 0,
         std::to_string(files) + " CSV/JSON files compared, " + std::to_string(differ) + " differ");
}

void sweeps(const fs::path& root) {
  auto cfg = small_bench();
  cfg.corruptions = {corrupt::Kind::gaussian_noise};
  cfg.severities = {5};
  cfg.seeds = {0};
  cfg.eval_source = false;
  cfg.methods = {adapt::Method::zero_shot()};
  cfg.sweeps.iterations = {1, 2, 4, 8};
  cfg.sweeps.batch_sizes = {1, 8, 32, 200};
  const auto dir = root / "sweeps";
  fs::create_directories(dir);
  const auto t0 = Clock::now();
  const int code = bench::cmd_adapt({cfg, dir, root / "checkpoint.btc", &command_log});
  const auto it = read_csv(dir / "sweep_iterations.csv");
  const auto bs = read_csv(dir / "sweep_batch_size.csv");
  std::size_t rows = 0;
  std::string values;
  for (const char* k : {"iterations=1", "iterations=2", "iterations=4", "iterations=8"}) {
    if (it.contains(k) && !it.at(k).at("mean").empty()) {
      ++rows;
      values += (values.empty() ? "" : " ") + it.at(k).at("mean");
    }
  }
  for (const char* k : {"batch_size=1", "batch_size=8", "batch_size=32", "batch_size=200"}) {
    if (bs.contains(k) && !bs.at(k).at("mean").empty()) {
      ++rows;
      values += " " + bs.at(k).at("mean");
    }
  }
  const auto summary = json::parse(slurp(dir / "summary.json"));
  report(9, "iteration and batch-size sweeps", code == 0 && rows == 8 && summary.at("failed").empty(),
         std::to_string(rows) + "/8 settings completed, accuracies [" + values + "], " +
             num(seconds_since(t0), 3) + " s");
}

}  // namespace

int main() {
  mallopt(M_MMAP_THRESHOLD, 32 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  try {
    gradient_audit();
    oracle_equivalence();
    closed_forms();

    const auto root = scratch("run");
    bench::ExperimentConfig base;
    std::cerr << "pretraining the shared checkpoint" << std::endl;
    const auto t0 = Clock::now();
    if (bench::cmd_pretrain({base, root, {}, &command_log}) != 0) {
      std::cerr << "pretraining failed" << std::endl;
      return 1;
    }
    const double pretrain_secs = seconds_since(t0);
    const auto data = bench::load_datasets(base.dataset);
    auto model = clip::model_from_checkpoint(clip::load(root / "checkpoint.btc"));

    // Shapes + Gaussian task on a 400-image slice of the test split.
    std::vector<std::size_t> idx(400);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i * (data.test.size() / idx.size());
    const Task task = make_task(data.test.subset(idx),
                                corrupt::CorruptionSpec::make(corrupt::Kind::gaussian_noise, 5), 16, 0);

    scope_and_reset(model, task);
    bimodality(model, task);
    directional(root, pretrain_secs);
    label_hygiene(model, task);
    determinism(root);
    sweeps(root);
  } catch (const std::exception& e) {
    std::printf("acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%s: %d of 9 criteria failed\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
