#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "battta/bench.hpp"
#include "battta/errors.hpp"
#include "battta/json_util.hpp"
#include "battta/pretrain.hpp"

namespace battta::bench {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::ostream& out(const CommandContext& ctx) { return ctx.log ? *ctx.log : std::cout; }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  ensure_dir(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f || !f.write(text.data(), static_cast<std::streamsize>(text.size()))) {
    throw IoError("cannot write " + path.string());
  }
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

fs::path checkpoint_path(const CommandContext& ctx) {
  return ctx.checkpoint.empty() ? ctx.out_dir / "checkpoint.btc" : ctx.checkpoint;
}

std::string bytes_fingerprint(const std::vector<std::uint8_t>& bytes) { return clip::fingerprint(bytes); }

struct LoadedModel {
  clip::DualEncoder model;
  std::string fingerprint;
};

LoadedModel load_model(const CommandContext& ctx, const ImageSet& data) {
  const fs::path path = checkpoint_path(ctx);
  if (!fs::exists(path)) throw IoError("checkpoint " + path.string() + " not found (run pretrain first)");
  const clip::Checkpoint ckpt = clip::load(path);
  LoadedModel lm{clip::model_from_checkpoint(ckpt), bytes_fingerprint(clip::encode(ckpt))};
  const auto& arch = lm.model.arch();
  if (arch.image_size != data.height() || arch.image_size != data.width()) {
    throw CheckpointError("checkpoint expects " + std::to_string(arch.image_size) + "x" +
                          std::to_string(arch.image_size) + " images, dataset has " + std::to_string(data.height()) +
                          "x" + std::to_string(data.width()));
  }
  // Surfaces tokenizer problems before any long run starts.
  NoGradGuard no_grad;
  lm.model.encode_text({ctx.config.template_text, data.class_names});
  return lm;
}

std::string slug(const std::string& s) {
  std::string o;
  for (char c : s) o += std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.' ? c : '_';
  return o;
}

struct Cell {
  corrupt::Kind kind;
  int severity;
  std::uint64_t seed;
};

std::vector<Cell> cells(const ExperimentConfig& cfg) {
  std::vector<Cell> v;
  for (auto k : cfg.corruptions)
    for (int s : cfg.severities)
      for (auto seed : cfg.seeds) v.push_back({k, s, seed});
  return v;
}

struct CellOutcome {
  std::optional<adapt::AdaptationReport> report;
  std::string error;
  bool numerical = false;
};

// Runs `method` on every cell with `cfg`, one cloned model per task.
std::vector<CellOutcome> run_cells(const clip::DualEncoder& base, const ImageSet& test, const std::vector<Cell>& cs,
                                   const adapt::Method& method, const adapt::AdaptConfig& cfg,
                                   const adapt::SourceCheck& source) {
  std::vector<CellOutcome> results(cs.size());
  parallel_for(cs.size(), worker_count(cs.size()), [&](std::size_t i) {
    const Cell& c = cs[i];
    adapt::AdaptConfig run = cfg;
    run.seed = c.seed;
    try {
      clip::DualEncoder model = base.clone();
      const Task task = make_task(test, corrupt::CorruptionSpec::make(c.kind, c.severity), run.batch_size, c.seed);
      results[i].report = adapt::run_baseline(model, task, method, run, source);
    } catch (const NumericalError& e) {
      results[i].error = e.what();
      results[i].numerical = true;
    } catch (const DegenerateInputError& e) {
      results[i].error = e.what();
      results[i].numerical = true;
    } catch (const Error& e) {
      results[i].error = e.what();
    }
  });
  return results;
}

BenchmarkTable::Entry entry_for(const std::string& label, const Cell& c, const CellOutcome& r) {
  BenchmarkTable::Entry e;
  e.method = label;
  e.corruption = std::string(corrupt::name(c.kind));
  e.severity = c.severity;
  e.seed = c.seed;
  if (r.report) {
    e.accuracy = r.report->accuracy;
    e.zero_shot = r.report->zero_shot_accuracy;
    if (r.report->source) e.source_drop = r.report->source->drop;
  } else {
    e.failed = true;
    e.error = r.error;
  }
  return e;
}

std::string sweep_csv(const BenchmarkTable& t, const std::string& key) {
  std::string csv = t.to_csv();
  return key + csv.substr(csv.find(','));
}

}  // namespace

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const CheckpointError*>(&e)) {
    return 3;
  }
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const DegenerateInputError*>(&e)) return 2;
  return 1;
}

clip::Checkpoint to_archive(const ImageSet& set, json meta) {
  clip::Checkpoint a;
  std::vector<double> labels(set.labels.begin(), set.labels.end());
  a.tensors.push_back({"images", false, set.images.detach()});
  const std::size_t n = labels.size();
  a.tensors.push_back({"labels", false, Tensor({n}, std::move(labels))});
  meta["class_names"] = set.class_names;
  a.meta = std::move(meta);
  return a;
}

ImageSet from_archive(const clip::Checkpoint& archive) {
  const auto* images = archive.find("images");
  const auto* labels = archive.find("labels");
  if (!images || !labels) throw CheckpointError("archive needs 'images' and 'labels' tensors");
  if (images->value.ndim() != 4 || labels->value.ndim() != 1 || images->value.dim(0) != labels->value.size()) {
    throw CheckpointError("archive tensors have inconsistent shapes");
  }
  ImageSet set;
  set.images = images->value.detach();
  for (double v : labels->value.data()) set.labels.push_back(static_cast<int>(v));
  if (archive.meta.contains("class_names")) set.class_names = archive.meta.at("class_names").get<std::vector<std::string>>();
  set.validate();
  return set;
}

std::string content_hash(const ImageSet& set) {
  clip::Checkpoint a = to_archive(set, json::object());
  a.meta = json::object();
  return bytes_fingerprint(clip::encode(a));
}

int cmd_pretrain(const CommandContext& ctx) {
  const auto& cfg = ctx.config;
  const std::string fp = cfg.fingerprint();
  ensure_dir(ctx.out_dir);
  const Datasets data = load_datasets(cfg.dataset);

  auto templates = clip::pretrain_templates();
  if (std::find(templates.begin(), templates.end(), cfg.template_text) == templates.end()) {
    templates.insert(templates.begin(), cfg.template_text);
  }
  const auto vocab = clip::Vocabulary::build(templates, data.train.class_names);
  auto arch = clip::default_arch(vocab, cfg.pretrain.width);
  arch.image_size = data.train.height();
  clip::DualEncoder model(arch, cfg.pretrain.model_seed);

  clip::PretrainConfig pc;
  pc.epochs = cfg.pretrain.epochs;
  pc.batch_size = cfg.pretrain.batch_size;
  pc.lr = cfg.pretrain.lr;
  pc.weight_decay = cfg.pretrain.weight_decay;
  pc.seed = cfg.pretrain.seed;
  pc.templates = templates;
  clip::PretrainLog log;
  clip::Checkpoint ckpt = clip::pretrain_contrastive(model, data.train, pc, &log, [&](std::size_t epoch, double loss) {
    out(ctx) << "epoch " << epoch + 1 << "/" << pc.epochs << " loss " << fixed(loss, 5) << " tau "
             << fixed(model.temperature(), 5) << std::endl;
  });
  const double acc = clip::zero_shot_accuracy(model, data.test, cfg.template_text);
  ckpt.meta["config_fingerprint"] = fp;
  ckpt.meta["heldout_accuracy"] = acc;

  const fs::path path = checkpoint_path(ctx);
  ensure_dir(path.parent_path().empty() ? fs::path(".") : path.parent_path());
  clip::save(ckpt, path);

  json epochs = json::array();
  for (std::size_t e = 0; e < log.epoch_loss.size(); ++e) {
    epochs.push_back({{"epoch", e + 1}, {"loss", log.epoch_loss[e]}, {"tau", log.epoch_tau[e]}});
  }
  const bool gate = acc >= cfg.pretrain.gate;
  write_json(ctx.out_dir / "pretrain_log.json", {{"config_fingerprint", fp},
                                                  {"checkpoint", path.string()},
                                                  {"checkpoint_fingerprint", bytes_fingerprint(clip::encode(ckpt))},
                                                  {"parameters", model.parameter_count()},
                                                  {"epochs", std::move(epochs)},
                                                  {"heldout_accuracy", acc},
                                                  {"gate", cfg.pretrain.gate},
                                                  {"gate_passed", gate},
                                                  {"config", cfg.to_json()}});
  out(ctx) << "held-out zero-shot accuracy " << fixed(acc, 2) << "% (gate " << fixed(cfg.pretrain.gate, 1) << "%: "
           << (gate ? "pass" : "FAIL") << ")\n"
           << "checkpoint written to " << path.string() << std::endl;
  return 0;
}

int cmd_corrupt(const CommandContext& ctx) {
  const auto& cfg = ctx.config;
  const std::string fp = cfg.fingerprint();
  const Datasets data = load_datasets(cfg.dataset);
  ImageSet source = data.test;
  if (cfg.archive_images > 0 && cfg.archive_images < source.size()) {
    std::vector<std::size_t> idx(cfg.archive_images);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    source = source.subset(idx);
  }
  const std::uint64_t seed = cfg.seeds.front();
  const fs::path dir = ctx.out_dir / "corrupted";
  ensure_dir(dir);

  struct Item {
    corrupt::Kind kind;
    int severity;
  };
  std::vector<Item> items;
  for (auto k : cfg.corruptions)
    for (int s : cfg.severities) items.push_back({k, s});
  std::vector<json> entries(items.size());
  std::vector<std::string> previews(items.size());
  parallel_for(items.size(), worker_count(items.size()), [&](std::size_t i) {
    const auto spec = corrupt::CorruptionSpec::make(items[i].kind, items[i].severity);
    const ImageSet c = corrupt::corrupt(source, spec, seed);
    const auto archive = to_archive(c, {{"corruption", std::string(corrupt::name(spec.kind))},
                                        {"severity", spec.severity},
                                        {"params", spec.params},
                                        {"table_version", corrupt::kTableVersion},
                                        {"seed", seed},
                                        {"config_fingerprint", fp}});
    const auto bytes = clip::encode(archive);
    const std::string file = spec.label() + ".btc";
    write_text(dir / file, std::string(bytes.begin(), bytes.end()));
    entries[i] = {{"file", "corrupted/" + file},
                  {"corruption", std::string(corrupt::name(spec.kind))},
                  {"severity", spec.severity},
                  {"params", spec.params},
                  {"archive_hash", bytes_fingerprint(bytes)},
                  {"content_hash", content_hash(c)}};
    // Preview: every pixel of the first image.
    std::ostringstream p;
    const std::size_t h = c.height(), w = c.width();
    auto px = c.images.data();
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        p << corrupt::name(spec.kind) << ',' << spec.severity << ',' << y << ',' << x;
        for (std::size_t ch = 0; ch < 3; ++ch) p << ',' << fixed(px[(y * w + x) * 3 + ch], 6);
        p << '\n';
      }
    previews[i] = p.str();
  });

  const std::string source_hash = content_hash(source);
  const std::string identity_hash =
      content_hash(corrupt::corrupt(source, corrupt::CorruptionSpec::make(corrupt::Kind::gaussian_noise, 0), seed));
  std::string preview = "corruption,severity,y,x,r,g,b\n";
  for (const auto& p : previews) preview += p;
  write_text(ctx.out_dir / "preview.csv", preview);
  write_json(ctx.out_dir / "corrupt_manifest.json", {{"config_fingerprint", fp},
                                                      {"seed", seed},
                                                      {"images", source.size()},
                                                      {"source_hash", source_hash},
                                                      {"identity_hash", identity_hash},
                                                      {"identity_matches_source", identity_hash == source_hash},
                                                      {"archives", entries}});
  out(ctx) << "wrote " << entries.size() << " archives of " << source.size() << " images to " << dir.string()
           << std::endl;
  return 0;
}

int cmd_zeroshot(const CommandContext& ctx) {
  const auto& cfg = ctx.config;
  const std::string fp = cfg.fingerprint();
  const Datasets data = load_datasets(cfg.dataset);
  const LoadedModel lm = load_model(ctx, data.test);
  const std::uint64_t seed = cfg.seeds.front();

  struct Row {
    std::string corruption;
    int severity;
    double accuracy = 0.0;
  };
  std::vector<Row> rows;
  for (auto k : cfg.corruptions)
    for (int s : cfg.severities) rows.push_back({std::string(corrupt::name(k)), s});
  const double clean = clip::zero_shot_accuracy(lm.model, data.test, cfg.template_text);
  parallel_for(rows.size(), worker_count(rows.size()), [&](std::size_t i) {
    const auto spec = corrupt::CorruptionSpec::make(corrupt::parse_kind(rows[i].corruption), rows[i].severity);
    rows[i].accuracy = clip::zero_shot_accuracy(lm.model, corrupt::corrupt(data.test, spec, seed), cfg.template_text);
  });

  const std::size_t n = data.test.size();
  std::ostringstream csv;
  csv << "corruption,severity,accuracy,n\n" << "clean,0," << fixed(clean) << ',' << n << '\n';
  json jrows = json::array();
  for (const auto& r : rows) {
    csv << r.corruption << ',' << r.severity << ',' << fixed(r.accuracy) << ',' << n << '\n';
    jrows.push_back({{"corruption", r.corruption}, {"severity", r.severity}, {"accuracy", r.accuracy}, {"n", n}});
  }
  write_text(ctx.out_dir / "zeroshot.csv", csv.str());
  write_json(ctx.out_dir / "zeroshot.json", {{"config_fingerprint", fp},
                                             {"checkpoint_fingerprint", lm.fingerprint},
                                             {"template", cfg.template_text},
                                             {"seed", seed},
                                             {"clean", {{"accuracy", clean}, {"n", n}}},
                                             {"rows", std::move(jrows)}});
  out(ctx) << "clean accuracy " << fixed(clean, 2) << "% over " << n << " images; " << rows.size()
           << " corruption rows written to " << (ctx.out_dir / "zeroshot.csv").string() << std::endl;
  return 0;
}

int cmd_adapt(const CommandContext& ctx) {
  const auto& cfg = ctx.config;
  const std::string fp = cfg.fingerprint();
  const Datasets data = load_datasets(cfg.dataset);
  const LoadedModel lm = load_model(ctx, data.test);
  const auto cs = cells(cfg);

  adapt::SourceCheck source;
  if (cfg.eval_source) {
    source.clean = &data.test;
    source.pretrained_accuracy = clip::zero_shot_accuracy(lm.model, data.test, cfg.template_text);
  }

  BenchmarkTable table;
  std::string tasks_csv = adapt::AdaptationReport::csv_header() + "\n";
  json failed = json::array();
  bool numerical = false;
  for (const auto& method : cfg.methods) {
    out(ctx) << "method " << method.name << ": " << cs.size() << " tasks" << std::endl;
    const auto results = run_cells(lm.model, data.test, cs, method, cfg.adapt, source);
    for (std::size_t i = 0; i < cs.size(); ++i) {
      const auto& r = results[i];
      table.add(entry_for(method.name, cs[i], r));
      const std::string task = corrupt::CorruptionSpec::make(cs[i].kind, cs[i].severity).label();
      if (r.report) {
        tasks_csv += r.report->csv_row() + "\n";
        json j = r.report->to_json();
        j["config_fingerprint"] = fp;
        write_json(ctx.out_dir / "reports" / slug(method.name) / (task + "_seed" + std::to_string(cs[i].seed) + ".json"),
                   j);
      } else {
        numerical = numerical || r.numerical;
        failed.push_back({{"method", method.name}, {"task", task}, {"seed", cs[i].seed}, {"error", r.error}});
        out(ctx) << "  FAILED " << task << " seed " << cs[i].seed << ": " << r.error << std::endl;
      }
    }
  }

  json methods = json::array();
  for (const auto& m : table.methods()) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    methods.push_back({{"method", m},
                       {"mean", opt(table.mean(m))},
                       {"zero_shot_mean", opt(table.zero_shot_mean(m))},
                       {"gain", opt(table.gain(m))},
                       {"source_drop", opt(table.source_drop(m))}});
    out(ctx) << "  " << m << " mean " << (table.mean(m) ? fixed(*table.mean(m), 2) : "n/a") << " gain "
             << (table.gain(m) ? fixed(*table.gain(m), 2) : "n/a") << std::endl;
  }

  json sweeps = json::object();
  auto run_sweep = [&](const std::string& key, const std::vector<std::size_t>& values, auto apply) {
    BenchmarkTable t;
    for (auto v : values) {
      adapt::AdaptConfig c = cfg.adapt;
      apply(c, v);
      const std::string label = key + "=" + std::to_string(v);
      out(ctx) << "sweep " << label << std::endl;
      const auto results = run_cells(lm.model, data.test, cs, cfg.sweeps.method, c, {});
      for (std::size_t i = 0; i < cs.size(); ++i) {
        t.add(entry_for(label, cs[i], results[i]));
        if (!results[i].report) {
          numerical = numerical || results[i].numerical;
          failed.push_back({{"sweep", label}, {"seed", cs[i].seed}, {"error", results[i].error}});
        }
      }
    }
    const std::string file = "sweep_" + key + ".csv";
    write_text(ctx.out_dir / file, sweep_csv(t, key));
    json rows = json::array();
    for (const auto& m : t.methods()) rows.push_back({{"setting", m}, {"mean", t.mean(m) ? json(*t.mean(m)) : json(nullptr)}});
    sweeps[key] = {{"file", file}, {"method", cfg.sweeps.method.name}, {"rows", rows}};
  };
  if (!cfg.sweeps.iterations.empty()) {
    run_sweep("iterations", cfg.sweeps.iterations, [](adapt::AdaptConfig& c, std::size_t v) { c.iterations_per_batch = v; });
  }
  if (!cfg.sweeps.batch_sizes.empty()) {
    run_sweep("batch_size", cfg.sweeps.batch_sizes, [](adapt::AdaptConfig& c, std::size_t v) { c.batch_size = v; });
  }

  write_text(ctx.out_dir / "table.csv", table.to_csv());
  write_text(ctx.out_dir / "tasks.csv", tasks_csv);
  write_json(ctx.out_dir / "summary.json", {{"config_fingerprint", fp},
                                            {"checkpoint_fingerprint", lm.fingerprint},
                                            {"methods", std::move(methods)},
                                            {"sweeps", std::move(sweeps)},
                                            {"failed", failed},
                                            {"config", cfg.to_json()}});
  if (!failed.empty()) {
    out(ctx) << failed.size() << " cell(s) failed" << std::endl;
    return numerical ? 2 : 1;
  }
  return 0;
}

int cmd_gradcheck(const CommandContext& ctx) {
  const auto& cfg = ctx.config;
  const auto report = run_gradient_audit(cfg.gradcheck);
  json j = report.to_json();
  j["config_fingerprint"] = cfg.fingerprint();
  write_json(ctx.out_dir / "gradcheck.json", j);
  out(ctx) << report.checks.size() << " gradient checks, max relative error " << report.max_rel_error << std::endl;
  for (const auto& name : report.failed_checks()) out(ctx) << "  FAILED " << name << std::endl;
  out(ctx) << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << std::endl;
  return report.passed() ? 0 : 2;
}

}  // namespace battta::bench
