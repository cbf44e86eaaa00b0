#include "battta/experiment.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "battta/checkpoint.hpp"
#include "battta/datasets.hpp"
#include "battta/errors.hpp"
#include "battta/json_util.hpp"

namespace battta::bench {

using nlohmann::json;

json DatasetConfig::to_json() const {
  return {{"kind", kind},
          {"path", path},
          {"classes", classes},
          {"image_size", image_size},
          {"train_per_class", train_per_class},
          {"test_per_class", test_per_class},
          {"train_seed", train_seed},
          {"test_seed", test_seed},
          {"cifar_train", cifar_train}};
}

DatasetConfig DatasetConfig::from_json(const json& j) {
  require_keys(j,
               {"kind", "path", "classes", "image_size", "train_per_class", "test_per_class", "train_seed",
                "test_seed", "cifar_train"},
               "dataset");
  DatasetConfig d;
  read_opt(j, "kind", d.kind);
  read_opt(j, "path", d.path);
  read_opt(j, "classes", d.classes);
  read_opt(j, "image_size", d.image_size);
  read_opt(j, "train_per_class", d.train_per_class);
  read_opt(j, "test_per_class", d.test_per_class);
  read_opt(j, "train_seed", d.train_seed);
  read_opt(j, "test_seed", d.test_seed);
  read_opt(j, "cifar_train", d.cifar_train);
  if (d.kind != "shapes" && d.kind != "cifar10") throw ConfigError("unknown dataset kind '" + d.kind + "'");
  if (d.kind == "cifar10" && d.path.empty()) throw ConfigError("dataset kind cifar10 needs a path");
  return d;
}

json PretrainSettings::to_json() const {
  return {{"epochs", epochs}, {"batch_size", batch_size}, {"lr", lr},       {"weight_decay", weight_decay},
          {"seed", seed},     {"model_seed", model_seed}, {"width", width}, {"gate", gate}};
}

PretrainSettings PretrainSettings::from_json(const json& j) {
  require_keys(j, {"epochs", "batch_size", "lr", "weight_decay", "seed", "model_seed", "width", "gate"}, "pretrain");
  PretrainSettings p;
  read_opt(j, "epochs", p.epochs);
  read_opt(j, "batch_size", p.batch_size);
  read_opt(j, "lr", p.lr);
  read_opt(j, "weight_decay", p.weight_decay);
  read_opt(j, "seed", p.seed);
  read_opt(j, "model_seed", p.model_seed);
  read_opt(j, "width", p.width);
  read_opt(j, "gate", p.gate);
  if (p.epochs == 0 || p.batch_size == 0 || !(p.lr > 0.0) || p.width == 0) {
    throw ConfigError("pretrain needs epochs, batch_size, width > 0 and lr > 0");
  }
  return p;
}

json SweepConfig::to_json() const {
  return {{"iterations", iterations}, {"batch_sizes", batch_sizes}, {"method", method.to_json()}};
}

SweepConfig SweepConfig::from_json(const json& j) {
  require_keys(j, {"iterations", "batch_sizes", "method"}, "sweeps");
  SweepConfig s;
  read_opt(j, "iterations", s.iterations);
  read_opt(j, "batch_sizes", s.batch_sizes);
  if (j.contains("method")) s.method = adapt::Method::from_json(j.at("method"));
  for (auto v : s.iterations)
    if (v == 0) throw ConfigError("sweep iterations must be >= 1");
  for (auto v : s.batch_sizes)
    if (v == 0) throw ConfigError("sweep batch sizes must be >= 1");
  return s;
}

ExperimentConfig::ExperimentConfig() {
  const auto& all = corrupt::all_kinds();
  corruptions.assign(all.begin(), all.end());
  adapt.batch_size = 16;
}

void ExperimentConfig::validate() const {
  adapt.validate();
  if (corruptions.empty()) throw ConfigError("corruption list is empty");
  if (severities.empty()) throw ConfigError("severity list is empty");
  for (int s : severities)
    if (s < 0 || s > corrupt::kMaxSeverity) throw ConfigError("severity " + std::to_string(s) + " outside 0..5");
  if (methods.empty()) throw ConfigError("method list is empty");
  if (seeds.empty()) throw ConfigError("seed list is empty");
  clip::PromptTemplate{template_text, {"a", "b"}}.validate();
}

json ExperimentConfig::to_json() const {
  json kinds = json::array();
  for (auto k : corruptions) kinds.push_back(std::string(corrupt::name(k)));
  json ms = json::array();
  for (const auto& m : methods) ms.push_back(m.to_json());
  json a = adapt.to_json();
  a.erase("template");
  return {{"dataset", dataset.to_json()},
          {"template", template_text},
          {"corruptions", std::move(kinds)},
          {"severities", severities},
          {"adapt", std::move(a)},
          {"methods", std::move(ms)},
          {"seeds", seeds},
          {"out_dir", out_dir},
          {"pretrain", pretrain.to_json()},
          {"eval_source", eval_source},
          {"archive_images", archive_images},
          {"sweeps", sweeps.to_json()},
          {"gradcheck", gradcheck.to_json()}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  require_keys(j,
               {"dataset", "template", "corruptions", "severities", "adapt", "methods", "seeds", "out_dir",
                "pretrain", "eval_source", "archive_images", "sweeps", "gradcheck"},
               "experiment config");
  ExperimentConfig c;
  if (j.contains("dataset")) c.dataset = DatasetConfig::from_json(j.at("dataset"));
  read_opt(j, "template", c.template_text);
  if (j.contains("corruptions")) {
    std::vector<std::string> names;
    read_opt(j, "corruptions", names);
    c.corruptions.clear();
    for (const auto& n : names) {
      if (n == "all") {
        const auto& all = corrupt::all_kinds();
        c.corruptions.insert(c.corruptions.end(), all.begin(), all.end());
      } else {
        c.corruptions.push_back(corrupt::parse_kind(n));
      }
    }
  }
  read_opt(j, "severities", c.severities);
  if (j.contains("adapt")) {
    if (j.at("adapt").contains("template")) throw ConfigError("adapt: set the prompt with the top-level 'template'");
    c.adapt = adapt::AdaptConfig::from_json(j.at("adapt"));
  }
  c.adapt.template_text = c.template_text;
  if (j.contains("methods")) {
    if (!j.at("methods").is_array()) throw ConfigError("methods must be an array");
    c.methods.clear();
    for (const auto& m : j.at("methods")) c.methods.push_back(adapt::Method::from_json(m));
  }
  read_opt(j, "seeds", c.seeds);
  read_opt(j, "out_dir", c.out_dir);
  if (j.contains("pretrain")) c.pretrain = PretrainSettings::from_json(j.at("pretrain"));
  read_opt(j, "eval_source", c.eval_source);
  read_opt(j, "archive_images", c.archive_images);
  if (j.contains("sweeps")) c.sweeps = SweepConfig::from_json(j.at("sweeps"));
  if (j.contains("gradcheck")) c.gradcheck = AuditConfig::from_json(j.at("gradcheck"));
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::fingerprint() const {
  const std::string text = to_json().dump();
  return clip::fingerprint({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

Datasets load_datasets(const DatasetConfig& cfg) {
  if (cfg.kind == "shapes") {
    return {gen_shapes(cfg.train_per_class, cfg.classes, cfg.image_size, cfg.train_seed),
            gen_shapes(cfg.test_per_class, cfg.classes, cfg.image_size, cfg.test_seed)};
  }
  ImageSet all = load_cifar10(cfg.path);
  if (cfg.cifar_train == 0 || cfg.cifar_train >= all.size()) {
    throw ConfigError("cifar_train must leave images for both splits (have " + std::to_string(all.size()) + ")");
  }
  std::vector<std::size_t> train(cfg.cifar_train), test(all.size() - cfg.cifar_train);
  std::iota(train.begin(), train.end(), 0);
  std::iota(test.begin(), test.end(), cfg.cifar_train);
  return {all.subset(train), all.subset(test)};
}

}  // namespace battta::bench
