#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "battta/adapt.hpp"
#include "battta/audit.hpp"
#include "battta/corruption.hpp"
#include "battta/image_set.hpp"
#include "json.hpp"

namespace battta::bench {

struct DatasetConfig {
  std::string kind = "shapes";  // shapes | cifar10
  std::string path;             // cifar10 directory
  std::size_t classes = 5;
  std::size_t image_size = 16;
  std::size_t train_per_class = 200;
  std::size_t test_per_class = 400;
  std::uint64_t train_seed = 1;
  std::uint64_t test_seed = 2;
  std::size_t cifar_train = 5000;  // leading test-batch records used for pretraining

  nlohmann::json to_json() const;
  static DatasetConfig from_json(const nlohmann::json& j);
};

struct PretrainSettings {
  std::size_t epochs = 30;
  std::size_t batch_size = 50;
  double lr = 2e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;        // data order
  std::uint64_t model_seed = 7;  // initialisation
  std::size_t width = 64;
  double gate = 85.0;  // held-out accuracy the run is expected to reach

  nlohmann::json to_json() const;
  static PretrainSettings from_json(const nlohmann::json& j);
};

// Iteration and batch-size sweeps run by `adapt` when non-empty.
struct SweepConfig {
  std::vector<std::size_t> iterations;
  std::vector<std::size_t> batch_sizes;
  adapt::Method method = adapt::Method::batclip();

  bool empty() const { return iterations.empty() && batch_sizes.empty(); }
  nlohmann::json to_json() const;
  static SweepConfig from_json(const nlohmann::json& j);
};

struct ExperimentConfig {
  DatasetConfig dataset;
  std::string template_text = clip::kDefaultTemplate;
  std::vector<corrupt::Kind> corruptions;  // defaults to all 15
  std::vector<int> severities{5};
  adapt::AdaptConfig adapt;
  std::vector<adapt::Method> methods{adapt::Method::zero_shot(), adapt::Method::batclip(),
                                     adapt::Method::entropy_only()};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::string out_dir = "out";
  PretrainSettings pretrain;
  bool eval_source = false;
  std::size_t archive_images = 100;  // images per cached corrupted archive
  SweepConfig sweeps;
  AuditConfig gradcheck;

  ExperimentConfig();
  void validate() const;
  nlohmann::json to_json() const;
  // Unknown keys at any level raise ConfigError.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string fingerprint() const;
};

struct Datasets {
  ImageSet train;
  ImageSet test;
};

Datasets load_datasets(const DatasetConfig& cfg);

}  // namespace battta::bench
