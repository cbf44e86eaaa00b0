#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "battta/checkpoint.hpp"
#include "battta/experiment.hpp"

namespace battta::bench {

// Accuracy cells keyed by (method, corruption, severity, seed).
class BenchmarkTable {
 public:
  struct Entry {
    std::string method;
    std::string corruption;
    int severity = 0;
    std::uint64_t seed = 0;
    double accuracy = 0.0;
    double zero_shot = 0.0;
    std::optional<double> source_drop;
    bool failed = false;
    std::string error;

    std::string column() const { return corruption + "-" + std::to_string(severity); }
  };

  void add(Entry e);
  const std::vector<Entry>& entries() const { return entries_; }

  // First-appearance order.
  std::vector<std::string> methods() const;
  std::vector<std::string> columns() const;

  // Seed mean of the successful entries of one cell.
  std::optional<double> cell(const std::string& method, const std::string& column) const;
  // Arithmetic mean of the method's cells (the "Mean" column).
  std::optional<double> mean(const std::string& method) const;
  // Same cells scored with the pre-task parameters.
  std::optional<double> zero_shot_mean(const std::string& method) const;
  std::optional<double> gain(const std::string& method) const;
  std::optional<double> source_drop(const std::string& method) const;
  std::size_t failures() const;

  // method, <corruption-severity>..., mean, gain_vs_zero_shot, source_drop
  std::string to_csv() const;

 private:
  std::vector<Entry> entries_;
};

// Worker count: BATTTA_THREADS when set (must be a positive integer), else
// the hardware concurrency; never more than `jobs`.
std::size_t worker_count(std::size_t jobs);

// Runs fn(0..n-1) on up to `workers` threads. Exceptions escape after all
// jobs finish (the first one by index is rethrown).
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn);

struct CommandContext {
  ExperimentConfig config;
  std::filesystem::path out_dir;
  std::filesystem::path checkpoint;  // defaults to <out>/checkpoint.btc
  std::ostream* log = nullptr;
};

// Each command returns a process exit code (0 ok, 1 usage/config,
// 2 numerical, 3 I/O) for outcomes it handles itself; errors it cannot
// handle propagate as battta::Error.
int cmd_pretrain(const CommandContext& ctx);
int cmd_corrupt(const CommandContext& ctx);
int cmd_zeroshot(const CommandContext& ctx);
int cmd_adapt(const CommandContext& ctx);
int cmd_gradcheck(const CommandContext& ctx);

// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

}  // namespace battta::bench

namespace battta::bench {

// Corrupted-set cache entry in the named-tensor container: tensors "images"
// and "labels" plus caller metadata.
clip::Checkpoint to_archive(const ImageSet& set, nlohmann::json meta);
// Throws CheckpointError when the tensors are missing or inconsistent.
ImageSet from_archive(const clip::Checkpoint& archive);
// Hash of the pixel and label payload only (metadata excluded).
std::string content_hash(const ImageSet& set);

}  // namespace battta::bench
