#include "battta/task.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "battta/errors.hpp"
#include "battta/rng.hpp"

namespace battta {

std::size_t Task::sample_count() const {
  std::size_t n = 0;
  for (const auto& b : batches) n += b.labels.size();
  return n;
}

Task make_task(const ImageSet& set, const corrupt::CorruptionSpec& spec, std::size_t batch_size, std::uint64_t seed) {
  if (set.size() == 0) throw ConfigError("cannot build a task from an empty image set");
  if (batch_size == 0) throw ConfigError("batch size must be at least 1");
  set.validate();

  const ImageSet corrupted = corrupt::corrupt(set, spec, seed);
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(derive_seed(seed, {0x7a5c, static_cast<std::uint64_t>(spec.kind),
                                         static_cast<std::uint64_t>(spec.severity)}));
  std::shuffle(order.begin(), order.end(), rng);

  Task task{spec, {}, seed, set.class_names};
  const std::size_t per = set.pixels_per_image();
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    std::vector<double> data;
    data.reserve((end - begin) * per);
    Batch batch;
    for (std::size_t i = begin; i < end; ++i) {
      auto src = corrupted.images.data().subspan(order[i] * per, per);
      data.insert(data.end(), src.begin(), src.end());
      batch.labels.push_back(corrupted.labels[order[i]]);
    }
    Shape shape = corrupted.images.shape();
    shape[0] = end - begin;
    batch.images = Tensor(std::move(shape), std::move(data));
    task.batches.push_back(std::move(batch));
  }
  return task;
}

}  // namespace battta
