#pragma once

#include <cstdint>
#include <vector>

#include "battta/corruption.hpp"
#include "battta/image_set.hpp"

namespace battta {

struct Batch {
  Tensor images;  // [b x H x W x 3]
  std::vector<int> labels;
};

// One corruption at one severity as an ordered stream of batches.
struct Task {
  corrupt::CorruptionSpec spec;
  std::vector<Batch> batches;
  std::uint64_t seed = 0;
  std::vector<std::string> class_names;

  std::size_t sample_count() const;
};

// Corrupts `set` once, shuffles with `seed` and chunks into batches of
// `batch_size`; the last batch may be short. Throws ConfigError for an empty
// set or a zero batch size.
Task make_task(const ImageSet& set, const corrupt::CorruptionSpec& spec, std::size_t batch_size, std::uint64_t seed);

}  // namespace battta
