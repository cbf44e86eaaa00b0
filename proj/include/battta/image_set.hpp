#pragma once

#include <string>
#include <vector>

#include "battta/tensor.hpp"

namespace battta {

// Labeled images, NHWC with three channels, values in [0, 1].
struct ImageSet {
  Tensor images;  // [N x H x W x 3]
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t height() const { return images.dim(1); }
  std::size_t width() const { return images.dim(2); }
  std::size_t pixels_per_image() const { return images.size() / (labels.empty() ? 1 : labels.size()); }

  // Images at `index` (in order) as a new set.
  ImageSet subset(const std::vector<std::size_t>& index) const;
  // Throws DimensionError / ConfigError when the invariants do not hold.
  void validate() const;
};

}  // namespace battta
