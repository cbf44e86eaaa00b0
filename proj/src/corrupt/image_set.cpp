#include "battta/image_set.hpp"

#include <algorithm>

#include "battta/errors.hpp"

namespace battta {

ImageSet ImageSet::subset(const std::vector<std::size_t>& index) const {
  const std::size_t per = pixels_per_image();
  std::vector<double> data;
  data.reserve(index.size() * per);
  ImageSet out;
  out.class_names = class_names;
  for (std::size_t i : index) {
    if (i >= size()) throw DimensionError("ImageSet::subset: index " + std::to_string(i) + " out of range");
    auto src = images.data().subspan(i * per, per);
    data.insert(data.end(), src.begin(), src.end());
    out.labels.push_back(labels[i]);
  }
  Shape shape = images.shape();
  shape[0] = index.size();
  out.images = Tensor(std::move(shape), std::move(data));
  return out;
}

void ImageSet::validate() const {
  if (!images.defined() || images.ndim() != 4 || images.dim(3) != 3) {
    throw DimensionError("ImageSet: images must be [N x H x W x 3]");
  }
  if (images.dim(0) != labels.size()) {
    throw DimensionError("ImageSet: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(images.dim(0)) + " images");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_names.size()) {
      throw ConfigError("ImageSet: label " + std::to_string(l) + " outside " +
                        std::to_string(class_names.size()) + " classes");
    }
  }
  for (double v : images.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("ImageSet: pixel value outside [0, 1]");
  }
}

}  // namespace battta
