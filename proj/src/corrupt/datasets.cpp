#include "battta/datasets.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>

#include "battta/errors.hpp"
#include "battta/rng.hpp"

namespace battta {
namespace {

constexpr std::array<const char*, kShapeKinds> kShapeNames{"circle", "square", "triangle", "cross", "ring"};

struct Colour {
  const char* name;
  double r, g, b;
};
constexpr std::array<Colour, kPaletteSize> kPalette{{
    {"red", 0.90, 0.15, 0.15},
    {"green", 0.15, 0.80, 0.20},
    {"blue", 0.20, 0.30, 0.95},
    {"yellow", 0.95, 0.90, 0.15},
    {"magenta", 0.90, 0.20, 0.85},
    {"cyan", 0.15, 0.85, 0.90},
}};

// Point-in-figure test in coordinates relative to the figure centre,
// normalised by its radius.
bool inside(std::size_t shape, double x, double y) {
  const double d = std::sqrt(x * x + y * y);
  switch (shape) {
    case 0:
      return d <= 1.0;
    case 1:
      return std::abs(x) <= 0.8 && std::abs(y) <= 0.8;
    case 2: {
      // Upward triangle with apex (0,-1) and base at y = 0.75.
      if (y > 0.75) return false;
      const double half = (y + 1.0) / 1.75 * 0.95;
      return y >= -1.0 && std::abs(x) <= half;
    }
    case 3:
      return (std::abs(x) <= 0.3 && std::abs(y) <= 1.0) || (std::abs(y) <= 0.3 && std::abs(x) <= 1.0);
    default:
      return d <= 1.0 && d >= 0.55;
  }
}

}  // namespace

std::vector<std::string> shape_class_names(std::size_t classes) {
  if (classes == 0 || classes > kShapeKinds * kPaletteSize) {
    throw ConfigError("shapes dataset supports 1.." + std::to_string(kShapeKinds * kPaletteSize) +
                      " classes, got " + std::to_string(classes));
  }
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) {
    if (classes <= kShapeKinds) {
      names.emplace_back(kShapeNames[c]);
    } else {
      names.push_back(std::string(kPalette[c / kShapeKinds].name) + " " + kShapeNames[c % kShapeKinds]);
    }
  }
  return names;
}

ImageSet gen_shapes(std::size_t n_per_class, std::size_t classes, std::size_t size, std::uint64_t seed) {
  if (size < 4) throw ConfigError("shapes image size must be >= 4");
  ImageSet set;
  set.class_names = shape_class_names(classes);
  const std::size_t n = n_per_class * classes;
  const std::size_t per = size * size * 3;
  std::vector<double> data(n * per);
  constexpr int kSuper = 3;  // supersampling per axis for anti-aliased edges

  for (std::size_t i = 0; i < n; ++i) {
    const auto label = static_cast<int>(i % classes);
    set.labels.push_back(label);
    std::mt19937_64 rng(derive_seed(seed, {i}));
    std::uniform_real_distribution<double> u(0.0, 1.0);

    const std::size_t shape = static_cast<std::size_t>(label) % kShapeKinds;
    const std::size_t colour_index =
        classes <= kShapeKinds ? static_cast<std::size_t>(u(rng) * kPaletteSize) % kPaletteSize
                               : static_cast<std::size_t>(label) / kShapeKinds;
    const Colour& col = kPalette[colour_index];
    const double s = static_cast<double>(size);
    const double radius = s * (0.28 + 0.12 * u(rng));
    const double cx = s / 2.0 + (u(rng) - 0.5) * s * 0.18;
    const double cy = s / 2.0 + (u(rng) - 0.5) * s * 0.18;
    const double bg = 0.25 + 0.2 * u(rng);
    const double shade = 0.85 + 0.15 * u(rng);

    double* img = data.data() + i * per;
    for (std::size_t py = 0; py < size; ++py) {
      for (std::size_t px = 0; px < size; ++px) {
        int hits = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double x = (static_cast<double>(px) + (sx + 0.5) / kSuper - cx) / radius;
            const double y = (static_cast<double>(py) + (sy + 0.5) / kSuper - cy) / radius;
            hits += inside(shape, x, y) ? 1 : 0;
          }
        }
        const double cover = static_cast<double>(hits) / (kSuper * kSuper);
        const std::array<double, 3> fg{col.r * shade, col.g * shade, col.b * shade};
        for (std::size_t ch = 0; ch < 3; ++ch) {
          const double noise = (u(rng) - 0.5) * 0.16;
          const double v = cover * fg[ch] + (1.0 - cover) * (bg + noise);
          img[(py * size + px) * 3 + ch] = std::clamp(v, 0.0, 1.0);
        }
      }
    }
  }
  set.images = Tensor({n, size, size, 3}, std::move(data));
  return set;
}

std::vector<std::string> cifar10_class_names() {
  return {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"};
}

ImageSet parse_cifar10(const std::vector<unsigned char>& bytes, std::vector<std::string> class_names) {
  constexpr std::size_t kRecord = 3073, kSide = 32, kPlane = kSide * kSide;
  if (bytes.empty() || bytes.size() % kRecord != 0) {
    throw ParseError("CIFAR-10 batch length " + std::to_string(bytes.size()) + " is not a multiple of 3073");
  }
  const std::size_t n = bytes.size() / kRecord;
  ImageSet set;
  set.class_names = std::move(class_names);
  std::vector<double> data(n * kPlane * 3);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned char* rec = bytes.data() + i * kRecord;
    if (rec[0] >= set.class_names.size()) {
      throw ParseError("CIFAR-10 record " + std::to_string(i) + " has label " + std::to_string(rec[0]));
    }
    set.labels.push_back(rec[0]);
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t p = 0; p < kPlane; ++p)
        data[(i * kPlane + p) * 3 + ch] = rec[1 + ch * kPlane + p] / 255.0;
  }
  set.images = Tensor({n, kSide, kSide, 3}, std::move(data));
  return set;
}

ImageSet load_cifar10(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw IoError("CIFAR-10 directory not found: " + dir.string());
  const auto file = dir / "test_batch.bin";
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  auto names = cifar10_class_names();
  std::ifstream meta(dir / "batches.meta.txt");
  if (meta) {
    std::vector<std::string> read;
    for (std::string line; std::getline(meta, line);)
      if (!line.empty()) read.push_back(line);
    if (read.size() == names.size()) names = read;
  }
  return parse_cifar10(bytes, std::move(names));
}

}  // namespace battta
