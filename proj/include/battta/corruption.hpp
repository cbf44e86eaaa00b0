#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "battta/image_set.hpp"

namespace battta::corrupt {

enum class Kind {
  gaussian_noise,
  shot_noise,
  impulse_noise,
  defocus_blur,
  glass_blur,
  motion_blur,
  zoom_blur,
  snow,
  frost,
  fog,
  brightness,
  contrast,
  elastic,
  pixelate,
  jpeg,
};

inline constexpr std::size_t kNumKinds = 15;
inline constexpr int kMaxSeverity = 5;

const std::array<Kind, kNumKinds>& all_kinds();
std::string_view name(Kind kind);
// Throws ConfigError for an unknown name.
Kind parse_kind(std::string_view name);

// One row of a severity table. `columns` names the numeric parameters in
// order; `stronger_when_larger[i]` gives the direction in which column i
// increases corruption strength.
struct SeverityTable {
  std::vector<std::string> columns;
  std::vector<bool> stronger_when_larger;
  std::array<std::vector<double>, kMaxSeverity> rows;
};

inline constexpr int kTableVersion = 1;

// Fixed parameter table for `kind`, tuned for 16x16 inputs.
const SeverityTable& severity_table(Kind kind);

struct CorruptionSpec {
  Kind kind = Kind::gaussian_noise;
  int severity = 1;  // 1..5; 0 is the identity configuration
  std::vector<double> params;

  // Spec with the table row for `severity` (empty params for severity 0).
  // Throws ConfigError for severities outside 0..5.
  static CorruptionSpec make(Kind kind, int severity);
  std::string label() const;
};

// Applies `spec` to every image. Deterministic for a given seed; each image
// draws from its own stream derived from (seed, kind, severity, index) so
// results do not depend on processing order. Outputs are clipped to [0, 1]
// and labels pass through unchanged. Severity 0 returns an exact copy.
ImageSet corrupt(const ImageSet& set, const CorruptionSpec& spec, std::uint64_t seed);

// Single-image entry point, `img` is H x W x 3 interleaved.
void corrupt_image(std::vector<double>& img, std::size_t height, std::size_t width, const CorruptionSpec& spec,
                   std::uint64_t image_seed);

}  // namespace battta::corrupt
