#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "battta/image_set.hpp"

namespace battta {

inline constexpr std::size_t kShapeKinds = 5;   // circle, square, triangle, cross, ring
inline constexpr std::size_t kPaletteSize = 6;

// Class names the generator uses for `classes` classes. Up to five classes
// are named by shape alone (colour is a nuisance factor); beyond that each
// class is a fixed colour/shape pair such as "red circle".
std::vector<std::string> shape_class_names(std::size_t classes);

// Coloured geometric figures with jittered position and scale on noisy
// backgrounds. Labels cycle 0..C-1 so every prefix is near-balanced.
// Throws ConfigError when `classes` exceeds kShapeKinds * kPaletteSize or is 0.
ImageSet gen_shapes(std::size_t n_per_class, std::size_t classes, std::size_t size, std::uint64_t seed);

// Reads the CIFAR-10 binary test batch (`test_batch.bin`) from `dir`.
// Records are 1 label byte + 3072 pixel bytes stored as CHW planes.
// Missing directory/file -> IoError; length not a multiple of 3073 -> ParseError.
ImageSet load_cifar10(const std::filesystem::path& dir);

// Parses one buffer of CIFAR-10 records.
ImageSet parse_cifar10(const std::vector<unsigned char>& bytes, std::vector<std::string> class_names);

std::vector<std::string> cifar10_class_names();

}  // namespace battta
