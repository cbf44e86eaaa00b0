#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "battta/checkpoint.hpp"
#include "battta/image_set.hpp"
#include "battta/model.hpp"

namespace battta::clip {

inline constexpr const char* kDefaultTemplate = "a photo of a <CLS>.";

// Templates cycled over pretraining steps; the first is the evaluation template.
std::vector<std::string> pretrain_templates();

struct PretrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 50;
  double lr = 2e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  std::vector<std::string> templates = pretrain_templates();
};

struct PretrainLog {
  std::vector<double> epoch_loss;
  std::vector<double> epoch_tau;
};

// Symmetric InfoNCE between image features and class text features with a
// learnable log-scale temperature. Image->text is a C-way cross-entropy per
// image; text->image spreads each class's target uniformly over its images in
// the batch. Returns a snapshot of the trained model.
//
// Throws ContractError when fewer than two classes are present and
// NumericalError (naming the epoch) on a non-finite loss.
Checkpoint pretrain_contrastive(DualEncoder& model, const ImageSet& clean, const PretrainConfig& cfg,
                                PretrainLog* log = nullptr,
                                const std::function<void(std::size_t, double)>& on_epoch = {});

// Arg-max cosine class per image, ties to the lowest index.
std::vector<int> predict(const DualEncoder& model, const Tensor& images, const Tensor& text_features,
                         std::size_t batch_size = 250);

// Percentage of `set` classified correctly with `template_text`.
double zero_shot_accuracy(const DualEncoder& model, const ImageSet& set,
                          const std::string& template_text = kDefaultTemplate);

}  // namespace battta::clip
