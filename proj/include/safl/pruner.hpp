#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "safl/nn.hpp"

namespace safl::pruner {

// One retention vector per BN layer, in layer order. Empty for archs
// without BN (nothing is prunable there).
struct MaskSet {
  std::string arch_id;
  std::vector<std::vector<uint8_t>> layer_masks;

  bool all_true() const;
  size_t total_channels() const;
  size_t retained_channels() const;
};

// conv -> bn -> ... -> next conv/linear chain for one prunable channel group
struct PrunableGroup {
  int conv_idx = -1;
  int bn_idx = -1;
  int consumer_idx = -1;  // -1 when nothing downstream consumes the channels
  int channels = 0;
};

std::vector<PrunableGroup> prunable_groups(const nn::Model& m);

struct MaskedModel {
  nn::Model model;  // full-sized storage
  MaskSet mask;
};

MaskSet full_mask(const nn::Model& m);
MaskedModel wrap_full(nn::Model m);

// Zeroes everything the mask excludes: conv out-slices and bias, BN
// scale/shift/running stats, and the input slices of the consumer layer.
void apply_mask(nn::Model& m, const MaskSet& mask);

// Per-coordinate retention flags in flatten_all order.
std::vector<uint8_t> liveness(const nn::Model& m, const MaskSet& mask);

size_t effective_size(const MaskedModel& mm);

// Global |gamma| ranking across every BN layer; prunes the
// floor(rate * total_channels) smallest, keeping at least one channel per
// layer (re-admitting that layer's largest-|gamma| channel when violated).
// Equal magnitudes break toward pruning the lower (layer, channel) index.
MaskedModel netslim(const MaskedModel& mm, double rate);

// Full-structure restore: retained channels keep their parameters, pruned
// channels come back with zero scale/shift/kernel and reset running stats
// (mean 0, variance 1).
MaskedModel model_recover(const MaskedModel& mm);

// Plain cross-entropy SGD on live channels; masked parameters pinned to
// zero after every step. Returns final-epoch mean training loss.
double fine_tune(MaskedModel& mm, const Tensor& images,
                 const std::vector<int>& labels, int epochs, double lr,
                 int batch_size, std::mt19937_64& rng);

std::string mask_to_json(const MaskSet& mask);
MaskSet mask_from_json(const std::string& text);

}  // namespace safl::pruner
