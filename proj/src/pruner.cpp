#include "safl/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

#include <json.hpp>

using nlohmann::json;

namespace safl::pruner {

bool MaskSet::all_true() const {
  for (const auto& lm : layer_masks)
    for (uint8_t v : lm)
      if (!v) return false;
  return true;
}

size_t MaskSet::total_channels() const {
  size_t n = 0;
  for (const auto& lm : layer_masks) n += lm.size();
  return n;
}

size_t MaskSet::retained_channels() const {
  size_t n = 0;
  for (const auto& lm : layer_masks)
    for (uint8_t v : lm) n += v ? 1 : 0;
  return n;
}

std::vector<PrunableGroup> prunable_groups(const nn::Model& m) {
  std::vector<PrunableGroup> groups;
  const int L = static_cast<int>(m.layers.size());
  for (int i = 0; i < L; ++i) {
    if (m.layers[i].kind != nn::LayerKind::BatchNorm) continue;
    PrunableGroup g;
    g.bn_idx = i;
    g.channels = m.layers[static_cast<size_t>(i)].in_c;
    for (int j = i - 1; j >= 0; --j)
      if (m.layers[static_cast<size_t>(j)].kind == nn::LayerKind::Conv2d) {
        g.conv_idx = j;
        break;
      }
    if (g.conv_idx < 0)
      throw std::runtime_error("BatchNorm layer " + std::to_string(i) +
                               " has no producing conv");
    if (m.layers[static_cast<size_t>(g.conv_idx)].out_c != g.channels)
      throw std::runtime_error("channel mismatch between conv " +
                               std::to_string(g.conv_idx) + " and bn " +
                               std::to_string(i));
    for (int j = i + 1; j < L; ++j) {
      const auto k = m.layers[static_cast<size_t>(j)].kind;
      if (k == nn::LayerKind::Conv2d || k == nn::LayerKind::Linear) {
        g.consumer_idx = j;
        break;
      }
    }
    groups.push_back(g);
  }
  return groups;
}

MaskSet full_mask(const nn::Model& m) {
  MaskSet ms;
  ms.arch_id = m.arch_id;
  for (const auto& g : prunable_groups(m))
    ms.layer_masks.emplace_back(static_cast<size_t>(g.channels), uint8_t{1});
  return ms;
}

MaskedModel wrap_full(nn::Model m) {
  MaskedModel mm;
  mm.mask = full_mask(m);
  mm.model = std::move(m);
  return mm;
}

namespace {

void check_mask(const nn::Model& m, const MaskSet& mask,
                const std::vector<PrunableGroup>& groups) {
  if (mask.arch_id != m.arch_id)
    throw std::invalid_argument("mask arch_id '" + mask.arch_id +
                                "' does not match model '" + m.arch_id + "'");
  if (mask.layer_masks.size() != groups.size())
    throw std::invalid_argument(
        "mask has " + std::to_string(mask.layer_masks.size()) +
        " layers, model has " + std::to_string(groups.size()));
  for (size_t i = 0; i < groups.size(); ++i)
    if (mask.layer_masks[i].size() != static_cast<size_t>(groups[i].channels))
      throw std::invalid_argument(
          "mask layer " + std::to_string(i) + " has " +
          std::to_string(mask.layer_masks[i].size()) + " channels, expected " +
          std::to_string(groups[i].channels));
}

void zero_consumer_slice(nn::Layer& cons, int channels, int ic) {
  if (cons.kind == nn::LayerKind::Conv2d) {
    const int slice = cons.kernel * cons.kernel;
    for (int oc = 0; oc < cons.out_c; ++oc) {
      double* w = cons.weight.data() +
                  (static_cast<size_t>(oc) * cons.in_c + ic) * slice;
      std::fill_n(w, slice, 0.0);
    }
  } else {  // Linear: the channel owns a contiguous block of input columns
    if (cons.in_c % channels != 0)
      throw std::runtime_error("linear in-features not divisible by channels");
    const int plane = cons.in_c / channels;
    for (int o = 0; o < cons.out_c; ++o) {
      double* w = cons.weight.data() + static_cast<size_t>(o) * cons.in_c +
                  static_cast<size_t>(ic) * plane;
      std::fill_n(w, plane, 0.0);
    }
  }
}

}  // namespace

void apply_mask(nn::Model& m, const MaskSet& mask) {
  const auto groups = prunable_groups(m);
  check_mask(m, mask, groups);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const auto& v = mask.layer_masks[gi];
    auto& conv = m.layers[static_cast<size_t>(g.conv_idx)];
    auto& bn = m.layers[static_cast<size_t>(g.bn_idx)];
    const int slice = conv.in_c * conv.kernel * conv.kernel;
    for (int c = 0; c < g.channels; ++c) {
      if (v[static_cast<size_t>(c)]) continue;
      std::fill_n(conv.weight.data() + static_cast<size_t>(c) * slice, slice,
                  0.0);
      conv.bias.values[static_cast<size_t>(c)] = 0.0;
      bn.weight.values[static_cast<size_t>(c)] = 0.0;
      bn.bias.values[static_cast<size_t>(c)] = 0.0;
      bn.running_mean.values[static_cast<size_t>(c)] = 0.0;
      bn.running_var.values[static_cast<size_t>(c)] = 0.0;
      if (g.consumer_idx >= 0)
        zero_consumer_slice(m.layers[static_cast<size_t>(g.consumer_idx)],
                            g.channels, c);
    }
  }
}

std::vector<uint8_t> liveness(const nn::Model& m, const MaskSet& mask) {
  const auto groups = prunable_groups(m);
  check_mask(m, mask, groups);
  // annotate layers with their out-channel mask and in-channel mask
  const size_t L = m.layers.size();
  std::vector<const std::vector<uint8_t>*> out_mask(L, nullptr);
  std::vector<const std::vector<uint8_t>*> in_mask(L, nullptr);
  std::vector<int> in_channels(L, 0);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    out_mask[static_cast<size_t>(g.conv_idx)] = &mask.layer_masks[gi];
    out_mask[static_cast<size_t>(g.bn_idx)] = &mask.layer_masks[gi];
    if (g.consumer_idx >= 0) {
      in_mask[static_cast<size_t>(g.consumer_idx)] = &mask.layer_masks[gi];
      in_channels[static_cast<size_t>(g.consumer_idx)] = g.channels;
    }
  }

  std::vector<uint8_t> live;
  live.reserve(nn::param_count(m));
  for (size_t li = 0; li < L; ++li) {
    const auto& l = m.layers[li];
    switch (l.kind) {
      case nn::LayerKind::Conv2d: {
        const auto* om = out_mask[li];
        const auto* im = in_mask[li];
        const int kk = l.kernel * l.kernel;
        for (int oc = 0; oc < l.out_c; ++oc)
          for (int ic = 0; ic < l.in_c; ++ic) {
            const bool on = (!om || (*om)[static_cast<size_t>(oc)]) &&
                            (!im || (*im)[static_cast<size_t>(ic)]);
            live.insert(live.end(), static_cast<size_t>(kk),
                        on ? uint8_t{1} : uint8_t{0});
          }
        for (int oc = 0; oc < l.out_c; ++oc)
          live.push_back(!om || (*om)[static_cast<size_t>(oc)] ? 1 : 0);
        break;
      }
      case nn::LayerKind::Linear: {
        const auto* im = in_mask[li];
        const int plane = im ? l.in_c / in_channels[li] : 0;
        for (int o = 0; o < l.out_c; ++o)
          for (int i = 0; i < l.in_c; ++i) {
            const bool on = !im || (*im)[static_cast<size_t>(i / plane)];
            live.push_back(on ? 1 : 0);
          }
        live.insert(live.end(), static_cast<size_t>(l.out_c), uint8_t{1});
        break;
      }
      case nn::LayerKind::BatchNorm: {
        const auto* om = out_mask[li];
        for (int rep = 0; rep < 4; ++rep)
          for (int c = 0; c < l.in_c; ++c)
            live.push_back(!om || (*om)[static_cast<size_t>(c)] ? 1 : 0);
        break;
      }
      default:
        break;
    }
  }
  return live;
}

size_t effective_size(const MaskedModel& mm) {
  const auto live = liveness(mm.model, mm.mask);
  size_t n = 0;
  for (uint8_t v : live) n += v;
  return n;
}

MaskedModel netslim(const MaskedModel& mm, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("netslim: rate must be in [0, 1), got " +
                                std::to_string(rate));
  const auto groups = prunable_groups(mm.model);
  if (groups.empty())
    throw std::runtime_error("netslim: model '" + mm.model.arch_id +
                             "' has no BN layers to rank");

  struct Entry {
    double mag;
    int layer;
    int channel;
  };
  std::vector<Entry> entries;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& bn = mm.model.layers[static_cast<size_t>(groups[gi].bn_idx)];
    for (int c = 0; c < groups[gi].channels; ++c)
      entries.push_back({std::abs(bn.weight.values[static_cast<size_t>(c)]),
                         static_cast<int>(gi), c});
  }
  const size_t total = entries.size();
  const size_t k = static_cast<size_t>(std::floor(rate * total));
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.mag, a.layer, a.channel) <
           std::tie(b.mag, b.layer, b.channel);
  });

  MaskSet mask;
  mask.arch_id = mm.model.arch_id;
  for (const auto& g : groups)
    mask.layer_masks.emplace_back(static_cast<size_t>(g.channels), uint8_t{1});
  for (size_t i = 0; i < k; ++i)
    mask.layer_masks[static_cast<size_t>(entries[i].layer)]
                    [static_cast<size_t>(entries[i].channel)] = 0;

  // each layer keeps at least its strongest channel
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    auto& lm = mask.layer_masks[gi];
    if (std::any_of(lm.begin(), lm.end(), [](uint8_t v) { return v != 0; }))
      continue;
    const auto& bn = mm.model.layers[static_cast<size_t>(groups[gi].bn_idx)];
    int best = 0;
    for (int c = 1; c < groups[gi].channels; ++c)
      if (std::abs(bn.weight.values[static_cast<size_t>(c)]) >
          std::abs(bn.weight.values[static_cast<size_t>(best)]))
        best = c;
    lm[static_cast<size_t>(best)] = 1;
  }

  MaskedModel out;
  out.model = mm.model;
  out.mask = std::move(mask);
  apply_mask(out.model, out.mask);
  return out;
}

MaskedModel model_recover(const MaskedModel& mm) {
  MaskedModel out;
  out.model = mm.model;
  const auto groups = prunable_groups(out.model);
  check_mask(out.model, mm.mask, groups);
  apply_mask(out.model, mm.mask);
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    auto& bn = out.model.layers[static_cast<size_t>(groups[gi].bn_idx)];
    const auto& v = mm.mask.layer_masks[gi];
    for (int c = 0; c < groups[gi].channels; ++c)
      if (!v[static_cast<size_t>(c)])
        bn.running_var.values[static_cast<size_t>(c)] = 1.0;
  }
  out.mask = full_mask(out.model);
  return out;
}

double fine_tune(MaskedModel& mm, const Tensor& images,
                 const std::vector<int>& labels, int epochs, double lr,
                 int batch_size, std::mt19937_64& rng) {
  if (epochs < 0) throw std::invalid_argument("fine_tune: negative epochs");
  if (epochs == 0) return 0.0;
  apply_mask(mm.model, mm.mask);
  nn::TrainHooks hooks;
  const MaskSet& mask = mm.mask;
  hooks.post_step = [&mask](nn::Model& m) { apply_mask(m, mask); };
  return nn::run_epochs(mm.model, images, labels, epochs, lr, batch_size, rng,
                        hooks);
}

std::string mask_to_json(const MaskSet& mask) {
  json j;
  j["arch_id"] = mask.arch_id;
  json layers = json::array();
  for (const auto& lm : mask.layer_masks) {
    json row = json::array();
    for (uint8_t v : lm) row.push_back(v ? 1 : 0);
    layers.push_back(std::move(row));
  }
  j["layer_masks"] = std::move(layers);
  return j.dump();
}

MaskSet mask_from_json(const std::string& text) {
  json j = json::parse(text);
  if (!j.contains("arch_id") || !j.contains("layer_masks"))
    throw std::invalid_argument("mask json needs arch_id and layer_masks");
  MaskSet mask;
  mask.arch_id = j["arch_id"].get<std::string>();
  for (const auto& row : j["layer_masks"]) {
    std::vector<uint8_t> lm;
    for (const auto& v : row) {
      const int x = v.get<int>();
      if (x != 0 && x != 1)
        throw std::invalid_argument("mask entries must be 0 or 1");
      lm.push_back(static_cast<uint8_t>(x));
    }
    mask.layer_masks.push_back(std::move(lm));
  }
  return mask;
}

}  // namespace safl::pruner
