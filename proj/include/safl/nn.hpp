#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "safl/tensor.hpp"

namespace safl::nn {

enum class LayerKind { Conv2d, BatchNorm, ReLU, MaxPool, Linear };
enum class Mode { Train, Eval };

const char* kind_name(LayerKind k);

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

struct Layer {
  LayerKind kind{};
  int in_c = 0;    // conv in-channels / linear in-features / bn channels
  int out_c = 0;   // conv out-channels / linear out-features / bn channels
  int kernel = 0;  // conv / pool window
  int stride = 1;
  int pad = 0;

  // Conv2d/Linear: weight+bias. BatchNorm: weight=gamma, bias=beta.
  Tensor weight;
  Tensor bias;
  Tensor running_mean;
  Tensor running_var;

  // train-mode forward cache, consumed by backward
  bool has_cache = false;
  Tensor cache_x;                  // conv/linear/relu input
  Tensor cache_xhat;               // bn normalized activations
  std::vector<double> cache_mean;  // bn per-channel batch mean
  std::vector<double> cache_invstd;
  std::vector<int> cache_argmax;  // pool winner index per output cell
  std::vector<int> cache_xshape;

  bool has_params() const {
    return kind == LayerKind::Conv2d || kind == LayerKind::Linear ||
           kind == LayerKind::BatchNorm;
  }
  void drop_cache();
};

struct Model {
  std::string arch_id;
  int in_c = 0, in_h = 0, in_w = 0;
  int num_classes = 0;
  std::vector<Layer> layers;
};

// Known arch_ids: mnist_cnn, cifar_cnn, synth_cnn and their _nobn variants.
Model make_model(const std::string& arch_id, uint64_t seed);
bool arch_has_bn(const std::string& arch_id);
std::string nobn_variant(const std::string& arch_id);

// Arbitrary stack of conv(3x3, pad 1)[-BN]-ReLU-pool(2x2) blocks feeding a
// linear head, one block per entry of widths.
Model make_custom_cnn(int in_c, int in_h, int in_w,
                      const std::vector<int>& widths, bool with_bn,
                      int num_classes, uint64_t seed);

Tensor forward(Model& m, const Tensor& batch, Mode mode);
// Populates parameter grads; returns grad wrt the input batch.
Tensor backward(Model& m, const Tensor& dlogits);
void sgd_step(Model& m, double lr);
void clear_grads(Model& m);
void drop_caches(Model& m);

struct CeResult {
  double loss;
  Tensor dlogits;
};
CeResult cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Flat parameter vector: per layer in order, weight then bias, then BN
// running mean and variance when present. Length is the model size M used
// for all communication accounting.
size_t param_count(const Model& m);
std::vector<double> flatten_all(const Model& m);
void unflatten_all(Model& m, const std::vector<double>& flat);

struct TensorEntry {
  std::string name;  // e.g. "layer2.bn.gamma"
  int layer = 0;
  const Tensor* tensor = nullptr;
  size_t offset = 0;  // position in flatten_all order
};
std::vector<TensorEntry> tensor_entries(const Model& m);

// Trainable parameters only (conv/linear weights+bias, BN gamma+beta).
std::vector<Tensor*> trainable_tensors(Model& m);

// Mini-batch plumbing shared by every local-training loop.
void gather_batch(const Tensor& images, const std::vector<int>& labels,
                  const std::vector<int>& idx, int lo, int hi, Tensor& batch,
                  std::vector<int>& batch_labels);

struct TrainHooks {
  // runs after backward with grads populated; returns extra loss to report
  std::function<double(Model&)> extra_grad;
  // runs after each sgd step
  std::function<void(Model&)> post_step;
};

// Plain cross-entropy SGD over shuffled mini-batches. Returns the mean
// training loss of the final epoch (0 when epochs == 0).
double run_epochs(Model& m, const Tensor& images,
                  const std::vector<int>& labels, int epochs, double lr,
                  int batch_size, std::mt19937_64& rng,
                  const TrainHooks& hooks = {});

// Eval-mode metrics over the whole set, batched.
double mean_ce(Model& m, const Tensor& images, const std::vector<int>& labels,
               int batch_size = 64);
double accuracy(Model& m, const Tensor& images, const std::vector<int>& labels,
                int batch_size = 64);

}  // namespace safl::nn
