#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "safl/data.hpp"
#include "safl/pruner.hpp"

namespace safl::clusterer {

struct ClusterAssignment {
  int client_id = 0;
  int chosen = 0;
  std::vector<uint8_t> onehot;
  int round = 0;
  std::vector<double> losses;  // eval cross-entropy per cluster model
};

struct GuidedLossConfig {
  double lambda = 1e-4;
  double mu = 4e-3;
  int epochs = 50;
  double lr = 5e-3;
  int batch_size = 32;
};

int argmin_losses(const std::vector<double>& losses);

// Eval-mode cross-entropy of every cluster model on the client's full local
// train set; lowest loss wins, ties to the lower index.
ClusterAssignment estimate_cluster(const data::Dataset& client_data,
                                   std::vector<pruner::MaskedModel>& clusters,
                                   int client_id = 0, int round = 0);

// Composite slimming loss: CE + lambda * sum_b |gamma_b|_1
// + mu * sum_b |gamma_b - cluster_gamma_b|_1. Populates parameter grads
// (L1 subgradient at zero is zero) and returns the total.
double guided_loss(nn::Model& m, const Tensor& batch,
                   const std::vector<int>& labels,
                   const std::vector<std::vector<double>>& cluster_gammas,
                   const GuidedLossConfig& cfg);
// Same surface, no gradients.
double guided_loss_value(nn::Model& m, const Tensor& batch,
                         const std::vector<int>& labels,
                         const std::vector<std::vector<double>>& cluster_gammas,
                         const GuidedLossConfig& cfg);

// Per-BN-layer gamma vectors of a model (recovered cluster model supplies
// the alignment targets).
std::vector<std::vector<double>> bn_gammas(const nn::Model& m);

// Recovers client and cluster models to full size, then trains the client
// copy under the composite loss. Returns the trained full-sized model and
// the final-epoch mean loss via *out_loss when non-null.
nn::Model guided_update(const pruner::MaskedModel& client,
                        const pruner::MaskedModel& cluster,
                        const Tensor& images, const std::vector<int>& labels,
                        const GuidedLossConfig& cfg, std::mt19937_64& rng,
                        double* out_loss = nullptr);

}  // namespace safl::clusterer
