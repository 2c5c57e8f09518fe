#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "safl/commledger.hpp"
#include "safl/data.hpp"
#include "safl/fedserver.hpp"
#include "safl/nn.hpp"
#include "safl/pruner.hpp"

namespace safl::bench {

struct BaselineConfig {
  std::string arch_id;  // BN-free variant enforced for fedavg
  int rounds = 0;       // G
  int local_epochs = 1;
  double lr = 5e-3;
  int batch_size = 32;
  uint64_t seed = 1;
  bool weight_by_samples = false;
  int eval_every = 1;

  // hermes_ablation only
  std::vector<double> schedule;
  double lambda = 1e-4;
  int slim_epochs = 50;
  int finetune_epochs = 20;
  bool divide_by_n = false;
};

// Plain FedAvg on the BN-free architecture; returns the global model.
nn::Model run_fedavg(const std::vector<data::ClientPartition>& parts,
                     const BaselineConfig& cfg, comm::Ledger& ledger,
                     const fed::MetricsSink& metrics = {});

// FedAvg with BN parameters and running stats kept local to each client.
std::vector<nn::Model> run_fedbn(const std::vector<data::ClientPartition>& parts,
                                 const BaselineConfig& cfg,
                                 comm::Ledger& ledger,
                                 const fed::MetricsSink& metrics = {});

// SAFL stripped of clustering and structure guidance: local-only slimming
// (lambda term alone) per schedule round, then mask-frozen stage-two
// aggregation. Stage one touches the network only for the initial model.
std::vector<pruner::MaskedModel> run_hermes_ablation(
    const std::vector<data::ClientPartition>& parts, const BaselineConfig& cfg,
    comm::Ledger& ledger, const fed::MetricsSink& metrics = {});

// Parameter count a FedBN round transmits (everything except BN tensors).
size_t non_bn_param_count(const nn::Model& m);

}  // namespace safl::bench
