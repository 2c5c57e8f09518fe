#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "safl/clusterer.hpp"
#include "safl/commledger.hpp"
#include "safl/data.hpp"
#include "safl/pruner.hpp"

namespace safl::fed {

struct ClusterState {
  std::vector<pruner::MaskedModel> models;  // K cluster models
  std::vector<int> membership;              // per client, last round's choice
  int round = 0;
};

struct OverlapVote {
  std::vector<std::vector<int>> counts;  // per layer, per channel
  int cluster_size = 0;
  int threshold = 0;
};

// Overlap counters across member masks plus the largest threshold keeping
// at least (1 - target_rate) of all channels; 0 when none qualifies.
OverlapVote count_overlap(const std::vector<pruner::MaskSet>& masks,
                          double target_rate);

// Within-cluster fusion: retained set from the overlap vote (with the
// per-layer one-channel floor), parameters averaged coordinate-wise over
// exactly the members whose masks keep each coordinate live.
pruner::MaskedModel fuse_cluster(const std::vector<pruner::MaskedModel>& members,
                                 double target_rate);

// Per-coordinate masked mean across clients; every client receives the
// aggregate re-masked by its own mask. divide_by_n switches the divisor
// from |retaining clients| to N (zero-diluted variant).
std::vector<pruner::MaskedModel> stage_two_aggregate(
    const std::vector<pruner::MaskedModel>& clients, bool divide_by_n = false);

struct MetricRow {
  int round = 0;
  int stage = 0;
  int client_id = 0;
  double train_loss = 0;
  double test_acc = -1;  // negative when not evaluated this round
  uint64_t effective_size = 0;
  int cluster = -1;
};
using MetricsSink = std::function<void(const MetricRow&)>;
using AssignSink = std::function<void(const clusterer::ClusterAssignment&)>;

struct StageOneConfig {
  std::string arch_id;
  int clusters = 1;              // K
  std::vector<double> schedule;  // r_0 .. r_{T-1}
  clusterer::GuidedLossConfig guided;
  int finetune_epochs = 20;
  uint64_t seed = 1;
  int eval_every = 1;
};

struct StageOneResult {
  std::vector<pruner::MaskedModel> client_models;
  ClusterState cluster;
  std::vector<std::vector<int>> membership_history;  // per round, per client
};

StageOneResult run_stage_one(const std::vector<data::ClientPartition>& parts,
                             const StageOneConfig& cfg, comm::Ledger& ledger,
                             const MetricsSink& metrics = {},
                             const AssignSink& assigns = {});

struct StageTwoConfig {
  int rounds = 0;  // G
  int local_epochs = 1;
  double lr = 5e-3;
  int batch_size = 32;
  bool divide_by_n = false;
  uint64_t seed = 1;
  int eval_every = 1;
  std::vector<int> cluster_of;  // optional, stamps metric rows per client
};

std::vector<pruner::MaskedModel> run_stage_two(
    std::vector<pruner::MaskedModel> clients,
    const std::vector<data::ClientPartition>& parts, const StageTwoConfig& cfg,
    comm::Ledger& ledger, const MetricsSink& metrics = {});

void validate_schedule(const std::vector<double>& schedule);

}  // namespace safl::fed
