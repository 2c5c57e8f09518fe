#include "safl/fedserver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "safl/rng.hpp"

namespace safl::fed {

void validate_schedule(const std::vector<double>& schedule) {
  for (size_t i = 0; i < schedule.size(); ++i) {
    if (!(schedule[i] >= 0.0 && schedule[i] < 1.0))
      throw std::invalid_argument("prune schedule entries must be in [0, 1), "
                                  "got " +
                                  std::to_string(schedule[i]));
    if (i > 0 && schedule[i] < schedule[i - 1])
      throw std::invalid_argument("prune schedule must be nondecreasing");
  }
}

OverlapVote count_overlap(const std::vector<pruner::MaskSet>& masks,
                          double target_rate) {
  if (masks.empty())
    throw std::invalid_argument("count_overlap: no member masks");
  if (!(target_rate >= 0.0 && target_rate < 1.0))
    throw std::invalid_argument("count_overlap: target rate must be in [0, 1)");
  const auto& first = masks.front();
  OverlapVote vote;
  vote.cluster_size = static_cast<int>(masks.size());
  vote.counts.resize(first.layer_masks.size());
  for (size_t b = 0; b < first.layer_masks.size(); ++b)
    vote.counts[b].assign(first.layer_masks[b].size(), 0);
  size_t total = 0;
  for (const auto& ms : masks) {
    if (ms.layer_masks.size() != first.layer_masks.size())
      throw std::invalid_argument("count_overlap: mask layer count mismatch");
    for (size_t b = 0; b < ms.layer_masks.size(); ++b) {
      if (ms.layer_masks[b].size() != first.layer_masks[b].size())
        throw std::invalid_argument("count_overlap: mask width mismatch");
      for (size_t c = 0; c < ms.layer_masks[b].size(); ++c)
        vote.counts[b][c] += ms.layer_masks[b][c] ? 1 : 0;
    }
  }
  for (const auto& lm : first.layer_masks) total += lm.size();

  const double need = (1.0 - target_rate) * static_cast<double>(total);
  vote.threshold = 0;
  for (int thr = vote.cluster_size - 1; thr >= 0; --thr) {
    size_t kept = 0;
    for (const auto& row : vote.counts)
      for (int x : row)
        if (x > thr) ++kept;
    if (static_cast<double>(kept) >= need) {
      vote.threshold = thr;
      break;
    }
  }
  return vote;
}

pruner::MaskedModel fuse_cluster(
    const std::vector<pruner::MaskedModel>& members, double target_rate) {
  if (members.empty())
    throw std::invalid_argument("fuse_cluster: empty cluster");
  if (members.size() == 1) return members.front();
  for (const auto& m : members)
    if (m.model.arch_id != members.front().model.arch_id)
      throw std::invalid_argument("fuse_cluster: mixed architectures");

  std::vector<pruner::MaskSet> masks;
  masks.reserve(members.size());
  for (const auto& m : members) masks.push_back(m.mask);
  const OverlapVote vote = count_overlap(masks, target_rate);

  pruner::MaskSet fused;
  fused.arch_id = members.front().mask.arch_id;
  fused.layer_masks.resize(vote.counts.size());
  for (size_t b = 0; b < vote.counts.size(); ++b) {
    auto& lm = fused.layer_masks[b];
    lm.assign(vote.counts[b].size(), 0);
    for (size_t c = 0; c < lm.size(); ++c)
      if (vote.counts[b][c] > vote.threshold) lm[c] = 1;
    if (std::none_of(lm.begin(), lm.end(), [](uint8_t v) { return v != 0; })) {
      size_t best = 0;
      for (size_t c = 1; c < lm.size(); ++c)
        if (vote.counts[b][c] > vote.counts[b][best]) best = c;
      lm[best] = 1;
    }
  }

  const size_t flat_len = nn::param_count(members.front().model);
  std::vector<double> sum(flat_len, 0.0);
  std::vector<uint32_t> cnt(flat_len, 0);
  for (const auto& m : members) {
    const auto live = pruner::liveness(m.model, m.mask);
    const auto flat = nn::flatten_all(m.model);
    for (size_t j = 0; j < flat_len; ++j)
      if (live[j]) {
        sum[j] += flat[j];
        ++cnt[j];
      }
  }

  pruner::MaskedModel out;
  out.model = members.front().model;
  out.mask = std::move(fused);
  const auto fused_live = pruner::liveness(out.model, out.mask);
  std::vector<double> flat(flat_len, 0.0);
  for (size_t j = 0; j < flat_len; ++j)
    if (fused_live[j] && cnt[j] > 0) flat[j] = sum[j] / cnt[j];
  nn::unflatten_all(out.model, flat);
  pruner::apply_mask(out.model, out.mask);
  return out;
}

std::vector<pruner::MaskedModel> stage_two_aggregate(
    const std::vector<pruner::MaskedModel>& clients, bool divide_by_n) {
  if (clients.empty())
    throw std::invalid_argument("stage_two_aggregate: no clients");
  for (const auto& c : clients)
    if (c.model.arch_id != clients.front().model.arch_id)
      throw std::invalid_argument("stage_two_aggregate: mixed architectures");

  const size_t flat_len = nn::param_count(clients.front().model);
  std::vector<double> sum(flat_len, 0.0);
  std::vector<uint32_t> cnt(flat_len, 0);
  for (const auto& c : clients) {
    const auto live = pruner::liveness(c.model, c.mask);
    const auto flat = nn::flatten_all(c.model);
    for (size_t j = 0; j < flat_len; ++j)
      if (live[j]) {
        sum[j] += flat[j];
        ++cnt[j];
      }
  }
  std::vector<double> agg(flat_len, 0.0);
  const double n = static_cast<double>(clients.size());
  for (size_t j = 0; j < flat_len; ++j)
    if (cnt[j] > 0) agg[j] = sum[j] / (divide_by_n ? n : cnt[j]);

  std::vector<pruner::MaskedModel> out;
  out.reserve(clients.size());
  for (const auto& c : clients) {
    pruner::MaskedModel next;
    next.model = c.model;
    next.mask = c.mask;
    nn::unflatten_all(next.model, agg);
    pruner::apply_mask(next.model, next.mask);
    out.push_back(std::move(next));
  }
  return out;
}

StageOneResult run_stage_one(const std::vector<data::ClientPartition>& parts,
                             const StageOneConfig& cfg, comm::Ledger& ledger,
                             const MetricsSink& metrics,
                             const AssignSink& assigns) {
  if (parts.empty())
    throw std::invalid_argument("run_stage_one: no client partitions");
  if (cfg.clusters < 1)
    throw std::invalid_argument("run_stage_one: need at least one cluster");
  validate_schedule(cfg.schedule);

  const int N = static_cast<int>(parts.size());
  const int K = cfg.clusters;
  const int T = static_cast<int>(cfg.schedule.size());

  nn::Model init = nn::make_model(cfg.arch_id, derive_seed(cfg.seed, 0x696e6974));
  const uint64_t M = nn::param_count(init);

  StageOneResult res;
  res.cluster.models.reserve(static_cast<size_t>(K));
  for (int j = 0; j < K; ++j) {
    nn::Model m = init;
    auto rng = make_rng(derive_seed(cfg.seed, 0x636c7573, static_cast<uint64_t>(j)));
    std::uniform_real_distribution<double> jitter(-0.01, 0.01);
    for (Tensor* t : nn::trainable_tensors(m))
      for (double& v : t->values) v *= 1.0 + jitter(rng);
    res.cluster.models.push_back(pruner::wrap_full(std::move(m)));
  }
  res.cluster.membership.assign(static_cast<size_t>(N), -1);

  for (int i = 0; i < N; ++i)
    for (int j = 0; j < K + 1; ++j)
      ledger.record(0, 1, comm::Direction::Down, comm::Phase::Distribution, i,
                    M);

  res.client_models.assign(static_cast<size_t>(N), pruner::wrap_full(init));

  for (int t = 0; t < T; ++t) {
    const double rate = cfg.schedule[static_cast<size_t>(t)];
    std::vector<double> fit(static_cast<size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
      auto& client = res.client_models[static_cast<size_t>(i)];
      const auto& part = parts[static_cast<size_t>(i)];

      for (int j = 0; j < K; ++j)
        ledger.record(t, 1, comm::Direction::Down,
                      comm::Phase::ClusterBroadcast, i,
                      pruner::effective_size(
                          res.cluster.models[static_cast<size_t>(j)]));

      auto assign =
          clusterer::estimate_cluster(part.train, res.cluster.models, i, t);
      if (assigns) assigns(assign);
      const int chosen = assign.chosen;
      fit[static_cast<size_t>(i)] =
          assign.losses[static_cast<size_t>(chosen)];

      auto grng = make_rng(derive_seed(cfg.seed, 0x677569646564ull,
                                       static_cast<uint64_t>(i),
                                       static_cast<uint64_t>(t)));
      double guided_loss = 0.0;
      nn::Model updated = clusterer::guided_update(
          client, res.cluster.models[static_cast<size_t>(chosen)],
          part.train.images, part.train.labels, cfg.guided, grng,
          &guided_loss);

      pruner::MaskedModel slim =
          pruner::netslim(pruner::wrap_full(std::move(updated)), rate);

      auto frng = make_rng(derive_seed(cfg.seed, 0x66696e65ull,
                                       static_cast<uint64_t>(i),
                                       static_cast<uint64_t>(t)));
      const double ft_loss =
          pruner::fine_tune(slim, part.train.images, part.train.labels,
                            cfg.finetune_epochs, cfg.guided.lr,
                            cfg.guided.batch_size, frng);

      client = std::move(slim);
      const uint64_t es = pruner::effective_size(client);
      ledger.record(t, 1, comm::Direction::Up, comm::Phase::PruneUpload, i,
                    es);
      res.cluster.membership[static_cast<size_t>(i)] = chosen;

      if (metrics) {
        MetricRow row;
        row.round = t;
        row.stage = 1;
        row.client_id = i;
        row.train_loss = cfg.finetune_epochs > 0 ? ft_loss : guided_loss;
        row.effective_size = es;
        row.cluster = chosen;
        const bool eval = t == T - 1 ||
                          (cfg.eval_every > 0 && t % cfg.eval_every == 0);
        if (eval && part.test.count() > 0)
          row.test_acc =
              nn::accuracy(client.model, part.test.images, part.test.labels);
        metrics(row);
      }
    }

    std::vector<char> donated(static_cast<size_t>(N), 0);
    for (int j = 0; j < K; ++j) {
      std::vector<pruner::MaskedModel> members;
      for (int i = 0; i < N; ++i)
        if (res.cluster.membership[static_cast<size_t>(i)] == j)
          members.push_back(res.client_models[static_cast<size_t>(i)]);
      if (!members.empty()) {
        res.cluster.models[static_cast<size_t>(j)] =
            fuse_cluster(members, rate);
        continue;
      }
      // a cluster that lost every member reseeds from the worst-served
      // client, otherwise it can never attract members again
      int worst = -1;
      for (int i = 0; i < N; ++i)
        if (!donated[static_cast<size_t>(i)] &&
            (worst < 0 || fit[static_cast<size_t>(i)] >
                              fit[static_cast<size_t>(worst)]))
          worst = i;
      if (worst >= 0) {
        donated[static_cast<size_t>(worst)] = 1;
        res.cluster.models[static_cast<size_t>(j)] =
            res.client_models[static_cast<size_t>(worst)];
      }
    }
    res.membership_history.push_back(res.cluster.membership);
    res.cluster.round = t + 1;
  }
  return res;
}

std::vector<pruner::MaskedModel> run_stage_two(
    std::vector<pruner::MaskedModel> clients,
    const std::vector<data::ClientPartition>& parts, const StageTwoConfig& cfg,
    comm::Ledger& ledger, const MetricsSink& metrics) {
  if (clients.size() != parts.size())
    throw std::invalid_argument("run_stage_two: clients and partitions differ "
                                "in count");
  const int N = static_cast<int>(clients.size());

  for (int g = 0; g < cfg.rounds; ++g) {
    std::vector<double> losses(static_cast<size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
      auto& client = clients[static_cast<size_t>(i)];
      const auto& part = parts[static_cast<size_t>(i)];
      auto rng = make_rng(derive_seed(cfg.seed, 0x73746167653200ull,
                                      static_cast<uint64_t>(i),
                                      static_cast<uint64_t>(g)));
      nn::TrainHooks hooks;
      const pruner::MaskSet& mask = client.mask;
      hooks.post_step = [&mask](nn::Model& m) { pruner::apply_mask(m, mask); };
      losses[static_cast<size_t>(i)] =
          nn::run_epochs(client.model, part.train.images, part.train.labels,
                         cfg.local_epochs, cfg.lr, cfg.batch_size, rng, hooks);
      ledger.record(g, 2, comm::Direction::Up, comm::Phase::Stage2Up, i,
                    pruner::effective_size(client));
    }

    clients = stage_two_aggregate(clients, cfg.divide_by_n);

    for (int i = 0; i < N; ++i) {
      const uint64_t es =
          pruner::effective_size(clients[static_cast<size_t>(i)]);
      ledger.record(g, 2, comm::Direction::Down, comm::Phase::Stage2Down, i,
                    es);
      if (metrics) {
        MetricRow row;
        row.round = g;
        row.stage = 2;
        row.client_id = i;
        row.train_loss = losses[static_cast<size_t>(i)];
        row.effective_size = es;
        if (static_cast<size_t>(i) < cfg.cluster_of.size())
          row.cluster = cfg.cluster_of[static_cast<size_t>(i)];
        const bool eval = g == cfg.rounds - 1 ||
                          (cfg.eval_every > 0 && g % cfg.eval_every == 0);
        const auto& part = parts[static_cast<size_t>(i)];
        if (eval && part.test.count() > 0)
          row.test_acc = nn::accuracy(clients[static_cast<size_t>(i)].model,
                                      part.test.images, part.test.labels);
        metrics(row);
      }
    }
  }
  return clients;
}

}  // namespace safl::fed
