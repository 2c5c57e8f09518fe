#include "safl/bench.hpp"

#include <stdexcept>

#include "safl/clusterer.hpp"
#include "safl/rng.hpp"

namespace safl::bench {

size_t non_bn_param_count(const nn::Model& m) {
  size_t n = 0;
  for (const auto& l : m.layers)
    if (l.kind == nn::LayerKind::Conv2d || l.kind == nn::LayerKind::Linear)
      n += l.weight.numel() + l.bias.numel();
  return n;
}

namespace {

std::vector<double> client_weights(
    const std::vector<data::ClientPartition>& parts, bool by_samples) {
  std::vector<double> w(parts.size(), 1.0 / static_cast<double>(parts.size()));
  if (!by_samples) return w;
  double total = 0.0;
  for (const auto& p : parts) total += static_cast<double>(p.train.count());
  if (total <= 0.0) throw std::invalid_argument("clients hold no samples");
  for (size_t i = 0; i < parts.size(); ++i)
    w[i] = static_cast<double>(parts[i].train.count()) / total;
  return w;
}

// flatten_all-aligned flags marking coordinates owned by BN tensors
std::vector<uint8_t> bn_coordinate_flags(const nn::Model& m) {
  std::vector<uint8_t> flags;
  flags.reserve(nn::param_count(m));
  for (const auto& l : m.layers) {
    if (!l.has_params()) continue;
    const uint8_t is_bn = l.kind == nn::LayerKind::BatchNorm ? 1 : 0;
    flags.insert(flags.end(), l.weight.numel(), is_bn);
    flags.insert(flags.end(), l.bias.numel(), is_bn);
    if (is_bn) {
      flags.insert(flags.end(), l.running_mean.numel(), uint8_t{1});
      flags.insert(flags.end(), l.running_var.numel(), uint8_t{1});
    }
  }
  return flags;
}

}  // namespace

nn::Model run_fedavg(const std::vector<data::ClientPartition>& parts,
                     const BaselineConfig& cfg, comm::Ledger& ledger,
                     const fed::MetricsSink& metrics) {
  if (parts.empty()) throw std::invalid_argument("run_fedavg: no clients");
  const std::string arch = nn::nobn_variant(cfg.arch_id);
  nn::Model global = nn::make_model(arch, derive_seed(cfg.seed, 0x696e6974));
  const uint64_t M = nn::param_count(global);
  const int N = static_cast<int>(parts.size());
  const auto weights = client_weights(parts, cfg.weight_by_samples);

  for (int g = 0; g < cfg.rounds; ++g) {
    std::vector<double> agg(M, 0.0);
    std::vector<double> losses(static_cast<size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
      ledger.record(g, 2, comm::Direction::Down, comm::Phase::Stage2Down, i,
                    M);
      nn::Model local = global;
      auto rng = make_rng(derive_seed(cfg.seed, 0x6664617667ull,
                                      static_cast<uint64_t>(i),
                                      static_cast<uint64_t>(g)));
      losses[static_cast<size_t>(i)] = nn::run_epochs(
          local, parts[static_cast<size_t>(i)].train.images,
          parts[static_cast<size_t>(i)].train.labels, cfg.local_epochs,
          cfg.lr, cfg.batch_size, rng);
      ledger.record(g, 2, comm::Direction::Up, comm::Phase::Stage2Up, i, M);
      const auto flat = nn::flatten_all(local);
      const double w = weights[static_cast<size_t>(i)];
      for (size_t j = 0; j < flat.size(); ++j) agg[j] += w * flat[j];
    }
    nn::unflatten_all(global, agg);

    if (metrics) {
      const bool eval =
          g == cfg.rounds - 1 || (cfg.eval_every > 0 && g % cfg.eval_every == 0);
      for (int i = 0; i < N; ++i) {
        fed::MetricRow row;
        row.round = g;
        row.stage = 2;
        row.client_id = i;
        row.train_loss = losses[static_cast<size_t>(i)];
        row.effective_size = M;
        const auto& part = parts[static_cast<size_t>(i)];
        if (eval && part.test.count() > 0)
          row.test_acc =
              nn::accuracy(global, part.test.images, part.test.labels);
        metrics(row);
      }
    }
  }
  return global;
}

std::vector<nn::Model> run_fedbn(const std::vector<data::ClientPartition>& parts,
                                 const BaselineConfig& cfg,
                                 comm::Ledger& ledger,
                                 const fed::MetricsSink& metrics) {
  if (parts.empty()) throw std::invalid_argument("run_fedbn: no clients");
  nn::Model init =
      nn::make_model(cfg.arch_id, derive_seed(cfg.seed, 0x696e6974));
  const auto bn_flags = bn_coordinate_flags(init);
  const uint64_t shared = non_bn_param_count(init);
  const int N = static_cast<int>(parts.size());
  const auto weights = client_weights(parts, cfg.weight_by_samples);

  std::vector<nn::Model> clients(static_cast<size_t>(N), init);

  for (int g = 0; g < cfg.rounds; ++g) {
    std::vector<double> agg(bn_flags.size(), 0.0);
    std::vector<double> losses(static_cast<size_t>(N), 0.0);
    for (int i = 0; i < N; ++i) {
      auto& local = clients[static_cast<size_t>(i)];
      auto rng = make_rng(derive_seed(cfg.seed, 0x666564626eull,
                                      static_cast<uint64_t>(i),
                                      static_cast<uint64_t>(g)));
      losses[static_cast<size_t>(i)] = nn::run_epochs(
          local, parts[static_cast<size_t>(i)].train.images,
          parts[static_cast<size_t>(i)].train.labels, cfg.local_epochs,
          cfg.lr, cfg.batch_size, rng);
      ledger.record(g, 2, comm::Direction::Up, comm::Phase::Stage2Up, i,
                    shared);
      const auto flat = nn::flatten_all(local);
      const double w = weights[static_cast<size_t>(i)];
      for (size_t j = 0; j < flat.size(); ++j)
        if (!bn_flags[j]) agg[j] += w * flat[j];
    }
    for (int i = 0; i < N; ++i) {
      auto& local = clients[static_cast<size_t>(i)];
      auto flat = nn::flatten_all(local);
      for (size_t j = 0; j < flat.size(); ++j)
        if (!bn_flags[j]) flat[j] = agg[j];
      nn::unflatten_all(local, flat);
      ledger.record(g, 2, comm::Direction::Down, comm::Phase::Stage2Down, i,
                    shared);
    }

    if (metrics) {
      const bool eval =
          g == cfg.rounds - 1 || (cfg.eval_every > 0 && g % cfg.eval_every == 0);
      for (int i = 0; i < N; ++i) {
        fed::MetricRow row;
        row.round = g;
        row.stage = 2;
        row.client_id = i;
        row.train_loss = losses[static_cast<size_t>(i)];
        row.effective_size = nn::param_count(init);
        const auto& part = parts[static_cast<size_t>(i)];
        if (eval && part.test.count() > 0)
          row.test_acc = nn::accuracy(clients[static_cast<size_t>(i)],
                                      part.test.images, part.test.labels);
        metrics(row);
      }
    }
  }
  return clients;
}

std::vector<pruner::MaskedModel> run_hermes_ablation(
    const std::vector<data::ClientPartition>& parts, const BaselineConfig& cfg,
    comm::Ledger& ledger, const fed::MetricsSink& metrics) {
  if (parts.empty())
    throw std::invalid_argument("run_hermes_ablation: no clients");
  fed::validate_schedule(cfg.schedule);
  nn::Model init =
      nn::make_model(cfg.arch_id, derive_seed(cfg.seed, 0x696e6974));
  const uint64_t M = nn::param_count(init);
  const int N = static_cast<int>(parts.size());
  const int T = static_cast<int>(cfg.schedule.size());

  for (int i = 0; i < N; ++i)
    ledger.record(0, 1, comm::Direction::Down, comm::Phase::Distribution, i,
                  M);

  std::vector<pruner::MaskedModel> clients(static_cast<size_t>(N),
                                           pruner::wrap_full(init));

  clusterer::GuidedLossConfig slim;
  slim.lambda = cfg.lambda;
  slim.mu = 0.0;  // no cross-client structure guidance
  slim.epochs = cfg.slim_epochs;
  slim.lr = cfg.lr;
  slim.batch_size = cfg.batch_size;

  for (int t = 0; t < T; ++t) {
    const double rate = cfg.schedule[static_cast<size_t>(t)];
    for (int i = 0; i < N; ++i) {
      auto& client = clients[static_cast<size_t>(i)];
      const auto& part = parts[static_cast<size_t>(i)];

      auto grng = make_rng(derive_seed(cfg.seed, 0x677569646564ull,
                                       static_cast<uint64_t>(i),
                                       static_cast<uint64_t>(t)));
      double slim_loss = 0.0;
      nn::Model updated =
          clusterer::guided_update(client, client, part.train.images,
                                   part.train.labels, slim, grng, &slim_loss);

      pruner::MaskedModel slimmed =
          pruner::netslim(pruner::wrap_full(std::move(updated)), rate);

      auto frng = make_rng(derive_seed(cfg.seed, 0x66696e65ull,
                                       static_cast<uint64_t>(i),
                                       static_cast<uint64_t>(t)));
      const double ft_loss =
          pruner::fine_tune(slimmed, part.train.images, part.train.labels,
                            cfg.finetune_epochs, cfg.lr, cfg.batch_size, frng);
      client = std::move(slimmed);

      if (metrics) {
        fed::MetricRow row;
        row.round = t;
        row.stage = 1;
        row.client_id = i;
        row.train_loss = cfg.finetune_epochs > 0 ? ft_loss : slim_loss;
        row.effective_size = pruner::effective_size(client);
        const bool eval =
            t == T - 1 || (cfg.eval_every > 0 && t % cfg.eval_every == 0);
        if (eval && part.test.count() > 0)
          row.test_acc =
              nn::accuracy(client.model, part.test.images, part.test.labels);
        metrics(row);
      }
    }
  }

  fed::StageTwoConfig s2;
  s2.rounds = cfg.rounds;
  s2.local_epochs = cfg.local_epochs;
  s2.lr = cfg.lr;
  s2.batch_size = cfg.batch_size;
  s2.divide_by_n = cfg.divide_by_n;
  s2.seed = cfg.seed;
  s2.eval_every = cfg.eval_every;
  return fed::run_stage_two(std::move(clients), parts, s2, ledger, metrics);
}

}  // namespace safl::bench
