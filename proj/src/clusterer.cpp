#include "safl/clusterer.hpp"

#include <cmath>
#include <stdexcept>

namespace safl::clusterer {

namespace {

double sgn(double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); }

// Adds L1 gradients for the sparsity and alignment terms; returns the
// penalty value. with_grads=false only accumulates the value.
double gamma_penalty(nn::Model& m,
                     const std::vector<std::vector<double>>& targets,
                     double lambda, double mu, bool with_grads) {
  double pen = 0.0;
  size_t bi = 0;
  for (auto& l : m.layers) {
    if (l.kind != nn::LayerKind::BatchNorm) continue;
    if (bi >= targets.size())
      throw std::invalid_argument("fewer gamma targets than BN layers");
    const auto& t = targets[bi];
    if (t.size() != l.weight.values.size())
      throw std::invalid_argument("gamma target size mismatch at BN layer " +
                                  std::to_string(bi));
    if (with_grads) l.weight.ensure_grad();
    for (size_t c = 0; c < l.weight.values.size(); ++c) {
      const double g = l.weight.values[c];
      const double d = g - t[c];
      pen += lambda * std::abs(g) + mu * std::abs(d);
      if (with_grads) l.weight.grad[c] += lambda * sgn(g) + mu * sgn(d);
    }
    ++bi;
  }
  if (bi != targets.size())
    throw std::invalid_argument("more gamma targets than BN layers");
  return pen;
}

}  // namespace

int argmin_losses(const std::vector<double>& losses) {
  if (losses.empty()) throw std::invalid_argument("argmin over empty losses");
  int best = 0;
  for (int i = 1; i < static_cast<int>(losses.size()); ++i)
    if (losses[static_cast<size_t>(i)] < losses[static_cast<size_t>(best)])
      best = i;
  return best;
}

ClusterAssignment estimate_cluster(const data::Dataset& client_data,
                                   std::vector<pruner::MaskedModel>& clusters,
                                   int client_id, int round) {
  if (clusters.empty())
    throw std::invalid_argument("estimate_cluster: no cluster models");
  ClusterAssignment a;
  a.client_id = client_id;
  a.round = round;
  a.losses.reserve(clusters.size());
  for (auto& c : clusters)
    a.losses.push_back(
        nn::mean_ce(c.model, client_data.images, client_data.labels));
  a.chosen = argmin_losses(a.losses);
  a.onehot.assign(clusters.size(), 0);
  a.onehot[static_cast<size_t>(a.chosen)] = 1;
  return a;
}

double guided_loss(nn::Model& m, const Tensor& batch,
                   const std::vector<int>& labels,
                   const std::vector<std::vector<double>>& cluster_gammas,
                   const GuidedLossConfig& cfg) {
  Tensor logits = nn::forward(m, batch, nn::Mode::Train);
  auto ce = nn::cross_entropy(logits, labels);
  nn::backward(m, ce.dlogits);
  const double pen =
      gamma_penalty(m, cluster_gammas, cfg.lambda, cfg.mu, true);
  return ce.loss + pen;
}

double guided_loss_value(nn::Model& m, const Tensor& batch,
                         const std::vector<int>& labels,
                         const std::vector<std::vector<double>>& cluster_gammas,
                         const GuidedLossConfig& cfg) {
  Tensor logits = nn::forward(m, batch, nn::Mode::Train);
  auto ce = nn::cross_entropy(logits, labels);
  nn::drop_caches(m);
  const double pen =
      gamma_penalty(m, cluster_gammas, cfg.lambda, cfg.mu, false);
  return ce.loss + pen;
}

std::vector<std::vector<double>> bn_gammas(const nn::Model& m) {
  std::vector<std::vector<double>> out;
  for (const auto& l : m.layers)
    if (l.kind == nn::LayerKind::BatchNorm) out.push_back(l.weight.values);
  return out;
}

nn::Model guided_update(const pruner::MaskedModel& client,
                        const pruner::MaskedModel& cluster,
                        const Tensor& images, const std::vector<int>& labels,
                        const GuidedLossConfig& cfg, std::mt19937_64& rng,
                        double* out_loss) {
  auto rec_client = pruner::model_recover(client);
  auto rec_cluster = pruner::model_recover(cluster);
  const auto targets = bn_gammas(rec_cluster.model);

  nn::Model m = std::move(rec_client.model);
  nn::TrainHooks hooks;
  hooks.extra_grad = [&targets, &cfg](nn::Model& mm) {
    return gamma_penalty(mm, targets, cfg.lambda, cfg.mu, true);
  };
  const double loss = nn::run_epochs(m, images, labels, cfg.epochs, cfg.lr,
                                     cfg.batch_size, rng, hooks);
  if (out_loss) *out_loss = loss;
  return m;
}

}  // namespace safl::clusterer
