#include "safl/commledger.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace safl::comm {

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::Distribution:
      return "distribution";
    case Phase::ClusterBroadcast:
      return "cluster_broadcast";
    case Phase::PruneUpload:
      return "prune_upload";
    case Phase::Stage2Up:
      return "stage2_up";
    case Phase::Stage2Down:
      return "stage2_down";
  }
  return "?";
}

Phase parse_phase(const std::string& s) {
  if (s == "distribution") return Phase::Distribution;
  if (s == "cluster_broadcast") return Phase::ClusterBroadcast;
  if (s == "prune_upload") return Phase::PruneUpload;
  if (s == "stage2_up") return Phase::Stage2Up;
  if (s == "stage2_down") return Phase::Stage2Down;
  throw std::invalid_argument("unknown ledger phase '" + s + "'");
}

void Ledger::record(int round, int stage, Direction dir, Phase phase,
                    int client_id, uint64_t param_count) {
  events_.push_back({round, stage, dir, phase, client_id, param_count});
  phase_totals_[phase] += param_count;
}

uint64_t Ledger::total(Phase p) const {
  auto it = phase_totals_.find(p);
  return it == phase_totals_.end() ? 0 : it->second;
}

uint64_t Ledger::total(Direction d, int stage) const {
  uint64_t n = 0;
  for (const auto& e : events_)
    if (e.dir == d && e.stage == stage) n += e.param_count;
  return n;
}

uint64_t Ledger::total() const {
  uint64_t n = 0;
  for (const auto& kv : phase_totals_) n += kv.second;
  return n;
}

void Ledger::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write ledger to " + path);
  out << "round,stage,direction,phase,client_id,param_count\n";
  for (const auto& e : events_)
    out << e.round << ',' << e.stage << ','
        << (e.dir == Direction::Up ? "up" : "down") << ','
        << phase_name(e.phase) << ',' << e.client_id << ',' << e.param_count
        << '\n';
}

Ledger Ledger::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read ledger from " + path);
  std::string line;
  if (!std::getline(in, line) ||
      line != "round,stage,direction,phase,client_id,param_count")
    throw std::runtime_error("bad ledger header in " + path);
  Ledger led;
  size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[6];
    for (int i = 0; i < 6; ++i)
      if (!std::getline(ss, f[i], ','))
        throw std::runtime_error("short ledger row at line " +
                                 std::to_string(lineno));
    Direction dir;
    if (f[2] == "up")
      dir = Direction::Up;
    else if (f[2] == "down")
      dir = Direction::Down;
    else
      throw std::runtime_error("bad direction '" + f[2] + "' at line " +
                               std::to_string(lineno));
    led.record(std::stoi(f[0]), std::stoi(f[1]), dir, parse_phase(f[3]),
               std::stoi(f[4]), std::stoull(f[5]));
  }
  return led;
}

void validate(const CostModelInputs& inp) {
  if (inp.N < 1) throw std::invalid_argument("cost model: N must be >= 1");
  if (inp.K < 1) throw std::invalid_argument("cost model: K must be >= 1");
  if (inp.T < 1) throw std::invalid_argument("cost model: T must be >= 1");
  if (inp.G < 0) throw std::invalid_argument("cost model: G must be >= 0");
  if (inp.M < 1) throw std::invalid_argument("cost model: M must be >= 1");
  if (inp.p.size() != static_cast<size_t>(inp.T))
    throw std::invalid_argument("cost model: need one retention p_i per prune "
                                "round, got " +
                                std::to_string(inp.p.size()) + " for T=" +
                                std::to_string(inp.T));
  for (double pi : inp.p)
    if (!(pi > 0.0 && pi <= 1.0))
      throw std::invalid_argument("cost model: retention fractions must be in "
                                  "(0, 1], got " +
                                  std::to_string(pi));
}

namespace {

double head_sum(const CostModelInputs& inp) {
  double s = 0.0;
  for (int i = 0; i + 1 < inp.T; ++i) s += inp.p[static_cast<size_t>(i)];
  return s;
}

double full_sum(const CostModelInputs& inp) {
  double s = 0.0;
  for (double pi : inp.p) s += pi;
  return s;
}

}  // namespace

CostTerms analytic_terms(const CostModelInputs& inp) {
  validate(inp);
  const double N = inp.N, K = inp.K, M = static_cast<double>(inp.M);
  CostTerms t;
  t.distribution = (K + 1.0) * N * M;
  t.download = N * K * M * (1.0 + head_sum(inp));
  t.upload = N * M * full_sum(inp);
  t.update = 2.0 * inp.G * M * N * inp.p.back();
  return t;
}

double analytic_safl_cost(const CostModelInputs& inp) {
  validate(inp);
  const double N = inp.N, K = inp.K, M = static_cast<double>(inp.M);
  return N * M *
         (2.0 * K + 1.0 + K * head_sum(inp) + full_sum(inp) +
          2.0 * inp.G * inp.p.back());
}

double analytic_fedavg_cost(const CostModelInputs& inp) {
  validate(inp);
  return 2.0 * inp.G * static_cast<double>(inp.M) * inp.N;
}

Breakeven breakeven_G(const CostModelInputs& inp) {
  validate(inp);
  const double p_last = inp.p.back();
  Breakeven b;
  if (p_last >= 1.0) {
    b.finite = false;
    b.bound = std::numeric_limits<double>::infinity();
    return b;
  }
  b.bound = (2.0 * inp.K + 1.0 + (inp.K + 1.0) * head_sum(inp) + p_last) /
            (2.0 * (1.0 - p_last));
  return b;
}

Ledger simulate_idealized(const CostModelInputs& inp) {
  validate(inp);
  const auto size_at = [&](double pi) {
    return static_cast<uint64_t>(
        std::llround(pi * static_cast<double>(inp.M)));
  };
  Ledger led;
  for (int i = 0; i < inp.N; ++i)
    for (int j = 0; j < inp.K + 1; ++j)
      led.record(0, 1, Direction::Down, Phase::Distribution, i, inp.M);
  for (int t = 0; t < inp.T; ++t) {
    const uint64_t down =
        t == 0 ? inp.M : size_at(inp.p[static_cast<size_t>(t - 1)]);
    const uint64_t up = size_at(inp.p[static_cast<size_t>(t)]);
    for (int i = 0; i < inp.N; ++i) {
      for (int j = 0; j < inp.K; ++j)
        led.record(t, 1, Direction::Down, Phase::ClusterBroadcast, i, down);
      led.record(t, 1, Direction::Up, Phase::PruneUpload, i, up);
    }
  }
  const uint64_t final_size = size_at(inp.p.back());
  for (int g = 0; g < inp.G; ++g)
    for (int i = 0; i < inp.N; ++i) {
      led.record(g, 2, Direction::Up, Phase::Stage2Up, i, final_size);
      led.record(g, 2, Direction::Down, Phase::Stage2Down, i, final_size);
    }
  return led;
}

namespace {

PhaseReport make_row(const std::string& name, double measured, double modeled) {
  PhaseReport r;
  r.phase = name;
  r.measured = measured;
  r.modeled = modeled;
  r.abs_dev = std::abs(measured - modeled);
  if (modeled != 0.0)
    r.rel_dev = r.abs_dev / std::abs(modeled);
  else
    r.rel_dev = measured == 0.0 ? 0.0 : 1.0;
  return r;
}

}  // namespace

std::vector<PhaseReport> reconcile(const Ledger& ledger,
                                   const CostModelInputs& inp) {
  const CostTerms t = analytic_terms(inp);
  const double dist = static_cast<double>(ledger.total(Phase::Distribution));
  const double down =
      static_cast<double>(ledger.total(Phase::ClusterBroadcast));
  const double up = static_cast<double>(ledger.total(Phase::PruneUpload));
  const double upd = static_cast<double>(ledger.total(Phase::Stage2Up) +
                                         ledger.total(Phase::Stage2Down));
  std::vector<PhaseReport> rep;
  rep.push_back(make_row("distribution", dist, t.distribution));
  rep.push_back(make_row("download", down, t.download));
  rep.push_back(make_row("upload", up, t.upload));
  rep.push_back(make_row("update", upd, t.update));
  rep.push_back(make_row("total", dist + down + up + upd, t.total()));
  return rep;
}

void write_reconciliation(const std::vector<PhaseReport>& report,
                          const std::string& path) {
  nlohmann::json j;
  j["phases"] = nlohmann::json::array();
  for (const auto& r : report) {
    nlohmann::json row;
    row["phase"] = r.phase;
    row["measured"] = r.measured;
    row["modeled"] = r.modeled;
    row["abs_dev"] = r.abs_dev;
    row["rel_dev"] = r.rel_dev;
    j["phases"].push_back(std::move(row));
  }
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write reconciliation to " + path);
  out << j.dump(2) << '\n';
}

}  // namespace safl::comm
