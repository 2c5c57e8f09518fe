#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace safl::comm {

enum class Phase {
  Distribution,
  ClusterBroadcast,
  PruneUpload,
  Stage2Up,
  Stage2Down,
};
enum class Direction { Up, Down };

const char* phase_name(Phase p);
Phase parse_phase(const std::string& s);

struct Event {
  int round = 0;
  int stage = 0;
  Direction dir = Direction::Down;
  Phase phase = Phase::Distribution;
  int client_id = 0;
  uint64_t param_count = 0;
};

class Ledger {
 public:
  void record(int round, int stage, Direction dir, Phase phase, int client_id,
              uint64_t param_count);
  const std::vector<Event>& events() const { return events_; }
  uint64_t total(Phase p) const;
  uint64_t total(Direction d, int stage) const;
  uint64_t total() const;

  void write_csv(const std::string& path) const;
  static Ledger read_csv(const std::string& path);

 private:
  std::vector<Event> events_;
  std::map<Phase, uint64_t> phase_totals_;
};

struct CostModelInputs {
  int N = 1;
  int K = 1;
  int T = 1;
  int G = 0;
  uint64_t M = 0;
  std::vector<double> p;  // retention fractions p_i = 1 - r_i, length T
};

void validate(const CostModelInputs& inp);

struct CostTerms {
  double distribution = 0;  // (K+1) N M
  double download = 0;      // N K M (1 + sum_{i<=T-2} p_i)
  double upload = 0;        // N M sum_{i<=T-1} p_i
  double update = 0;        // 2 G N M p_{T-1}
  double total() const { return distribution + download + upload + update; }
};

CostTerms analytic_terms(const CostModelInputs& inp);
double analytic_safl_cost(const CostModelInputs& inp);
double analytic_fedavg_cost(const CostModelInputs& inp);

struct Breakeven {
  bool finite = true;  // false when p_{T-1} == 1 (never breaks even)
  double bound = 0;
};
Breakeven breakeven_G(const CostModelInputs& inp);

// Walks the two-stage communication schedule with every pruned size taken
// as exactly p_i * M, recording the same event stream a real run would.
Ledger simulate_idealized(const CostModelInputs& inp);

struct PhaseReport {
  std::string phase;
  double measured = 0;
  double modeled = 0;
  double abs_dev = 0;
  double rel_dev = 0;
};

// Measured per-phase totals against the closed-form terms. Deviations on
// real runs come from floor-rule size variance.
std::vector<PhaseReport> reconcile(const Ledger& ledger,
                                   const CostModelInputs& inp);
void write_reconciliation(const std::vector<PhaseReport>& report,
                          const std::string& path);

}  // namespace safl::comm
