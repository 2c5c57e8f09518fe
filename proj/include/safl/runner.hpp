#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace safl::runner {

struct Config {
  std::string dataset;  // mnist | cifar10 | synth | digits
  std::string algo;     // safl | fedavg | fedbn | hermes_ablation
  std::string arch;     // defaulted from dataset when empty
  std::string data_root;
  std::string output_dir;

  int n_clients = 10;
  int classes_per_client = 5;
  std::optional<int> per_class_count;

  int clusters = 2;              // K
  std::vector<double> schedule;  // r_0 .. r_{T-1}
  int stage2_rounds = 0;         // G
  int guided_epochs = 50;
  int finetune_epochs = 20;
  int local_epochs = 1;

  double lambda = 1e-4;
  double mu = 4e-3;
  double lr = 5e-3;
  int batch_size = 32;
  uint64_t seed = 1;
  std::string stage2_divisor = "retainers";  // or all_clients
  int eval_every = 1;

  // synth dataset only
  int synth_clusters = 2;
  int samples_per_client = 40;

  // bookkeeping for config hygiene warnings
  std::vector<std::string> present_keys;
};

// Throws std::invalid_argument with a field-level message on bad input.
Config parse_config(const std::string& json_text);
Config load_config(const std::string& path);
std::string config_to_json(const Config& cfg);

// Keys present in the config but ignored by the chosen algo/dataset,
// e.g. clusters with algo=fedavg. Printed as warnings by run_experiment.
std::vector<std::string> hygiene_warnings(const Config& cfg);

// Exit status 0 on success. Never throws: config problems return 1,
// runtime failures return 2, both with a diagnostic on stderr.
int run_experiment(const std::string& config_path);

// Aggregates one run directory or a tree of them (summary.json,
// acc_vs_round.csv, acc_vs_rate.csv under <dir>/report).
int emit_report(const std::string& run_dir);

// Dataset root resolution order: config value, SAFL_DATA_ROOT, ./data.
std::string resolve_data_root(const Config& cfg);

}  // namespace safl::runner
