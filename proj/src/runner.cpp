#include "safl/runner.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "safl/bench.hpp"
#include "safl/clusterer.hpp"
#include "safl/commledger.hpp"
#include "safl/data.hpp"
#include "safl/fedserver.hpp"
#include "safl/nn.hpp"
#include "safl/pruner.hpp"
#include "safl/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace safl::runner {

namespace {

// the generated digit corpus acts as a fixed on-disk dataset, so its seed
// is independent of the per-run seed
constexpr uint64_t kCorpusSeed = 0xd16175;
constexpr int kCorpusTrainPerClass = 600;
constexpr int kCorpusTestPerClass = 200;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset",         "algo",
      "arch",            "data_root",
      "output_dir",      "n_clients",
      "classes_per_client", "per_class_count",
      "clusters",        "schedule",
      "stage2_rounds",   "guided_epochs",
      "finetune_epochs", "local_epochs",
      "lambda",          "mu",
      "lr",              "batch_size",
      "seed",            "stage2_divisor",
      "eval_every",      "synth_clusters",
      "samples_per_client"};
  return keys;
}

std::string default_arch(const std::string& dataset) {
  if (dataset == "mnist" || dataset == "digits") return "mnist_cnn";
  if (dataset == "cifar10") return "cifar_cnn";
  return "synth_cnn";
}

bool known_arch(const std::string& arch) {
  static const std::set<std::string> archs = {
      "mnist_cnn", "cifar_cnn", "synth_cnn",
      "mnist_cnn_nobn", "cifar_cnn_nobn", "synth_cnn_nobn"};
  return archs.count(arch) > 0;
}

}  // namespace

Config parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config is not valid JSON: ") +
                                e.what());
  }
  if (!j.is_object())
    throw std::invalid_argument("config must be a JSON object");

  Config cfg;
  for (const auto& item : j.items()) {
    if (!known_keys().count(item.key()))
      throw std::invalid_argument("unknown config key '" + item.key() + "'");
    cfg.present_keys.push_back(item.key());
  }

  auto require = [&](const char* key) {
    if (!j.contains(key))
      throw std::invalid_argument(std::string("missing required key '") + key +
                                  "'");
  };
  auto get_str = [&](const char* key, const std::string& def) {
    if (!j.contains(key)) return def;
    if (!j[key].is_string())
      throw std::invalid_argument(std::string("'") + key +
                                  "' must be a string");
    return j[key].get<std::string>();
  };
  auto get_int = [&](const char* key, int def, int lo) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number_integer())
      throw std::invalid_argument(std::string("'") + key +
                                  "' must be an integer");
    const int v = j[key].get<int>();
    if (v < lo)
      throw std::invalid_argument(std::string("'") + key + "' must be >= " +
                                  std::to_string(lo) + ", got " +
                                  std::to_string(v));
    return v;
  };
  auto get_num = [&](const char* key, double def, double lo) {
    if (!j.contains(key)) return def;
    if (!j[key].is_number())
      throw std::invalid_argument(std::string("'") + key +
                                  "' must be a number");
    const double v = j[key].get<double>();
    if (v < lo)
      throw std::invalid_argument(std::string("'") + key + "' must be >= " +
                                  std::to_string(lo) + ", got " +
                                  std::to_string(v));
    return v;
  };

  require("dataset");
  require("algo");
  cfg.dataset = get_str("dataset", "");
  if (cfg.dataset != "mnist" && cfg.dataset != "cifar10" &&
      cfg.dataset != "synth" && cfg.dataset != "digits")
    throw std::invalid_argument(
        "'dataset' must be one of mnist, cifar10, synth, digits; got '" +
        cfg.dataset + "'");
  cfg.algo = get_str("algo", "");
  if (cfg.algo != "safl" && cfg.algo != "fedavg" && cfg.algo != "fedbn" &&
      cfg.algo != "hermes_ablation")
    throw std::invalid_argument(
        "'algo' must be one of safl, fedavg, fedbn, hermes_ablation; got '" +
        cfg.algo + "'");

  cfg.arch = get_str("arch", default_arch(cfg.dataset));
  if (!known_arch(cfg.arch))
    throw std::invalid_argument("'arch' is not a known architecture: '" +
                                cfg.arch + "'");
  cfg.data_root = get_str("data_root", "");
  cfg.output_dir = get_str("output_dir", "");

  cfg.n_clients = get_int("n_clients", cfg.n_clients, 1);
  cfg.classes_per_client =
      get_int("classes_per_client", cfg.classes_per_client, 1);
  if (j.contains("per_class_count"))
    cfg.per_class_count = get_int("per_class_count", 1, 1);
  cfg.clusters = get_int("clusters", cfg.clusters, 1);

  if (j.contains("schedule")) {
    if (!j["schedule"].is_array())
      throw std::invalid_argument("'schedule' must be an array of rates");
    for (const auto& v : j["schedule"]) {
      if (!v.is_number())
        throw std::invalid_argument("'schedule' entries must be numbers");
      cfg.schedule.push_back(v.get<double>());
    }
    fed::validate_schedule(cfg.schedule);
  }

  cfg.stage2_rounds = get_int("stage2_rounds", cfg.stage2_rounds, 0);
  cfg.guided_epochs = get_int("guided_epochs", cfg.guided_epochs, 0);
  cfg.finetune_epochs = get_int("finetune_epochs", cfg.finetune_epochs, 0);
  cfg.local_epochs = get_int("local_epochs", cfg.local_epochs, 0);
  cfg.lambda = get_num("lambda", cfg.lambda, 0.0);
  cfg.mu = get_num("mu", cfg.mu, 0.0);
  cfg.lr = get_num("lr", cfg.lr, 0.0);
  if (cfg.lr <= 0.0) throw std::invalid_argument("'lr' must be > 0");
  cfg.batch_size = get_int("batch_size", cfg.batch_size, 1);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() || j["seed"].get<long long>() < 0)
      throw std::invalid_argument("'seed' must be a nonnegative integer");
    cfg.seed = j["seed"].get<uint64_t>();
  }
  cfg.stage2_divisor = get_str("stage2_divisor", cfg.stage2_divisor);
  if (cfg.stage2_divisor != "retainers" &&
      cfg.stage2_divisor != "all_clients")
    throw std::invalid_argument(
        "'stage2_divisor' must be retainers or all_clients, got '" +
        cfg.stage2_divisor + "'");
  cfg.eval_every = get_int("eval_every", cfg.eval_every, 0);
  cfg.synth_clusters = get_int("synth_clusters", cfg.synth_clusters, 1);
  cfg.samples_per_client =
      get_int("samples_per_client", cfg.samples_per_client, 2);

  if ((cfg.algo == "safl" || cfg.algo == "hermes_ablation") &&
      cfg.schedule.empty())
    throw std::invalid_argument("algo=" + cfg.algo +
                                " needs a non-empty 'schedule'");
  return cfg;
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in)
    throw std::invalid_argument("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const Config& cfg) {
  json j;
  j["dataset"] = cfg.dataset;
  j["algo"] = cfg.algo;
  j["arch"] = cfg.arch;
  if (!cfg.data_root.empty()) j["data_root"] = cfg.data_root;
  if (!cfg.output_dir.empty()) j["output_dir"] = cfg.output_dir;
  j["n_clients"] = cfg.n_clients;
  j["classes_per_client"] = cfg.classes_per_client;
  if (cfg.per_class_count) j["per_class_count"] = *cfg.per_class_count;
  j["clusters"] = cfg.clusters;
  if (!cfg.schedule.empty()) j["schedule"] = cfg.schedule;
  j["stage2_rounds"] = cfg.stage2_rounds;
  j["guided_epochs"] = cfg.guided_epochs;
  j["finetune_epochs"] = cfg.finetune_epochs;
  j["local_epochs"] = cfg.local_epochs;
  j["lambda"] = cfg.lambda;
  j["mu"] = cfg.mu;
  j["lr"] = cfg.lr;
  j["batch_size"] = cfg.batch_size;
  j["seed"] = cfg.seed;
  j["stage2_divisor"] = cfg.stage2_divisor;
  j["eval_every"] = cfg.eval_every;
  if (cfg.dataset == "synth") {
    j["synth_clusters"] = cfg.synth_clusters;
    j["samples_per_client"] = cfg.samples_per_client;
  }
  return j.dump(2);
}

std::vector<std::string> hygiene_warnings(const Config& cfg) {
  const auto present = [&](const char* key) {
    return std::find(cfg.present_keys.begin(), cfg.present_keys.end(), key) !=
           cfg.present_keys.end();
  };
  std::vector<std::string> ignored;
  if (cfg.algo == "fedavg" || cfg.algo == "fedbn")
    ignored = {"clusters",        "schedule", "guided_epochs",
               "finetune_epochs", "lambda",   "mu",
               "stage2_divisor"};
  else if (cfg.algo == "hermes_ablation")
    ignored = {"clusters", "mu"};
  if (cfg.dataset != "synth") {
    ignored.push_back("synth_clusters");
    ignored.push_back("samples_per_client");
  }
  std::vector<std::string> out;
  for (const auto& key : ignored)
    if (present(key.c_str()))
      out.push_back("warning: '" + key + "' is ignored for algo=" + cfg.algo +
                    (key == "synth_clusters" || key == "samples_per_client"
                         ? " with dataset=" + cfg.dataset
                         : ""));
  return out;
}

std::string resolve_data_root(const Config& cfg) {
  if (!cfg.data_root.empty()) return cfg.data_root;
  if (const char* env = std::getenv("SAFL_DATA_ROOT"); env && *env)
    return env;
  return "./data";
}

namespace {

struct LoadedData {
  std::vector<data::ClientPartition> parts;
};

LoadedData load_experiment_data(const Config& cfg) {
  LoadedData out;
  const std::string root = resolve_data_root(cfg);
  if (cfg.dataset == "synth") {
    auto sd = data::synth_cluster_data(cfg.n_clients, cfg.synth_clusters,
                                       cfg.samples_per_client, cfg.seed);
    out.parts = std::move(sd.clients);
    return out;
  }
  if (cfg.dataset == "mnist" || cfg.dataset == "digits") {
    std::string dir = root;
    if (cfg.dataset == "digits") {
      dir = (fs::path(root) / "digits").string();
      if (data::find_idx_pair(dir, "train").empty()) {
        data::write_digit_corpus(dir, kCorpusTrainPerClass,
                                 kCorpusTestPerClass, kCorpusSeed);
        std::cout << "generated digit corpus under " << dir << "\n";
      }
    }
    const auto train_pair = data::find_idx_pair(dir, "train");
    const auto test_pair = data::find_idx_pair(dir, "test");
    if (train_pair.empty() || test_pair.empty())
      throw std::runtime_error(
          "no IDX files for dataset=" + cfg.dataset + " under " + dir +
          "; place train-images-idx3-ubyte / train-labels-idx1-ubyte / "
          "t10k-images-idx3-ubyte / t10k-labels-idx1-ubyte there, point "
          "data_root or SAFL_DATA_ROOT at them, or use dataset=digits for a "
          "generated corpus");
    const auto train = data::load_idx(train_pair[0], train_pair[1]);
    const auto test = data::load_idx(test_pair[0], test_pair[1]);
    out.parts = data::partition_noniid(train, test, cfg.n_clients,
                                       cfg.classes_per_client,
                                       cfg.per_class_count, cfg.seed);
    return out;
  }
  // cifar10
  std::string dir;
  for (const auto& cand :
       {fs::path(root), fs::path(root) / "cifar-10-batches-bin",
        fs::path(root) / "cifar10"})
    if (fs::exists(cand / "data_batch_1.bin")) {
      dir = cand.string();
      break;
    }
  if (dir.empty())
    throw std::runtime_error(
        "no CIFAR-10 binary batches (data_batch_1.bin ...) under " + root +
        " or " + (fs::path(root) / "cifar-10-batches-bin").string() +
        "; point data_root or SAFL_DATA_ROOT at the extracted "
        "cifar-10-batches-bin directory");
  const auto train = data::load_cifar10(dir, "train");
  const auto test = data::load_cifar10(dir, "test");
  out.parts =
      data::partition_noniid(train, test, cfg.n_clients,
                             cfg.classes_per_client, cfg.per_class_count,
                             cfg.seed);
  return out;
}

void write_blob(const fs::path& path, const std::vector<double>& flat) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  static_assert(sizeof(double) == 8);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(flat.data()),
              static_cast<std::streamsize>(flat.size() * sizeof(double)));
  } else {
    for (double v : flat) {
      char b[8];
      std::memcpy(b, &v, 8);
      std::reverse(b, b + 8);
      out.write(b, 8);
    }
  }
}

comm::PhaseReport phase_row(const std::string& name, double measured,
                            double modeled) {
  comm::PhaseReport r;
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

std::vector<comm::PhaseReport> baseline_reconciliation(
    const comm::Ledger& ledger, double modeled_distribution,
    double modeled_update) {
  const double dist = static_cast<double>(
      ledger.total(comm::Phase::Distribution));
  const double down =
      static_cast<double>(ledger.total(comm::Phase::ClusterBroadcast));
  const double up =
      static_cast<double>(ledger.total(comm::Phase::PruneUpload));
  const double upd = static_cast<double>(ledger.total(comm::Phase::Stage2Up) +
                                         ledger.total(comm::Phase::Stage2Down));
  std::vector<comm::PhaseReport> rep;
  rep.push_back(phase_row("distribution", dist, modeled_distribution));
  rep.push_back(phase_row("download", down, 0.0));
  rep.push_back(phase_row("upload", up, 0.0));
  rep.push_back(phase_row("update", upd, modeled_update));
  rep.push_back(phase_row("total", dist + down + up + upd,
                          modeled_distribution + modeled_update));
  return rep;
}

struct CheckpointWriter {
  fs::path dir;
  json manifest;

  explicit CheckpointWriter(const fs::path& run_dir)
      : dir(run_dir / "checkpoints") {
    fs::create_directories(dir);
    manifest["models"] = json::array();
  }

  void add(const std::string& name, const nn::Model& model,
           const pruner::MaskSet* mask) {
    const std::string blob = name + ".bin";
    write_blob(dir / blob, nn::flatten_all(model));
    json entry;
    entry["name"] = name;
    entry["arch_id"] = model.arch_id;
    entry["param_count"] = nn::param_count(model);
    entry["blob"] = blob;
    if (mask) {
      const std::string mask_file = name + ".mask.json";
      std::ofstream mout(dir / mask_file);
      if (!mout)
        throw std::runtime_error("cannot write " +
                                 (dir / mask_file).string());
      mout << pruner::mask_to_json(*mask) << '\n';
      entry["mask"] = mask_file;
    }
    manifest["models"].push_back(std::move(entry));
  }

  void finish() const {
    std::ofstream out(dir / "manifest.json");
    if (!out)
      throw std::runtime_error("cannot write " +
                               (dir / "manifest.json").string());
    out << manifest.dump(2) << '\n';
  }
};

int run_loaded(const Config& cfg, const fs::path& run_dir) {
  const LoadedData loaded = load_experiment_data(cfg);
  const auto& parts = loaded.parts;

  fs::create_directories(run_dir);
  {
    std::ofstream cj(run_dir / "config.json");
    if (!cj) throw std::runtime_error("cannot write config.json");
    cj << config_to_json(cfg) << '\n';
  }
  data::write_partition_manifest(parts, (run_dir / "partition.json").string());

  std::ofstream mcsv(run_dir / "metrics.csv");
  if (!mcsv) throw std::runtime_error("cannot write metrics.csv");
  mcsv << std::setprecision(12);
  mcsv << "round,stage,client_id,train_loss,test_acc,effective_size,cluster\n";
  fed::MetricsSink metrics = [&mcsv](const fed::MetricRow& r) {
    mcsv << r.round << ',' << r.stage << ',' << r.client_id << ','
         << r.train_loss << ',';
    if (r.test_acc >= 0) mcsv << r.test_acc;
    mcsv << ',' << r.effective_size << ',';
    if (r.cluster >= 0) mcsv << r.cluster;
    mcsv << '\n';
  };

  std::ofstream acsv(run_dir / "assignments.csv");
  if (!acsv) throw std::runtime_error("cannot write assignments.csv");
  acsv << std::setprecision(12);
  acsv << "round,client_id,chosen";
  if (cfg.algo == "safl")
    for (int k = 0; k < cfg.clusters; ++k) acsv << ",loss_" << k;
  acsv << '\n';
  fed::AssignSink assigns = [&acsv](const clusterer::ClusterAssignment& a) {
    acsv << a.round << ',' << a.client_id << ',' << a.chosen;
    for (double l : a.losses) acsv << ',' << l;
    acsv << '\n';
  };

  comm::Ledger ledger;
  CheckpointWriter ckpt(run_dir);
  const int N = static_cast<int>(parts.size());
  std::vector<comm::PhaseReport> reconciliation;

  if (cfg.algo == "safl") {
    fed::StageOneConfig s1;
    s1.arch_id = cfg.arch;
    s1.clusters = cfg.clusters;
    s1.schedule = cfg.schedule;
    s1.guided.lambda = cfg.lambda;
    s1.guided.mu = cfg.mu;
    s1.guided.epochs = cfg.guided_epochs;
    s1.guided.lr = cfg.lr;
    s1.guided.batch_size = cfg.batch_size;
    s1.finetune_epochs = cfg.finetune_epochs;
    s1.seed = cfg.seed;
    s1.eval_every = cfg.eval_every;
    auto stage_one = fed::run_stage_one(parts, s1, ledger, metrics, assigns);

    fed::StageTwoConfig s2;
    s2.rounds = cfg.stage2_rounds;
    s2.local_epochs = cfg.local_epochs;
    s2.lr = cfg.lr;
    s2.batch_size = cfg.batch_size;
    s2.divide_by_n = cfg.stage2_divisor == "all_clients";
    s2.seed = cfg.seed;
    s2.eval_every = cfg.eval_every;
    s2.cluster_of = stage_one.cluster.membership;
    auto clients = fed::run_stage_two(std::move(stage_one.client_models),
                                      parts, s2, ledger, metrics);

    for (int i = 0; i < N; ++i)
      ckpt.add("client_" + std::to_string(i),
               clients[static_cast<size_t>(i)].model,
               &clients[static_cast<size_t>(i)].mask);
    for (size_t k = 0; k < stage_one.cluster.models.size(); ++k)
      ckpt.add("cluster_" + std::to_string(k),
               stage_one.cluster.models[k].model,
               &stage_one.cluster.models[k].mask);

    comm::CostModelInputs inp;
    inp.N = N;
    inp.K = cfg.clusters;
    inp.T = static_cast<int>(cfg.schedule.size());
    inp.G = cfg.stage2_rounds;
    inp.M = nn::param_count(clients.front().model);
    for (double r : cfg.schedule) inp.p.push_back(1.0 - r);
    reconciliation = comm::reconcile(ledger, inp);
  } else if (cfg.algo == "fedavg") {
    bench::BaselineConfig bc;
    bc.arch_id = cfg.arch;
    bc.rounds = cfg.stage2_rounds;
    bc.local_epochs = cfg.local_epochs;
    bc.lr = cfg.lr;
    bc.batch_size = cfg.batch_size;
    bc.seed = cfg.seed;
    bc.eval_every = cfg.eval_every;
    nn::Model global = bench::run_fedavg(parts, bc, ledger, metrics);
    ckpt.add("global", global, nullptr);
    const double m = static_cast<double>(nn::param_count(global));
    reconciliation =
        baseline_reconciliation(ledger, 0.0, 2.0 * cfg.stage2_rounds * m * N);
  } else if (cfg.algo == "fedbn") {
    bench::BaselineConfig bc;
    bc.arch_id = cfg.arch;
    bc.rounds = cfg.stage2_rounds;
    bc.local_epochs = cfg.local_epochs;
    bc.lr = cfg.lr;
    bc.batch_size = cfg.batch_size;
    bc.seed = cfg.seed;
    bc.eval_every = cfg.eval_every;
    auto clients = bench::run_fedbn(parts, bc, ledger, metrics);
    for (int i = 0; i < N; ++i)
      ckpt.add("client_" + std::to_string(i), clients[static_cast<size_t>(i)],
               nullptr);
    const double shared =
        static_cast<double>(bench::non_bn_param_count(clients.front()));
    reconciliation = baseline_reconciliation(
        ledger, 0.0, 2.0 * cfg.stage2_rounds * shared * N);
  } else {  // hermes_ablation
    bench::BaselineConfig bc;
    bc.arch_id = cfg.arch;
    bc.rounds = cfg.stage2_rounds;
    bc.local_epochs = cfg.local_epochs;
    bc.lr = cfg.lr;
    bc.batch_size = cfg.batch_size;
    bc.seed = cfg.seed;
    bc.eval_every = cfg.eval_every;
    bc.schedule = cfg.schedule;
    bc.lambda = cfg.lambda;
    bc.slim_epochs = cfg.guided_epochs;
    bc.finetune_epochs = cfg.finetune_epochs;
    bc.divide_by_n = cfg.stage2_divisor == "all_clients";
    auto clients = bench::run_hermes_ablation(parts, bc, ledger, metrics);
    for (int i = 0; i < N; ++i)
      ckpt.add("client_" + std::to_string(i),
               clients[static_cast<size_t>(i)].model,
               &clients[static_cast<size_t>(i)].mask);
    const double m =
        static_cast<double>(nn::param_count(clients.front().model));
    const double p_last = 1.0 - cfg.schedule.back();
    reconciliation = baseline_reconciliation(
        ledger, m * N, 2.0 * cfg.stage2_rounds * p_last * m * N);
  }

  ledger.write_csv((run_dir / "ledger.csv").string());
  comm::write_reconciliation(reconciliation,
                             (run_dir / "reconciliation.json").string());
  ckpt.finish();
  return 0;
}

}  // namespace

int run_experiment(const std::string& config_path) {
  Config cfg;
  try {
    cfg = load_config(config_path);
    if (cfg.output_dir.empty())
      throw std::invalid_argument("missing required key 'output_dir'");
  } catch (const std::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  }
  for (const auto& w : hygiene_warnings(cfg)) std::cerr << w << "\n";
  try {
    return run_loaded(cfg, fs::path(cfg.output_dir));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

namespace {

struct MetricsRowLite {
  int round = 0;
  int stage = 0;
  int client = 0;
  double train_loss = 0;
  bool has_acc = false;
  double acc = 0;
  uint64_t es = 0;
};

std::vector<MetricsRowLite> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) ||
      line != "round,stage,client_id,train_loss,test_acc,effective_size,cluster")
    throw std::runtime_error("bad metrics header in " + path.string());
  std::vector<MetricsRowLite> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f[7];
    for (int i = 0; i < 7; ++i) std::getline(ss, f[i], ',');
    MetricsRowLite r;
    r.round = std::stoi(f[0]);
    r.stage = std::stoi(f[1]);
    r.client = std::stoi(f[2]);
    r.train_loss = std::stod(f[3]);
    if (!f[4].empty()) {
      r.has_acc = true;
      r.acc = std::stod(f[4]);
    }
    r.es = std::stoull(f[5]);
    rows.push_back(r);
  }
  return rows;
}

struct RunRecord {
  std::string dir;
  std::string algo;
  uint64_t seed = 0;
  double rate = 0;  // final schedule entry, 0 when the algo never prunes
  int rounds = 0;   // stage-two rounds G
  int n_clients = 0;
  uint64_t m_ref = 0;  // full model size of the arch as run
  double final_acc = -1;
  double mean_es = 0;
  double comm_total = 0;
  bool complete = true;
  std::vector<std::string> issues;
  // (stage, round) -> mean accuracy over clients, in round order
  std::vector<std::tuple<int, int, double>> acc_series;
};

RunRecord summarize_run(const fs::path& dir) {
  RunRecord rec;
  rec.dir = dir.string();
  const auto rows = read_metrics(dir / "metrics.csv");

  Config cfg;
  if (fs::exists(dir / "config.json")) {
    std::ifstream in(dir / "config.json");
    std::stringstream ss;
    ss << in.rdbuf();
    cfg = parse_config(ss.str());
    rec.algo = cfg.algo;
    rec.seed = cfg.seed;
    rec.rounds = cfg.stage2_rounds;
    rec.n_clients = cfg.n_clients;
    if ((cfg.algo == "safl" || cfg.algo == "hermes_ablation") &&
        !cfg.schedule.empty())
      rec.rate = cfg.schedule.back();
    const std::string arch =
        cfg.algo == "fedavg" ? nn::nobn_variant(cfg.arch) : cfg.arch;
    rec.m_ref = nn::param_count(nn::make_model(arch, 1));
  } else {
    rec.complete = false;
    rec.issues.push_back("missing config.json in " + dir.string());
  }

  if (fs::exists(dir / "ledger.csv")) {
    const auto ledger = comm::Ledger::read_csv((dir / "ledger.csv").string());
    rec.comm_total = static_cast<double>(ledger.total());
  } else {
    rec.complete = false;
    rec.issues.push_back("missing ledger.csv in " + dir.string());
  }

  // mean accuracy over clients per evaluated (stage, round)
  std::map<std::pair<int, int>, std::pair<double, int>> acc_by_key;
  std::map<std::pair<int, int>, std::pair<double, int>> es_by_key;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.stage, r.round);
    auto& es = es_by_key[key];
    es.first += static_cast<double>(r.es);
    es.second += 1;
    if (r.has_acc) {
      auto& a = acc_by_key[key];
      a.first += r.acc;
      a.second += 1;
    }
  }
  for (const auto& kv : acc_by_key)
    rec.acc_series.emplace_back(kv.first.first, kv.first.second,
                                kv.second.first / kv.second.second);
  if (!acc_by_key.empty()) {
    const auto last = std::prev(acc_by_key.end());
    rec.final_acc = last->second.first / last->second.second;
    const auto& es = es_by_key[last->first];
    rec.mean_es = es.first / es.second;
  } else {
    rec.complete = false;
    rec.issues.push_back("no evaluated rounds in " + dir.string());
  }
  return rec;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0;
  for (double x : xs) s += x;
  return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_std(const std::vector<double>& xs) {
  if (xs.size() < 2) return 0.0;
  const double m = mean_of(xs);
  double s = 0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size() - 1));
}

}  // namespace

int emit_report(const std::string& run_dir) {
  try {
    const fs::path root(run_dir);
    if (!fs::is_directory(root))
      throw std::runtime_error("not a directory: " + run_dir);

    std::vector<fs::path> run_dirs;
    if (fs::exists(root / "metrics.csv")) run_dirs.push_back(root);
    for (const auto& entry : fs::recursive_directory_iterator(root))
      if (entry.is_regular_file() &&
          entry.path().filename() == "metrics.csv" &&
          entry.path().parent_path() != root)
        run_dirs.push_back(entry.path().parent_path());
    std::sort(run_dirs.begin(), run_dirs.end());
    if (run_dirs.empty())
      throw std::runtime_error("no metrics.csv found under " + run_dir);

    std::vector<RunRecord> recs;
    for (const auto& d : run_dirs) recs.push_back(summarize_run(d));

    const fs::path report_dir = root / "report";
    fs::create_directories(report_dir);

    {
      std::ofstream out(report_dir / "acc_vs_round.csv");
      out << std::setprecision(12);
      out << "algo,rate,seed,stage,round,mean_acc\n";
      for (const auto& rec : recs)
        for (const auto& [stage, round, acc] : rec.acc_series)
          out << rec.algo << ',' << rec.rate << ',' << rec.seed << ','
              << stage << ',' << round << ',' << acc << '\n';
    }
    {
      std::ofstream out(report_dir / "acc_vs_rate.csv");
      out << std::setprecision(12);
      out << "algo,rate,seed,final_acc\n";
      for (const auto& rec : recs)
        if (rec.final_acc >= 0)
          out << rec.algo << ',' << rec.rate << ',' << rec.seed << ','
              << rec.final_acc << '\n';
    }

    std::map<std::pair<std::string, double>, std::vector<const RunRecord*>>
        groups;
    for (const auto& rec : recs)
      groups[{rec.algo, rec.rate}].push_back(&rec);

    json summary;
    summary["runs"] = recs.size();
    summary["groups"] = json::array();
    bool partial = false;
    json issues = json::array();
    for (const auto& [key, members] : groups) {
      std::vector<double> accs, sizes, ratios;
      std::vector<uint64_t> seeds;
      for (const RunRecord* r : members) {
        if (r->final_acc >= 0) accs.push_back(r->final_acc);
        sizes.push_back(r->mean_es);
        seeds.push_back(r->seed);
        if (r->rounds > 0 && r->m_ref > 0)
          ratios.push_back(r->comm_total /
                           (2.0 * r->rounds *
                            static_cast<double>(r->m_ref) * r->n_clients));
        if (!r->complete) {
          partial = true;
          for (const auto& i : r->issues) issues.push_back(i);
        }
      }
      json g;
      g["algo"] = key.first;
      g["rate"] = key.second;
      g["seeds"] = seeds;
      g["mean_acc"] = mean_of(accs);
      g["std_acc"] = sample_std(accs);
      g["mean_effective_size"] = mean_of(sizes);
      if (!ratios.empty())
        g["comm_ratio_vs_fedavg"] = mean_of(ratios);
      else
        g["comm_ratio_vs_fedavg"] = nullptr;
      summary["groups"].push_back(std::move(g));
    }
    summary["partial"] = partial;
    summary["issues"] = issues;
    std::ofstream out(report_dir / "summary.json");
    if (!out) throw std::runtime_error("cannot write summary.json");
    out << summary.dump(2) << '\n';
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace safl::runner
