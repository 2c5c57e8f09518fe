#include <cstdint>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "safl/commledger.hpp"
#include "safl/runner.hpp"

int main(int argc, char** argv) {
  CLI::App app{"two-stage federated pruning simulator"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "execute an experiment config");
  run->add_option("config", config_path, "JSON config file")->required();

  std::string run_dir;
  auto* report =
      app.add_subcommand("report", "summarize one or more run directories");
  report->add_option("run_dir", run_dir, "directory holding run artifacts")
      ->required();

  auto* cost = app.add_subcommand(
      "costmodel", "print analytic communication costs and break-even G");
  int N = 0, K = 0, G = 0;
  uint64_t M = 0;
  std::vector<double> rates;
  cost->add_option("--N", N, "number of clients")->required();
  cost->add_option("--K", K, "number of clusters")->required();
  cost->add_option("--M", M, "full model parameter count")->required();
  cost->add_option("--G", G, "stage-two rounds")->required();
  cost->add_option("--rates", rates, "prune schedule r_0 .. r_{T-1}")
      ->required()
      ->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  if (run->parsed()) return safl::runner::run_experiment(config_path);
  if (report->parsed()) return safl::runner::emit_report(run_dir);

  try {
    safl::comm::CostModelInputs inp;
    inp.N = N;
    inp.K = K;
    inp.T = static_cast<int>(rates.size());
    inp.G = G;
    inp.M = M;
    for (double r : rates) {
      if (!(r >= 0.0 && r < 1.0))
        throw std::invalid_argument("rates must be in [0, 1), got " +
                                    std::to_string(r));
      inp.p.push_back(1.0 - r);
    }
    const auto terms = safl::comm::analytic_terms(inp);
    const double safl_cost = safl::comm::analytic_safl_cost(inp);
    const double fedavg_cost = safl::comm::analytic_fedavg_cost(inp);
    const auto be = safl::comm::breakeven_G(inp);

    std::cout << std::setprecision(15);
    std::cout << "N=" << N << " K=" << K << " T=" << inp.T << " G=" << G
              << " M=" << M << "\n";
    std::cout << "C_distribution = " << terms.distribution << "\n";
    std::cout << "C_download     = " << terms.download << "\n";
    std::cout << "C_upload       = " << terms.upload << "\n";
    std::cout << "C_update       = " << terms.update << "\n";
    std::cout << "C_SAFL         = " << safl_cost << "\n";
    std::cout << "C_FedAvg       = " << fedavg_cost << "\n";
    if (fedavg_cost > 0)
      std::cout << "SAFL/FedAvg    = " << safl_cost / fedavg_cost << "\n";
    if (be.finite)
      std::cout << "break-even: SAFL is cheaper once G > " << be.bound
                << "\n";
    else
      std::cout << "break-even: never (final retention p_{T-1} = 1)\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
