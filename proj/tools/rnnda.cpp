#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "rnnda/errors.hpp"
#include "rnnda/harness.hpp"

namespace h = rnnda::harness;

int main(int argc, char** argv) {
  CLI::App app{"Reservoir RNN surrogates for Lorenz-96 data assimilation"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::string out_dir;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "INI configuration file")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output root (default $RNNDA_OUT or ./rnnda_out)");
  app.add_option("--override", overrides, "section.key=value, applied after the file")->take_all()->allow_extra_args(false);
  app.add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
  bool print_config = false;
  app.add_flag("--print-config", print_config, "print the resolved configuration and exit");

  using Command = h::Status (*)(const h::ExperimentConfig&, const h::Paths&);
  const std::vector<std::tuple<std::string, std::string, Command>> verbs{
      {"generate", "integrate Lorenz-96 and write the train/test datasets", h::cmd_generate},
      {"train", "fit the reservoir readout, optionally after an EGO macro search", h::cmd_train},
      {"run", "cycle data assimilation over the test trajectory", h::cmd_run},
      {"evaluate", "valid prediction times, FTLEs and forecast error correlations", h::cmd_evaluate},
      {"sweep", "run a grid of configurations (sweep.grid)", h::cmd_sweep},
  };
  Command chosen = nullptr;
  for (const auto& [name, help, cmd] : verbs) {
    auto* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->callback([&chosen, c = cmd] { chosen = c; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto cfg = h::load_config(config_path, overrides);
    if (seed) cfg.seed = *seed;
    if (jobs) cfg.jobs = *jobs;
    if (print_config) {
      std::cout << cfg.to_ini();
      return 0;
    }
    const h::Paths paths{out_dir.empty() ? h::default_output_root() : rnnda::harness::fs::path(out_dir), {}, {}};
    const auto status = chosen(cfg, paths);
    if (status == h::Status::kDiverged) std::cerr << "rnnda: completed with divergence\n";
    return static_cast<int>(status);
  } catch (const std::exception& e) {
    std::cerr << "rnnda: " << e.what() << '\n';
    return 1;
  }
}
