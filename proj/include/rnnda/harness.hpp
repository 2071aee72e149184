#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

namespace rnnda::harness {

namespace fs = std::filesystem;

struct SystemSection {
  std::size_t dim = 6;
  double forcing = 8.0;
  double dt = 0.01;
};

struct DataSection {
  std::size_t spinup_steps = 1000;
  std::size_t train_steps = 100000;
  std::size_t test_steps = 20000;
  bool export_csv = false;
};

struct ModelSection {
  std::string kind = "rnn";        // rnn | l96 (the numerical model)
  std::string preset = "model1";   // model1 | model2 | model3 | custom
  std::size_t hidden_dim = 0;      // 0: the preset's size
  double density = 0.01;
  double rho = 0.1, sigma_in = 0.1, leak = 1.0, log_beta = -13.815510557964274;  // custom only
  std::size_t washout = 1000;
  std::string macro = "given";     // given | optimize
  std::size_t patch_size = 0;      // 0: one global reservoir
  std::size_t halo = 4;
};

struct MacroSection {
  std::size_t forecasts = 100;
  std::size_t horizon = 1000;
  std::size_t sync_steps = 1000;
  std::size_t hidden_dim = 0;      // 0: model size, or 2000 for patch layouts
  std::size_t initial_points = 10;
  std::size_t iterations = 15;
  std::size_t batch = 4;
  std::size_t ei_starts = 100;
  std::string validation = "train";  // train | test
};

struct DaSection {
  std::string scheme = "etkf";     // free | di | etkf | 4dvar
  std::size_t ensemble_size = 10;
  double inflation = 1.2;
  double tau_obs = 0.02;
  double tau_da = 0.2;
  double sigma_noise = 0.5;
  double sigma_obs = 0.5;
  std::string obs_nodes = "0,1,3";  // comma list or "all"
  double duration = 100.0;
  double sigma_init = 0.5;
  std::size_t spinup_steps = 1000;
  double summary_start = 50.0;
  std::size_t outer_loops = 2;
  double sigma_b = 0.0;            // 0: sigma_obs
  double inner_tol = 1e-6;
  std::size_t inner_max_iter = 500;
  double initial_offset = 0.0;
  std::size_t initial_offset_steps = 100;
  double divergence_nrmse = 10.0;
  std::size_t divergence_cycles = 50;
};

struct EvaluateSection {
  std::size_t forecasts = 100000;
  double epsilon = 0.2;
  double max_lead = 10.0;          // MTU
  std::size_t sync_steps = 1000;
  std::size_t bins = 50;
  std::size_t ftle_ics = 100;
  double ftle_horizon = 5.0;       // MTU
  std::size_t ftle_warmup = 500;
  std::size_t lyapunov_steps = 20000;
  std::size_t corr_ics = 10;
  std::size_t corr_members = 100;
  double corr_sigma = 0.1;
  double corr_lead = 1.0;          // MTU
};

struct SweepSection {
  std::string name = "sweep";
  std::string grid;                // "da.sigma_noise=0.1,0.5;da.tau_obs=0.02,0.2"
};

struct ExperimentConfig {
  SystemSection system;
  DataSection data;
  ModelSection model;
  MacroSection macro;
  DaSection da;
  EvaluateSection evaluate;
  SweepSection sweep;
  std::uint64_t seed = 1;
  std::size_t jobs = 1;

  /// Sets "section.key" from text. Throws InvalidArgument on unknown keys
  /// or unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  /// key = value lines grouped in [sections]; parseable by load_config.
  std::string to_ini() const;
  nlohmann::json to_json() const;

  std::vector<std::size_t> observed_nodes() const;
  bool localized() const { return model.patch_size > 0; }
  /// Cross-field checks (step multiples, layout divisibility, lengths).
  void validate() const;
};

/// INI file (optional) followed by KEY=VALUE overrides in order.
ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides);
ExperimentConfig config_from_json(const nlohmann::json& j);

/// Default output root: $RNNDA_OUT, else ./rnnda_out.
fs::path default_output_root();

/// Exit status of a command.
enum class Status { kOk = 0, kError = 1, kDiverged = 2 };

struct Paths {
  fs::path root;
  fs::path data_root;   // defaults to root/data
  fs::path model_root;  // defaults to root/model
  fs::path data_dir() const { return data_root.empty() ? root / "data" : data_root; }
  fs::path model_dir() const { return model_root.empty() ? root / "model" : model_root; }
  fs::path run_dir() const { return root / "run"; }
  fs::path evaluate_dir() const { return root / "evaluate"; }
  fs::path sweep_dir() const { return root / "sweep"; }
};

Status cmd_generate(const ExperimentConfig& cfg, const Paths& out);
/// Requires the dataset from cmd_generate.
Status cmd_train(const ExperimentConfig& cfg, const Paths& out);
/// Requires the dataset and, for kind = rnn, the trained model.
Status cmd_run(const ExperimentConfig& cfg, const Paths& out);
Status cmd_evaluate(const ExperimentConfig& cfg, const Paths& out);
/// Grid over sweep.grid. Points that change data or model keys generate
/// and train in their own directory; the rest share the parent's.
Status cmd_sweep(const ExperimentConfig& cfg, const Paths& out);

/// "# "-prefixed provenance lines: verb, seed and the resolved config.
std::vector<std::string> provenance(const ExperimentConfig& cfg, const std::string& verb);

/// Parses sweep.grid into (key, values) axes.
std::vector<std::pair<std::string, std::vector<std::string>>> parse_grid(const std::string& grid);

}  // namespace rnnda::harness
