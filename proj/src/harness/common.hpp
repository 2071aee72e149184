#pragma once

#include <chrono>
#include <memory>

#include "rnnda/assimilation.hpp"
#include "rnnda/harness.hpp"
#include "rnnda/l96.hpp"
#include "rnnda/localization.hpp"
#include "rnnda/reservoir.hpp"

namespace rnnda::harness::detail {

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

l96::Dataset load_dataset(const Paths& out);
MacroParams configured_macro(const ExperimentConfig& cfg);
std::size_t configured_hidden_dim(const ExperimentConfig& cfg);

/// Owns whichever model the configuration selects.
struct LoadedModel {
  std::unique_ptr<ReservoirModel> rnn;
  std::unique_ptr<loc::LocalizedModel> local;
  std::unique_ptr<da::ForecastModel> forecaster;
  const da::ForecastModel& model() const { return *forecaster; }
};
LoadedModel load_model(const ExperimentConfig& cfg, const Paths& out);

void write_lines(const fs::path& path, const std::vector<std::string>& comments, const std::string& header,
                 const std::vector<std::string>& rows);

}  // namespace rnnda::harness::detail
