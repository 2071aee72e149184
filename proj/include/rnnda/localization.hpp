#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rnnda/assimilation.hpp"
#include "rnnda/reservoir.hpp"
#include "rnnda/trajectory.hpp"

namespace rnnda::loc {

struct Patch {
  std::vector<std::size_t> core;   // owned nodes, contiguous
  std::vector<std::size_t> input;  // halo, core, halo in cyclic order
};

/// Cyclic decomposition of D nodes into equal patches with halos.
struct PatchLayout {
  std::size_t dim = 0;
  std::size_t patch_size = 0;
  std::size_t halo = 0;
  std::vector<Patch> patches;

  std::size_t count() const { return patches.size(); }
  std::size_t input_dim() const { return patch_size + 2 * halo; }
};

/// Throws LayoutError when D is not a multiple of patch_size or an input
/// window would wrap onto itself.
PatchLayout build_layout(std::size_t dim, std::size_t patch_size, std::size_t halo);

/// Input window of every patch copied out of a global state.
std::vector<Vec> gather_inputs(const PatchLayout& layout, const Vec& x);
void gather_input(const PatchLayout& layout, std::size_t patch, const Vec& x, Vec& out);
/// Same for every column of a D x T matrix.
Mat gather_series(const PatchLayout& layout, std::size_t patch, const Mat& x);

/// Observations a patch assimilates: those whose node lies in its input window.
struct LocalObs {
  std::vector<std::size_t> rows;       // positions in the global observation vector
  std::vector<std::size_t> nodes;      // global node indices
  std::vector<std::size_t> positions;  // offsets inside the input window
  Vec values;
};

LocalObs select_local_obs(const PatchLayout& layout, std::size_t patch,
                          const std::vector<std::size_t>& obs_indices, const Vec& values);

/// One reservoir per patch. Forecast steps assemble the global state from
/// every patch's core readout and feed each patch its input window, so halo
/// inputs are the neighbours' current readouts. The analysis state is the
/// concatenation of the patch hidden states.
class LocalizedModel final : public da::ForecastModel {
 public:
  LocalizedModel(PatchLayout layout, std::vector<ReservoirModel> models);

  const PatchLayout& layout() const { return layout_; }
  const std::vector<ReservoirModel>& models() const { return models_; }
  std::size_t patch_hidden_dim() const { return hidden_; }

  std::size_t state_dim() const override { return hidden_ * layout_.count(); }
  std::size_t system_dim() const override { return layout_.dim; }
  void to_system(const Vec& state, Vec& x) const override;
  void to_system_transpose(const Vec& x, Vec& state) const override;
  void step_from(Vec& state, const Vec& x_in) const override;
  Vec spin_up(const Mat& history) const override;
  std::vector<da::AnalysisDomain> analysis_domains() const override;
  std::string name() const override { return "localized_rnn"; }

 private:
  PatchLayout layout_;
  std::vector<ReservoirModel> models_;
  std::size_t hidden_;
};

struct LocalTrainingSpec {
  std::size_t hidden_dim = 2000;
  double density = 0.01;
  std::uint64_t seed = 1;   // patch p uses derive_seed(seed, kReservoir, p)
  std::size_t washout = 1000;
  std::size_t jobs = 1;
};

/// Trains one reservoir per patch to predict its core one step ahead from
/// its input window. All patches share the macro parameters.
std::vector<ReservoirModel> train_local_models(const PatchLayout& layout, const Trajectory& train,
                                               const MacroParams& macro, const LocalTrainingSpec& spec);

/// ETKF cycling with one local analysis per patch.
da::CycleResult letkf_cycle(const LocalizedModel& model, const Trajectory& spinup_truth,
                            const Trajectory& truth, const ObservationSequence& obs, const Vec& clim_std,
                            da::CycleConfig cfg);

}  // namespace rnnda::loc
