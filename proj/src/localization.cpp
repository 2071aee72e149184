#include "rnnda/localization.hpp"

#include <algorithm>

#include "rnnda/errors.hpp"
#include "rnnda/parallel.hpp"
#include "rnnda/rng.hpp"

namespace rnnda::loc {

PatchLayout build_layout(std::size_t dim, std::size_t patch_size, std::size_t halo) {
  if (patch_size == 0 || dim == 0) throw LayoutError("layout needs positive sizes");
  if (dim % patch_size != 0) throw LayoutError("domain size is not a multiple of the patch size");
  if (patch_size + 2 * halo > dim) throw LayoutError("input window is wider than the domain");
  PatchLayout l{dim, patch_size, halo, {}};
  for (std::size_t first = 0; first < dim; first += patch_size) {
    Patch p;
    for (std::size_t i = 0; i < patch_size; ++i) p.core.push_back(first + i);
    for (std::size_t i = 0; i < patch_size + 2 * halo; ++i) p.input.push_back((first + dim - halo + i) % dim);
    l.patches.push_back(std::move(p));
  }
  return l;
}

void gather_input(const PatchLayout& layout, std::size_t patch, const Vec& x, Vec& out) {
  if (static_cast<std::size_t>(x.size()) != layout.dim) throw InvalidDimension("gather: state size");
  const auto& in = layout.patches.at(patch).input;
  out.resize(static_cast<Eigen::Index>(in.size()));
  for (std::size_t i = 0; i < in.size(); ++i) out[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(in[i])];
}

std::vector<Vec> gather_inputs(const PatchLayout& layout, const Vec& x) {
  std::vector<Vec> out(layout.count());
  for (std::size_t p = 0; p < layout.count(); ++p) gather_input(layout, p, x, out[p]);
  return out;
}

Mat gather_series(const PatchLayout& layout, std::size_t patch, const Mat& x) {
  if (static_cast<std::size_t>(x.rows()) != layout.dim) throw InvalidDimension("gather: state size");
  const auto& in = layout.patches.at(patch).input;
  Mat out(static_cast<Eigen::Index>(in.size()), x.cols());
  for (std::size_t i = 0; i < in.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(in[i]));
  return out;
}

LocalObs select_local_obs(const PatchLayout& layout, std::size_t patch,
                          const std::vector<std::size_t>& obs_indices, const Vec& values) {
  if (static_cast<std::size_t>(values.size()) != obs_indices.size()) throw InvalidDimension("local obs: sizes");
  const auto& in = layout.patches.at(patch).input;
  LocalObs out;
  std::vector<double> vals;
  for (std::size_t r = 0; r < obs_indices.size(); ++r) {
    const auto it = std::find(in.begin(), in.end(), obs_indices[r]);
    if (it == in.end()) continue;
    out.rows.push_back(r);
    out.nodes.push_back(obs_indices[r]);
    out.positions.push_back(static_cast<std::size_t>(it - in.begin()));
    vals.push_back(values[static_cast<Eigen::Index>(r)]);
  }
  out.values = Eigen::Map<const Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
  return out;
}

LocalizedModel::LocalizedModel(PatchLayout layout, std::vector<ReservoirModel> models)
    : layout_(std::move(layout)), models_(std::move(models)) {
  if (models_.size() != layout_.count()) throw LayoutError("one model per patch required");
  hidden_ = models_.front().hidden_dim();
  for (const auto& m : models_) {
    if (!m.trained()) throw NotTrained("local model has no readout");
    if (m.hidden_dim() != hidden_) throw LayoutError("local models must share the hidden dimension");
    if (m.input_dim() != layout_.input_dim() || m.output_dim() != layout_.patch_size)
      throw LayoutError("local model dimensions do not match the layout");
  }
}

void LocalizedModel::to_system(const Vec& state, Vec& x) const {
  x.resize(static_cast<Eigen::Index>(layout_.dim));
  const auto n = static_cast<Eigen::Index>(hidden_);
  Vec core;
  for (std::size_t p = 0; p < layout_.count(); ++p) {
    models_[p].readout(state.segment(static_cast<Eigen::Index>(p) * n, n), core);
    const auto& c = layout_.patches[p].core;
    for (std::size_t i = 0; i < c.size(); ++i) x[static_cast<Eigen::Index>(c[i])] = core[static_cast<Eigen::Index>(i)];
  }
}

void LocalizedModel::to_system_transpose(const Vec& x, Vec& state) const {
  state.resize(static_cast<Eigen::Index>(state_dim()));
  const auto n = static_cast<Eigen::Index>(hidden_);
  Vec core(static_cast<Eigen::Index>(layout_.patch_size)), s;
  for (std::size_t p = 0; p < layout_.count(); ++p) {
    const auto& c = layout_.patches[p].core;
    for (std::size_t i = 0; i < c.size(); ++i) core[static_cast<Eigen::Index>(i)] = x[static_cast<Eigen::Index>(c[i])];
    models_[p].readout_transpose(core, s);
    state.segment(static_cast<Eigen::Index>(p) * n, n) = s;
  }
}

void LocalizedModel::step_from(Vec& state, const Vec& x_in) const {
  const auto n = static_cast<Eigen::Index>(hidden_);
  Vec in, s;
  for (std::size_t p = 0; p < layout_.count(); ++p) {
    gather_input(layout_, p, x_in, in);
    auto seg = state.segment(static_cast<Eigen::Index>(p) * n, n);
    s = seg;
    models_[p].step(s, in, s);
    seg = s;
  }
}

Vec LocalizedModel::spin_up(const Mat& history) const {
  if (history.cols() < 2) throw InvalidArgument("spin-up needs at least two columns");
  const auto n = static_cast<Eigen::Index>(hidden_);
  Vec state(static_cast<Eigen::Index>(state_dim()));
  const Mat driving = history.leftCols(history.cols() - 1);
  for (std::size_t p = 0; p < layout_.count(); ++p) {
    state.segment(static_cast<Eigen::Index>(p) * n, n) =
        models_[p].synchronize_final(gather_series(layout_, p, driving), models_[p].zero_state());
  }
  return state;
}

std::vector<da::AnalysisDomain> LocalizedModel::analysis_domains() const {
  std::vector<da::AnalysisDomain> out;
  const auto n = static_cast<Eigen::Index>(hidden_);
  for (std::size_t p = 0; p < layout_.count(); ++p) {
    std::vector<std::size_t> vis = layout_.patches[p].input;
    std::sort(vis.begin(), vis.end());
    out.push_back({static_cast<Eigen::Index>(p) * n, n, std::move(vis)});
  }
  return out;
}

std::vector<ReservoirModel> train_local_models(const PatchLayout& layout, const Trajectory& train,
                                               const MacroParams& macro, const LocalTrainingSpec& spec) {
  if (train.dim() != layout.dim) throw InvalidDimension("local training: trajectory dimension");
  if (train.length() <= spec.washout + 1) throw InvalidArgument("local training: trajectory too short");
  const auto t = static_cast<Eigen::Index>(train.length());
  std::vector<ReservoirModel> models(layout.count());
  parallel_for(layout.count(), spec.jobs, [&](std::size_t p) {
    ReservoirSpec rs{spec.hidden_dim, layout.input_dim(), layout.patch_size, spec.density,
                     derive_seed(spec.seed, Stream::kReservoir, p)};
    ReservoirModel m = ReservoirModel::create(rs, macro);
    const Mat inputs = gather_series(layout, p, train.states.leftCols(t - 1));
    Mat targets(static_cast<Eigen::Index>(layout.patch_size), t - 1);
    for (std::size_t i = 0; i < layout.patch_size; ++i)
      targets.row(static_cast<Eigen::Index>(i)) =
          train.states.row(static_cast<Eigen::Index>(layout.patches[p].core[i])).rightCols(t - 1);
    fit_readout(m, inputs, targets, spec.washout);
    models[p] = std::move(m);
  });
  return models;
}

da::CycleResult letkf_cycle(const LocalizedModel& model, const Trajectory& spinup_truth, const Trajectory& truth,
                            const ObservationSequence& obs, const Vec& clim_std, da::CycleConfig cfg) {
  cfg.scheme = da::Scheme::kEtkf;
  return da::cycle_da(model, spinup_truth, truth, obs, clim_std, cfg);
}

}  // namespace rnnda::loc
