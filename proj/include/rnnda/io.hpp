#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "rnnda/localization.hpp"
#include "rnnda/reservoir.hpp"
#include "rnnda/trajectory.hpp"

namespace rnnda::io {

namespace fs = std::filesystem;

// Binary files are little-endian. Malformed input throws FormatError.

/// "RNNDA1", u64 D, u64 T, f64 dt, f64 t0, then the D x T states row by
/// row (all times of variable 0 first).
void write_dataset(const fs::path& path, const Trajectory& traj);
Trajectory read_dataset(const fs::path& path);
/// Header "t,x0,...,x{D-1}", one line per time step.
void write_dataset_csv(const fs::path& path, const Trajectory& traj);

/// "RNNDA-M1", u64 N, D_in, D_out, seed, f64 rho, sigma_in, leak, beta,
/// u64 nnz, nnz x (u64 row, u64 col, f64 value) for the unit-radius
/// recurrence, N x D_in input weights row by row, u64 trained flag and,
/// when set, D_out x N readout weights row by row.
void write_model(const fs::path& path, const ReservoirModel& model);
ReservoirModel read_model(const fs::path& path);

/// Writes one model file per patch next to `manifest` and a JSON manifest
/// with the layout, per-patch file names (relative) and seeds.
void write_localized(const fs::path& manifest, const loc::LocalizedModel& model);
loc::LocalizedModel read_localized(const fs::path& manifest);

void write_json(const fs::path& path, const nlohmann::json& j);
nlohmann::json read_json(const fs::path& path);

/// Creates parent directories.
void ensure_parent(const fs::path& path);

}  // namespace rnnda::io
