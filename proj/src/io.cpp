#include "rnnda/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "rnnda/errors.hpp"

namespace rnnda::io {

namespace {

constexpr char kDatasetMagic[] = "RNNDA1";
constexpr char kModelMagic[] = "RNNDA-M1";

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

class Writer {
 public:
  explicit Writer(const fs::path& p) : f_(p, std::ios::binary) {
    if (!f_) throw Error("cannot write " + p.string());
  }
  void bytes(const char* s, std::size_t n) { f_.write(s, static_cast<std::streamsize>(n)); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(v); }
  void finish(const fs::path& p) {
    f_.flush();
    if (!f_) throw Error("write failed: " + p.string());
  }

 private:
  template <class T>
  void put(T v) {
    v = to_little(v);
    f_.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
  std::ofstream f_;
};

class Reader {
 public:
  explicit Reader(const fs::path& p) : f_(p, std::ios::binary), path_(p.string()) {
    if (!f_) throw FormatError("cannot open " + path_);
  }
  void expect(const char* magic, std::size_t n) {
    std::string got(n, '\0');
    f_.read(got.data(), static_cast<std::streamsize>(n));
    if (!f_ || got != std::string(magic, n)) throw FormatError(path_ + ": bad magic");
  }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  void at_end() {
    f_.peek();
    if (!f_.eof()) throw FormatError(path_ + ": trailing bytes");
  }
  std::size_t remaining() {
    const auto here = f_.tellg();
    f_.seekg(0, std::ios::end);
    const auto end = f_.tellg();
    f_.seekg(here);
    return static_cast<std::size_t>(end - here);
  }
  const std::string& path() const { return path_; }

 private:
  template <class T>
  T get() {
    T v;
    f_.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!f_) throw FormatError(path_ + ": truncated");
    return to_little(v);
  }
  std::ifstream f_;
  std::string path_;
};

}  // namespace

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

void write_dataset(const fs::path& path, const Trajectory& traj) {
  ensure_parent(path);
  Writer w(path);
  w.bytes(kDatasetMagic, 6);
  w.u64(traj.dim());
  w.u64(traj.length());
  w.f64(traj.dt);
  w.f64(traj.t0);
  for (Eigen::Index i = 0; i < traj.states.rows(); ++i)
    for (Eigen::Index t = 0; t < traj.states.cols(); ++t) w.f64(traj.states(i, t));
  w.finish(path);
}

Trajectory read_dataset(const fs::path& path) {
  Reader r(path);
  r.expect(kDatasetMagic, 6);
  const auto d = r.u64(), t = r.u64();
  Trajectory traj;
  traj.dt = r.f64();
  traj.t0 = r.f64();
  if (d == 0 || t == 0 || r.remaining() != d * t * sizeof(double))
    throw FormatError(r.path() + ": size does not match header");
  traj.states.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(t));
  for (Eigen::Index i = 0; i < traj.states.rows(); ++i)
    for (Eigen::Index k = 0; k < traj.states.cols(); ++k) traj.states(i, k) = r.f64();
  traj.validate();
  return traj;
}

void write_dataset_csv(const fs::path& path, const Trajectory& traj) {
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << 't';
  for (std::size_t i = 0; i < traj.dim(); ++i) f << ",x" << i;
  f << '\n' << std::setprecision(17);
  for (std::size_t k = 0; k < traj.length(); ++k) {
    f << traj.time(k);
    for (Eigen::Index i = 0; i < traj.states.rows(); ++i) f << ',' << traj.states(i, static_cast<Eigen::Index>(k));
    f << '\n';
  }
}

void write_model(const fs::path& path, const ReservoirModel& m) {
  ensure_parent(path);
  Writer w(path);
  w.bytes(kModelMagic, 8);
  w.u64(m.hidden_dim());
  w.u64(m.input_dim());
  w.u64(m.output_dim());
  w.u64(m.seed());
  const auto& p = m.macro();
  for (double v : {p.rho, p.sigma_in, p.leak, p.beta}) w.f64(v);
  const auto& a = m.w_res();
  w.u64(a.nnz());
  for (std::size_t i = 0; i < a.rows; ++i)
    for (auto k = a.row_ptr[i]; k < a.row_ptr[i + 1]; ++k) {
      w.u64(i);
      w.u64(static_cast<std::uint64_t>(a.col_idx[k]));
      w.f64(a.values[k]);
    }
  for (Eigen::Index i = 0; i < m.w_in().rows(); ++i)
    for (Eigen::Index j = 0; j < m.w_in().cols(); ++j) w.f64(m.w_in()(i, j));
  w.u64(m.trained() ? 1 : 0);
  if (m.trained())
    for (Eigen::Index i = 0; i < m.w_out().rows(); ++i)
      for (Eigen::Index j = 0; j < m.w_out().cols(); ++j) w.f64(m.w_out()(i, j));
  w.finish(path);
}

ReservoirModel read_model(const fs::path& path) {
  Reader r(path);
  r.expect(kModelMagic, 8);
  const auto n = r.u64(), d_in = r.u64(), d_out = r.u64(), seed = r.u64();
  MacroParams p;
  p.rho = r.f64();
  p.sigma_in = r.f64();
  p.leak = r.f64();
  p.beta = r.f64();
  const auto nnz = r.u64();
  if (n == 0 || n > (1ULL << 31) || nnz > n * n || r.remaining() < nnz * 24 + n * d_in * 8 + 8)
    throw FormatError(path.string() + ": inconsistent header");
  std::vector<Triplet> trip;
  trip.reserve(nnz);
  for (std::uint64_t k = 0; k < nnz; ++k) {
    const auto i = r.u64(), j = r.u64();
    const double v = r.f64();
    if (i >= n || j >= n) throw FormatError(path.string() + ": recurrence index out of range");
    trip.push_back({i, j, v});
  }
  Mat w_in(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d_in));
  for (Eigen::Index i = 0; i < w_in.rows(); ++i)
    for (Eigen::Index j = 0; j < w_in.cols(); ++j) w_in(i, j) = r.f64();
  RowMat w_out;
  const auto trained = r.u64();
  if (trained > 1) throw FormatError(path.string() + ": bad readout flag");
  if (trained) {
    w_out.resize(static_cast<Eigen::Index>(d_out), static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < w_out.rows(); ++i)
      for (Eigen::Index j = 0; j < w_out.cols(); ++j) w_out(i, j) = r.f64();
  }
  r.at_end();
  ReservoirModel m(csr_from_triplets(n, n, std::move(trip)), std::move(w_in), std::move(w_out), p, seed);
  m.set_output_dim(d_out);
  return m;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  ensure_parent(path);
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << std::setw(2) << j << '\n';
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream f(path);
  if (!f) throw FormatError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_localized(const fs::path& manifest, const loc::LocalizedModel& model) {
  const auto& layout = model.layout();
  nlohmann::json j;
  j["format"] = "rnnda-layout";
  j["dim"] = layout.dim;
  j["patch_size"] = layout.patch_size;
  j["halo"] = layout.halo;
  j["hidden_dim"] = model.patch_hidden_dim();
  const std::string stem = manifest.stem().string();
  for (std::size_t p = 0; p < layout.count(); ++p) {
    std::ostringstream name;
    name << stem << ".patch" << std::setw(2) << std::setfill('0') << p << ".rnnda";
    write_model(manifest.parent_path() / name.str(), model.models()[p]);
    j["patches"].push_back({{"file", name.str()}, {"seed", model.models()[p].seed()}});
  }
  write_json(manifest, j);
}

loc::LocalizedModel read_localized(const fs::path& manifest) {
  const auto j = read_json(manifest);
  try {
    if (j.at("format") != "rnnda-layout") throw FormatError(manifest.string() + ": not a layout manifest");
    auto layout = loc::build_layout(j.at("dim"), j.at("patch_size"), j.at("halo"));
    const auto& patches = j.at("patches");
    if (patches.size() != layout.count()) throw FormatError(manifest.string() + ": patch count mismatch");
    std::vector<ReservoirModel> models;
    for (const auto& p : patches) models.push_back(read_model(manifest.parent_path() / p.at("file").get<std::string>()));
    return loc::LocalizedModel(std::move(layout), std::move(models));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
}

}  // namespace rnnda::io
