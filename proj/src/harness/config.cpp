#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <map>
#include <sstream>

#include "rnnda/errors.hpp"
#include "rnnda/harness.hpp"

namespace rnnda::harness {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::string format(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  auto r = std::from_chars(t.data(), t.data() + t.size(), v);
  if (r.ec != std::errc() || r.ptr != t.data() + t.size())
    throw InvalidArgument("cannot parse '" + text + "' for " + key);
  return v;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class T>
Field bind(T ExperimentConfig::*section, auto T::*member) {
  using V = std::remove_reference_t<decltype(std::declval<T&>().*member)>;
  Field f;
  f.get = [=](const ExperimentConfig& c) -> std::string {
    const V& v = c.*section.*member;
    if constexpr (std::is_same_v<V, std::string>) return v;
    else if constexpr (std::is_same_v<V, bool>) return v ? "true" : "false";
    else if constexpr (std::is_same_v<V, double>) return format(v);
    else return std::to_string(v);
  };
  f.set = [=](ExperimentConfig& c, const std::string& text) {
    V& v = c.*section.*member;
    if constexpr (std::is_same_v<V, std::string>) v = trim(text);
    else if constexpr (std::is_same_v<V, bool>) {
      const auto t = trim(text);
      if (t == "true" || t == "1" || t == "yes") v = true;
      else if (t == "false" || t == "0" || t == "no") v = false;
      else throw InvalidArgument("cannot parse '" + text + "' as a boolean");
    } else {
      v = parse_number<V>("value", text);
    }
  };
  return f;
}

const std::map<std::string, Field>& registry() {
  using C = ExperimentConfig;
  static const std::map<std::string, Field> r = [] {
    std::map<std::string, Field> m;
    m["system.dim"] = bind(&C::system, &SystemSection::dim);
    m["system.forcing"] = bind(&C::system, &SystemSection::forcing);
    m["system.dt"] = bind(&C::system, &SystemSection::dt);
    m["data.spinup_steps"] = bind(&C::data, &DataSection::spinup_steps);
    m["data.train_steps"] = bind(&C::data, &DataSection::train_steps);
    m["data.test_steps"] = bind(&C::data, &DataSection::test_steps);
    m["data.export_csv"] = bind(&C::data, &DataSection::export_csv);
    m["model.kind"] = bind(&C::model, &ModelSection::kind);
    m["model.preset"] = bind(&C::model, &ModelSection::preset);
    m["model.hidden_dim"] = bind(&C::model, &ModelSection::hidden_dim);
    m["model.density"] = bind(&C::model, &ModelSection::density);
    m["model.rho"] = bind(&C::model, &ModelSection::rho);
    m["model.sigma_in"] = bind(&C::model, &ModelSection::sigma_in);
    m["model.leak"] = bind(&C::model, &ModelSection::leak);
    m["model.log_beta"] = bind(&C::model, &ModelSection::log_beta);
    m["model.washout"] = bind(&C::model, &ModelSection::washout);
    m["model.macro"] = bind(&C::model, &ModelSection::macro);
    m["model.patch_size"] = bind(&C::model, &ModelSection::patch_size);
    m["model.halo"] = bind(&C::model, &ModelSection::halo);
    m["macro.forecasts"] = bind(&C::macro, &MacroSection::forecasts);
    m["macro.horizon"] = bind(&C::macro, &MacroSection::horizon);
    m["macro.sync_steps"] = bind(&C::macro, &MacroSection::sync_steps);
    m["macro.hidden_dim"] = bind(&C::macro, &MacroSection::hidden_dim);
    m["macro.initial_points"] = bind(&C::macro, &MacroSection::initial_points);
    m["macro.iterations"] = bind(&C::macro, &MacroSection::iterations);
    m["macro.batch"] = bind(&C::macro, &MacroSection::batch);
    m["macro.ei_starts"] = bind(&C::macro, &MacroSection::ei_starts);
    m["macro.validation"] = bind(&C::macro, &MacroSection::validation);
    m["da.scheme"] = bind(&C::da, &DaSection::scheme);
    m["da.ensemble_size"] = bind(&C::da, &DaSection::ensemble_size);
    m["da.inflation"] = bind(&C::da, &DaSection::inflation);
    m["da.tau_obs"] = bind(&C::da, &DaSection::tau_obs);
    m["da.tau_da"] = bind(&C::da, &DaSection::tau_da);
    m["da.sigma_noise"] = bind(&C::da, &DaSection::sigma_noise);
    m["da.sigma_obs"] = bind(&C::da, &DaSection::sigma_obs);
    m["da.obs_nodes"] = bind(&C::da, &DaSection::obs_nodes);
    m["da.duration"] = bind(&C::da, &DaSection::duration);
    m["da.sigma_init"] = bind(&C::da, &DaSection::sigma_init);
    m["da.spinup_steps"] = bind(&C::da, &DaSection::spinup_steps);
    m["da.summary_start"] = bind(&C::da, &DaSection::summary_start);
    m["da.outer_loops"] = bind(&C::da, &DaSection::outer_loops);
    m["da.sigma_b"] = bind(&C::da, &DaSection::sigma_b);
    m["da.inner_tol"] = bind(&C::da, &DaSection::inner_tol);
    m["da.inner_max_iter"] = bind(&C::da, &DaSection::inner_max_iter);
    m["da.initial_offset"] = bind(&C::da, &DaSection::initial_offset);
    m["da.initial_offset_steps"] = bind(&C::da, &DaSection::initial_offset_steps);
    m["da.divergence_nrmse"] = bind(&C::da, &DaSection::divergence_nrmse);
    m["da.divergence_cycles"] = bind(&C::da, &DaSection::divergence_cycles);
    m["evaluate.forecasts"] = bind(&C::evaluate, &EvaluateSection::forecasts);
    m["evaluate.epsilon"] = bind(&C::evaluate, &EvaluateSection::epsilon);
    m["evaluate.max_lead"] = bind(&C::evaluate, &EvaluateSection::max_lead);
    m["evaluate.sync_steps"] = bind(&C::evaluate, &EvaluateSection::sync_steps);
    m["evaluate.bins"] = bind(&C::evaluate, &EvaluateSection::bins);
    m["evaluate.ftle_ics"] = bind(&C::evaluate, &EvaluateSection::ftle_ics);
    m["evaluate.ftle_horizon"] = bind(&C::evaluate, &EvaluateSection::ftle_horizon);
    m["evaluate.ftle_warmup"] = bind(&C::evaluate, &EvaluateSection::ftle_warmup);
    m["evaluate.lyapunov_steps"] = bind(&C::evaluate, &EvaluateSection::lyapunov_steps);
    m["evaluate.corr_ics"] = bind(&C::evaluate, &EvaluateSection::corr_ics);
    m["evaluate.corr_members"] = bind(&C::evaluate, &EvaluateSection::corr_members);
    m["evaluate.corr_sigma"] = bind(&C::evaluate, &EvaluateSection::corr_sigma);
    m["evaluate.corr_lead"] = bind(&C::evaluate, &EvaluateSection::corr_lead);
    m["sweep.name"] = bind(&C::sweep, &SweepSection::name);
    m["sweep.grid"] = bind(&C::sweep, &SweepSection::grid);
    m["run.seed"] = Field{[](C& c, const std::string& t) { c.seed = parse_number<std::uint64_t>("run.seed", t); },
                          [](const C& c) { return std::to_string(c.seed); }};
    m["run.jobs"] = Field{[](C& c, const std::string& t) { c.jobs = parse_number<std::size_t>("run.jobs", t); },
                          [](const C& c) { return std::to_string(c.jobs); }};
    return m;
  }();
  return r;
}

const Field& field(const std::string& key) {
  const auto it = registry().find(key);
  if (it == registry().end()) throw InvalidArgument("unknown configuration key '" + key + "'");
  return it->second;
}

bool multiple_of(double a, double b) {
  const double r = a / b;
  return std::round(r) >= 1.0 && std::abs(r - std::round(r)) < 1e-9 * std::max(1.0, r);
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  try {
    field(key).set(*this, value);
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(key + ": " + e.what());
  }
}

std::string ExperimentConfig::get(const std::string& key) const { return field(key).get(*this); }

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> k;
  for (const auto& [name, f] : registry()) k.push_back(name);
  return k;
}

std::string ExperimentConfig::to_ini() const {
  std::map<std::string, std::vector<std::pair<std::string, std::string>>> sections;
  for (const auto& [name, f] : registry()) {
    const auto dot = name.find('.');
    sections[name.substr(0, dot)].emplace_back(name.substr(dot + 1), f.get(*this));
  }
  std::ostringstream os;
  for (const auto& [sec, entries] : sections) {
    os << '[' << sec << "]\n";
    for (const auto& [k, v] : entries) os << k << " = " << v << '\n';
  }
  return os.str();
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  for (const auto& [name, f] : registry()) {
    const auto dot = name.find('.');
    j[name.substr(0, dot)][name.substr(dot + 1)] = f.get(*this);
  }
  return j;
}

ExperimentConfig config_from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  for (const auto& [sec, entries] : j.items())
    for (const auto& [k, v] : entries.items()) c.set(sec + "." + k, v.is_string() ? v.get<std::string>() : v.dump());
  return c;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  ExperimentConfig c;
  if (!path.empty()) {
    boost::property_tree::ptree tree;
    try {
      boost::property_tree::ini_parser::read_ini(path, tree);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw InvalidArgument(std::string("config: ") + e.what());
    }
    for (const auto& [sec, body] : tree) {
      if (body.empty()) throw InvalidArgument("config: key '" + sec + "' outside a section");
      for (const auto& [k, v] : body) c.set(sec + "." + k, v.data());
    }
  }
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw InvalidArgument("override '" + o + "' is not KEY=VALUE");
    c.set(trim(o.substr(0, eq)), o.substr(eq + 1));
  }
  return c;
}

std::vector<std::size_t> ExperimentConfig::observed_nodes() const {
  std::vector<std::size_t> nodes;
  if (trim(da.obs_nodes) == "all") {
    for (std::size_t i = 0; i < system.dim; ++i) nodes.push_back(i);
    return nodes;
  }
  std::stringstream ss(da.obs_nodes);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!trim(item).empty()) nodes.push_back(parse_number<std::size_t>("da.obs_nodes", item));
  return nodes;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw InvalidArgument("config: " + m); };
  if (system.dim < 4) fail("system.dim must be at least 4");
  if (!(system.dt > 0.0)) fail("system.dt must be positive");
  if (model.kind != "rnn" && model.kind != "l96") fail("model.kind must be rnn or l96");
  if (model.preset != "model1" && model.preset != "model2" && model.preset != "model3" && model.preset != "custom")
    fail("model.preset must be model1, model2, model3 or custom");
  if (model.macro != "given" && model.macro != "optimize") fail("model.macro must be given or optimize");
  if (macro.validation != "train" && macro.validation != "test") fail("macro.validation must be train or test");
  if (localized()) {
    if (system.dim % model.patch_size != 0) fail("system.dim must be a multiple of model.patch_size");
    if (model.patch_size + 2 * model.halo > system.dim) fail("patch plus halo exceeds the domain");
  }
  if (data.train_steps <= model.washout + 1) fail("data.train_steps must exceed model.washout");
  const auto nodes = observed_nodes();
  for (auto n : nodes)
    if (n >= system.dim) fail("da.obs_nodes contains " + std::to_string(n) + " outside the domain");
  if (!multiple_of(da.tau_obs, system.dt)) fail("da.tau_obs must be a multiple of system.dt");
  if (!multiple_of(da.tau_da, system.dt)) fail("da.tau_da must be a multiple of system.dt");
  if (!multiple_of(da.tau_da, da.tau_obs)) fail("da.tau_da must be a multiple of da.tau_obs");
  if (da.scheme != "free" && da.scheme != "di" && da.scheme != "etkf" && da.scheme != "4dvar")
    fail("da.scheme must be free, di, etkf or 4dvar");
  if (da.scheme == "etkf" && da.ensemble_size < 2) fail("da.ensemble_size must be at least 2 for etkf");
  if (da.scheme == "4dvar" && localized()) fail("4dvar is not available for patch layouts");
  if (da.duration < da.tau_da) fail("da.duration is shorter than one cycle");
  const auto needed = da.spinup_steps + static_cast<std::size_t>(std::llround(da.duration / system.dt)) + 1;
  if (data.test_steps < needed)
    fail("data.test_steps must be at least da.spinup_steps + da.duration / dt + 1 = " + std::to_string(needed));
  if (!(da.inflation >= 1.0)) fail("da.inflation must be >= 1");
  if (!(da.sigma_obs > 0.0)) fail("da.sigma_obs must be positive");
  if (evaluate.bins == 0) fail("evaluate.bins must be positive");
}

fs::path default_output_root() {
  if (const char* env = std::getenv("RNNDA_OUT"); env && *env) return env;
  return "rnnda_out";
}

}  // namespace rnnda::harness
