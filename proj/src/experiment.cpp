#include "contagion/experiment.hpp"

#include "contagion/csv.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace contagion {

namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Reading

[[noreturn]] void fail(const std::string& path, const std::string& what) { throw ConfigError(path + ": " + what); }

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + '.' + key; }
std::string index(const std::string& path, std::size_t i) { return path + '[' + std::to_string(i) + ']'; }

void allow_keys(const Json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) fail(path, "expected an object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) fail(join(path, key), "unknown field");
  }
}

const Json& field(const Json& obj, const std::string& path, const char* key) {
  const auto it = obj.find(key);
  if (it == obj.end()) fail(join(path, key), "missing field");
  return *it;
}

double number(const Json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

long long integer(const Json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<long long>();
}

bool boolean(const Json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected true or false");
  return j.get<bool>();
}

std::string text(const Json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

std::vector<double> numbers(const Json& j, const std::string& path, std::size_t expected = 0) {
  if (!j.is_array()) fail(path, "expected an array of numbers");
  if (expected && j.size() != expected) fail(path, "expected " + std::to_string(expected) + " entries");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], index(path, i)));
  return out;
}

Eigen::MatrixXd matrix(const Json& j, const std::string& path, int rows, int cols) {
  if (!j.is_array() || j.size() != static_cast<std::size_t>(rows)) {
    fail(path, "expected " + std::to_string(rows) + " rows");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto row = numbers(j[static_cast<std::size_t>(r)], index(path, static_cast<std::size_t>(r)),
                             static_cast<std::size_t>(cols));
    for (int c = 0; c < cols; ++c) m(r, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

DistressState state_of(const Json& j, const std::string& path, int n_stocks) {
  const std::string s = text(j, path);
  if (static_cast<int>(s.size()) != n_stocks || s.find_first_not_of("01") != std::string::npos) {
    fail(path, "expected a string of " + std::to_string(n_stocks) + " digits 0/1");
  }
  return DistressState::parse(s);
}

template <typename Enum>
Enum choice(const Json& j, const std::string& path, std::initializer_list<std::pair<const char*, Enum>> options) {
  const std::string s = text(j, path);
  std::string names;
  for (const auto& [name, value] : options) {
    if (s == name) return value;
    names += (names.empty() ? "" : ", ") + std::string(name);
  }
  fail(path, "expected one of " + names + ", got '" + s + "'");
}

void read_tables(MarketConfig& cfg, const Json& j, const std::string& path, DistressState only, bool all_states) {
  const int n = cfg.n_stocks(), k = cfg.n_regimes();
  auto each_state = [&](auto&& f) {
    if (!all_states) return f(only);
    for (int s = 0; s < cfg.n_states(); ++s) f(DistressState(n, static_cast<std::uint32_t>(s)));
  };
  if (j.contains("drift")) {
    const Eigen::MatrixXd m = matrix(j["drift"], join(path, "drift"), n, k);
    each_state([&](DistressState z) {
      for (int i = 0; i < n; ++i)
        for (int r = 0; r < k; ++r) cfg.set_drift(i, r, z, m(i, r));
    });
  }
  if (j.contains("intensity")) {
    const Eigen::MatrixXd m = matrix(j["intensity"], join(path, "intensity"), n, k);
    each_state([&](DistressState z) {
      for (int i = 0; i < n; ++i)
        for (int r = 0; r < k; ++r) cfg.set_intensity(i, r, z, m(i, r));
    });
  }
  if (j.contains("volatility")) {
    const auto v = numbers(j["volatility"], join(path, "volatility"), static_cast<std::size_t>(n));
    each_state([&](DistressState z) {
      for (int i = 0; i < n; ++i) cfg.set_volatility(i, z, v[static_cast<std::size_t>(i)]);
    });
  }
}

MarketConfig read_market(const Json& j, const std::string& path) {
  allow_keys(j, path,
             {"stocks", "regimes", "rate", "gamma", "horizon", "initial_wealth", "generator", "initial_filter",
              "drift", "intensity", "volatility", "by_state"});
  const long long n = integer(field(j, path, "stocks"), join(path, "stocks"));
  const long long k = integer(field(j, path, "regimes"), join(path, "regimes"));
  if (n < 1 || n > kMaxStocks) fail(join(path, "stocks"), "must be between 1 and " + std::to_string(kMaxStocks));
  if (k < 1 || k > kMaxRegimes) fail(join(path, "regimes"), "must be between 1 and " + std::to_string(kMaxRegimes));
  MarketConfig cfg(static_cast<int>(n), static_cast<int>(k));
  cfg.rate = number(field(j, path, "rate"), join(path, "rate"));
  cfg.gamma = number(field(j, path, "gamma"), join(path, "gamma"));
  cfg.horizon = number(field(j, path, "horizon"), join(path, "horizon"));
  cfg.initial_wealth = number(field(j, path, "initial_wealth"), join(path, "initial_wealth"));
  cfg.generator = matrix(field(j, path, "generator"), join(path, "generator"), cfg.n_regimes(), cfg.n_regimes());
  const auto p0 = numbers(field(j, path, "initial_filter"), join(path, "initial_filter"));
  if (p0.size() != static_cast<std::size_t>(k - 1)) {
    fail(join(path, "initial_filter"), "expected " + std::to_string(k - 1) + " entries");
  }
  cfg.initial_filter = SimplexPoint(Eigen::Map<const Eigen::VectorXd>(p0.data(), k - 1));
  for (const char* key : {"drift", "intensity", "volatility"}) field(j, path, key);
  read_tables(cfg, j, path, DistressState::none(cfg.n_stocks()), true);
  if (j.contains("by_state")) {
    const std::string bp = join(path, "by_state");
    if (!j["by_state"].is_object()) fail(bp, "expected an object keyed by distress state");
    for (const auto& [key, block] : j["by_state"].items()) {
      const std::string sp = join(bp, key);
      const DistressState z = state_of(Json(key), sp, cfg.n_stocks());
      allow_keys(block, sp, {"drift", "intensity", "volatility"});
      read_tables(cfg, block, sp, z, false);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return cfg;
}

Grid read_grid(const Json& j, const std::string& path) {
  allow_keys(j, path, {"n_space", "n_time"});
  Grid g;
  if (j.contains("n_space")) g.n_space = static_cast<int>(integer(j["n_space"], join(path, "n_space")));
  if (j.contains("n_time")) g.n_time = static_cast<int>(integer(j["n_time"], join(path, "n_time")));
  return g;
}

SolveOptions read_solve(const Json& j, const std::string& path) {
  allow_keys(j, path,
             {"mode", "truncation", "boundary", "newton_tol", "max_inner_iters", "analytic_terminal", "jump_drift"});
  SolveOptions o;
  using M = SolveOptions::Mode;
  using B = SolveOptions::Boundary;
  if (j.contains("mode")) o.mode = choice<M>(j["mode"], join(path, "mode"), {{"direct", M::direct}, {"stampacchia", M::stampacchia}});
  if (j.contains("truncation")) o.truncation = number(j["truncation"], join(path, "truncation"));
  if (j.contains("boundary")) {
    o.boundary = choice<B>(j["boundary"], join(path, "boundary"),
                           {{"degenerate", B::degenerate}, {"dirichlet_zero", B::dirichlet_zero}});
  }
  if (j.contains("newton_tol")) o.newton_tol = number(j["newton_tol"], join(path, "newton_tol"));
  if (j.contains("max_inner_iters")) {
    o.max_inner_iters = static_cast<int>(integer(j["max_inner_iters"], join(path, "max_inner_iters")));
  }
  if (j.contains("analytic_terminal")) o.analytic_terminal = boolean(j["analytic_terminal"], join(path, "analytic_terminal"));
  if (j.contains("jump_drift")) {
    o.jump_drift = choice<JumpDrift>(j["jump_drift"], join(path, "jump_drift"),
                                     {{"compensated", JumpDrift::compensated}, {"omitted", JumpDrift::omitted}});
  }
  return o;
}

SimConfig read_sim(const Json& j, const std::string& path, double horizon) {
  allow_keys(j, path, {"dt", "horizon", "seed", "n_paths", "scheme"});
  SimConfig s;
  s.horizon = horizon;
  if (j.contains("dt")) s.dt = number(j["dt"], join(path, "dt"));
  if (j.contains("horizon")) s.horizon = number(j["horizon"], join(path, "horizon"));
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) fail(join(path, "seed"), "expected a nonnegative integer");
    s.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("n_paths")) s.n_paths = static_cast<int>(integer(j["n_paths"], join(path, "n_paths")));
  if (j.contains("scheme")) {
    s.scheme = choice<FilterScheme>(j["scheme"], join(path, "scheme"),
                                    {{"euler", FilterScheme::euler}, {"milstein", FilterScheme::milstein}});
  }
  return s;
}

VerifySettings read_verify(const Json& j, const std::string& path, int n_stocks) {
  allow_keys(j, path, {"lambdas", "state", "allowance_rate", "calibration_dts", "audit_scales", "audit_lambda"});
  VerifySettings v;
  v.state = DistressState::none(n_stocks);
  if (j.contains("lambdas")) v.lambdas = numbers(j["lambdas"], join(path, "lambdas"));
  if (j.contains("state")) v.state = state_of(j["state"], join(path, "state"), n_stocks);
  if (j.contains("allowance_rate")) v.allowance_rate = number(j["allowance_rate"], join(path, "allowance_rate"));
  if (j.contains("calibration_dts")) v.calibration_dts = numbers(j["calibration_dts"], join(path, "calibration_dts"));
  if (j.contains("audit_scales")) v.audit_scales = numbers(j["audit_scales"], join(path, "audit_scales"));
  if (j.contains("audit_lambda")) v.audit_lambda = number(j["audit_lambda"], join(path, "audit_lambda"));
  return v;
}

SweepSettings read_sweep(const Json& j, const std::string& path) {
  allow_keys(j, path, {"parameter", "values", "table_points"});
  SweepSettings s;
  s.parameter = text(field(j, path, "parameter"), join(path, "parameter"));
  s.values = numbers(field(j, path, "values"), join(path, "values"));
  if (j.contains("table_points")) s.table_points = static_cast<int>(integer(j["table_points"], join(path, "table_points")));
  return s;
}

// ---------------------------------------------------------------------------
// Writing

Json matrix_json(const Eigen::MatrixXd& m) {
  Json rows = Json::array();
  for (int r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd drift_table(const MarketConfig& cfg, DistressState z) {
  Eigen::MatrixXd m(cfg.n_stocks(), cfg.n_regimes());
  for (int i = 0; i < cfg.n_stocks(); ++i)
    for (int k = 0; k < cfg.n_regimes(); ++k) m(i, k) = cfg.drift(i, k, z);
  return m;
}

Eigen::MatrixXd intensity_table(const MarketConfig& cfg, DistressState z) {
  Eigen::MatrixXd m(cfg.n_stocks(), cfg.n_regimes());
  for (int i = 0; i < cfg.n_stocks(); ++i)
    for (int k = 0; k < cfg.n_regimes(); ++k) m(i, k) = cfg.intensity(i, k, z);
  return m;
}

Json volatility_json(const MarketConfig& cfg, DistressState z) {
  Json v = Json::array();
  for (int i = 0; i < cfg.n_stocks(); ++i) v.push_back(cfg.volatility(i, z));
  return v;
}

Json market_json(const MarketConfig& cfg) {
  const DistressState none = DistressState::none(cfg.n_stocks());
  Json j;
  j["stocks"] = cfg.n_stocks();
  j["regimes"] = cfg.n_regimes();
  j["rate"] = cfg.rate;
  j["gamma"] = cfg.gamma;
  j["horizon"] = cfg.horizon;
  j["initial_wealth"] = cfg.initial_wealth;
  j["generator"] = matrix_json(cfg.generator);
  j["initial_filter"] = Json::array();
  for (int k = 0; k < cfg.initial_filter.dim(); ++k) j["initial_filter"].push_back(cfg.initial_filter.coords(k));
  const Eigen::MatrixXd drift0 = drift_table(cfg, none), intensity0 = intensity_table(cfg, none);
  const Json vol0 = volatility_json(cfg, none);
  j["drift"] = matrix_json(drift0);
  j["intensity"] = matrix_json(intensity0);
  j["volatility"] = vol0;
  Json by_state = Json::object();
  for (int s = 1; s < cfg.n_states(); ++s) {
    const DistressState z(cfg.n_stocks(), static_cast<std::uint32_t>(s));
    Json block = Json::object();
    if (drift_table(cfg, z) != drift0) block["drift"] = matrix_json(drift_table(cfg, z));
    if (intensity_table(cfg, z) != intensity0) block["intensity"] = matrix_json(intensity_table(cfg, z));
    if (volatility_json(cfg, z) != vol0) block["volatility"] = volatility_json(cfg, z);
    if (!block.empty()) by_state[z.str()] = block;
  }
  if (!by_state.empty()) j["by_state"] = by_state;
  return j;
}

// ---------------------------------------------------------------------------
// Parameters

struct ParameterPath {
  std::string name;
  int stock = -1;
  int regime = -1;
};

ParameterPath parse_parameter(const MarketConfig& cfg, const std::string& path) {
  std::vector<std::string> parts;
  std::stringstream in(path);
  for (std::string part; std::getline(in, part, '.');) parts.push_back(part);
  auto idx = [&](std::size_t p, int count, const char* what) {
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(parts[p], &used);
      if (used != parts[p].size()) throw std::invalid_argument(parts[p]);
    } catch (const std::exception&) {
      throw ConfigError("parameter '" + path + "': " + what + " index must be an integer");
    }
    if (v < 1 || v > count) {
      throw ConfigError("parameter '" + path + "': " + what + " index must be between 1 and " + std::to_string(count));
    }
    return v - 1;
  };
  ParameterPath p;
  if (!parts.empty()) p.name = parts[0];
  if ((p.name == "gamma" || p.name == "rate" || p.name == "horizon") && parts.size() == 1) return p;
  if ((p.name == "drift" || p.name == "intensity") && parts.size() == 3) {
    p.stock = idx(1, cfg.n_stocks(), "stock");
    p.regime = idx(2, cfg.n_regimes(), "regime");
    return p;
  }
  if (p.name == "volatility" && parts.size() == 2) {
    p.stock = idx(1, cfg.n_stocks(), "stock");
    return p;
  }
  throw ConfigError("unknown parameter '" + path +
                    "' (expected gamma, rate, horizon, drift.i.k, intensity.i.k or volatility.i)");
}

fs::path output_dir(const ExperimentConfig& config, const RunOptions& run) {
  const fs::path dir = run.output.empty() ? fs::path(config.output) : fs::path(run.output);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

SimConfig sim_for(const ExperimentConfig& config, const RunOptions& run) {
  SimConfig sim = config.sim;
  if (run.seed) sim.seed = *run.seed;
  return sim;
}

void require_two_regimes(const MarketConfig& cfg) {
  if (cfg.n_regimes() != 2) throw ConfigError("market.regimes: the PDE solver needs exactly 2 regimes");
}

std::string bool_text(bool b) { return b ? "1" : "0"; }

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  market.validate();
  grid.validate();
  solve.validate();
  sim.validate(market);
  if (verify.lambdas.empty()) throw ConfigError("verify.lambdas must not be empty");
  for (double l : verify.lambdas) {
    if (!(l >= 0.0 && l <= 1.0)) throw ConfigError("verify.lambdas entries must lie in [0, 1]");
  }
  if (verify.state.size() != market.n_stocks()) throw ConfigError("verify.state has the wrong length");
  if (!(verify.allowance_rate >= 0.0)) throw ConfigError("verify.allowance_rate must be nonnegative");
  for (double dt : verify.calibration_dts) {
    if (!(dt > 0.0)) throw ConfigError("verify.calibration_dts entries must be positive");
  }
  if (!(verify.audit_lambda >= 0.0 && verify.audit_lambda <= 1.0)) {
    throw ConfigError("verify.audit_lambda must lie in [0, 1]");
  }
  if (sweep) {
    parse_parameter(market, sweep->parameter);
    if (sweep->values.empty()) throw ConfigError("sweep.values must not be empty");
    if (sweep->table_points < 2) throw ConfigError("sweep.table_points must be at least 2");
  }
  if (output.empty()) throw ConfigError("output must not be empty");
}

ExperimentConfig parse_experiment(const std::string& source_text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(source_text);
  } catch (const nlohmann::json::parse_error& e) {
    std::size_t line = 1, column = 1;
    const std::size_t end = std::min<std::size_t>(e.byte == 0 ? 0 : e.byte - 1, source_text.size());
    for (std::size_t i = 0; i < end; ++i) {
      if (source_text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    throw ConfigError(source + ":" + std::to_string(line) + ":" + std::to_string(column) + ": invalid JSON");
  }
  try {
    allow_keys(j, "", {"market", "grid", "solve", "sim", "verify", "sweep", "output"});
    ExperimentConfig c;
    c.market = read_market(field(j, "", "market"), "market");
    if (j.contains("grid")) c.grid = read_grid(j["grid"], "grid");
    if (j.contains("solve")) c.solve = read_solve(j["solve"], "solve");
    c.sim = read_sim(j.contains("sim") ? j["sim"] : Json::object(), "sim", c.market.horizon);
    c.verify = read_verify(j.contains("verify") ? j["verify"] : Json::object(), "verify", c.market.n_stocks());
    if (j.contains("sweep")) c.sweep = read_sweep(j["sweep"], "sweep");
    if (j.contains("output")) c.output = text(j["output"], "output");
    c.validate();
    return c;
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open");
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_experiment(buffer.str(), path);
}

std::string to_json(const ExperimentConfig& c) {
  Json j;
  j["market"] = market_json(c.market);
  j["grid"] = {{"n_space", c.grid.n_space}, {"n_time", c.grid.n_time}};
  j["solve"] = {{"mode", to_string(c.solve.mode)},
                {"truncation", c.solve.truncation},
                {"boundary", to_string(c.solve.boundary)},
                {"newton_tol", c.solve.newton_tol},
                {"max_inner_iters", c.solve.max_inner_iters},
                {"analytic_terminal", c.solve.analytic_terminal},
                {"jump_drift", to_string(c.solve.jump_drift)}};
  j["sim"] = {{"dt", c.sim.dt},
              {"horizon", c.sim.horizon},
              {"seed", c.sim.seed},
              {"n_paths", c.sim.n_paths},
              {"scheme", c.sim.scheme == FilterScheme::milstein ? "milstein" : "euler"}};
  j["verify"] = {{"lambdas", c.verify.lambdas},
                 {"state", c.verify.state.str()},
                 {"allowance_rate", c.verify.allowance_rate},
                 {"calibration_dts", c.verify.calibration_dts},
                 {"audit_scales", c.verify.audit_scales},
                 {"audit_lambda", c.verify.audit_lambda}};
  if (c.sweep) {
    j["sweep"] = {{"parameter", c.sweep->parameter},
                  {"values", c.sweep->values},
                  {"table_points", c.sweep->table_points}};
  }
  j["output"] = c.output;
  return j.dump(2) + '\n';
}

ExperimentConfig benchmark_experiment() {
  ExperimentConfig c;
  c.market = benchmark_config();
  c.sim.horizon = c.market.horizon;
  c.sim.n_paths = 100000;
  c.sim.dt = 1e-3;
  return c;
}

void apply_parameter(MarketConfig& cfg, const std::string& path, double value) {
  const ParameterPath p = parse_parameter(cfg, path);
  if (p.name == "gamma") {
    cfg.gamma = value;
  } else if (p.name == "rate") {
    cfg.rate = value;
  } else if (p.name == "horizon") {
    cfg.horizon = value;
  } else if (p.name == "drift") {
    cfg.set_drift(p.stock, p.regime, value);
  } else if (p.name == "intensity") {
    cfg.set_intensity(p.stock, p.regime, value);
  } else {
    cfg.set_volatility(p.stock, value);
  }
}

double parameter_value(const MarketConfig& cfg, const std::string& path) {
  const ParameterPath p = parse_parameter(cfg, path);
  const DistressState none = DistressState::none(cfg.n_stocks());
  if (p.name == "gamma") return cfg.gamma;
  if (p.name == "rate") return cfg.rate;
  if (p.name == "horizon") return cfg.horizon;
  if (p.name == "drift") return cfg.drift(p.stock, p.regime, none);
  if (p.name == "intensity") return cfg.intensity(p.stock, p.regime, none);
  return cfg.volatility(p.stock, none);
}

// ---------------------------------------------------------------------------
// Sweeps

const StockVector& SweepResult::at(int value, DistressState z, int m) const {
  const auto it = std::find(states.begin(), states.end(), z);
  if (it == states.end()) throw std::invalid_argument("sweep has no state " + z.str());
  return pi.at(static_cast<std::size_t>(value))
      .at(static_cast<std::size_t>(it - states.begin()))
      .at(static_cast<std::size_t>(m));
}

SweepResult run_sweep(const MarketConfig& base, const Grid& grid, const SolveOptions& opts,
                      const SweepSettings& settings) {
  require_two_regimes(base);
  if (settings.values.empty()) throw ConfigError("sweep.values must not be empty");
  if (settings.table_points < 2) throw ConfigError("sweep.table_points must be at least 2");
  SweepResult r;
  r.parameter = settings.parameter;
  r.values = settings.values;
  for (int m = 0; m < settings.table_points; ++m) r.lambdas.push_back(static_cast<double>(m) / (settings.table_points - 1));
  for (int s = 0; s < base.n_states(); ++s) r.states.emplace_back(base.n_stocks(), static_cast<std::uint32_t>(s));
  for (double value : settings.values) {
    MarketConfig cfg = base;
    apply_parameter(cfg, settings.parameter, value);
    cfg.validate();
    const FeedbackStrategy strategy(cfg, recursive_solve(cfg, grid, opts));
    auto& per_state = r.pi.emplace_back();
    for (DistressState z : r.states) {
      auto& row = per_state.emplace_back();
      for (double l : r.lambdas) row.push_back(strategy(0.0, SimplexPoint::scalar(l), z));
    }
    r.tables.push_back(strategy_csv(strategy, {0.0}, r.lambdas, r.states));
  }
  return r;
}

std::vector<PropertyCheck> sweep_properties(const SweepResult& sweep) {
  std::vector<PropertyCheck> out;
  if (sweep.states.empty() || sweep.states.front().size() != 2) return out;
  const DistressState none(2, 0u), first(2, 1u);
  const int nl = static_cast<int>(sweep.lambdas.size());
  const int nv = static_cast<int>(sweep.values.size());
  std::vector<int> order(static_cast<std::size_t>(nv));
  for (int v = 0; v < nv; ++v) order[static_cast<std::size_t>(v)] = v;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return sweep.values[static_cast<std::size_t>(a)] < sweep.values[static_cast<std::size_t>(b)]; });

  auto format = [](double x) { return format_number(x); };

  {
    // smallest pi_2(00) - pi_2(10) over all values and lambdas
    double margin = std::numeric_limits<double>::infinity();
    double where = 0.0, which = 0.0;
    for (int v = 0; v < nv; ++v) {
      for (int m = 0; m < nl; ++m) {
        const double d = sweep.at(v, none, m)(1) - sweep.at(v, first, m)(1);
        if (d < margin) {
          margin = d;
          where = sweep.lambdas[static_cast<std::size_t>(m)];
          which = sweep.values[static_cast<std::size_t>(v)];
        }
      }
    }
    out.push_back({"contagion: pi_2 in state 10 <= pi_2 in state 00", margin >= 0.0,
                   "smallest margin " + format(margin) + " at lambda " + format(where) + ", " + sweep.parameter +
                       " = " + format(which)});
  }

  // pointwise monotonicity of component i in state 00 along sorted values;
  // sign +1 increasing, -1 decreasing
  auto monotone = [&](int i, int sign, const std::vector<int>& points, bool strict, const std::string& name) {
    double margin = std::numeric_limits<double>::infinity();
    double where = 0.0;
    for (int m : points) {
      for (int q = 0; q + 1 < nv; ++q) {
        const double a = sweep.at(order[static_cast<std::size_t>(q)], none, m)(i);
        const double b = sweep.at(order[static_cast<std::size_t>(q) + 1], none, m)(i);
        const double d = sign * (b - a);
        if (d < margin) {
          margin = d;
          where = sweep.lambdas[static_cast<std::size_t>(m)];
        }
      }
    }
    const bool pass = nv >= 2 && (strict ? margin > 0.0 : margin >= 0.0);
    out.push_back({name, pass, "smallest step " + format(margin) + " at lambda " + format(where)});
  };
  std::vector<int> all(static_cast<std::size_t>(nl));
  for (int m = 0; m < nl; ++m) all[static_cast<std::size_t>(m)] = m;

  if (sweep.parameter == "intensity.1.1") {
    int m09 = 0;
    for (int m = 0; m < nl; ++m) {
      if (std::abs(sweep.lambdas[static_cast<std::size_t>(m)] - 0.9) <
          std::abs(sweep.lambdas[static_cast<std::size_t>(m09)] - 0.9)) {
        m09 = m;
      }
    }
    const std::string at = " at lambda " + format(sweep.lambdas[static_cast<std::size_t>(m09)]);
    monotone(0, -1, {m09}, true, "pi_1 in state 00 strictly decreasing in intensity.1.1" + at);
    monotone(1, +1, {m09}, true, "pi_2 in state 00 strictly increasing in intensity.1.1" + at);
  } else if (sweep.parameter == "gamma") {
    monotone(0, +1, all, false, "pi_1 in state 00 increasing in gamma");
    monotone(1, +1, all, false, "pi_2 in state 00 increasing in gamma");
  } else if (sweep.parameter == "volatility.2") {
    monotone(1, -1, all, false, "pi_2 in state 00 decreasing in volatility.2");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands

Status cmd_solve(const ExperimentConfig& config, const RunOptions& run, std::ostream& log) {
  config.validate();
  require_two_regimes(config.market);
  const fs::path dir = output_dir(config, run);
  const auto start = std::chrono::steady_clock::now();
  const SurfaceMap surfaces = recursive_solve(config.market, config.grid, config.solve);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  std::string report =
      "state,min_w,max_w,lower_T,upper_T,contained,analytic,inner_iterations,rho_inf,rho_sup,child_sup,"
      "intensity_sup,lower_rate,upper_value,upper_rate\n";
  for (const auto& [z, surface] : surfaces) {
    write_surface_csv(*surface, (dir / ("surface_" + z.str() + ".csv")).string());
    const Bounds& b = surface->bounds;
    const double lo = surface->w.minCoeff(), hi = surface->w.maxCoeff();
    const double T = config.market.horizon;
    const bool contained = lo >= b.lower(T) && hi <= b.upper(T);
    report += z.str() + ',' +
              csv_row({lo, hi, b.lower(T), b.upper(T)}) + ',' + bool_text(contained) + ',' +
              bool_text(surface->analytic) + ',' + std::to_string(surface->inner_iterations) + ',' +
              csv_row({b.rho_inf, b.rho_sup, b.child_sup, b.intensity_sup, b.lower_rate, b.upper_value,
                       b.upper_rate}) +
              '\n';
    log << "state " << z.str() << ": w in [" << format_number(lo) << ", " << format_number(hi) << "], bounds ["
        << format_number(b.lower(T)) << ", " << format_number(b.upper(T)) << "]"
        << (contained ? "" : "  OUTSIDE BOUNDS") << '\n';
  }
  write_file_atomic((dir / "bounds.csv").string(), report);
  log << "solved " << surfaces.size() << " states in " << format_number(std::round(seconds * 1000.0) / 1000.0)
      << " s, output in " << dir.string() << '\n';
  return Status::ok;
}

Status cmd_sweep(const ExperimentConfig& config, const RunOptions& run, std::ostream& log) {
  config.validate();
  if (!config.sweep) throw ConfigError("sweep: missing field");
  const fs::path dir = output_dir(config, run);
  const SweepResult sweep = run_sweep(config.market, config.grid, config.solve, *config.sweep);
  for (std::size_t v = 0; v < sweep.values.size(); ++v) {
    const std::string name = "strategy_" + sweep.parameter + "_" + format_number(sweep.values[v]) + ".csv";
    write_file_atomic((dir / name).string(), sweep.tables[v]);
    log << "wrote " << name << '\n';
  }
  std::string summary = "property,pass,detail\n";
  for (const PropertyCheck& p : sweep_properties(sweep)) {
    summary += '"' + p.name + "\"," + bool_text(p.pass) + ",\"" + p.detail + "\"\n";
    log << (p.pass ? "holds   " : "fails   ") << p.name << " (" << p.detail << ")\n";
  }
  write_file_atomic((dir / ("properties_" + sweep.parameter + ".csv")).string(), summary);
  return Status::ok;
}

Status cmd_verify(const ExperimentConfig& config, const RunOptions& run, std::ostream& log) {
  config.validate();
  require_two_regimes(config.market);
  const fs::path dir = output_dir(config, run);
  const SimConfig sim = sim_for(config, run);
  const std::string warning = sim.validate(config.market);
  if (!warning.empty()) log << "warning: " << warning << '\n';

  const FeedbackStrategy strategy(config.market, recursive_solve(config.market, config.grid, config.solve));
  const DistressState z0 = config.verify.state;

  double allowance_rate = config.verify.allowance_rate;
  if (!config.verify.calibration_dts.empty()) {
    std::string table = "lambda0,dt,mean,std_error,pde_value,rate\n";
    allowance_rate = 0.0;
    for (double l : config.verify.lambdas) {
      const AllowanceCalibration c =
          calibrate_allowance(config.market, sim, strategy, l, z0, config.verify.calibration_dts, run.threads);
      for (std::size_t j = 0; j < c.dt.size(); ++j) {
        table += csv_row({l, c.dt[j], c.estimates[j].mean, c.estimates[j].std_error, c.pde_value, c.rate}) + '\n';
      }
      allowance_rate = std::max(allowance_rate, c.rate);
    }
    write_file_atomic((dir / "calibration.csv").string(), table);
    log << "calibrated allowance rate C = " << format_number(allowance_rate) << '\n';
  }

  bool pass = true;
  std::string csv = VerificationReport::csv_header() + '\n';
  std::string text;
  for (double l : config.verify.lambdas) {
    const VerificationReport r = verify_value(config.market, sim, strategy, l, z0, allowance_rate, run.threads);
    csv += r.csv_row() + '\n';
    text += r.text();
    log << r.text();
    pass = pass && r.pass();
  }

  const AuditReport audit = suboptimality_audit(config.market, sim, strategy,
                                                SimplexPoint::scalar(config.verify.audit_lambda), z0,
                                                config.verify.audit_scales, run.threads);
  std::string audit_csv = "label,objective_mean,objective_stderr,advantage_mean,advantage_stderr,pass\n";
  audit_csv += "optimal," + csv_row({audit.optimal.mean, audit.optimal.std_error}) + ",0,0,1\n";
  std::ostringstream audit_text;
  audit_text << "audit at lambda0 = " << format_number(config.verify.audit_lambda) << ", optimal "
             << format_number(audit.optimal.mean) << " +- " << format_number(audit.optimal.std_error) << '\n';
  for (const AuditEntry& e : audit.entries) {
    audit_csv += e.label + ',' +
                 csv_row({e.objective.mean, e.objective.std_error, e.advantage.mean, e.advantage.std_error}) + ',' +
                 bool_text(e.pass) + '\n';
    audit_text << "  " << e.label << ": advantage " << format_number(e.advantage.mean) << " +- "
               << format_number(e.advantage.std_error) << (e.pass ? "  pass" : "  FAIL") << '\n';
  }
  log << audit_text.str();
  pass = pass && audit.pass;

  write_file_atomic((dir / "verification.csv").string(), csv);
  write_file_atomic((dir / "verification.txt").string(), text + audit_text.str());
  write_file_atomic((dir / "audit.csv").string(), audit_csv);
  log << (pass ? "verification passed" : "verification FAILED") << '\n';
  return pass ? Status::ok : Status::verification_failure;
}

Status cmd_filter_demo(const ExperimentConfig& config, const RunOptions& run, std::ostream& log) {
  config.validate();
  const fs::path dir = output_dir(config, run);
  const SimConfig sim = sim_for(config, run);
  const MarketConfig& cfg = config.market;
  const MarketPath path = simulate_truth_path(cfg, sim, 0);
  const FilterPath filter = run_filter(cfg, path, sim.scheme);
  const FilterPath oracle = hmm_oracle_filter(cfg, path);
  const int n = cfg.n_stocks(), k = cfg.n_regimes();

  std::string out = "t,regime,state";
  for (int i = 0; i < n; ++i) out += ",log_price_" + std::to_string(i + 1);
  for (int r = 0; r < k; ++r) out += ",filter_" + std::to_string(r + 1);
  for (int r = 0; r < k; ++r) out += ",bayes_" + std::to_string(r + 1);
  out += '\n';
  double gap = 0.0;
  for (std::size_t j = 0; j < path.time.size(); ++j) {
    const int row = static_cast<int>(j);
    std::vector<double> values;
    for (int i = 0; i < n; ++i) values.push_back(path.log_price(row, i));
    for (int r = 0; r < k; ++r) values.push_back(filter.probs(row, r));
    for (int r = 0; r < k; ++r) values.push_back(oracle.probs(row, r));
    gap = std::max(gap, (filter.probs.row(row) - oracle.probs.row(row)).cwiseAbs().maxCoeff());
    out += format_number(path.time[j]) + ',' + std::to_string(path.regime[j] + 1) + ',' + path.distress[j].str() +
           ',' + csv_row(values) + '\n';
  }
  write_file_atomic((dir / "filter_demo.csv").string(), out);
  log << "filter demo: " << path.time.size() - 1 << " steps, final state " << path.distress.back().str()
      << ", largest gap to the Bayes filter " << format_number(gap) << '\n';
  return Status::ok;
}

}  // namespace contagion
