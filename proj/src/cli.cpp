#include "ermlab/cli.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "ermlab/complexity.hpp"

namespace ermlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void bad_field(const std::string& path, const std::string& msg) {
  fail(ErrorCode::ConfigParseError, "field '" + path + "': " + msg);
}

// Reads the members of one JSON object and rejects whatever was not read.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad_field(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const json* find(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  bool num(const std::string& key, double& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number()) bad_field(at(key), "expected a number");
    out = v->get<double>();
    return true;
  }

  bool num(const std::string& key, std::optional<double>& out) {
    double v = 0.0;
    if (!num(key, v)) return false;
    out = v;
    return true;
  }

  bool integer(const std::string& key, long long& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_integer()) bad_field(at(key), "expected an integer");
    out = v->get<long long>();
    return true;
  }

  bool integer(const std::string& key, int& out) {
    long long v = 0;
    if (!integer(key, v)) return false;
    out = static_cast<int>(v);
    return true;
  }

  bool integer(const std::string& key, std::optional<int>& out) {
    int v = 0;
    if (!integer(key, v)) return false;
    out = v;
    return true;
  }

  bool unsigned_int(const std::string& key, std::uint64_t& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_number_unsigned()) bad_field(at(key), "expected a nonnegative integer");
    out = v->get<std::uint64_t>();
    return true;
  }

  bool str(const std::string& key, std::string& out) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_string()) bad_field(at(key), "expected a string");
    out = v->get<std::string>();
    return true;
  }

  template <class T, class Conv>
  bool array(const std::string& key, std::vector<T>& out, Conv conv) {
    const json* v = find(key);
    if (!v) return false;
    if (!v->is_array()) bad_field(at(key), "expected an array");
    out.clear();
    for (std::size_t i = 0; i < v->size(); ++i) out.push_back(conv((*v)[i], at(key) + "[" + std::to_string(i) + "]"));
    return true;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) bad_field(at(it.key()), "unknown field");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) bad_field(path, "expected a number");
  return v.get<double>();
}

Eigen::Index as_count(const json& v, const std::string& path) {
  if (!v.is_number_integer() || v.get<long long>() < 1) bad_field(path, "expected a positive integer");
  return static_cast<Eigen::Index>(v.get<long long>());
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) bad_field(path, "expected a string");
  return v.get<std::string>();
}

ClassDescriptor parse_class(const json& j, const std::string& path) {
  Fields f(j, path);
  ClassDescriptor c;
  std::string kind;
  if (!f.str("kind", kind)) bad_field(f.at("kind"), "missing");
  try {
    c.kind = class_kind_from_string(kind);
  } catch (const Error&) {
    bad_field(f.at("kind"), "unknown class kind '" + kind + "'");
  }
  f.integer("d", c.dim_d);
  f.integer("p", c.ambient_p);
  f.integer("sparsity", c.sparsity_s);
  f.num("smoothness", c.smoothness_s);
  f.num("L", c.lipschitz_L);
  f.num("B", c.radius_B);
  f.num("M", c.sup_bound_M);
  f.num("beta", c.rkhs_decay_beta);
  f.num("R", c.rkhs_R);
  std::string basis;
  if (f.str("basis", basis)) {
    try {
      c.basis = feature_basis_from_string(basis);
    } catch (const Error&) {
      bad_field(f.at("basis"), "unknown basis '" + basis + "'");
    }
  }
  f.num("envelope_coeff", c.envelope_coeff);
  f.integer("series_terms", c.series_terms);
  f.finish();
  try {
    make_class(c);
  } catch (const Error& e) {
    bad_field(path, e.what());
  }
  return c;
}

ScenarioSpec parse_scenario(const json& j, const std::string& path) {
  if (j.is_string()) {
    try {
      return shipped_scenario(j.get<std::string>());
    } catch (const Error&) {
      bad_field(path, "unknown shipped scenario '" + j.get<std::string>() + "'");
    }
  }
  Fields f(j, path);
  ScenarioSpec s;
  if (!f.str("id", s.id)) bad_field(f.at("id"), "missing");
  const json* cls = f.find("class");
  if (!cls) bad_field(f.at("class"), "missing");
  s.cls = parse_class(*cls, f.at("class"));
  f.num("sigma", s.sigma);
  f.unsigned_int("seed", s.seed);
  f.array("truth_cosine", s.truth_cosine, as_number);
  f.array("truth_mesh", s.truth_mesh, as_number);
  f.finish();
  if (s.id.empty() || s.id.find_first_of(",\n\"") != std::string::npos)
    bad_field(f.at("id"), "must be nonempty without commas or quotes");
  if (!(s.sigma >= 0.0)) bad_field(f.at("sigma"), "must be nonnegative");
  try {
    build_scenario(s);
  } catch (const Error& e) {
    bad_field(path, e.what());
  }
  return s;
}

json class_json(const ClassDescriptor& c) {
  json j;
  j["kind"] = std::string(to_string(c.kind));
  j["d"] = c.dim_d;
  if (c.ambient_p) j["p"] = *c.ambient_p;
  if (c.sparsity_s) j["sparsity"] = *c.sparsity_s;
  if (c.smoothness_s) j["smoothness"] = *c.smoothness_s;
  if (c.lipschitz_L) j["L"] = *c.lipschitz_L;
  if (c.radius_B) j["B"] = *c.radius_B;
  if (c.sup_bound_M) j["M"] = *c.sup_bound_M;
  if (c.rkhs_decay_beta) j["beta"] = *c.rkhs_decay_beta;
  if (c.rkhs_R) j["R"] = *c.rkhs_R;
  j["basis"] = std::string(to_string(c.basis));
  j["envelope_coeff"] = c.envelope_coeff;
  j["series_terms"] = c.series_terms;
  return j;
}

json scenario_json(const ScenarioSpec& s) {
  json j;
  j["id"] = s.id;
  j["class"] = class_json(s.cls);
  j["sigma"] = s.sigma;
  j["seed"] = s.seed;
  j["truth_cosine"] = s.truth_cosine;
  j["truth_mesh"] = s.truth_mesh;
  return j;
}

void check_choice(const std::string& path, const std::string& v, std::initializer_list<const char*> options) {
  for (const char* o : options)
    if (v == o) return;
  std::string list;
  for (const char* o : options) list += std::string(list.empty() ? "" : ", ") + o;
  bad_field(path, "'" + v + "' is not one of " + list);
}

std::size_t line_of(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < std::min(byte, text.size()); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::ConfigParseError,
         "line " + std::to_string(line_of(text, e.byte == 0 ? 0 : e.byte - 1)) + ": " + e.what());
  }
  Fields f(j, "");
  RunConfig c;
  long long schema = 0;
  if (!f.integer("schema", schema)) bad_field("schema", "missing");
  if (schema != kConfigSchema) bad_field("schema", "unsupported version " + std::to_string(schema));
  if (const json* s = f.find("scenario")) c.scenario = parse_scenario(*s, "scenario");
  f.array("n_grid", c.n_grid, as_count);
  f.integer("seeds_per_n", c.seeds_per_n);
  f.str("pipeline", c.pipeline);
  f.num("lambda", c.lambda);
  f.num("eta", c.eta);
  f.unsigned_int("master_seed", c.master_seed);
  f.integer("jobs", c.jobs);
  f.integer("mc_reps", c.mc_reps);
  if (const json* cx = f.find("complexity")) {
    Fields g(*cx, "complexity");
    g.integer("delta_points", c.complexity.delta_points);
    std::string norm;
    if (g.str("norm", norm)) {
      check_choice("complexity.norm", norm, {"PopulationL2", "EmpiricalL2"});
      c.complexity.norm = norm_mode_from_string(norm);
    }
    g.finish();
  }
  if (const json* h = f.find("histogram")) {
    Fields g(*h, "histogram");
    g.str("rule", c.histogram.rule);
    g.integer("k", c.histogram.k);
    g.integer("seeds", c.histogram.seeds);
    g.num("sigma", c.histogram.sigma);
    g.finish();
  }
  if (const json* nu = f.find("nuisance")) {
    Fields g(*nu, "nuisance");
    g.str("experiment", c.nuisance.experiment);
    g.array("configs", c.nuisance.configs, as_string);
    g.integer("seeds", c.nuisance.seeds);
    g.integer("runs", c.nuisance.runs);
    long long v = 0;
    if (g.integer("n", v)) c.nuisance.n = static_cast<Eigen::Index>(v);
    if (g.integer("n_aux", v)) c.nuisance.n_aux = static_cast<Eigen::Index>(v);
    g.integer("probes", c.nuisance.probes);
    g.array("chi2_levels", c.nuisance.chi2_levels, as_number);
    g.finish();
  }
  f.finish();

  if (c.n_grid.empty()) bad_field("n_grid", "must not be empty");
  if (!std::is_sorted(c.n_grid.begin(), c.n_grid.end()) ||
      std::adjacent_find(c.n_grid.begin(), c.n_grid.end()) != c.n_grid.end())
    bad_field("n_grid", "must be strictly ascending");
  if (c.seeds_per_n < 1) bad_field("seeds_per_n", "must be at least 1");
  check_choice("pipeline", c.pipeline, {"erm", "tikhonov"});
  if (!(c.lambda >= 0.0)) bad_field("lambda", "must be nonnegative");
  if (!(c.eta > 0.0 && c.eta < 1.0)) bad_field("eta", "must lie in (0, 1)");
  if (c.jobs < 1) bad_field("jobs", "must be at least 1");
  if (c.mc_reps < 1) bad_field("mc_reps", "must be at least 1");
  if (c.complexity.delta_points < 2) bad_field("complexity.delta_points", "must be at least 2");
  check_choice("histogram.rule", c.histogram.rule, {"sqrt", "constant"});
  if (c.histogram.k < 1) bad_field("histogram.k", "must be at least 1");
  if (c.histogram.seeds < 1) bad_field("histogram.seeds", "must be at least 1");
  if (!(c.histogram.sigma >= 0.0)) bad_field("histogram.sigma", "must be nonnegative");
  check_choice("nuisance.experiment", c.nuisance.experiment, {"insample", "transfer", "chi2"});
  for (std::size_t i = 0; i < c.nuisance.configs.size(); ++i)
    check_choice("nuisance.configs[" + std::to_string(i) + "]", c.nuisance.configs[i],
                 {"oracle", "donsker", "rich", "crossfit"});
  if (c.nuisance.seeds < 1) bad_field("nuisance.seeds", "must be at least 1");
  if (c.nuisance.runs < 1) bad_field("nuisance.runs", "must be at least 1");
  if (c.nuisance.n < 4) bad_field("nuisance.n", "must be at least 4");
  if (c.nuisance.n_aux < 4) bad_field("nuisance.n_aux", "must be at least 4");
  if (c.nuisance.probes < 1) bad_field("nuisance.probes", "must be at least 1");
  for (double l : c.nuisance.chi2_levels)
    if (!(l > 0.0 && l < 1.0)) bad_field("nuisance.chi2_levels", "levels must lie in (0, 1)");
  return c;
}

std::string canonical_config(const RunConfig& c) {
  json j;
  j["schema"] = kConfigSchema;
  if (c.scenario) j["scenario"] = scenario_json(*c.scenario);
  j["n_grid"] = c.n_grid;
  j["seeds_per_n"] = c.seeds_per_n;
  j["pipeline"] = c.pipeline;
  j["lambda"] = c.lambda;
  j["eta"] = c.eta;
  j["master_seed"] = c.master_seed;
  j["jobs"] = c.jobs;
  j["mc_reps"] = c.mc_reps;
  j["complexity"] = {{"delta_points", c.complexity.delta_points},
                     {"norm", std::string(to_string(c.complexity.norm))}};
  j["histogram"] = {
      {"rule", c.histogram.rule}, {"k", c.histogram.k}, {"seeds", c.histogram.seeds}, {"sigma", c.histogram.sigma}};
  j["nuisance"] = {{"experiment", c.nuisance.experiment}, {"configs", c.nuisance.configs},
                   {"seeds", c.nuisance.seeds},           {"runs", c.nuisance.runs},
                   {"n", c.nuisance.n},                   {"n_aux", c.nuisance.n_aux},
                   {"probes", c.nuisance.probes},         {"chi2_levels", c.nuisance.chi2_levels}};
  return j.dump(2) + "\n";
}

std::string config_hash(const std::string& canonical) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

// Commands -------------------------------------------------------------------

namespace {

struct Flags {
  std::string config_path;
  std::string out_dir = "out";
  std::optional<std::uint64_t> seed;
  std::optional<int> jobs;
  std::optional<int> mc_reps;
  std::string records_dir;
  std::string report_out;  // empty: write next to the records
};

class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

  void write(const std::string& name, const std::string& text) {
    std::ofstream f(dir_ / name, std::ios::binary);
    if (!f) fail(ErrorCode::InvalidArgument, "cannot write " + (dir_ / name).string());
    f << text;
    files_.push_back(name);
  }

  const fs::path& dir() const { return dir_; }
  const std::vector<std::string>& files() const { return files_; }

 private:
  fs::path dir_;
  std::vector<std::string> files_;
};

std::string utc_now() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  // reproducible builds convention
  if (const char* e = std::getenv("SOURCE_DATE_EPOCH")) t = static_cast<std::time_t>(std::strtoll(e, nullptr, 10));
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

bool partial(const std::string& flags) {
  return flags.find("error") != std::string::npos || flags.find("nonconverged") != std::string::npos;
}

const ScenarioSpec& need_scenario(const RunConfig& c) {
  if (!c.scenario) bad_field("scenario", "required by this subcommand");
  return *c.scenario;
}

// Rate-comparison tolerance for summary rows.
constexpr double kSlopeTolerance = 0.15;

json summary_row(const std::string& id, double predicted, const std::vector<RegretRecord>& recs) {
  double slope = std::numeric_limits<double>::quiet_NaN(), se = slope;
  try {
    const RateFit f = fit_rate(recs, Response::Regret);
    slope = f.slope;
    se = f.slope_stderr;
  } catch (const Error&) {
  }
  const bool pass = std::isfinite(slope) && std::isfinite(predicted) && std::abs(slope - predicted) <= kSlopeTolerance;
  return {{"scenario", id},
          {"predicted_exponent", finite_or_null(predicted)},
          {"fitted_slope", finite_or_null(slope)},
          {"stderr", finite_or_null(se)},
          {"pass", pass}};
}

std::string summary_markdown(const json& rows) {
  std::ostringstream os;
  os << "| scenario | predicted exponent | fitted slope | stderr | pass |\n|---|---|---|---|---|\n";
  auto cell = [](const json& v) {
    if (v.is_null()) return std::string("n/a");
    return format_double(v.get<double>());
  };
  for (const auto& r : rows)
    os << "| " << r["scenario"].get<std::string>() << " | " << cell(r["predicted_exponent"]) << " | "
       << cell(r["fitted_slope"]) << " | " << cell(r["stderr"]) << " | " << (r["pass"].get<bool>() ? "yes" : "no")
       << " |\n";
  return os.str();
}

SweepConfig sweep_config(const RunConfig& c) {
  SweepConfig s;
  s.scenario = need_scenario(c);
  s.n_grid = c.n_grid;
  s.seeds_per_n = c.seeds_per_n;
  s.pipeline = c.pipeline;
  s.lambda = c.lambda;
  s.eta = c.eta;
  s.jobs = c.jobs;
  s.master_seed = c.master_seed;
  return s;
}

int cmd_complexity(const RunConfig& c, Outputs& out, std::ostream& os) {
  const Scenario sc = build_scenario(need_scenario(c));
  const ClassDescriptor& cls = *sc.cls;
  std::string curves = "n,delta,estimate,raw,stderr,reps,norm_mode\n";
  std::string radii = "n,delta_n,method\n";
  bool flagged = false;
  if (cls.kind == ClassKind::RkhsBall) os << "RkhsBall: curves from the eigenvalue bound, no Monte Carlo\n";
  os << "n\tempirical delta_n\n";
  for (Eigen::Index n : c.n_grid) {
    const std::uint64_t seed = derive_seed(c.master_seed, seed_tag::kComplexity, static_cast<std::uint64_t>(n));
    Rng rng(seed);
    const Eigen::MatrixXd pts = sample_points(sc.marginal, cls.dim_d, static_cast<int>(n), rng);
    const double scale = cls.M() > 0.0 ? cls.M() : 1.0;
    const auto grid = default_delta_grid(scale, c.complexity.delta_points);
    ComplexityCurve curve;
    if (cls.kind == ClassKind::RkhsBall) {
      // no Monte Carlo sup solver for the ball; use the eigenvalue bound
      Eigen::VectorXd lam(100000);
      for (Eigen::Index j = 0; j < lam.size(); ++j) lam[j] = std::pow(static_cast<double>(j + 1), -2.0 * *cls.rkhs_decay_beta);
      std::vector<double> raw;
      for (double d : grid) raw.push_back(rkhs_local_bound(lam, *cls.rkhs_R, d, static_cast<double>(n)));
      curve = make_curve(grid, raw, std::vector<double>(grid.size(), 0.0), n, 0, c.complexity.norm);
    } else {
      curve = complexity_curve(cls, pts, grid, c.mc_reps, seed, c.complexity.norm, c.jobs, sc.marginal);
    }
    for (std::size_t k = 0; k < curve.delta_grid.size(); ++k)
      curves += std::to_string(n) + "," + format_double(curve.delta_grid[k]) + "," + format_double(curve.estimates[k]) +
                "," + format_double(curve.raw[k]) + "," + format_double(curve.stderrs[k]) + "," +
                std::to_string(curve.reps) + "," + std::string(to_string(curve.norm_mode)) + "\n";
    std::string value = "nan", method = "no_crossing";
    try {
      const CriticalRadius cr = critical_radius_empirical(curve);
      value = format_double(cr.value);
      method = std::string(to_string(cr.method));
    } catch (const Error&) {
      flagged = true;
    }
    radii += std::to_string(n) + "," + value + "," + method + "\n";
    os << n << "\t" << value << "\n";
  }
  out.write("complexity.csv", curves);
  out.write("critical_empirical.csv", radii);
  return flagged ? 2 : 0;
}

int cmd_critical_radius(const RunConfig& c, Outputs& out, std::ostream& os) {
  const ClassPtr cls = make_class(need_scenario(c).cls);
  const Envelope env = entropy_envelope(*cls);
  const double gamma = env.exponent_gamma();
  const double expo = 1.0 / (2.0 * (2.0 - gamma));
  std::string csv = "n,delta_n,method,rate,ratio\n";
  os << "envelope: c = " << format_double(env.coeff_c()) << ", gamma = " << format_double(gamma)
     << ", log power = " << format_double(env.log_power_q()) << "\n";
  os << "delta_n ~ n^(-" << format_double(expo) << ")\n";
  os << "n\tdelta_n\tn^(-rate)\tratio\n";
  for (Eigen::Index n : c.n_grid) {
    const CriticalRadius cr = critical_radius_envelope(env, static_cast<double>(n));
    const double rate = std::pow(static_cast<double>(n), -expo);
    csv += std::to_string(n) + "," + format_double(cr.value) + "," + std::string(to_string(cr.method)) + "," +
           format_double(rate) + "," + format_double(cr.value / rate) + "\n";
    os << n << "\t" << format_double(cr.value) << "\t" << format_double(rate) << "\t"
       << format_double(cr.value / rate) << "\n";
  }
  out.write("critical_radius.csv", csv);
  return 0;
}

int cmd_erm_run(const RunConfig& c, Outputs& out, std::ostream& os) {
  const auto recs = run_sweep(sweep_config(c));
  out.write("records.csv", sweep_csv(recs));
  out.write("scenario.json", scenario_json(need_scenario(c)).dump(2) + "\n");
  bool flagged = false;
  std::map<Eigen::Index, std::pair<double, int>> mean;
  for (const auto& r : recs) {
    flagged = flagged || partial(r.flags);
    if (std::isfinite(r.regret)) {
      mean[r.n].first += r.regret;
      mean[r.n].second += 1;
    }
  }
  os << "n\tmean regret\n";
  for (const auto& [n, acc] : mean) os << n << "\t" << format_double(acc.first / acc.second) << "\n";
  return flagged ? 2 : 0;
}

int cmd_rate_sweep(const RunConfig& c, Outputs& out, std::ostream& os) {
  const ScenarioSpec& spec = need_scenario(c);
  if (grid_decades(c.n_grid) < 1.5)
    os << "warning: n_grid spans " << format_double(grid_decades(c.n_grid)) << " decades; rate fits want 1.5\n";
  const auto recs = run_sweep(sweep_config(c));
  out.write("records.csv", sweep_csv(recs));
  out.write("scenario.json", scenario_json(spec).dump(2) + "\n");

  const double predicted = predicted_regret_exponent(spec.cls);
  json fits;
  for (auto [name, resp] : {std::pair{"regret", Response::Regret}, std::pair{"l2_error", Response::L2Error}}) {
    try {
      const RateFit f = fit_rate(recs, resp);
      fits[name] = {{"slope", f.slope},         {"intercept", f.intercept}, {"stderr", finite_or_null(f.slope_stderr)},
                    {"r_squared", f.r_squared}, {"n_points", f.n_points},   {"median_slope", finite_or_null(f.median_slope)}};
    } catch (const Error& e) {
      fits[name] = {{"error", e.what()}};
    }
  }
  fits["predicted_regret_exponent"] = predicted;
  out.write("rate_fit.json", fits.dump(2) + "\n");

  // Calibrate C on the first half of the seeds at each n, check coverage on the rest.
  const std::size_t S = static_cast<std::size_t>(c.seeds_per_n);
  std::vector<RegretRecord> train, hold;
  for (std::size_t i = 0; i < recs.size(); ++i)
    if (std::isfinite(recs[i].regret)) (i % S < S / 2 ? train : hold).push_back(recs[i]);
  if (!train.empty() && !hold.empty()) {
    const BoundFamily shape = regret_bound_shape(spec.cls);
    const double C = calibrate_constant(train, shape, c.eta, 1.0 - c.eta);
    const BoundFamily bound = [&](Eigen::Index n, double e) { return C * shape(n, e); };
    std::string cov = "eta,coverage,constant\n";
    for (double e : {0.01, 0.05, 0.1, 0.2, 0.5})
      cov += format_double(e) + "," + format_double(pac_coverage(hold, bound, e)) + "," + format_double(C) + "\n";
    out.write("coverage.csv", cov);
  }

  const json rows = json::array({summary_row(spec.id, predicted, recs)});
  out.write("summary.json", rows.dump(2) + "\n");
  os << summary_markdown(rows);
  for (const auto& r : recs)
    if (partial(r.flags)) return 2;
  return 0;
}

int cmd_nuisance(const RunConfig& c, Outputs& out, std::ostream& os) {
  const auto& nu = c.nuisance;
  if (nu.experiment == "insample") {
    const MissingDesign design = insample_design();
    std::string csv;
    json fits;
    for (const auto& name : nu.configs) {
      const auto recs = insample_sweep(design, name, c.n_grid, nu.seeds, c.master_seed, c.jobs);
      const std::string part = nuisance_csv(recs);
      csv += csv.empty() ? part : part.substr(part.find('\n') + 1);
      try {
        const RateFit f = fit_nuisance_rate(recs);
        fits[name] = {{"slope", f.slope}, {"intercept", f.intercept}, {"stderr", finite_or_null(f.slope_stderr)}};
        os << name << "\tL2 slope " << format_double(f.slope) << "\n";
      } catch (const Error& e) {
        fits[name] = {{"error", e.what()}};
      }
    }
    out.write("nuisance.csv", csv);
    out.write("nuisance_fit.json", fits.dump(2) + "\n");
    return 0;
  }
  const MissingDesign design = transfer_design();
  if (nu.experiment == "transfer") {
    TransferConfig tc;
    tc.runs = nu.runs;
    tc.n = nu.n;
    tc.n_aux = nu.n_aux;
    tc.probes = nu.probes;
    tc.master_seed = c.master_seed;
    tc.jobs = c.jobs;
    const auto reps = transfer_runs(design, tc);
    std::string csv = transfer_csv_header() + "\n";
    int checked = 0, holds = 0;
    for (const auto& r : reps) {
      csv += transfer_csv_row(r) + "\n";
      checked += r.checked;
      holds += r.checked && r.holds;
    }
    out.write("transfer.csv", csv);
    os << "bound holds on " << holds << " of " << checked << " checked runs\n";
    return 0;
  }
  const auto pts = chi2_scaling(design, nu.chi2_levels, c.n_grid.back(), nu.seeds, c.master_seed, c.jobs);
  std::string csv = "chi2,mean_excess\n";
  std::vector<double> x, y;
  for (const auto& p : pts) {
    csv += format_double(p.chi2) + "," + format_double(p.mean_excess) + "\n";
    if (p.mean_excess > 0.0) {
      x.push_back(p.chi2);
      y.push_back(p.mean_excess);
    }
  }
  out.write("chi2.csv", csv);
  if (x.size() >= 4) os << "excess vs chi2 slope " << format_double(fit_loglog(x, y).slope) << "\n";
  return 0;
}

int cmd_histogram(const RunConfig& c, Outputs& out, std::ostream& os) {
  HistogramConfig h;
  h.rule = c.histogram.rule == "sqrt" ? HistogramConfig::Rule::Sqrt : HistogramConfig::Rule::Constant;
  h.constant_k = c.histogram.k;
  h.n_grid = c.n_grid;
  h.seeds = c.histogram.seeds;
  h.sigma = c.histogram.sigma;
  h.eta = c.eta;
  h.master_seed = c.master_seed;
  h.jobs = c.jobs;
  const auto recs = histogram_union_experiment(h);
  out.write("histogram.csv", histogram_csv(recs));
  json s{{"coverage", histogram_coverage(recs)}, {"eta", c.eta}};
  try {
    const RateFit f = histogram_rate(recs);
    s["slope"] = f.slope;
    s["stderr"] = finite_or_null(f.slope_stderr);
  } catch (const Error& e) {
    s["slope"] = nullptr;
  }
  out.write("histogram.json", s.dump(2) + "\n");
  os << "simultaneous coverage " << format_double(histogram_coverage(recs)) << "\n";
  return 0;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

int cmd_report(const Flags& flags, std::ostream& os) {
  const fs::path dir = flags.records_dir;
  if (!fs::is_directory(dir)) fail(ErrorCode::NoRecordsFound, "not a directory: " + dir.string());
  std::map<std::string, std::vector<RegretRecord>> by_id;
  std::map<std::string, double> predicted;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& p : files) {
    std::ifstream f(p);
    std::string line;
    if (!std::getline(f, line) || line != record_csv_header()) continue;
    std::optional<double> pred;
    const fs::path sj = p.parent_path() / "scenario.json";
    if (fs::exists(sj)) {
      std::ifstream s(sj);
      std::stringstream buf;
      buf << s.rdbuf();
      pred = predicted_regret_exponent(parse_scenario(json::parse(buf.str()), "scenario.json").cls);
    }
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      const auto cells = split_csv(line);
      if (cells.size() != 9) fail(ErrorCode::ConfigParseError, p.string() + ": malformed record row");
      RegretRecord r;
      r.n = std::stoll(cells[0]);
      r.seed = std::stoull(cells[1]);
      r.scenario = cells[2];
      r.emp_risk = std::stod(cells[3]);
      r.pop_risk = std::stod(cells[4]);
      r.regret = std::stod(cells[5]);
      r.l2_error = std::stod(cells[6]);
      r.fluctuation = std::stod(cells[7]);
      r.flags = cells[8];
      if (pred) predicted[r.scenario] = *pred;
      by_id[r.scenario].push_back(std::move(r));
    }
  }
  if (by_id.empty()) fail(ErrorCode::NoRecordsFound, "no record CSVs under " + dir.string());
  json rows = json::array();
  for (const auto& [id, recs] : by_id) {
    double pred = std::numeric_limits<double>::quiet_NaN();
    if (auto it = predicted.find(id); it != predicted.end()) {
      pred = it->second;
    } else {
      try {
        pred = predicted_regret_exponent(shipped_scenario(id).cls);
      } catch (const Error&) {
      }
    }
    rows.push_back(summary_row(id, pred, recs));
  }
  Outputs out(flags.report_out.empty() ? dir : fs::path(flags.report_out));
  out.write("summary.json", rows.dump(2) + "\n");
  out.write("summary.md", summary_markdown(rows));
  os << summary_markdown(rows);
  return 0;
}

}  // namespace

int dispatch(int argc, const char* const* argv, std::ostream& os, std::ostream& err) {
  static const std::vector<std::pair<std::string, std::string>> commands{
      {"complexity", "Monte Carlo localized complexity curves and empirical critical radii"},
      {"critical-radius", "critical radius from the class entropy envelope"},
      {"erm-run", "fit ERM over the n grid and seeds and write regret records"},
      {"rate-sweep", "regret sweep with rate fits, PAC coverage and a summary"},
      {"nuisance-sweep", "nuisance experiments: in-sample DR, weight transfer, chi2 scaling"},
      {"histogram", "union-bound histogram experiment"},
      {"report", "summarize record CSVs under a directory"}};

  CLI::App app{"ERM rate laboratory", "ermlab"};
  app.require_subcommand(1, 1);
  Flags flags;
  std::map<std::string, CLI::App*> subs;
  for (const auto& [name, help] : commands) {
    CLI::App* s = app.add_subcommand(name, help);
    if (name == "report") {
      s->add_option("dir", flags.records_dir, "directory with record CSVs")->required();
      s->add_option("--out", flags.report_out, "output directory (default: the records directory)");
    } else {
      s->add_option("--config", flags.config_path, "JSON run configuration")->required();
      s->add_option("--out", flags.out_dir, "output directory")->capture_default_str();
      s->add_option("--seed", flags.seed, "master seed (overrides the config)");
      s->add_option("--jobs", flags.jobs, "worker threads (overrides the config)")->check(CLI::PositiveNumber);
      s->add_option("--mc-reps", flags.mc_reps, "Monte Carlo replications (overrides the config)")
          ->check(CLI::PositiveNumber);
    }
    subs[name] = s;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    os << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    os << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    if (argc > 1 && argv[1][0] != '-' && !subs.count(argv[1]))
      err << to_string(ErrorCode::UnknownSubcommand) << ": " << argv[1] << "\n";
    else
      err << e.what() << "\n";
    err << app.help();
    return 1;
  }

  std::string name;
  for (const auto& [n, s] : subs)
    if (s->parsed()) name = n;

  const std::string started = utc_now();
  try {
    if (name == "report") return cmd_report(flags, os);
    std::ifstream f(flags.config_path, std::ios::binary);
    if (!f) fail(ErrorCode::ConfigParseError, "cannot read config " + flags.config_path);
    std::stringstream buf;
    buf << f.rdbuf();
    RunConfig cfg = parse_config(buf.str());
    if (flags.seed) cfg.master_seed = *flags.seed;
    if (flags.jobs) cfg.jobs = *flags.jobs;
    if (flags.mc_reps) cfg.mc_reps = *flags.mc_reps;
    const std::string canonical = canonical_config(cfg);

    Outputs out(flags.out_dir);
    out.write("config.json", canonical);
    int code = 0;
    if (name == "complexity") code = cmd_complexity(cfg, out, os);
    if (name == "critical-radius") code = cmd_critical_radius(cfg, out, os);
    if (name == "erm-run") code = cmd_erm_run(cfg, out, os);
    if (name == "rate-sweep") code = cmd_rate_sweep(cfg, out, os);
    if (name == "nuisance-sweep") code = cmd_nuisance(cfg, out, os);
    if (name == "histogram") code = cmd_histogram(cfg, out, os);

    json manifest;
    manifest["tool"] = "ermlab";
    manifest["version"] = kToolVersion;
    manifest["subcommand"] = name;
    manifest["config_hash"] = config_hash(canonical);
    manifest["master_seed"] = cfg.master_seed;
    manifest["started"] = started;
    manifest["finished"] = utc_now();
    std::vector<std::string> files = out.files();
    files.push_back("manifest.json");
    manifest["outputs"] = files;
    manifest["exit_code"] = code;
    out.write("manifest.json", manifest.dump(2) + "\n");
    return code;
  } catch (const Error& e) {
    err << e.what() << "\n";
    if (e.code() == ErrorCode::ConfigParseError && flags.config_path.empty()) err << app.help();
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ermlab
