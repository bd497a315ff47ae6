#include "twostage/cli.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <json.hpp>
#include <openssl/evp.h>

#include "twostage/calibration.hpp"
#include "twostage/errors.hpp"

#ifndef TWOSTAGE_VERSION
#define TWOSTAGE_VERSION "0.0.0"
#endif

namespace twostage {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Small utilities

std::string format_number(double x) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, x);
  return std::string(buffer, result.ptr);
}

// Table-style alpha labels: 0.05, 0.10, ... and shortest form otherwise.
std::string alpha_label(double alpha) {
  const double percent = alpha * 100.0;
  if (std::abs(percent - std::round(percent)) < 1e-9) {
    std::ostringstream out;
    out << std::fixed << std::setprecision(2) << alpha;
    return out.str();
  }
  return format_number(alpha);
}

std::string sha256_hex(const std::string& data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw NumericError("SHA-256 computation failed");
  }
  std::ostringstream out;
  for (unsigned int i = 0; i < length; ++i) out << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return out.str();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const json& value) {
  auto out = open_output(path);
  out << value.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Configuration: defaults <- JSON config file <- command-line flags

enum class Kind { kInt, kDouble, kString, kBool, kIntList, kDoubleList, kObject };

struct Param {
  std::string key;
  Kind kind;
  json fallback;  // null = optional with no default
  std::string help;
};

// Keys that steer where things run or land, but not what is computed.
bool excluded_from_manifest(const std::string& key) { return key == "threads" || key == "out" || key == "config"; }

json kernel_defaults() {
  const KernelSpec k;
  return {{"lag", k.lag_max},        {"mask", "low-signal"}, {"threshold", k.mask.threshold},
          {"min_run", k.mask.min_run}, {"w_corr", k.w_corr},   {"w_norm", k.w_norm}};
}

json prior_defaults() {
  const PriorConfig p;
  return {{"alpha_a", p.alpha_a}, {"beta_a", nullptr}, {"alpha_e", p.alpha_e},
          {"beta_e", nullptr},    {"mu0", nullptr},    {"lambda2", nullptr}};
}

json posterior_defaults(LowAcceptance policy) {
  const PosteriorOptions p;
  return {{"low_acceptance", to_string(policy)},
          {"min_acceptance", p.min_acceptance},
          {"rejection_window", p.rejection_window},
          {"max_attempts_per_draw", p.max_attempts_per_draw}};
}

json supply_defaults() {
  const SupplyOptions s;
  return {{"allow_resampling", s.allow_resampling}, {"spline_bases", s.spline_bases}, {"spline_order", s.spline_order}};
}

std::string flag_name(const std::string& key) {
  std::string name = key;
  std::replace(name.begin(), name.end(), '_', '-');
  return "--" + name;
}

json parse_scalar(const std::string& key, Kind kind, const std::string& text) {
  auto fail = [&]() -> json { throw InputError("invalid value '" + text + "' for " + flag_name(key)); };
  switch (kind) {
    case Kind::kString:
      return text;
    case Kind::kInt: {
      long long v = 0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size()) return fail();
      return v;
    }
    case Kind::kDouble: {
      double v = 0;
      const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
      if (r.ec != std::errc() || r.ptr != text.data() + text.size() || !std::isfinite(v)) return fail();
      return v;
    }
    default:
      return fail();
  }
}

json parse_flag(const Param& p, const std::string& text) {
  if (p.kind == Kind::kIntList || p.kind == Kind::kDoubleList) {
    json list = json::array();
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
      list.push_back(parse_scalar(p.key, p.kind == Kind::kIntList ? Kind::kInt : Kind::kDouble, item));
    }
    if (list.empty()) throw InputError("empty list for " + flag_name(p.key));
    return list;
  }
  return parse_scalar(p.key, p.kind, text);
}

void check_type(const std::string& key, Kind kind, const json& value) {
  if (value.is_null()) return;
  bool ok = false;
  switch (kind) {
    case Kind::kInt: ok = value.is_number_integer(); break;
    case Kind::kDouble: ok = value.is_number(); break;
    case Kind::kString: ok = value.is_string(); break;
    case Kind::kBool: ok = value.is_boolean(); break;
    case Kind::kIntList:
      ok = value.is_array() && std::all_of(value.begin(), value.end(), [](const json& v) { return v.is_number_integer(); });
      break;
    case Kind::kDoubleList:
      ok = value.is_array() && std::all_of(value.begin(), value.end(), [](const json& v) { return v.is_number(); });
      break;
    case Kind::kObject: ok = value.is_object(); break;
  }
  if (!ok) throw InputError("config key '" + key + "' has the wrong type");
}

// Overlays `patch` onto `base`, rejecting keys the command does not know.
void overlay(json& base, const json& patch, const std::string& where) {
  if (!patch.is_object()) throw InputError(where + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    if (!base.contains(key)) throw InputError("unknown config key '" + where + key + "'");
    if (base[key].is_object()) {
      overlay(base[key], value, where + key + ".");
    } else {
      base[key] = value;
    }
  }
}

class Command {
 public:
  Command(CLI::App& app, std::string name, std::string description) : name_(std::move(name)) {
    sub_ = app.add_subcommand(name_, std::move(description));
    sub_->add_option("--config", config_path_, "JSON run configuration; flags override it");
  }

  CLI::App* app() const { return sub_; }
  const std::string& name() const { return name_; }

  void add(std::string key, Kind kind, json fallback, std::string help) {
    params_.push_back({key, kind, fallback, help});
    if (kind == Kind::kObject) return;  // nested settings come from the config file
    if (kind == Kind::kBool) {
      auto* opt = sub_->add_flag(flag_name(key), help);
      flags_.push_back({params_.size() - 1, opt});
      return;
    }
    auto& slot = text_[key];
    auto* opt = sub_->add_option(flag_name(key), slot, help);
    flags_.push_back({params_.size() - 1, opt});
  }

  // Resolved configuration after defaults, config file and flags.
  json resolve() const {
    json cfg = json::object();
    for (const auto& p : params_) cfg[p.key] = p.fallback;
    if (!config_path_.empty()) {
      json file;
      try {
        file = json::parse(read_file(config_path_));
      } catch (const json::parse_error& e) {
        throw InputError(config_path_ + ": " + e.what());
      }
      overlay(cfg, file, "");
    }
    for (const auto& [index, opt] : flags_) {
      if (opt->count() == 0) continue;
      const Param& p = params_[index];
      cfg[p.key] = p.kind == Kind::kBool ? json(true) : parse_flag(p, text_.at(p.key));
    }
    for (const auto& p : params_) {
      if (p.kind != Kind::kObject) check_type(p.key, p.kind, cfg[p.key]);
    }
    return cfg;
  }

 private:
  std::string name_;
  CLI::App* sub_ = nullptr;
  std::string config_path_;
  std::vector<Param> params_;
  std::vector<std::pair<std::size_t, CLI::Option*>> flags_;
  std::map<std::string, std::string> text_;
};

// ---------------------------------------------------------------------------
// Typed access with validation

template <typename T>
T get(const json& cfg, const std::string& key) {
  const json& v = cfg.at(key);
  if (v.is_null()) throw InputError("missing required setting " + flag_name(key));
  return v.get<T>();
}

std::size_t get_count(const json& cfg, const std::string& key, long long minimum) {
  const auto v = get<long long>(cfg, key);
  if (v < minimum) throw InputError(flag_name(key) + " must be >= " + std::to_string(minimum));
  return static_cast<std::size_t>(v);
}

std::uint64_t get_seed(const json& cfg) {
  const auto v = get<long long>(cfg, "seed");
  if (v < 0) throw InputError("--seed must be >= 0");
  return static_cast<std::uint64_t>(v);
}

unsigned get_threads(const json& cfg) { return static_cast<unsigned>(get_count(cfg, "threads", 1)); }

double get_probability(const json& cfg, const std::string& key) {
  const auto v = get<double>(cfg, key);
  if (!(v > 0.0 && v < 1.0)) throw InputError(flag_name(key) + " must lie in (0, 1)");
  return v;
}

KernelSpec kernel_from(const json& j) {
  KernelSpec k;
  const int lag = j.at("lag").get<int>();
  k.lag_min = -lag;
  k.lag_max = lag;
  const auto mask = j.at("mask").get<std::string>();
  if (mask == "none") {
    k.mask.kind = MaskPolicy::Kind::kNone;
  } else if (mask == "low-signal") {
    k.mask.kind = MaskPolicy::Kind::kLowSignal;
  } else {
    throw InputError("kernel.mask must be 'none' or 'low-signal'");
  }
  k.mask.threshold = j.at("threshold").get<double>();
  const auto min_run = j.at("min_run").get<long long>();
  if (min_run < 0) throw InputError("kernel.min_run must be >= 0");
  k.mask.min_run = static_cast<std::size_t>(min_run);
  k.w_corr = j.at("w_corr").get<double>();
  k.w_norm = j.at("w_norm").get<double>();
  validate(k);
  return k;
}

PriorConfig prior_from(const json& j) {
  PriorConfig p;
  auto optional = [&](const char* key) -> std::optional<double> {
    const json& v = j.at(key);
    if (v.is_null()) return std::nullopt;
    return v.get<double>();
  };
  p.alpha_a = j.at("alpha_a").get<double>();
  p.alpha_e = j.at("alpha_e").get<double>();
  p.beta_a = optional("beta_a");
  p.beta_e = optional("beta_e");
  p.mu0 = optional("mu0");
  p.lambda2 = optional("lambda2");
  validate(p);
  return p;
}

PosteriorOptions posterior_from(const json& j) {
  PosteriorOptions p;
  p.on_low_acceptance = parse_low_acceptance(j.at("low_acceptance").get<std::string>());
  p.min_acceptance = j.at("min_acceptance").get<double>();
  if (!(p.min_acceptance >= 0.0 && p.min_acceptance < 1.0)) throw InputError("posterior.min_acceptance must be in [0, 1)");
  p.rejection_window = j.at("rejection_window").get<std::size_t>();
  p.max_attempts_per_draw = j.at("max_attempts_per_draw").get<std::size_t>();
  if (p.max_attempts_per_draw == 0) throw InputError("posterior.max_attempts_per_draw must be >= 1");
  return p;
}

SupplyOptions supply_from(const json& j) {
  SupplyOptions s;
  s.allow_resampling = j.at("allow_resampling").get<bool>();
  s.spline_bases = j.at("spline_bases").get<int>();
  s.spline_order = j.at("spline_order").get<int>();
  if (s.spline_order < 1 || s.spline_bases < s.spline_order) {
    throw InputError("supply.spline_bases must be >= supply.spline_order >= 1");
  }
  return s;
}

TestOptions test_options_from(const json& cfg) {
  TestOptions t;
  t.prior = prior_from(cfg.at("prior"));
  t.posterior = posterior_from(cfg.at("posterior"));
  t.threads = get_threads(cfg);
  return t;
}

SimulationOptions simulation_options_from(const json& cfg) {
  SimulationOptions s;
  s.kernel = kernel_from(cfg.at("kernel"));
  s.test = test_options_from(cfg);
  s.test.threads = 1;
  s.supply = supply_from(cfg.at("supply"));
  s.threads = get_threads(cfg);
  return s;
}

SourceLibrary load(const json& cfg, const std::string& key) {
  return load_library(get<std::string>(cfg, key), parse_csv_format(get<std::string>(cfg, "format")));
}

std::vector<Spectrum> all_spectra(const SourceLibrary& library) {
  std::vector<Spectrum> out;
  for (const auto& source : library.sources())
    for (const auto& s : source.replicates) out.push_back(s);
  return out;
}

// ---------------------------------------------------------------------------
// Manifest

json manifest(const std::string& command, const json& cfg, const std::vector<std::string>& input_keys) {
  json config = json::object();
  for (const auto& [key, value] : cfg.items()) {
    if (!excluded_from_manifest(key)) config[key] = value;
  }
  json inputs = json::object();
  for (const auto& key : input_keys) {
    if (cfg.contains(key) && cfg[key].is_string()) inputs[key] = {{"path", cfg[key]}, {"sha256", sha256_hex(read_file(cfg[key]))}};
  }
  const std::string eigen_version = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                    "." + std::to_string(EIGEN_MINOR_VERSION);
  return {{"command", command},
          {"version", TWOSTAGE_VERSION},
          {"config", config},
          {"config_hash", sha256_hex(config.dump())},
          {"seed", cfg.contains("seed") ? cfg["seed"] : json(nullptr)},
          {"inputs", inputs},
          {"libraries", {{"eigen", eigen_version}, {"cli11", CLI11_VERSION},
                         {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_PATCH)}}}};
}

fs::path output_dir(const json& cfg) {
  const fs::path dir = get<std::string>(cfg, "out");
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

// ---------------------------------------------------------------------------
// Threshold lookup

double resolve_c_alpha(const json& cfg, std::size_t n_control, std::size_t n_trace, double alpha) {
  if (!cfg.at("c_alpha").is_null()) {
    const double c = cfg["c_alpha"].get<double>();
    if (!(c >= 0.0 && c <= 1.0)) throw InputError("--c-alpha must lie in [0, 1]");
    return c;
  }
  if (cfg.at("calibration").is_null()) {
    throw MissingPrerequisite(
        "no threshold c_alpha: pass --c-alpha or --calibration <calibration.json> written by the calibrate command");
  }
  const std::string path = cfg["calibration"].get<std::string>();
  json table;
  try {
    table = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
  const auto alphas = table.at("alpha_levels").get<std::vector<double>>();
  const auto it = std::find_if(alphas.begin(), alphas.end(), [&](double a) { return std::abs(a - alpha) < 1e-12; });
  if (it == alphas.end()) {
    throw MissingPrerequisite(path + " has no entry for alpha = " + format_number(alpha) +
                              "; rerun the calibrate command with that level");
  }
  for (const auto& row : table.at("rows")) {
    if (row.at("N").get<std::size_t>() == n_control && row.at("M").get<std::size_t>() == n_trace) {
      return row.at("c_values").at(static_cast<std::size_t>(it - alphas.begin())).get<double>();
    }
  }
  throw MissingPrerequisite(path + " has no calibration for N=" + std::to_string(n_control) +
                            ", M=" + std::to_string(n_trace) + "; rerun the calibrate command for this design");
}

void add_threshold_params(Command& c) {
  c.add("alpha", Kind::kDouble, 0.05, "significance level");
  c.add("c_alpha", Kind::kDouble, nullptr, "threshold c(alpha); overrides --calibration");
  c.add("calibration", Kind::kString, nullptr, "calibration.json from the calibrate command");
}

void add_model_params(Command& c, LowAcceptance policy) {
  c.add("kernel", Kind::kObject, kernel_defaults(), "");
  c.add("prior", Kind::kObject, prior_defaults(), "");
  c.add("posterior", Kind::kObject, posterior_defaults(policy), "");
}

void add_run_params(Command& c) {
  c.add("seed", Kind::kInt, 1, "top-level random seed");
  c.add("threads", Kind::kInt, 1, "worker threads (results do not depend on it)");
}

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(const json& cfg, std::ostream& out) {
  const auto library = load(cfg, "library");
  const auto& grid = *library.grid();
  json sources = json::array();
  for (const auto& s : library.sources()) sources.push_back({{"source_id", s.id}, {"replicates", s.replicates.size()}});
  const json summary = {{"sources", library.size()},
                        {"spectra", library.spectrum_count()},
                        {"grid", {{"size", grid.size()}, {"min", grid[0]}, {"max", grid[grid.size() - 1]}}},
                        {"per_source", sources}};
  out << summary.dump(2) << '\n';
  return kExitSuccess;
}

int cmd_simulate(const json& cfg, std::ostream& out) {
  SyntheticConfig config;
  config.n_sources = get_count(cfg, "n_sources", 1);
  config.n_replicates = get_count(cfg, "n_replicates", 1);
  config.grid_size = get_count(cfg, "grid_size", 2);
  config.grid_min = get<double>(cfg, "grid_min");
  config.grid_max = get<double>(cfg, "grid_max");
  config.n_peaks = get_count(cfg, "n_peaks", 1);
  config.separation = get<double>(cfg, "separation");
  config.within_noise = get<double>(cfg, "within_noise");
  config.source_scales = cfg.at("source_scales").get<std::vector<double>>();
  validate(config);
  const auto format = parse_csv_format(get<std::string>(cfg, "format"));
  const auto dir = output_dir(cfg);

  const auto library = generate_synthetic_library(config, get_seed(cfg));
  const auto path = dir / "library.csv";
  save_library(path.string(), library, format);
  write_json(dir / "manifest.json", manifest("simulate", cfg, {}));
  out << "wrote " << path.string() << " (" << library.size() << " sources, " << library.spectrum_count()
      << " spectra)\n";
  return kExitSuccess;
}

int cmd_test(const json& cfg, std::ostream& out) {
  const auto trace_lib = load(cfg, "trace");
  const auto control_lib = load(cfg, "control");
  const auto K = get_count(cfg, "K", 100);
  const double alpha = get_probability(cfg, "alpha");
  const auto kernel = kernel_from(cfg.at("kernel"));
  const auto options = test_options_from(cfg);
  const auto seed = get_seed(cfg);

  const auto trace = all_spectra(trace_lib);
  const auto control = all_spectra(control_lib);
  if (control.size() < 3) throw InputError("the control file must hold at least 3 spectra");
  const double c_alpha = resolve_c_alpha(cfg, control.size(), trace.size(), alpha);

  const auto scores = pairwise_scores(trace, control, kernel, options.threads);
  auto outcome = test_statistic(scores.s_m, scores.s_n, control.size(), trace.size(), K, seed, options);
  outcome.c_alpha_used = c_alpha;
  outcome.decision = decide(outcome.h, c_alpha);

  const json result = {{"h", outcome.h},
                       {"mc_std_err", outcome.mc_std_err},
                       {"K", outcome.K},
                       {"decision", to_string(*outcome.decision)},
                       {"c_alpha", c_alpha},
                       {"seed", outcome.seed},
                       {"N", outcome.n_control},
                       {"M", outcome.n_trace}};
  const std::string verdict = *outcome.decision == Decision::kRejectH1
                                  ? "reject common source at level " + format_number(alpha)
                                  : "fail to reject at level " + format_number(alpha);
  out << result.dump(2) << '\n' << verdict << '\n';

  if (!cfg.at("out").is_null()) {
    const auto dir = output_dir(cfg);
    write_json(dir / "outcome.json", result);
    auto scores_out = open_output(dir / "scores.csv");
    write_scores_csv(scores_out, scores);
    write_json(dir / "manifest.json", manifest("test", cfg, {"trace", "control", "calibration"}));
  }
  return kExitSuccess;
}

int cmd_calibrate(const json& cfg, std::ostream& out) {
  const auto library = load(cfg, "library");
  const auto n_values = cfg.at("N").get<std::vector<long long>>();
  const auto n_trace = get_count(cfg, "M", 1);
  auto alphas = cfg.at("alpha").get<std::vector<double>>();
  for (double a : alphas) {
    if (!(a > 0.0 && a < 1.0)) throw InputError("--alpha levels must lie in (0, 1)");
  }
  std::sort(alphas.begin(), alphas.end());
  const auto K_outer = get_count(cfg, "K_outer", 500);
  const auto K_inner = get_count(cfg, "K_inner", 100);
  const auto options = simulation_options_from(cfg);
  const auto seed = get_seed(cfg);
  if (n_values.empty()) throw InputError("--N needs at least one value");
  for (long long n : n_values) {
    if (n < 3) throw InputError("--N values must be >= 3");
  }
  const auto dir = output_dir(cfg);

  std::ofstream csv = open_output(dir / "calibration.csv");
  csv << std::setprecision(17) << "alpha";
  for (double a : alphas) csv << ',' << alpha_label(a);
  csv << '\n';
  json rows = json::array();
  for (long long n : n_values) {
    const auto n_control = static_cast<std::size_t>(n);
    const auto table = calibrate_c_alpha(library, n_control, n_trace, alphas, K_outer, K_inner, seed, options);
    csv << "N=" << n_control;
    for (double c : table.c_values) csv << ',' << c;
    csv << '\n';
    rows.push_back({{"N", n_control}, {"M", n_trace}, {"c_values", table.c_values}});

    auto samples = open_output(dir / ("h_samples_N" + std::to_string(n_control) + ".csv"));
    samples << std::setprecision(17) << "iteration,source_id,h\n";
    for (std::size_t k = 0; k < table.h_samples.size(); ++k) {
      samples << k << ',' << library.sources()[table.sources[k]].id << ',' << table.h_samples[k] << '\n';
    }
  }
  const json sidecar = {{"alpha_levels", alphas}, {"rows", rows},   {"K_outer", K_outer},
                        {"K_inner", K_inner},     {"seed", seed},   {"library", cfg["library"]}};
  write_json(dir / "calibration.json", sidecar);
  write_json(dir / "manifest.json", manifest("calibrate", cfg, {"library"}));
  out << "wrote " << (dir / "calibration.csv").string() << '\n';
  return kExitSuccess;
}

int cmd_power(const json& cfg, std::ostream& out) {
  const auto library = load(cfg, "library");
  const auto n_control = get_count(cfg, "N", 3);
  const auto n_trace = get_count(cfg, "M", 1);
  const auto K = get_count(cfg, "K", 1);
  const auto K_inner = get_count(cfg, "K_inner", 100);
  const auto bins = get_count(cfg, "bins", 1);
  const double alpha = get_probability(cfg, "alpha");
  const auto options = simulation_options_from(cfg);
  const auto seed = get_seed(cfg);
  const double c_alpha = resolve_c_alpha(cfg, n_control, n_trace, alpha);
  const auto dir = output_dir(cfg);

  const auto curve = power_curve(library, n_control, n_trace, c_alpha, K, K_inner, seed, options);
  auto csv = open_output(dir / "power.csv");
  csv << std::setprecision(17) << "iteration,trace_source,control_source,dissimilarity,h,rejected\n";
  for (const auto& p : curve.sorted_by_dissimilarity()) {
    csv << p.iteration << ',' << library.sources()[p.trace_source].id << ','
        << library.sources()[p.control_source].id << ',' << p.dissimilarity << ',' << p.h << ','
        << (p.rejected ? 1 : 0) << '\n';
  }
  std::vector<double> dissimilarities;
  for (const auto& p : curve.points) dissimilarities.push_back(p.dissimilarity);
  auto binned = open_output(dir / "power_bins.csv");
  binned << std::setprecision(17) << "bin,lower,upper,count,rejection_rate\n";
  const auto table = bin_power(curve, quantile_edges(dissimilarities, bins));
  for (std::size_t b = 0; b < table.size(); ++b) {
    binned << b << ',' << table[b].lower << ',' << table[b].upper << ',' << table[b].count << ','
           << table[b].rejection_rate << '\n';
  }
  write_json(dir / "manifest.json", manifest("power", cfg, {"library", "calibration"}));
  out << "wrote " << (dir / "power.csv").string() << '\n';
  return kExitSuccess;
}

double quartile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  return empirical_quantile(v, p);
}

int cmd_rmp(const json& cfg, std::ostream& out) {
  const auto library = load(cfg, "library");
  const auto n_control = get_count(cfg, "N", 3);
  const double alpha = get_probability(cfg, "alpha");
  const auto K_inner = get_count(cfg, "K_inner", 100);
  const auto repetitions = get_count(cfg, "repetitions", 1);
  const bool resample_controls = cfg.at("resample_controls").get<bool>();
  const auto options = simulation_options_from(cfg);
  const auto seed = get_seed(cfg);
  const ObjectSupply supply(library, options.supply);

  // Each case is a fixed trace set and the source it must not be compared with.
  struct TraceCase {
    std::string source_id;
    std::vector<Spectrum> trace;
  };
  std::vector<TraceCase> cases;
  const bool from_file = !cfg.at("trace").is_null();
  const bool from_source = !cfg.at("trace_source").is_null();
  if (from_file == from_source) throw InputError("give exactly one of --trace and --trace-source");
  std::size_t n_trace = 0;
  if (from_file) {
    const auto trace = all_spectra(load(cfg, "trace"));
    n_trace = trace.size();
    cases.push_back({cfg.at("exclude").is_null() ? "" : cfg["exclude"].get<std::string>(), trace});
  } else {
    n_trace = get_count(cfg, "M", 1);
    const auto wanted = cfg["trace_source"].get<std::string>();
    for (std::size_t s = 0; s < library.size(); ++s) {
      const auto& id = library.sources()[s].id;
      if (wanted != "all" && wanted != id) continue;
      cases.push_back({id, supply.draw(s, n_trace, derive_seed(seed, StreamTag::kObjects, s))});
    }
    if (cases.empty()) throw InputError("unknown trace source '" + wanted + "'");
  }
  const double c_alpha = resolve_c_alpha(cfg, n_control, n_trace, alpha);
  const auto dir = output_dir(cfg);

  auto summary = open_output(dir / "rmp.csv");
  auto detail = open_output(dir / "rmp_detail.csv");
  summary << std::setprecision(17) << "trace_source,repetition,rmp,indistinguishable,compared\n";
  detail << std::setprecision(17) << "trace_source,repetition,control_source,h,indistinguishable\n";
  auto spread = open_output(dir / "rmp_spread.csv");
  spread << std::setprecision(17) << "trace_source,repetitions,median,q1,q3,iqr\n";
  for (const auto& c : cases) {
    std::vector<double> values;
    for (std::size_t r = 0; r < repetitions; ++r) {
      const auto est = estimate_rmp(c.trace, supply, c.source_id, n_control, c_alpha, K_inner,
                                    derive_seed(seed, StreamTag::kTest, r), resample_controls, options);
      values.push_back(est.rmp);
      summary << c.source_id << ',' << r << ',' << est.rmp << ',' << est.indistinguishable << ',' << est.compared
              << '\n';
      for (const auto& s : est.per_source) {
        detail << c.source_id << ',' << r << ',' << s.source_id << ',' << s.h << ',' << (s.indistinguishable ? 1 : 0)
               << '\n';
      }
    }
    const double q1 = quartile(values, 0.25), q3 = quartile(values, 0.75);
    spread << c.source_id << ',' << repetitions << ',' << quartile(values, 0.5) << ',' << q1 << ',' << q3 << ','
           << q3 - q1 << '\n';
  }
  write_json(dir / "manifest.json", manifest("rmp", cfg, {"library", "trace", "calibration"}));
  out << "wrote " << (dir / "rmp.csv").string() << '\n';
  return kExitSuccess;
}

json axes_json(const std::vector<AxisDiagnostics>& axes) {
  json list = json::array();
  for (const auto& a : axes) {
    list.push_back({{"variance", a.variance},
                    {"skewness", a.skewness},
                    {"excess_kurtosis", a.excess_kurtosis},
                    {"jarque_bera", a.jarque_bera},
                    {"p_value", a.p_value},
                    {"zero_variance", a.zero_variance}});
  }
  return list;
}

int cmd_diagnose(const json& cfg, std::ostream& out) {
  const auto library = load(cfg, "library");
  const auto group_size = get_count(cfg, "group_size", 2);
  const auto kernel = kernel_from(cfg.at("kernel"));
  const auto dir = output_dir(cfg);
  const auto report = normality_diagnostics(library, kernel, group_size);

  json pairs = json::array();
  for (const auto& p : report.eigen_pairs) {
    pairs.push_back({{"axis_i", p.axis_i},
                     {"axis_j", p.axis_j},
                     {"correlation", p.correlation},
                     {"squared_correlation", p.squared_correlation}});
  }
  const json result = {{"vectors", report.vectors},
                       {"dimension", report.dimension},
                       {"eigenvalues", std::vector<double>(report.eigenvalues.data(),
                                                           report.eigenvalues.data() + report.eigenvalues.size())},
                       {"original_axes", axes_json(report.original_axes)},
                       {"eigen_axes", axes_json(report.eigen_axes)},
                       {"eigen_pairs", pairs}};
  write_json(dir / "normality.json", result);
  write_json(dir / "manifest.json", manifest("diagnose", cfg, {"library"}));
  out << "wrote " << (dir / "normality.json").string() << '\n';
  return kExitSuccess;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stage common-source testing for spectra"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(TWOSTAGE_VERSION));

  const std::vector<double> alpha_grid{0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95};
  std::vector<std::unique_ptr<Command>> commands;
  auto make = [&](const std::string& name, const std::string& help) -> Command& {
    commands.push_back(std::make_unique<Command>(app, name, help));
    return *commands.back();
  };

  auto& ingest = make("ingest", "validate a spectra file and print a JSON summary");
  ingest.add("library", Kind::kString, nullptr, "spectra file");
  ingest.add("format", Kind::kString, "long-csv", "long-csv or wide-csv");

  auto& simulate = make("simulate", "generate a synthetic source library");
  const SyntheticConfig synthetic;
  simulate.add("n_sources", Kind::kInt, synthetic.n_sources, "number of sources");
  simulate.add("n_replicates", Kind::kInt, synthetic.n_replicates, "replicates per source");
  simulate.add("grid_size", Kind::kInt, synthetic.grid_size, "grid points");
  simulate.add("grid_min", Kind::kDouble, synthetic.grid_min, "lowest wavenumber");
  simulate.add("grid_max", Kind::kDouble, synthetic.grid_max, "highest wavenumber");
  simulate.add("n_peaks", Kind::kInt, synthetic.n_peaks, "peaks in the base template");
  simulate.add("separation", Kind::kDouble, synthetic.separation, "between-source separation");
  simulate.add("within_noise", Kind::kDouble, synthetic.within_noise, "within-source noise scale");
  simulate.add("source_scales", Kind::kDoubleList, json::array(), "per-source separation multipliers");
  simulate.add("format", Kind::kString, "long-csv", "output format");
  simulate.add("seed", Kind::kInt, 1, "random seed");
  simulate.add("out", Kind::kString, nullptr, "output directory");

  auto& test = make("test", "test whether trace and control spectra share a source");
  test.add("trace", Kind::kString, nullptr, "trace spectra file");
  test.add("control", Kind::kString, nullptr, "control spectra file");
  test.add("format", Kind::kString, "long-csv", "input format");
  test.add("K", Kind::kInt, 2000, "Monte Carlo iterations");
  add_threshold_params(test);
  add_model_params(test, LowAcceptance::kAbort);
  add_run_params(test);
  test.add("out", Kind::kString, nullptr, "optional output directory");

  auto& calibrate = make("calibrate", "estimate c(alpha) from same-source simulations");
  calibrate.add("library", Kind::kString, nullptr, "reference library");
  calibrate.add("format", Kind::kString, "long-csv", "input format");
  calibrate.add("N", Kind::kIntList, json::array({5}), "control counts, comma separated");
  calibrate.add("M", Kind::kInt, 3, "trace count");
  calibrate.add("alpha", Kind::kDoubleList, alpha_grid, "alpha levels, comma separated");
  calibrate.add("K_outer", Kind::kInt, 2000, "same-source simulations");
  calibrate.add("K_inner", Kind::kInt, 2000, "Monte Carlo iterations per test");
  add_model_params(calibrate, LowAcceptance::kExact);
  calibrate.add("supply", Kind::kObject, supply_defaults(), "");
  add_run_params(calibrate);
  calibrate.add("out", Kind::kString, nullptr, "output directory");

  auto& power = make("power", "simulate the power curve");
  power.add("library", Kind::kString, nullptr, "reference library");
  power.add("format", Kind::kString, "long-csv", "input format");
  power.add("N", Kind::kInt, 5, "control count");
  power.add("M", Kind::kInt, 3, "trace count");
  power.add("K", Kind::kInt, 1000, "simulated source pairs");
  power.add("K_inner", Kind::kInt, 2000, "Monte Carlo iterations per test");
  power.add("bins", Kind::kInt, 5, "dissimilarity bins for the summary");
  add_threshold_params(power);
  add_model_params(power, LowAcceptance::kExact);
  power.add("supply", Kind::kObject, supply_defaults(), "");
  add_run_params(power);
  power.add("out", Kind::kString, nullptr, "output directory");

  auto& rmp = make("rmp", "estimate the random match probability");
  rmp.add("library", Kind::kString, nullptr, "population library");
  rmp.add("format", Kind::kString, "long-csv", "input format");
  rmp.add("trace", Kind::kString, nullptr, "trace spectra file");
  rmp.add("exclude", Kind::kString, nullptr, "source id left out of the population (with --trace)");
  rmp.add("trace_source", Kind::kString, nullptr, "draw traces from this library source, or 'all'");
  rmp.add("N", Kind::kInt, 5, "control count");
  rmp.add("M", Kind::kInt, 3, "trace count (with --trace-source)");
  rmp.add("K_inner", Kind::kInt, 2000, "Monte Carlo iterations per test");
  rmp.add("repetitions", Kind::kInt, 1, "repetitions with fresh controls");
  rmp.add("resample_controls", Kind::kBool, false, "always draw controls as pseudo-spectra");
  add_threshold_params(rmp);
  add_model_params(rmp, LowAcceptance::kExact);
  rmp.add("supply", Kind::kObject, supply_defaults(), "");
  add_run_params(rmp);
  rmp.add("out", Kind::kString, nullptr, "output directory");

  auto& diagnose = make("diagnose", "normality diagnostics of within-source scores");
  diagnose.add("library", Kind::kString, nullptr, "reference library");
  diagnose.add("format", Kind::kString, "long-csv", "input format");
  diagnose.add("group_size", Kind::kInt, 3, "replicates per group");
  diagnose.add("kernel", Kind::kObject, kernel_defaults(), "");
  diagnose.add("out", Kind::kString, nullptr, "output directory");

  // CLI11 consumes arguments from the back and without the program name.
  std::vector<std::string> reversed(args.begin() + (args.empty() ? 0 : 1), args.end());
  std::reverse(reversed.begin(), reversed.end());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitSuccess : kExitInputError;
  }

  try {
    for (const auto& c : commands) {
      if (!c->app()->parsed()) continue;
      const json cfg = c->resolve();
      if (c->name() == "ingest") return cmd_ingest(cfg, out);
      if (c->name() == "simulate") return cmd_simulate(cfg, out);
      if (c->name() == "test") return cmd_test(cfg, out);
      if (c->name() == "calibrate") return cmd_calibrate(cfg, out);
      if (c->name() == "power") return cmd_power(cfg, out);
      if (c->name() == "rmp") return cmd_rmp(cfg, out);
      if (c->name() == "diagnose") return cmd_diagnose(cfg, out);
    }
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  } catch (const MissingPrerequisite& e) {
    err << "missing prerequisite: " << e.what() << '\n';
    return kExitMissingPrerequisite;
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kExitNumericError;
  } catch (const json::exception& e) {
    err << "error: invalid configuration: " << e.what() << '\n';
    return kExitInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInputError;
  }
  err << "error: no command given\n";
  return kExitInputError;
}

}  // namespace twostage
