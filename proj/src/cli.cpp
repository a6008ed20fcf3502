#include "poisoncert/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <thread>

#include "poisoncert/errors.hpp"
#include "poisoncert/model.hpp"
#include "poisoncert/rng.hpp"

namespace poisoncert::cli {

using nlohmann::json;

std::string format_double(double value) {
  if (std::isnan(value)) return "nan";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), value);
  return std::string(buf, res.ptr);
}

void write_file_atomic(const std::string& path, std::string_view contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw Error("write failed for " + path);
  }
  std::filesystem::rename(tmp, path);
}

void RunConfig::validate() const {
  if (eps.empty()) throw ConfigError("at least one eps value is required");
  for (const double e : eps) {
    if (!(e >= 0.0 && e <= 1.0)) throw ConfigError("eps values must lie in [0, 1]");
  }
  if (seeds.empty()) throw ConfigError("at least one seed is required");
  if (!(rho > 0.0)) throw ConfigError("rho must be positive");
  if (eta && !(*eta > 0.0)) throw ConfigError("eta must be positive");
  if (steps && *steps < 1) throw ConfigError("steps must be at least 1");
  if (!(defense.keep_fraction > 0.0 && defense.keep_fraction <= 1.0)) {
    throw ConfigError("keep_fraction must lie in (0, 1]");
  }
  if (defense.kind == DefenseKind::kDataDependent && defense.integer_features) {
    throw ConfigError("the data-dependent defense does not support integer features");
  }
  if (defense.kind == DefenseKind::kDataDependent && !defense.use_sphere) {
    throw ConfigError("the data-dependent defense requires the sphere constraint");
  }
  if (sdp_samples < 0 || attack_samples < 1 || candidate_steps < 1) {
    throw ConfigError("sdp samples must be >= 0, attack samples and candidate steps >= 1");
  }
  if (!(sdp_tol > 0.0) || sdp_max_iter < 1) throw ConfigError("invalid SDP settings");
  if (!(train_tol > 0.0) || train_max_epochs < 1) throw ConfigError("invalid training settings");
  if (integer_budget < 1) throw ConfigError("integer budget must be at least 1");
  if (attack_steps < 0 || !(attack_step_size > 0.0)) throw ConfigError("invalid gradient attack settings");
  if (jobs < 1) throw ConfigError("jobs must be at least 1");
  if (!(data.test_fraction >= 0.0 && data.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  if (data.gaussian) poisoncert::validate(*data.gaussian);
}

namespace {

std::size_t line_at(std::string_view text, std::size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

// Schema checks over a parsed config; failures point at the line where the key appears.
class Schema {
 public:
  explicit Schema(std::string_view text) : text_(text) {}

  [[noreturn]] void fail(const std::string& key, const std::string& message) const {
    const std::size_t pos = text_.find("\"" + key + "\"");
    throw ParseError(pos == std::string_view::npos ? 1 : line_at(text_, pos), "config '" + key + "': " + message);
  }

  void only(const json& obj, const std::string& where, std::initializer_list<std::string_view> keys) const {
    if (!obj.is_object()) fail(where, "expected an object");
    for (const auto& [k, v] : obj.items()) {
      if (std::find(keys.begin(), keys.end(), k) == keys.end()) fail(k, "unknown key in " + where);
    }
  }

  double number(const json& v, const std::string& key) const {
    if (!v.is_number()) fail(key, "expected a number");
    return v.get<double>();
  }
  long integer(const json& v, const std::string& key) const {
    if (!v.is_number_integer()) fail(key, "expected an integer");
    return v.get<long>();
  }
  std::uint64_t unsigned_integer(const json& v, const std::string& key) const {
    if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<long long>() >= 0)) {
      fail(key, "expected a non-negative integer");
    }
    return v.get<std::uint64_t>();
  }
  bool boolean(const json& v, const std::string& key) const {
    if (!v.is_boolean()) fail(key, "expected true or false");
    return v.get<bool>();
  }
  std::string string(const json& v, const std::string& key) const {
    if (!v.is_string()) fail(key, "expected a string");
    return v.get<std::string>();
  }

  template <class F>
  auto guarded(const std::string& key, F&& f) const {
    try {
      return f();
    } catch (const ConfigError& e) {
      fail(key, e.what());
    }
  }

 private:
  std::string_view text_;
};

}  // namespace

RunConfig parse_run_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ParseError(line_at(text, e.byte == 0 ? 0 : e.byte - 1), "invalid JSON in config");
  }
  const Schema sc(text);
  sc.only(root, "config",
          {"data", "defense", "eps", "seeds", "seed", "rho", "eta", "steps", "sdp", "train", "integer", "attack", "out",
           "jobs"});
  RunConfig c;
  if (root.contains("data")) {
    const json& d = root["data"];
    sc.only(d, "data", {"train", "test", "format", "gaussian", "test_fraction"});
    if (d.contains("train")) c.data.train_path = sc.string(d["train"], "train");
    if (d.contains("test")) c.data.test_path = sc.string(d["test"], "test");
    if (d.contains("format")) {
      const std::string f = sc.string(d["format"], "format");
      c.data.format = sc.guarded("format", [&] { return parse_format(f); });
    }
    if (d.contains("test_fraction")) c.data.test_fraction = sc.number(d["test_fraction"], "test_fraction");
    if (d.contains("gaussian")) {
      const json& g = d["gaussian"];
      sc.only(g, "gaussian", {"d", "lambda", "n", "seed"});
      GaussianSpec spec;
      if (g.contains("d")) spec.d = sc.integer(g["d"], "d");
      if (g.contains("lambda")) spec.lambda = sc.number(g["lambda"], "lambda");
      if (g.contains("n")) spec.n = sc.integer(g["n"], "n");
      if (g.contains("seed")) spec.seed = sc.unsigned_integer(g["seed"], "seed");
      c.data.gaussian = spec;
    }
  }
  if (root.contains("defense")) {
    const json& d = root["defense"];
    sc.only(d, "defense", {"kind", "keep_fraction", "sphere", "slab", "integer"});
    if (d.contains("kind")) {
      const std::string k = sc.string(d["kind"], "kind");
      c.defense.kind = sc.guarded("kind", [&] { return parse_defense_kind(k); });
    }
    if (d.contains("keep_fraction")) c.defense.keep_fraction = sc.number(d["keep_fraction"], "keep_fraction");
    if (d.contains("sphere")) c.defense.use_sphere = sc.boolean(d["sphere"], "sphere");
    if (d.contains("slab")) c.defense.use_slab = sc.boolean(d["slab"], "slab");
    if (d.contains("integer")) c.defense.integer_features = sc.boolean(d["integer"], "integer");
  }
  if (root.contains("eps")) {
    const json& e = root["eps"];
    c.eps.clear();
    if (e.is_array()) {
      for (const json& v : e) c.eps.push_back(sc.number(v, "eps"));
    } else {
      c.eps.push_back(sc.number(e, "eps"));
    }
  }
  if (root.contains("seeds") || root.contains("seed")) {
    const std::string key = root.contains("seeds") ? "seeds" : "seed";
    const json& s = root[key];
    c.seeds.clear();
    if (s.is_array()) {
      for (const json& v : s) c.seeds.push_back(sc.unsigned_integer(v, key));
    } else {
      c.seeds.push_back(sc.unsigned_integer(s, key));
    }
  }
  if (root.contains("rho")) c.rho = sc.number(root["rho"], "rho");
  if (root.contains("eta") && !root["eta"].is_null()) c.eta = sc.number(root["eta"], "eta");
  if (root.contains("steps") && !root["steps"].is_null()) c.steps = sc.integer(root["steps"], "steps");
  if (root.contains("sdp")) {
    const json& s = root["sdp"];
    sc.only(s, "sdp", {"samples", "tol", "max_iter", "attack_samples", "candidate_steps"});
    if (s.contains("samples")) c.sdp_samples = static_cast<int>(sc.integer(s["samples"], "samples"));
    if (s.contains("tol")) c.sdp_tol = sc.number(s["tol"], "tol");
    if (s.contains("max_iter")) c.sdp_max_iter = static_cast<int>(sc.integer(s["max_iter"], "max_iter"));
    if (s.contains("attack_samples")) {
      c.attack_samples = static_cast<int>(sc.integer(s["attack_samples"], "attack_samples"));
    }
    if (s.contains("candidate_steps")) {
      c.candidate_steps = static_cast<int>(sc.integer(s["candidate_steps"], "candidate_steps"));
    }
  }
  if (root.contains("train")) {
    const json& t = root["train"];
    sc.only(t, "train", {"tol", "max_epochs"});
    if (t.contains("tol")) c.train_tol = sc.number(t["tol"], "tol");
    if (t.contains("max_epochs")) c.train_max_epochs = static_cast<int>(sc.integer(t["max_epochs"], "max_epochs"));
  }
  if (root.contains("integer")) {
    const json& t = root["integer"];
    sc.only(t, "integer", {"budget"});
    if (t.contains("budget")) c.integer_budget = static_cast<int>(sc.integer(t["budget"], "budget"));
  }
  if (root.contains("attack")) {
    const json& a = root["attack"];
    sc.only(a, "attack", {"kind", "steps", "step_size"});
    if (a.contains("kind")) {
      const std::string k = sc.string(a["kind"], "kind");
      c.attack_kind = sc.guarded("kind", [&] { return parse_attack_kind(k); });
    }
    if (a.contains("steps")) c.attack_steps = static_cast<int>(sc.integer(a["steps"], "steps"));
    if (a.contains("step_size")) c.attack_step_size = sc.number(a["step_size"], "step_size");
  }
  if (root.contains("out")) c.out_dir = sc.string(root["out"], "out");
  if (root.contains("jobs")) c.jobs = static_cast<int>(sc.integer(root["jobs"], "jobs"));
  return c;
}

json config_to_json(const RunConfig& c) {
  json data = {{"format", format_name(c.data.format)}, {"test_fraction", c.data.test_fraction}};
  if (c.data.gaussian) {
    data["gaussian"] = {{"d", c.data.gaussian->d},
                        {"lambda", c.data.gaussian->lambda},
                        {"n", c.data.gaussian->n},
                        {"seed", c.data.gaussian->seed}};
  } else {
    data["train"] = c.data.train_path;
    data["test"] = c.data.test_path;
  }
  json j = {
      {"data", data},
      {"defense",
       {{"kind", defense_kind_name(c.defense.kind)},
        {"keep_fraction", c.defense.keep_fraction},
        {"sphere", c.defense.use_sphere},
        {"slab", c.defense.use_slab},
        {"integer", c.defense.integer_features}}},
      {"eps", c.eps},
      {"seeds", c.seeds},
      {"rho", c.rho},
      {"eta", c.eta ? json(*c.eta) : json(nullptr)},
      {"steps", c.steps ? json(*c.steps) : json(nullptr)},
      {"sdp",
       {{"samples", c.sdp_samples},
        {"tol", c.sdp_tol},
        {"max_iter", c.sdp_max_iter},
        {"attack_samples", c.attack_samples},
        {"candidate_steps", c.candidate_steps}}},
      {"train", {{"tol", c.train_tol}, {"max_epochs", c.train_max_epochs}}},
      {"integer", {{"budget", c.integer_budget}}},
      {"attack",
       {{"kind", attack_kind_name(c.attack_kind)}, {"steps", c.attack_steps}, {"step_size", c.attack_step_size}}},
  };
  return j;
}

std::string config_hash(const RunConfig& config) {
  const std::string text = config_to_json(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

CertifyConfig certify_config(const RunConfig& c, double eps, std::uint64_t seed) {
  CertifyConfig cc;
  cc.eps = eps;
  cc.rho = c.rho;
  cc.eta = c.eta;
  cc.steps = c.steps;
  cc.seed = seed;
  cc.train.tol = c.train_tol;
  cc.train.max_epochs = c.train_max_epochs;
  cc.train.seed = mix_seed(seed, 0x7a11);
  cc.integer.budget = c.integer_budget;
  cc.sdp.samples = c.sdp_samples;
  cc.sdp.sdp.tol = c.sdp_tol;
  cc.sdp.sdp.max_iter = c.sdp_max_iter;
  cc.attack_samples = c.attack_samples;
  cc.candidate_steps = c.candidate_steps;
  return cc;
}

namespace {

json vector_json(const Vector& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

json dataset_json(const Dataset& d) {
  json pts = json::array();
  for (Eigen::Index i = 0; i < d.size(); ++i) pts.push_back({{"y", d.y(i)}, {"x", vector_json(d.x(i))}});
  return pts;
}

}  // namespace

json certificate_to_json(const Certificate& c) {
  json trace = json::array();
  for (const StepTrace& s : c.trace) {
    trace.push_back({{"t", s.t},
                     {"U", s.u},
                     {"lambda", s.lambda},
                     {"grad_norm", s.grad_norm},
                     {"oracle_loss", s.oracle_loss},
                     {"regret_bound", s.regret_bound}});
  }
  return {{"oracle", c.oracle},
          {"eps", c.eps},
          {"rho", c.rho},
          {"eta", c.eta},
          {"steps", c.steps},
          {"upper_bound", c.upper_bound},
          {"lower_bound", c.lower_bound},
          {"duality_gap", c.duality_gap},
          {"clean_train_loss", c.clean_train_loss},
          {"model_tilde", {{"rho", c.model_tilde.rho()}, {"theta", vector_json(c.model_tilde.theta())}}},
          {"attack", dataset_json(c.attack)},
          {"u_trace", c.u_trace},
          {"regret_bound_trace", c.regret_bound_trace},
          {"trace", trace},
          {"sandwich", {{"checked", c.sandwich_checked}, {"holds", c.sandwich_holds}}},
          {"skipped_steps", c.skipped_steps},
          {"train_converged", c.train_converged}};
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double test_fraction, std::uint64_t seed) {
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
  const auto n_test = static_cast<std::size_t>(std::floor(test_fraction * static_cast<double>(data.size()) + 1e-9));
  std::vector<Eigen::Index> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<Eigen::Index> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {data.subset(train), data.subset(test)};
}

namespace {

struct LoadedData {
  Dataset train;
  Dataset test;
};

LoadedData load_data(const RunConfig& c) {
  LoadedData d;
  if (c.data.gaussian) {
    auto [train, test] = split_dataset(generate_gaussian(*c.data.gaussian), c.data.test_fraction,
                                       mix_seed(c.data.gaussian->seed, 0x5917ULL));
    d.train = std::move(train);
    d.test = std::move(test);
  } else {
    if (c.data.train_path.empty()) throw ConfigError("no training data: set data.train or data.gaussian");
    d.train = load_dataset(c.data.train_path, c.data.format);
    if (!c.data.test_path.empty()) d.test = load_dataset(c.data.test_path, c.data.format);
  }
  class_stats(d.train);
  if (!d.test.empty() && d.test.dim() != d.train.dim()) throw DimensionError("train and test dimensions differ");
  return d;
}

// Runs fn(i) for i in [0, count) on up to `jobs` threads; exceptions are kept per job.
template <class F>
std::vector<std::exception_ptr> run_pool(std::size_t count, int jobs, F&& fn) {
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
  std::vector<std::thread> threads;
  for (std::size_t t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (std::thread& t : threads) t.join();
  return errors;
}

struct Failure {
  int code = kUsageError;
  json body;
};

Failure describe(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const ParseError& e) {
    return {kUsageError, {{"error", "parse"}, {"message", e.what()}, {"line", e.line()}}};
  } catch (const NumericalError& e) {
    return {kNumericalError, {{"error", "numerical"}, {"message", e.what()}}};
  } catch (const ConfigError& e) {
    return {kUsageError, {{"error", "config"}, {"message", e.what()}}};
  } catch (const DimensionError& e) {
    return {kUsageError, {{"error", "dimension"}, {"message", e.what()}}};
  } catch (const StatsError& e) {
    return {kUsageError, {{"error", "stats"}, {"message", e.what()}}};
  } catch (const std::exception& e) {
    return {kUsageError, {{"error", "io"}, {"message", e.what()}}};
  }
}

std::string job_tag(double eps, std::uint64_t seed) {
  return "eps" + format_double(eps) + "_seed" + std::to_string(seed);
}

struct Job {
  double eps;
  std::uint64_t seed;
};

std::vector<Job> expand_jobs(const RunConfig& c) {
  std::vector<Job> jobs;
  for (const double e : c.eps) {
    for (const std::uint64_t s : c.seeds) jobs.push_back({e, s});
  }
  return jobs;
}

json header_json(const RunConfig& c) {
  return {{"version", kVersion}, {"config_hash", config_hash(c)}, {"config", config_to_json(c)}};
}

json test_json(const LinearModel& model, const Dataset& test) {
  if (test.empty()) return nullptr;
  const LossReport r = evaluate(model, test);
  return {{"hinge", r.avg_hinge}, {"zero_one", r.zero_one}, {"n", r.n_points}};
}

int report_failures(const std::vector<std::exception_ptr>& errors, const std::vector<Job>& jobs, std::ostream& err) {
  int code = kOk;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    Failure f = describe(errors[i]);
    f.body["eps"] = jobs[i].eps;
    f.body["seed"] = jobs[i].seed;
    err << f.body.dump() << '\n';
    code = std::max(code, f.code);
  }
  return code;
}

int cmd_certify(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const LoadedData data = load_data(c);
  const FeasibleSet defense = make_feasible_set(c.defense, data.train);
  const std::vector<Job> jobs = expand_jobs(c);
  std::vector<std::optional<Certificate>> certs(jobs.size());
  const std::vector<std::exception_ptr> errors = run_pool(jobs.size(), c.jobs, [&](std::size_t i) {
    certs[i] = certify(data.train, defense, certify_config(c, jobs[i].eps, jobs[i].seed));
  });

  std::filesystem::create_directories(c.out_dir);
  const std::filesystem::path dir(c.out_dir);
  std::ostringstream csv;
  csv << kSweepHeader << '\n';
  int code = report_failures(errors, jobs, err);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (!certs[i]) continue;
    const Certificate& cert = *certs[i];
    json j = header_json(c);
    j["seed"] = jobs[i].seed;
    j["certificate"] = certificate_to_json(cert);
    j["test"] = test_json(cert.model_tilde, data.test);
    const std::string tag = job_tag(jobs[i].eps, jobs[i].seed);
    write_file_atomic((dir / ("certificate_" + tag + ".json")).string(), j.dump(2) + "\n");
    if (!cert.attack.empty()) save_dataset(dir / ("attack_" + tag + ".csv"), cert.attack, DataFormat::kDenseCsv);

    std::string test_hinge, test_zero_one;
    if (!data.test.empty()) {
      const LossReport r = evaluate(cert.model_tilde, data.test);
      test_hinge = format_double(r.avg_hinge);
      test_zero_one = format_double(r.zero_one);
    }
    const double regret = cert.steps > 0 ? cert.regret_bound_trace.back() / static_cast<double>(cert.steps) : 0.0;
    csv << format_double(cert.eps) << ',' << format_double(cert.upper_bound) << ','
        << format_double(cert.lower_bound) << ',' << format_double(cert.clean_train_loss) << ',' << test_hinge << ','
        << test_zero_one << ',' << format_double(cert.duality_gap) << ',' << format_double(regret) << '\n';
    if (cert.sandwich_checked && !cert.sandwich_holds) {
      err << json{{"error", "numerical"},
                  {"message", "duality sandwich violated beyond tolerance"},
                  {"eps", jobs[i].eps},
                  {"seed", jobs[i].seed}}
                 .dump()
          << '\n';
      code = std::max(code, kNumericalError);
    }
  }
  write_file_atomic((dir / "sweep.csv").string(), csv.str());
  out << json{{"status", code == kOk ? "ok" : "failed"},
              {"runs", jobs.size()},
              {"out", c.out_dir},
              {"config_hash", config_hash(c)}}
             .dump()
      << '\n';
  return code;
}

int cmd_attack(const RunConfig& c, std::ostream& out, std::ostream& err) {
  const LoadedData data = load_data(c);
  const FeasibleSet defense = make_feasible_set(c.defense, data.train);
  const std::vector<Job> jobs = expand_jobs(c);
  std::vector<json> reports(jobs.size());
  std::vector<Dataset> attacks(jobs.size());
  const std::vector<std::exception_ptr> errors = run_pool(jobs.size(), c.jobs, [&](std::size_t i) {
    const auto [eps, seed] = jobs[i];
    AttackSpec spec{c.attack_kind, eps, seed, c.attack_steps, c.attack_step_size};
    spec.validate();
    const CertifyConfig cc = certify_config(c, eps, seed);
    json r = header_json(c);
    r["kind"] = attack_kind_name(c.attack_kind);
    r["eps"] = eps;
    r["seed"] = seed;
    std::optional<LinearModel> model;
    double lower = 0.0;
    if (c.attack_kind == AttackKind::kCertificate) {
      const Certificate cert = certify(data.train, defense, cc);
      attacks[i] = cert.attack;
      model = cert.model_tilde;
      lower = cert.lower_bound;
      r["exhausted"] = false;
      r["warnings"] = json::array();
      r["upper_bound"] = cert.upper_bound;
    } else {
      const AttackResult a =
          c.attack_kind == AttackKind::kLabelFlip
              ? label_flip_attack(data.train, defense, eps, seed)
              : gradient_attack(data.train, defense, eps, c.rho, c.attack_steps, c.attack_step_size, seed, cc.train);
      attacks[i] = a.points;
      r["exhausted"] = a.exhausted;
      r["warnings"] = a.warnings;
      if (c.attack_kind == AttackKind::kGradient) r["loss_trace"] = a.loss_trace;
      const Dataset combined = data.train.concat(a.points);
      const Eigen::VectorXd w =
          Eigen::VectorXd::Constant(combined.size(), 1.0 / static_cast<double>(data.train.size()));
      const TrainResult tr = train_erm_weighted(combined, w, c.rho, cc.train);
      model = tr.model;
      lower = tr.objective;
    }
    r["attack_size"] = attacks[i].size();
    r["lower_bound"] = lower;
    r["clean_train_loss"] = evaluate(*model, data.train).avg_hinge;
    r["model"] = {{"rho", model->rho()}, {"theta", vector_json(model->theta())}};
    r["test"] = test_json(*model, data.test);
    reports[i] = std::move(r);
  });

  std::filesystem::create_directories(c.out_dir);
  const std::filesystem::path dir(c.out_dir);
  const int code = report_failures(errors, jobs, err);
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (errors[i]) continue;
    for (const auto& w : reports[i]["warnings"]) {
      err << json{{"warning", w}, {"eps", jobs[i].eps}, {"seed", jobs[i].seed}}.dump() << '\n';
    }
    const std::string tag = std::string(attack_kind_name(c.attack_kind)) + "_" + job_tag(jobs[i].eps, jobs[i].seed);
    write_file_atomic((dir / ("attack_report_" + tag + ".json")).string(), reports[i].dump(2) + "\n");
    save_dataset(dir / ("attack_" + tag + ".csv"), attacks[i], DataFormat::kDenseCsv);
  }
  out << json{{"status", code == kOk ? "ok" : "failed"}, {"runs", jobs.size()}, {"out", c.out_dir}}.dump() << '\n';
  return code;
}

struct GenArgs {
  GaussianSpec spec;
  double test_fraction = 0.2;
  std::string out_dir = ".";
};

int cmd_gen_data(const GenArgs& g, std::ostream& out) {
  if (!(g.test_fraction >= 0.0 && g.test_fraction < 1.0)) throw ConfigError("test_fraction must lie in [0, 1)");
  const Dataset all = generate_gaussian(g.spec);
  auto [train, test] = split_dataset(all, g.test_fraction, mix_seed(g.spec.seed, 0x5917ULL));
  if (train.count(1) == 0 || train.count(-1) == 0) throw StatsError("training split lacks one of the classes");
  std::filesystem::create_directories(g.out_dir);
  const std::filesystem::path dir(g.out_dir);
  save_dataset(dir / "train.csv", train, DataFormat::kDenseCsv);
  save_dataset(dir / "test.csv", test, DataFormat::kDenseCsv);
  out << json{{"train", (dir / "train.csv").string()},
              {"test", (dir / "test.csv").string()},
              {"n_train", train.size()},
              {"n_test", test.size()}}
             .dump()
      << '\n';
  return kOk;
}

struct BoundArgs {
  std::optional<double> n;
  std::optional<double> radius;
  double rho = 1.0;
  double delta = 0.1;
  std::string train_path;
  DataFormat format = DataFormat::kDenseCsv;
};

int cmd_bound(const BoundArgs& b, std::ostream& out) {
  double n = b.n.value_or(0.0);
  double radius = b.radius.value_or(0.0);
  if (!b.train_path.empty()) {
    const Dataset d = load_dataset(b.train_path, b.format);
    if (!b.n) n = static_cast<double>(d.size());
    if (!b.radius) radius = d.empty() ? 0.0 : d.features().rowwise().norm().maxCoeff();
  } else if (!b.n || !b.radius) {
    throw ConfigError("bound needs --n and --radius, or --train");
  }
  const double e = generalization_bound(n, b.rho, b.delta, radius);
  out << json{{"n", n}, {"rho", b.rho}, {"delta", b.delta}, {"radius", radius}, {"bound", e}}.dump() << '\n';
  return kOk;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Flags registered on both certify and attack; applied over the config file.
struct RunFlags {
  std::string config;
  std::vector<double> eps;
  std::vector<std::uint64_t> seeds;
  std::string defense;
  double keep_fraction = 0.0;
  double rho = 0.0;
  double eta = 0.0;
  long steps = 0;
  bool integer = false;
  int sdp_samples = 0;
  std::string out;
  int jobs = 0;
  std::string train, test, format;
  std::string kind;
  int attack_steps = 0;
  double step_size = 0.0;
  std::vector<CLI::Option*> opts;

  void add(CLI::App* app, bool attack) {
    app->add_option("--config", config, "JSON run config");
    opts.push_back(app->add_option("--eps", eps, "attack budgets, comma separated")->delimiter(','));
    opts.push_back(app->add_option("--seed", seeds, "seeds, comma separated")->delimiter(','));
    opts.push_back(app->add_option("--defense", defense, "oracle or data-dep"));
    opts.push_back(app->add_option("--keep-fraction", keep_fraction, "per-class quantile kept by the defense"));
    opts.push_back(app->add_option("--rho", rho, "model norm bound"));
    opts.push_back(app->add_option("--eta", eta, "dual averaging step parameter"));
    opts.push_back(app->add_option("--steps", steps, "oracle steps (default floor(eps n))"));
    opts.push_back(app->add_flag("--integer", integer, "non-negative integer features"));
    opts.push_back(app->add_option("--sdp-samples", sdp_samples, "SDP weight draws per step"));
    opts.push_back(app->add_option("--out", out, "output directory"));
    opts.push_back(app->add_option("--jobs", jobs, "worker threads"));
    opts.push_back(app->add_option("--train", train, "training data file"));
    opts.push_back(app->add_option("--test", test, "test data file"));
    opts.push_back(app->add_option("--format", format, "dense-csv or sparse-text"));
    if (attack) {
      opts.push_back(app->add_option("--kind", kind, "label-flip, gradient or certificate"));
      opts.push_back(app->add_option("--attack-steps", attack_steps, "gradient attack iterations"));
      opts.push_back(app->add_option("--step-size", step_size, "gradient attack step size"));
    }
  }

  RunConfig resolve(const CLI::App& app) const {
    RunConfig c = config.empty() ? RunConfig{} : parse_run_config(read_text(config));
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--eps")) c.eps = eps;
    if (given("--seed")) c.seeds = seeds;
    if (given("--defense")) c.defense.kind = parse_defense_kind(defense);
    if (given("--keep-fraction")) c.defense.keep_fraction = keep_fraction;
    if (given("--rho")) c.rho = rho;
    if (given("--eta")) c.eta = eta;
    if (given("--steps")) c.steps = steps;
    if (given("--integer")) c.defense.integer_features = integer;
    if (given("--sdp-samples")) c.sdp_samples = sdp_samples;
    if (given("--out")) c.out_dir = out;
    if (given("--jobs")) c.jobs = jobs;
    if (given("--train")) {
      c.data.train_path = train;
      c.data.gaussian.reset();
    }
    if (given("--test")) c.data.test_path = test;
    if (given("--format")) c.data.format = parse_format(format);
    if (app.get_option_no_throw("--kind") != nullptr && given("--kind")) c.attack_kind = parse_attack_kind(kind);
    if (app.get_option_no_throw("--attack-steps") != nullptr && given("--attack-steps")) c.attack_steps = attack_steps;
    if (app.get_option_no_throw("--step-size") != nullptr && given("--step-size")) c.attack_step_size = step_size;
    c.validate();
    return c;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Certified bounds and attacks for data poisoning of linear classifiers", "poisoncert"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* gen_cmd = app.add_subcommand("gen-data", "write a seeded two-Gaussian train/test split");
  gen_cmd->add_option("--d", gen.spec.d, "dimension");
  gen_cmd->add_option("--lambda", gen.spec.lambda, "class mean offset along e1");
  gen_cmd->add_option("--n", gen.spec.n, "total number of points");
  gen_cmd->add_option("--seed", gen.spec.seed, "generator seed");
  gen_cmd->add_option("--test-fraction", gen.test_fraction, "fraction held out for testing");
  gen_cmd->add_option("--out", gen.out_dir, "output directory");

  RunFlags cert_flags;
  CLI::App* cert_cmd = app.add_subcommand("certify", "upper and lower bounds on the worst-case training loss");
  cert_flags.add(cert_cmd, false);

  RunFlags attack_flags;
  CLI::App* attack_cmd = app.add_subcommand("attack", "run a named attack, retrain and report losses");
  attack_flags.add(attack_cmd, true);

  BoundArgs bound;
  std::string bound_format;
  CLI::App* bound_cmd = app.add_subcommand("bound", "uniform-convergence bound on train/test hinge gap");
  auto* n_opt = bound_cmd->add_option("--n", bound.n.emplace(), "number of training points");
  auto* r_opt = bound_cmd->add_option("--radius", bound.radius.emplace(), "bound on ||x||");
  bound_cmd->add_option("--rho", bound.rho, "model norm bound");
  bound_cmd->add_option("--delta", bound.delta, "failure probability");
  bound_cmd->add_option("--train", bound.train_path, "derive n and radius from this dataset");
  bound_cmd->add_option("--format", bound_format, "dense-csv or sparse-text");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i > 0; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
    return kUsageError;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen_data(gen, out);
    if (cert_cmd->parsed()) return cmd_certify(cert_flags.resolve(*cert_cmd), out, err);
    if (attack_cmd->parsed()) return cmd_attack(attack_flags.resolve(*attack_cmd), out, err);
    if (bound_cmd->parsed()) {
      if (n_opt->count() == 0) bound.n.reset();
      if (r_opt->count() == 0) bound.radius.reset();
      if (!bound_format.empty()) bound.format = parse_format(bound_format);
      return cmd_bound(bound, out);
    }
  } catch (...) {
    const Failure f = describe(std::current_exception());
    err << f.body.dump() << '\n';
    return f.code;
  }
  return kUsageError;
}

}  // namespace poisoncert::cli
