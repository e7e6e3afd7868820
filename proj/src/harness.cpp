#include "catcma/harness.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

namespace catcma::harness {
namespace {

std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  const auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

long parse_long(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("malformed integer for '" + key + "': " + value);
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("malformed number for '" + key + "': " + value);
  }
}

unsigned trial_thread_count(int trials) {
  unsigned n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  if (const char* env = std::getenv("CATCMA_THREADS")) {
    long cap = 1;
    try {
      cap = std::stol(env);
    } catch (const std::exception&) {
      throw ConfigError("CATCMA_THREADS must be an integer");
    }
    cap = std::max<long>(cap, 1);
    n = std::min<unsigned>(n, static_cast<unsigned>(cap));
  }
  return std::min<unsigned>(n, static_cast<unsigned>(std::max(trials, 1)));
}

GenerationRow diagnostics_row(const CatCma<double>& opt,
                              const MixedObjective<double>& obj) {
  GenerationRow row;
  row.eval_count = opt.eval_count();
  row.best_f = opt.best().f;
  row.sigma = opt.gaussian().sigma;
  if (opt.dims().n_co > 0) {
    Eigen::SelfAdjointEigenSolver<MatrixX<double>> es(opt.gaussian().cov,
                                                      Eigen::EigenvaluesOnly);
    const double s2 = row.sigma * row.sigma;
    row.min_eig = s2 * es.eigenvalues().minCoeff();
    row.max_eig = s2 * es.eigenvalues().maxCoeff();
  }
  double q_best = 0;
  for (const auto& block : opt.categorical().q) {
    const double v = obj.optimal_category ? block[*obj.optimal_category]
                                          : block.maxCoeff();
    q_best = std::max(q_best, v);
  }
  row.q_best_max = q_best;
  row.delta = opt.categorical().delta;
  return row;
}

TrialRecord run_trial(const ExperimentConfig& config, const MixedObjective<double>& obj,
                      const Hyperparameters<double>& hp, int trial) {
  TrialRecord record;
  record.trial = trial;
  record.seed = config.seed_base + static_cast<std::uint64_t>(trial);

  // The init box draw uses a stream decorrelated from the optimizer seed.
  std::mt19937_64 init_rng(record.seed ^ 0x9E3779B97F4A7C15ull);
  std::uniform_real_distribution<double> box(config.init_lower, config.init_upper);
  JointInit<double> init;
  init.mean.resize(config.n_co);
  for (Eigen::Index i = 0; i < config.n_co; ++i) init.mean[i] = box(init_rng);
  init.sigma = config.sigma0;

  CatCma<double> opt(obj.dims, init, config.mode, record.seed, hp);
  TerminationCriteria<double> stop;
  stop.max_evaluations = config.budget;
  stop.target_fitness = config.target;

  while (!opt.should_terminate(stop)) {
    const auto& candidates = opt.ask();
    std::vector<double> fitness(candidates.size());
    for (std::size_t i = 0; i < candidates.size(); ++i)
      fitness[i] = obj.evaluator(candidates[i].x, candidates[i].c);
    opt.tell(fitness);
    record.rows.push_back(diagnostics_row(opt, obj));
  }
  return record;
}

}  // namespace

MarginSetting MarginSetting::parse(const std::string& text) {
  MarginSetting m;
  if (text == "large") m.kind = Kind::Large;
  else if (text == "small") m.kind = Kind::Small;
  else if (text == "small-alt") m.kind = Kind::SmallAlt;
  else if (text == "recommended") m.kind = Kind::Recommended;
  else {
    m.kind = Kind::Explicit;
    m.value = parse_double("margin", text);
    if (!(m.value > 0)) throw ConfigError("explicit margin must be positive");
  }
  return m;
}

std::string MarginSetting::name() const {
  switch (kind) {
    case Kind::Large: return "large";
    case Kind::Small: return "small";
    case Kind::SmallAlt: return "small-alt";
    case Kind::Recommended: return "recommended";
    case Kind::Explicit: return fmt17(value);
  }
  return "?";
}

std::vector<double> MarginSetting::resolve(const ProblemDims& dims,
                                           Eigen::Index lambda) const {
  switch (kind) {
    case Kind::Large: return margin_variant<double>(MarginKind::Large, dims, lambda);
    case Kind::Small: return margin_variant<double>(MarginKind::Small, dims, lambda);
    case Kind::SmallAlt:
      return margin_variant<double>(MarginKind::SmallAlt, dims, lambda);
    case Kind::Recommended:
      return margin_variant<double>(MarginKind::Recommended, dims, lambda);
    case Kind::Explicit: {
      std::vector<double> m(dims.categories.size(), value);
      for (std::size_t n = 0; n < m.size(); ++n)
        if (!(m[n] < 1.0 / double(dims.categories[n])))
          throw ConfigError("explicit margin must be below 1/K in every dimension");
      return m;
    }
  }
  throw ConfigError("invalid margin kind");
}

ProblemDims ExperimentConfig::dims() const {
  ProblemDims d;
  d.n_co = n_co;
  d.n_ca = n_ca;
  d.categories = categories;
  if (d.categories.empty())
    d.categories.assign(static_cast<std::size_t>(std::max<Eigen::Index>(n_ca, 0)),
                        uniform_k);
  d.validate();
  return d;
}

void ExperimentConfig::validate() const {
  const ProblemDims d = dims();
  if (trials < 1) throw ConfigError("trials must be >= 1");
  if (!(init_lower < init_upper))
    throw ConfigError("init box must satisfy lower < upper");
  if (!(sigma0 > 0)) throw ConfigError("sigma0 must be positive");
  const auto hp = default_hyperparameters<double>(d);
  if (budget < hp.lambda)
    throw ConfigError("budget must be at least one population (lambda = " +
                      std::to_string(hp.lambda) + ")");
  margin.resolve(d, hp.lambda);  // validates explicit margins
  make_benchmark<double>(function, d);
}

double quantile(std::vector<double> values, double p) {
  if (values.empty()) throw ConfigError("quantile of an empty set");
  if (p < 0 || p > 1) throw ConfigError("quantile level must be in [0,1]");
  std::sort(values.begin(), values.end());
  const double h = (double(values.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  const double frac = h - double(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

std::vector<long> default_checkpoints(Eigen::Index lambda, long budget) {
  std::vector<long> cps;
  for (long c = lambda; c < budget; c *= 2) cps.push_back(c);
  cps.push_back(budget);
  return cps;
}

std::vector<SummaryRow> summarize(const std::vector<TrialRecord>& records,
                                  const std::vector<long>& checkpoints) {
  if (records.empty()) throw ConfigError("summarize needs at least one trial record");
  std::vector<SummaryRow> out;
  out.reserve(checkpoints.size());
  for (const long cp : checkpoints) {
    std::vector<double> values;
    values.reserve(records.size());
    for (const auto& record : records) {
      if (record.rows.empty())
        throw ConfigError("trial record has no generations");
      double v = record.rows.front().best_f;
      for (const auto& row : record.rows) {
        if (row.eval_count > cp) break;
        v = row.best_f;
      }
      values.push_back(v);
    }
    SummaryRow row;
    row.checkpoint = cp;
    row.median = quantile(values, 0.5);
    row.q25 = quantile(values, 0.25);
    row.q75 = quantile(values, 0.75);
    out.push_back(row);
  }
  return out;
}

void write_trial_csv(const TrialRecord& record, std::ostream& os) {
  os << "trial,seed,eval_count,best_f,sigma,min_eig,max_eig,q_best_max,delta\n";
  for (const auto& row : record.rows) {
    os << record.trial << ',' << record.seed << ',' << row.eval_count << ','
       << fmt17(row.best_f) << ',' << fmt17(row.sigma) << ',' << fmt17(row.min_eig)
       << ',' << fmt17(row.max_eig) << ',' << fmt17(row.q_best_max) << ','
       << fmt17(row.delta) << '\n';
  }
}

void write_summary(const ExperimentConfig& config,
                   const std::vector<SummaryRow>& summary, std::ostream& os) {
  const ProblemDims d = config.dims();
  os << "# catcma experiment summary\n";
  os << "# function=" << config.function << " nco=" << d.n_co << " nca=" << d.n_ca
     << " categories=";
  for (std::size_t n = 0; n < d.categories.size(); ++n)
    os << (n ? "," : "") << d.categories[n];
  os << " margin=" << config.margin.name()
     << " mode=" << (config.mode == Mode::Full ? "full" : "no-enhancement")
     << " trials=" << config.trials << " budget=" << config.budget
     << " seed=" << config.seed_base << "\n";
  os << "# best-so-far objective value at each evaluation checkpoint\n";
  os << "# quantiles: linear interpolation on sorted values (h = (n-1)*p)\n";
  os << "checkpoint median q25 q75\n";
  for (const auto& row : summary)
    os << row.checkpoint << ' ' << fmt17(row.median) << ' ' << fmt17(row.q25) << ' '
       << fmt17(row.q75) << '\n';
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  const ProblemDims d = config.dims();
  const MixedObjective<double> obj = make_benchmark<double>(config.function, d);
  Hyperparameters<double> hp = default_hyperparameters<double>(d);
  hp.margins = config.margin.resolve(d, hp.lambda);

  ExperimentResult result;
  result.trials.resize(static_cast<std::size_t>(config.trials));

  const unsigned threads = trial_thread_count(config.trials);
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&]() {
    for (;;) {
      const int t = next.fetch_add(1);
      if (t >= config.trials) return;
      try {
        result.trials[static_cast<std::size_t>(t)] = run_trial(config, obj, hp, t);
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);

  const std::vector<long> checkpoints =
      config.checkpoints.empty() ? default_checkpoints(hp.lambda, config.budget)
                                 : config.checkpoints;
  result.summary = summarize(result.trials, checkpoints);

  if (!config.out_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    for (const auto& record : result.trials) {
      char name[32];
      std::snprintf(name, sizeof name, "trial_%03d.csv", record.trial);
      std::ofstream os(fs::path(config.out_dir) / name);
      if (!os) throw std::runtime_error("cannot open output file in " + config.out_dir);
      write_trial_csv(record, os);
    }
    std::ofstream os(fs::path(config.out_dir) / "summary.txt");
    if (!os) throw std::runtime_error("cannot open summary file in " + config.out_dir);
    write_summary(config, result.summary, os);
  }
  return result;
}

void apply_config_entry(ExperimentConfig& config, const std::string& key,
                        const std::string& value) {
  if (key == "function") {
    config.function = value;
  } else if (key == "nco") {
    config.n_co = parse_long(key, value);
  } else if (key == "nca") {
    config.n_ca = parse_long(key, value);
  } else if (key == "k") {
    config.uniform_k = parse_long(key, value);
    config.categories.clear();
  } else if (key == "categories") {
    config.categories.clear();
    std::istringstream is(value);
    std::string tok;
    while (is >> tok) config.categories.push_back(parse_long(key, tok));
  } else if (key == "margin") {
    config.margin = MarginSetting::parse(value);
  } else if (key == "mode") {
    if (value == "full") config.mode = Mode::Full;
    else if (value == "no-enhancement") config.mode = Mode::NoEnhancement;
    else throw ConfigError("mode must be 'full' or 'no-enhancement'");
  } else if (key == "trials") {
    config.trials = static_cast<int>(parse_long(key, value));
  } else if (key == "budget") {
    config.budget = parse_long(key, value);
  } else if (key == "target") {
    config.target = parse_double(key, value);
  } else if (key == "seed") {
    config.seed_base = static_cast<std::uint64_t>(parse_long(key, value));
  } else if (key == "init_lower") {
    config.init_lower = parse_double(key, value);
  } else if (key == "init_upper") {
    config.init_upper = parse_double(key, value);
  } else if (key == "sigma0") {
    config.sigma0 = parse_double(key, value);
  } else if (key == "out") {
    config.out_dir = value;
  } else if (key == "checkpoints") {
    config.checkpoints.clear();
    std::istringstream is(value);
    std::string tok;
    while (is >> tok) config.checkpoints.push_back(parse_long(key, tok));
  } else {
    throw ConfigError("unknown config key: " + key);
  }
}

ExperimentConfig load_config(std::istream& is) {
  ExperimentConfig config;
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config lines must be 'key = value': " + line);
    apply_config_entry(config, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return config;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  return load_config(is);
}

namespace {

void print_summary_tail(const ExperimentConfig& config, const ExperimentResult& result) {
  write_summary(config, result.summary, std::cout);
  if (!result.summary.empty())
    std::cout << "final median best_f = " << fmt17(result.summary.back().median)
              << "\n";
}

int run_command(const std::string& config_path,
                const std::vector<std::pair<std::string, std::string>>& overrides) {
  ExperimentConfig config;
  if (!config_path.empty()) config = load_config_file(config_path);
  for (const auto& [key, value] : overrides) apply_config_entry(config, key, value);
  const ExperimentResult result = run_experiment(config);
  print_summary_tail(config, result);
  return 0;
}

int margins_command(long n_ca, long k, long n_co) {
  if (n_co < 0) n_co = n_ca;  // mirrors the categorical dimension when unset
  const ProblemDims dims = uniform_dims(n_co, n_ca, k);
  const auto hp = default_hyperparameters<double>(dims);
  std::cout << "dims: nco=" << n_co << " nca=" << n_ca << " K=" << k
            << " -> lambda=" << hp.lambda << "\n";
  std::cout << "recommended " << fmt17(recommended_margin<double>(n_ca, k)) << "\n";
  std::cout << "large       "
            << fmt17(margin_variant<double>(MarginKind::Large, dims, hp.lambda)[0])
            << "\n";
  std::cout << "small       "
            << fmt17(margin_variant<double>(MarginKind::Small, dims, hp.lambda)[0])
            << "\n";
  std::cout << "small-alt   "
            << fmt17(margin_variant<double>(MarginKind::SmallAlt, dims, hp.lambda)[0])
            << "\n";
  const double tail = binomial_tail_probability(hp.lambda, 0.27);
  std::cout << "tail Pr(X <= lambda - floor(lambda/2)), X ~ Bin(" << hp.lambda
            << ", 0.27): " << fmt17(tail) << " (>= 0.95: "
            << (tail >= 0.95 ? "PASS" : "FAIL") << ")\n";
  return 0;
}

int bench_suite_command(const std::string& out_dir, bool quick, long seed) {
  const int trials = quick ? 2 : 20;
  auto run_one = [&](const std::string& tag, ExperimentConfig config) {
    config.trials = trials;
    config.seed_base = static_cast<std::uint64_t>(seed);
    if (quick) config.budget = std::min<long>(config.budget, 2000);
    if (!out_dir.empty())
      config.out_dir = (std::filesystem::path(out_dir) / tag).string();
    const ExperimentResult result = run_experiment(config);
    std::cout << tag << ": final median best_f = "
              << fmt17(result.summary.back().median) << "\n";
  };

  // Margin ablation grid on SphereCOM.
  const std::vector<std::pair<long, long>> margin_budgets = {
      {3, 20000}, {5, 50000}, {10, 100000}, {20, 100000}};
  for (const auto& [dim, budget] : margin_budgets)
    for (const long k : {3L, 5L, 10L})
      for (const std::string margin : {"large", "small", "recommended"}) {
        ExperimentConfig config;
        config.function = "SphereCOM";
        config.n_co = dim;
        config.n_ca = dim;
        config.categories.assign(static_cast<std::size_t>(dim), k);
        config.margin = MarginSetting::parse(margin);
        config.budget = budget;
        run_one("margin_SphereCOM_d" + std::to_string(dim) + "_k" + std::to_string(k) +
                    "_" + margin,
                config);
      }

  // Enhancement ablation on all three functions.
  for (const std::string fn : {"SphereCOM", "RosenbrockCLO", "MCProximity"})
    for (const long dim : {3L, 5L, 10L})
      for (const std::string mode : {"full", "no-enhancement"}) {
        ExperimentConfig config;
        config.function = fn;
        config.n_co = dim;
        config.n_ca = dim;
        config.categories.assign(static_cast<std::size_t>(dim), dim);
        config.mode = mode == "full" ? Mode::Full : Mode::NoEnhancement;
        config.budget = 100000;
        run_one("ablation_" + fn + "_d" + std::to_string(dim) + "_" + mode, config);
      }
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"CatCMA: stochastic optimization for mixed continuous/categorical problems"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "run one experiment from a config file");
  std::string config_path;
  run->add_option("--config", config_path, "config file (key = value lines)");
  const std::vector<std::string> override_keys = {
      "function", "nco",  "nca",    "k",      "margin", "mode",       "trials",
      "budget",   "target", "seed", "init_lower", "init_upper", "sigma0", "out"};
  std::map<std::string, std::string> override_values;
  for (const auto& key : override_keys)
    run->add_option("--" + key, override_values[key], "override config key " + key);

  auto* margins = app.add_subcommand("margins", "print margin settings for a shape");
  long m_nca = 0, m_k = 0, m_nco = -1;
  margins->add_option("--nca", m_nca, "categorical dimensions")->required();
  margins->add_option("--k", m_k, "categories per dimension")->required();
  margins->add_option("--nco", m_nco, "continuous dimensions (default: nca)");

  auto* suite = app.add_subcommand("bench-suite", "run the margin and ablation grids");
  std::string suite_out = "bench_results";
  bool quick = false;
  long suite_seed = 1;
  suite->add_option("--out", suite_out, "output directory");
  suite->add_flag("--quick", quick, "reduced budget and trials (smoke run)");
  suite->add_option("--seed", suite_seed, "base seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (run->parsed()) {
      std::vector<std::pair<std::string, std::string>> overrides;
      for (const auto& key : override_keys)
        if (run->count("--" + key) > 0) overrides.emplace_back(key, override_values[key]);
      return run_command(config_path, overrides);
    }
    if (margins->parsed()) return margins_command(m_nca, m_k, m_nco);
    if (suite->parsed()) return bench_suite_command(suite_out, quick, suite_seed);
    return 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace catcma::harness
