#include "pclda/cli.hpp"

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "pclda/datasets.hpp"
#include "pclda/errors.hpp"
#include "pclda/evaluation.hpp"
#include "pclda/training.hpp"

namespace fs = std::filesystem;

namespace pclda::cli {

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string join(const std::vector<std::string>& parts, const char* sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<double> parse_lambdas(const std::string& s) {
  std::vector<double> out;
  for (const std::string& item : split_list(s)) {
    try {
      std::size_t pos = 0;
      const double x = std::stod(item, &pos);
      if (pos != item.size()) throw std::invalid_argument(item);
      out.push_back(x);
    } catch (const std::exception&) {
      throw UsageError("--lambda: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError("--lambda: empty list");
  return out;
}

// Fails on an existing non-empty directory unless `force`.
void prepare_out_dir(const fs::path& dir, bool force, bool refuse_nonempty) {
  if (fs::exists(dir)) {
    if (!fs::is_directory(dir)) throw DataError(dir.string() + " exists and is not a directory");
    if (refuse_nonempty && !force && !fs::is_empty(dir)) {
      throw UsageError(dir.string() + " is not empty; pass --force to overwrite");
    }
    return;
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
}

struct Run {
  std::vector<std::string> args;
  std::string started = utc_now();
  fs::path out;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  nlohmann::json artifacts = nlohmann::json::object();

  void write(const std::string& name, const std::string& content) {
    write_file_atomic(out / name, content);
    artifacts[name] = name;
  }

  void finish() {
    nlohmann::json m;
    m["format_version"] = kManifestVersion;
    m["pclda_version"] = kVersion;
    m["command"] = "pclda " + join(args, " ");
    m["config"] = config;
    m["config_hash"] = config_hash(config);
    m["seed"] = seed;
    m["artifacts"] = artifacts;
    m["started_at"] = started;
    m["finished_at"] = utc_now();
    write_file_atomic(out / "manifest.json", m.dump(2) + "\n");
  }
};

std::string trace_csv(const TrainTrace& trace) {
  auto opt = [](const std::optional<double>& x) { return x ? format_double17(*x) : std::string("NA"); };
  std::string out = "epoch,prior,data,label,reg,total,valid_label_nll,valid_data_nll\n";
  for (const EpochRecord& r : trace.epochs) {
    out += std::to_string(r.epoch) + ',' + format_double17(r.train.prior_term) + ',' +
           format_double17(r.train.data_term) + ',' + format_double17(r.train.label_term) + ',' +
           format_double17(r.train.reg_term) + ',' + format_double17(r.train.total) + ',' +
           opt(r.valid_label_nll) + ',' + opt(r.valid_data_nll) + '\n';
  }
  return out;
}

std::string lambda_tag(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lambda);
  return buf;
}

int default_threads() {
  if (const char* env = std::getenv("PCLDA_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
    throw UsageError(std::string("PCLDA_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

// Options shared by commands that embed documents.
struct EmbedOpts {
  int iterations = 100;
  double step_size = 0.005;
  std::string mode = "convex";

  void add(CLI::App* app) {
    app->add_option("--iterations", iterations, "MAP iterations T")->capture_default_str();
    app->add_option("--step-size", step_size, "MAP step size")->capture_default_str();
    app->add_option("--embed-mode", mode, "convex or reparameterized")
        ->check(CLI::IsMember({"convex", "reparameterized"}))
        ->capture_default_str();
  }
  EmbedConfig config() const {
    EmbedConfig e;
    e.iterations = iterations;
    e.step_size = step_size;
    e.mode = mode == "convex" ? MapMode::convex : MapMode::reparameterized;
    return e;
  }
  void echo(nlohmann::json& j) const {
    j["iterations"] = iterations;
    j["step_size"] = step_size;
    j["embed_mode"] = mode;
  }
};

// ---------------------------------------------------------------------------
// gen

struct GenToyOpts {
  ToyBarsConfig cfg;
  std::string out;
  bool force = false;
};

void cmd_gen_toy(const GenToyOpts& o, Run& run) {
  if (o.cfg.n_docs < 1) throw UsageError("--n-docs must be >= 1");
  try {
    o.cfg.validate();
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  run.out = o.out;
  run.seed = o.cfg.seed;
  prepare_out_dir(run.out, o.force, true);
  const ToyBarsData data = gen_toy_bars(o.cfg);
  run.config = {{"command", "gen toy-bars"},
                {"n_docs", o.cfg.n_docs},
                {"grid_side", o.cfg.grid_side},
                {"n_horizontal", o.cfg.n_horizontal},
                {"n_vertical", o.cfg.n_vertical},
                {"min_length", o.cfg.min_length},
                {"max_length", o.cfg.max_length},
                {"signal_count", o.cfg.signal_count},
                {"positive_fraction", o.cfg.positive_fraction},
                {"bar_mass", o.cfg.bar_mass},
                {"seed", o.cfg.seed}};
  run.write("corpus.txt", corpus_to_string(data.corpus));
  run.write("labels.csv", labels_to_string(data.corpus));
  nlohmann::json truth;
  truth["signal_word"] = 0;
  truth["bar_topics"] = nlohmann::json::array();
  for (Eigen::Index b = 0; b < data.bar_topics.rows(); ++b) {
    std::vector<double> row(data.bar_topics.row(b).begin(), data.bar_topics.row(b).end());
    truth["bar_topics"].push_back(row);
  }
  run.write("truth.json", truth.dump(2) + "\n");
  std::cerr << "wrote " << data.corpus.num_docs() << " toy-bars documents to " << o.out << "\n";
}

struct GenEhrOpts {
  SyntheticEhrConfig cfg;
  std::string split;
  std::string out;
  bool force = false;
};

void cmd_gen_ehr(const GenEhrOpts& o, Run& run) {
  if (o.cfg.n_docs < 1) throw UsageError("--n-docs must be >= 1");
  try {
    o.cfg.validate();
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  run.out = o.out;
  run.seed = o.cfg.seed;
  prepare_out_dir(run.out, o.force, true);
  const SyntheticEhrData data = gen_synthetic_ehr(o.cfg);
  run.config = {{"command", "gen ehr-like"},
                {"n_docs", o.cfg.n_docs},
                {"vocab_size", o.cfg.vocab_size},
                {"num_labels", o.cfg.num_labels},
                {"num_topics", o.cfg.num_topics},
                {"alpha", o.cfg.alpha},
                {"topic_concentration", o.cfg.topic_concentration},
                {"eta_scale", o.cfg.eta_scale},
                {"min_length", o.cfg.min_length},
                {"max_length", o.cfg.max_length},
                {"split", o.split},
                {"seed", o.cfg.seed}};
  run.write("corpus.txt", corpus_to_string(data.corpus));
  run.write("labels.csv", labels_to_string(data.corpus));
  run.write("planted.json", checkpoint_to_string(data.planted, run.config, false));
  if (!o.split.empty()) {
    const std::vector<double> f = parse_lambdas(o.split);
    if (f.size() != 3) throw UsageError("--split needs three fractions");
    std::optional<CorpusSplit> parts;
    try {
      parts.emplace(split(data.corpus, {f[0], f[1], f[2]}, o.cfg.seed));
    } catch (const InvalidParameter& e) {
      throw UsageError(std::string("--split: ") + e.what());
    }
    const std::pair<const char*, const Corpus*> named[] = {
        {"train", &parts->train}, {"valid", &parts->valid}, {"test", &parts->test}};
    for (const auto& [name, c] : named) {
      run.write(std::string("corpus_") + name + ".txt", corpus_to_string(*c));
      run.write(std::string("labels_") + name + ".csv", labels_to_string(*c));
    }
  }
  std::cerr << "wrote " << data.corpus.num_docs() << " ehr-like documents to " << o.out << "\n";
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  std::string objective = "pc";
  int k = 4;
  std::string lambda = "10";
  bool warm_start = false;
  std::string init = "random";
  int restarts = 1;
  std::string corpus, labels, valid_corpus, valid_labels, out;
  std::uint64_t seed = 0;
  int threads = 1;
  int epochs = 200;
  int batch_size = 0;
  double lr = 0.01;
  double alpha = 1.1;
  double tau_phi = 1e-5;
  double tau_eta = 1e-4;
  int patience = 20;
  int sweeps = 500;
  int burn_in = 250;
  int thin = 5;
  double beta = 0.1;
  EmbedOpts embed;
  CLI::Option* lambda_opt = nullptr;
};

Corpus load_split(const std::string& corpus, const std::string& labels) {
  std::optional<fs::path> lp;
  if (!labels.empty()) lp = labels;
  return load_corpus(corpus, lp);
}

nlohmann::json train_echo(const TrainOpts& o) {
  nlohmann::json j = {{"command", "train"},
                      {"objective", o.objective},
                      {"k", o.k},
                      {"lambda", o.lambda},
                      {"warm_start", o.warm_start},
                      {"init", o.init},
                      {"restarts", o.restarts},
                      {"corpus", o.corpus},
                      {"labels", o.labels},
                      {"valid_corpus", o.valid_corpus},
                      {"valid_labels", o.valid_labels},
                      {"seed", o.seed},
                      {"epochs", o.epochs},
                      {"batch_size", o.batch_size},
                      {"lr", o.lr},
                      {"alpha", o.alpha},
                      {"tau_phi", o.tau_phi},
                      {"tau_eta", o.tau_eta},
                      {"patience", o.patience},
                      {"sweeps", o.sweeps},
                      {"burn_in", o.burn_in},
                      {"thin", o.thin},
                      {"beta", o.beta}};
  o.embed.echo(j);
  return j;
}

GibbsConfig gibbs_config(const TrainOpts& o) {
  GibbsConfig g;
  g.num_topics = o.k;
  g.alpha = o.alpha;
  g.beta_word = o.beta;
  g.sweeps = o.sweeps;
  g.burn_in = o.burn_in;
  g.thin = o.thin;
  g.seed = o.seed;
  return g;
}

InitSpec parse_init(const TrainOpts& o) {
  if (o.init == "random") return InitSpec::random(o.seed);
  if (o.init == "gibbs") return InitSpec::from_gibbs(gibbs_config(o));
  if (o.init.rfind("gibbs:", 0) == 0) return InitSpec::from_file(o.init.substr(6));
  if (o.init.rfind("file:", 0) == 0) return InitSpec::from_file(o.init.substr(5));
  throw UsageError("--init must be random, gibbs, gibbs:PATH or file:PATH");
}

void cmd_train(const TrainOpts& o, Run& run) {
  run.out = o.out;
  run.seed = o.seed;
  run.config = train_echo(o);
  if (o.k < 1) throw UsageError("--k must be >= 1");
  if (o.restarts < 1) throw UsageError("--restarts must be >= 1");
  const std::vector<double> lambdas = parse_lambdas(o.lambda);
  const bool lambda_given = o.lambda_opt != nullptr && o.lambda_opt->count() > 0;

  const Corpus corpus = load_split(o.corpus, o.labels);
  std::optional<Corpus> valid;
  if (!o.valid_corpus.empty()) valid = load_split(o.valid_corpus, o.valid_labels);
  const Corpus* valid_ptr = valid ? &*valid : nullptr;
  prepare_out_dir(run.out, false, false);

  const EmbedConfig embed = o.embed.config();
  nlohmann::json echo = run.config;

  if (o.objective == "gibbs") {
    if (lambda_given) std::cerr << "warning: --lambda is ignored by --objective gibbs\n";
    LogisticHeadConfig head;
    head.tau_eta = o.tau_eta;
    head.seed = o.seed;
    std::cerr << "gibbs: " << o.sweeps << " sweeps, K=" << o.k << "\n";
    const TopicModelParams params = train_gibbs_baseline(corpus, gibbs_config(o), head, embed);
    run.write("model.json", checkpoint_to_string(params, echo));
    return;
  }

  TrainConfig cfg;
  try {
    cfg.objective = parse_objective(o.objective);
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }
  if (cfg.objective == Objective::bp && lambda_given) {
    std::cerr << "warning: --lambda is ignored by --objective bp\n";
  }
  cfg.lambda = lambdas.front();
  cfg.epochs = o.epochs;
  cfg.batch_size = o.batch_size;
  cfg.adam.learning_rate = o.lr;
  cfg.reg = {o.tau_phi, o.tau_eta};
  cfg.embed = embed;
  cfg.seed = o.seed;
  cfg.patience = o.patience;
  cfg.threads = o.threads;
  try {
    cfg.validate();
    embed.validate(o.alpha);
  } catch (const InvalidParameter& e) {
    throw UsageError(e.what());
  }

  const UnconstrainedParams base = resolve_init(parse_init(o), corpus, o.k, o.alpha);

  if (lambdas.size() > 1 || o.warm_start) {
    if (cfg.objective != Objective::pc && cfg.objective != Objective::ml_replicated) {
      throw UsageError("a lambda ladder needs --objective pc or ml");
    }
    const std::vector<LadderRung> rungs = lambda_ladder(corpus, lambdas, base, cfg, valid_ptr, o.warm_start);
    std::string best;
    for (const LadderRung& r : rungs) {
      const std::string stem = "lambda" + lambda_tag(r.lambda) + (r.warm ? "_warm" : "");
      if (!r.result) {
        std::cerr << "rung " << stem << " failed: " << r.error << "\n";
        run.write(stem + ".failed", r.error + "\n");
        continue;
      }
      nlohmann::json rung_echo = echo;
      rung_echo["lambda"] = lambda_tag(r.lambda);
      rung_echo["warm"] = r.warm;
      run.write("model_" + stem + ".json", checkpoint_to_string(r.result->best_params.materialize(), rung_echo));
      run.write("trace_" + stem + ".csv", trace_csv(r.result->trace));
      if (r.best) best = "model_" + stem + ".json";
    }
    if (best.empty()) throw DivergenceError("every ladder rung failed", -1, "ladder");
    run.write("best.txt", best + "\n");
    return;
  }

  std::vector<UnconstrainedParams> inits{base};
  for (int i = 1; i < o.restarts; ++i) {
    inits.push_back(resolve_init(InitSpec::random(o.seed + static_cast<std::uint64_t>(i)), corpus, o.k, o.alpha));
  }
  std::cerr << "train: objective " << o.objective << ", K=" << o.k << ", lambda=" << lambda_tag(cfg.lambda) << ", "
            << inits.size() << " start(s)\n";
  const RestartsResult res = train_restarts(corpus, inits, cfg, valid_ptr);
  const TrainResult& chosen = res.runs[res.best];
  run.write("model.json", checkpoint_to_string(chosen.best_params.materialize(), echo));
  run.write("trace.csv", trace_csv(chosen.trace));
  if (res.runs.size() > 1) {
    std::string table = "start,final_train_loss,chosen\n";
    for (std::size_t i = 0; i < res.runs.size(); ++i) {
      table += std::to_string(i) + ',' + format_double17(res.runs[i].trace.final_train.total) + ',' +
               (i == res.best ? "1" : "0") + '\n';
    }
    run.write("restarts.csv", table);
  }
}

// ---------------------------------------------------------------------------
// eval, landscape, report-topics

struct EvalOpts {
  std::string model, models, corpus, labels, out;
  std::string map_mode = "both";
  std::string method;
  std::string split = "eval";
  double joint_weight = 1.0;
  CLI::Option* joint_weight_opt = nullptr;
  int top_n = 10;
  EmbedOpts embed;
};

Checkpoint load_model_for(const std::string& path, const Corpus& corpus) {
  Checkpoint ck = read_checkpoint(path);
  if (ck.params.vocab_size() != corpus.vocab_size()) {
    throw DataError("vocabulary mismatch: checkpoint " + path + " has V=" + std::to_string(ck.params.vocab_size()) +
                    ", corpus has V=" + std::to_string(corpus.vocab_size()));
  }
  if (corpus.has_labels() && ck.params.num_labels() != corpus.num_labels()) {
    throw DataError("label mismatch: checkpoint " + path + " has L=" + std::to_string(ck.params.num_labels()) +
                    ", labels file has L=" + std::to_string(corpus.num_labels()));
  }
  return ck;
}

std::pair<std::string, double> tag_of(const Checkpoint& ck) {
  const nlohmann::json& e = ck.config_echo;
  std::string method = e.contains("objective") && e["objective"].is_string() ? e["objective"].get<std::string>()
                                                                              : "model";
  double lambda = 0.0;
  if (e.contains("lambda") && e["lambda"].is_string()) {
    try {
      lambda = parse_lambdas(e["lambda"].get<std::string>()).front();
    } catch (const UsageError&) {
    }
  }
  if (method == "bp" || method == "gibbs" || method == "unsupervised") lambda = 0.0;
  return {method, lambda};
}

nlohmann::json eval_echo(const EvalOpts& o, const char* command) {
  nlohmann::json j = {{"command", command},   {"model", o.model}, {"models", o.models},
                      {"corpus", o.corpus},   {"labels", o.labels}, {"map_mode", o.map_mode},
                      {"method", o.method},   {"split", o.split},   {"joint_weight", o.joint_weight}};
  o.embed.echo(j);
  return j;
}

EmbedConfig eval_embed(const EvalOpts& o, double alpha) {
  EmbedConfig e = o.embed.config();
  e.joint_label_weight = o.joint_weight;
  if (!(o.joint_weight > 0.0)) throw UsageError("--joint-weight must be > 0");
  try {
    EmbedConfig check = e;
    check.joint_label_weight = 0.0;
    check.validate(alpha);
  } catch (const InvalidParameter& ex) {
    throw UsageError(ex.what());
  }
  return e;
}

void write_metrics(Run& run, const std::string& stem, const std::vector<MetricsRecord>& records) {
  run.write(stem + ".csv", metrics_to_csv(records));
  run.write(stem + ".json", metrics_to_json(records).dump(2) + "\n");
}

void cmd_eval(const EvalOpts& o, Run& run) {
  run.out = o.out;
  run.config = eval_echo(o, "eval");
  const Corpus corpus = load_split(o.corpus, o.labels);
  if (!corpus.has_labels()) throw DataError("eval needs --labels");
  const Checkpoint ck = load_model_for(o.model, corpus);
  EmbedConfig embed = eval_embed(o, ck.params.alpha);
  auto [method, lambda] = tag_of(ck);
  if (method == "ml" && o.joint_weight_opt->count() == 0) embed.joint_label_weight = lambda;
  if (!o.method.empty()) method = o.method;
  prepare_out_dir(run.out, false, false);
  std::vector<MetricsRecord> records;
  if (o.map_mode == "train" || o.map_mode == "both") {
    records.push_back(heldout_metrics(corpus, ck.params, embed, EvalMode::train, method, lambda, o.split));
  }
  if (o.map_mode == "predict" || o.map_mode == "both") {
    records.push_back(heldout_metrics(corpus, ck.params, embed, EvalMode::predict, method, lambda, o.split));
  }
  write_metrics(run, "metrics", records);
}

void cmd_landscape(const EvalOpts& o, Run& run) {
  run.out = o.out;
  run.config = eval_echo(o, "landscape");
  const Corpus corpus = load_split(o.corpus, o.labels);
  if (!corpus.has_labels()) throw DataError("landscape needs --labels");
  const std::vector<std::string> entries = split_list(o.models);
  if (entries.empty()) throw UsageError("--models: empty list");
  std::vector<NamedModel> models;
  double alpha = 0.0;
  for (const std::string& entry : entries) {
    // Either PATH or TAG=PATH.
    const std::size_t eq = entry.find('=');
    const std::string path = eq == std::string::npos ? entry : entry.substr(eq + 1);
    const Checkpoint ck = load_model_for(path, corpus);
    auto [method, lambda] = tag_of(ck);
    const double joint = method == "ml" && o.joint_weight_opt->count() == 0 ? lambda : 0.0;
    if (eq != std::string::npos) method = entry.substr(0, eq);
    models.push_back({method, lambda, ck.params, joint});
    alpha = std::max(alpha, ck.params.alpha);
  }
  const EmbedConfig embed = eval_embed(o, alpha);
  prepare_out_dir(run.out, false, false);
  const LandscapeResult res = fitness_landscape(models, corpus, embed, o.split);
  for (const std::string& e : res.errors) std::cerr << "landscape: " << e << "\n";
  write_metrics(run, "landscape", res.records);
  if (!res.errors.empty()) throw DataError(std::to_string(res.errors.size()) + " model(s) failed to evaluate");
}

void cmd_report(const EvalOpts& o, Run& run) {
  run.out = o.out;
  run.config = eval_echo(o, "report-topics");
  run.config["top_n"] = o.top_n;
  if (o.top_n < 1) throw UsageError("--top-n must be >= 1");
  const Corpus corpus = load_split(o.corpus, o.labels);
  const Checkpoint ck = load_model_for(o.model, corpus);
  EmbedConfig embed = o.embed.config();
  try {
    embed.validate(ck.params.alpha);
  } catch (const InvalidParameter& ex) {
    throw UsageError(ex.what());
  }
  prepare_out_dir(run.out, false, false);
  run.write("topics.txt", topic_report_text(topic_report(ck.params, corpus, o.top_n, embed)));
}

}  // namespace

std::map<std::string, std::string> parse_config_text(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw DataError("config line " + std::to_string(line_no) + ": expected key=value");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.rfind("--", 0) == 0) key = key.substr(2);
    if (key.empty()) throw DataError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw DataError("config line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    }
  }
  return out;
}

std::vector<std::string> merge_config(const std::vector<std::string>& args,
                                      const std::map<std::string, std::string>& config) {
  std::vector<std::string> out = args;
  for (const auto& [key, value] : config) {
    if (key == "config") continue;
    const std::string flag = "--" + key;
    bool given = false;
    for (const std::string& a : args) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
    }
    if (given) continue;
    if (value == "true") {
      out.push_back(flag);
    } else if (value != "false") {
      out.push_back(flag);
      out.push_back(value);
    }
  }
  return out;
}

std::string config_hash(const nlohmann::json& config) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  const std::string text = config.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int run(const std::vector<std::string>& raw_args, std::ostream& err) {
  std::vector<std::string> args = raw_args;
  try {
    // --config is resolved before parsing so flags keep precedence over it.
    for (std::size_t i = 0; i < raw_args.size(); ++i) {
      std::string path;
      if (raw_args[i] == "--config" && i + 1 < raw_args.size()) path = raw_args[i + 1];
      if (raw_args[i].rfind("--config=", 0) == 0) path = raw_args[i].substr(9);
      if (!path.empty()) args = merge_config(raw_args, parse_config_text(read_file(path)));
    }
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }

  CLI::App app{"Supervised topic models trained under prediction constraints"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  std::string config_path;
  int threads = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "flat key=value defaults file");
  };

  CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus");
  gen->require_subcommand(1);
  GenToyOpts toy;
  CLI::App* gen_toy = gen->add_subcommand("toy-bars", "3x3 bars corpus with a signal word");
  gen_toy->add_option("--n-docs", toy.cfg.n_docs)->capture_default_str();
  gen_toy->add_option("--grid-side", toy.cfg.grid_side)->capture_default_str();
  gen_toy->add_option("--n-horizontal", toy.cfg.n_horizontal)->capture_default_str();
  gen_toy->add_option("--n-vertical", toy.cfg.n_vertical)->capture_default_str();
  gen_toy->add_option("--min-length", toy.cfg.min_length)->capture_default_str();
  gen_toy->add_option("--max-length", toy.cfg.max_length)->capture_default_str();
  gen_toy->add_option("--signal-count", toy.cfg.signal_count)->capture_default_str();
  gen_toy->add_option("--positive-fraction", toy.cfg.positive_fraction)->capture_default_str();
  gen_toy->add_option("--bar-mass", toy.cfg.bar_mass)->capture_default_str();
  gen_toy->add_option("--seed", toy.cfg.seed)->capture_default_str();
  gen_toy->add_option("--out", toy.out)->required();
  gen_toy->add_flag("--force", toy.force);
  add_common(gen_toy);

  GenEhrOpts ehr;
  CLI::App* gen_ehr = gen->add_subcommand("ehr-like", "planted multi-label corpus");
  gen_ehr->add_option("--n-docs", ehr.cfg.n_docs)->capture_default_str();
  gen_ehr->add_option("--vocab-size", ehr.cfg.vocab_size)->capture_default_str();
  gen_ehr->add_option("--num-labels", ehr.cfg.num_labels)->capture_default_str();
  gen_ehr->add_option("--num-topics", ehr.cfg.num_topics)->capture_default_str();
  gen_ehr->add_option("--alpha", ehr.cfg.alpha)->capture_default_str();
  gen_ehr->add_option("--topic-concentration", ehr.cfg.topic_concentration)->capture_default_str();
  gen_ehr->add_option("--eta-scale", ehr.cfg.eta_scale)->capture_default_str();
  gen_ehr->add_option("--min-length", ehr.cfg.min_length)->capture_default_str();
  gen_ehr->add_option("--max-length", ehr.cfg.max_length)->capture_default_str();
  gen_ehr->add_option("--split", ehr.split, "train,valid,test fractions, e.g. 0.8,0.1,0.1");
  gen_ehr->add_option("--seed", ehr.cfg.seed)->capture_default_str();
  gen_ehr->add_option("--out", ehr.out)->required();
  gen_ehr->add_flag("--force", ehr.force);
  add_common(gen_ehr);

  TrainOpts tr;
  CLI::App* train_cmd = app.add_subcommand("train", "fit a model");
  train_cmd->add_option("--objective", tr.objective)
      ->check(CLI::IsMember({"pc", "ml", "bp", "gibbs", "unsupervised"}))
      ->capture_default_str();
  train_cmd->add_option("--k", tr.k, "number of topics")->capture_default_str();
  tr.lambda_opt = train_cmd->add_option("--lambda", tr.lambda, "label weight, or an ascending comma list")
                      ->capture_default_str();
  train_cmd->add_flag("--warm-start", tr.warm_start, "chain ladder rungs through warm starts");
  train_cmd->add_option("--init", tr.init, "random | gibbs | gibbs:PATH | file:PATH")->capture_default_str();
  train_cmd->add_option("--restarts", tr.restarts, "starts; extra ones are random")->capture_default_str();
  train_cmd->add_option("--corpus", tr.corpus)->required();
  train_cmd->add_option("--labels", tr.labels);
  train_cmd->add_option("--valid-corpus", tr.valid_corpus);
  train_cmd->add_option("--valid-labels", tr.valid_labels);
  train_cmd->add_option("--out", tr.out)->required();
  train_cmd->add_option("--seed", tr.seed)->capture_default_str();
  train_cmd->add_option("--threads", threads);
  train_cmd->add_option("--epochs", tr.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.batch_size, "0 = full batch")->capture_default_str();
  train_cmd->add_option("--lr", tr.lr)->capture_default_str();
  train_cmd->add_option("--alpha", tr.alpha)->capture_default_str();
  train_cmd->add_option("--tau-phi", tr.tau_phi)->capture_default_str();
  train_cmd->add_option("--tau-eta", tr.tau_eta)->capture_default_str();
  train_cmd->add_option("--patience", tr.patience)->capture_default_str();
  train_cmd->add_option("--sweeps", tr.sweeps)->capture_default_str();
  train_cmd->add_option("--burn-in", tr.burn_in)->capture_default_str();
  train_cmd->add_option("--thin", tr.thin)->capture_default_str();
  train_cmd->add_option("--beta", tr.beta, "Gibbs topic-word smoothing")->capture_default_str();
  tr.embed.add(train_cmd);
  add_common(train_cmd);

  EvalOpts ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "metrics for one checkpoint");
  eval_cmd->add_option("--model", ev.model)->required();
  eval_cmd->add_option("--map-mode", ev.map_mode)
      ->check(CLI::IsMember({"predict", "train", "both"}))
      ->capture_default_str();

  EvalOpts ls;
  CLI::App* land_cmd = app.add_subcommand("landscape", "train/predict metrics for several checkpoints");
  land_cmd->add_option("--models", ls.models, "comma list of PATH or TAG=PATH")->required();
  ls.split = "train";

  EvalOpts rep;
  CLI::App* rep_cmd = app.add_subcommand("report-topics", "top words per topic");
  rep_cmd->add_option("--model", rep.model)->required();
  rep_cmd->add_option("--top-n", rep.top_n)->capture_default_str();

  for (auto [sub, o] : {std::pair{eval_cmd, &ev}, std::pair{land_cmd, &ls}, std::pair{rep_cmd, &rep}}) {
    sub->add_option("--corpus", o->corpus)->required();
    sub->add_option("--labels", o->labels);
    sub->add_option("--out", o->out)->required();
    if (sub != rep_cmd) {
      sub->add_option("--method", o->method, "method tag for the metrics rows");
      sub->add_option("--split", o->split, "split name for the metrics rows")->capture_default_str();
      o->joint_weight_opt =
          sub->add_option("--joint-weight", o->joint_weight,
                          "label weight of train-mode embeddings (ml checkpoints default to their lambda)")
              ->capture_default_str();
    }
    sub->add_option("--threads", threads);
    o->embed.add(sub);
    add_common(sub);
  }

  Run run;
  run.args = raw_args;
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
    if (threads == 0) threads = default_threads();
    if (threads < 1) throw UsageError("--threads must be >= 1");
    tr.threads = threads;

    if (gen_toy->parsed()) {
      cmd_gen_toy(toy, run);
    } else if (gen_ehr->parsed()) {
      cmd_gen_ehr(ehr, run);
    } else if (train_cmd->parsed()) {
      cmd_train(tr, run);
    } else if (eval_cmd->parsed()) {
      cmd_eval(ev, run);
    } else if (land_cmd->parsed()) {
      cmd_landscape(ls, run);
    } else if (rep_cmd->parsed()) {
      cmd_report(rep, run);
    }
    run.finish();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::ostringstream out, error;
    const int code = app.exit(e, out, error);
    if (code == 0) {
      std::cout << out.str();
      return kExitOk;
    }
    err << out.str() << error.str();
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidParameter& e) {
    err << "invalid parameter: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace pclda::cli
