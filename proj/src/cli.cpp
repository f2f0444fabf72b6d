#include "hlvae/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "hlvae/error.hpp"
#include "hlvae/metrics.hpp"
#include "hlvae/predict.hpp"
#include "hlvae/synthetic.hpp"
#include "hlvae/train.hpp"

namespace hlvae {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Binds one subcommand's options to variables. Values come from (in
// increasing priority) the defaults, the --config file and the flags; the
// resolved set is written back as the run's config snapshot.
class Options {
 public:
  Options(CLI::App* app, const json& file) : app_(app), file_(file) {}

  template <class T>
  CLI::Option* add(const std::string& name, T& var, const std::string& help) {
    if (file_.contains(name)) var = file_.at(name).get<T>();
    CLI::Option* opt = app_->add_option("--" + name, var, help)->capture_default_str();
    entries_.push_back({name, opt, [&var](json& j, const std::string& k) { j[k] = var; }});
    return opt;
  }

  CLI::Option* flag(const std::string& name, bool& var, const std::string& help) {
    if (file_.contains(name)) var = file_.at(name).get<bool>();
    CLI::Option* opt = app_->add_flag("--" + name + ",!--no-" + name, var, help);
    entries_.push_back({name, opt, [&var](json& j, const std::string& k) { j[k] = var; }});
    return opt;
  }

  // Given on the command line or in the config file.
  bool explicit_value(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return e.opt->count() > 0 || file_.contains(name);
    return false;
  }

  json snapshot(const std::string& command) const {
    json j = {{"command", command}};
    for (const auto& e : entries_) e.write(j, e.name);
    return j;
  }

 private:
  struct Entry {
    std::string name;
    CLI::Option* opt;
    std::function<void(json&, const std::string&)> write;
  };
  CLI::App* app_;
  const json& file_;
  std::vector<Entry> entries_;
};

struct Common {
  std::string out;
  std::uint64_t seed = 0;
  bool quiet = false;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json read_json(const std::string& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

class Outputs {
 public:
  Outputs(const std::string& dir, std::set<std::string> inputs) : dir_(dir) {
    fs::create_directories(dir_);
    for (const auto& p : inputs)
      if (!p.empty() && fs::exists(p)) inputs_.insert(fs::weakly_canonical(p).string());
  }

  std::string path(const std::string& name) const {
    std::string p = (fs::path(dir_) / name).string();
    if (inputs_.count(fs::weakly_canonical(p).string())) {
      throw Error("refusing to overwrite input file " + p + "; choose another --out directory");
    }
    return p;
  }

  void write(const std::string& name, const std::string& content) const {
    std::ofstream out(path(name), std::ios::binary);
    if (!out) throw Error("cannot write " + path(name));
    out << content;
  }

 private:
  std::string dir_;
  std::set<std::string> inputs_;
};

std::string default_out() {
  const char* env = std::getenv(kOutputDirEnv);
  return env && *env ? env : ".";
}

void log(const Common& c, const std::string& msg) {
  if (!c.quiet) std::cerr << msg << "\n";
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(digits);
  ss << v;
  return ss.str();
}

// --- NLL sidecar -----------------------------------------------------------

std::string nll_file(const Schema& schema, const std::vector<CellNll>& observed,
                     const std::vector<CellNll>& held_out, const PredictOptions& opt) {
  std::string out = "# samples=" + std::to_string(opt.samples) + " seed=" + std::to_string(opt.seed) +
                    " latent=" + to_string(opt.source) + "\n";
  out += "row,feature,kind,nll\n";
  auto emit = [&](const std::vector<CellNll>& cells, const char* kind) {
    for (const auto& c : cells)
      out += std::to_string(c.row) + "," + schema.features[c.feature].name + "," + kind + "," +
             format_double(c.nll) + "\n";
  };
  emit(observed, "observed");
  emit(held_out, "held_out");
  return out;
}

std::vector<CellNll> read_held_out_nll(const std::string& path, const Schema& schema) {
  std::istringstream in(read_file(path));
  std::string line;
  std::vector<CellNll> cells;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "row,feature,kind,nll") throw ParseError(path + ": expected header row,feature,kind,nll");
      header = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string x; std::getline(ls, x, ',');) f.push_back(x);
    if (f.size() != 4) throw ParseError(path + ": malformed line '" + line + "'");
    if (f[2] != "held_out") continue;
    auto d = schema.feature_index(f[1]);
    if (!d) throw SchemaMismatch(path + ": unknown feature '" + f[1] + "'");
    cells.push_back({std::stoul(f[0]), *d, std::stod(f[3])});
  }
  return cells;
}

// --- subcommands -----------------------------------------------------------

struct TrainArgs {
  std::string data, schema, validation;
  ModelConfig model;
  std::size_t epochs = 100, batch = 0, patience = 0;
  double lr = 1e-3;
  std::string kl = "exact";
  int warmup = -1;
};

int cmd_train(const TrainArgs& a, const Common& c, const json& snapshot) {
  Schema schema = Schema::load(a.schema);
  DatasetTable data = load_csv(a.data, schema);
  std::optional<DatasetTable> validation;
  if (!a.validation.empty()) validation = load_csv(a.validation, schema);

  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.batch_instances = a.batch;
  tc.learning_rate = a.lr;
  tc.kl_mode = parse_kl_mode(a.kl);
  tc.seed = c.seed;
  tc.warmup_epochs = a.warmup;
  tc.patience = a.patience;

  Outputs out(c.out, {a.data, a.schema, a.validation});
  out.write("train_config.json", snapshot.dump(2) + "\n");
  Model model = Model::create(data, a.model, c.seed);
  for (const auto& name : model.stats.degenerate) log(c, "warning: feature '" + name + "' is constant in training");

  std::vector<EpochRecord> records;
  auto observer = [&](const EpochRecord& r) {
    records.push_back(r);
    if (r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == tc.epochs) {
      log(c, "epoch " + std::to_string(r.epoch) + "  elbo " + fixed(r.elbo, 2) + "  recon " + fixed(r.recon, 2) +
                 "  kl " + fixed(r.kl, 2) + (validation ? "  val_nll " + fixed(r.val_nll) : ""));
    }
  };
  try {
    TrainHistory h = train(model, tc, validation ? &*validation : nullptr, observer);
    if (h.stopped_early) log(c, "early stop; best epoch " + std::to_string(h.best_epoch));
  } catch (const NonFiniteLoss&) {
    out.write("history.csv", history_csv(records));
    model.save(out.path("model.json"));
    throw;
  }
  out.write("history.csv", history_csv(records));
  model.save(out.path("model.json"));
  log(c, "wrote " + out.path("model.json"));
  return 0;
}

struct PredictArgs {
  std::string model, data, truth, latent = "auto";
  std::size_t samples = 50;
};

int cmd_predict(const PredictArgs& a, const Common& c, const json& snapshot, bool future) {
  Model model = Model::load(a.model);
  DatasetTable query = load_csv(a.data, model.schema);
  PredictOptions opt;
  opt.samples = a.samples;
  opt.seed = c.seed;
  opt.source = future ? LatentSource::gp : parse_latent_source(a.latent);

  const std::string stem = future ? "predicted" : "imputed";
  Outputs out(c.out, {a.model, a.data, a.truth});
  out.write(stem + "_config.json", snapshot.dump(2) + "\n");
  PredictionResult res = future ? predict_future(query, model, opt) : impute(query, model, opt);
  std::vector<CellNll> held;
  if (!a.truth.empty()) held = score_held_out(res, load_held_out(a.truth, model.schema), model.schema);
  out.write(stem + ".csv", to_csv(res.filled));
  out.write(stem + "_nll.csv", nll_file(model.schema, res.nll, held, opt));
  if (!held.empty()) {
    log(c, predictive_nll_report(held, model.schema).table());
  } else if (!res.nll.empty()) {
    log(c, predictive_nll_report(res.nll, model.schema).table());
  }
  log(c, "wrote " + out.path(stem + ".csv"));
  return 0;
}

struct SynthArgs {
  std::string generator;
  std::size_t instances = 40, visits = 10, latent = 2;
  double noise = 0.1;
};

int cmd_synth(const SynthArgs& a, const Common& c, const Options& opts, const json& snapshot) {
  GenConfig g = a.generator.empty() ? GenConfig{} : GenConfig::from_json(read_json(a.generator));
  if (a.generator.empty() || opts.explicit_value("instances")) g.instances = a.instances;
  if (a.generator.empty() || opts.explicit_value("visits")) g.visits = a.visits;
  if (a.generator.empty() || opts.explicit_value("latent")) g.latent_dim = a.latent;
  if (a.generator.empty() || opts.explicit_value("noise")) g.observation_noise = a.noise;
  SyntheticData d = generate(g, c.seed);
  Outputs out(c.out, {a.generator});
  out.write("synth_config.json", snapshot.dump(2) + "\n");
  out.write("data.csv", to_csv(d.table));
  out.write("schema.json", d.table.schema().to_json().dump(2) + "\n");
  out.write("latents.csv", latents_csv(d));
  out.write("generator.json", g.to_json().dump(2) + "\n");
  log(c, "wrote " + std::to_string(d.table.rows()) + " rows to " + out.path("data.csv"));
  return 0;
}

struct SplitArgs {
  std::string data, schema;
  double train = 0.6, validation = 0.2, test = 0.2, mcar = 0.0;
  std::size_t disclose = 2;
};

int cmd_split(const SplitArgs& a, const Common& c, const json& snapshot) {
  Schema schema = Schema::load(a.schema);
  DatasetTable data = load_csv(a.data, schema);
  LongitudinalSplit s = split_longitudinal(data, {a.train, a.validation, a.test}, c.seed, a.disclose);
  Outputs out(c.out, {a.data, a.schema});
  out.write("split_config.json", snapshot.dump(2) + "\n");
  const std::pair<const char*, DatasetTable*> parts[] = {
      {"train", &s.train}, {"validation", &s.validation}, {"test", &s.test}};
  std::uint64_t salt = 0;
  for (const auto& [name, table] : parts) {
    if (a.mcar > 0) {
      McarResult m = inject_mcar(*table, a.mcar, c.seed * 1000003ULL + ++salt);
      *table = m.table;
      save_held_out(out.path(std::string("truth_") + name + ".csv"), schema, m.held_out);
      log(c, std::string(name) + ": " + std::to_string(m.held_out.size()) + " cells held out");
    }
    out.write(std::string(name) + ".csv", to_csv(*table));
  }
  out.write("disclosed.csv", to_csv(s.disclosed));
  log(c, "train " + std::to_string(s.train.rows()) + " rows, validation " + std::to_string(s.validation.rows()) +
             ", test " + std::to_string(s.test.rows()));
  return 0;
}

struct EvalArgs {
  std::string schema, pred, pred_schema, truth, model, train, nll;
};

int cmd_eval(const EvalArgs& a, const Common& c, const json& snapshot) {
  Schema schema = Schema::load(a.schema);
  Schema pschema = a.pred_schema.empty() ? schema : Schema::load(a.pred_schema);
  DatasetTable pred = load_csv(a.pred, pschema);
  std::vector<HeldOutCell> truth = load_held_out(a.truth, schema);
  NormalizationStats stats;
  if (!a.model.empty()) {
    stats = Model::load(a.model).stats;
  } else if (!a.train.empty()) {
    stats = fit_normalization(load_csv(a.train, schema));
  } else {
    throw Error("eval needs --model or --train for the NRMSE normalizer");
  }
  MetricReport rep = error_report(pred, truth, stats, &schema);
  if (!a.nll.empty()) rep.append(predictive_nll_report(read_held_out_nll(a.nll, schema), schema));
  Outputs out(c.out, {a.schema, a.pred, a.pred_schema, a.truth, a.model, a.train, a.nll});
  out.write("eval_config.json", snapshot.dump(2) + "\n");
  out.write("metrics.csv", rep.csv());
  std::cout << rep.table();
  return 0;
}

std::string find_subcommand(int argc, const char* const* argv) {
  static const std::set<std::string> names = {"train", "impute", "predict", "synth", "eval", "split"};
  for (int i = 1; i < argc; ++i)
    if (names.count(argv[i])) return argv[i];
  return {};
}

std::string find_config(int argc, const char* const* argv) {
  for (int i = 1; i < argc; ++i) {
    std::string s = argv[i];
    if (s == "--config" && i + 1 < argc) return argv[i + 1];
    if (s.rfind("--config=", 0) == 0) return s.substr(9);
  }
  return {};
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  json file = json::object();
  const std::string chosen = find_subcommand(argc, argv);
  try {
    std::string cfg = find_config(argc, argv);
    if (!cfg.empty()) file = read_json(cfg);
    if (!file.is_object()) throw ParseError(cfg + ": expected a JSON object");
    if (file.contains("command") && file.at("command") != chosen) {
      throw ParseError(cfg + " was written for '" + file.at("command").get<std::string>() + "', not '" + chosen + "'");
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  const json none = json::object();
  auto file_for = [&](const char* name) -> const json& { return chosen == name ? file : none; };

  CLI::App app{"Heterogeneous longitudinal VAE with an additive GP prior"};
  app.require_subcommand(1);
  std::string config_path;
  Common common;
  common.out = default_out();
  if (file.contains("out")) common.out = file.at("out").get<std::string>();
  if (file.contains("seed")) common.seed = file.at("seed").get<std::uint64_t>();
  if (file.contains("quiet")) common.quiet = file.at("quiet").get<bool>();

  auto add_common = [&](CLI::App* sub, Options& o) {
    sub->add_option("--config", config_path, "JSON file of option values (flags take precedence)");
    o.add("out", common.out, std::string("output directory (default $") + kOutputDirEnv + " or .)");
    o.add("seed", common.seed, "random seed");
    o.flag("quiet", common.quiet, "suppress progress output");
  };

  TrainArgs ta;
  PredictArgs ia, pa;
  SynthArgs sa;
  SplitArgs sp;
  EvalArgs ea;
  CLI::App *train_cmd, *impute_cmd, *predict_cmd, *synth_cmd, *split_cmd, *eval_cmd;
  std::optional<Options> train_opts, impute_opts, predict_opts, synth_opts, split_opts, eval_opts;
  try {
    train_cmd = app.add_subcommand("train", "fit a model and write model.json + history.csv");
    train_opts.emplace(train_cmd, file_for("train"));
    add_common(train_cmd, *train_opts);
    train_opts->add("data", ta.data, "training CSV")->required(!file.contains("data"));
    train_opts->add("schema", ta.schema, "schema JSON")->required(!file.contains("schema"));
    train_opts->add("validation", ta.validation, "validation CSV for val_nll / early stopping");
    train_opts->add("kernel", ta.model.kernel, "additive kernel, e.g. \"se(age) + ca(id)*se(age)\"");
    train_opts->add("latent", ta.model.latent_dim, "latent dimension L");
    train_opts->add("hidden", ta.model.hidden_width, "hidden units of encoder and decoder");
    train_opts->add("slot", ta.model.slot_width, "homogeneous-layer slot width per feature");
    train_opts->add("inducing", ta.model.inducing, "maximum number of inducing points (bound mode)");
    train_opts->flag("append-mask", ta.model.append_mask, "append the observation mask to the encoder input");
    train_opts->add("noise", ta.model.initial_noise, "initial latent noise variance");
    train_opts->add("epochs", ta.epochs, "training epochs");
    train_opts->add("batch", ta.batch, "instances per mini-batch in bound mode (0 = all)");
    train_opts->add("lr", ta.lr, "Adam learning rate");
    train_opts->add("kl", ta.kl, "KL term: exact or bound");
    train_opts->add("warmup", ta.warmup, "KL warm-up epochs (-1 = mode default)");
    train_opts->add("patience", ta.patience, "early-stopping patience on val_nll (0 = off)");

    impute_cmd = app.add_subcommand("impute", "fill missing cells; writes imputed.csv + imputed_nll.csv");
    impute_opts.emplace(impute_cmd, file_for("impute"));
    add_common(impute_cmd, *impute_opts);
    impute_opts->add("model", ia.model, "checkpoint written by train")->required(!file.contains("model"));
    impute_opts->add("data", ia.data, "query CSV (missing cells empty)")->required(!file.contains("data"));
    impute_opts->add("truth", ia.truth, "held-out cells (row,feature,value) to score");
    impute_opts->add("samples", ia.samples, "latent samples for the predictive distribution");
    impute_opts->add("latent", ia.latent, "latent source: auto, amortized or gp");

    predict_cmd = app.add_subcommand("predict", "predict rows from covariates; cells present are ground truth");
    predict_opts.emplace(predict_cmd, file_for("predict"));
    add_common(predict_cmd, *predict_opts);
    predict_opts->add("model", pa.model, "checkpoint written by train")->required(!file.contains("model"));
    predict_opts->add("data", pa.data, "future rows CSV")->required(!file.contains("data"));
    predict_opts->add("truth", pa.truth, "extra held-out cells to score");
    predict_opts->add("samples", pa.samples, "latent samples for the predictive distribution");

    synth_cmd = app.add_subcommand("synth", "generate a synthetic longitudinal dataset");
    synth_opts.emplace(synth_cmd, file_for("synth"));
    add_common(synth_cmd, *synth_opts);
    synth_opts->add("generator", sa.generator, "generator config JSON");
    synth_opts->add("instances", sa.instances, "number of instances");
    synth_opts->add("visits", sa.visits, "visits per instance");
    synth_opts->add("latent", sa.latent, "latent dimension of the generator");
    synth_opts->add("noise", sa.noise, "observation noise std (0 = noiseless)");

    split_cmd = app.add_subcommand("split", "instance-level train/validation/test split");
    split_opts.emplace(split_cmd, file_for("split"));
    add_common(split_cmd, *split_opts);
    split_opts->add("data", sp.data, "input CSV")->required(!file.contains("data"));
    split_opts->add("schema", sp.schema, "schema JSON")->required(!file.contains("schema"));
    split_opts->add("train", sp.train, "fraction of instances for training");
    split_opts->add("validation", sp.validation, "fraction of instances for validation");
    split_opts->add("test", sp.test, "fraction of instances for testing");
    split_opts->add("disclose", sp.disclose, "visits of each held-out instance moved into training");
    split_opts->add("mcar", sp.mcar, "fraction of observed cells to hold out in each split");

    eval_cmd = app.add_subcommand("eval", "score predictions against held-out cells");
    eval_opts.emplace(eval_cmd, file_for("eval"));
    add_common(eval_cmd, *eval_opts);
    eval_opts->add("schema", ea.schema, "true schema JSON")->required(!file.contains("schema"));
    eval_opts->add("pred", ea.pred, "predicted / imputed CSV")->required(!file.contains("pred"));
    eval_opts->add("pred-schema", ea.pred_schema, "schema of the prediction file if it differs");
    eval_opts->add("truth", ea.truth, "held-out cells (row,feature,value)")->required(!file.contains("truth"));
    eval_opts->add("model", ea.model, "checkpoint (training ranges for NRMSE)");
    eval_opts->add("train", ea.train, "training CSV (alternative to --model)");
    eval_opts->add("nll", ea.nll, "NLL sidecar from impute/predict --truth");
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << "\n";
    return 1;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*train_cmd) return cmd_train(ta, common, train_opts->snapshot("train"));
    if (*impute_cmd) return cmd_predict(ia, common, impute_opts->snapshot("impute"), false);
    if (*predict_cmd) return cmd_predict(pa, common, predict_opts->snapshot("predict"), true);
    if (*synth_cmd) return cmd_synth(sa, common, *synth_opts, synth_opts->snapshot("synth"));
    if (*split_cmd) return cmd_split(sp, common, split_opts->snapshot("split"));
    if (*eval_cmd) return cmd_eval(ea, common, eval_opts->snapshot("eval"));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.numerical() ? 2 : 1;
  } catch (const json::exception& e) {
    std::cerr << "error: bad config value: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace hlvae
