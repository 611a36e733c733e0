#include "mtsf/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "mtsf/data.hpp"
#include "mtsf/diagnostics.hpp"
#include "mtsf/model/checkpoint.hpp"
#include "mtsf/train.hpp"

namespace mtsf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot hash " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 init failed");
  }
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

namespace {

using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------- options

struct OutputOptions {
  std::string root;
  std::string run_dir;
  std::string config;
};

struct DataOptions {
  std::string path;
  std::size_t input_len = 96;
  std::size_t horizon = 96;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 1;
  std::string split = "ratio";
};

json to_json(const DataOptions& d) {
  return {{"input_len", d.input_len},
          {"horizon", d.horizon},
          {"train_stride", d.train_stride},
          {"eval_stride", d.eval_stride},
          {"split", d.split}};
}

void merge_data(DataOptions& d, const json& j) {
  d.input_len = j.value("input_len", d.input_len);
  d.horizon = j.value("horizon", d.horizon);
  d.train_stride = j.value("train_stride", d.train_stride);
  d.eval_stride = j.value("eval_stride", d.eval_stride);
  d.split = j.value("split", d.split);
}

struct ModelOverrides {
  std::optional<std::size_t> d_model, n_enc, n_dec, n_heads, d_ff, start_len;
  std::optional<bool> positional, stamp;
  std::optional<double> pad_value;
  bool post_norm = false;
};

struct SynthArgs {
  SynthOptions synth;
  std::string out;
  OutputOptions output;
};

struct TrainArgs {
  DataOptions data;
  std::string variant = "tvt-linear";
  ModelOverrides model;
  TrainConfig train;
  std::string stop_rule = "consecutive";
  bool no_shuffle = false;
  bool no_early_stopping = false;
  std::optional<double> lr;
  std::vector<double> lr_grid;
  OutputOptions output;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string part = "test";
  std::string append_to;
  OutputOptions output;
};

struct DiagnoseArgs {
  std::string checkpoint;
  std::string data;
  std::string part = "test";
  std::optional<std::size_t> window;
  OutputOptions output;
  // tu
  DataOptions study_data;
  std::vector<std::string> variants{"tpt-transformer", "tvt-linear"};
  std::vector<double> lrs{0.01};
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  std::string residual = "mean";
  // rank-collapse
  RankCollapseOptions probe;
  std::size_t n_seeds = 1;
};

// ---------------------------------------------------------------- run directory

std::string utc_stamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

class RunDir {
 public:
  RunDir(const OutputOptions& opts, std::uint64_t seed, std::string command, std::vector<std::string> argv)
      : command_(std::move(command)), argv_(std::move(argv)), seed_(seed), start_(Clock::now()) {
    if (!opts.run_dir.empty()) {
      dir_ = opts.run_dir;
    } else {
      fs::path root = opts.root;
      if (root.empty()) {
        const char* env = std::getenv(kOutputRootEnv);
        root = env && *env ? fs::path(env) : fs::path("runs");
      }
      const std::string base = utc_stamp() + "_seed" + std::to_string(seed);
      dir_ = root / base;
      for (int n = 1; fs::exists(dir_); ++n) dir_ = root / (base + "-" + std::to_string(n));
    }
    fs::create_directories(dir_);
  }

  const fs::path& dir() const { return dir_; }

  fs::path output(const fs::path& relative) {
    const fs::path p = dir_ / relative;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    outputs_.push_back(p);
    return p;
  }
  void external_output(const fs::path& p) { outputs_.push_back(p); }
  void input(const fs::path& p) { inputs_.push_back(p); }

  fs::path finish(const json& config) {
    json inputs = json::array();
    for (const auto& p : inputs_) inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    json outputs = json::array();
    for (const auto& p : outputs_) outputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p)}});
    const json manifest = {{"command", command_},
                           {"argv", argv_},
                           {"config", config},
                           {"seed", seed_},
                           {"inputs", std::move(inputs)},
                           {"outputs", std::move(outputs)},
                           {"timings", {{"wall_seconds", std::chrono::duration<double>(Clock::now() - start_).count()}}}};
    const fs::path path = dir_ / "manifest.json";
    write_json(path, manifest);
    return path;
  }

  static void write_json(const fs::path& path, const json& j) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << j.dump(2) << '\n';
  }

 private:
  fs::path dir_;
  std::string command_;
  std::vector<std::string> argv_;
  std::uint64_t seed_;
  Clock::time_point start_;
  std::vector<fs::path> inputs_;
  std::vector<fs::path> outputs_;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed JSON in " + path + ": " + e.what());
  }
}

// ---------------------------------------------------------------- data

struct Prepared {
  MultivariateSeries series;
  SeriesSplit parts;
  Normalizer normalizer;
  std::vector<SeriesWindow> train, valid, test;

  const std::vector<SeriesWindow>& part(const std::string& name) const {
    if (name == "train") return train;
    if (name == "valid") return valid;
    if (name == "test") return test;
    throw std::invalid_argument("unknown split part '" + name + "' (train, valid or test)");
  }
};

Prepared prepare(const DataOptions& d, const Normalizer* fitted) {
  Prepared p;
  p.series = load_csv(d.path);
  p.series.validate();
  const std::size_t min_len = d.input_len + d.horizon;
  if (d.split == "ratio") {
    p.parts = split(p.series, SplitRatios{}, min_len);
  } else if (d.split == "ett-hourly") {
    p.parts = split_calendar(p.series, 24, min_len);
  } else if (d.split == "ett-15min") {
    p.parts = split_calendar(p.series, 96, min_len);
  } else {
    throw std::invalid_argument("unknown split '" + d.split + "' (ratio, ett-hourly or ett-15min)");
  }
  p.normalizer = fitted ? *fitted : Normalizer::fit(p.parts.train);
  const WindowSpec train_spec{d.input_len, d.horizon, d.train_stride};
  const WindowSpec eval_spec{d.input_len, d.horizon, d.eval_stride};
  p.train = make_windows(p.normalizer.transform(p.parts.train), train_spec);
  p.valid = make_windows(p.normalizer.transform(p.parts.valid), eval_spec);
  p.test = make_windows(p.normalizer.transform(p.parts.test), eval_spec);
  return p;
}

ModelConfig resolve_model(const std::string& variant, const ModelOverrides& o, std::size_t k, const DataOptions& d,
                          std::uint64_t seed, const json& patch) {
  ModelConfig cfg = default_config(parse_variant(variant), k, d.input_len, d.horizon);
  if (o.d_model) {
    cfg.d_model = *o.d_model;
    if (!o.n_heads) cfg.n_heads = cfg.d_model % 8 == 0 ? 8 : 1;
    if (!o.d_ff) cfg.d_ff = 4 * cfg.d_model;
  }
  if (o.n_enc) cfg.n_enc = *o.n_enc;
  if (o.n_dec) cfg.n_dec = *o.n_dec;
  if (o.n_heads) cfg.n_heads = *o.n_heads;
  if (o.d_ff) cfg.d_ff = *o.d_ff;
  if (o.start_len) cfg.start_len = *o.start_len;
  if (o.positional) cfg.embeddings.positional = *o.positional;
  if (o.stamp) cfg.embeddings.stamp = *o.stamp;
  if (o.pad_value) cfg.pad_value = *o.pad_value;
  if (o.post_norm) cfg.post_norm = true;
  cfg.seed = seed;
  if (!patch.is_null()) {
    json j = to_json(cfg);
    j.merge_patch(patch);
    cfg = model_config_from_json(j);
  }
  cfg.validate();
  return cfg;
}

StopRule parse_stop_rule(const std::string& s) {
  if (s == "consecutive") return StopRule::kConsecutive;
  if (s == "windowed") return StopRule::kWindowed;
  throw std::invalid_argument("unknown stop rule '" + s + "'");
}

ResidualMode parse_residual(const std::string& s) {
  if (s == "mean") return ResidualMode::kMean;
  if (s == "median") return ResidualMode::kMedian;
  throw std::invalid_argument("unknown residual mode '" + s + "' (mean or median)");
}

Checkpoint load_checked(const std::string& path, std::size_t k) {
  Checkpoint ck = load_checkpoint(path);
  if (!ck.extra.contains("normalizer") || !ck.extra.contains("data")) {
    throw std::runtime_error("checkpoint " + path + " lacks normalizer/data metadata");
  }
  if (ck.model.config().num_vars != k) {
    throw std::runtime_error("checkpoint expects K=" + std::to_string(ck.model.config().num_vars) +
                             " variables, dataset has " + std::to_string(k));
  }
  return ck;
}

DataOptions data_from_checkpoint(const Checkpoint& ck, const std::string& path) {
  DataOptions d;
  merge_data(d, ck.extra.at("data"));
  d.path = path;
  if (d.input_len != ck.model.config().input_len || d.horizon != ck.model.config().horizon) {
    throw std::runtime_error("checkpoint data metadata disagrees with its model config");
  }
  return d;
}

// ---------------------------------------------------------------- commands

int cmd_synth(SynthArgs a, const std::vector<std::string>& argv, std::ostream& out) {
  json patch;
  if (!a.output.config.empty()) {
    const json j = read_json_file(a.output.config);
    if (j.contains("synth")) patch = j["synth"];
  }
  if (!patch.is_null()) {
    a.synth.num_vars = patch.value("k", a.synth.num_vars);
    a.synth.length = patch.value("t", a.synth.length);
    a.synth.period = patch.value("period", a.synth.period);
    a.synth.noise_sd = patch.value("noise_sd", a.synth.noise_sd);
    a.synth.seed = patch.value("seed", a.synth.seed);
  }
  if (a.synth.num_vars < 2) throw std::invalid_argument("--k must be at least 2 (multivariate series)");
  const MultivariateSeries series = synth_periodic(a.synth);

  RunDir run(a.output, a.synth.seed, "synth", argv);
  fs::path target;
  if (a.out.empty()) {
    target = run.output("series.csv");
  } else {
    target = a.out;
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    run.external_output(target);
  }
  write_csv(target, series);
  const json config = {{"k", a.synth.num_vars},
                       {"t", a.synth.length},
                       {"period", a.synth.period},
                       {"noise_sd", a.synth.noise_sd},
                       {"seed", a.synth.seed}};
  run.finish(config);
  out << "wrote " << target.string() << " (K=" << series.num_vars() << ", T=" << series.length() << ")\n";
  out << "run directory " << run.dir().string() << '\n';
  return 0;
}

int cmd_train(TrainArgs a, const std::vector<std::string>& argv, std::ostream& out) {
  json patch;
  if (!a.output.config.empty()) patch = read_json_file(a.output.config);
  a.train.stop_rule = parse_stop_rule(a.stop_rule);
  a.train.shuffle = !a.no_shuffle;
  a.train.early_stopping = !a.no_early_stopping;
  if (patch.contains("data")) merge_data(a.data, patch["data"]);
  if (patch.contains("train")) a.train = train_config_from_json(patch["train"], a.train);
  if (patch.contains("variant")) a.variant = patch["variant"].get<std::string>();
  a.train.validate();

  std::vector<double> grid = a.lr_grid;
  if (a.lr) grid = {*a.lr};
  if (grid.empty()) grid.assign(std::begin(kDefaultLrGrid), std::end(kDefaultLrGrid));

  const Prepared p = prepare(a.data, nullptr);
  const ModelConfig cfg =
      resolve_model(a.variant, a.model, p.series.num_vars(), a.data, a.train.seed, patch.contains("model") ? patch["model"] : json());

  RunDir run(a.output, a.train.seed, "train", argv);
  run.input(a.data.path);
  const auto start = Clock::now();
  LrSearchResult search = search_lr(cfg, p.train, p.valid, a.train, grid);
  const double wall = std::chrono::duration<double>(Clock::now() - start).count();
  ForecastModel& model = *search.model;
  const double lr = search.trials[search.best].lr;

  const Metrics m_train = evaluate(model, p.train);
  const Metrics m_valid = evaluate(model, p.valid);
  const Metrics m_test = evaluate(model, p.test);

  const json extra = {{"normalizer", p.normalizer.to_json()}, {"data", to_json(a.data)}, {"lr", lr}};
  save_checkpoint(run.output("checkpoint.json"), model, extra);

  TrainConfig used = a.train;
  used.lr = lr;
  json trials = json::array();
  for (const auto& t : search.trials) trials.push_back({{"lr", t.lr}, {"state", to_json(t.state)}});
  const json record = {{"command", "train"},
                       {"variant", to_string(cfg.variant())},
                       {"model", to_json(cfg)},
                       {"train", to_json(used)},
                       {"data", to_json(a.data)},
                       {"seed", a.train.seed},
                       {"lr_grid", grid},
                       {"selected_lr", lr},
                       {"trials", std::move(trials)},
                       {"history", to_json(search.trials[search.best].state)["history"]},
                       {"metrics",
                        {{"train", mtsf::to_json(m_train)},
                         {"valid", mtsf::to_json(m_valid)},
                         {"test", mtsf::to_json(m_test)}}},
                       {"wall_clock_seconds", wall}};
  RunDir::write_json(run.output("run_record.json"), record);
  run.finish({{"model", to_json(cfg)}, {"train", to_json(used)}, {"data", to_json(a.data)}, {"lr_grid", grid}});

  out << to_string(cfg.variant()) << ": lr=" << lr << " test mse=" << m_test.mse << " mae=" << m_test.mae
      << " params=" << m_test.param_count << '\n';
  out << "run directory " << run.dir().string() << '\n';
  return 0;
}

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const MultivariateSeries probe = load_csv(a.data);
  Checkpoint ck = load_checked(a.checkpoint, probe.num_vars());
  const DataOptions d = data_from_checkpoint(ck, a.data);
  const Normalizer norm = Normalizer::from_json(ck.extra.at("normalizer"));
  const Prepared p = prepare(d, &norm);
  const auto& windows = p.part(a.part);

  RunDir run(a.output, ck.model.config().seed, "eval", argv);
  run.input(a.checkpoint);
  run.input(a.data);
  const Metrics m = evaluate(ck.model, windows);
  json row = mtsf::to_json(m);
  row["variant"] = to_string(ck.model.config().variant());
  row["input_len"] = d.input_len;
  row["horizon"] = d.horizon;
  row["part"] = a.part;
  RunDir::write_json(run.output("eval.json"), row);
  if (!a.append_to.empty()) {
    std::ofstream table(a.append_to, std::ios::app);
    if (!table) throw std::runtime_error("cannot append to " + a.append_to);
    table << row.dump() << '\n';
    run.external_output(a.append_to);
  }
  run.finish({{"checkpoint", a.checkpoint}, {"data", to_json(d)}, {"part", a.part}});
  out << row.dump() << '\n';
  return 0;
}

int cmd_tokensim(const DiagnoseArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const MultivariateSeries probe = load_csv(a.data);
  Checkpoint ck = load_checked(a.checkpoint, probe.num_vars());
  const DataOptions d = data_from_checkpoint(ck, a.data);
  const Normalizer norm = Normalizer::from_json(ck.extra.at("normalizer"));
  const Prepared p = prepare(d, &norm);
  const auto& windows = p.part(a.part);
  if (a.window && *a.window >= windows.size()) {
    throw std::invalid_argument("--window " + std::to_string(*a.window) + " out of range (" +
                                std::to_string(windows.size()) + " windows)");
  }

  RunDir run(a.output, ck.model.config().seed, "diagnose tokensim", argv);
  run.input(a.checkpoint);
  run.input(a.data);
  std::vector<SimilarityMap> pred, truth;
  const std::size_t first = a.window.value_or(0);
  const std::size_t last = a.window ? first + 1 : windows.size();
  for (std::size_t i = first; i < last; ++i) {
    pred.push_back(token_sim(ck.model.forecast(windows[i].x, stamps_of(windows[i])), "prediction"));
    truth.push_back(token_sim(windows[i].y, "ground_truth"));
  }
  SimilarityMap mp = average_maps(pred);
  SimilarityMap mt = average_maps(truth);
  mp.dataset = mt.dataset = fs::path(a.data).stem().string();
  write_matrix_csv(run.output("tokensim_prediction.csv"), mp.values);
  write_pgm(run.output("tokensim_prediction.pgm"), mp.values);
  write_matrix_csv(run.output("tokensim_ground_truth.csv"), mt.values);
  write_pgm(run.output("tokensim_ground_truth.pgm"), mt.values);
  const json report = {{"variant", to_string(ck.model.config().variant())},
                       {"part", a.part},
                       {"prediction", mtsf::to_json(mp)},
                       {"ground_truth", mtsf::to_json(mt)}};
  RunDir::write_json(run.output("tokensim.json"), report);
  run.finish({{"mode", "tokensim"}, {"part", a.part}, {"window", a.window ? json(*a.window) : json("average")}});
  out << "tokensim " << mp.horizon << "x" << mp.horizon << " over " << mp.n_windows << " window(s) -> "
      << run.dir().string() << '\n';
  return 0;
}

int cmd_attention(const DiagnoseArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  const MultivariateSeries probe = load_csv(a.data);
  Checkpoint ck = load_checked(a.checkpoint, probe.num_vars());
  if (!ck.model.has_transformer_decoder()) {
    throw std::invalid_argument("attention mode needs a Transformer-decoder checkpoint, got " +
                                std::string(to_string(ck.model.config().variant())));
  }
  const DataOptions d = data_from_checkpoint(ck, a.data);
  const Normalizer norm = Normalizer::from_json(ck.extra.at("normalizer"));
  const Prepared p = prepare(d, &norm);
  const auto& windows = p.part(a.part);
  const std::size_t index = a.window.value_or(0);
  if (index >= windows.size()) throw std::invalid_argument("--window out of range");

  RunDir run(a.output, ck.model.config().seed, "diagnose attention", argv);
  run.input(a.checkpoint);
  run.input(a.data);
  const AttentionTrace trace = attention_dump(ck.model, windows[index]);
  json maps = json::array();
  for (const auto& m : trace) {
    const std::string stem = m.block + ".l" + std::to_string(m.layer) + ".h" + std::to_string(m.head);
    const fs::path csv = run.output(fs::path("attention") / (stem + ".csv"));
    write_matrix_csv(csv, m.scores);
    write_pgm(run.output(fs::path("attention") / (stem + ".pgm")), m.scores);
    maps.push_back({{"block", m.block},
                    {"layer", m.layer},
                    {"head", m.head},
                    {"shape", m.scores.shape()},
                    {"file", csv.filename().string()}});
  }
  RunDir::write_json(run.output("attention.json"), {{"window", index}, {"part", a.part}, {"maps", maps}});
  run.finish({{"mode", "attention"}, {"part", a.part}, {"window", index}});
  out << "dumped " << trace.size() << " attention maps -> " << run.dir().string() << '\n';
  return 0;
}

int cmd_tu(DiagnoseArgs a, const std::vector<std::string>& argv, std::ostream& out) {
  json patch;
  if (!a.output.config.empty()) patch = read_json_file(a.output.config);
  if (patch.contains("data")) merge_data(a.study_data, patch["data"]);
  a.study_data.path = a.data;
  if (a.variants.size() < 2) throw std::invalid_argument("--variants needs at least two entries");
  if (a.lrs.size() != 1 && a.lrs.size() != a.variants.size()) {
    throw std::invalid_argument("--lr takes one value or one per variant");
  }
  const ResidualMode mode = parse_residual(a.residual);
  TrainConfig base;
  base.batch_size = a.batch_size;
  base.seed = a.seed;
  base.max_epochs = a.epochs;
  base.early_stopping = false;
  if (patch.contains("train")) base = train_config_from_json(patch["train"], base);

  const Prepared p = prepare(a.study_data, nullptr);
  std::vector<TuStudyEntry> entries;
  for (std::size_t i = 0; i < a.variants.size(); ++i) {
    const ModelConfig cfg =
        resolve_model(a.variants[i], {}, p.series.num_vars(), a.study_data, a.seed, json());
    entries.push_back({cfg, a.lrs.size() == 1 ? a.lrs[0] : a.lrs[i]});
  }

  RunDir run(a.output, a.seed, "diagnose tu", argv);
  run.input(a.data);
  const TokenUniformityReport report = tu_training_study(entries, p.train, p.test, a.epochs, base, mode);
  json j = mtsf::to_json(report);
  j["data"] = to_json(a.study_data);
  j["residual"] = a.residual;
  RunDir::write_json(run.output("tu_report.json"), j);
  run.finish({{"mode", "tu"}, {"variants", a.variants}, {"lr", a.lrs}, {"epochs", a.epochs},
              {"data", to_json(a.study_data)}, {"train", mtsf::to_json(base)}});
  for (const auto& c : report.curves) {
    out << c.variant << ": final TU train=" << c.pred_train.back() << " test=" << c.pred_test.back() << '\n';
  }
  out << "ground truth: TU train=" << report.gt_train.back() << " test=" << report.gt_test.back() << '\n';
  return 0;
}

int cmd_rank_collapse(const DiagnoseArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  if (a.n_seeds == 0) throw std::invalid_argument("--seeds must be at least 1");
  if (a.probe.d_model % a.probe.n_heads != 0) throw std::invalid_argument("--d-model must be divisible by --heads");
  std::vector<RankCollapseTrace> traces;
  std::size_t within = 0;
  for (std::size_t s = 0; s < a.n_seeds; ++s) {
    RankCollapseOptions o = a.probe;
    o.seed = a.probe.seed + s;
    traces.push_back(rank_collapse_probe(o));
    bool ok = true;
    for (std::size_t l = 0; l < traces.back().bound.size(); ++l) ok = ok && traces.back().residual_norms[l] <= traces.back().bound[l];
    within += ok;
  }
  RunDir run(a.output, a.probe.seed, "diagnose rank-collapse", argv);
  json list = json::array();
  for (std::size_t s = 0; s < traces.size(); ++s) {
    json t = mtsf::to_json(traces[s]);
    t["seed"] = a.probe.seed + s;
    list.push_back(std::move(t));
  }
  const json config = {{"depth", a.probe.depth_max},      {"heads", a.probe.n_heads},
                       {"d_model", a.probe.d_model},      {"tokens", a.probe.n_tokens},
                       {"contraction", a.probe.contraction}, {"input_residual", a.probe.input_residual},
                       {"seed", a.probe.seed},            {"seeds", a.n_seeds}};
  RunDir::write_json(run.output("rank_collapse.json"),
                     {{"config", config}, {"traces", list}, {"seeds_within_bound", within}});
  run.finish(config);
  out << within << "/" << traces.size() << " seeds within the bound at every depth -> " << run.dir().string()
      << '\n';
  return 0;
}

void add_output_options(CLI::App* app, OutputOptions& o) {
  app->add_option("--output-root", o.root, std::string("Root for run directories (default $") + kOutputRootEnv +
                                               " or ./runs)");
  app->add_option("--run-dir", o.run_dir, "Write into this directory instead of a fresh timestamped one");
}

void add_data_shape(CLI::App* app, DataOptions& d) {
  app->add_option("--input-len", d.input_len, "Observed window length L")->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--horizon", d.horizon, "Forecast horizon H")->check(CLI::PositiveNumber)->capture_default_str();
  app->add_option("--train-stride", d.train_stride, "Step between training window origins")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--eval-stride", d.eval_stride, "Step between valid/test window origins")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--split", d.split, "ratio (0.7/0.1/0.2), ett-hourly or ett-15min")
      ->check(CLI::IsMember({"ratio", "ett-hourly", "ett-15min"}))
      ->capture_default_str();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multivariate time-series forecasting lab: time-point vs time-variable tokenization", "mtsf"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* synth_cmd = app.add_subcommand("synth", "Write a synthetic periodic multivariate series as CSV");
  synth_cmd->add_option("--k", synth.synth.num_vars, "Number of variables (>= 2)")
      ->required()
      ->check(CLI::Range(std::size_t{2}, std::size_t{1} << 20));
  synth_cmd->add_option("--t", synth.synth.length, "Number of time steps")->required()->check(CLI::PositiveNumber);
  synth_cmd->add_option("--period", synth.synth.period, "Daily period in steps")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  synth_cmd->add_option("--noise-sd", synth.synth.noise_sd, "Gaussian noise standard deviation")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  synth_cmd->add_option("--seed", synth.synth.seed, "Generator seed")->capture_default_str();
  synth_cmd->add_option("--out", synth.out, "CSV path (default: series.csv in the run directory)");
  synth_cmd->add_option("--config", synth.output.config, "JSON file; its \"synth\" object overrides flags");
  add_output_options(synth_cmd, synth.output);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train one architecture and write a checkpoint plus run record");
  train_cmd->add_option("--data", train_args.data.path, "Dataset CSV")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--variant", train_args.variant, "tpt-transformer, tvt-transformer, tvt-linear, mlp, mixer")
      ->check(CLI::IsMember({"tpt-transformer", "tvt-transformer", "tvt-linear", "mlp", "mixer"}))
      ->capture_default_str();
  add_data_shape(train_cmd, train_args.data);
  train_cmd->add_option("--lr", train_args.lr, "Fixed learning rate (default: search the grid)")
      ->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--lr-grid", train_args.lr_grid, "Learning rates to search")->delimiter(',');
  train_cmd->add_option("--batch-size", train_args.train.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--max-epochs", train_args.train.max_epochs)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--patience", train_args.train.patience)->check(CLI::PositiveNumber)->capture_default_str();
  train_cmd->add_option("--stop-rule", train_args.stop_rule, "consecutive or windowed")
      ->check(CLI::IsMember({"consecutive", "windowed"}))
      ->capture_default_str();
  train_cmd->add_flag("--no-shuffle", train_args.no_shuffle, "Keep window order fixed");
  train_cmd->add_flag("--no-early-stopping", train_args.no_early_stopping, "Always run max-epochs");
  train_cmd->add_option("--seed", train_args.train.seed, "Seed for initialization and shuffling")
      ->capture_default_str();
  train_cmd->add_option("--d-model", train_args.model.d_model)->check(CLI::PositiveNumber);
  train_cmd->add_option("--n-enc", train_args.model.n_enc);
  train_cmd->add_option("--n-dec", train_args.model.n_dec);
  train_cmd->add_option("--heads", train_args.model.n_heads)->check(CLI::PositiveNumber);
  train_cmd->add_option("--d-ff", train_args.model.d_ff)->check(CLI::PositiveNumber);
  train_cmd->add_option("--start-len", train_args.model.start_len, "Decoder start tokens (default L/2)");
  train_cmd->add_option("--positional", train_args.model.positional, "Sinusoidal positional embedding (true/false)");
  train_cmd->add_option("--stamp", train_args.model.stamp, "Time-stamp embedding (true/false)");
  train_cmd->add_option("--pad-value", train_args.model.pad_value, "Decoder placeholder fill");
  train_cmd->add_flag("--post-norm", train_args.model.post_norm, "Post-norm residual blocks");
  train_cmd->add_option("--config", train_args.output.config,
                        "JSON file with optional \"model\", \"train\", \"data\", \"variant\" overrides");
  add_output_options(train_cmd, train_args.output);

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and print one metrics JSON row");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint)->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--data", eval_args.data, "Dataset CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--part", eval_args.part, "train, valid or test")
      ->check(CLI::IsMember({"train", "valid", "test"}))
      ->capture_default_str();
  eval_cmd->add_option("--append-to", eval_args.append_to, "Append the row to this JSON-lines table");
  add_output_options(eval_cmd, eval_args.output);

  DiagnoseArgs diag;
  auto* diag_cmd = app.add_subcommand("diagnose", "Token-uniformity and attention diagnostics");
  diag_cmd->require_subcommand(1);

  auto* tokensim_cmd = diag_cmd->add_subcommand("tokensim", "TokenSim heat maps of predictions and ground truth");
  tokensim_cmd->add_option("--checkpoint", diag.checkpoint)->required()->check(CLI::ExistingFile);
  tokensim_cmd->add_option("--data", diag.data)->required()->check(CLI::ExistingFile);
  tokensim_cmd->add_option("--part", diag.part)->check(CLI::IsMember({"train", "valid", "test"}))
      ->capture_default_str();
  tokensim_cmd->add_option("--window", diag.window, "Single window index (default: average over all)");
  add_output_options(tokensim_cmd, diag.output);

  auto* attention_cmd = diag_cmd->add_subcommand("attention", "Dump every attention score matrix for one window");
  attention_cmd->add_option("--checkpoint", diag.checkpoint)->required()->check(CLI::ExistingFile);
  attention_cmd->add_option("--data", diag.data)->required()->check(CLI::ExistingFile);
  attention_cmd->add_option("--part", diag.part)->check(CLI::IsMember({"train", "valid", "test"}))
      ->capture_default_str();
  attention_cmd->add_option("--window", diag.window, "Window index (default 0)");
  add_output_options(attention_cmd, diag.output);

  auto* tu_cmd = diag_cmd->add_subcommand("tu", "Train variants without early stopping and track TU per epoch");
  tu_cmd->add_option("--data", diag.data)->required()->check(CLI::ExistingFile);
  tu_cmd->add_option("--variants", diag.variants)->delimiter(',')->capture_default_str();
  tu_cmd->add_option("--lr", diag.lrs, "One learning rate, or one per variant")->delimiter(',')->capture_default_str();
  tu_cmd->add_option("--epochs", diag.epochs)->check(CLI::PositiveNumber)->capture_default_str();
  tu_cmd->add_option("--batch-size", diag.batch_size)->check(CLI::PositiveNumber)->capture_default_str();
  tu_cmd->add_option("--seed", diag.seed)->capture_default_str();
  tu_cmd->add_option("--residual", diag.residual, "mean or median")->check(CLI::IsMember({"mean", "median"}))
      ->capture_default_str();
  add_data_shape(tu_cmd, diag.study_data);
  tu_cmd->add_option("--config", diag.output.config, "JSON file with optional \"train\" and \"data\" overrides");
  add_output_options(tu_cmd, diag.output);

  auto* rc_cmd = diag_cmd->add_subcommand("rank-collapse", "Residual decay of a pure self-attention stack vs the bound");
  rc_cmd->add_option("--depth", diag.probe.depth_max)->check(CLI::PositiveNumber)->capture_default_str();
  rc_cmd->add_option("--heads", diag.probe.n_heads)->check(CLI::PositiveNumber)->capture_default_str();
  rc_cmd->add_option("--d-model", diag.probe.d_model)->check(CLI::PositiveNumber)->capture_default_str();
  rc_cmd->add_option("--tokens", diag.probe.n_tokens)->check(CLI::Range(std::size_t{2}, std::size_t{1} << 16))
      ->capture_default_str();
  rc_cmd->add_option("--contraction", diag.probe.contraction, "Target 4 beta H / sqrt(d_qk)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  rc_cmd->add_option("--input-residual", diag.probe.input_residual, "Composite norm of RES(X) at depth 0")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  rc_cmd->add_option("--seed", diag.probe.seed)->capture_default_str();
  rc_cmd->add_option("--seeds", diag.n_seeds, "Number of consecutive seeds to probe")->capture_default_str();
  add_output_options(rc_cmd, diag.output);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (synth_cmd->parsed()) return cmd_synth(synth, args, out);
    if (train_cmd->parsed()) return cmd_train(train_args, args, out);
    if (eval_cmd->parsed()) return cmd_eval(eval_args, args, out);
    if (tokensim_cmd->parsed()) return cmd_tokensim(diag, args, out);
    if (attention_cmd->parsed()) return cmd_attention(diag, args, out);
    if (tu_cmd->parsed()) return cmd_tu(diag, args, out);
    if (rc_cmd->parsed()) return cmd_rank_collapse(diag, args, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace mtsf::cli
