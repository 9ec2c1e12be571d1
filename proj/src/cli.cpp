#include "vlconn/cli.hpp"

#include "vlconn/checkpoint.hpp"
#include "vlconn/connectors.hpp"
#include "vlconn/cost_model.hpp"
#include "vlconn/errors.hpp"
#include "vlconn/rng.hpp"
#include "vlconn/taxonomy.hpp"
#include "vlconn/toy_train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#ifndef VLCONN_VERSION
#define VLCONN_VERSION "0.0.0"
#endif

namespace vlconn::cli {
namespace {

namespace fs = std::filesystem;

constexpr const char* kManifestName = "manifest.txt";
// Manifest keys that describe a run rather than configure it.
constexpr std::string_view kReservedKeys[] = {"subcommand", "version", "output"};

std::string render(const std::string& v) { return v; }
std::string render(int v) { return std::to_string(v); }
std::string render(std::uint64_t v) { return std::to_string(v); }
std::string render(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> items;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) items.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return items;
}

int parse_int(std::string_view s, std::string_view what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError(std::string(what) + ": '" + std::string(s) + "' is not an integer");
  }
  return v;
}

std::vector<int> parse_int_list(std::string_view s, std::string_view what) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(parse_int(item, what));
  if (out.empty()) throw ConfigError(std::string(what) + " must list at least one value");
  return out;
}

// Every option of a subcommand, with a reader for the manifest.
class Settings {
 public:
  explicit Settings(CLI::App* app) : app_(app) {}

  template <class T>
  CLI::Option* add(const std::string& key, T& var, const std::string& help) {
    readers_.emplace_back(key, [&var] { return render(var); });
    return app_->add_option("--" + key, var, help)->capture_default_str();
  }

  CLI::Option* flag(const std::string& key, bool& var, const std::string& help) {
    readers_.emplace_back(key, [&var] { return std::string(var ? "true" : "false"); });
    return app_->add_flag("--" + key, var, help);
  }

  bool knows(std::string_view key) const {
    return std::any_of(readers_.begin(), readers_.end(), [&](const auto& r) { return r.first == key; });
  }

  std::vector<std::pair<std::string, std::string>> resolved() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& [key, read] : readers_) out.emplace_back(key, read());
    return out;
  }

  CLI::App* app() const { return app_; }

 private:
  CLI::App* app_;
  std::vector<std::pair<std::string, std::function<std::string()>>> readers_;
};

// Files written under one output directory, recorded for the manifest.
class OutputDir {
 public:
  explicit OutputDir(const std::string& dir) : root_(dir.empty() ? fs::path(".") : fs::path(dir)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw std::runtime_error("cannot create output directory '" + root_.string() + "': " + ec.message());
  }

  std::ofstream open(const std::string& name) {
    std::ofstream os(root_ / name, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write '" + (root_ / name).string() + "'");
    files_.push_back(name);
    return os;
  }

  void checkpoint(const std::string& name, const ConnectorParams& params) {
    save_checkpoint(root_ / name, params);
    files_.push_back(name);
  }

  void manifest(const std::string& subcommand, const Settings& settings) {
    std::ofstream os(root_ / kManifestName, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write manifest in '" + root_.string() + "'");
    os << "# vlconn run manifest; re-run with --config " << kManifestName << "\n";
    os << "subcommand=" << subcommand << "\n";
    os << "version=" << VLCONN_VERSION << "\n";
    for (const auto& [key, value] : settings.resolved()) os << key << "=" << value << "\n";
    for (const auto& f : files_) os << "output=" << f << "\n";
  }

 private:
  fs::path root_;
  std::vector<std::string> files_;
};

struct Common {
  std::string out = "vlconn-out";
  std::string config;
  std::uint64_t seed = 1;
};

void add_common(Settings& s, Common& c) {
  s.add("out", c.out, "Output directory; nothing is written outside it");
  s.add("seed", c.seed, "Seed for every random draw of the run");
  // Read before parsing, never echoed into the manifest.
  s.app()->add_option("--config", c.config, "Flat key=value file; flags given on the command line win");
}

std::pair<ConnectorKind, std::optional<int>> parse_connector_label(std::string_view label) {
  const auto dash = label.rfind('-');
  if (dash != std::string_view::npos && dash + 1 < label.size()) {
    const std::string_view suffix = label.substr(dash + 1);
    if (std::all_of(suffix.begin(), suffix.end(), [](char c) { return c >= '0' && c <= '9'; })) {
      return {parse_connector_kind(label.substr(0, dash)), parse_int(suffix, "connector token count")};
    }
  }
  return {parse_connector_kind(label), std::nullopt};
}

struct ConnectorArgs {
  std::string connector = "mlp";
  int tokens = 0;
  int d_v = 32;
  int dim = 64;
  int cross_dim = 0;
  int kernel = 3;
};

void add_connector_args(Settings& s, ConnectorArgs& a, bool with_kind) {
  if (with_kind) {
    s.add("connector", a.connector, "linear, mlp, avgpool, attnpool or convmap (aliases accepted)");
    s.add("tokens", a.tokens, "Output tokens Q of a compressing connector (0: kind default)");
  }
  s.add("d-v", a.d_v, "Visual feature channels");
  s.add("dim", a.dim, "Connector output width D");
  s.add("cross-dim", a.cross_dim, "AttnPool cross-attention width (0: d_v)");
  s.add("kernel", a.kernel, "ConvMap kernel size");
}

ConnectorSpec make_spec(ConnectorKind kind, std::optional<int> tokens, int default_tokens,
                        const ConnectorArgs& a) {
  ConnectorSpec spec;
  spec.kind = kind;
  spec.d_v = a.d_v;
  spec.dim = a.dim;
  spec.kernel = a.kernel;
  if (is_compressing(kind)) {
    spec.tokens = tokens.value_or(default_tokens);
  } else if (tokens) {
    throw ConfigError(std::string(to_string(kind)) + " keeps every patch and takes no token count");
  }
  if (kind == ConnectorKind::AttnPool && a.cross_dim > 0) spec.cross_dim = a.cross_dim;
  spec.validate();
  return spec;
}

std::optional<int> tokens_flag(int tokens) {
  if (tokens < 0) throw ConfigError("tokens must be non-negative");
  return tokens == 0 ? std::nullopt : std::optional<int>(tokens);
}

// ---- gradcheck ------------------------------------------------------------

struct GradcheckArgs {
  Common common;
  ConnectorArgs conn{"", 0, 4, 6, 5, 3};
  bool all = false;
  int trials = 3;
  int grid = 4;
  double eps = 1e-5;
  double tolerance = 1e-5;
};

int run_gradcheck(const GradcheckArgs& a, const Settings& settings, std::ostream& out, std::ostream& err) {
  if (a.all == !a.conn.connector.empty()) throw ConfigError("gradcheck needs exactly one of --all or --connector");
  if (a.trials <= 0) throw ConfigError("trials must be positive");
  std::vector<ConnectorKind> kinds;
  if (a.all) {
    kinds = {ConnectorKind::Linear, ConnectorKind::TwoLayerMLP, ConnectorKind::AvgPool,
             ConnectorKind::AttnPool, ConnectorKind::ConvMap};
  } else {
    kinds = {parse_connector_kind(a.conn.connector)};
  }
  const GridShape grid{a.grid, a.grid, 14};
  std::vector<std::tuple<ConnectorKind, std::uint64_t, double>> results;
  for (ConnectorKind kind : kinds) {
    const ConnectorSpec spec = make_spec(kind, tokens_flag(a.conn.tokens), std::min(4, a.grid * a.grid), a.conn);
    for (int t = 0; t < a.trials; ++t) {
      const std::uint64_t seed = a.common.seed + static_cast<std::uint64_t>(t);
      results.emplace_back(kind, seed, connector_grad_check(spec, grid, seed, a.eps));
    }
  }

  OutputDir dir(a.common.out);
  bool ok = true;
  {
    auto os = dir.open("gradcheck.csv");
    os << "connector,seed,max_rel_error,passed\n";
    for (const auto& [kind, seed, e] : results) {
      const bool pass = e < a.tolerance;
      ok = ok && pass;
      os << to_string(kind) << "," << seed << "," << render(e) << "," << (pass ? "true" : "false") << "\n";
      out << std::left << std::setw(9) << to_string(kind) << " seed " << seed << "  max rel error "
          << std::scientific << std::setprecision(3) << e << std::defaultfloat << (pass ? "  ok" : "  FAIL")
          << "\n";
    }
  }
  dir.manifest("gradcheck", settings);
  if (!ok) {
    err << "gradcheck: analytic gradients disagree with finite differences (tolerance "
        << render(a.tolerance) << ")\n";
    return kExitRuntime;
  }
  return kExitOk;
}

// ---- forward --------------------------------------------------------------

struct ForwardArgs {
  Common common;
  ConnectorArgs conn;
  int height = 24;
  int width = 24;
  std::string params;
};

int run_forward(const ForwardArgs& a, const Settings& settings, std::ostream& out) {
  ConnectorSpec spec = make_spec(parse_connector_kind(a.conn.connector), tokens_flag(a.conn.tokens), 36, a.conn);
  spec.seed = a.common.seed;
  if (a.height <= 0 || a.width <= 0) throw ConfigError("grid height and width must be positive");
  PatchGrid input{GridShape{a.height, a.width, 14}, Matrix(a.height * a.width, a.conn.d_v)};
  Rng rng(a.common.seed ^ 0x66656174ULL);
  for (Index i = 0; i < input.features.size(); ++i) input.features.data()[i] = rng.normal();
  ConnectorParams params = a.params.empty() ? init_params(spec) : load_checkpoint(a.params);
  const TokenSeq result = forward(spec, params, input);

  OutputDir dir(a.common.out);
  {
    auto os = dir.open("tokens.csv");
    os << "token";
    for (Index c = 0; c < result.width(); ++c) os << ",c" << c;
    os << "\n";
    for (Index r = 0; r < result.count(); ++r) {
      os << r;
      for (Index c = 0; c < result.width(); ++c) os << "," << render(result.tokens(r, c));
      os << "\n";
    }
  }
  dir.manifest("forward", settings);
  out << connector_label(spec) << ": " << input.grid.patch_count() << "x" << spec.d_v << " patches -> "
      << result.count() << "x" << result.width() << " tokens (" << param_count(spec) << " parameters)\n";
  return kExitOk;
}

// ---- cost -----------------------------------------------------------------

struct CostArgs {
  Common common;
  std::string connector;
  int tokens = 0;
  std::string resolution = "224,336,448";
  std::string stage = "1,2";
  int text_tokens = 0;
  int d_v = kDefaultEncoderChannels;
  int llm_hidden = kDefaultLlmHidden;
  int llm_layers = kDefaultLlmLayers;
  int cross_dim = 0;
  int kernel = 3;
  double overhead = 0.0;
};

int run_cost(const CostArgs& a, const Settings& settings, std::ostream& out) {
  const std::vector<int> resolutions = parse_int_list(a.resolution, "resolution");
  const std::vector<int> stages = parse_int_list(a.stage, "stage");
  for (int s : stages) {
    if (s != 1 && s != 2) throw ConfigError("stage must be 1 or 2, got " + std::to_string(s));
  }
  const ConnectorKind compressed_kind =
      a.connector.empty() ? ConnectorKind::ConvMap : parse_connector_kind(a.connector);
  const auto tokens = tokens_flag(a.tokens);

  auto spec_for = [&](ConnectorKind kind, int patches) {
    ConnectorSpec spec = default_cost_spec(kind, is_compressing(kind) ? tokens.value_or(144) : 144);
    spec.d_v = a.d_v;
    spec.dim = a.llm_hidden;
    spec.kernel = a.kernel;
    if (kind == ConnectorKind::AttnPool) spec.cross_dim = a.cross_dim > 0 ? a.cross_dim : a.d_v;
    if (kind == compressed_kind && !is_compressing(kind) && tokens && *tokens != patches) {
      throw ConfigError(std::string(to_string(kind)) + " keeps every patch: tokens must equal P=" +
                        std::to_string(patches) + ", got " + std::to_string(*tokens));
    }
    spec.validate();
    return spec;
  };

  struct Row {
    ConnectorSpec spec;
    int resolution, tokens, stage;
    CostReport report;
    double reduction;
  };
  std::vector<Row> rows;
  for (int res : resolutions) {
    const int patches = patch_count(res, 14).patch_count();
    for (int stage : stages) {
      auto pipeline = [&](const ConnectorSpec& spec) {
        PipelineConfig cfg;
        cfg.connector = spec;
        cfg.resolution = res;
        cfg.text_tokens = a.text_tokens > 0 ? a.text_tokens : default_text_tokens(stage);
        cfg.llm_hidden = a.llm_hidden;
        cfg.llm_layers = a.llm_layers;
        cfg.overhead_flops = a.overhead;
        cfg.validate();
        return cfg;
      };
      const PipelineConfig base = pipeline(spec_for(ConnectorKind::TwoLayerMLP, patches));
      std::vector<ConnectorKind> kinds{ConnectorKind::TwoLayerMLP};
      if (compressed_kind != ConnectorKind::TwoLayerMLP) kinds.push_back(compressed_kind);
      for (ConnectorKind kind : kinds) {
        const PipelineConfig cfg = pipeline(spec_for(kind, patches));
        const CostReport rep = cost_report(cfg);
        rows.push_back({cfg.connector, res, rep.visual_tokens, stage, rep, predict_time_reduction(base, cfg)});
      }
    }
  }

  OutputDir dir(a.common.out);
  {
    auto os = dir.open("cost.csv");
    os << "connector,resolution,tokens,stage,connector_flops,llm_flops,predicted_reduction_pct\n";
    for (const auto& r : rows) {
      os << to_string(r.spec.kind) << "," << r.resolution << "," << r.tokens << "," << r.stage << ","
         << r.report.connector_flops << "," << r.report.llm_flops << "," << render(r.reduction) << "\n";
    }
  }
  dir.manifest("cost", settings);
  out << std::left << std::setw(10) << "connector" << std::setw(6) << "res" << std::setw(8) << "tokens"
      << std::setw(7) << "stage" << "reduction\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << to_string(r.spec.kind) << std::setw(6) << r.resolution << std::setw(8)
        << r.tokens << std::setw(7) << r.stage << std::fixed << std::setprecision(1) << r.reduction << "%\n"
        << std::defaultfloat;
  }
  return kExitOk;
}

// ---- toy-train / compare --------------------------------------------------

struct TrainArgs {
  std::string task = "coarse";
  int steps = 300;
  double lr = 0.05;
  int batch = 16;
  double momentum = 0.0;
  double holdout = 0.25;
  int samples = 256;
  int grid = 24;
  int classes = 4;
  double noise = 1.0;
  double signal = 1.0;
  double query_std = 0.02;
};

void add_train_args(Settings& s, TrainArgs& t) {
  s.add("steps", t.steps, "SGD steps");
  s.add("lr", t.lr, "Learning rate");
  s.add("batch", t.batch, "Minibatch size");
  s.add("momentum", t.momentum, "Heavy-ball momentum in [0, 1)");
  s.add("holdout", t.holdout, "Trailing fraction of samples held out for accuracy");
  s.add("samples", t.samples, "Synthetic samples");
  s.add("grid", t.grid, "Patch grid side");
  s.add("classes", t.classes, "Number of classes");
  s.add("noise", t.noise, "Background noise std");
  s.add("signal", t.signal, "Norm of the class signals");
  s.add("query-std", t.query_std, "Init std of the reader query");
}

DatasetConfig dataset_config(const TrainArgs& t, int d_v) {
  DatasetConfig dc;
  dc.samples = t.samples;
  dc.grid = GridShape{t.grid, t.grid, 14};
  dc.d_v = d_v;
  dc.classes = t.classes;
  dc.noise = t.noise;
  dc.signal = t.signal;
  return dc;
}

TrainHyper train_hyper(const TrainArgs& t) {
  TrainHyper h;
  h.lr = t.lr;
  h.steps = t.steps;
  h.batch = t.batch;
  h.momentum = t.momentum;
  h.holdout = t.holdout;
  return h;
}

struct ToyTrainArgs {
  Common common;
  ConnectorArgs conn;
  TrainArgs train;
};

int run_toy_train(const ToyTrainArgs& a, const Settings& settings, std::ostream& out) {
  const ConnectorSpec spec =
      make_spec(parse_connector_kind(a.conn.connector), tokens_flag(a.conn.tokens), 36, a.conn);
  DatasetConfig dc = dataset_config(a.train, a.conn.d_v);
  dc.task = parse_task_kind(a.train.task);
  dc.seed = a.common.seed;
  const Dataset data = gen_dataset(dc);
  const TrainRun run = train(spec, data, HeadConfig{a.train.query_std}, train_hyper(a.train), a.common.seed);

  OutputDir dir(a.common.out);
  {
    auto os = dir.open("loss_curve.csv");
    write_loss_curve_csv(os, run);
  }
  {
    auto os = dir.open("summary.csv");
    write_summary_csv(os, {run});
  }
  dir.checkpoint("params.ckpt", run.params);
  dir.checkpoint("head.ckpt", run.head);
  dir.manifest("toy-train", settings);
  const double last = run.loss_curve.empty() ? 0.0 : run.loss_curve.back();
  out << connector_label(spec) << " on " << to_string(run.task) << ": final loss " << render(last)
      << ", held-out accuracy " << render(run.final_accuracy) << "\n";
  return kExitOk;
}

struct CompareArgs {
  Common common;
  ConnectorArgs conn;
  TrainArgs train;
  std::string connectors = "mlp,avgpool-36,convmap-36,attnpool-36";
  std::string tasks = "coarse";
  int trials = 3;
  std::string checkpoints = "50,100,200";
  int window = 10;
};

int run_compare(const CompareArgs& a, const Settings& settings, std::ostream& out) {
  CompareConfig cfg;
  for (const auto& label : split_list(a.connectors)) {
    const auto [kind, tokens] = parse_connector_label(label);
    cfg.specs.push_back(make_spec(kind, tokens, 36, a.conn));
  }
  if (cfg.specs.size() < 2) throw ConfigError("compare needs at least two connectors");
  for (const auto& t : split_list(a.tasks)) cfg.tasks.push_back(parse_task_kind(t));
  if (cfg.tasks.empty()) throw ConfigError("compare needs at least one task");
  if (a.trials <= 0) throw ConfigError("trials must be positive");
  for (int t = 0; t < a.trials; ++t) cfg.seeds.push_back(a.common.seed + static_cast<std::uint64_t>(t));
  cfg.data = dataset_config(a.train, a.conn.d_v);
  cfg.head = HeadConfig{a.train.query_std};
  cfg.hyper = train_hyper(a.train);
  cfg.checkpoints = parse_int_list(a.checkpoints, "checkpoints");
  for (int c : cfg.checkpoints) {
    if (c <= 0 || c > a.train.steps) {
      throw ConfigError("checkpoint " + std::to_string(c) + " lies outside 1.." + std::to_string(a.train.steps));
    }
  }
  if (a.window <= 0) throw ConfigError("window must be positive");
  cfg.window = a.window;
  const CompareReport report = compare(cfg);

  OutputDir dir(a.common.out);
  {
    auto os = dir.open("ranking.md");
    write_compare_markdown(os, report);
  }
  {
    auto os = dir.open("compare.csv");
    write_compare_csv(os, report);
  }
  dir.manifest("compare", settings);
  write_compare_markdown(out, report);
  return kExitOk;
}

// ---- score / advise -------------------------------------------------------

struct ScoreArgs {
  Common common;
  std::string results;
  std::string taxonomy;
  std::string mode = "macro";
};

int run_score(const ScoreArgs& a, const Settings& settings, std::ostream& out) {
  if (a.results.empty()) throw ConfigError("score needs --results <csv or jsonl file>");
  const AggregationMode mode = parse_aggregation_mode(a.mode);
  const TaskTaxonomy taxonomy = a.taxonomy.empty()
                                    ? TaskTaxonomy::builtin()
                                    : TaskTaxonomy::builtin().with_entries(read_taxonomy_overrides(fs::path(a.taxonomy)));
  const AggregateReport report = aggregate(read_results(fs::path(a.results)), mode, taxonomy);

  OutputDir dir(a.common.out);
  {
    auto os = dir.open("scores.csv");
    write_scores_csv(os, report);
  }
  {
    auto os = dir.open("report.md");
    write_score_markdown(os, report);
  }
  {
    auto os = dir.open("radar.csv");
    write_radar_csv(os, report);
  }
  dir.manifest("score", settings);
  write_score_markdown(out, report);
  return kExitOk;
}

struct AdviseArgs {
  Common common;
  int resolution = 336;
  std::string priority = "balanced";
  std::string budget = "ample";
};

int run_advise(const AdviseArgs& a, const Settings& settings, std::ostream& out) {
  const Advice advice = advise(a.resolution, parse_priority(a.priority), parse_budget(a.budget));
  std::string labels;
  for (const auto& r : advice.recommended) labels += (labels.empty() ? "" : ", ") + r.label();

  OutputDir dir(a.common.out);
  {
    auto os = dir.open("advice.md");
    os << "# Connector advice\n\n";
    os << "| resolution | priority | budget | recommended | rule |\n|---|---|---|---|---|\n";
    os << "| " << a.resolution << " | " << a.priority << " | " << a.budget << " | " << labels << " | "
       << advice.rule << " |\n\n";
    os << "> " << advice.rationale << "\n";
  }
  dir.manifest("advise", settings);
  out << "recommended: " << labels << "\n" << "rule: " << advice.rule << "\n"
      << "rationale: \"" << advice.rationale << "\"\n";
  return kExitOk;
}

// ---- config file ----------------------------------------------------------

std::vector<std::pair<std::string, std::string>> read_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file '" + path.string() + "'");
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const std::string text = trim(line);
    if (text.empty() || text[0] == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    entries.emplace_back(trim(text.substr(0, eq)), trim(text.substr(eq + 1)));
  }
  return entries;
}

std::optional<std::string> find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return std::nullopt;
}

// Config entries become leading flags; CLI11 keeps the last occurrence, so
// anything on the command line overrides them.
std::vector<std::string> expand_config(const std::vector<std::string>& args, const std::string& sub,
                                       const Settings& settings) {
  const auto path = find_config_arg(args);
  if (!path) return args;
  std::vector<std::string> expanded{args.front()};
  for (const auto& [key, value] : read_config(*path)) {
    if (key == "subcommand") {
      if (value != sub) throw ConfigError("config file is for '" + value + "', not '" + sub + "'");
      continue;
    }
    if (std::find(std::begin(kReservedKeys), std::end(kReservedKeys), key) != std::end(kReservedKeys)) continue;
    if (!settings.knows(key)) throw ConfigError("config key '" + key + "' is not an option of " + sub);
    if (value.empty()) continue;
    expanded.push_back("--" + key + "=" + value);
  }
  expanded.insert(expanded.end(), args.begin() + 1, args.end());
  return expanded;
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Vision-language connector toolkit", "vlconn"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_version_flag("--version", VLCONN_VERSION);
  app.require_subcommand(1);

  std::map<std::string, std::unique_ptr<Settings>, std::less<>> settings;
  auto sub = [&](const std::string& name, const std::string& help) -> Settings& {
    auto& s = settings[name];
    s = std::make_unique<Settings>(app.add_subcommand(name, help));
    return *s;
  };

  GradcheckArgs gc;
  {
    Settings& s = sub("gradcheck", "Compare analytic connector gradients with central differences");
    add_common(s, gc.common);
    s.flag("all", gc.all, "Check all five connectors");
    add_connector_args(s, gc.conn, true);
    s.add("trials", gc.trials, "Seeds per connector, starting at --seed");
    s.add("grid", gc.grid, "Patch grid side");
    s.add("eps", gc.eps, "Central-difference step");
    s.add("tolerance", gc.tolerance, "Largest accepted relative error");
  }
  ForwardArgs fw;
  {
    Settings& s = sub("forward", "Run one connector on random patch features and dump its tokens");
    add_common(s, fw.common);
    add_connector_args(s, fw.conn, true);
    s.add("height", fw.height, "Patch grid height");
    s.add("width", fw.width, "Patch grid width");
    s.add("params", fw.params, "Checkpoint with connector parameters (default: fresh init from --seed)");
  }
  CostArgs co;
  {
    Settings& s = sub("cost", "Predict connector and LLM prefill FLOPs and training-time reductions");
    add_common(s, co.common);
    s.add("connector", co.connector, "Connector compared with the two-layer MLP (default convmap)");
    s.add("tokens", co.tokens, "Visual tokens (0: P for mlp/linear, 144 otherwise)");
    s.add("resolution", co.resolution, "Comma-separated image resolutions");
    s.add("stage", co.stage, "Comma-separated training stages (1, 2)");
    s.add("text-tokens", co.text_tokens, "Text tokens per sample (0: stage default)");
    s.add("d-v", co.d_v, "Encoder channels");
    s.add("llm-hidden", co.llm_hidden, "LLM hidden size D");
    s.add("llm-layers", co.llm_layers, "LLM layers");
    s.add("cross-dim", co.cross_dim, "AttnPool cross-attention width (0: d_v)");
    s.add("kernel", co.kernel, "ConvMap kernel size");
    s.add("overhead", co.overhead, "Per-sample FLOPs shared by every connector");
  }
  ToyTrainArgs tt;
  {
    Settings& s = sub("toy-train", "Train one connector and a reader head on a synthetic task");
    add_common(s, tt.common);
    add_connector_args(s, tt.conn, true);
    s.add("task", tt.train.task, "coarse, fine or reasoning");
    add_train_args(s, tt.train);
  }
  CompareArgs cm;
  {
    Settings& s = sub("compare", "Train several connectors over seeds and rank them");
    add_common(s, cm.common);
    s.add("connectors", cm.connectors, "Comma-separated labels such as mlp,avgpool-36");
    s.add("tasks", cm.tasks, "Comma-separated tasks");
    s.add("trials", cm.trials, "Seeds per run, starting at --seed");
    s.add("checkpoints", cm.checkpoints, "Comma-separated steps at which mean loss is reported");
    s.add("window", cm.window, "Steps averaged at each checkpoint");
    add_connector_args(s, cm.conn, false);
    add_train_args(s, cm.train);
  }
  ScoreArgs sc;
  {
    Settings& s = sub("score", "Aggregate sub-task accuracies into coarse/fine/reasoning scores");
    add_common(s, sc.common);
    s.add("results", sc.results, "Per-sub-task results (CSV with header, or JSON lines)");
    s.add("taxonomy", sc.taxonomy, "Extra benchmark,sub_task,granularity rows");
    s.add("mode", sc.mode, "macro or micro");
  }
  AdviseArgs ad;
  {
    Settings& s = sub("advise", "Recommend a connector for a resolution, priority and budget");
    add_common(s, ad.common);
    s.add("resolution", ad.resolution, "Image resolution (224, 336 or 448)");
    s.add("priority", ad.priority, "coarse, fine, reasoning or balanced");
    s.add("budget", ad.budget, "ample or limited");
  }

  const std::string name = args.empty() ? std::string() : args.front();
  const auto known = settings.find(name);
  CLI::App* help_app = known == settings.end() ? &app : known->second->app();

  try {
    std::vector<std::string> argv = known == settings.end() ? args : expand_config(args, name, *known->second);
    std::reverse(argv.begin(), argv.end());
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << help_app->help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << VLCONN_VERSION << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << help_app->help();
    return kExitValidation;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  }

  const Settings& s = *settings.at(name);
  try {
    if (name == "gradcheck") return run_gradcheck(gc, s, out, err);
    if (name == "forward") return run_forward(fw, s, out);
    if (name == "cost") return run_cost(co, s, out);
    if (name == "toy-train") return run_toy_train(tt, s, out);
    if (name == "compare") return run_compare(cm, s, out);
    if (name == "score") return run_score(sc, s, out);
    return run_advise(ad, s, out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const DimensionError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const GeometryError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const LookupError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace vlconn::cli
