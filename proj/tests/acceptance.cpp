// One PASS/FAIL line per acceptance criterion; exit status 1 if any fails.
#include "vlconn/cli.hpp"
#include "vlconn/connectors.hpp"
#include "vlconn/cost_model.hpp"
#include "vlconn/geometry.hpp"
#include "vlconn/rng.hpp"
#include "vlconn/taxonomy.hpp"
#include "vlconn/toy_train.hpp"

#include "golden.hpp"
#include "oracles.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

using namespace vlconn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

const ConnectorKind kKinds[] = {ConnectorKind::Linear, ConnectorKind::TwoLayerMLP, ConnectorKind::AvgPool,
                                ConnectorKind::AttnPool, ConnectorKind::ConvMap};

Outcome gradient_fidelity() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  for (ConnectorKind k : kKinds) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      ConnectorSpec s;
      s.kind = k;
      s.d_v = 4;
      s.dim = 6;
      if (is_compressing(k)) s.tokens = 4;
      if (k == ConnectorKind::AttnPool) s.cross_dim = 5;
      worst = std::max(worst, connector_grad_check(s, GridShape{4, 4}, seed));
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-5 && secs < 60.0,
          "5 connectors x 3 seeds, max rel error " + fmt("%.3g", worst) + " (< 1e-5), " + fmt("%.2f", secs) +
              " s (< 60 s)"};
}

Outcome oracle_equivalence() {
  Rng rng(2024);
  double worst[3] = {0, 0, 0};
  const ConnectorKind kinds[3] = {ConnectorKind::AvgPool, ConnectorKind::AttnPool, ConnectorKind::ConvMap};
  for (int which = 0; which < 3; ++which) {
    for (int c = 0; c < 50; ++c) {
      const int h = 1 + static_cast<int>(rng.below(8));
      const int w = 1 + static_cast<int>(rng.below(8));
      const int side = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min(h, w))));
      ConnectorSpec s;
      s.kind = kinds[which];
      s.d_v = 1 + static_cast<int>(rng.below(5));
      s.dim = 1 + static_cast<int>(rng.below(5));
      s.tokens = side * side;
      s.seed = rng.below(1u << 30);
      if (s.kind == ConnectorKind::AttnPool) s.cross_dim = 1 + static_cast<int>(rng.below(5));
      if (s.kind == ConnectorKind::ConvMap) s.kernel = 1 + 2 * static_cast<int>(rng.below(3));
      ConnectorParams p = init_params(s);
      for (auto& e : p.entries()) {
        Matrix& v = e.tensor.mutable_value();
        for (Index i = 0; i < v.size(); ++i) v.data()[i] += 0.3 * rng.normal();
      }
      PatchGrid in{GridShape{h, w}, Matrix(h * w, s.d_v)};
      for (Index i = 0; i < in.features.size(); ++i) in.features.data()[i] = rng.normal();
      const Matrix got = forward(s, p, in).tokens;
      Matrix want;
      switch (s.kind) {
        case ConnectorKind::AvgPool: want = oracle::avgpool(in.features, h, w, side, p); break;
        case ConnectorKind::AttnPool: want = oracle::attnpool(in.features, p); break;
        default: want = oracle::convmap(in.features, h, w, side, s.kernel, p); break;
      }
      worst[which] = std::max(worst[which], oracle::max_abs_diff(got, want));
    }
  }
  const bool pass = worst[0] <= 1e-12 && worst[1] <= 1e-12 && worst[2] <= 1e-12;
  return {pass, "50 random grids <= 8x8 each, max abs diff avgpool " + fmt("%.2g", worst[0]) + ", attnpool " +
                    fmt("%.2g", worst[1]) + ", convmap " + fmt("%.2g", worst[2]) + " (<= 1e-12)"};
}

Outcome taxonomy_exactness() {
  const TaskTaxonomy& tax = TaskTaxonomy::builtin();
  int rows6 = 0, ok6 = 0, rows45 = 0, ok45 = 0;
  std::string misses;
  for (const auto& r : golden::read_csv("subtasks.csv")) {
    ++rows6;
    if (tax.classify(r[0], r[1]) == parse_granularity(r[2])) ++ok6;
    else misses += " " + r[0] + "/" + r[1];
  }
  std::string conflict;
  for (const auto& r : golden::read_csv("reclassified.csv")) {
    ++rows45;
    Granularity want = parse_granularity(r[3]);
    // Listed as fine here but as reasoning in the full sub-task table; the latter wins.
    if (r[0] == "SEED-Bench" && r[2] == "Visual Reasoning") {
      want = Granularity::Reasoning;
      conflict = "; SEED-Bench/Visual Reasoning follows the 42-row table (reasoning)";
    }
    if (tax.classify(r[0], r[2]) == want) ++ok45;
    else misses += " " + r[0] + "/" + r[2];
  }
  const bool pass = rows6 == 42 && ok6 == rows6 && ok45 == rows45 && rows45 > 0;
  return {pass, std::to_string(ok6) + "/" + std::to_string(rows6) + " sub-task rows, " + std::to_string(ok45) + "/" +
                    std::to_string(rows45) + " reclassified rows" + conflict +
                    (misses.empty() ? "" : "; mismatches:" + misses)};
}

Outcome geometry_exactness() {
  const int p224 = patch_count(224, 14).patch_count();
  const int p336 = patch_count(336, 14).patch_count();
  const int p448 = patch_count(448, 14).patch_count();
  bool ok = p224 == 256 && p336 == 576 && p448 == 1024;
  const auto groups = window_partition(GridShape{32, 32}, 12);
  std::vector<int> seen(1024, 0);
  std::set<int> sides;
  for (const auto& g : groups) {
    std::set<int> rows, cols;
    for (int p : g) {
      ++seen[static_cast<std::size_t>(p)];
      rows.insert(p / 32);
      cols.insert(p % 32);
    }
    sides.insert(static_cast<int>(rows.size()));
    sides.insert(static_cast<int>(cols.size()));
    ok = ok && g.size() == rows.size() * cols.size();
  }
  bool cover = groups.size() == 144;
  for (int c : seen) cover = cover && c == 1;
  ok = ok && cover && sides == std::set<int>{2, 3};
  std::string side_list;
  for (int s : sides) side_list += (side_list.empty() ? "" : ",") + std::to_string(s);
  return {ok, "patch counts " + std::to_string(p224) + "/" + std::to_string(p336) + "/" + std::to_string(p448) +
                  ", 32x32 -> 144 windows, sides {" + side_list + "}, " +
                  (cover ? "each patch in exactly one window" : "cover broken")};
}

Outcome cost_fidelity() {
  const auto t0 = Clock::now();
  struct Row {
    int res, stage;
    double measured;
  } rows[] = {{336, 1, 67}, {336, 2, 33}, {448, 1, 80}, {448, 2, 51}};
  auto pipeline = [](ConnectorKind kind, int res, int stage, int tokens) {
    PipelineConfig cfg;
    cfg.connector = default_cost_spec(kind, tokens);
    cfg.resolution = res;
    cfg.text_tokens = default_text_tokens(stage);
    return cfg;
  };
  bool pass = true;
  std::string detail;
  for (const auto& r : rows) {
    const double got = predict_time_reduction(pipeline(ConnectorKind::TwoLayerMLP, r.res, r.stage, 144),
                                              pipeline(ConnectorKind::ConvMap, r.res, r.stage, 144));
    pass = pass && std::abs(got - r.measured) <= 10.0;
    detail += std::to_string(r.res) + "/s" + std::to_string(r.stage) + " " + fmt("%.1f", got) + " vs " +
              fmt("%.0f", r.measured) + ", ";
  }
  const double out_of_range = predict_time_reduction(pipeline(ConnectorKind::TwoLayerMLP, 224, 1, 144),
                                                     pipeline(ConnectorKind::ConvMap, 224, 1, 144));
  const double secs = seconds_since(t0);
  return {pass, detail + "(+-10 pts, T1=" + std::to_string(kStage1TextTokens) + ", T2=" +
                    std::to_string(kStage2TextTokens) + "); 224 outside the model range (" +
                    fmt("%.1f", out_of_range) + " predicted, not checked), " + fmt("%.3f", secs) + " s"};
}

ConnectorSpec toy_spec(ConnectorKind kind, int tokens) {
  ConnectorSpec s;
  s.kind = kind;
  s.d_v = 32;
  s.dim = 64;
  if (is_compressing(kind)) s.tokens = tokens;
  return s;
}

Outcome trainability_ordering() {
  const auto t0 = Clock::now();
  CompareConfig cfg;
  cfg.specs = {toy_spec(ConnectorKind::AvgPool, 36), toy_spec(ConnectorKind::ConvMap, 36),
               toy_spec(ConnectorKind::AttnPool, 36)};
  cfg.tasks = {TaskKind::Coarse};
  cfg.seeds = {1, 2, 3};
  cfg.data.grid = GridShape{24, 24, 14};
  cfg.data.samples = 256;
  cfg.data.d_v = 32;
  cfg.data.classes = 4;
  cfg.data.noise = 1.0;
  cfg.data.signal = 1.0;
  cfg.hyper.lr = 0.05;
  cfg.hyper.steps = 200;
  cfg.hyper.batch = 16;
  cfg.checkpoints = {200};
  cfg.window = 10;
  const CompareReport r = compare(cfg);
  const double avg = r.row("avgpool-36", TaskKind::Coarse).mean_checkpoint_losses[0];
  const double conv = r.row("convmap-36", TaskKind::Coarse).mean_checkpoint_losses[0];
  const double attn = r.row("attnpool-36", TaskKind::Coarse).mean_checkpoint_losses[0];
  const double secs = seconds_since(t0);
  const bool pass = avg <= conv && conv <= attn && secs < 600.0;
  return {pass, "coarse 24x24, seeds 1-3, mean loss at step 200: avgpool " + fmt("%.4f", avg) + ", convmap " +
                    fmt("%.4f", conv) + ", attnpool " + fmt("%.4f", attn) +
                    " (need avgpool <= convmap <= attnpool), " + fmt("%.0f", secs) + " s"};
}

Outcome fine_gap() {
  const auto t0 = Clock::now();
  constexpr double kPinnedMargin = 0.50;
  CompareConfig cfg;
  cfg.specs = {toy_spec(ConnectorKind::TwoLayerMLP, 0), toy_spec(ConnectorKind::AttnPool, 16)};
  cfg.tasks = {TaskKind::Fine};
  cfg.seeds = {1, 2, 3};
  cfg.data.grid = GridShape{12, 12, 14};
  cfg.data.samples = 1024;
  cfg.data.d_v = 32;
  cfg.data.classes = 4;
  cfg.data.noise = 1.0;
  cfg.data.signal = 6.0;
  cfg.hyper.lr = 0.2;
  cfg.hyper.steps = 1500;
  cfg.hyper.batch = 16;
  cfg.checkpoints = {1500};
  const CompareReport r = compare(cfg);
  const CompareRow& mlp = r.row("mlp", TaskKind::Fine);
  const CompareRow& attn = r.row("attnpool-16", TaskKind::Fine);
  const double gap = mlp.mean_accuracy - attn.mean_accuracy;
  const double secs = seconds_since(t0);
  const bool pass = !mlp.diverged && !attn.diverged && gap >= kPinnedMargin && secs < 600.0;
  return {pass, "fine 12x12, seeds 1-3, held-out accuracy mlp " + fmt("%.3f", mlp.mean_accuracy) + ", attnpool-16 " +
                    fmt("%.3f", attn.mean_accuracy) + ", gap " + fmt("%.1f", 100.0 * gap) + " pts (>= " +
                    fmt("%.0f", 100.0 * kPinnedMargin) + "), " + fmt("%.0f", secs) + " s"};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Outcome determinism() {
  const fs::path root = fs::temp_directory_path() / "vlconn_acceptance_replay";
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream os(root / "results.csv");
    os << "benchmark,sub_task,correct,total\nMME,Color,8,10\nMMBench,Image Emotion,30,40\n"
       << "SEED-Bench,Instance Interaction,9,20\n";
  }
  const std::vector<std::vector<std::string>> runs{
      {"gradcheck", "--all", "--trials", "1"},
      {"forward", "--connector", "attnpool", "--tokens", "16", "--height", "8", "--width", "8"},
      {"cost"},
      {"toy-train", "--connector", "convmap", "--tokens", "9", "--grid", "9", "--steps", "20", "--samples", "32"},
      {"compare", "--connectors", "linear,avgpool-4", "--tasks", "coarse,reasoning", "--grid", "6", "--steps", "10",
       "--samples", "32", "--checkpoints", "5,10", "--trials", "2"},
      {"score", "--results", (root / "results.csv").string(), "--mode", "micro"},
      {"advise", "--resolution", "336", "--priority", "reasoning", "--budget", "limited"},
  };
  int identical = 0;
  std::string bad;
  for (const auto& base : runs) {
    const std::string a = (root / (base[0] + "-a")).string();
    const std::string b = (root / (base[0] + "-b")).string();
    std::ostringstream o1, e1, o2, e2;
    auto first = base;
    first.insert(first.end(), {"--out", a, "--seed", "7"});
    const int c1 = cli::dispatch(first, o1, e1);
    const int c2 = cli::dispatch({base[0], "--config", a + "/manifest.txt", "--out", b}, o2, e2);
    bool same = c1 == 0 && c2 == 0;
    int files = 0;
    if (same) {
      for (const auto& e : fs::directory_iterator(a)) {
        const std::string name = e.path().filename().string();
        std::string x = slurp(e.path()), y = slurp(fs::path(b) / name);
        if (name == "manifest.txt") {
          x.erase(x.find("out=" + a), a.size() + 4);
          y.erase(y.find("out=" + b), b.size() + 4);
        }
        ++files;
        same = same && fs::exists(fs::path(b) / name) && x == y;
      }
      std::size_t count_b = 0;
      for ([[maybe_unused]] const auto& e : fs::directory_iterator(b)) ++count_b;
      same = same && count_b == static_cast<std::size_t>(files) && files > 1;
    }
    if (same) ++identical;
    else bad += " " + base[0];
  }
  fs::remove_all(root);
  return {identical == static_cast<int>(runs.size()),
          std::to_string(identical) + "/" + std::to_string(runs.size()) +
              " subcommands replayed from their manifests with byte-identical outputs" +
              (bad.empty() ? "" : "; differing:" + bad)};
}

Outcome advisor_conformance() {
  struct Case {
    int res;
    Priority priority;
    Budget budget;
    const char* quote;
  } cases[] = {
      {224, Priority::Coarse, Budget::Limited, "using a two-layer MLP is advisable"},
      {336, Priority::Fine, Budget::Limited, "the two-layer MLP may be more suitable"},
      {448, Priority::Coarse, Budget::Limited, "C-Abstractor and average pooling 144tks emerge as more optimal choices"},
  };
  int ok = 0;
  std::string detail;
  for (const auto& c : cases) {
    const Advice a = advise(c.res, c.priority, c.budget);
    const bool hit = a.rationale.find(c.quote) != std::string::npos;
    ok += hit;
    detail += (detail.empty() ? "" : ", ") + a.rule + (hit ? " cites" : " MISSING") + " \"" + c.quote + "\"";
  }
  return {ok == 3, detail};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"gradient fidelity", gradient_fidelity},     {"oracle equivalence", oracle_equivalence},
      {"taxonomy exactness", taxonomy_exactness},   {"geometry exactness", geometry_exactness},
      {"cost-model fidelity", cost_fidelity},       {"trainability ordering", trainability_ordering},
      {"fine-grained gap", fine_gap},               {"manifest determinism", determinism},
      {"advisor conformance", advisor_conformance},
  };
  int failures = 0;
  int n = 0;
  for (const auto& [name, check] : criteria) {
    ++n;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << n << " " << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : "failed: " + std::to_string(failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
