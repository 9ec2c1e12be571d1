#include "vlconn/taxonomy.hpp"

#include "vlconn/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <sstream>

namespace vlconn {

std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Coarse: return "coarse";
    case Granularity::Fine: return "fine";
    case Granularity::Reasoning: return "reasoning";
  }
  return "unknown";
}

Granularity parse_granularity(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "coarse" || n == "coarse-grained perception" || n == "coarse-grained") {
    return Granularity::Coarse;
  }
  if (n == "fine" || n == "fine-grained perception" || n == "fine-grained") return Granularity::Fine;
  if (n == "reasoning") return Granularity::Reasoning;
  throw ConfigError("unknown granularity '" + std::string(name) +
                    "' (expected coarse, fine or reasoning)");
}

std::string normalize_name(std::string_view name) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : name) {
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

namespace {

std::string key_of(const std::string& bench, const std::string& sub) { return bench + "|" + sub; }

std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

struct BuiltinRow {
  const char* benchmark;
  const char* sub_task;
  Granularity granularity;
};

constexpr Granularity C = Granularity::Coarse;
constexpr Granularity F = Granularity::Fine;
constexpr Granularity R = Granularity::Reasoning;

// Reclassified parent tasks of every sub-task of the three benchmarks.
constexpr BuiltinRow kBuiltinRows[] = {
    {"MMBench", "Image Quality", C},
    {"MMBench", "Image Topic", C},
    {"MMBench", "Image Emotion", C},
    {"MMBench", "Image Scene", C},
    {"MMBench", "Image Style", C},
    {"MME", "Artwork", C},
    {"MME", "Landmark", C},
    {"MME", "Posters", C},
    {"MME", "Scene", C},
    {"SEED-Bench", "Scene Understanding", C},

    {"MMBench", "OCR", F},
    {"MMBench", "Celebrity Recognition", F},
    {"MMBench", "Object Localization", F},
    {"MMBench", "Attribute Recognition", F},
    {"MMBench", "Action Recognition", F},
    {"MMBench", "Attribute Comparison", F},
    {"MMBench", "Spatial Relationship", F},
    {"MME", "OCR", F},
    {"MME", "Celebrity", F},
    {"MME", "Color", F},
    {"MME", "Count", F},
    {"MME", "Existence", F},
    {"MME", "Position", F},
    {"SEED-Bench", "Instance Identity", F},
    {"SEED-Bench", "Instance Attribute", F},
    {"SEED-Bench", "Instance Location", F},
    {"SEED-Bench", "Instance Counting", F},
    {"SEED-Bench", "Spatial Relationship", F},
    {"SEED-Bench", "Instance Interaction", F},

    {"MMBench", "Function Reasoning", R},
    {"MMBench", "Identity Reasoning", R},
    {"MMBench", "Physical Property Reasoning", R},
    {"MMBench", "Future Prediction", R},
    {"MMBench", "Image-Text Understanding", R},
    {"MMBench", "Nature Relation", R},
    {"MMBench", "Physical Relation", R},
    {"MMBench", "Social Relation", R},
    {"MME", "Code Reasoning", R},
    {"MME", "Commonsense Reasoning", R},
    {"MME", "Numerical Calculation", R},
    {"MME", "Text Translation", R},
    {"SEED-Bench", "Visual Reasoning", R},

    // SEED-Bench's text-recognition dimension is reclassified as fine-grained
    // but has no row in the per-benchmark summary listing.
    {"SEED-Bench", "Text Recognition", F},
};

}  // namespace

void TaskTaxonomy::add(TaxonomyEntry entry) {
  const std::string bench = benchmark_key(entry.benchmark);
  const std::string key = key_of(bench, normalize_name(entry.sub_task));
  if (auto it = index_.find(key); it != index_.end()) {
    const TaxonomyEntry& existing = entries_[it->second];
    if (existing.granularity == entry.granularity) return;
    if (existing.builtin) {
      throw ConfigError("cannot redefine built-in sub-task " + existing.benchmark + "/" +
                        existing.sub_task + " as " + std::string(to_string(entry.granularity)));
    }
    throw ConfigError("conflicting user entries for " + entry.benchmark + "/" + entry.sub_task);
  }
  if (!bench_alias_.contains(bench)) bench_alias_[bench] = bench;
  index_[key] = entries_.size();
  entries_.push_back(std::move(entry));
}

void TaskTaxonomy::alias(std::string_view benchmark, std::string_view alias_name,
                         std::string_view target) {
  const std::string bench = benchmark_key(benchmark);
  index_[key_of(bench, normalize_name(alias_name))] =
      index_.at(key_of(bench, normalize_name(target)));
}

std::string TaskTaxonomy::benchmark_key(std::string_view benchmark) const {
  const std::string n = normalize_name(benchmark);
  auto it = bench_alias_.find(n);
  return it == bench_alias_.end() ? n : it->second;
}

const TaskTaxonomy& TaskTaxonomy::builtin() {
  static const TaskTaxonomy table = [] {
    TaskTaxonomy t;
    for (const auto& row : kBuiltinRows) t.add({row.benchmark, row.sub_task, row.granularity, true});
    for (const char* a : {"seed", "seedbench", "seed bench", "seed_bench"}) {
      t.bench_alias_[a] = "seed-bench";
    }
    t.bench_alias_["mmb"] = "mmbench";
    t.bench_alias_["mme-perception"] = "mme";
    // Spellings used by the benchmarks' own sub-task listings.
    t.alias("MME", "Poster", "Posters");
    t.alias("SEED-Bench", "Spatial Relation", "Spatial Relationship");
    t.alias("MMBench", "Structuralized Image-Text Understanding", "Image-Text Understanding");
    return t;
  }();
  return table;
}

TaskTaxonomy TaskTaxonomy::with_entries(const std::vector<TaxonomyEntry>& extra) const {
  TaskTaxonomy t = *this;
  for (TaxonomyEntry e : extra) {
    e.builtin = false;
    t.add(std::move(e));
  }
  return t;
}

std::optional<Granularity> TaskTaxonomy::find(std::string_view benchmark,
                                              std::string_view sub_task) const {
  auto it = index_.find(key_of(benchmark_key(benchmark), normalize_name(sub_task)));
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].granularity;
}

std::pair<std::string, std::string> TaskTaxonomy::canonical(std::string_view benchmark,
                                                            std::string_view sub_task) const {
  auto it = index_.find(key_of(benchmark_key(benchmark), normalize_name(sub_task)));
  if (it == index_.end()) {
    classify(benchmark, sub_task);  // throws with suggestions
  }
  const TaxonomyEntry& e = entries_[it->second];
  return {e.benchmark, e.sub_task};
}

Granularity TaskTaxonomy::classify(std::string_view benchmark, std::string_view sub_task) const {
  if (auto g = find(benchmark, sub_task)) return *g;
  const std::string bench = benchmark_key(benchmark);
  std::vector<std::pair<std::size_t, std::string>> candidates;
  for (const auto& e : entries_) {
    if (benchmark_key(e.benchmark) != bench) continue;
    candidates.emplace_back(edit_distance(normalize_name(sub_task), normalize_name(e.sub_task)),
                            e.sub_task);
  }
  if (candidates.empty()) {
    std::string known;
    for (const auto& e : entries_) {
      if (known.find(e.benchmark) == std::string::npos) known += (known.empty() ? "" : ", ") + e.benchmark;
    }
    throw LookupError("unknown benchmark '" + std::string(benchmark) + "' (known: " + known + ")");
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string nearest;
  for (std::size_t i = 0; i < std::min<std::size_t>(3, candidates.size()); ++i) {
    nearest += (i ? ", " : "") + std::string("'") + candidates[i].second + "'";
  }
  throw LookupError("unknown sub-task '" + std::string(sub_task) + "' for benchmark '" +
                    std::string(benchmark) + "'; nearest known: " + nearest);
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw FormatError("unterminated quoted field");
  fields.push_back(cur);
  for (auto& f : fields) {
    while (!f.empty() && (f.back() == ' ' || f.back() == '\r' || f.back() == '\t')) f.pop_back();
    std::size_t s = 0;
    while (s < f.size() && (f[s] == ' ' || f[s] == '\t')) ++s;
    f.erase(0, s);
  }
  return fields;
}

using Record = std::map<std::string, std::string>;

// Reads CSV (header row) or JSON lines into string-valued records.
std::vector<std::pair<int, Record>> read_records(std::istream& is,
                                                 const std::vector<std::string>& required) {
  std::vector<std::pair<int, Record>> out;
  std::string line;
  int line_no = 0;
  std::vector<std::string> header;
  bool json_lines = false;
  bool seen_first = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line_no == 1 && line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
    if (normalize_name(line).empty()) continue;
    if (!seen_first) {
      seen_first = true;
      json_lines = normalize_name(line).front() == '{';
      if (!json_lines) {
        for (auto& h : split_csv_line(line)) header.push_back(normalize_name(h));
        for (const auto& r : required) {
          if (std::find(header.begin(), header.end(), r) == header.end()) {
            throw FormatError("line 1: header lacks required field '" + r + "'");
          }
        }
        continue;
      }
    }
    Record rec;
    if (json_lines) {
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
      }
      for (auto it = j.begin(); it != j.end(); ++it) {
        rec[normalize_name(it.key())] =
            it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
      }
    } else {
      const auto fields = split_csv_line(line);
      if (fields.size() != header.size()) {
        throw FormatError("line " + std::to_string(line_no) + ": expected " +
                          std::to_string(header.size()) + " fields, got " +
                          std::to_string(fields.size()));
      }
      for (std::size_t i = 0; i < fields.size(); ++i) rec[header[i]] = fields[i];
    }
    for (const auto& r : required) {
      if (!rec.contains(r)) {
        throw FormatError("line " + std::to_string(line_no) + ": missing field '" + r + "'");
      }
    }
    out.emplace_back(line_no, std::move(rec));
  }
  if (!seen_first) throw FormatError("input is empty (a header row is required)");
  return out;
}

long long parse_count(const std::string& s, int line_no, const char* field) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != s.size()) {
    throw FormatError("line " + std::to_string(line_no) + ": field '" + field +
                      "' is not an integer: '" + s + "'");
  }
  return v;
}

}  // namespace

std::vector<SubTaskResult> read_results(std::istream& is) {
  std::vector<SubTaskResult> out;
  for (auto& [line_no, rec] : read_records(is, {"benchmark", "sub_task", "correct", "total"})) {
    SubTaskResult r{rec["benchmark"], rec["sub_task"], parse_count(rec["correct"], line_no, "correct"),
                    parse_count(rec["total"], line_no, "total")};
    if (r.total <= 0 || r.correct < 0 || r.correct > r.total) {
      throw ConfigError("line " + std::to_string(line_no) + ": need 0 <= correct <= total and total > 0");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<SubTaskResult> read_results(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open results file " + path.string());
  return read_results(is);
}

std::vector<TaxonomyEntry> read_taxonomy_overrides(std::istream& is) {
  std::vector<TaxonomyEntry> out;
  for (auto& [line_no, rec] : read_records(is, {"benchmark", "sub_task", "granularity"})) {
    (void)line_no;
    out.push_back({rec["benchmark"], rec["sub_task"], parse_granularity(rec["granularity"]), false});
  }
  return out;
}

std::vector<TaxonomyEntry> read_taxonomy_overrides(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open taxonomy file " + path.string());
  return read_taxonomy_overrides(is);
}

std::string_view to_string(AggregationMode m) { return m == AggregationMode::Macro ? "macro" : "micro"; }

AggregationMode parse_aggregation_mode(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "macro") return AggregationMode::Macro;
  if (n == "micro") return AggregationMode::Micro;
  throw ConfigError("unknown aggregation mode '" + std::string(name) + "' (expected macro or micro)");
}

const BucketScore& AggregateReport::bucket(std::string_view view, Granularity g) const {
  auto it = views.find(std::string(view));
  if (it == views.end()) throw LookupError("no view named '" + std::string(view) + "'");
  return it->second.at(g);
}

AggregateReport aggregate(const std::vector<SubTaskResult>& results, AggregationMode mode,
                          const TaskTaxonomy& taxonomy) {
  struct Merged {
    Granularity g;
    long long correct = 0;
    long long total = 0;
  };
  std::map<std::pair<std::string, std::string>, Merged> merged;
  for (const auto& r : results) {
    if (r.total <= 0 || r.correct < 0 || r.correct > r.total) {
      throw ConfigError(r.benchmark + "/" + r.sub_task + ": need 0 <= correct <= total and total > 0");
    }
    const Granularity g = taxonomy.classify(r.benchmark, r.sub_task);
    auto& m = merged.try_emplace(taxonomy.canonical(r.benchmark, r.sub_task), Merged{g}).first->second;
    m.correct += r.correct;
    m.total += r.total;
  }

  AggregateReport report;
  report.mode = mode;
  struct Acc {
    double accuracy_sum = 0.0;
    int n = 0;
    long long correct = 0;
    long long total = 0;
  };
  std::map<std::string, std::map<Granularity, Acc>> acc;
  for (const auto& [key, m] : merged) {
    const double a = static_cast<double>(m.correct) / static_cast<double>(m.total);
    report.sub_tasks.push_back({key.first, key.second, m.g, m.correct, m.total, a});
    for (const std::string& view : {key.first, std::string("all")}) {
      Acc& x = acc[view][m.g];
      x.accuracy_sum += a;
      x.n += 1;
      x.correct += m.correct;
      x.total += m.total;
    }
  }
  for (const auto& [view, buckets] : acc) {
    auto& out = report.views[view];
    for (Granularity g : kAllGranularities) {
      BucketScore s;
      auto it = buckets.find(g);
      if (it != buckets.end()) {
        const Acc& x = it->second;
        s.sub_tasks = x.n;
        s.correct = x.correct;
        s.total = x.total;
        s.score = mode == AggregationMode::Macro
                      ? x.accuracy_sum / x.n
                      : static_cast<double>(x.correct) / static_cast<double>(x.total);
      }
      out[g] = s;
    }
  }
  if (report.views.empty()) {
    auto& out = report.views["all"];
    for (Granularity g : kAllGranularities) out[g] = BucketScore{};
  }
  return report;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

std::string fixed6(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(6) << v;
  return os.str();
}

// Pooled view first, then benchmarks alphabetically.
std::vector<std::string> view_order(const AggregateReport& r) {
  std::vector<std::string> names{"all"};
  for (const auto& [v, _] : r.views) {
    if (v != "all") names.push_back(v);
  }
  return names;
}

}  // namespace

void write_scores_csv(std::ostream& os, const AggregateReport& report) {
  os << "view,mode,granularity,score,sub_tasks,correct,total\n";
  for (const auto& view : view_order(report)) {
    for (Granularity g : kAllGranularities) {
      const BucketScore& s = report.views.at(view).at(g);
      os << csv_field(view) << "," << to_string(report.mode) << "," << to_string(g) << ","
         << (s.score ? fixed6(*s.score) : std::string("absent")) << "," << s.sub_tasks << ","
         << s.correct << "," << s.total << "\n";
    }
  }
}

void write_radar_csv(std::ostream& os, const AggregateReport& report) {
  os << "granularity,sub_task,score\n";
  for (Granularity g : kAllGranularities) {
    for (const auto& st : report.sub_tasks) {
      if (st.granularity != g) continue;
      os << to_string(g) << "," << csv_field(st.benchmark + "/" + st.sub_task) << ","
         << fixed6(st.accuracy) << "\n";
    }
  }
}

void write_score_markdown(std::ostream& os, const AggregateReport& report) {
  os << "# Granularity scores (" << to_string(report.mode) << " aggregation)\n\n";
  os << "| view | coarse | fine | reasoning |\n|---|---|---|---|\n";
  for (const auto& view : view_order(report)) {
    os << "| " << view;
    for (Granularity g : kAllGranularities) {
      const BucketScore& s = report.views.at(view).at(g);
      os << " | " << (s.score ? fixed6(*s.score) : std::string("absent"));
    }
    os << " |\n";
  }
  os << "\n## Sub-tasks\n\n| benchmark | sub-task | granularity | correct | total | accuracy |\n"
        "|---|---|---|---|---|---|\n";
  for (const auto& st : report.sub_tasks) {
    os << "| " << st.benchmark << " | " << st.sub_task << " | " << to_string(st.granularity)
       << " | " << st.correct << " | " << st.total << " | " << fixed6(st.accuracy) << " |\n";
  }
  os << "\nScores are plain accuracies in [0, 1]. MME's conventional accuracy+ sum is not computed.\n";
}

Priority parse_priority(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "coarse") return Priority::Coarse;
  if (n == "fine") return Priority::Fine;
  if (n == "reasoning") return Priority::Reasoning;
  if (n == "balanced") return Priority::Balanced;
  throw ConfigError("unknown priority '" + std::string(name) +
                    "' (expected coarse, fine, reasoning or balanced)");
}

Budget parse_budget(std::string_view name) {
  const std::string n = normalize_name(name);
  if (n == "ample") return Budget::Ample;
  if (n == "limited") return Budget::Limited;
  throw ConfigError("unknown budget '" + std::string(name) + "' (expected ample or limited)");
}

std::string_view to_string(Priority p) {
  switch (p) {
    case Priority::Coarse: return "coarse";
    case Priority::Fine: return "fine";
    case Priority::Reasoning: return "reasoning";
    case Priority::Balanced: return "balanced";
  }
  return "unknown";
}

std::string_view to_string(Budget b) { return b == Budget::Ample ? "ample" : "limited"; }

std::string Recommendation::label() const {
  std::string name;
  switch (kind) {
    case ConnectorKind::Linear: name = "Linear"; break;
    case ConnectorKind::TwoLayerMLP: name = "Two-layer MLP"; break;
    case ConnectorKind::AvgPool: name = "Average pooling"; break;
    case ConnectorKind::AttnPool: name = "Q-Former"; break;
    case ConnectorKind::ConvMap: name = "C-Abstractor"; break;
  }
  if (tokens) name += " " + std::to_string(*tokens) + "tks";
  return name;
}

Advice advise(int resolution, Priority priority, Budget budget) {
  const Recommendation mlp{ConnectorKind::TwoLayerMLP, std::nullopt};
  const std::vector<Recommendation> compressing{{ConnectorKind::ConvMap, 144},
                                                {ConnectorKind::AvgPool, 144}};
  switch (resolution) {
    case 224:
      return {{mlp}, "resolution-224", "using a two-layer MLP is advisable"};
    case 336: {
      // Fine-grained priority keeps the feature-preserving MLP; so does a
      // balanced priority when the budget allows its 576 tokens.
      const bool keep_mlp = priority == Priority::Fine ||
                            (priority == Priority::Balanced && budget == Budget::Ample);
      if (keep_mlp) return {{mlp}, "resolution-336-fine", "the two-layer MLP may be more suitable"};
      return {compressing, "resolution-336-coarse-reasoning",
              "the C-Abstractor and average pooling are recommended for their balance between "
              "efficiency and effectiveness"};
    }
    case 448:
      return {compressing, "resolution-448",
              "C-Abstractor and average pooling 144tks emerge as more optimal choices"};
  }
  int nearest = kSupportedResolutions[0];
  for (int r : kSupportedResolutions) {
    if (std::abs(r - resolution) < std::abs(nearest - resolution)) nearest = r;
  }
  throw ConfigError("unsupported resolution " + std::to_string(resolution) +
                    " (supported: 224, 336, 448; nearest is " + std::to_string(nearest) + ")");
}

}  // namespace vlconn
