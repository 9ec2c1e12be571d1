#pragma once

#include "vlconn/connectors.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vlconn {

enum class Granularity { Coarse, Fine, Reasoning };

inline constexpr Granularity kAllGranularities[] = {Granularity::Coarse, Granularity::Fine,
                                                    Granularity::Reasoning};

std::string_view to_string(Granularity g);
Granularity parse_granularity(std::string_view name);

// Lower-cased, trimmed, internal whitespace collapsed to single spaces.
std::string normalize_name(std::string_view name);

struct TaxonomyEntry {
  std::string benchmark;
  std::string sub_task;
  Granularity granularity;
  bool builtin = false;
};

// (benchmark, sub-task) -> perception granularity. The built-in table covers
// MMBench, MME and SEED-Bench under one spatial-scope criterion: coarse means
// image-level attributes, fine means object-level detail.
class TaskTaxonomy {
 public:
  static const TaskTaxonomy& builtin();

  // Built-ins plus user entries; redefining a built-in row differently throws.
  TaskTaxonomy with_entries(const std::vector<TaxonomyEntry>& extra) const;

  // Throws LookupError for unknown benchmarks or sub-tasks, naming the
  // closest known sub-tasks.
  Granularity classify(std::string_view benchmark, std::string_view sub_task) const;
  std::optional<Granularity> find(std::string_view benchmark, std::string_view sub_task) const;

  // Canonical (benchmark, sub-task) names for a lookup, resolving aliases.
  std::pair<std::string, std::string> canonical(std::string_view benchmark,
                                                std::string_view sub_task) const;

  // Canonical rows only (aliases excluded), in insertion order.
  const std::vector<TaxonomyEntry>& entries() const { return entries_; }

 private:
  void add(TaxonomyEntry entry);
  void alias(std::string_view benchmark, std::string_view alias, std::string_view target);
  std::string benchmark_key(std::string_view benchmark) const;

  std::vector<TaxonomyEntry> entries_;
  std::map<std::string, std::size_t> index_;        // "bench|sub" -> entries_ position
  std::map<std::string, std::string> bench_alias_;  // normalized alias -> normalized canonical
};

struct SubTaskResult {
  std::string benchmark;
  std::string sub_task;
  long long correct = 0;
  long long total = 0;

  double accuracy() const { return static_cast<double>(correct) / static_cast<double>(total); }
};

// CSV (header required) or JSON-lines records with fields benchmark,
// sub_task, correct, total.
std::vector<SubTaskResult> read_results(std::istream& is);
std::vector<SubTaskResult> read_results(const std::filesystem::path& path);
// CSV with fields benchmark, sub_task, granularity.
std::vector<TaxonomyEntry> read_taxonomy_overrides(std::istream& is);
std::vector<TaxonomyEntry> read_taxonomy_overrides(const std::filesystem::path& path);

enum class AggregationMode { Macro, Micro };
std::string_view to_string(AggregationMode m);
AggregationMode parse_aggregation_mode(std::string_view name);

struct BucketScore {
  std::optional<double> score;  // absent when no sub-task falls in the bucket
  int sub_tasks = 0;
  long long correct = 0;
  long long total = 0;
};

struct ScoredSubTask {
  std::string benchmark;
  std::string sub_task;
  Granularity granularity;
  long long correct;
  long long total;
  double accuracy;
};

struct AggregateReport {
  AggregationMode mode = AggregationMode::Macro;
  // "all" is the pooled view across benchmarks.
  std::map<std::string, std::map<Granularity, BucketScore>> views;
  std::vector<ScoredSubTask> sub_tasks;  // merged, sorted by (benchmark, sub-task)

  const BucketScore& bucket(std::string_view view, Granularity g) const;
};

// Rows sharing a (benchmark, sub-task) are merged before scoring. Macro is the
// unweighted mean of sub-task accuracies; micro is sum(correct) / sum(total).
AggregateReport aggregate(const std::vector<SubTaskResult>& results, AggregationMode mode,
                          const TaskTaxonomy& taxonomy = TaskTaxonomy::builtin());

void write_scores_csv(std::ostream& os, const AggregateReport& report);
void write_radar_csv(std::ostream& os, const AggregateReport& report);
void write_score_markdown(std::ostream& os, const AggregateReport& report);

// ---- connector-selection advisor ------------------------------------------

enum class Priority { Coarse, Fine, Reasoning, Balanced };
enum class Budget { Ample, Limited };

Priority parse_priority(std::string_view name);
Budget parse_budget(std::string_view name);
std::string_view to_string(Priority p);
std::string_view to_string(Budget b);

struct Recommendation {
  ConnectorKind kind;
  std::optional<int> tokens;

  std::string label() const;
  bool operator==(const Recommendation&) const = default;
};

struct Advice {
  std::vector<Recommendation> recommended;  // ties are kept, never broken
  std::string rule;                         // e.g. "resolution-448"
  std::string rationale;                    // the quoted selection rule
};

inline constexpr int kSupportedResolutions[] = {224, 336, 448};

Advice advise(int resolution, Priority priority, Budget budget);

}  // namespace vlconn
