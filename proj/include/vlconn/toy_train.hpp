#pragma once

#include "vlconn/connectors.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace vlconn {

// Which perception granularity a synthetic task probes.
enum class TaskKind { Coarse, Fine, Reasoning };

std::string_view to_string(TaskKind t);
TaskKind parse_task_kind(std::string_view name);

struct SyntheticSample {
  PatchGrid patches;
  int label = 0;
};

struct DatasetConfig {
  TaskKind task = TaskKind::Coarse;
  int samples = 256;
  GridShape grid{24, 24, 14};
  int d_v = 32;
  int classes = 4;
  double noise = 1.0;   // std of the per-coordinate Gaussian background
  double signal = 1.0;  // norm of each prototype / planted signal vector
  std::uint64_t seed = 0;
};

struct Dataset {
  DatasetConfig config;
  std::vector<SyntheticSample> samples;
};

// Coarse: every patch is prototype[label] plus noise.
// Fine: pure noise except one random patch replaced by signal[label].
// Reasoning: two distinct random patches replaced by signal[a] and signal[b],
// label = (a + b) mod classes.
// Prototype/signal vectors are orthogonal, so classes may not exceed d_v.
Dataset gen_dataset(const DatasetConfig& cfg);

// Same samples with labels permuted by a seeded shuffle.
Dataset shuffle_labels(const Dataset& data, std::uint64_t seed);

// The downstream stand-in for the LLM: one learned query cross-attends over
// the connector's tokens, and a linear layer maps the read-out to logits.
struct HeadConfig {
  double query_init_std = 0.02;
};

struct TrainHyper {
  double lr = 0.05;
  int steps = 300;
  int batch = 16;  // sampled with replacement; >= training size means full batch
  double momentum = 0.0;
  // Trailing fraction of the dataset held out for the final accuracy.
  double holdout = 0.25;
};

struct TrainRun {
  ConnectorSpec spec;
  TaskKind task = TaskKind::Coarse;
  std::uint64_t seed = 0;
  int steps = 0;
  std::vector<double> loss_curve;  // minibatch loss before each update
  double final_accuracy = 0.0;     // on the held-out split
  ConnectorParams params;
  ConnectorParams head;
};

// Plain SGD (optional heavy-ball momentum) on cross-entropy over connector and
// head parameters, initialised from `seed`. Throws DivergedError on a
// non-finite loss.
TrainRun train(const ConnectorSpec& spec, const Dataset& data, const HeadConfig& head,
               const TrainHyper& hyper, std::uint64_t seed);

// Held-out style accuracy of trained parameters on arbitrary samples.
double evaluate_accuracy(const ConnectorSpec& spec, const ConnectorParams& params,
                         const ConnectorParams& head, const std::vector<SyntheticSample>& samples);

// Mean minibatch loss over the `window` steps ending at 1-based step `checkpoint`.
double checkpoint_loss(const std::vector<double>& loss_curve, int checkpoint, int window);

struct CompareConfig {
  std::vector<ConnectorSpec> specs;
  std::vector<TaskKind> tasks;
  std::vector<std::uint64_t> seeds;
  DatasetConfig data;  // task and seed are overridden per run
  HeadConfig head;
  TrainHyper hyper;
  std::vector<int> checkpoints;
  int window = 10;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string error;
  double final_accuracy = 0.0;
  std::vector<double> checkpoint_losses;
};

struct CompareRow {
  std::string connector;  // label such as "avgpool-36"
  ConnectorSpec spec;
  TaskKind task = TaskKind::Coarse;
  std::vector<SeedOutcome> seeds;
  bool diverged = false;  // any seed diverged; means cover the remaining seeds
  double mean_accuracy = 0.0;
  std::vector<double> mean_checkpoint_losses;
};

struct CompareReport {
  std::vector<int> checkpoints;
  int window = 10;
  std::vector<CompareRow> rows;

  const CompareRow& row(std::string_view connector, TaskKind task) const;
};

std::string connector_label(const ConnectorSpec& spec);

// Trains every (task, spec, seed); the dataset for a (task, seed) pair is
// shared by all specs.
CompareReport compare(const CompareConfig& cfg);

void write_loss_curve_csv(std::ostream& os, const TrainRun& run);
void write_summary_csv(std::ostream& os, const std::vector<TrainRun>& runs);
void write_compare_markdown(std::ostream& os, const CompareReport& report);
void write_compare_csv(std::ostream& os, const CompareReport& report);

}  // namespace vlconn
