#include "vlconn/toy_train.hpp"

#include "vlconn/errors.hpp"
#include "vlconn/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace vlconn {

std::string_view to_string(TaskKind t) {
  switch (t) {
    case TaskKind::Coarse: return "coarse";
    case TaskKind::Fine: return "fine";
    case TaskKind::Reasoning: return "reasoning";
  }
  return "unknown";
}

TaskKind parse_task_kind(std::string_view name) {
  if (name == "coarse") return TaskKind::Coarse;
  if (name == "fine") return TaskKind::Fine;
  if (name == "reasoning") return TaskKind::Reasoning;
  throw ConfigError("unknown task '" + std::string(name) + "' (expected coarse, fine or reasoning)");
}

namespace {

// classes orthonormal directions in R^d_v, scaled to `norm`, one per row.
Matrix class_vectors(Rng& rng, int d_v, int classes, double norm) {
  Matrix gauss(d_v, classes);
  for (Index i = 0; i < gauss.size(); ++i) gauss.data()[i] = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d_v, classes);
  return q.transpose() * norm;
}

void validate(const DatasetConfig& cfg) {
  if (cfg.samples <= 0) throw ConfigError("dataset needs at least one sample");
  if (cfg.classes <= 0) throw ConfigError("dataset needs at least one class");
  if (cfg.d_v <= 0) throw ConfigError("d_v must be positive");
  if (cfg.grid.height <= 0 || cfg.grid.width <= 0) throw ConfigError("grid must be non-empty");
  if (cfg.classes > cfg.d_v) {
    throw ConfigError("cannot represent " + std::to_string(cfg.classes) +
                      " orthogonal class signals in d_v=" + std::to_string(cfg.d_v));
  }
  if (cfg.task == TaskKind::Reasoning && cfg.grid.patch_count() < 2) {
    throw ConfigError("reasoning task plants two signals and needs at least two patches");
  }
  if (!(cfg.noise >= 0.0) || !(cfg.signal >= 0.0)) {
    throw ConfigError("noise and signal scales must be non-negative");
  }
}

}  // namespace

Dataset gen_dataset(const DatasetConfig& cfg) {
  validate(cfg);
  Rng rng(cfg.seed);
  const Matrix classes = class_vectors(rng, cfg.d_v, cfg.classes, cfg.signal);
  const int patches = cfg.grid.patch_count();
  Dataset data{cfg, {}};
  data.samples.reserve(static_cast<std::size_t>(cfg.samples));
  for (int s = 0; s < cfg.samples; ++s) {
    SyntheticSample sample;
    sample.patches.grid = cfg.grid;
    Matrix& f = sample.patches.features;
    f.resize(patches, cfg.d_v);
    for (Index i = 0; i < f.size(); ++i) f.data()[i] = cfg.noise * rng.normal();
    const auto k = static_cast<std::uint64_t>(cfg.classes);
    switch (cfg.task) {
      case TaskKind::Coarse: {
        sample.label = static_cast<int>(rng.below(k));
        f.rowwise() += classes.row(sample.label);
        break;
      }
      case TaskKind::Fine: {
        sample.label = static_cast<int>(rng.below(k));
        const auto at = static_cast<Index>(rng.below(static_cast<std::uint64_t>(patches)));
        f.row(at) = classes.row(sample.label);
        break;
      }
      case TaskKind::Reasoning: {
        const int a = static_cast<int>(rng.below(k));
        const int b = static_cast<int>(rng.below(k));
        const auto pa = static_cast<Index>(rng.below(static_cast<std::uint64_t>(patches)));
        auto pb = static_cast<Index>(rng.below(static_cast<std::uint64_t>(patches - 1)));
        if (pb >= pa) ++pb;
        f.row(pa) = classes.row(a);
        f.row(pb) = classes.row(b);
        sample.label = (a + b) % cfg.classes;
        break;
      }
    }
    data.samples.push_back(std::move(sample));
  }
  return data;
}

Dataset shuffle_labels(const Dataset& data, std::uint64_t seed) {
  Dataset out = data;
  Rng rng(seed);
  for (std::size_t i = out.samples.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i));
    std::swap(out.samples[i - 1].label, out.samples[j].label);
  }
  return out;
}

namespace {

constexpr std::uint64_t kHeadStream = 0x68656164ULL;   // "head"
constexpr std::uint64_t kBatchStream = 0x62617463ULL;  // "batc"

ConnectorParams init_head(int dim, int classes, const HeadConfig& cfg, std::uint64_t seed) {
  Rng rng(seed ^ kHeadStream);
  ConnectorParams head;
  Matrix query(1, dim);
  for (Index i = 0; i < query.size(); ++i) query.data()[i] = rng.normal(0.0, cfg.query_init_std);
  Matrix weight(dim, classes);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (Index i = 0; i < weight.size(); ++i) weight.data()[i] = rng.uniform(-bound, bound);
  head.add("head.query", Tensor(std::move(query), true));
  head.add("head.out.weight", Tensor(std::move(weight), true));
  head.add("head.out.bias", Tensor(Matrix::Zero(1, classes), true));
  return head;
}

// One learned query attends over the tokens; returns the 1 x D read-out.
Var read_out(const BoundParams& head, Var tokens) {
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(tokens.cols()));
  Var scores = scale(matmul(head["head.query"], transpose(tokens)), inv_sqrt_d);
  return matmul(softmax_rows(scores), tokens);
}

Var logits_for(const ConnectorSpec& spec, const BoundParams& conn, const BoundParams& head,
               Graph& g, const std::vector<const SyntheticSample*>& batch) {
  std::vector<Var> rows;
  rows.reserve(batch.size());
  for (const SyntheticSample* s : batch) {
    Var tokens = connector_forward(spec, conn, g.constant(s->patches.features), s->patches.grid);
    rows.push_back(read_out(head, tokens));
  }
  Var pooled = concat_rows(rows);
  return add_row(matmul(pooled, head["head.out.weight"]), head["head.out.bias"]);
}

void sgd_step(ConnectorParams& params, std::vector<Matrix>& velocity, double lr, double momentum) {
  auto& entries = params.entries();
  if (velocity.empty()) {
    for (const auto& e : entries) velocity.push_back(Matrix::Zero(e.tensor.value().rows(), e.tensor.value().cols()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor& t = entries[i].tensor;
    if (!t.has_grad()) continue;
    velocity[i] = momentum * velocity[i] + t.grad();
    t.mutable_value() -= lr * velocity[i];
  }
  params.zero_grad();
}

}  // namespace

TrainRun train(const ConnectorSpec& spec_in, const Dataset& data, const HeadConfig& head_cfg,
               const TrainHyper& hyper, std::uint64_t seed) {
  if (data.samples.empty()) throw ConfigError("train: dataset is empty");
  if (hyper.steps < 0 || hyper.batch <= 0) throw ConfigError("train: steps >= 0 and batch > 0 required");
  if (!(hyper.lr >= 0.0) || !(hyper.momentum >= 0.0 && hyper.momentum < 1.0)) {
    throw ConfigError("train: lr >= 0 and momentum in [0, 1) required");
  }
  if (!(hyper.holdout >= 0.0 && hyper.holdout < 1.0)) {
    throw ConfigError("train: holdout fraction must lie in [0, 1)");
  }
  ConnectorSpec spec = spec_in;
  spec.seed = seed;
  spec.validate();
  if (spec.d_v != data.config.d_v) {
    throw DimensionError("train: connector d_v=" + std::to_string(spec.d_v) +
                         " but dataset features have " + std::to_string(data.config.d_v) + " channels");
  }

  const std::size_t n = data.samples.size();
  std::size_t n_eval = static_cast<std::size_t>(std::floor(hyper.holdout * static_cast<double>(n)));
  if (n_eval >= n) n_eval = n - 1;
  const std::size_t n_train = n - n_eval;

  TrainRun run;
  run.spec = spec;
  run.task = data.config.task;
  run.seed = seed;
  run.steps = hyper.steps;
  run.params = init_params(spec);
  run.head = init_head(spec.dim, data.config.classes, head_cfg, seed);

  Rng batch_rng(seed ^ kBatchStream);
  std::vector<Matrix> v_conn, v_head;
  const bool full_batch = static_cast<std::size_t>(hyper.batch) >= n_train;
  const std::size_t batch_size = full_batch ? n_train : static_cast<std::size_t>(hyper.batch);
  std::vector<int> labels(batch_size);
  std::vector<const SyntheticSample*> batch(batch_size);
  run.loss_curve.reserve(static_cast<std::size_t>(hyper.steps));
  for (int step = 1; step <= hyper.steps; ++step) {
    for (std::size_t b = 0; b < batch_size; ++b) {
      const auto idx = full_batch ? b : static_cast<std::size_t>(batch_rng.below(n_train));
      batch[b] = &data.samples[idx];
      labels[b] = data.samples[idx].label;
    }
    double loss_value = 0.0;
    try {
      Graph g;
      BoundParams conn(g, run.params);
      BoundParams head(g, run.head);
      Var loss = cross_entropy(logits_for(spec, conn, head, g, batch), labels);
      loss_value = loss.value()(0, 0);
      g.backward(loss);
    } catch (const NumericError& e) {
      throw DivergedError("training diverged at step " + std::to_string(step) + ": " + e.what(), step);
    }
    if (!std::isfinite(loss_value)) {
      throw DivergedError("training diverged at step " + std::to_string(step) + ": loss is not finite", step);
    }
    run.loss_curve.push_back(loss_value);
    sgd_step(run.params, v_conn, hyper.lr, hyper.momentum);
    sgd_step(run.head, v_head, hyper.lr, hyper.momentum);
    for (const auto* ps : {&run.params, &run.head}) {
      for (const auto& e : ps->entries()) {
        if (!e.tensor.value().allFinite()) {
          throw DivergedError("training diverged at step " + std::to_string(step) +
                              ": parameter '" + e.name + "' is not finite", step);
        }
      }
    }
  }

  const std::vector<SyntheticSample> held_out(data.samples.begin() + static_cast<std::ptrdiff_t>(n_train),
                                              data.samples.end());
  run.final_accuracy = held_out.empty() ? 0.0 : evaluate_accuracy(spec, run.params, run.head, held_out);
  return run;
}

double evaluate_accuracy(const ConnectorSpec& spec, const ConnectorParams& params,
                         const ConnectorParams& head, const std::vector<SyntheticSample>& samples) {
  if (samples.empty()) throw ConfigError("evaluate_accuracy: no samples");
  int correct = 0;
  for (const auto& s : samples) {
    Graph g;
    BoundParams conn = BoundParams::frozen(g, params);
    BoundParams h = BoundParams::frozen(g, head);
    const Matrix logits = logits_for(spec, conn, h, g, {&s}).value();
    Index arg = 0;
    logits.row(0).maxCoeff(&arg);
    if (arg == s.label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

double checkpoint_loss(const std::vector<double>& loss_curve, int checkpoint, int window) {
  if (checkpoint < 1 || checkpoint > static_cast<int>(loss_curve.size())) {
    throw ConfigError("checkpoint " + std::to_string(checkpoint) + " outside the " +
                      std::to_string(loss_curve.size()) + "-step loss curve");
  }
  if (window < 1) throw ConfigError("checkpoint window must be >= 1");
  const int first = std::max(1, checkpoint - window + 1);
  double s = 0.0;
  for (int i = first; i <= checkpoint; ++i) s += loss_curve[static_cast<std::size_t>(i - 1)];
  return s / static_cast<double>(checkpoint - first + 1);
}

std::string connector_label(const ConnectorSpec& spec) {
  std::string label(to_string(spec.kind));
  if (spec.tokens) label += "-" + std::to_string(*spec.tokens);
  return label;
}

const CompareRow& CompareReport::row(std::string_view connector, TaskKind task) const {
  for (const auto& r : rows) {
    if (r.connector == connector && r.task == task) return r;
  }
  throw LookupError("no comparison row for " + std::string(connector) + " on " +
                    std::string(to_string(task)));
}

CompareReport compare(const CompareConfig& cfg) {
  if (cfg.specs.empty()) throw ConfigError("compare needs at least one connector spec");
  if (cfg.tasks.empty() || cfg.seeds.empty()) throw ConfigError("compare needs tasks and seeds");
  for (int c : cfg.checkpoints) {
    if (c < 1 || c > cfg.hyper.steps) {
      throw ConfigError("checkpoint " + std::to_string(c) + " outside [1, " +
                        std::to_string(cfg.hyper.steps) + "]");
    }
  }
  CompareReport report;
  report.checkpoints = cfg.checkpoints;
  report.window = cfg.window;
  for (TaskKind task : cfg.tasks) {
    std::vector<CompareRow> rows;
    for (const auto& spec : cfg.specs) {
      CompareRow r;
      r.connector = connector_label(spec);
      r.spec = spec;
      r.task = task;
      rows.push_back(std::move(r));
    }
    for (std::uint64_t seed : cfg.seeds) {
      DatasetConfig dc = cfg.data;
      dc.task = task;
      dc.seed = seed;
      const Dataset data = gen_dataset(dc);
      for (auto& row : rows) {
        SeedOutcome out;
        out.seed = seed;
        try {
          const TrainRun run = train(row.spec, data, cfg.head, cfg.hyper, seed);
          out.final_accuracy = run.final_accuracy;
          for (int c : cfg.checkpoints) out.checkpoint_losses.push_back(checkpoint_loss(run.loss_curve, c, cfg.window));
        } catch (const DivergedError& e) {
          out.diverged = true;
          out.error = e.what();
        }
        row.seeds.push_back(std::move(out));
      }
    }
    for (auto& row : rows) {
      row.mean_checkpoint_losses.assign(cfg.checkpoints.size(), 0.0);
      int ok = 0;
      for (const auto& s : row.seeds) {
        if (s.diverged) {
          row.diverged = true;
          continue;
        }
        ++ok;
        row.mean_accuracy += s.final_accuracy;
        for (std::size_t c = 0; c < s.checkpoint_losses.size(); ++c) row.mean_checkpoint_losses[c] += s.checkpoint_losses[c];
      }
      if (ok > 0) {
        row.mean_accuracy /= ok;
        for (double& l : row.mean_checkpoint_losses) l /= ok;
      } else {
        row.mean_accuracy = std::nan("");
        for (double& l : row.mean_checkpoint_losses) l = std::nan("");
      }
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace {

std::string num(double v, int precision = 17) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

}  // namespace

void write_loss_curve_csv(std::ostream& os, const TrainRun& run) {
  os << "step,loss\n";
  for (std::size_t i = 0; i < run.loss_curve.size(); ++i) os << (i + 1) << "," << num(run.loss_curve[i]) << "\n";
}

void write_summary_csv(std::ostream& os, const std::vector<TrainRun>& runs) {
  os << "spec,task,seed,final_accuracy\n";
  for (const auto& r : runs) {
    os << connector_label(r.spec) << "," << to_string(r.task) << "," << r.seed << ","
       << num(r.final_accuracy) << "\n";
  }
}

void write_compare_csv(std::ostream& os, const CompareReport& report) {
  os << "task,connector,seed,diverged,final_accuracy";
  for (int c : report.checkpoints) os << ",loss_at_" << c;
  os << "\n";
  for (const auto& row : report.rows) {
    for (const auto& s : row.seeds) {
      os << to_string(row.task) << "," << row.connector << "," << s.seed << "," << (s.diverged ? 1 : 0)
         << "," << (s.diverged ? std::string("nan") : num(s.final_accuracy));
      for (std::size_t c = 0; c < report.checkpoints.size(); ++c) {
        os << "," << (s.diverged ? std::string("nan") : num(s.checkpoint_losses[c]));
      }
      os << "\n";
    }
  }
}

void write_compare_markdown(std::ostream& os, const CompareReport& report) {
  os << "# Connector comparison\n\n";
  os << "Checkpoint loss is the mean minibatch loss over the " << report.window
     << " steps ending at the checkpoint, averaged over seeds.\n";
  std::vector<TaskKind> tasks;
  for (const auto& r : report.rows) {
    if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
  }
  for (TaskKind task : tasks) {
    std::vector<const CompareRow*> rows;
    for (const auto& r : report.rows) {
      if (r.task == task) rows.push_back(&r);
    }
    os << "\n## Task: " << to_string(task) << "\n\n| connector | params | seeds | mean accuracy |";
    for (int c : report.checkpoints) os << " loss@" << c << " |";
    os << " flags |\n|---|---|---|---|";
    for (std::size_t c = 0; c < report.checkpoints.size(); ++c) os << "---|";
    os << "---|\n";
    for (const CompareRow* r : rows) {
      os << "| " << r->connector << " | " << param_count(r->spec) << " | " << r->seeds.size() << " | "
         << fixed(r->mean_accuracy, 4) << " |";
      for (double l : r->mean_checkpoint_losses) os << " " << fixed(l, 4) << " |";
      os << " " << (r->diverged ? "DIVERGED" : "") << " |\n";
    }
    auto ranked = rows;
    if (!report.checkpoints.empty()) {
      std::stable_sort(ranked.begin(), ranked.end(), [](const CompareRow* a, const CompareRow* b) {
        return a->mean_checkpoint_losses.back() < b->mean_checkpoint_losses.back();
      });
      os << "\nLoss ranking at step " << report.checkpoints.back() << " (lowest first): ";
      for (std::size_t i = 0; i < ranked.size(); ++i) os << (i ? " < " : "") << ranked[i]->connector;
      os << "\n";
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const CompareRow* a, const CompareRow* b) {
      return a->mean_accuracy > b->mean_accuracy;
    });
    os << "\nAccuracy ranking (highest first): ";
    for (std::size_t i = 0; i < ranked.size(); ++i) os << (i ? " > " : "") << ranked[i]->connector;
    os << "\n";
  }
}

}  // namespace vlconn
