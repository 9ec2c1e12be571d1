#include "vlconn/cost_model.hpp"

#include "vlconn/errors.hpp"

#include <limits>

namespace vlconn {

int default_text_tokens(int stage) {
  switch (stage) {
    case 1: return kStage1TextTokens;
    case 2: return kStage2TextTokens;
  }
  throw ConfigError("stage must be 1 (pre-training) or 2 (fine-tuning), got " +
                    std::to_string(stage));
}

void PipelineConfig::validate() const {
  connector.validate();
  if (text_tokens < 0) throw ConfigError("text_tokens must be >= 0");
  if (llm_hidden <= 0 || llm_layers <= 0) throw ConfigError("LLM dimensions must be positive");
  if (!(overhead_flops >= 0.0)) throw ConfigError("overhead must be >= 0");
  if (connector.dim != llm_hidden) {
    throw ConfigError("connector output width " + std::to_string(connector.dim) +
                      " differs from LLM hidden size " + std::to_string(llm_hidden));
  }
}

std::vector<FlopTerm> connector_flop_terms(const ConnectorSpec& spec, int patches) {
  spec.validate();
  const FlopCount p = patches, dv = spec.d_v, dim = spec.dim;
  const FlopCount q = is_compressing(spec.kind) ? *spec.tokens : p;
  const auto mlp = [dim](FlopCount rows, FlopCount in) { return 2 * rows * (in * dim + dim * dim); };
  switch (spec.kind) {
    case ConnectorKind::Linear:
      return {{"projection", 2 * p * dv * dim}};
    case ConnectorKind::TwoLayerMLP:
      return {{"mlp", mlp(p, dv)}};
    case ConnectorKind::AvgPool:
      return {{"pooling", p * dv}, {"mlp", mlp(q, dv)}};
    case ConnectorKind::AttnPool: {
      const FlopCount dc = spec.effective_cross_dim();
      return {{"key_value", 2 * p * dv * dc * 2},
              {"scores", 2 * q * p * dc},
              {"weighted_sum", 2 * q * p * dc},
              {"mlp", mlp(q, dc)}};
    }
    case ConnectorKind::ConvMap: {
      const FlopCount k2 = static_cast<FlopCount>(spec.kernel) * spec.kernel;
      return {{"conv_pre", 2 * p * k2 * dv * dv},
              {"pooling", p * dv},
              {"conv_post", 2 * q * k2 * dv * dv},
              {"projection", 2 * q * dv * dim}};
    }
  }
  return {};
}

FlopCount connector_flops(const ConnectorSpec& spec, int patches) {
  FlopCount total = 0;
  for (const auto& t : connector_flop_terms(spec, patches)) total += t.flops;
  return total;
}

FlopCount llm_prefill_flops(int visual_tokens, const PipelineConfig& cfg) {
  if (visual_tokens < 0) throw ConfigError("visual token count must be >= 0");
  const FlopCount n = static_cast<FlopCount>(visual_tokens) + cfg.text_tokens;
  const FlopCount d = cfg.llm_hidden;
  return cfg.llm_layers * (4 * n * n * d + 12 * n * d * d);
}

CostReport cost_report(const PipelineConfig& cfg) {
  cfg.validate();
  const GridShape grid = patch_count(cfg.resolution, cfg.patch_size);
  CostReport r;
  r.visual_tokens = cfg.connector.output_tokens(grid.patch_count());
  r.connector_flops = connector_flops(cfg.connector, grid.patch_count());
  r.llm_flops = llm_prefill_flops(r.visual_tokens, cfg);
  r.total_flops = r.connector_flops + r.llm_flops;
  r.params = param_count(cfg.connector);
  return r;
}

double predict_time_reduction(const PipelineConfig& base, const PipelineConfig& compressed) {
  if (base.resolution != compressed.resolution || base.patch_size != compressed.patch_size) {
    throw ConfigError("time reduction compares connectors at one resolution, got " +
                      std::to_string(base.resolution) + " vs " +
                      std::to_string(compressed.resolution));
  }
  if (base.llm_hidden != compressed.llm_hidden || base.llm_layers != compressed.llm_layers) {
    throw ConfigError("time reduction requires identical LLM dimensions");
  }
  if (base.overhead_flops != compressed.overhead_flops) {
    throw ConfigError("time reduction requires the same per-sample overhead");
  }
  const double b = static_cast<double>(cost_report(base).total_flops) + base.overhead_flops;
  const double c =
      static_cast<double>(cost_report(compressed).total_flops) + compressed.overhead_flops;
  return 100.0 * (1.0 - c / b);
}

int calibrate_text_tokens(const ConnectorSpec& compressed, const std::vector<ReductionTarget>& targets,
                          int max_tokens) {
  if (targets.empty()) throw ConfigError("calibration needs at least one target");
  int best = 0;
  double best_err = std::numeric_limits<double>::infinity();
  for (int t = 0; t <= max_tokens; ++t) {
    double err = 0.0;
    for (const auto& target : targets) {
      PipelineConfig base{default_cost_spec(ConnectorKind::TwoLayerMLP), target.resolution, 14, t};
      PipelineConfig comp{compressed, target.resolution, 14, t};
      const double d = predict_time_reduction(base, comp) - target.percent;
      err += d * d;
    }
    if (err < best_err) {
      best_err = err;
      best = t;
    }
  }
  return best;
}

ConnectorSpec default_cost_spec(ConnectorKind kind, int tokens) {
  ConnectorSpec s;
  s.kind = kind;
  s.d_v = kDefaultEncoderChannels;
  s.dim = kDefaultLlmHidden;
  if (is_compressing(kind)) s.tokens = tokens;
  return s;
}

}  // namespace vlconn
