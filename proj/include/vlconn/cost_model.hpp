#pragma once

#include "vlconn/connectors.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace vlconn {

using FlopCount = std::int64_t;

// Expected text length per sample for the two training stages, fitted by
// calibrate_text_tokens() against the measured time reductions at 336 and
// 448 and then frozen. Resolution 224 is outside the model's validity range:
// fixed per-step overheads dominate there and a FLOP-only model under-predicts.
inline constexpr int kStage1TextTokens = 83;
inline constexpr int kStage2TextTokens = 822;

inline constexpr int kDefaultLlmHidden = 4096;
inline constexpr int kDefaultLlmLayers = 32;
inline constexpr int kDefaultEncoderChannels = 1024;

int default_text_tokens(int stage);

struct PipelineConfig {
  ConnectorSpec connector;
  int resolution = 336;
  int patch_size = 14;
  int text_tokens = kStage1TextTokens;
  int llm_hidden = kDefaultLlmHidden;
  int llm_layers = kDefaultLlmLayers;
  // Per-sample cost shared by every connector (encoder, data loading), in FLOPs.
  double overhead_flops = 0.0;

  void validate() const;
};

struct CostReport {
  FlopCount connector_flops = 0;
  FlopCount llm_flops = 0;
  FlopCount total_flops = 0;
  std::int64_t params = 0;
  int visual_tokens = 0;
};

struct FlopTerm {
  std::string name;
  FlopCount flops;
};

// Named components of connector_flops (projections, pooling adds, attention).
std::vector<FlopTerm> connector_flop_terms(const ConnectorSpec& spec, int patches);
FlopCount connector_flops(const ConnectorSpec& spec, int patches);

// L * (4 * N^2 * D + 12 * N * D^2) with N = visual_tokens + text_tokens.
FlopCount llm_prefill_flops(int visual_tokens, const PipelineConfig& cfg);

CostReport cost_report(const PipelineConfig& cfg);

// 100 * (1 - cost(compressed) / cost(base)), overhead added to both.
double predict_time_reduction(const PipelineConfig& base, const PipelineConfig& compressed);

// Integer text length in [0, max_tokens] minimising the squared error between
// predicted and target reductions of `compressed` relative to a two-layer MLP,
// over the listed (resolution, target percent) pairs.
struct ReductionTarget {
  int resolution;
  double percent;
};
int calibrate_text_tokens(const ConnectorSpec& compressed, const std::vector<ReductionTarget>& targets,
                          int max_tokens = 4000);

// Full-scale connector dimensions: d_v = 1024 encoder channels into a D = 4096 LLM.
ConnectorSpec default_cost_spec(ConnectorKind kind, int tokens = 144);

}  // namespace vlconn
