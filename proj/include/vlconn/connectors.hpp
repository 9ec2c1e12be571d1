#pragma once

#include "vlconn/autodiff.hpp"
#include "vlconn/geometry.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace vlconn {

enum class ConnectorKind { Linear, TwoLayerMLP, AvgPool, AttnPool, ConvMap };

// Canonical CLI name: linear, mlp, avgpool, attnpool, convmap.
std::string_view to_string(ConnectorKind kind);
// Accepts canonical names plus the common aliases (qformer, cabstractor, ...).
ConnectorKind parse_connector_kind(std::string_view name);
bool is_compressing(ConnectorKind kind);

// Visual features on a patch grid: features is P x d_v in raster order.
struct PatchGrid {
  GridShape grid;
  Matrix features;

  Index channels() const { return features.cols(); }
};

// Connector output: one row per visual token, width D.
struct TokenSeq {
  Matrix tokens;

  Index count() const { return tokens.rows(); }
  Index width() const { return tokens.cols(); }
};

struct ConnectorSpec {
  ConnectorKind kind = ConnectorKind::TwoLayerMLP;
  int d_v = 0;
  int dim = 0;                     // D, the LLM hidden size
  std::optional<int> tokens;       // Q; compressing kinds only, a perfect square
  std::optional<int> cross_dim;    // d_c; AttnPool only, defaults to d_v
  int kernel = 3;                  // ConvMap only, odd
  bool bias = true;
  std::uint64_t seed = 0;

  // Throws ConfigError on any violated invariant.
  void validate() const;
  int effective_cross_dim() const { return cross_dim.value_or(d_v); }
  // sqrt(Q) for compressing kinds.
  int token_side() const;
  // Output length for a grid with `patches` patches.
  int output_tokens(int patches) const;
};

struct ParamShape {
  std::string name;
  Shape shape;
};

// Names and shapes of every learnable tensor, in a fixed order.
std::vector<ParamShape> param_shapes(const ConnectorSpec& spec);

// Closed-form learnable scalar count.
std::int64_t param_count(const ConnectorSpec& spec);

class ConnectorParams {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
  };

  void add(std::string name, Tensor tensor);
  Tensor& at(std::string_view name);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor*> tensors();
  std::int64_t scalar_count() const;
  void zero_grad();

 private:
  std::vector<Entry> entries_;
};

// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, learnable
// queries ~ N(0, 0.02), all drawn from spec.seed.
ConnectorParams init_params(const ConnectorSpec& spec);

// Throws ConfigError if params do not carry exactly the tensors of spec.
void check_params(const ConnectorSpec& spec, const ConnectorParams& params);

// Graph leaves for every parameter tensor, keyed by name.
class BoundParams {
 public:
  BoundParams(Graph& g, ConnectorParams& params);
  // Binds copies of the values as constants; nothing is differentiated.
  static BoundParams frozen(Graph& g, const ConnectorParams& params);
  // Names from params, nodes from vars (same order as params.entries()).
  BoundParams(const ConnectorParams& params, std::span<const Var> vars);

  Var operator[](std::string_view name) const;
  bool contains(std::string_view name) const;

 private:
  BoundParams() = default;

  std::map<std::string, Var, std::less<>> vars_;
};

// Differentiable forward passes, features is a P x d_v graph node.
Var forward_linear(const BoundParams& p, Var features);
Var forward_mlp(const BoundParams& p, Var features);
Var forward_avgpool(const ConnectorSpec& spec, const BoundParams& p, Var features,
                    const GridShape& grid);
Var forward_attnpool(const ConnectorSpec& spec, const BoundParams& p, Var features);
Var forward_convmap(const ConnectorSpec& spec, const BoundParams& p, Var features,
                    const GridShape& grid);

Var connector_forward(const ConnectorSpec& spec, const BoundParams& p, Var features,
                      const GridShape& grid);

// Value-only convenience wrapper around connector_forward.
TokenSeq forward(const ConnectorSpec& spec, ConnectorParams& params, const PatchGrid& input);

// End-to-end finite-difference check of one connector on a random grid:
// loss = sum(tokens .* R), differentiated with respect to every parameter and
// the input features. Features, R and the parameters are drawn from `seed`.
double connector_grad_check(const ConnectorSpec& spec, const GridShape& grid, std::uint64_t seed,
                            double eps = 1e-5);

}  // namespace vlconn
