#include "vlconn/connectors.hpp"

#include "vlconn/errors.hpp"
#include "vlconn/rng.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>

namespace vlconn {

namespace {

struct KindName {
  std::string_view name;
  ConnectorKind kind;
};

constexpr std::array<KindName, 17> kKindNames{{
    {"linear", ConnectorKind::Linear},
    {"mlp", ConnectorKind::TwoLayerMLP},
    {"two-layer-mlp", ConnectorKind::TwoLayerMLP},
    {"twolayermlp", ConnectorKind::TwoLayerMLP},
    {"avgpool", ConnectorKind::AvgPool},
    {"average-pooling", ConnectorKind::AvgPool},
    {"avg-pool", ConnectorKind::AvgPool},
    {"attnpool", ConnectorKind::AttnPool},
    {"attention-pooling", ConnectorKind::AttnPool},
    {"qformer", ConnectorKind::AttnPool},
    {"q-former", ConnectorKind::AttnPool},
    {"convmap", ConnectorKind::ConvMap},
    {"conv-map", ConnectorKind::ConvMap},
    {"cabstractor", ConnectorKind::ConvMap},
    {"c-abstractor", ConnectorKind::ConvMap},
    {"convolutional-mapping", ConnectorKind::ConvMap},
    {"resampler", ConnectorKind::AttnPool},
}};

bool is_perfect_square(int n) {
  if (n < 0) return false;
  const int r = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
  return r * r == n;
}

}  // namespace

std::string_view to_string(ConnectorKind kind) {
  switch (kind) {
    case ConnectorKind::Linear: return "linear";
    case ConnectorKind::TwoLayerMLP: return "mlp";
    case ConnectorKind::AvgPool: return "avgpool";
    case ConnectorKind::AttnPool: return "attnpool";
    case ConnectorKind::ConvMap: return "convmap";
  }
  return "unknown";
}

ConnectorKind parse_connector_kind(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(lower.begin(), lower.end(), '_', '-');
  for (const auto& entry : kKindNames) {
    if (entry.name == lower) return entry.kind;
  }
  throw ConfigError("unknown connector '" + std::string(name) +
                    "' (expected linear, mlp, avgpool, attnpool/qformer, convmap/cabstractor)");
}

bool is_compressing(ConnectorKind kind) {
  return kind == ConnectorKind::AvgPool || kind == ConnectorKind::AttnPool ||
         kind == ConnectorKind::ConvMap;
}

void ConnectorSpec::validate() const {
  const std::string name(to_string(kind));
  if (d_v <= 0 || dim <= 0) {
    throw ConfigError(name + ": d_v and D must be positive (got d_v=" + std::to_string(d_v) +
                      ", D=" + std::to_string(dim) + ")");
  }
  if (is_compressing(kind)) {
    if (!tokens) throw ConfigError(name + ": compressing connectors require a token count Q");
    if (*tokens <= 0 || !is_perfect_square(*tokens)) {
      throw ConfigError(name + ": Q must be a positive perfect square, got " +
                        std::to_string(*tokens));
    }
  } else if (tokens) {
    throw ConfigError(name + ": feature-preserving connectors keep one token per patch; Q must be unset");
  }
  if (cross_dim && kind != ConnectorKind::AttnPool) {
    throw ConfigError(name + ": d_c applies to attnpool only");
  }
  if (cross_dim && *cross_dim <= 0) throw ConfigError(name + ": d_c must be positive");
  if (kind == ConnectorKind::ConvMap && (kernel <= 0 || kernel % 2 == 0)) {
    throw ConfigError(name + ": kernel must be odd and positive, got " + std::to_string(kernel));
  }
}

int ConnectorSpec::token_side() const {
  if (!tokens) throw ConfigError(std::string(to_string(kind)) + " has no token count");
  return static_cast<int>(std::lround(std::sqrt(static_cast<double>(*tokens))));
}

int ConnectorSpec::output_tokens(int patches) const {
  return is_compressing(kind) ? *tokens : patches;
}

namespace {

void mlp_shapes(std::vector<ParamShape>& out, Index in, Index dim, bool bias) {
  out.push_back({"mlp.fc1.weight", {in, dim}});
  if (bias) out.push_back({"mlp.fc1.bias", {1, dim}});
  out.push_back({"mlp.fc2.weight", {dim, dim}});
  if (bias) out.push_back({"mlp.fc2.bias", {1, dim}});
}

std::int64_t mlp_count(std::int64_t in, std::int64_t dim, std::int64_t b) {
  return in * dim + b * dim + dim * dim + b * dim;
}

}  // namespace

std::vector<ParamShape> param_shapes(const ConnectorSpec& spec) {
  spec.validate();
  std::vector<ParamShape> out;
  const Index dv = spec.d_v, dim = spec.dim;
  switch (spec.kind) {
    case ConnectorKind::Linear:
      out.push_back({"proj.weight", {dv, dim}});
      if (spec.bias) out.push_back({"proj.bias", {1, dim}});
      break;
    case ConnectorKind::TwoLayerMLP:
    case ConnectorKind::AvgPool:
      mlp_shapes(out, dv, dim, spec.bias);
      break;
    case ConnectorKind::AttnPool: {
      const Index dc = spec.effective_cross_dim();
      out.push_back({"attn.queries", {*spec.tokens, dc}});
      out.push_back({"attn.key.weight", {dv, dc}});
      if (spec.bias) out.push_back({"attn.key.bias", {1, dc}});
      out.push_back({"attn.value.weight", {dv, dc}});
      if (spec.bias) out.push_back({"attn.value.bias", {1, dc}});
      mlp_shapes(out, dc, dim, spec.bias);
      break;
    }
    case ConnectorKind::ConvMap: {
      const Index k2 = static_cast<Index>(spec.kernel) * spec.kernel;
      out.push_back({"conv_pre.weight", {k2 * dv, dv}});
      if (spec.bias) out.push_back({"conv_pre.bias", {1, dv}});
      out.push_back({"conv_post.weight", {k2 * dv, dv}});
      if (spec.bias) out.push_back({"conv_post.bias", {1, dv}});
      out.push_back({"proj.weight", {dv, dim}});
      if (spec.bias) out.push_back({"proj.bias", {1, dim}});
      break;
    }
  }
  return out;
}

std::int64_t param_count(const ConnectorSpec& spec) {
  spec.validate();
  const std::int64_t dv = spec.d_v, dim = spec.dim, b = spec.bias ? 1 : 0;
  switch (spec.kind) {
    case ConnectorKind::Linear:
      return dv * dim + b * dim;
    case ConnectorKind::TwoLayerMLP:
    case ConnectorKind::AvgPool:
      return mlp_count(dv, dim, b);
    case ConnectorKind::AttnPool: {
      const std::int64_t dc = spec.effective_cross_dim(), q = *spec.tokens;
      return q * dc + 2 * (dv * dc + b * dc) + mlp_count(dc, dim, b);
    }
    case ConnectorKind::ConvMap: {
      const std::int64_t k2 = static_cast<std::int64_t>(spec.kernel) * spec.kernel;
      return 2 * (k2 * dv * dv + b * dv) + dv * dim + b * dim;
    }
  }
  return 0;
}

void ConnectorParams::add(std::string name, Tensor tensor) {
  if (contains(name)) throw ConfigError("duplicate parameter '" + name + "'");
  entries_.push_back({std::move(name), std::move(tensor)});
}

Tensor& ConnectorParams::at(std::string_view name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor;
  }
  throw LookupError("no parameter named '" + std::string(name) + "'");
}

const Tensor& ConnectorParams::at(std::string_view name) const {
  return const_cast<ConnectorParams*>(this)->at(name);
}

bool ConnectorParams::contains(std::string_view name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const Entry& e) { return e.name == name; });
}

std::vector<Tensor*> ConnectorParams::tensors() {
  std::vector<Tensor*> out;
  out.reserve(entries_.size());
  for (auto& e : entries_) out.push_back(&e.tensor);
  return out;
}

std::int64_t ConnectorParams::scalar_count() const {
  std::int64_t n = 0;
  for (const auto& e : entries_) n += e.tensor.size();
  return n;
}

void ConnectorParams::zero_grad() {
  for (auto& e : entries_) e.tensor.zero_grad();
}

ConnectorParams init_params(const ConnectorSpec& spec) {
  Rng rng(spec.seed);
  ConnectorParams params;
  for (const auto& ps : param_shapes(spec)) {
    Matrix m = Matrix::Zero(ps.shape.rows, ps.shape.cols);
    const bool is_bias = ps.name.ends_with(".bias");
    if (ps.name == "attn.queries") {
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, 0.02);
    } else if (!is_bias) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(ps.shape.rows));
      for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-bound, bound);
    }
    params.add(ps.name, Tensor(std::move(m), true));
  }
  return params;
}

void check_params(const ConnectorSpec& spec, const ConnectorParams& params) {
  const auto shapes = param_shapes(spec);
  if (shapes.size() != params.entries().size()) {
    throw ConfigError("parameter set has " + std::to_string(params.entries().size()) +
                      " tensors, " + std::string(to_string(spec.kind)) + " expects " +
                      std::to_string(shapes.size()));
  }
  for (const auto& ps : shapes) {
    if (!params.contains(ps.name)) throw ConfigError("missing parameter '" + ps.name + "'");
    const Shape got = params.at(ps.name).shape();
    if (got != ps.shape) {
      throw ConfigError("parameter '" + ps.name + "' has shape " + got.str() + ", expected " +
                        ps.shape.str());
    }
  }
}

BoundParams::BoundParams(Graph& g, ConnectorParams& params) {
  for (auto& e : params.entries()) vars_.emplace(e.name, g.leaf(e.tensor));
}

BoundParams BoundParams::frozen(Graph& g, const ConnectorParams& params) {
  BoundParams b;
  for (const auto& e : params.entries()) b.vars_.emplace(e.name, g.constant(e.tensor.value()));
  return b;
}

BoundParams::BoundParams(const ConnectorParams& params, std::span<const Var> vars) {
  const auto& entries = params.entries();
  if (vars.size() < entries.size()) {
    throw ContractError("BoundParams: " + std::to_string(vars.size()) + " nodes for " +
                        std::to_string(entries.size()) + " parameters");
  }
  for (std::size_t i = 0; i < entries.size(); ++i) vars_.emplace(entries[i].name, vars[i]);
}

Var BoundParams::operator[](std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw LookupError("no bound parameter named '" + std::string(name) + "'");
  return it->second;
}

bool BoundParams::contains(std::string_view name) const { return vars_.contains(name); }

namespace {

Var affine(const BoundParams& p, Var x, const std::string& prefix) {
  Var y = matmul(x, p[prefix + ".weight"]);
  const std::string bias = prefix + ".bias";
  return p.contains(bias) ? add_row(y, p[bias]) : y;
}

Var mlp(const BoundParams& p, Var x) {
  return affine(p, gelu(affine(p, x, "mlp.fc1")), "mlp.fc2");
}

// Same-padding k x k convolution over a raster grid.
Var conv_same(const BoundParams& p, Var x, Index height, Index width, int kernel,
              const std::string& prefix) {
  return affine(p, im2col(x, height, width, kernel), prefix);
}

void require_channels(Var features, Index expected, std::string_view who) {
  if (features.cols() != expected) {
    throw DimensionError(std::string(who) + ": input has " + std::to_string(features.cols()) +
                         " channels, connector expects d_v=" + std::to_string(expected));
  }
}

void require_grid(Var features, const GridShape& grid, std::string_view who) {
  if (features.rows() != grid.patch_count()) {
    throw DimensionError(std::string(who) + ": input has " + std::to_string(features.rows()) +
                         " patches, grid " + std::to_string(grid.height) + "x" +
                         std::to_string(grid.width) + " has " +
                         std::to_string(grid.patch_count()));
  }
}

}  // namespace

Var forward_linear(const BoundParams& p, Var features) {
  require_channels(features, p["proj.weight"].rows(), "forward_linear");
  return affine(p, features, "proj");
}

Var forward_mlp(const BoundParams& p, Var features) {
  require_channels(features, p["mlp.fc1.weight"].rows(), "forward_mlp");
  return mlp(p, features);
}

Var forward_avgpool(const ConnectorSpec& spec, const BoundParams& p, Var features,
                    const GridShape& grid) {
  require_channels(features, spec.d_v, "forward_avgpool");
  require_grid(features, grid, "forward_avgpool");
  const auto windows = window_partition(grid, spec.token_side());
  return mlp(p, window_mean(features, windows));
}

Var forward_attnpool(const ConnectorSpec& spec, const BoundParams& p, Var features) {
  require_channels(features, spec.d_v, "forward_attnpool");
  const double inv_sqrt_dc = 1.0 / std::sqrt(static_cast<double>(spec.effective_cross_dim()));
  Var keys = affine(p, features, "attn.key");
  Var values = affine(p, features, "attn.value");
  Var scores = scale(matmul(p["attn.queries"], transpose(keys)), inv_sqrt_dc);
  Var attention = softmax_rows(scores);
  return mlp(p, matmul(attention, values));
}

Var forward_convmap(const ConnectorSpec& spec, const BoundParams& p, Var features,
                    const GridShape& grid) {
  require_channels(features, spec.d_v, "forward_convmap");
  require_grid(features, grid, "forward_convmap");
  const int side = spec.token_side();
  const auto windows = window_partition(grid, side);
  Var local = conv_same(p, features, grid.height, grid.width, spec.kernel, "conv_pre");
  Var pooled = window_mean(local, windows);
  Var mapped = conv_same(p, pooled, side, side, spec.kernel, "conv_post");
  return affine(p, mapped, "proj");
}

Var connector_forward(const ConnectorSpec& spec, const BoundParams& p, Var features,
                      const GridShape& grid) {
  switch (spec.kind) {
    case ConnectorKind::Linear:
      require_grid(features, grid, "forward_linear");
      return forward_linear(p, features);
    case ConnectorKind::TwoLayerMLP:
      require_grid(features, grid, "forward_mlp");
      return forward_mlp(p, features);
    case ConnectorKind::AvgPool: return forward_avgpool(spec, p, features, grid);
    case ConnectorKind::AttnPool:
      require_grid(features, grid, "forward_attnpool");
      return forward_attnpool(spec, p, features);
    case ConnectorKind::ConvMap: return forward_convmap(spec, p, features, grid);
  }
  throw ConfigError("unhandled connector kind");
}

TokenSeq forward(const ConnectorSpec& spec, ConnectorParams& params, const PatchGrid& input) {
  spec.validate();
  check_params(spec, params);
  Graph g;
  BoundParams bound(g, params);
  Var out = connector_forward(spec, bound, g.constant(input.features), input.grid);
  return TokenSeq{out.value()};
}

double connector_grad_check(const ConnectorSpec& spec_in, const GridShape& grid, std::uint64_t seed,
                            double eps) {
  ConnectorSpec spec = spec_in;
  spec.seed = seed;
  spec.validate();
  ConnectorParams params = init_params(spec);
  // Zero biases and the tiny query init leave some paths nearly flat.
  Rng rng(seed ^ 0x67726164ULL);
  for (auto& e : params.entries()) {
    Matrix& v = e.tensor.mutable_value();
    for (Index i = 0; i < v.size(); ++i) v.data()[i] += rng.normal(0.0, 0.1);
  }
  const int patches = grid.patch_count();
  Matrix features(patches, spec.d_v);
  for (Index i = 0; i < features.size(); ++i) features.data()[i] = rng.normal();
  const int out_tokens = spec.output_tokens(patches);
  Matrix weights(out_tokens, spec.dim);
  for (Index i = 0; i < weights.size(); ++i) weights.data()[i] = rng.normal();

  Tensor input(features, true);
  std::vector<Tensor*> tensors = params.tensors();
  tensors.push_back(&input);
  const ScalarFn loss = [&](Graph& g, std::span<const Var> vars) {
    BoundParams bound(params, vars);
    Var tokens = connector_forward(spec, bound, vars.back(), grid);
    return sum(mul(tokens, g.constant(weights)));
  };
  return grad_check(loss, tensors, eps);
}

}  // namespace vlconn
