#pragma once

// SPLATNet-3D layer graph: optional leading 1x1 convolutions, a stack of T
// bilateral convolution layers at halving lattice scales, concatenation of
// all BCL responses, trailing 1x1 convolutions and a softmax head. Every
// parameterized layer except the last is followed by BatchNorm then ReLU.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splatnet/bcl.hpp"
#include "splatnet/cloud.hpp"
#include "splatnet/error.hpp"
#include "splatnet/lattice.hpp"
#include "splatnet/matrix.hpp"

namespace splatnet {

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.9;

enum class LayerKind { Conv, Bcl, BatchNorm, Relu, Concat, Softmax };

/// Index used as a layer input to mean "the network's input features".
inline constexpr std::size_t kNetworkInput = std::numeric_limits<std::size_t>::max();
inline constexpr std::size_t kNoParams = std::numeric_limits<std::size_t>::max();

struct Layer {
  LayerKind kind = LayerKind::Conv;
  std::size_t input = kNetworkInput;   // producing layer
  std::vector<std::size_t> sources;    // Concat inputs
  std::size_t width = 0;               // output channels of Conv / Bcl
  std::size_t bcl_index = 0;           // t, for Bcl
  LatticeConfig scale;                 // for Bcl
  bool normalize = true;               // for Bcl
  std::size_t param = kNoParams;       // first tensor in Parameters
};

struct NetworkSpec {
  std::string arch;
  std::vector<Layer> layers;
  std::size_t num_bcl = 0;
  LatticeConfig lambda0;
  std::size_t num_classes = 0;

  /// Layer indices of the BCLs, in order.
  std::vector<std::size_t> bcl_layers() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      if (layers[i].kind == LayerKind::Bcl) out.push_back(i);
    }
    return out;
  }
};

namespace detail {

struct ArchToken {
  char kind;
  std::optional<std::size_t> width;  // nullopt for `x`
};

inline std::vector<ArchToken> tokenize_arch(std::string_view text) {
  std::vector<ArchToken> tokens;
  std::size_t pos = 0;
  std::size_t index = 1;
  while (true) {
    const std::size_t dash = text.find('-', pos);
    const std::string_view tok = text.substr(pos, dash == std::string_view::npos ? text.npos : dash - pos);
    if (tok.size() < 2 || (tok[0] != 'C' && tok[0] != 'B')) {
      throw ParseError("bad architecture token '" + std::string(tok) + "'", index);
    }
    ArchToken t{tok[0], std::nullopt};
    const std::string_view rest = tok.substr(1);
    if (rest == "x") {
      if (t.kind != 'C') throw ParseError("only a C layer may have width 'x'", index);
    } else {
      std::size_t w = 0;
      for (char ch : rest) {
        if (ch < '0' || ch > '9') throw ParseError("bad width in token '" + std::string(tok) + "'", index);
        w = w * 10 + static_cast<std::size_t>(ch - '0');
        if (w > 1'000'000) throw ParseError("width too large in token '" + std::string(tok) + "'", index);
      }
      if (w == 0) throw ParseError("zero width in token '" + std::string(tok) + "'", index);
      t.width = w;
    }
    tokens.push_back(t);
    if (dash == std::string_view::npos) break;
    pos = dash + 1;
    ++index;
  }
  return tokens;
}

}  // namespace detail

/// Parses an architecture string such as "C32-B64-B128-B256-B256-B256-C128-Cx".
/// Grammar: leading C layers, one contiguous run of B layers, then at least
/// one C layer. `x` (final layer only) stands for `num_classes`. BCL t uses
/// scale lambda0 / 2^t. With an explicit final width, num_classes may be 0
/// (taken from the string) or must match it.
inline NetworkSpec parse_arch(std::string_view text, const LatticeConfig& lambda0,
                              std::size_t num_classes, bool normalize = true) {
  lambda0.validate();
  const auto tokens = detail::tokenize_arch(text);

  std::size_t i = 0;
  std::size_t leading = 0;
  while (i < tokens.size() && tokens[i].kind == 'C') ++i, ++leading;
  const std::size_t first_b = i;
  while (i < tokens.size() && tokens[i].kind == 'B') ++i;
  const std::size_t bcl_count = i - first_b;
  if (bcl_count == 0) throw ParseError("architecture needs at least one B layer", first_b + 1);
  if (i == tokens.size()) throw ParseError("architecture must end with a C layer", tokens.size());
  for (std::size_t j = i; j < tokens.size(); ++j) {
    if (tokens[j].kind != 'C') throw ParseError("B layers must be contiguous", j + 1);
    if (!tokens[j].width && j + 1 != tokens.size()) {
      throw ParseError("width 'x' is only allowed on the final layer", j + 1);
    }
  }
  for (std::size_t j = 0; j < leading; ++j) {
    if (!tokens[j].width) throw ParseError("width 'x' is only allowed on the final layer", j + 1);
  }
  const detail::ArchToken& last = tokens.back();
  std::size_t classes = num_classes;
  if (last.width) {
    if (num_classes != 0 && *last.width != num_classes) {
      throw ParseError("final width " + std::to_string(*last.width) + " != num_classes " +
                           std::to_string(num_classes),
                       tokens.size());
    }
    classes = *last.width;
  } else if (num_classes == 0) {
    throw ParseError("'Cx' requires num_classes", tokens.size());
  }
  if (classes < 2) throw ParseError("need at least 2 classes", tokens.size());

  NetworkSpec spec;
  spec.arch = std::string(text);
  spec.lambda0 = lambda0;
  spec.num_classes = classes;
  spec.num_bcl = bcl_count;
  auto& layers = spec.layers;
  std::size_t prev = kNetworkInput;

  auto add = [&](Layer layer) {
    layers.push_back(std::move(layer));
    return layers.size() - 1;
  };
  auto add_bn_relu = [&](std::size_t from) {
    Layer bn;
    bn.kind = LayerKind::BatchNorm;
    bn.input = from;
    const std::size_t b = add(bn);
    Layer relu;
    relu.kind = LayerKind::Relu;
    relu.input = b;
    return add(relu);
  };

  for (std::size_t j = 0; j < leading; ++j) {
    Layer conv;
    conv.kind = LayerKind::Conv;
    conv.input = prev;
    conv.width = *tokens[j].width;
    prev = add_bn_relu(add(conv));
  }
  std::vector<std::size_t> responses;
  double factor = 1.0;
  for (std::size_t t = 0; t < bcl_count; ++t) {
    Layer bcl;
    bcl.kind = LayerKind::Bcl;
    bcl.input = prev;
    bcl.width = *tokens[first_b + t].width;
    bcl.bcl_index = t;
    bcl.scale = lambda0.scaled(factor);
    bcl.normalize = normalize;
    prev = add_bn_relu(add(bcl));
    responses.push_back(prev);
    factor *= 0.5;
  }
  Layer concat;
  concat.kind = LayerKind::Concat;
  concat.sources = responses;
  prev = add(concat);
  for (std::size_t j = i; j < tokens.size(); ++j) {
    Layer conv;
    conv.kind = LayerKind::Conv;
    conv.input = prev;
    const bool final_layer = j + 1 == tokens.size();
    conv.width = final_layer ? classes : *tokens[j].width;
    prev = add(conv);
    if (!final_layer) prev = add_bn_relu(prev);
  }
  Layer softmax;
  softmax.kind = LayerKind::Softmax;
  softmax.input = prev;
  add(softmax);
  return spec;
}

/// Output width of every layer given the network input width.
inline std::vector<std::size_t> layer_widths(const NetworkSpec& spec, std::size_t in_channels) {
  std::vector<std::size_t> widths(spec.layers.size());
  auto width_of = [&](std::size_t idx) { return idx == kNetworkInput ? in_channels : widths[idx]; };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    switch (l.kind) {
      case LayerKind::Conv:
      case LayerKind::Bcl:
        widths[i] = l.width;
        break;
      case LayerKind::Concat: {
        std::size_t w = 0;
        for (std::size_t s : l.sources) w += widths[s];
        widths[i] = w;
        break;
      }
      default:
        widths[i] = width_of(l.input);
    }
  }
  return widths;
}

/// A named parameter tensor. Running BatchNorm statistics are stored as
/// non-trainable tensors.
struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  bool trainable = true;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct Parameters {
  std::vector<Tensor> tensors;

  friend bool operator==(const Parameters&, const Parameters&) = default;

  /// Same shapes, all zeros.
  Parameters zeros_like() const {
    Parameters out = *this;
    for (auto& t : out.tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
    return out;
  }
};

/// Parameter tensors in layer order. Conv: weight (in x out), bias. BCL:
/// weight (taps x in x out), bias. BatchNorm: gain, shift, running mean,
/// running variance. Weights are uniform with variance 2 / fan_in.
inline Parameters init_parameters(NetworkSpec& spec, std::size_t in_channels, std::uint64_t seed) {
  if (in_channels == 0) throw ConfigError("network needs at least one input feature channel");
  const auto widths = layer_widths(spec, in_channels);
  const std::size_t taps = (std::size_t{1} << (spec.lambda0.dim() + 1)) - 1;
  std::mt19937_64 rng(seed);
  Parameters params;
  auto uniform = [&](std::size_t count, std::size_t fan_in) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-a, a);
    std::vector<double> v(count);
    for (double& x : v) x = dist(rng);
    return v;
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Layer& l = spec.layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    const std::size_t in_w = l.input == kNetworkInput ? in_channels : widths[l.input];
    switch (l.kind) {
      case LayerKind::Conv:
        l.param = params.tensors.size();
        params.tensors.push_back({prefix + "conv.weight", {in_w, l.width}, uniform(in_w * l.width, in_w), true});
        params.tensors.push_back({prefix + "conv.bias", {l.width}, std::vector<double>(l.width, 0.0), true});
        break;
      case LayerKind::Bcl:
        l.param = params.tensors.size();
        params.tensors.push_back({prefix + "bcl.weight", {taps, in_w, l.width},
                                  uniform(taps * in_w * l.width, taps * in_w), true});
        params.tensors.push_back({prefix + "bcl.bias", {l.width}, std::vector<double>(l.width, 0.0), true});
        break;
      case LayerKind::BatchNorm: {
        const std::size_t c = widths[i];
        l.param = params.tensors.size();
        params.tensors.push_back({prefix + "bn.gain", {c}, std::vector<double>(c, 1.0), true});
        params.tensors.push_back({prefix + "bn.shift", {c}, std::vector<double>(c, 0.0), true});
        params.tensors.push_back({prefix + "bn.running_mean", {c}, std::vector<double>(c, 0.0), false});
        params.tensors.push_back({prefix + "bn.running_var", {c}, std::vector<double>(c, 1.0), false});
        break;
      }
      default:
        break;
    }
  }
  return params;
}

/// Re-derives each layer's `param` index from the tensor layout used by
/// init_parameters (needed after parsing a spec for loaded parameters).
inline void bind_parameters(NetworkSpec& spec, const Parameters& params, std::size_t in_channels) {
  const auto widths = layer_widths(spec, in_channels);
  const std::size_t taps = (std::size_t{1} << (spec.lambda0.dim() + 1)) - 1;
  std::size_t next = 0;
  auto expect = [&](const std::vector<std::size_t>& shape) {
    if (next >= params.tensors.size() || params.tensors[next].shape != shape) {
      throw ConfigError("parameters do not match the network architecture (tensor " +
                        std::to_string(next) + ")");
    }
    std::size_t count = 1;
    for (std::size_t s : shape) count *= s;
    if (params.tensors[next].values.size() != count) throw ConfigError("tensor size mismatch");
    ++next;
  };
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    Layer& l = spec.layers[i];
    const std::size_t in_w = l.input == kNetworkInput ? in_channels : widths[l.input];
    switch (l.kind) {
      case LayerKind::Conv:
        l.param = next;
        expect({in_w, l.width});
        expect({l.width});
        break;
      case LayerKind::Bcl:
        l.param = next;
        expect({taps, in_w, l.width});
        expect({l.width});
        break;
      case LayerKind::BatchNorm:
        l.param = next;
        for (int k = 0; k < 4; ++k) expect({widths[i]});
        break;
      default:
        break;
    }
  }
  if (next != params.tensors.size()) throw ConfigError("parameters have extra tensors");
}

enum class Mode { Train, Inference };

struct NetworkInput {
  FeatureMatrix features;  // n x d_f
  FeatureMatrix lattice;   // n x d_l
};

using LatticeStack = std::vector<std::shared_ptr<const SparseLattice>>;

/// One lattice per BCL, built on the input's lattice features.
inline LatticeStack build_lattices(const NetworkSpec& spec, const FeatureMatrix& lattice_features) {
  LatticeStack out;
  for (std::size_t idx : spec.bcl_layers()) {
    out.push_back(std::make_shared<const SparseLattice>(
        build_lattice(lattice_features, spec.layers[idx].scale)));
  }
  return out;
}

/// Activations retained by one forward pass.
struct Tape {
  struct BatchNormCache {
    FeatureMatrix normalized;
    std::vector<double> inv_std;
    std::vector<double> mean;
    std::vector<double> var;
  };

  Mode mode = Mode::Inference;
  FeatureMatrix input;
  std::vector<FeatureMatrix> outputs;
  LatticeStack lattices;
  std::vector<std::optional<BilateralConvolution>> bcl;
  std::vector<BatchNormCache> batch_norm;

  const FeatureMatrix& probabilities() const { return outputs.back(); }
  /// Inputs to the final layer's softmax.
  const FeatureMatrix& logits() const { return outputs[outputs.size() - 2]; }
};

namespace detail {

inline FeatureMatrix conv1x1(const FeatureMatrix& x, const Tensor& w, const Tensor& b) {
  const std::size_t c_in = w.shape[0];
  const std::size_t c_out = w.shape[1];
  require_shape(x, x.rows(), c_in, "conv1x1 input");
  FeatureMatrix out(x.rows(), c_out);
  parallel_for(x.rows(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t r = begin; r < end; ++r) {
      double* dst = out.row(r).data();
      std::copy(b.values.begin(), b.values.end(), dst);
      const double* src = x.row(r).data();
      for (std::size_t ci = 0; ci < c_in; ++ci) {
        const double a = src[ci];
        if (a == 0.0) continue;
        const double* wr = w.values.data() + ci * c_out;
        for (std::size_t co = 0; co < c_out; ++co) dst[co] += a * wr[co];
      }
    }
  }, 256);
  return out;
}

inline void accumulate(std::optional<FeatureMatrix>& slot, const FeatureMatrix& g) {
  if (!slot) {
    slot = g;
    return;
  }
  auto& dst = slot->values();
  const auto& src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

/// Runs the network. Train mode normalizes with batch statistics (over the
/// point dimension) and keeps everything backward() needs; inference mode
/// uses running statistics. `lattices` may be supplied to reuse a cached stack.
inline Tape forward(const NetworkSpec& spec, const Parameters& params, const NetworkInput& input,
                    Mode mode, LatticeStack lattices = {}) {
  const std::size_t n = input.features.rows();
  if (n == 0) throw EmptyInput("forward: empty point cloud");
  if (input.lattice.rows() != n) throw ShapeError("forward: feature and lattice row counts differ");
  if (input.lattice.cols() != spec.lambda0.dim()) {
    throw ConfigError("forward: lattice features have " + std::to_string(input.lattice.cols()) +
                      " channels, network expects " + std::to_string(spec.lambda0.dim()));
  }
  if (!input.features.all_finite()) throw InvalidInput("forward: non-finite input features");
  if (lattices.empty()) lattices = build_lattices(spec, input.lattice);
  if (lattices.size() != spec.num_bcl) throw ShapeError("forward: wrong number of cached lattices");

  Tape tape;
  tape.mode = mode;
  tape.input = input.features;
  tape.lattices = std::move(lattices);
  tape.outputs.resize(spec.layers.size());
  tape.bcl.resize(spec.layers.size());
  tape.batch_norm.resize(spec.layers.size());

  auto in_of = [&](const Layer& l) -> const FeatureMatrix& {
    return l.input == kNetworkInput ? tape.input : tape.outputs[l.input];
  };

  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    FeatureMatrix& out = tape.outputs[i];
    switch (l.kind) {
      case LayerKind::Conv:
        out = detail::conv1x1(in_of(l), params.tensors.at(l.param), params.tensors.at(l.param + 1));
        break;
      case LayerKind::Bcl: {
        const Tensor& w = params.tensors.at(l.param);
        FilterBank filter(w.shape[0], w.shape[1], w.shape[2]);
        filter.weights = w.values;
        filter.bias = params.tensors.at(l.param + 1).values;
        auto& layer = tape.bcl[i].emplace(tape.lattices[l.bcl_index], l.normalize);
        out = layer.forward(in_of(l), filter);
        break;
      }
      case LayerKind::BatchNorm: {
        const FeatureMatrix& x = in_of(l);
        const std::size_t c = x.cols();
        const auto& gain = params.tensors.at(l.param).values;
        const auto& shift = params.tensors.at(l.param + 1).values;
        auto& cache = tape.batch_norm[i];
        cache.mean.assign(c, 0.0);
        cache.var.assign(c, 0.0);
        if (mode == Mode::Train) {
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = 0; k < c; ++k) cache.mean[k] += x(r, k);
          }
          for (double& m : cache.mean) m /= static_cast<double>(n);
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t k = 0; k < c; ++k) {
              const double d = x(r, k) - cache.mean[k];
              cache.var[k] += d * d;
            }
          }
          for (double& v : cache.var) v /= static_cast<double>(n);
        } else {
          cache.mean = params.tensors.at(l.param + 2).values;
          cache.var = params.tensors.at(l.param + 3).values;
        }
        cache.inv_std.resize(c);
        for (std::size_t k = 0; k < c; ++k) cache.inv_std[k] = 1.0 / std::sqrt(cache.var[k] + kBatchNormEpsilon);
        cache.normalized = FeatureMatrix(n, c);
        out = FeatureMatrix(n, c);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t k = 0; k < c; ++k) {
            const double xh = (x(r, k) - cache.mean[k]) * cache.inv_std[k];
            cache.normalized(r, k) = xh;
            out(r, k) = gain[k] * xh + shift[k];
          }
        }
        if (mode == Mode::Inference) cache.normalized = FeatureMatrix();
        break;
      }
      case LayerKind::Relu:
        out = in_of(l);
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
        break;
      case LayerKind::Concat: {
        std::vector<const FeatureMatrix*> parts;
        for (std::size_t s : l.sources) parts.push_back(&tape.outputs[s]);
        out = hconcat(parts);
        break;
      }
      case LayerKind::Softmax: {
        out = in_of(l);
        for (std::size_t r = 0; r < n; ++r) {
          auto row = out.row(r);
          const double mx = *std::max_element(row.begin(), row.end());
          double sum = 0.0;
          for (double& v : row) {
            v = std::exp(v - mx);
            sum += v;
          }
          for (double& v : row) v /= sum;
        }
        break;
      }
    }
  }
  if (mode == Mode::Inference) {
    for (auto& b : tape.bcl) {
      if (b) b->clear_state();
    }
  }
  return tape;
}

/// Folds the batch statistics of a train-mode tape into the running
/// BatchNorm statistics: running = momentum * running + (1 - momentum) * batch.
inline void update_running_statistics(const NetworkSpec& spec, Parameters& params, const Tape& tape,
                                      double momentum = kBatchNormMomentum) {
  if (tape.mode != Mode::Train) throw StateError("running statistics need a train-mode tape");
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Layer& l = spec.layers[i];
    if (l.kind != LayerKind::BatchNorm) continue;
    auto& rm = params.tensors.at(l.param + 2).values;
    auto& rv = params.tensors.at(l.param + 3).values;
    const auto& cache = tape.batch_norm[i];
    for (std::size_t k = 0; k < rm.size(); ++k) {
      rm[k] = momentum * rm[k] + (1.0 - momentum) * cache.mean[k];
      rv[k] = momentum * rv[k] + (1.0 - momentum) * cache.var[k];
    }
  }
}

struct NetworkGradients {
  Parameters params;       // same layout as the parameters; zeros for running statistics
  FeatureMatrix features;  // gradient with respect to the input features
};

/// Reverse pass from a gradient with respect to the output probabilities.
inline NetworkGradients backward(const NetworkSpec& spec, const Parameters& params, const Tape& tape,
                                 const FeatureMatrix& grad_probabilities) {
  if (tape.mode != Mode::Train) throw StateError("backward needs a train-mode tape");
  const std::size_t n = tape.input.rows();
  require_shape(grad_probabilities, n, spec.num_classes, "grad_probabilities");

  NetworkGradients grads{params.zeros_like(), FeatureMatrix(n, tape.input.cols())};
  std::vector<std::optional<FeatureMatrix>> upstream(spec.layers.size());
  upstream.back() = grad_probabilities;

  auto send = [&](std::size_t target, const FeatureMatrix& g) {
    if (target == kNetworkInput) {
      auto& dst = grads.features.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.values()[k];
    } else {
      detail::accumulate(upstream[target], g);
    }
  };
  auto in_of = [&](const Layer& l) -> const FeatureMatrix& {
    return l.input == kNetworkInput ? tape.input : tape.outputs[l.input];
  };

  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    if (!upstream[i]) continue;
    const Layer& l = spec.layers[i];
    const FeatureMatrix& g = *upstream[i];
    switch (l.kind) {
      case LayerKind::Softmax: {
        const FeatureMatrix& p = tape.outputs[i];
        FeatureMatrix gl(n, p.cols());
        for (std::size_t r = 0; r < n; ++r) {
          double dot = 0.0;
          for (std::size_t c = 0; c < p.cols(); ++c) dot += p(r, c) * g(r, c);
          for (std::size_t c = 0; c < p.cols(); ++c) gl(r, c) = p(r, c) * (g(r, c) - dot);
        }
        send(l.input, gl);
        break;
      }
      case LayerKind::Conv: {
        const FeatureMatrix& x = in_of(l);
        const Tensor& w = params.tensors.at(l.param);
        const std::size_t c_in = w.shape[0];
        const std::size_t c_out = w.shape[1];
        auto& gw = grads.params.tensors.at(l.param).values;
        auto& gb = grads.params.tensors.at(l.param + 1).values;
        FeatureMatrix gx(n, c_in);
        for (std::size_t r = 0; r < n; ++r) {
          const double* gr = g.row(r).data();
          const double* xr = x.row(r).data();
          double* gxr = gx.row(r).data();
          for (std::size_t co = 0; co < c_out; ++co) gb[co] += gr[co];
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const double* wr = w.values.data() + ci * c_out;
            double* gwr = gw.data() + ci * c_out;
            const double a = xr[ci];
            double acc = 0.0;
            for (std::size_t co = 0; co < c_out; ++co) {
              gwr[co] += a * gr[co];
              acc += wr[co] * gr[co];
            }
            gxr[ci] = acc;
          }
        }
        send(l.input, gx);
        break;
      }
      case LayerKind::Bcl: {
        const BclGradients bg = tape.bcl[i]->backward(g);
        grads.params.tensors.at(l.param).values = bg.grad_weights.weights;
        grads.params.tensors.at(l.param + 1).values = bg.grad_weights.bias;
        send(l.input, bg.grad_input);
        break;
      }
      case LayerKind::BatchNorm: {
        const auto& cache = tape.batch_norm[i];
        const auto& gain = params.tensors.at(l.param).values;
        auto& ggain = grads.params.tensors.at(l.param).values;
        auto& gshift = grads.params.tensors.at(l.param + 1).values;
        const std::size_t c = g.cols();
        std::vector<double> sum_dxh(c, 0.0), sum_dxh_xh(c, 0.0);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t k = 0; k < c; ++k) {
            const double dy = g(r, k);
            const double xh = cache.normalized(r, k);
            ggain[k] += dy * xh;
            gshift[k] += dy;
            const double dxh = dy * gain[k];
            sum_dxh[k] += dxh;
            sum_dxh_xh[k] += dxh * xh;
          }
        }
        const double nn = static_cast<double>(n);
        FeatureMatrix gx(n, c);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t k = 0; k < c; ++k) {
            const double dxh = g(r, k) * gain[k];
            gx(r, k) = cache.inv_std[k] / nn *
                       (nn * dxh - sum_dxh[k] - cache.normalized(r, k) * sum_dxh_xh[k]);
          }
        }
        send(l.input, gx);
        break;
      }
      case LayerKind::Relu: {
        const FeatureMatrix& y = tape.outputs[i];
        FeatureMatrix gx = g;
        auto& v = gx.values();
        for (std::size_t k = 0; k < v.size(); ++k) {
          if (!(y.values()[k] > 0.0)) v[k] = 0.0;
        }
        send(l.input, gx);
        break;
      }
      case LayerKind::Concat: {
        std::size_t offset = 0;
        for (std::size_t s : l.sources) {
          const std::size_t w = tape.outputs[s].cols();
          send(s, g.columns(offset, w));
          offset += w;
        }
        break;
      }
    }
  }
  return grads;
}

/// Argmax per row; ties go to the lowest class index.
inline std::vector<int> predict(const FeatureMatrix& probabilities) {
  std::vector<int> out(probabilities.rows());
  for (std::size_t r = 0; r < probabilities.rows(); ++r) {
    const auto row = probabilities.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

/// What a trained model needs besides its weights: architecture, lattice
/// scale, and which cloud channels feed the features and the lattice.
struct ModelConfig {
  std::string arch;
  LatticeConfig lambda0;
  std::size_t num_classes = 0;
  std::vector<std::string> feature_channels{"xyz"};
  std::vector<std::string> lattice_channels{"xyz"};
  bool normalize = true;
  std::string gravity_axis = "y";

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Extracts the feature and lattice matrices a model expects from a cloud.
inline NetworkInput make_input(const PointCloud& cloud, const ModelConfig& config) {
  NetworkInput in{select_channels(cloud, config.feature_channels, config.gravity_axis),
                  select_channels(cloud, config.lattice_channels, config.gravity_axis)};
  if (in.lattice.cols() != config.lambda0.dim()) {
    throw ConfigError("lattice channels give " + std::to_string(in.lattice.cols()) +
                      " dimensions but lambda0 has " + std::to_string(config.lambda0.dim()));
  }
  return in;
}

struct Model {
  ModelConfig config;
  NetworkSpec spec;
  Parameters params;
  std::size_t in_channels = 0;

  static Model create(const ModelConfig& config, std::uint64_t seed) {
    Model m;
    m.config = config;
    m.spec = parse_arch(config.arch, config.lambda0, config.num_classes, config.normalize);
    m.config.num_classes = m.spec.num_classes;
    m.in_channels = expand_channels(config.feature_channels).size();
    m.params = init_parameters(m.spec, m.in_channels, seed);
    return m;
  }

  /// Rebuilds a model around existing parameters (e.g. from a checkpoint).
  static Model restore(const ModelConfig& config, Parameters params) {
    Model m;
    m.config = config;
    m.spec = parse_arch(config.arch, config.lambda0, config.num_classes, config.normalize);
    m.config.num_classes = m.spec.num_classes;
    m.in_channels = expand_channels(config.feature_channels).size();
    bind_parameters(m.spec, params, m.in_channels);
    m.params = std::move(params);
    return m;
  }

  /// Inference-mode class probabilities for a cloud.
  FeatureMatrix infer(const PointCloud& cloud) const {
    return forward(spec, params, make_input(cloud, config), Mode::Inference).probabilities();
  }
};

}  // namespace splatnet
