#pragma once

// Bilateral convolution layer: splat -> sparse lattice convolution -> slice,
// with optional density normalization and exact reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splatnet/error.hpp"
#include "splatnet/lattice.hpp"
#include "splatnet/matrix.hpp"
#include "splatnet/parallel.hpp"

namespace splatnet {

/// Denominator floor for density normalization.
inline constexpr double kDensityEpsilon = 1e-12;

/// Learnable lattice filter. Weights are laid out taps-major, then input
/// channel, then output channel.
struct FilterBank {
  std::size_t taps = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::vector<double> weights;
  std::vector<double> bias;

  FilterBank() = default;
  FilterBank(std::size_t k, std::size_t c_in, std::size_t c_out)
      : taps(k), in_channels(c_in), out_channels(c_out), weights(k * c_in * c_out, 0.0), bias(c_out, 0.0) {}

  double& operator()(std::size_t k, std::size_t ci, std::size_t co) noexcept {
    return weights[(k * in_channels + ci) * out_channels + co];
  }
  double operator()(std::size_t k, std::size_t ci, std::size_t co) const noexcept {
    return weights[(k * in_channels + ci) * out_channels + co];
  }

  /// Weight 1 on the centre tap for matching channels; zero bias.
  static FilterBank identity(std::size_t k, std::size_t channels) {
    FilterBank out(k, channels, channels);
    for (std::size_t c = 0; c < channels; ++c) out(0, c, c) = 1.0;
    return out;
  }

  friend bool operator==(const FilterBank&, const FilterBank&) = default;
};

/// Fixed per-tap profile applied channel-wise in the all-ones density pass.
struct BlurKernel {
  std::vector<double> taps;

  /// 1 at the centre and 0.5 on every other one-ring tap, scaled to sum to 1.
  static BlurKernel standard(std::size_t tap_count) {
    BlurKernel out{std::vector<double>(tap_count, 0.5)};
    if (!out.taps.empty()) out.taps[0] = 1.0;
    double sum = 0.0;
    for (double t : out.taps) sum += t;
    for (double& t : out.taps) t /= sum;
    return out;
  }

  /// Filter bank applying this profile independently to each channel.
  FilterBank as_filter_bank(std::size_t channels) const {
    FilterBank out(taps.size(), channels, channels);
    for (std::size_t k = 0; k < taps.size(); ++k) {
      for (std::size_t c = 0; c < channels; ++c) out(k, c, c) = taps[k];
    }
    return out;
  }
};

/// Scatter-add of point values onto lattice vertices, weighted barycentrically.
/// Points are visited in ascending order; missing vertices are skipped.
inline FeatureMatrix splat(const FeatureMatrix& values, const PointEmbeddings& emb,
                           std::size_t vertices) {
  if (values.rows() != emb.points) {
    throw ShapeError("splat: " + std::to_string(values.rows()) + " rows for " +
                     std::to_string(emb.points) + " embedded points");
  }
  const std::size_t channels = values.cols();
  FeatureMatrix out(vertices, channels);
  for (std::size_t p = 0; p < emb.points; ++p) {
    const auto verts = emb.vertices_of(p);
    const auto weights = emb.weights_of(p);
    const auto in = values.row(p);
    for (std::size_t k = 0; k < emb.width; ++k) {
      if (verts[k] == kMissing) continue;
      double* dst = out.row(static_cast<std::size_t>(verts[k])).data();
      const double w = weights[k];
      for (std::size_t c = 0; c < channels; ++c) dst[c] += w * in[c];
    }
  }
  return out;
}

inline FeatureMatrix splat(const FeatureMatrix& values, const SparseLattice& lattice) {
  return splat(values, lattice.embeddings(), lattice.num_vertices());
}

/// Barycentric gather of vertex values onto embedded points. Missing vertices
/// contribute zero.
inline FeatureMatrix slice(const FeatureMatrix& vertex_values, const PointEmbeddings& emb) {
  const std::size_t channels = vertex_values.cols();
  const std::size_t vertices = vertex_values.rows();
  for (std::int32_t v : emb.vertex) {
    if (v != kMissing && static_cast<std::size_t>(v) >= vertices) {
      throw ShapeError("slice: embedding references vertex " + std::to_string(v) + " of " +
                       std::to_string(vertices));
    }
  }
  FeatureMatrix out(emb.points, channels);
  parallel_for(emb.points, [&](std::size_t begin, std::size_t end) {
    for (std::size_t p = begin; p < end; ++p) {
      const auto verts = emb.vertices_of(p);
      const auto weights = emb.weights_of(p);
      double* dst = out.row(p).data();
      for (std::size_t k = 0; k < emb.width; ++k) {
        if (verts[k] == kMissing) continue;
        const auto src = vertex_values.row(static_cast<std::size_t>(verts[k]));
        const double w = weights[k];
        for (std::size_t c = 0; c < channels; ++c) dst[c] += w * src[c];
      }
    }
  });
  return out;
}

/// out[v, co] = bias[co] + sum_k sum_ci W[k, ci, co] * in[adjacency(v, k), ci].
inline FeatureMatrix convolve(const FeatureMatrix& vertex_values, const SparseLattice& lattice,
                              const FilterBank& filter) {
  const Adjacency& adj = lattice.adjacency();
  if (filter.taps != adj.cols) {
    throw ShapeError("convolve: filter has " + std::to_string(filter.taps) + " taps, lattice has " +
                     std::to_string(adj.cols));
  }
  require_shape(vertex_values, lattice.num_vertices(), filter.in_channels, "convolve input");
  if (filter.weights.size() != filter.taps * filter.in_channels * filter.out_channels ||
      filter.bias.size() != filter.out_channels) {
    throw ShapeError("convolve: malformed filter bank");
  }
  const std::size_t c_in = filter.in_channels;
  const std::size_t c_out = filter.out_channels;
  FeatureMatrix out(adj.rows, c_out);
  parallel_for(adj.rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      double* dst = out.row(v).data();
      std::copy(filter.bias.begin(), filter.bias.end(), dst);
      for (std::size_t k = 0; k < adj.cols; ++k) {
        const std::int32_t nb = adj(v, k);
        if (nb == kMissing) continue;
        const double* src = vertex_values.row(static_cast<std::size_t>(nb)).data();
        const double* wk = filter.weights.data() + k * c_in * c_out;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double a = src[ci];
          if (a == 0.0) continue;
          const double* w = wk + ci * c_out;
          for (std::size_t co = 0; co < c_out; ++co) dst[co] += a * w[co];
        }
      }
    }
  }, 256);
  return out;
}

/// Applies a fixed per-tap profile to every channel of a vertex signal.
inline FeatureMatrix blur(const FeatureMatrix& vertex_values, const SparseLattice& lattice,
                          const BlurKernel& kernel) {
  const Adjacency& adj = lattice.adjacency();
  if (kernel.taps.size() != adj.cols) throw ShapeError("blur: kernel tap count mismatch");
  require_shape(vertex_values, lattice.num_vertices(), vertex_values.cols(), "blur input");
  const std::size_t channels = vertex_values.cols();
  FeatureMatrix out(adj.rows, channels);
  parallel_for(adj.rows, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      double* dst = out.row(v).data();
      for (std::size_t k = 0; k < adj.cols; ++k) {
        const std::int32_t nb = adj(v, k);
        if (nb == kMissing) continue;
        const auto src = vertex_values.row(static_cast<std::size_t>(nb));
        for (std::size_t c = 0; c < channels; ++c) dst[c] += kernel.taps[k] * src[c];
      }
    }
  });
  return out;
}

/// Result of the all-ones pass (splat -> blur -> slice) at each output point,
/// before flooring.
inline std::vector<double> density(const SparseLattice& lattice, const PointEmbeddings& out_emb,
                                   const BlurKernel& kernel) {
  const FeatureMatrix ones(lattice.num_points(), 1, 1.0);
  const FeatureMatrix d = slice(blur(splat(ones, lattice), lattice, kernel), out_emb);
  return d.values();
}

inline void divide_rows(FeatureMatrix& values, std::span<const double> denominators) {
  if (denominators.size() != values.rows()) throw ShapeError("normalize: denominator count mismatch");
  for (std::size_t r = 0; r < values.rows(); ++r) {
    const double inv = 1.0 / std::max(denominators[r], kDensityEpsilon);
    for (double& v : values.row(r)) v *= inv;
  }
}

/// Divides `raw` channel-wise by the density of the output points, floored
/// at kDensityEpsilon. Outputs without lattice support come out as zero.
inline FeatureMatrix normalize(const FeatureMatrix& raw, const SparseLattice& lattice,
                               const PointEmbeddings& out_emb, const BlurKernel& kernel) {
  if (raw.rows() != out_emb.points) throw ShapeError("normalize: row count mismatch");
  FeatureMatrix out = raw;
  const std::vector<double> denom = density(lattice, out_emb, kernel);
  divide_rows(out, denom);
  return out;
}

/// Gradients of one bilateral convolution with respect to its input and filter.
struct BclGradients {
  FeatureMatrix grad_input;
  FilterBank grad_weights;
};

/// A bilateral convolution bound to an input lattice and an output point set.
/// forward() retains what backward() needs.
class BilateralConvolution {
 public:
  /// Output points coincide with the lattice's own points.
  BilateralConvolution(std::shared_ptr<const SparseLattice> lattice, bool normalize,
                       std::optional<BlurKernel> kernel = std::nullopt)
      : BilateralConvolution(std::move(lattice), std::nullopt, normalize, std::move(kernel)) {}

  /// Output points given by separate embeddings against the same vertex set.
  BilateralConvolution(std::shared_ptr<const SparseLattice> lattice,
                       std::optional<PointEmbeddings> out_embeddings, bool normalize,
                       std::optional<BlurKernel> kernel = std::nullopt)
      : lattice_(std::move(lattice)), out_(std::move(out_embeddings)), normalize_(normalize) {
    if (!lattice_) throw StateError("BilateralConvolution: null lattice");
    kernel_ = kernel ? std::move(*kernel) : BlurKernel::standard(lattice_->taps());
    if (kernel_.taps.size() != lattice_->taps()) {
      throw ShapeError("BilateralConvolution: blur kernel tap count mismatch");
    }
    if (out_ && out_->width != lattice_->dim() + 1) {
      throw ShapeError("BilateralConvolution: output embeddings have wrong width");
    }
    if (normalize_) density_ = density(*lattice_, output_embeddings(), kernel_);
  }

  const SparseLattice& lattice() const noexcept { return *lattice_; }
  const PointEmbeddings& output_embeddings() const noexcept {
    return out_ ? *out_ : lattice_->embeddings();
  }
  std::size_t output_points() const noexcept { return output_embeddings().points; }
  bool normalizes() const noexcept { return normalize_; }
  const BlurKernel& kernel() const noexcept { return kernel_; }
  /// Unfloored all-ones responses at the output points (empty without normalization).
  const std::vector<double>& density_values() const noexcept { return density_; }

  bool has_state() const noexcept { return state_.has_value(); }
  void clear_state() noexcept { state_.reset(); }

  FeatureMatrix forward(const FeatureMatrix& input, const FilterBank& filter) {
    if (input.rows() != lattice_->num_points()) {
      throw ShapeError("bcl forward: " + std::to_string(input.rows()) + " input rows for " +
                       std::to_string(lattice_->num_points()) + " lattice points");
    }
    if (filter.in_channels != input.cols()) {
      throw ShapeError("bcl forward: filter expects " + std::to_string(filter.in_channels) +
                       " channels, input has " + std::to_string(input.cols()));
    }
    FeatureMatrix splatted = splat(input, *lattice_);
    FeatureMatrix out = slice(convolve(splatted, *lattice_, filter), output_embeddings());
    if (normalize_) divide_rows(out, density_);
    state_.emplace(State{std::move(splatted), filter});
    return out;
  }

  BclGradients backward(const FeatureMatrix& grad_output) const {
    if (!state_) throw StateError("bcl backward called without a retained forward pass");
    const FilterBank& filter = state_->filter;
    require_shape(grad_output, output_points(), filter.out_channels, "bcl backward grad_output");

    FeatureMatrix upstream = grad_output;
    if (normalize_) divide_rows(upstream, density_);
    // Adjoint of slice: scatter onto vertices through the output embeddings.
    const FeatureMatrix grad_conv = splat(upstream, output_embeddings(), lattice_->num_vertices());

    const Adjacency& adj = lattice_->adjacency();
    const std::size_t c_in = filter.in_channels;
    const std::size_t c_out = filter.out_channels;
    FeatureMatrix grad_splatted(lattice_->num_vertices(), c_in);
    FilterBank grad_filter(filter.taps, c_in, c_out);
    for (std::size_t v = 0; v < adj.rows; ++v) {
      const double* g = grad_conv.row(v).data();
      for (std::size_t co = 0; co < c_out; ++co) grad_filter.bias[co] += g[co];
      for (std::size_t k = 0; k < adj.cols; ++k) {
        const std::int32_t nb = adj(v, k);
        if (nb == kMissing) continue;
        const double* src = state_->splatted.row(static_cast<std::size_t>(nb)).data();
        double* gsrc = grad_splatted.row(static_cast<std::size_t>(nb)).data();
        const std::size_t base = k * c_in * c_out;
        for (std::size_t ci = 0; ci < c_in; ++ci) {
          const double a = src[ci];
          const double* w = filter.weights.data() + base + ci * c_out;
          double* gw = grad_filter.weights.data() + base + ci * c_out;
          double acc = 0.0;
          for (std::size_t co = 0; co < c_out; ++co) {
            gw[co] += a * g[co];
            acc += w[co] * g[co];
          }
          gsrc[ci] += acc;
        }
      }
    }
    // Adjoint of splat is a slice through the input embeddings.
    return {slice(grad_splatted, lattice_->embeddings()), std::move(grad_filter)};
  }

 private:
  struct State {
    FeatureMatrix splatted;
    FilterBank filter;
  };

  std::shared_ptr<const SparseLattice> lattice_;
  std::optional<PointEmbeddings> out_;
  bool normalize_;
  BlurKernel kernel_;
  std::vector<double> density_;
  std::optional<State> state_;
};

/// Output of bcl_forward together with the layer holding its retained state.
struct BclResult {
  FeatureMatrix output;
  BilateralConvolution layer;
};

/// One bilateral convolution from points `lattice_in` to points `lattice_out`
/// (the same matrix when filtering in place).
inline BclResult bcl_forward(const FeatureMatrix& input, const FeatureMatrix& lattice_in,
                             const FeatureMatrix& lattice_out, const LatticeConfig& config,
                             const FilterBank& filter, bool normalize) {
  auto lattice = std::make_shared<const SparseLattice>(build_lattice(lattice_in, config));
  std::optional<PointEmbeddings> out;
  if (&lattice_out != &lattice_in && !(lattice_out == lattice_in)) out = lattice->embed(lattice_out);
  BilateralConvolution layer(lattice, std::move(out), normalize);
  FeatureMatrix output = layer.forward(input, filter);
  return {std::move(output), std::move(layer)};
}

inline BclGradients bcl_backward(const BilateralConvolution& layer, const FeatureMatrix& grad_output) {
  return layer.backward(grad_output);
}

/// Transports values from source points to destination points through a
/// lattice built on the source: normalized splat then slice, no convolution.
/// Destinations sharing no vertex with the source come out as zero.
inline FeatureMatrix project(const FeatureMatrix& values, const FeatureMatrix& lattice_src,
                             const FeatureMatrix& lattice_dst, const LatticeConfig& config) {
  if (values.rows() != lattice_src.rows()) {
    throw ShapeError("project: " + std::to_string(values.rows()) + " value rows for " +
                     std::to_string(lattice_src.rows()) + " source points");
  }
  if (lattice_src.cols() != lattice_dst.cols()) {
    throw ShapeError("project: source and destination lattice dimensionality differ");
  }
  const SparseLattice lattice = build_lattice(lattice_src, config);
  const PointEmbeddings dst = lattice.embed(lattice_dst);
  FeatureMatrix out = slice(splat(values, lattice), dst);
  const FeatureMatrix mass = slice(splat(FeatureMatrix(values.rows(), 1, 1.0), lattice), dst);
  divide_rows(out, mass.values());
  return out;
}

}  // namespace splatnet
