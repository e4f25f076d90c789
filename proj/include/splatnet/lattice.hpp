#pragma once

// Sparse permutohedral lattice: elevation of scaled lattice features onto the
// sum-zero hyperplane of R^{d+1}, enclosing-simplex location with barycentric
// weights, a hash table of occupied vertices, and one-ring adjacency.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <span>
#include <string>
#include <vector>

#if defined(__linux__)
#include <sys/mman.h>
#endif

#include "splatnet/error.hpp"
#include "splatnet/matrix.hpp"
#include "splatnet/parallel.hpp"

namespace splatnet {

/// Marks an unoccupied lattice vertex in embeddings and adjacency tables.
inline constexpr std::int32_t kMissing = -1;

/// Diagonal lattice scale; `scale.size()` is the lattice dimensionality d.
struct LatticeConfig {
  std::vector<double> scale;

  LatticeConfig() = default;
  explicit LatticeConfig(std::vector<double> s) : scale(std::move(s)) { validate(); }

  static LatticeConfig isotropic(std::size_t dim, double lambda) {
    return LatticeConfig(std::vector<double>(dim, lambda));
  }

  std::size_t dim() const noexcept { return scale.size(); }

  /// Every entry multiplied by `factor`.
  LatticeConfig scaled(double factor) const {
    LatticeConfig out = *this;
    for (double& s : out.scale) s *= factor;
    out.validate();
    return out;
  }

  void validate() const {
    if (scale.empty()) throw InvalidInput("lattice config: dimensionality must be >= 1");
    for (double s : scale) {
      if (!(s > 0.0) || !std::isfinite(s)) {
        throw InvalidInput("lattice config: scale entries must be finite and > 0");
      }
    }
  }

  friend bool operator==(const LatticeConfig&, const LatticeConfig&) = default;
};

/// A point on the hyperplane sum(coords) = 0 in R^{d+1}.
struct ElevatedPoint {
  std::vector<double> coords;
};

/// Integer lattice vertex. All coordinates are congruent to `remainder`
/// modulo d+1 and sum to zero.
struct LatticeKey {
  std::vector<std::int32_t> coords;
  int remainder = 0;

  friend bool operator==(const LatticeKey&, const LatticeKey&) = default;
};

/// Enclosing simplex of an elevated point: vertex_keys[k] has remainder k and
/// bary[k] is its barycentric weight.
struct SimplexEmbedding {
  std::vector<LatticeKey> vertex_keys;
  std::vector<double> bary;
};

/// One-ring tap offsets. offsets[0] is the zero vector.
struct NeighborOffsets {
  std::size_t dim = 0;
  std::size_t ring = 1;
  std::vector<std::vector<std::int32_t>> offsets;

  std::size_t size() const noexcept { return offsets.size(); }
};

/// Enumerates the 2^(d+1)-1 one-ring offsets: for each remainder r and each
/// subset S of {0..d} with |S| = r, the vector with r-(d+1) on S and r
/// elsewhere. Ordered by (r, subset bitmask).
inline NeighborOffsets neighbor_offsets(std::size_t dim, std::size_t ring = 1) {
  if (dim < 1) throw InvalidInput("neighbor_offsets: dimensionality must be >= 1");
  if (ring != 1) throw Unsupported("neighbor_offsets: only one-ring neighborhoods are supported");
  if (dim > 20) throw Unsupported("neighbor_offsets: dimensionality too large");
  const std::size_t width = dim + 1;
  const auto dp1 = static_cast<std::int32_t>(width);
  NeighborOffsets out;
  out.dim = dim;
  out.ring = ring;
  out.offsets.reserve((std::size_t{1} << width) - 1);
  for (std::size_t r = 0; r < width; ++r) {
    for (std::uint32_t mask = 0; mask < (1u << width); ++mask) {
      if (static_cast<std::size_t>(std::popcount(mask)) != r) continue;
      std::vector<std::int32_t> offset(width);
      for (std::size_t i = 0; i < width; ++i) {
        const auto ri = static_cast<std::int32_t>(r);
        offset[i] = (mask >> i) & 1u ? ri - dp1 : ri;
      }
      out.offsets.push_back(std::move(offset));
    }
  }
  return out;
}

namespace detail {

// Elevated coordinates beyond this magnitude would overflow the int32 keys.
inline constexpr double kMaxElevated = 1.0e9;

/// Maps scaled lattice features onto the sum-zero hyperplane.
class Elevator {
 public:
  explicit Elevator(const LatticeConfig& config) : factors_(config.dim()) {
    config.validate();
    const std::size_t d = config.dim();
    for (std::size_t i = 0; i < d; ++i) {
      const double fi = static_cast<double>(i);
      factors_[i] = config.scale[i] * static_cast<double>(d + 1) / std::sqrt((fi + 1.0) * (fi + 2.0));
    }
  }

  std::size_t dim() const noexcept { return factors_.size(); }

  void operator()(std::span<const double> feature, std::span<double> out) const {
    const std::size_t d = dim();
    double sum = 0.0;
    for (std::size_t i = d; i > 0; --i) {
      const double cf = feature[i - 1] * factors_[i - 1];
      out[i] = sum - static_cast<double>(i) * cf;
      sum += cf;
    }
    out[0] = sum;
  }

 private:
  std::vector<double> factors_;
};

/// Finds the enclosing simplex of an elevated point. Holds scratch buffers,
/// so one instance must not be shared between threads.
class SimplexLocator {
 public:
  explicit SimplexLocator(std::size_t dim)
      : dim_(dim), rem0_(dim + 1), rank_(dim + 1), bary_(dim + 2) {}

  std::size_t dim() const noexcept { return dim_; }

  /// Writes the (d+1) vertex keys, one row of d+1 coordinates per remainder,
  /// into `keys` and their barycentric weights into `bary`.
  void operator()(std::span<const double> elevated, std::span<std::int32_t> keys,
                  std::span<double> bary) {
    const std::size_t d = dim_;
    const std::size_t width = d + 1;
    const auto dp1 = static_cast<std::int64_t>(width);
    const double dp1f = static_cast<double>(width);

    // Nearest remainder-0 point, coordinate by coordinate.
    std::int64_t sum = 0;
    for (std::size_t i = 0; i < width; ++i) {
      const double v = elevated[i] / dp1f;
      const double up = std::ceil(v) * dp1f;
      const double down = std::floor(v) * dp1f;
      rem0_[i] = static_cast<std::int64_t>(up - elevated[i] < elevated[i] - down ? up : down);
      sum += rem0_[i];
    }
    sum /= dp1;

    // Rank coordinates by their differential; ties go to the lower index.
    std::fill(rank_.begin(), rank_.end(), 0);
    for (std::size_t i = 0; i < d; ++i) {
      const double di = elevated[i] - static_cast<double>(rem0_[i]);
      for (std::size_t j = i + 1; j < width; ++j) {
        const double dj = elevated[j] - static_cast<double>(rem0_[j]);
        if (di < dj) {
          ++rank_[i];
        } else {
          ++rank_[j];
        }
      }
    }

    // Restore sum zero by moving the most out-of-place coordinates.
    if (sum > 0) {
      for (std::size_t i = 0; i < width; ++i) {
        if (rank_[i] >= dp1 - sum) {
          rem0_[i] -= dp1;
          rank_[i] += sum - dp1;
        } else {
          rank_[i] += sum;
        }
      }
    } else if (sum < 0) {
      for (std::size_t i = 0; i < width; ++i) {
        if (rank_[i] < -sum) {
          rem0_[i] += dp1;
          rank_[i] += dp1 + sum;
        } else {
          rank_[i] += sum;
        }
      }
    }

    std::fill(bary_.begin(), bary_.end(), 0.0);
    for (std::size_t i = 0; i < width; ++i) {
      const double delta = (elevated[i] - static_cast<double>(rem0_[i])) / dp1f;
      const auto r = static_cast<std::size_t>(rank_[i]);
      bary_[d - r] += delta;
      bary_[d + 1 - r] -= delta;
    }
    bary_[0] += 1.0 + bary_[d + 1];

    for (std::size_t k = 0; k < width; ++k) {
      const auto kk = static_cast<std::int64_t>(k);
      for (std::size_t i = 0; i < width; ++i) {
        const std::int64_t shift = rank_[i] <= static_cast<std::int64_t>(d) - kk ? kk : kk - dp1;
        keys[k * width + i] = static_cast<std::int32_t>(rem0_[i] + shift);
      }
      bary[k] = bary_[k];
    }
  }

 private:
  std::size_t dim_;
  std::vector<std::int64_t> rem0_;
  std::vector<std::int64_t> rank_;
  std::vector<double> bary_;
};

inline void check_elevated(std::span<const double> elevated) {
  for (double c : elevated) {
    if (!std::isfinite(c)) throw InvalidInput("lattice features must be finite");
    if (std::abs(c) > kMaxElevated) {
      throw InvalidInput("scaled lattice features exceed the representable key range");
    }
  }
}

}  // namespace detail

/// Scales `feature` by `config.scale` and maps it onto the sum-zero hyperplane.
inline ElevatedPoint elevate(std::span<const double> feature, const LatticeConfig& config) {
  const detail::Elevator elevator(config);
  if (feature.size() != config.dim()) {
    throw ShapeError("elevate: feature length " + std::to_string(feature.size()) +
                     " != lattice dimensionality " + std::to_string(config.dim()));
  }
  for (double f : feature) {
    if (!std::isfinite(f)) throw InvalidInput("elevate: non-finite feature");
  }
  ElevatedPoint out{std::vector<double>(config.dim() + 1)};
  elevator(feature, out.coords);
  return out;
}

inline SimplexEmbedding locate(const ElevatedPoint& point) {
  if (point.coords.size() < 2) throw InvalidInput("locate: elevated point needs >= 2 coordinates");
  detail::check_elevated(point.coords);
  const std::size_t width = point.coords.size();
  detail::SimplexLocator locator(width - 1);
  std::vector<std::int32_t> keys(width * width);
  SimplexEmbedding out;
  out.bary.resize(width);
  locator(point.coords, keys, out.bary);
  out.vertex_keys.resize(width);
  for (std::size_t k = 0; k < width; ++k) {
    out.vertex_keys[k].coords.assign(keys.begin() + static_cast<std::ptrdiff_t>(k * width),
                                     keys.begin() + static_cast<std::ptrdiff_t>((k + 1) * width));
    out.vertex_keys[k].remainder = static_cast<int>(k);
  }
  return out;
}

/// Open-addressing hash table with linear probing from lattice keys to dense
/// indices. Append-only. Only the first d coordinates are hashed and compared,
/// since the last one is implied by the sum-zero constraint.
namespace detail {

/// Flat int32 storage for hash slots. Large tables ask for transparent huge
/// pages, which cuts TLB misses on the random probes.
class SlotArray {
 public:
  SlotArray() = default;
  SlotArray(const SlotArray& other) { copy_from(other); }
  SlotArray& operator=(const SlotArray& other) {
    if (this != &other) copy_from(other);
    return *this;
  }
  SlotArray(SlotArray&&) noexcept = default;
  SlotArray& operator=(SlotArray&&) noexcept = default;

  void assign(std::size_t count, std::int32_t value) {
    allocate(count);
    std::fill_n(data_.get(), count, value);
  }

  std::int32_t* data() noexcept { return data_.get(); }
  const std::int32_t* data() const noexcept { return data_.get(); }
  std::int32_t& operator[](std::size_t i) noexcept { return data_[i]; }
  std::int32_t operator[](std::size_t i) const noexcept { return data_[i]; }
  std::size_t size() const noexcept { return size_; }

 private:
  struct Free {
    void operator()(std::int32_t* p) const noexcept { std::free(p); }
  };

  static constexpr std::size_t kHugePage = std::size_t{2} << 20;

  void allocate(std::size_t count) {
    const std::size_t bytes = std::max<std::size_t>(count, 1) * sizeof(std::int32_t);
    void* p = nullptr;
    if (bytes >= 2 * kHugePage) {
      const std::size_t rounded = (bytes + kHugePage - 1) / kHugePage * kHugePage;
      p = std::aligned_alloc(kHugePage, rounded);
#if defined(__linux__) && defined(MADV_HUGEPAGE)
      if (p) madvise(p, rounded, MADV_HUGEPAGE);
#endif
    } else {
      p = std::malloc(bytes);
    }
    if (!p) throw std::bad_alloc();
    data_.reset(static_cast<std::int32_t*>(p));
    size_ = count;
  }

  void copy_from(const SlotArray& other) {
    allocate(other.size_);
    std::copy_n(other.data(), other.size_, data_.get());
  }

  std::unique_ptr<std::int32_t[], Free> data_;
  std::size_t size_ = 0;
};

}  // namespace detail

class LatticeHashTable {
 public:
  LatticeHashTable(std::size_t dim, std::size_t expected_entries) : dim_(dim), stride_(dim + 1) {
    const std::size_t capacity = std::bit_ceil(std::max<std::size_t>(16, 2 * expected_entries));
    resize_slots(capacity);
    keys_.reserve(expected_entries * (dim_ + 1));
  }

  std::size_t size() const noexcept { return count_; }
  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t dim() const noexcept { return dim_; }

  std::span<const std::int32_t> key(std::size_t index) const noexcept {
    return {keys_.data() + index * (dim_ + 1), dim_ + 1};
  }

  /// Hints the cache about an upcoming lookup of `key`.
  void prefetch(std::span<const std::int32_t> key) const noexcept {
#if defined(__GNUC__) || defined(__clang__)
    __builtin_prefetch(slots_.data() + home(key) * stride_);
#else
    (void)key;
#endif
  }

  std::int32_t find(std::span<const std::int32_t> key) const noexcept {
    std::size_t slot = home(key);
    while (true) {
      const std::int32_t* s = slots_.data() + slot * stride_;
      if (s[0] == kMissing) return kMissing;
      if (matches(s, key)) return s[0];
      slot = (slot + 1) & mask_;
    }
  }

  /// Returns the index of `key`, inserting it if absent.
  std::int32_t insert(std::span<const std::int32_t> key) {
    if (2 * (count_ + 1) > capacity_) grow();
    std::size_t slot = home(key);
    while (true) {
      std::int32_t* s = slots_.data() + slot * stride_;
      if (s[0] == kMissing) {
        const auto index = static_cast<std::int32_t>(count_++);
        keys_.insert(keys_.end(), key.begin(), key.begin() + static_cast<std::ptrdiff_t>(dim_ + 1));
        place(s, index, key);
        return index;
      }
      if (matches(s, key)) return s[0];
      slot = (slot + 1) & mask_;
    }
  }

 private:
  // Keys sum to zero, so the last coordinate is implied by the others.
  std::size_t home(std::span<const std::int32_t> key) const noexcept {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < dim_; ++i) {
      h = (h + static_cast<std::uint32_t>(key[i])) * 0x9E3779B97F4A7C15ULL;
    }
    return static_cast<std::size_t>(h >> shift_);
  }

  // Slot layout: entry index, then the first dim_ key coordinates.
  bool matches(const std::int32_t* slot, std::span<const std::int32_t> key) const noexcept {
    for (std::size_t i = 0; i < dim_; ++i) {
      if (slot[1 + i] != key[i]) return false;
    }
    return true;
  }

  void place(std::int32_t* slot, std::int32_t index, std::span<const std::int32_t> key) noexcept {
    slot[0] = index;
    for (std::size_t i = 0; i < dim_; ++i) slot[1 + i] = key[i];
  }

  void resize_slots(std::size_t capacity) {
    capacity_ = capacity;
    slots_.assign(capacity * stride_, kMissing);
    mask_ = capacity - 1;
    shift_ = 64 - static_cast<unsigned>(std::countr_zero(capacity));
  }

  void grow() {
    resize_slots(capacity_ * 2);
    for (std::size_t e = 0; e < count_; ++e) {
      const auto k = key(e);
      std::size_t slot = home(k);
      while (slots_[slot * stride_] != kMissing) slot = (slot + 1) & mask_;
      place(slots_.data() + slot * stride_, static_cast<std::int32_t>(e), k);
    }
  }

  std::size_t dim_;
  std::size_t stride_;
  std::size_t count_ = 0;
  std::size_t capacity_ = 0;
  std::size_t mask_ = 0;
  unsigned shift_ = 0;
  detail::SlotArray slots_;
  std::vector<std::int32_t> keys_;
};

/// Per-point simplex embeddings with vertices resolved to dense indices
/// (or kMissing when a vertex is not part of the lattice).
struct PointEmbeddings {
  std::size_t points = 0;
  std::size_t width = 0;
  std::vector<std::int32_t> vertex;
  std::vector<double> weight;

  std::span<const std::int32_t> vertices_of(std::size_t p) const noexcept {
    return {vertex.data() + p * width, width};
  }
  std::span<const double> weights_of(std::size_t p) const noexcept {
    return {weight.data() + p * width, width};
  }

  friend bool operator==(const PointEmbeddings&, const PointEmbeddings&) = default;
};

/// V x K neighbor table; column 0 is the vertex itself.
struct Adjacency {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::int32_t> index;

  std::int32_t operator()(std::size_t v, std::size_t k) const noexcept { return index[v * cols + k]; }
  std::span<const std::int32_t> row(std::size_t v) const noexcept {
    return {index.data() + v * cols, cols};
  }

  /// Fraction of non-missing entries.
  double fill_rate() const noexcept {
    if (index.empty()) return 0.0;
    const auto present = std::count_if(index.begin(), index.end(),
                                       [](std::int32_t i) { return i != kMissing; });
    return static_cast<double>(present) / static_cast<double>(index.size());
  }

  friend bool operator==(const Adjacency&, const Adjacency&) = default;
};

/// Immutable sparse lattice over a set of points.
class SparseLattice {
 public:
  const LatticeConfig& config() const noexcept { return config_; }
  std::size_t dim() const noexcept { return config_.dim(); }
  std::size_t num_points() const noexcept { return embeddings_.points; }
  std::size_t num_vertices() const noexcept { return table_.size(); }
  std::size_t taps() const noexcept { return offsets_.size(); }

  const PointEmbeddings& embeddings() const noexcept { return embeddings_; }
  const Adjacency& adjacency() const noexcept { return adjacency_; }
  const NeighborOffsets& offsets() const noexcept { return offsets_; }
  const LatticeHashTable& table() const noexcept { return table_; }

  std::int32_t find(std::span<const std::int32_t> key) const noexcept { return table_.find(key); }

  LatticeKey key(std::size_t vertex) const {
    auto k = table_.key(vertex);
    LatticeKey out{{k.begin(), k.end()}, 0};
    const auto dp1 = static_cast<std::int32_t>(dim() + 1);
    out.remainder = ((k[0] % dp1) + dp1) % dp1;
    return out;
  }

  /// Embeds another point set against this lattice's vertex set. Vertices of
  /// the enclosing simplex that are not occupied resolve to kMissing.
  PointEmbeddings embed(const FeatureMatrix& points) const {
    if (points.cols() != dim()) {
      throw ShapeError("embed: points have " + std::to_string(points.cols()) +
                       " columns, lattice dimensionality is " + std::to_string(dim()));
    }
    if (!points.all_finite()) throw InvalidInput("embed: non-finite lattice features");
    const std::size_t width = dim() + 1;
    PointEmbeddings out;
    out.points = points.rows();
    out.width = width;
    out.vertex.resize(out.points * width);
    out.weight.resize(out.points * width);
    const detail::Elevator elevator(config_);
    parallel_for(out.points, [&](std::size_t begin, std::size_t end) {
      detail::SimplexLocator locator(dim());
      std::vector<double> elevated(width);
      std::vector<std::int32_t> keys(width * width);
      for (std::size_t p = begin; p < end; ++p) {
        elevator(points.row(p), elevated);
        detail::check_elevated(elevated);
        locator(elevated, keys, std::span<double>(out.weight.data() + p * width, width));
        for (std::size_t k = 0; k < width; ++k) {
          out.vertex[p * width + k] = table_.find(std::span<const std::int32_t>(keys).subspan(k * width, width));
        }
      }
    });
    return out;
  }

  friend SparseLattice build_lattice(const FeatureMatrix& features, const LatticeConfig& config);

 private:
  SparseLattice(LatticeConfig config, std::size_t expected)
      : config_(std::move(config)),
        table_(config_.dim(), expected),
        offsets_(neighbor_offsets(config_.dim())) {}

  LatticeConfig config_;
  LatticeHashTable table_;
  NeighborOffsets offsets_;
  PointEmbeddings embeddings_;
  Adjacency adjacency_;
};

/// Builds the sparse lattice of the n x d lattice features under `config`.
/// Dense indices are assigned in order of first touch (ascending point index,
/// then ascending remainder), so identical inputs give identical lattices.
inline SparseLattice build_lattice(const FeatureMatrix& features, const LatticeConfig& config) {
  config.validate();
  const std::size_t n = features.rows();
  const std::size_t d = config.dim();
  if (n == 0) throw EmptyInput("build_lattice: no points");
  if (features.cols() != d) {
    throw ShapeError("build_lattice: features have " + std::to_string(features.cols()) +
                     " columns, lattice dimensionality is " + std::to_string(d));
  }
  if (!features.all_finite()) throw InvalidInput("build_lattice: non-finite lattice features");

  const std::size_t width = d + 1;
  SparseLattice lattice(config, n);  // grows if V > n
  PointEmbeddings& emb = lattice.embeddings_;
  emb.points = n;
  emb.width = width;
  emb.vertex.resize(n * width);
  emb.weight.resize(n * width);

  // Points are located a few steps ahead of insertion so the slot prefetches
  // have time to land. Insertion order, and so vertex numbering, is unchanged.
  constexpr std::size_t kAhead = 4;
  const detail::Elevator elevator(config);
  detail::SimplexLocator locator(d);
  std::vector<double> elevated(width);
  std::vector<std::int32_t> ring(kAhead * width * width);
  const std::span<const std::int32_t> ring_view(ring);
  auto stage = [&](std::size_t p) {
    const std::span<std::int32_t> keys(ring.data() + (p % kAhead) * width * width, width * width);
    elevator(features.row(p), elevated);
    detail::check_elevated(elevated);
    locator(elevated, keys, std::span<double>(emb.weight.data() + p * width, width));
    for (std::size_t k = 0; k < width; ++k) lattice.table_.prefetch(keys.subspan(k * width, width));
  };
  for (std::size_t p = 0; p < std::min(n, kAhead - 1); ++p) stage(p);
  for (std::size_t p = 0; p < n; ++p) {
    if (p + kAhead - 1 < n) stage(p + kAhead - 1);
    const auto keys = ring_view.subspan((p % kAhead) * width * width, width * width);
    for (std::size_t k = 0; k < width; ++k) {
      emb.vertex[p * width + k] = lattice.table_.insert(keys.subspan(k * width, width));
    }
  }

  const std::size_t vertices = lattice.table_.size();
  const std::size_t taps = lattice.offsets_.size();
  const auto& offsets = lattice.offsets_.offsets;
  // The one-ring is closed under negation: look up one offset of each +/-
  // pair and fill both directions. Every cell still has exactly one writer.
  std::vector<std::size_t> half, opposite;
  for (std::size_t k = 1; k < taps; ++k) {
    std::vector<std::int32_t> neg(width);
    for (std::size_t i = 0; i < width; ++i) neg[i] = -offsets[k][i];
    const auto kn = static_cast<std::size_t>(std::find(offsets.begin(), offsets.end(), neg) - offsets.begin());
    if (k < kn) {
      half.push_back(k);
      opposite.push_back(kn);
    }
  }
  Adjacency& adj = lattice.adjacency_;
  adj.rows = vertices;
  adj.cols = taps;
  adj.index.assign(vertices * taps, kMissing);
  parallel_for(vertices, [&](std::size_t begin, std::size_t end) {
    // Lookups for vertex v+1 are issued before v is resolved so the slot
    // loads overlap.
    std::vector<std::int32_t> neighbors(2 * half.size() * width);
    const std::span<const std::int32_t> view(neighbors);
    auto stage = [&](std::size_t v) {
      const auto key = lattice.table_.key(v);
      std::int32_t* out = neighbors.data() + (v % 2) * half.size() * width;
      for (std::size_t h = 0; h < half.size(); ++h) {
        const auto& offset = offsets[half[h]];
        for (std::size_t i = 0; i < width; ++i) out[h * width + i] = key[i] + offset[i];
        lattice.table_.prefetch(std::span<const std::int32_t>(out + h * width, width));
      }
    };
    if (begin == end) return;
    stage(begin);
    for (std::size_t v = begin; v < end; ++v) {
      if (v + 1 < end) stage(v + 1);
      adj.index[v * taps] = static_cast<std::int32_t>(v);
      const auto mine = view.subspan((v % 2) * half.size() * width, half.size() * width);
      for (std::size_t h = 0; h < half.size(); ++h) {
        const std::int32_t u = lattice.table_.find(mine.subspan(h * width, width));
        if (u == kMissing) continue;
        adj.index[v * taps + half[h]] = u;
        adj.index[static_cast<std::size_t>(u) * taps + opposite[h]] = static_cast<std::int32_t>(v);
      }
    }
  });
  return lattice;
}

}  // namespace splatnet
