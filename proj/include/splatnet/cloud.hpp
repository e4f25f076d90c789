#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "splatnet/error.hpp"
#include "splatnet/matrix.hpp"

namespace splatnet {

/// Point set with named scalar channels (x, y, z, nx, ny, nz, red, green,
/// blue, height, or anything else) and an optional integer label per point.
class PointCloud {
 public:
  explicit PointCloud(std::size_t points = 0) : points_(points) {}

  /// Cloud with x, y, z channels taken from an n x 3 matrix.
  static PointCloud from_positions(const FeatureMatrix& xyz) {
    if (xyz.cols() != 3) throw ShapeError("from_positions: expected 3 columns");
    PointCloud cloud(xyz.rows());
    static constexpr const char* kNames[] = {"x", "y", "z"};
    for (std::size_t c = 0; c < 3; ++c) {
      std::vector<double> col(xyz.rows());
      for (std::size_t r = 0; r < xyz.rows(); ++r) col[r] = xyz(r, c);
      cloud.set_channel(kNames[c], std::move(col));
    }
    return cloud;
  }

  std::size_t size() const noexcept { return points_; }
  const std::vector<std::string>& channel_names() const noexcept { return names_; }

  bool has(std::string_view name) const noexcept { return find(name).has_value(); }

  std::span<const double> channel(std::string_view name) const {
    auto i = find(name);
    if (!i) throw ConfigError("point cloud has no channel '" + std::string(name) + "'");
    return columns_[*i];
  }
  std::span<double> channel(std::string_view name) {
    auto i = find(name);
    if (!i) throw ConfigError("point cloud has no channel '" + std::string(name) + "'");
    return columns_[*i];
  }

  /// Adds or replaces a channel.
  void set_channel(std::string name, std::vector<double> values) {
    if (values.size() != points_) {
      throw ShapeError("channel '" + name + "' has " + std::to_string(values.size()) +
                       " values for " + std::to_string(points_) + " points");
    }
    if (name == "label") throw ConfigError("'label' is reserved for integer labels");
    if (auto i = find(name)) {
      columns_[*i] = std::move(values);
    } else {
      names_.push_back(std::move(name));
      columns_.push_back(std::move(values));
    }
  }

  void remove_channel(std::string_view name) {
    if (auto i = find(name)) {
      names_.erase(names_.begin() + static_cast<std::ptrdiff_t>(*i));
      columns_.erase(columns_.begin() + static_cast<std::ptrdiff_t>(*i));
    }
  }

  bool has_labels() const noexcept { return labels_.has_value(); }
  const std::vector<int>& labels() const {
    if (!labels_) throw ConfigError("point cloud has no label channel");
    return *labels_;
  }
  void set_labels(std::vector<int> labels) {
    if (labels.size() != points_) throw ShapeError("label count does not match point count");
    labels_ = std::move(labels);
  }
  void clear_labels() noexcept { labels_.reset(); }

  /// Rows restricted to `indices`, in that order.
  PointCloud subset(std::span<const std::size_t> indices) const {
    PointCloud out(indices.size());
    for (std::size_t c = 0; c < names_.size(); ++c) {
      std::vector<double> col(indices.size());
      for (std::size_t i = 0; i < indices.size(); ++i) col[i] = columns_[c].at(indices[i]);
      out.names_.push_back(names_[c]);
      out.columns_.push_back(std::move(col));
    }
    if (labels_) {
      std::vector<int> lab(indices.size());
      for (std::size_t i = 0; i < indices.size(); ++i) lab[i] = labels_->at(indices[i]);
      out.labels_ = std::move(lab);
    }
    return out;
  }

  /// Checks channel invariants: finite values, colors in [0, 1].
  void validate() const {
    for (std::size_t c = 0; c < names_.size(); ++c) {
      const bool color = names_[c] == "red" || names_[c] == "green" || names_[c] == "blue";
      for (double v : columns_[c]) {
        if (!std::isfinite(v)) throw InvalidInput("channel '" + names_[c] + "' has non-finite values");
        if (color && (v < 0.0 || v > 1.0)) {
          throw InvalidInput("color channel '" + names_[c] + "' outside [0, 1]");
        }
      }
    }
  }

  friend bool operator==(const PointCloud&, const PointCloud&) = default;

 private:
  std::optional<std::size_t> find(std::string_view name) const noexcept {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return std::nullopt;
  }

  std::size_t points_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> columns_;
  std::optional<std::vector<int>> labels_;
};

/// Expands channel group names: xyz, normal(s), rgb/color. Other names pass
/// through unchanged.
inline std::vector<std::string> expand_channels(std::span<const std::string> names) {
  std::vector<std::string> out;
  for (const auto& n : names) {
    if (n == "xyz") {
      out.insert(out.end(), {"x", "y", "z"});
    } else if (n == "normal" || n == "normals") {
      out.insert(out.end(), {"nx", "ny", "nz"});
    } else if (n == "rgb" || n == "color") {
      out.insert(out.end(), {"red", "green", "blue"});
    } else {
      out.push_back(n);
    }
  }
  return out;
}

/// Adds a `height` channel (coordinate along `axis` minus its minimum) when
/// the cloud lacks one.
inline void ensure_height(PointCloud& cloud, const std::string& axis = "y") {
  if (cloud.has("height")) return;
  const auto up = cloud.channel(axis);
  std::vector<double> h(up.begin(), up.end());
  if (!h.empty()) {
    const double floor = *std::min_element(h.begin(), h.end());
    for (double& v : h) v -= floor;
  }
  cloud.set_channel("height", std::move(h));
}

/// n x k matrix of the requested channels (groups expanded). A missing
/// `height` is derived from the gravity axis; any other missing channel,
/// normals included, is a ConfigError.
inline FeatureMatrix select_channels(const PointCloud& cloud, std::span<const std::string> names,
                                     const std::string& gravity_axis = "y") {
  const auto expanded = expand_channels(names);
  if (expanded.empty()) throw ConfigError("no channels selected");
  FeatureMatrix out(cloud.size(), expanded.size());
  std::optional<PointCloud> with_height;
  for (std::size_t c = 0; c < expanded.size(); ++c) {
    std::span<const double> col;
    if (expanded[c] == "height" && !cloud.has("height")) {
      if (!with_height) {
        with_height = cloud;
        ensure_height(*with_height, gravity_axis);
      }
      col = with_height->channel("height");
    } else {
      col = cloud.channel(expanded[c]);
    }
    for (std::size_t r = 0; r < cloud.size(); ++r) out(r, c) = col[r];
  }
  return out;
}

}  // namespace splatnet
