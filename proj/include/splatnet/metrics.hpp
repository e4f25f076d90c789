#pragma once

// Segmentation metrics: per-class IoU with its class average, and the
// part-segmentation class-average / instance-average mIoU pair.

#include <algorithm>
#include <cstddef>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splatnet/error.hpp"

namespace splatnet {

/// Per-class intersection/union counts.
class SegMetrics {
 public:
  explicit SegMetrics(std::size_t num_classes, std::optional<int> ignore_label = std::nullopt)
      : intersection_(num_classes, 0), union_(num_classes, 0), ignore_(ignore_label) {}

  std::size_t num_classes() const noexcept { return intersection_.size(); }
  std::size_t evaluated_points() const noexcept { return evaluated_; }

  /// Points whose ground truth equals the ignore label are skipped. Predictions
  /// outside [0, num_classes) count only against the ground-truth class.
  void add(std::span<const int> pred, std::span<const int> gt) {
    if (pred.size() != gt.size()) {
      throw ShapeError("IoU: " + std::to_string(pred.size()) + " predictions for " +
                       std::to_string(gt.size()) + " ground-truth labels");
    }
    const auto classes = static_cast<int>(num_classes());
    for (std::size_t i = 0; i < gt.size(); ++i) {
      if (ignore_ && gt[i] == *ignore_) continue;
      if (gt[i] < 0 || gt[i] >= classes) {
        throw InvalidInput("IoU: ground-truth label " + std::to_string(gt[i]) + " out of range");
      }
      ++evaluated_;
      const auto g = static_cast<std::size_t>(gt[i]);
      ++union_[g];
      if (pred[i] == gt[i]) {
        ++intersection_[g];
      } else if (pred[i] >= 0 && pred[i] < classes) {
        ++union_[static_cast<std::size_t>(pred[i])];
      }
    }
  }

  std::size_t intersection(std::size_t c) const { return intersection_.at(c); }
  std::size_t union_count(std::size_t c) const { return union_.at(c); }

 private:
  std::vector<std::size_t> intersection_;
  std::vector<std::size_t> union_;
  std::optional<int> ignore_;
  std::size_t evaluated_ = 0;
};

struct IoUReport {
  /// nullopt for classes whose union is empty; those are left out of `average`.
  std::vector<std::optional<double>> per_class;
  double average = 0.0;
  std::size_t evaluated_points = 0;
};

inline IoUReport summarize(const SegMetrics& metrics) {
  if (metrics.evaluated_points() == 0) throw EmptyEvaluation("IoU: no labeled points to evaluate");
  IoUReport report;
  report.evaluated_points = metrics.evaluated_points();
  // Extended precision so simple fractions round correctly at the end.
  long double sum = 0.0L;
  std::size_t present = 0;
  for (std::size_t c = 0; c < metrics.num_classes(); ++c) {
    if (metrics.union_count(c) == 0) {
      report.per_class.emplace_back(std::nullopt);
      continue;
    }
    const double iou = static_cast<double>(metrics.intersection(c)) /
                       static_cast<double>(metrics.union_count(c));
    report.per_class.emplace_back(iou);
    sum += static_cast<long double>(metrics.intersection(c)) /
           static_cast<long double>(metrics.union_count(c));
    ++present;
  }
  report.average = static_cast<double>(sum / static_cast<long double>(present));
  return report;
}

inline IoUReport compute_iou(std::span<const int> pred, std::span<const int> gt,
                             std::size_t num_classes,
                             std::optional<int> ignore_label = std::nullopt) {
  SegMetrics metrics(num_classes, ignore_label);
  metrics.add(pred, gt);
  return summarize(metrics);
}

/// Human-readable table.
inline std::string format_iou_table(const IoUReport& report) {
  std::string out = "class  iou\n";
  char buf[64];
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    if (report.per_class[c]) {
      std::snprintf(buf, sizeof buf, "%-6zu %.4f\n", c, *report.per_class[c]);
    } else {
      std::snprintf(buf, sizeof buf, "%-6zu absent (excluded)\n", c);
    }
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "average %.4f\n", report.average);
  out += buf;
  return out;
}

/// `class,iou` rows for the evaluated classes, then `average,<value>`.
inline std::string format_iou_csv(const IoUReport& report) {
  std::string out = "class,iou\n";
  char buf[64];
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    if (!report.per_class[c]) continue;
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", c, *report.per_class[c]);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "average,%.17g\n", report.average);
  out += buf;
  return out;
}

/// mIoU of one object, already computed.
struct ObjectScore {
  std::string category;
  double miou = 0.0;
};

/// Predicted and ground-truth part labels of one object.
struct ObjectLabels {
  std::string category;
  std::vector<int> pred;
  std::vector<int> gt;
};

struct CategoryScore {
  std::string category;
  double miou = 0.0;
  std::size_t objects = 0;
};

struct ShapeNetReport {
  double class_average = 0.0;
  double instance_average = 0.0;
  std::vector<CategoryScore> per_category;
  std::vector<std::string> warnings;
};

/// Object mIoUs are averaged within each category; the class average is the
/// mean over categories and the instance average the mean over objects.
/// Declared categories without objects are skipped with a warning.
inline ShapeNetReport summarize_shapenet(std::span<const ObjectScore> objects,
                                         std::span<const std::string> declared_categories = {}) {
  std::map<std::string, std::pair<long double, std::size_t>> by_category;
  for (const auto& c : declared_categories) by_category.try_emplace(c, 0.0, 0);
  long double total = 0.0L;
  for (const auto& o : objects) {
    auto& slot = by_category[o.category];
    slot.first += o.miou;
    ++slot.second;
    total += o.miou;
  }
  ShapeNetReport report;
  long double class_sum = 0.0L;
  for (const auto& [name, acc] : by_category) {
    if (acc.second == 0) {
      report.warnings.push_back("category '" + name + "' has no objects; excluded");
      continue;
    }
    const long double m = acc.first / static_cast<long double>(acc.second);
    report.per_category.push_back({name, static_cast<double>(m), acc.second});
    class_sum += m;
  }
  if (report.per_category.empty()) throw EmptyEvaluation("shapenet mIoU: no objects");
  report.class_average = static_cast<double>(class_sum / static_cast<long double>(report.per_category.size()));
  report.instance_average = static_cast<double>(total / static_cast<long double>(objects.size()));
  return report;
}

/// Per-object mIoU over the parts present in the prediction or ground truth.
inline ShapeNetReport shapenet_miou(std::span<const ObjectLabels> objects,
                                    std::span<const std::string> declared_categories = {},
                                    std::optional<int> ignore_label = std::nullopt) {
  std::vector<ObjectScore> scores;
  scores.reserve(objects.size());
  for (const auto& o : objects) {
    int max_label = 0;
    for (int l : o.gt) {
      if (!ignore_label || l != *ignore_label) max_label = std::max(max_label, l);
    }
    for (int l : o.pred) max_label = std::max(max_label, l);
    const auto report = compute_iou(o.pred, o.gt, static_cast<std::size_t>(max_label) + 1, ignore_label);
    scores.push_back({o.category, report.average});
  }
  return summarize_shapenet(scores, declared_categories);
}

}  // namespace splatnet
