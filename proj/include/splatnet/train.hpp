#pragma once

// Point-wise cross-entropy training with Adam, point-cloud augmentation,
// crop sampling, and gradient accumulation over batches of clouds.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iterator>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "splatnet/cloud.hpp"
#include "splatnet/dataset.hpp"
#include "splatnet/error.hpp"
#include "splatnet/matrix.hpp"
#include "splatnet/network.hpp"
#include "splatnet/optimizer.hpp"

namespace splatnet {

inline constexpr double kProbabilityFloor = 1e-12;

struct AugmentConfig {
  bool rotate = false;
  bool rotate_full = false;  // uniform SO(3) instead of about the gravity axis
  std::string gravity_axis = "y";
  bool translate = false;
  double translate_range = 0.1;
  bool scale = false;
  double scale_min = 0.9;
  double scale_max = 1.1;
  bool color_jitter = false;
  double jitter_range = 0.05;

  bool any() const noexcept { return rotate || translate || scale || color_jitter; }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 1;
  std::size_t max_iterations = 1000;
  AugmentConfig augment;
  std::optional<std::size_t> sample_size;
  std::uint64_t seed = 0;
  std::optional<int> ignore_label;
  std::size_t log_interval = 10;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
  std::size_t val_interval = 0;         // 0: no validation
  std::size_t patience = 0;             // 0: never stop early

  AdamConfig adam() const { return {learning_rate, adam_beta1, adam_beta2, adam_epsilon}; }

  void validate() const {
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
    adam().validate();
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (sample_size && *sample_size < 1) throw ConfigError("sample_size must be >= 1");
    if (augment.scale && !(augment.scale_min > 0.0 && augment.scale_min <= augment.scale_max)) {
      throw ConfigError("scale_min/scale_max must satisfy 0 < min <= max");
    }
    if (augment.translate_range < 0.0 || augment.jitter_range < 0.0) {
      throw ConfigError("augmentation ranges must be >= 0");
    }
  }
};

struct LossResult {
  double loss = 0.0;
  FeatureMatrix grad;  // d loss / d probabilities
  std::size_t counted = 0;
  std::size_t correct = 0;  // argmax hits among counted points
};

/// Mean over non-ignored points of -log(max(p[label], 1e-12)).
inline LossResult cross_entropy_loss(const FeatureMatrix& probabilities, std::span<const int> labels,
                                     std::optional<int> ignore_label = std::nullopt) {
  const std::size_t n = probabilities.rows();
  const std::size_t classes = probabilities.cols();
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match rows");
  LossResult out;
  out.grad = FeatureMatrix(n, classes);
  for (std::size_t r = 0; r < n; ++r) {
    if (ignore_label && labels[r] == *ignore_label) continue;
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes) {
      throw InvalidInput("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    }
    ++out.counted;
  }
  if (out.counted == 0) throw DegenerateBatch("cross_entropy: every point is ignored");
  const double inv = 1.0 / static_cast<double>(out.counted);
  for (std::size_t r = 0; r < n; ++r) {
    if (ignore_label && labels[r] == *ignore_label) continue;
    const auto label = static_cast<std::size_t>(labels[r]);
    const double p = probabilities(r, label);
    if (p > kProbabilityFloor) {
      out.loss -= std::log(p) * inv;
      out.grad(r, label) = -inv / p;
    } else {
      out.loss -= std::log(kProbabilityFloor) * inv;
    }
    const auto row = probabilities.row(r);
    if (static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin()) == label) {
      ++out.correct;
    }
  }
  return out;
}

namespace detail {

inline void rotate_triplet(PointCloud& cloud, const char* a, const char* b, const char* c,
                           const std::array<std::array<double, 3>, 3>& rot) {
  if (!cloud.has(a)) return;
  auto xs = cloud.channel(a);
  auto ys = cloud.channel(b);
  auto zs = cloud.channel(c);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const double v[3] = {xs[i], ys[i], zs[i]};
    xs[i] = rot[0][0] * v[0] + rot[0][1] * v[1] + rot[0][2] * v[2];
    ys[i] = rot[1][0] * v[0] + rot[1][1] * v[1] + rot[1][2] * v[2];
    zs[i] = rot[2][0] * v[0] + rot[2][1] * v[1] + rot[2][2] * v[2];
  }
}

inline std::array<std::array<double, 3>, 3> axis_rotation(std::size_t axis, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const std::size_t i = (axis + 1) % 3;
  const std::size_t j = (axis + 2) % 3;
  std::array<std::array<double, 3>, 3> r{};
  r[axis][axis] = 1.0;
  r[i][i] = c;
  r[i][j] = -s;
  r[j][i] = s;
  r[j][j] = c;
  return r;
}

// Rotation from a uniformly distributed unit quaternion.
inline std::array<std::array<double, 3>, 3> random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  double q[4];
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& v : q) {
      v = g(rng);
      norm += v * v;
    }
  } while (norm < 1e-12);
  norm = std::sqrt(norm);
  for (double& v : q) v /= norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {{{1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)},
           {2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)},
           {2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)}}};
}

inline std::size_t axis_index(const std::string& axis) {
  if (axis == "x") return 0;
  if (axis == "y") return 1;
  if (axis == "z") return 2;
  throw ConfigError("gravity_axis must be x, y or z");
}

}  // namespace detail

/// Applies, in order: rotation (about the gravity axis, or uniform SO(3)),
/// translation uniform in [-r, r]^3, isotropic scaling uniform in
/// [scale_min, scale_max], and additive color jitter clamped to [0, 1].
/// Normals rotate with positions; labels are untouched.
inline PointCloud augment(const PointCloud& cloud, const AugmentConfig& config, std::mt19937_64& rng) {
  if (config.color_jitter && !(cloud.has("red") && cloud.has("green") && cloud.has("blue"))) {
    throw ConfigError("color jitter requested but the cloud has no rgb channels");
  }
  PointCloud out = cloud;
  if (!config.any()) return out;
  const std::size_t n = out.size();
  if (config.rotate) {
    const auto rot = config.rotate_full
                         ? detail::random_rotation(rng)
                         : detail::axis_rotation(detail::axis_index(config.gravity_axis),
                                                 std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng));
    detail::rotate_triplet(out, "x", "y", "z", rot);
    detail::rotate_triplet(out, "nx", "ny", "nz", rot);
  }
  if (config.translate) {
    std::uniform_real_distribution<double> d(-config.translate_range, config.translate_range);
    for (const char* axis : {"x", "y", "z"}) {
      const double t = d(rng);
      for (double& v : out.channel(axis)) v += t;
    }
  }
  if (config.scale) {
    const double s = std::uniform_real_distribution<double>(config.scale_min, config.scale_max)(rng);
    for (const char* axis : {"x", "y", "z"}) {
      for (double& v : out.channel(axis)) v *= s;
    }
  }
  if (config.color_jitter) {
    std::uniform_real_distribution<double> d(-config.jitter_range, config.jitter_range);
    for (const char* c : {"red", "green", "blue"}) {
      auto col = out.channel(c);
      for (std::size_t i = 0; i < n; ++i) col[i] = std::clamp(col[i] + d(rng), 0.0, 1.0);
    }
  }
  return out;
}

/// Uniform random subset of `sample_size` points without replacement, in
/// ascending index order. The whole cloud when it is not larger.
inline PointCloud sample_crop(const PointCloud& cloud, std::size_t sample_size, std::mt19937_64& rng) {
  if (cloud.size() <= sample_size) return cloud;
  std::vector<std::size_t> all(cloud.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> picked;
  picked.reserve(sample_size);
  std::sample(all.begin(), all.end(), std::back_inserter(picked), sample_size, rng);
  return cloud.subset(picked);
}

struct TrainLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHooks {
  std::function<void(const TrainLogEntry&)> on_log;
  /// Called every checkpoint_interval iterations and once at the end.
  std::function<void(const Model&, const OptimizerState&, std::size_t iteration)> on_checkpoint;
};

struct TrainResult {
  Model model;
  OptimizerState optimizer;
  std::vector<TrainLogEntry> log;  // every iteration
  std::size_t iterations = 0;      // last completed iteration
  bool stopped_early = false;
  std::vector<double> validation_losses;
};

/// Random stream for one (iteration, batch slot), independent of how many
/// iterations ran before it, so resumed runs replay the same stream.
inline std::mt19937_64 iteration_rng(std::uint64_t seed, std::size_t iteration, std::size_t slot) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(iteration), static_cast<std::uint32_t>(iteration >> 32),
                    static_cast<std::uint32_t>(slot)};
  return std::mt19937_64(seq);
}

/// Order in which the clouds of epoch `epoch` are visited.
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t count) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), 0x5eedu};
  std::mt19937_64 rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Mean inference-mode cross-entropy and point accuracy over a dataset.
inline std::pair<double, double> evaluate(const Model& model, const Dataset& data,
                                          std::optional<int> ignore_label = std::nullopt) {
  if (data.empty()) throw EmptyInput("evaluate: empty dataset");
  double loss = 0.0;
  std::size_t correct = 0;
  std::size_t counted = 0;
  for (const auto& cloud : data.clouds) {
    const auto probs = model.infer(cloud);
    const auto r = cross_entropy_loss(probs, cloud.labels(), ignore_label);
    loss += r.loss;
    correct += r.correct;
    counted += r.counted;
  }
  return {loss / static_cast<double>(data.size()),
          static_cast<double>(correct) / static_cast<double>(counted)};
}

/// Iterations start_iteration+1 .. max_iterations of: pick batch_size clouds
/// (epoch-shuffled), crop, augment, forward, loss, backward, accumulate, then
/// one Adam step on the batch-mean gradient. Single-threaded runs are fully
/// determined by (seed, config, data).
inline TrainResult train_loop(Model model, const Dataset& train, const TrainConfig& config,
                              const Dataset* validation = nullptr,
                              std::optional<OptimizerState> resume_state = std::nullopt,
                              std::size_t start_iteration = 0, const TrainHooks& hooks = {}) {
  config.validate();
  if (train.empty()) throw EmptyInput("train_loop: empty training set");
  for (const auto& c : train.clouds) {
    if (!c.has_labels()) throw ConfigError("train_loop: training cloud without labels");
  }

  TrainResult result;
  result.optimizer = resume_state ? std::move(*resume_state) : OptimizerState::for_params(model.params);
  if (!result.optimizer.matches(model.params)) throw ConfigError("optimizer state does not match model");
  const auto start = std::chrono::steady_clock::now();
  const std::size_t count = train.size();
  std::size_t cached_epoch = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> order;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  std::size_t it = start_iteration;
  while (it < config.max_iterations) {
    ++it;
    Parameters grad_sum = model.params.zeros_like();
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::size_t counted = 0;
    for (std::size_t slot = 0; slot < config.batch_size; ++slot) {
      const std::size_t draw = (it - 1) * config.batch_size + slot;
      const std::size_t epoch = draw / count;
      if (epoch != cached_epoch) {
        order = epoch_order(config.seed, epoch, count);
        cached_epoch = epoch;
      }
      const PointCloud& source = train.clouds[order[draw % count]];
      auto rng = iteration_rng(config.seed, it, slot);
      PointCloud cloud = config.sample_size ? sample_crop(source, *config.sample_size, rng) : source;
      cloud = augment(cloud, config.augment, rng);

      const Tape tape = forward(model.spec, model.params, make_input(cloud, model.config), Mode::Train);
      update_running_statistics(model.spec, model.params, tape);
      const LossResult loss = cross_entropy_loss(tape.probabilities(), cloud.labels(), config.ignore_label);
      const NetworkGradients grads = backward(model.spec, model.params, tape, loss.grad);
      for (std::size_t t = 0; t < grad_sum.tensors.size(); ++t) {
        auto& dst = grad_sum.tensors[t].values;
        const auto& src = grads.params.tensors[t].values;
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }
      loss_sum += loss.loss;
      correct += loss.correct;
      counted += loss.counted;
    }
    const double inv_batch = 1.0 / static_cast<double>(config.batch_size);
    for (auto& t : grad_sum.tensors) {
      for (double& v : t.values) v *= inv_batch;
    }
    try {
      adam_step(model.params, grad_sum, result.optimizer, config.adam());
    } catch (const NonFiniteGradient& e) {
      throw NonFiniteGradient(std::string(e.what()) + " at iteration " + std::to_string(it), it);
    }

    TrainLogEntry entry{it, loss_sum * inv_batch,
                        static_cast<double>(correct) / static_cast<double>(counted),
                        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    result.log.push_back(entry);
    result.iterations = it;
    if (hooks.on_log && config.log_interval > 0 &&
        (it % config.log_interval == 0 || it == config.max_iterations)) {
      hooks.on_log(entry);
    }
    if (hooks.on_checkpoint && config.checkpoint_interval > 0 && it % config.checkpoint_interval == 0 &&
        it != config.max_iterations) {
      hooks.on_checkpoint(model, result.optimizer, it);
    }
    if (validation && !validation->empty() && config.val_interval > 0 && it % config.val_interval == 0) {
      const double val_loss = evaluate(model, *validation, config.ignore_label).first;
      result.validation_losses.push_back(val_loss);
      if (val_loss < best_val) {
        best_val = val_loss;
        stale = 0;
      } else if (config.patience > 0 && ++stale >= config.patience) {
        result.stopped_early = true;
        break;
      }
    }
  }
  if (hooks.on_checkpoint) hooks.on_checkpoint(model, result.optimizer, result.iterations);
  result.model = std::move(model);
  return result;
}

}  // namespace splatnet
