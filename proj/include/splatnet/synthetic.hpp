#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "splatnet/cloud.hpp"
#include "splatnet/dataset.hpp"

namespace splatnet {

struct BlobOptions {
  std::size_t points = 256;
  double separation = 1.0;   // distance between blob centres along x
  double spread = 0.15;      // per-axis standard deviation
  double centre_jitter = 0.1;
};

/// Two Gaussian blobs per cloud, labeled by blob: class 0 around
/// (-separation/2, 0, 0) and class 1 around (+separation/2, 0, 0), each
/// centre jittered per cloud. Points alternate between blobs.
inline PointCloud make_blob_cloud(const BlobOptions& opt, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, opt.spread);
  std::uniform_real_distribution<double> jitter(-opt.centre_jitter, opt.centre_jitter);
  double centres[2][3];
  for (int b = 0; b < 2; ++b) {
    centres[b][0] = (b == 0 ? -0.5 : 0.5) * opt.separation + jitter(rng);
    centres[b][1] = jitter(rng);
    centres[b][2] = jitter(rng);
  }
  std::vector<double> x(opt.points), y(opt.points), z(opt.points);
  std::vector<int> labels(opt.points);
  for (std::size_t i = 0; i < opt.points; ++i) {
    const int b = static_cast<int>(i % 2);
    x[i] = centres[b][0] + noise(rng);
    y[i] = centres[b][1] + noise(rng);
    z[i] = centres[b][2] + noise(rng);
    labels[i] = b;
  }
  PointCloud cloud(opt.points);
  cloud.set_channel("x", std::move(x));
  cloud.set_channel("y", std::move(y));
  cloud.set_channel("z", std::move(z));
  cloud.set_labels(std::move(labels));
  return cloud;
}

inline Dataset make_blob_dataset(std::size_t clouds, const BlobOptions& opt, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Dataset out;
  for (std::size_t i = 0; i < clouds; ++i) {
    out.clouds.push_back(make_blob_cloud(opt, rng));
    out.names.push_back("blobs_" + std::to_string(i));
  }
  return out;
}

}  // namespace splatnet
