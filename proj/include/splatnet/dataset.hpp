#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "splatnet/cloud.hpp"
#include "splatnet/error.hpp"
#include "splatnet/io.hpp"

namespace splatnet {

/// Labeled clouds with the file stem each came from.
struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<std::string> names;

  std::size_t size() const noexcept { return clouds.size(); }
  bool empty() const noexcept { return clouds.empty(); }

  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    for (std::size_t i : indices) {
      out.clouds.push_back(clouds.at(i));
      out.names.push_back(names.at(i));
    }
    return out;
  }
};

/// Every .ply/.xyz/.txt file in `dir`, sorted by file name.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("data directory '" + dir.string() + "' not found");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".ply" || ext == ".xyz" || ext == ".txt") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  Dataset out;
  for (const auto& f : files) {
    out.clouds.push_back(load_cloud(f));
    out.names.push_back(f.stem().string());
  }
  return out;
}

/// Deterministic shuffled partition of [0, count) into consecutive splits
/// whose sizes follow `fractions` (boundaries at rounded cumulative sums).
inline std::vector<std::vector<std::size_t>> split_dataset(std::size_t count,
                                                           std::span<const double> fractions,
                                                           std::uint64_t seed) {
  if (count == 0) throw EmptyInput("split_dataset: empty dataset");
  if (fractions.empty()) throw InvalidInput("split_dataset: no fractions");
  double total = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw InvalidInput("split_dataset: fractions must be positive");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("split_dataset: fractions must sum to 1");

  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<std::size_t>> out;
  double cumulative = 0.0;
  std::size_t begin = 0;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    cumulative += fractions[i];
    std::size_t end = i + 1 == fractions.size()
                          ? count
                          : std::min(count, static_cast<std::size_t>(std::llround(cumulative * static_cast<double>(count))));
    end = std::max(end, begin);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                     order.begin() + static_cast<std::ptrdiff_t>(end));
    begin = end;
  }
  return out;
}

}  // namespace splatnet
