#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include "splatnet/lattice.hpp"
#include "support/oracles.hpp"

using namespace splatnet;

namespace {

std::vector<double> random_point(std::size_t d, std::mt19937_64& rng, double range = 5.0) {
  std::uniform_real_distribution<double> u(-range, range);
  std::vector<double> p(d);
  for (double& v : p) v = u(rng);
  return p;
}

LatticeConfig random_config(std::size_t d, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.3, 3.0);
  std::vector<double> s(d);
  for (double& v : s) v = u(rng);
  return LatticeConfig(s);
}

}  // namespace

TEST(LatticeConfig, RejectsNonPositiveScale) {
  EXPECT_THROW(LatticeConfig({1.0, 0.0}), InvalidInput);
  EXPECT_THROW(LatticeConfig({-1.0}), InvalidInput);
  EXPECT_THROW(LatticeConfig(std::vector<double>{}), InvalidInput);
  EXPECT_THROW(LatticeConfig({std::nan("")}), InvalidInput);
}

TEST(LatticeConfig, ScaledHalvesEveryEntry) {
  const auto cfg = LatticeConfig({2.0, 4.0, 8.0}).scaled(0.5);
  EXPECT_EQ(cfg.scale, (std::vector<double>{1.0, 2.0, 4.0}));
}

TEST(Elevate, CoordinatesSumToZero) {
  std::mt19937_64 rng(1);
  const auto cfg = random_config(3, rng);
  for (int i = 0; i < 1000; ++i) {
    const auto e = elevate(random_point(3, rng), cfg);
    ASSERT_EQ(e.coords.size(), 4u);
    EXPECT_LT(std::abs(std::accumulate(e.coords.begin(), e.coords.end(), 0.0)), 1e-9);
  }
}

TEST(Elevate, MatchesExplicitMatrix) {
  std::mt19937_64 rng(2);
  for (std::size_t d = 1; d <= 6; ++d) {
    const auto cfg = random_config(d, rng);
    for (int i = 0; i < 50; ++i) {
      const auto p = random_point(d, rng);
      const auto e = elevate(p, cfg);
      const auto ref = oracle::dense_elevate(p, cfg.scale);
      for (std::size_t k = 0; k <= d; ++k) EXPECT_NEAR(e.coords[k], ref[k], 1e-12);
    }
  }
}

TEST(Elevate, ZeroFeatureGoesToOrigin) {
  const auto e = elevate(std::vector<double>{0.0, 0.0, 0.0}, LatticeConfig::isotropic(3, 7.0));
  for (double c : e.coords) EXPECT_EQ(c, 0.0);
}

TEST(Elevate, RejectsBadInput) {
  const auto cfg = LatticeConfig::isotropic(2, 1.0);
  EXPECT_THROW(elevate(std::vector<double>{1.0}, cfg), ShapeError);
  EXPECT_THROW(elevate(std::vector<double>{1.0, INFINITY}, cfg), InvalidInput);
}

TEST(Locate, ReconstructsPointFromVertices) {
  std::mt19937_64 rng(3);
  const auto cfg = random_config(2, rng);
  for (int i = 0; i < 1000; ++i) {
    const auto e = elevate(random_point(2, rng), cfg);
    const auto s = locate(e);
    std::vector<double> rec(3, 0.0);
    double total = 0.0;
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_GE(s.bary[k], -1e-12);
      total += s.bary[k];
      for (std::size_t j = 0; j < 3; ++j) rec[j] += s.bary[k] * s.vertex_keys[k].coords[j];
    }
    EXPECT_NEAR(total, 1.0, 1e-9);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(rec[j], e.coords[j], 1e-9);
  }
}

TEST(Locate, VerticesAreLatticePointsWithDistinctRemainders) {
  std::mt19937_64 rng(4);
  for (std::size_t d = 1; d <= 6; ++d) {
    const auto cfg = random_config(d, rng);
    const auto dp1 = static_cast<std::int32_t>(d + 1);
    for (int i = 0; i < 200; ++i) {
      const auto s = locate(elevate(random_point(d, rng), cfg));
      for (std::size_t k = 0; k <= d; ++k) {
        const auto& key = s.vertex_keys[k];
        EXPECT_EQ(std::accumulate(key.coords.begin(), key.coords.end(), 0), 0);
        EXPECT_EQ(key.remainder, static_cast<int>(k));
        for (auto c : key.coords) EXPECT_EQ(((c % dp1) + dp1) % dp1, static_cast<std::int32_t>(k));
      }
    }
  }
}

TEST(Locate, LatticePointGetsAllWeightOnOneVertex) {
  // The origin is a remainder-0 lattice point.
  const auto s = locate(ElevatedPoint{{0.0, 0.0, 0.0}});
  EXPECT_NEAR(s.bary[0], 1.0, 1e-15);
  EXPECT_NEAR(s.bary[1], 0.0, 1e-15);
  EXPECT_NEAR(s.bary[2], 0.0, 1e-15);
}

TEST(Locate, RejectsHugeCoordinates) {
  EXPECT_THROW(locate(ElevatedPoint{{3e9, -3e9}}), InvalidInput);
  EXPECT_THROW(locate(ElevatedPoint{{1.0}}), InvalidInput);
}

TEST(NeighborOffsets, CountsMatchClosedForm) {
  for (std::size_t d = 1; d <= 6; ++d) {
    EXPECT_EQ(neighbor_offsets(d).size(), (std::size_t{1} << (d + 1)) - 1) << "d=" << d;
  }
}

TEST(NeighborOffsets, OneDimensionalList) {
  const auto off = neighbor_offsets(1);
  ASSERT_EQ(off.size(), 3u);
  EXPECT_EQ(off.offsets[0], (std::vector<std::int32_t>{0, 0}));
  const std::set<std::vector<std::int32_t>> rest{off.offsets[1], off.offsets[2]};
  EXPECT_EQ(rest, (std::set<std::vector<std::int32_t>>{{1, -1}, {-1, 1}}));
}

TEST(NeighborOffsets, MatchBruteForceSearch) {
  for (std::size_t d = 1; d <= 4; ++d) {
    const auto off = neighbor_offsets(d);
    const std::set<std::vector<std::int32_t>> got(off.offsets.begin(), off.offsets.end());
    EXPECT_EQ(got.size(), off.size());
    EXPECT_EQ(got, oracle::brute_force_one_ring(d)) << "d=" << d;
  }
}

TEST(NeighborOffsets, UnsupportedRing) {
  EXPECT_THROW(neighbor_offsets(2, 2), Unsupported);
  EXPECT_THROW(neighbor_offsets(0), InvalidInput);
}

TEST(HashTable, InsertFindAndGrow) {
  LatticeHashTable table(2, 1);
  std::vector<std::vector<std::int32_t>> keys;
  for (std::int32_t i = 0; i < 500; ++i) keys.push_back({3 * i, -3 * i, 0});
  for (std::size_t i = 0; i < keys.size(); ++i) {
    EXPECT_EQ(table.insert(keys[i]), static_cast<std::int32_t>(i));
  }
  EXPECT_EQ(table.size(), keys.size());
  EXPECT_LE(2 * table.size(), table.capacity());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    EXPECT_EQ(table.find(keys[i]), static_cast<std::int32_t>(i));
    EXPECT_TRUE(std::equal(keys[i].begin(), keys[i].end(), table.key(i).begin()));
  }
  // Re-inserting returns the existing index.
  EXPECT_EQ(table.insert(keys[7]), 7);
  EXPECT_EQ(table.size(), keys.size());
  EXPECT_EQ(table.find(std::vector<std::int32_t>{1, 1, -2}), kMissing);
}

TEST(BuildLattice, SinglePointHasDPlusOneVertices) {
  for (std::size_t d = 1; d <= 5; ++d) {
    FeatureMatrix f(1, d, 0.37);
    const auto lat = build_lattice(f, LatticeConfig::isotropic(d, 2.0));
    EXPECT_EQ(lat.num_vertices(), d + 1);
    EXPECT_EQ(lat.taps(), (std::size_t{1} << (d + 1)) - 1);
  }
}

TEST(BuildLattice, DuplicatePointsShareVertices) {
  FeatureMatrix f(5, 3, 0.25);
  const auto lat = build_lattice(f, LatticeConfig::isotropic(3, 1.0));
  EXPECT_EQ(lat.num_vertices(), 4u);
}

TEST(BuildLattice, EmbeddingsMatchLocate) {
  std::mt19937_64 rng(5);
  const auto cfg = random_config(3, rng);
  const auto f = oracle::random_matrix(100, 3, rng, -2.0, 2.0);
  const auto lat = build_lattice(f, cfg);
  const auto& emb = lat.embeddings();
  for (std::size_t p = 0; p < f.rows(); ++p) {
    const auto s = locate(elevate(f.row(p), cfg));
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_EQ(lat.find(s.vertex_keys[k].coords), emb.vertices_of(p)[k]);
      EXPECT_DOUBLE_EQ(emb.weights_of(p)[k], s.bary[k]);
    }
  }
}

TEST(BuildLattice, AdjacencyAgreesWithKeyArithmetic) {
  std::mt19937_64 rng(6);
  const auto cfg = LatticeConfig::isotropic(2, 1.5);
  const auto f = oracle::random_matrix(60, 2, rng, -2.0, 2.0);
  const auto lat = build_lattice(f, cfg);
  const auto& adj = lat.adjacency();
  ASSERT_EQ(adj.rows, lat.num_vertices());
  ASSERT_EQ(adj.cols, 7u);
  for (std::size_t v = 0; v < adj.rows; ++v) {
    EXPECT_EQ(adj(v, 0), static_cast<std::int32_t>(v));
    const auto key = lat.key(v);
    for (std::size_t k = 0; k < adj.cols; ++k) {
      std::vector<std::int32_t> nb(3);
      for (std::size_t i = 0; i < 3; ++i) nb[i] = key.coords[i] + lat.offsets().offsets[k][i];
      // Brute-force lookup over all stored keys.
      std::int32_t expect = kMissing;
      for (std::size_t u = 0; u < lat.num_vertices(); ++u) {
        if (lat.key(u).coords == nb) expect = static_cast<std::int32_t>(u);
      }
      EXPECT_EQ(adj(v, k), expect);
    }
  }
  EXPECT_GT(adj.fill_rate(), 0.0);
  EXPECT_LE(adj.fill_rate(), 1.0);
}

TEST(BuildLattice, DeterministicAcrossBuilds) {
  std::mt19937_64 rng(7);
  const auto f = oracle::random_matrix(200, 3, rng);
  const auto cfg = LatticeConfig::isotropic(3, 2.0);
  const auto a = build_lattice(f, cfg);
  const auto b = build_lattice(f, cfg);
  ASSERT_EQ(a.num_vertices(), b.num_vertices());
  EXPECT_EQ(a.adjacency(), b.adjacency());
  for (std::size_t v = 0; v < a.num_vertices(); ++v) EXPECT_EQ(a.key(v), b.key(v));
}

TEST(BuildLattice, HalvingScaleNeverIncreasesVertexCount) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = oracle::random_matrix(300, 3, rng, -3.0, 3.0);
    auto cfg = LatticeConfig::isotropic(3, 8.0);
    std::size_t prev = build_lattice(f, cfg).num_vertices();
    for (int t = 0; t < 5; ++t) {
      cfg = cfg.scaled(0.5);
      const std::size_t v = build_lattice(f, cfg).num_vertices();
      EXPECT_LE(v, prev);
      prev = v;
    }
  }
}

TEST(BuildLattice, Errors) {
  const auto cfg = LatticeConfig::isotropic(2, 1.0);
  EXPECT_THROW(build_lattice(FeatureMatrix(0, 2), cfg), EmptyInput);
  EXPECT_THROW(build_lattice(FeatureMatrix(3, 3), cfg), ShapeError);
  FeatureMatrix bad(2, 2);
  bad(1, 1) = std::nan("");
  EXPECT_THROW(build_lattice(bad, cfg), InvalidInput);
  FeatureMatrix huge(1, 2, 1e12);
  EXPECT_THROW(build_lattice(huge, cfg), InvalidInput);
}

TEST(SparseLattice, EmbedForeignPointsMarksMissingVertices) {
  FeatureMatrix src(1, 2, 0.0);
  const auto lat = build_lattice(src, LatticeConfig::isotropic(2, 1.0));
  FeatureMatrix far(1, 2, 100.0);
  const auto emb = lat.embed(far);
  for (auto v : emb.vertices_of(0)) EXPECT_EQ(v, kMissing);
  const auto same = lat.embed(src);
  EXPECT_EQ(same.vertex, lat.embeddings().vertex);
  EXPECT_THROW(lat.embed(FeatureMatrix(1, 3)), ShapeError);
}
