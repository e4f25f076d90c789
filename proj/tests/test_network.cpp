#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "splatnet/network.hpp"
#include "support/oracles.hpp"

using namespace splatnet;
namespace o = splatnet::oracle;

namespace {

NetworkSpec parse(const std::string& arch, double lambda = 4.0, std::size_t classes = 0) {
  return parse_arch(arch, LatticeConfig::isotropic(3, lambda), classes);
}

std::size_t parse_error_position(const std::string& arch, std::size_t classes = 3) {
  try {
    parse(arch, 4.0, classes);
  } catch (const ParseError& e) {
    return e.position();
  }
  ADD_FAILURE() << "no ParseError for " << arch;
  return 0;
}

double weighted_sum(const FeatureMatrix& probs, const FeatureMatrix& r) { return o::dot(probs, r); }

}  // namespace

TEST(ParseArch, FacadeArchitecture) {
  const auto spec = parse("B64-B128-B128-B128-B64-C64-C7", 32.0);
  EXPECT_EQ(spec.num_bcl, 5u);
  EXPECT_EQ(spec.num_classes, 7u);
  const auto bcls = spec.bcl_layers();
  ASSERT_EQ(bcls.size(), 5u);
  const double expect[] = {32, 16, 8, 4, 2};
  for (std::size_t t = 0; t < 5; ++t) {
    EXPECT_EQ(spec.layers[bcls[t]].scale, LatticeConfig::isotropic(3, expect[t]));
    EXPECT_EQ(spec.layers[bcls[t]].bcl_index, t);
  }
  EXPECT_EQ(spec.layers.back().kind, LayerKind::Softmax);
}

TEST(ParseArch, PartSegmentationArchitecture) {
  const auto spec = parse("C32-B64-B128-B256-B256-B256-C128-Cx", 1.0, 4);
  EXPECT_EQ(spec.num_bcl, 5u);
  EXPECT_EQ(spec.num_classes, 4u);
  EXPECT_EQ(spec.layers[0].kind, LayerKind::Conv);
  EXPECT_EQ(spec.layers[0].width, 32u);
  EXPECT_EQ(spec.layers[0].input, kNetworkInput);
  // Final conv produces num_classes and feeds the softmax directly.
  const auto& last_conv = spec.layers[spec.layers.size() - 2];
  EXPECT_EQ(last_conv.kind, LayerKind::Conv);
  EXPECT_EQ(last_conv.width, 4u);
}

TEST(ParseArch, LayerOrdering) {
  const auto spec = parse("B8-B4-C6-C2");
  // B, BN, ReLU, B, BN, ReLU, Concat, C, BN, ReLU, C, Softmax
  const std::vector<LayerKind> kinds{LayerKind::Bcl, LayerKind::BatchNorm, LayerKind::Relu,
                                     LayerKind::Bcl, LayerKind::BatchNorm, LayerKind::Relu,
                                     LayerKind::Concat, LayerKind::Conv, LayerKind::BatchNorm,
                                     LayerKind::Relu, LayerKind::Conv, LayerKind::Softmax};
  ASSERT_EQ(spec.layers.size(), kinds.size());
  for (std::size_t i = 0; i < kinds.size(); ++i) EXPECT_EQ(spec.layers[i].kind, kinds[i]) << i;
  EXPECT_EQ(spec.layers[6].sources, (std::vector<std::size_t>{2, 5}));
  // Every BCL reads the previous BCL's activation.
  EXPECT_EQ(spec.layers[3].input, 2u);
  EXPECT_EQ(layer_widths(spec, 3)[6], 12u);
}

TEST(ParseArch, Errors) {
  EXPECT_EQ(parse_error_position("C32"), 2u);
  EXPECT_EQ(parse_error_position("B64-C32-B64-C2"), 3u);
  EXPECT_EQ(parse_error_position("B64-Q3-C2"), 2u);
  EXPECT_EQ(parse_error_position("Cx-B64-C2"), 1u);
  EXPECT_EQ(parse_error_position("B64-Cx-C2"), 2u);
  EXPECT_THROW(parse("B64-Cx", 4.0, 0), ParseError);
  EXPECT_THROW(parse("B64-C5", 4.0, 3), ParseError);
  EXPECT_THROW(parse("", 4.0, 3), ParseError);
  EXPECT_THROW(parse("B64-B0-C2"), ParseError);
  EXPECT_NO_THROW(parse("B64-C5", 4.0, 5));
}

TEST(InitParameters, ShapesAndBounds) {
  auto spec = parse("C4-B8-B6-C5-Cx", 2.0, 3);
  const auto params = init_parameters(spec, 3, 42);
  const std::size_t taps = 15;
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::Bcl) {
      const auto& w = params.tensors[l.param];
      ASSERT_EQ(w.shape.size(), 3u);
      EXPECT_EQ(w.shape[0], taps);
      const double a = std::sqrt(6.0 / static_cast<double>(taps * w.shape[1]));
      for (double v : w.values) EXPECT_LE(std::abs(v), a);
    }
    if (l.kind == LayerKind::BatchNorm) {
      EXPECT_FALSE(params.tensors[l.param + 2].trainable);
      EXPECT_FALSE(params.tensors[l.param + 3].trainable);
      for (double v : params.tensors[l.param + 3].values) EXPECT_EQ(v, 1.0);
    }
  }
  // Same seed, same parameters.
  auto spec2 = parse("C4-B8-B6-C5-Cx", 2.0, 3);
  EXPECT_EQ(init_parameters(spec2, 3, 42), params);
  auto spec3 = parse("C4-B8-B6-C5-Cx", 2.0, 3);
  EXPECT_NE(init_parameters(spec3, 3, 43), params);
}

TEST(BindParameters, RejectsMismatchedLayout) {
  auto spec = parse("B8-C2");
  auto params = init_parameters(spec, 3, 1);
  auto other = parse("B8-C2");
  EXPECT_NO_THROW(bind_parameters(other, params, 3));
  EXPECT_THROW(bind_parameters(other, params, 4), ConfigError);
  params.tensors.pop_back();
  EXPECT_THROW(bind_parameters(other, params, 3), ConfigError);
}

class NetworkFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    std::mt19937_64 rng(7);
    spec = parse("B4-B3-C3-C2", 1.0);
    params = init_parameters(spec, 2, 99);
    // Non-trivial BN affine terms and biases so every gradient is exercised.
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    for (auto& t : params.tensors) {
      if (!t.trainable) continue;
      if (t.name.find("bias") != std::string::npos || t.name.find("shift") != std::string::npos) {
        for (double& v : t.values) v = u(rng);
      }
      if (t.name.find("gain") != std::string::npos) {
        for (double& v : t.values) v = 1.0 + u(rng);
      }
    }
    input.lattice = o::random_matrix(12, 3, rng, -1.0, 1.0);
    input.features = o::random_matrix(12, 2, rng);
    weights = o::random_matrix(12, 2, rng);
  }

  NetworkSpec spec;
  Parameters params;
  NetworkInput input;
  FeatureMatrix weights;
};

TEST_F(NetworkFixture, ProbabilitiesAreDistributions) {
  for (Mode mode : {Mode::Train, Mode::Inference}) {
    const auto tape = forward(spec, params, input, mode);
    const auto& p = tape.probabilities();
    ASSERT_EQ(p.rows(), 12u);
    ASSERT_EQ(p.cols(), 2u);
    for (std::size_t r = 0; r < p.rows(); ++r) {
      EXPECT_NEAR(p(r, 0) + p(r, 1), 1.0, 1e-12);
      EXPECT_GT(p(r, 0), 0.0);
    }
  }
}

TEST_F(NetworkFixture, GradientsMatchFiniteDifferences) {
  const auto lattices = build_lattices(spec, input.lattice);
  auto loss = [&] {
    return weighted_sum(forward(spec, params, input, Mode::Train, lattices).probabilities(), weights);
  };
  const auto tape = forward(spec, params, input, Mode::Train, lattices);
  const auto grads = backward(spec, params, tape, weights);
  for (std::size_t t = 0; t < params.tensors.size(); ++t) {
    if (!params.tensors[t].trainable) continue;
    auto& values = params.tensors[t].values;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double num = o::central_difference(loss, values[i], 1e-5);
      EXPECT_LT(o::relative_error(grads.params.tensors[t].values[i], num), 1e-4)
          << params.tensors[t].name << "[" << i << "]";
    }
  }
  for (std::size_t i = 0; i < input.features.values().size(); ++i) {
    const double num = o::central_difference(loss, input.features.values()[i], 1e-5);
    EXPECT_LT(o::relative_error(grads.features.values()[i], num), 1e-4) << "feature " << i;
  }
}

TEST_F(NetworkFixture, DirectionalDerivative) {
  const auto lattices = build_lattices(spec, input.lattice);
  const auto tape = forward(spec, params, input, Mode::Train, lattices);
  const auto grads = backward(spec, params, tape, weights);
  std::mt19937_64 rng(3);
  Parameters dir = params.zeros_like();
  double analytic = 0.0;
  std::normal_distribution<double> nd;
  for (std::size_t t = 0; t < dir.tensors.size(); ++t) {
    if (!params.tensors[t].trainable) continue;
    for (std::size_t i = 0; i < dir.tensors[t].values.size(); ++i) {
      dir.tensors[t].values[i] = nd(rng);
      analytic += dir.tensors[t].values[i] * grads.params.tensors[t].values[i];
    }
  }
  auto eval = [&](double step) {
    Parameters p = params;
    for (std::size_t t = 0; t < p.tensors.size(); ++t) {
      for (std::size_t i = 0; i < p.tensors[t].values.size(); ++i) p.tensors[t].values[i] += step * dir.tensors[t].values[i];
    }
    return weighted_sum(forward(spec, p, input, Mode::Train, lattices).probabilities(), weights);
  };
  const double numeric = (eval(1e-5) - eval(-1e-5)) / 2e-5;
  EXPECT_LT(o::relative_error(analytic, numeric), 1e-4);
}

TEST_F(NetworkFixture, BackwardNeedsTrainTape) {
  const auto tape = forward(spec, params, input, Mode::Inference);
  EXPECT_THROW(backward(spec, params, tape, weights), StateError);
  EXPECT_THROW(update_running_statistics(spec, params, tape), StateError);
}

TEST_F(NetworkFixture, RunningStatisticsUpdate) {
  const auto tape = forward(spec, params, input, Mode::Train);
  Parameters updated = params;
  update_running_statistics(spec, updated, tape);
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& l = spec.layers[i];
    if (l.kind != LayerKind::BatchNorm) continue;
    const FeatureMatrix& x = tape.outputs[l.input];
    for (std::size_t k = 0; k < x.cols(); ++k) {
      double mean = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) mean += x(r, k);
      mean /= static_cast<double>(x.rows());
      double var = 0.0;
      for (std::size_t r = 0; r < x.rows(); ++r) var += (x(r, k) - mean) * (x(r, k) - mean);
      var /= static_cast<double>(x.rows());
      EXPECT_NEAR(updated.tensors[l.param + 2].values[k], 0.1 * mean, 1e-12);
      EXPECT_NEAR(updated.tensors[l.param + 3].values[k], 0.9 + 0.1 * var, 1e-12);
    }
  }
}

TEST_F(NetworkFixture, PermutationEquivariant) {
  std::vector<std::size_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(5);
  std::shuffle(perm.begin(), perm.end(), rng);
  NetworkInput permuted{FeatureMatrix(12, 2), FeatureMatrix(12, 3)};
  for (std::size_t i = 0; i < 12; ++i) {
    for (std::size_t c = 0; c < 2; ++c) permuted.features(i, c) = input.features(perm[i], c);
    for (std::size_t c = 0; c < 3; ++c) permuted.lattice(i, c) = input.lattice(perm[i], c);
  }
  for (Mode mode : {Mode::Train, Mode::Inference}) {
    const auto a = forward(spec, params, input, mode).probabilities();
    const auto b = forward(spec, params, permuted, mode).probabilities();
    for (std::size_t i = 0; i < 12; ++i) {
      for (std::size_t c = 0; c < 2; ++c) EXPECT_NEAR(b(i, c), a(perm[i], c), 1e-9);
    }
  }
}

TEST_F(NetworkFixture, ForwardErrors) {
  NetworkInput bad = input;
  bad.lattice = FeatureMatrix(12, 2);
  EXPECT_THROW(forward(spec, params, bad, Mode::Train), ConfigError);
  bad = input;
  bad.features(0, 0) = std::nan("");
  EXPECT_THROW(forward(spec, params, bad, Mode::Train), InvalidInput);
  bad = input;
  bad.lattice = FeatureMatrix(11, 3);
  EXPECT_THROW(forward(spec, params, bad, Mode::Train), ShapeError);
  EXPECT_THROW(forward(spec, params, NetworkInput{FeatureMatrix(0, 2), FeatureMatrix(0, 3)}, Mode::Train),
               EmptyInput);
}

TEST(Predict, ArgmaxWithLowestIndexOnTies) {
  FeatureMatrix p(3, 3, std::vector<double>{0.2, 0.5, 0.3, 0.4, 0.4, 0.2, 0.1, 0.1, 0.8});
  EXPECT_EQ(predict(p), (std::vector<int>{1, 0, 2}));
}

TEST(Model, CreateRestoreInfer) {
  ModelConfig cfg;
  cfg.arch = "B8-B8-C4-Cx";
  cfg.lambda0 = LatticeConfig::isotropic(3, 2.0);
  cfg.num_classes = 3;
  const Model m = Model::create(cfg, 5);
  std::mt19937_64 rng(1);
  const auto cloud = PointCloud::from_positions(o::random_matrix(30, 3, rng));
  const auto p = m.infer(cloud);
  EXPECT_EQ(p.rows(), 30u);
  EXPECT_EQ(p.cols(), 3u);
  const Model r = Model::restore(cfg, m.params);
  EXPECT_EQ(r.infer(cloud), p);

  ModelConfig wrong = cfg;
  wrong.lambda0 = LatticeConfig::isotropic(2, 2.0);
  const Model m2 = Model::create(wrong, 5);
  EXPECT_THROW(m2.infer(cloud), ConfigError);
}
