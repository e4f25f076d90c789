#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <sstream>

#include "splatnet/checkpoint.hpp"
#include "splatnet/optimizer.hpp"

using namespace splatnet;

namespace {

ModelConfig model_config() {
  ModelConfig cfg;
  cfg.arch = "C4-B8-B6-C5-Cx";
  cfg.lambda0 = LatticeConfig({2.0, 4.0, 1.5, 0.75});
  cfg.num_classes = 3;
  cfg.feature_channels = {"xyz", "height"};
  cfg.lattice_channels = {"xyz", "height"};
  cfg.normalize = false;
  cfg.gravity_axis = "z";
  return cfg;
}

// Every value representable as float32.
void round_to_float(Parameters& p) {
  for (auto& t : p.tensors) {
    for (double& v : t.values) v = static_cast<double>(static_cast<float>(v));
  }
}

std::string to_bytes(const Checkpoint& ck) {
  std::ostringstream out;
  write_checkpoint(out, ck);
  return out.str();
}

Checkpoint from_bytes(const std::string& bytes) {
  std::istringstream in(bytes);
  return read_checkpoint(in);
}

}  // namespace

TEST(Checkpoint, RoundTripIsExactForFloatValues) {
  Model m = Model::create(model_config(), 3);
  round_to_float(m.params);
  OptimizerState opt = OptimizerState::for_params(m.params);
  opt.step = 17;
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  for (auto& v : opt.first) {
    for (double& x : v) x = u(rng);
  }
  for (auto& v : opt.second) {
    for (double& x : v) x = u(rng) * u(rng);
  }
  const Checkpoint ck = make_checkpoint(m, opt);
  const Checkpoint back = from_bytes(to_bytes(ck));
  EXPECT_EQ(back.params, ck.params);
  EXPECT_EQ(back.config, ck.config);
  ASSERT_TRUE(back.optimizer.has_value());
  EXPECT_EQ(*back.optimizer, opt);
  EXPECT_NO_THROW(Model::restore(back.config, back.params));
}

TEST(Checkpoint, ResaveIsByteIdentical) {
  const Model m = Model::create(model_config(), 4);
  const std::string first = to_bytes(make_checkpoint(m));
  const std::string second = to_bytes(from_bytes(first));
  EXPECT_EQ(first, second);
  // Loaded values are the float32 roundings of the originals.
  const Checkpoint back = from_bytes(first);
  for (std::size_t t = 0; t < m.params.tensors.size(); ++t) {
    for (std::size_t i = 0; i < m.params.tensors[t].size(); ++i) {
      EXPECT_EQ(back.params.tensors[t].values[i], static_cast<double>(static_cast<float>(m.params.tensors[t].values[i])));
    }
  }
  EXPECT_FALSE(back.optimizer.has_value());
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = to_bytes(make_checkpoint(Model::create(model_config(), 5)));
  EXPECT_EQ(bytes.substr(0, 4), "SPLT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[4]), 1u);
  EXPECT_EQ(bytes[5], 0);
  EXPECT_EQ(bytes[6], 0);
  EXPECT_EQ(bytes[7], 0);
}

TEST(Checkpoint, CorruptInputIsParseError) {
  const std::string bytes = to_bytes(make_checkpoint(Model::create(model_config(), 6)));
  EXPECT_THROW(from_bytes("XPLT" + bytes.substr(4)), ParseError);
  EXPECT_THROW(from_bytes(bytes.substr(0, bytes.size() - 3)), ParseError);
  EXPECT_THROW(from_bytes(bytes + "x"), ParseError);
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(from_bytes(wrong_version), ParseError);
  EXPECT_THROW(from_bytes(""), ParseError);
}

TEST(Checkpoint, Files) {
  const auto path = std::filesystem::temp_directory_path() / "splatnet_ck_test.bin";
  const Model m = Model::create(model_config(), 7);
  save_checkpoint(path, make_checkpoint(m));
  const Checkpoint back = load_checkpoint(path);
  EXPECT_EQ(back.config, m.config);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), Error);
}
