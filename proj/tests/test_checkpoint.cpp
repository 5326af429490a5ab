#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "savos/checkpoint.hpp"
#include "savos/common.hpp"
#include "savos/model.hpp"
#include "savos/nn.hpp"
#include "savos/rng.hpp"

using namespace savos;

namespace {

ModelConfig small_config() {
  ModelConfig cfg;
  cfg.patch_size = 8;
  cfg.feature_channels = 8;
  cfg.hidden_channels = 8;
  cfg.encoder_depth = 2;
  cfg.decoder_depth = 2;
  return cfg;
}

std::string temp_path(const char* stem) {
  return (std::filesystem::temp_directory_path() / stem).string();
}

// A couple of optimizer steps on noise gradients, so the moment buffers hold
// non-trivial values worth round-tripping.
void churn(SavosNet<float>& net, Adam<float>& opt, std::uint64_t seed) {
  Rng rng(seed);
  auto reg = net.params();
  for (int s = 0; s < 3; ++s) {
    for (const auto& p : reg)
      for (auto& g : *p.grad) g = static_cast<float>(rng.uniform(-0.1, 0.1));
    opt.step(reg);
  }
}

}  // namespace

TEST_CASE("checkpoint survives a disk round-trip bit for bit") {
  SavosNet<float> net(small_config());
  net.init_params(5);
  Adam<float> opt;
  churn(net, opt, 99);

  const Checkpoint cp = snapshot(net, 1234, &opt);
  REQUIRE(cp.params.size() == net.param_count());
  REQUIRE(cp.has_optimizer);
  REQUIRE(cp.adam_step == 3);
  REQUIRE(cp.adam_m.size() == cp.params.size());

  const std::string path = temp_path("savos_ckpt_roundtrip.svck");
  save_checkpoint(path, cp);
  const Checkpoint back = load_checkpoint(path);
  std::filesystem::remove(path);

  CHECK(back.step == cp.step);
  CHECK(back.model.patch_size == cp.model.patch_size);
  CHECK(back.model.feature_channels == cp.model.feature_channels);
  CHECK(back.has_optimizer);
  CHECK(back.adam_step == cp.adam_step);
  REQUIRE(back.params.size() == cp.params.size());
  CHECK(std::memcmp(back.params.data(), cp.params.data(),
                    cp.params.size() * sizeof(float)) == 0);
  REQUIRE(back.adam_m.size() == cp.adam_m.size());
  CHECK(std::memcmp(back.adam_m.data(), cp.adam_m.data(),
                    cp.adam_m.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(back.adam_v.data(), cp.adam_v.data(),
                    cp.adam_v.size() * sizeof(double)) == 0);
  CHECK(fingerprint(back.params) == fingerprint(cp.params));
}

TEST_CASE("restore reproduces the captured net and optimizer") {
  SavosNet<float> net(small_config());
  net.init_params(7);
  Adam<float> opt;
  churn(net, opt, 100);
  const Checkpoint cp = snapshot(net, 42, &opt);
  const std::uint64_t want = fingerprint(net);

  SavosNet<float> other(small_config());
  other.init_params(8);  // different weights
  CHECK(fingerprint(other) != want);
  Adam<float> opt2;
  restore(cp, other, &opt2);
  CHECK(fingerprint(other) == want);
  CHECK(opt2.step_count == opt.step_count);
  REQUIRE(opt2.m.size() == opt.m.size());
  for (std::size_t i = 0; i < opt.m.size(); ++i) {
    CHECK(opt2.m[i] == opt.m[i]);
    CHECK(opt2.v[i] == opt.v[i]);
  }

  // A parameter-only checkpoint resets the optimizer on restore.
  const Checkpoint bare = snapshot(net, 42);
  restore(bare, other, &opt2);
  CHECK(opt2.step_count == 0);
  CHECK(opt2.m.empty());
}

TEST_CASE("restore rejects a mismatched architecture") {
  SavosNet<float> net(small_config());
  net.init_params(1);
  const Checkpoint cp = snapshot(net, 0);

  ModelConfig wider = small_config();
  wider.feature_channels = 16;
  SavosNet<float> other(wider);
  CHECK_THROWS_AS(restore(cp, other), ConfigError);
}

TEST_CASE("damaged files are named, not crashed on") {
  SavosNet<float> net(small_config());
  net.init_params(2);
  const Checkpoint cp = snapshot(net, 9);
  const std::string path = temp_path("savos_ckpt_damage.svck");

  CHECK_THROWS_AS(load_checkpoint(temp_path("savos_ckpt_missing.svck")), FormatError);

  save_checkpoint(path, cp);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNK", 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);

  save_checkpoint(path, cp);
  std::filesystem::resize_file(path, std::filesystem::file_size(path) - 16);
  CHECK_THROWS_AS(load_checkpoint(path), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("fingerprint reacts to any parameter change") {
  SavosNet<float> net(small_config());
  net.init_params(3);
  const std::uint64_t before = fingerprint(net);
  auto reg = net.params();
  (*reg.back().value)[0] += 1e-6f;
  CHECK(fingerprint(net) != before);
}
