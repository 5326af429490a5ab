#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "savos/model.hpp"
#include "savos/nn.hpp"

namespace savos {

/// Serialized training state: the model shape, parameters flattened in
/// registry order, and (optionally) Adam moments so a run can resume
/// mid-schedule without replaying steps.
struct Checkpoint {
  ModelConfig model;
  std::uint64_t step = 0;
  std::vector<float> params;

  bool has_optimizer = false;
  std::uint64_t adam_step = 0;
  std::vector<double> adam_m, adam_v;  // flattened like params, possibly empty
};

/// Binary container: "SVCK" magic, a little-endian u32 JSON header length,
/// the header itself, then raw little-endian payloads (f32 parameters,
/// f64 moments). Save/load round-trips bit for bit.
void save_checkpoint(const std::string& path, const Checkpoint& cp);

/// FormatError on a missing file, bad magic, unsupported version, or a
/// payload that disagrees with the header.
Checkpoint load_checkpoint(const std::string& path);

/// Captures the net's current parameters (and the optimizer when given).
Checkpoint snapshot(SavosNet<float>& net, std::uint64_t step, const Adam<float>* opt = nullptr);

/// Loads parameters into an existing net whose config must match the
/// checkpoint's (ConfigError otherwise). When `opt` is given, its moments are
/// restored too — or reset, if the checkpoint carries no optimizer state.
void restore(const Checkpoint& cp, SavosNet<float>& net, Adam<float>* opt = nullptr);

/// FNV-1a over the raw parameter bytes; any single-bit mutation shows up.
std::uint64_t fingerprint(const std::vector<float>& params);
std::uint64_t fingerprint(SavosNet<float>& net);

}  // namespace savos
