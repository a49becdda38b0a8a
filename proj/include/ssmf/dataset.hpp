#pragma once

// Trajectory batches and their on-disk form.
//
// File layout (little-endian):
//   char[8] "SSMFDATA", u32 version (1)
//   u32 n, u32 m, u32 T, u32 M, u32 noise_kind (0 white, 1 colored), u32 window
//   u64 seed
//   f64 radius, f64 sigma_w2, f64 sigma_v2, f64 sigma_eta2, f64 sigma_nu2
//   str config_digest, str tool_version      (str = u32 length + bytes)
//   f64[M * T * m] outputs, row-major over (system, time, channel)
//
// Only outputs are persisted; a loaded batch has empty xs/ws/vs.

#include <cstdint>
#include <string>
#include <vector>

#include "ssmf/systems.hpp"

namespace ssmf {

struct DistributionConfig {
  int n = 5;
  int m = 3;
  double radius = 0.95;
  double sigma_w2 = 0.01;
  double sigma_v2 = 0.01;
  NoiseModel noise = NoiseModel::white();
};

struct TrajectoryBatch {
  DistributionConfig dist;
  int horizon = 0;             // T
  std::uint64_t seed = 0;
  std::string config_digest;
  std::vector<Trajectory> items;
  std::vector<LinearSystem> systems;  // empty when loaded from disk

  std::size_t size() const { return items.size(); }
};

void save_dataset(const TrajectoryBatch& batch, const std::string& path);
TrajectoryBatch load_dataset(const std::string& path);

}  // namespace ssmf
