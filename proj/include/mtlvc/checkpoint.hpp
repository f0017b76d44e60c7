#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mtlvc/model.hpp"

namespace mtlvc::ckpt {

struct AdamSlot {
  Matrix m;
  Matrix v;
  std::int64_t steps = 0;
};

struct NamedArray {
  std::string name;
  Matrix value;
  AdamSlot adam;
};

// Parameters and optimizer state are stored as float64 so that a resumed run
// continues bit-identically.
struct Checkpoint {
  model::ModelConfig model;
  std::string train_config_json;  // opaque snapshot
  std::int64_t step = 0;
  std::vector<NamedArray> arrays;
  std::string rng_state;  // textual std::mt19937_64 state
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void WriteCheckpoint(const Checkpoint& c, const std::filesystem::path& path);
// Throws Format or Io.
Checkpoint ReadCheckpoint(const std::filesystem::path& path);

// Copies values into the store. Throws Format on a missing, extra or
// mis-shaped parameter.
void RestoreParameters(const Checkpoint& c, ad::ParameterStore& store);

std::unique_ptr<model::Model> LoadModel(const std::filesystem::path& path);

}  // namespace mtlvc::ckpt
