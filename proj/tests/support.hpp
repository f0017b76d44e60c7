#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mtlvc/model.hpp"
#include "mtlvc/training.hpp"

namespace mtlvc::testing {

// Fresh empty directory under the system temp dir.
inline std::filesystem::path TempDir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mtlvc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// Hidden sizes <= 8 for finite-difference checks.
inline model::ModelConfig MicroConfig() {
  model::ModelConfig c;
  c.vocab_size = 6;
  c.char_embed_dim = 4;
  c.style_dim = 3;
  c.encoder_dim = 4;
  c.attention_dim = 4;
  c.decoder_dim = 5;
  c.n_mels = 3;
  c.n_linear = 5;
  c.reduction_factor = 2;
  c.prenet_dims = {4, 3};
  c.text_bank_size = 2;
  c.text_bank_channels = 2;
  c.post_bank_size = 2;
  c.post_bank_channels = 2;
  c.post_dim = 4;
  c.highway_layers = 1;
  c.contents_hidden = 3;
  c.style_hidden = 3;
  c.dropout = 0.0;
  c.max_decoder_steps = 6;
  return c;
}

inline Matrix RandomMatrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double lo = 0.0,
                           double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

}  // namespace mtlvc::testing
