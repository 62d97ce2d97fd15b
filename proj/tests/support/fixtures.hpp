#pragma once

#include "nbv/renderer.hpp"
#include "nbv/scene_oracle.hpp"

namespace nbv::testing {

inline renderer::ModelConfig tiny_config() {
  renderer::ModelConfig c;
  c.encoder_channels = 5;
  c.n_freq = 2;
  c.feat_hidden = 8;
  c.agg_channels = 4;
  c.lstm_hidden = 4;
  c.out_hidden = 8;
  c.n_iter = 4;
  return c;
}

inline PosedImageSet small_dataset(std::uint64_t seed, int n_views = 8, int res = 16,
                                   Difficulty d = Difficulty::simple) {
  const RigConfig rig;
  return generate_dataset(build_scene(seed, d, rig), n_views, res, res, "", rig);
}

}  // namespace nbv::testing
