#pragma once

#include "jarvis/geometry/box.hpp"
#include "jarvis/numerics/tensor.hpp"

#include <string>
#include <vector>

namespace jarvis {

/// One detector output on the keyframe.
struct ActorProposal {
  BoundingBox box;
  /// Person confidence in [0, 1].
  double person_score = 0.0;
  /// RoI feature of length C.
  Vector feature;
  GeometryVector geometry = GeometryVector::Zero();
  /// Padding entry produced by proposal sampling.
  bool dummy = false;
};

/// Flattened H x W x T scene tokens. Column n of `features` is token
/// n = (t * H + row) * W + col.
struct SceneContextGrid {
  int height = 0;
  int width = 0;
  int frames = 0;
  /// C' x N
  Tensor features;

  int token_count() const { return height * width * frames; }
  static int token_index(int t, int row, int col, int height, int width) { return (t * height + row) * width + col; }
};

/// A ground-truth actor on the keyframe with its multi-label action set.
struct GroundTruthActor {
  BoundingBox box;
  std::vector<int> classes;
};

}  // namespace jarvis
