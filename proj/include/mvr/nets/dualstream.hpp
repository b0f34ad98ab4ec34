#pragma once

#include "mvr/diff/ops.hpp"

namespace mvr::nets {

struct BackboneConfig {
  int in_channels = 3;
  int c1 = 16;             // stem / decoder width
  int c2 = 32;             // bottleneck width
  int tokens_p = 2;        // spatial tokens per side, N = P^2
  int feature_dim = 16;    // D of the visual head
  double ln_eps = 1e-5;
};

/// 3D CNN encoder-decoder over (B, C, H, W, T) inputs: strided downsampling,
/// one residual transformation block, and nearest-neighbor temporal
/// upsampling that restores the input T exactly.
class Backbone {
 public:
  Backbone(diff::ParamStore& store, std::string prefix, BackboneConfig cfg, Rng& init);

  /// x (B, in_channels, H, W, T) -> decoder features (B, c1, H/8, W/8, T).
  diff::Var decode(diff::Tape& tp, diff::Var x) const;

  const BackboneConfig& config() const { return cfg_; }
  const std::string& prefix() const { return prefix_; }

 private:
  diff::Var conv_ln_relu(diff::Tape& tp, diff::Var x, const std::string& name,
                         std::array<int, 3> stride) const;

  BackboneConfig cfg_;
  std::string prefix_;
};

/// Rhythm-structural stream: backbone + spatial pooling to P x P + temporal
/// 3-D convolution head. Output (B, N, T) with N = P^2.
class RhythmStream {
 public:
  RhythmStream(diff::ParamStore& store, const std::string& prefix, BackboneConfig cfg, Rng& init);
  diff::Var forward(diff::Tape& tp, diff::Var x) const;
  int tokens() const { return backbone_.config().tokens_p * backbone_.config().tokens_p; }

 private:
  Backbone backbone_;
  std::string prefix_;
};

/// Visual-perceptual stream: same backbone topology with its own parameters;
/// global spatial pooling + per-time-step linear head. Output (B, D, T).
class VisualStream {
 public:
  VisualStream(diff::ParamStore& store, const std::string& prefix, BackboneConfig cfg, Rng& init);
  diff::Var forward(diff::Tape& tp, diff::Var x) const;

 private:
  Backbone backbone_;
  std::string prefix_;
};

/// Uniform Xavier initialization for a weight tensor.
diff::Tensor xavier(diff::Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace mvr::nets
