#pragma once

#include <array>

#include "mvr/diff/tape.hpp"

namespace mvr::diff {

// ---- elementwise ----
Var add(Tape& tp, Var a, Var b);
Var sub(Tape& tp, Var a, Var b);
Var mul(Tape& tp, Var a, Var b);
Var scale(Tape& tp, Var a, double s);
Var add_scalar(Tape& tp, Var a, double s);
Var square(Tape& tp, Var a);
Var relu(Tape& tp, Var a);
Var leaky_relu(Tape& tp, Var a, double slope = 0.2);
Var sigmoid(Tape& tp, Var a);
Var sub_const(Tape& tp, Var a, const Tensor& c);

// ---- reductions / shaping ----
Var sum_all(Tape& tp, Var a);
Var mean_all(Tape& tp, Var a);
Var add_many(Tape& tp, const std::vector<Var>& xs);  // sum of scalars
Var mean_axis(Tape& tp, Var a, int axis);
Var reshape(Tape& tp, Var a, Shape s);
Var permute(Tape& tp, Var a, const std::vector<int>& perm);
Var slice_lastdim(Tape& tp, Var a, int start, int len);
/// One time segment of one row of a (R, T) tensor -> (len,).
Var slice_row_segment(Tape& tp, Var a, int row, int start, int len);
Var stack_rows(Tape& tp, const std::vector<Var>& xs);  // k tensors of shape S -> (k, S...)

// ---- normalization / attention ----
Var softmax_lastdim(Tape& tp, Var a);
/// Layer normalization across dim 1 (the channel axis of (B,C,...) tensors).
Var layer_norm_dim1(Tape& tp, Var x, Var gamma, Var beta, double eps = 1e-5);
/// Layer normalization across the last dim (transformer convention).
Var layer_norm_lastdim(Tape& tp, Var x, Var gamma, Var beta, double eps = 1e-5);
/// Standardize over the last axis with a smooth epsilon (per leading index).
Var standardize_lastdim(Tape& tp, Var x, double eps = 1e-8);

/// Multi-head self-attention over time. x (B,T,D); wq/wk/wv/wo (D,D).
Var mha_time(Tape& tp, Var x, Var wq, Var wk, Var wv, Var wo, int heads);

/// Per-time-step attention over the view axis. f (B,V,D,T); w* (D,D).
/// For every (b,t): A = softmax(Q K^T / sqrt(D)) over V rows, out = A V.
Var cross_view_attention_core(Tape& tp, Var f, Var wq, Var wk, Var wv);

// ---- dense / conv ----
/// x (..., Din), w (Dout, Din), b (Dout) -> (..., Dout)
Var linear(Tape& tp, Var x, Var w, Var b);
/// x (B, C, T), w (Co, Ci, K), b (Co)
Var conv1d(Tape& tp, Var x, Var w, Var b, int stride = 1, int pad = 0);
/// Video tensors are laid out time-innermost: x (B, C, H, W, T),
/// w (Co, Ci, Kh, Kw, Kt), stride/pad ordered {h, w, t}.
Var conv3d(Tape& tp, Var x, Var w, Var b, std::array<int, 3> stride = {1, 1, 1},
           std::array<int, 3> pad = {0, 0, 0});
/// Per-channel affine on (B, C, T): y[b,c,t] = w[c] * x[b,c,t] + b[c].
Var channel_affine(Tape& tp, Var x, Var w, Var b);

// ---- pooling / resizing ----
/// Adaptive spatial average pooling of (B,C,H,W,T) to (B,C,oh,ow,T).
Var avg_pool_spatial(Tape& tp, Var x, int oh, int ow);
/// Nearest-neighbor resize along the last (time) axis.
Var upsample_lastdim(Tape& tp, Var x, int out_t);

// ---- gating / losses ----
/// sigmoid(beta)*a + (1-sigmoid(beta))*b with scalar parameter beta.
Var gated_blend(Tape& tp, Var a, Var b, Var beta);

/// Pearson correlation of f against a constant target g. Zero-variance
/// inputs contribute a constant 0 and bump *degenerate_count.
Var pearson_corr(Tape& tp, Var f, const Tensor& g, int* degenerate_count = nullptr);

/// Precomputed DFT rows restricted to [lo_hz, hi_hz] for length-n segments.
struct BandMatrix {
  int n = 0;
  double fs = 0.0;
  std::vector<double> cos_rows;  // (bins, n)
  std::vector<double> sin_rows;  // (bins, n)
  std::vector<double> freqs;     // bin centers, Hz
  int bins() const { return static_cast<int>(freqs.size()); }
};
BandMatrix make_band_matrix(int n, double fs, double lo_hz = 0.7, double hi_hz = 4.0);

/// In-band spectral power of a length-n vector: p_k = (c_k.x)^2 + (s_k.x)^2.
Var band_power(Tape& tp, Var x, const BandMatrix& bm);

/// p / sum(p); an all-zero input yields the uniform distribution (flagged).
Var normalize_sum(Tape& tp, Var p, int* degenerate_count = nullptr);

}  // namespace mvr::diff
