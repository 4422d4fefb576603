#pragma once

// Hierarchical cross-modal integration. Stage I: bottleneck points attend to
// projected hidden tokens. Stage II: a gated global token descriptor is tiled
// over the full-resolution map and fused through an MLP.

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "hammer/backbone.hpp"
#include "hammer/errors.hpp"
#include "hammer/nn.hpp"
#include "hammer/tensor.hpp"

namespace hammer {

struct FusionConfig {
  bool stage1 = true;
  bool stage2 = true;
  bool residual = false;  // adds f_p^enc back onto the stage-I output
};

template <class T>
struct FusionParams {
  Linear<T> query, key, value, output;  // d x d, no bias
  Tensor<T> gate;                       // w_s, d x 1
  Mlp<T> fuse;                          // 2d -> d -> d
  FusionConfig switches;

  static FusionParams create(ParameterSet<T>& ps, std::size_t d, FusionConfig cfg, const std::string& prefix = "fusion") {
    FusionParams f;
    f.query = Linear<T>::create(ps, prefix + ".attn.query", d, d, false);
    f.key = Linear<T>::create(ps, prefix + ".attn.key", d, d, false);
    f.value = Linear<T>::create(ps, prefix + ".attn.value", d, d, false);
    f.output = Linear<T>::create(ps, prefix + ".attn.output", d, d, false);
    f.gate = ps.create(prefix + ".gate", {d, 1}, 1.0 / std::sqrt(static_cast<double>(d)));
    f.fuse = Mlp<T>::create(ps, prefix + ".fuse", 2 * d, {d, d}, false);
    f.switches = cfg;
    return f;
  }

  std::size_t width() const { return query.in_features(); }
};

/// Single-head cross-attention, points as queries and tokens as keys/values,
/// followed by the output projection.
template <class T>
Tensor<T> bottleneck_cross_attention(const Tensor<T>& f_enc, const Tensor<T>& f_h, const FusionParams<T>& p) {
  if (f_enc.rank() != 2 || f_h.rank() != 2 || f_enc.dim(1) != f_h.dim(1)) {
    throw DimensionError("bottleneck_cross_attention: widths differ, " + shape_str(f_enc.shape()) + " vs " +
                         shape_str(f_h.shape()));
  }
  auto attended = scaled_dot_attention(p.query(f_enc), p.key(f_h), p.value(f_h));
  auto out = p.output(attended);
  return p.switches.residual ? add(f_enc, out) : out;
}

/// Softmax over token scores f_h w_s, as an L x 1 column.
template <class T>
Tensor<T> gating_weights(const Tensor<T>& f_h, const Tensor<T>& gate) {
  if (f_h.rank() != 2 || f_h.dim(1) != gate.rows()) {
    throw DimensionError("gating: tokens " + shape_str(f_h.shape()) + " vs gate " + shape_str(gate.shape()));
  }
  auto scores = reshape(matmul(f_h, gate), {1, f_h.dim(0)});
  return reshape(softmax_lastdim(scores), {f_h.dim(0), 1});
}

/// Gate-weighted sum of the token rows, 1 x d.
template <class T>
Tensor<T> gated_global_descriptor(const Tensor<T>& f_h, const Tensor<T>& gate) {
  auto s = gating_weights(f_h, gate);
  return matmul(transpose(s), f_h);
}

template <class T>
Tensor<T> duplicate(const Tensor<T>& descriptor, std::size_t n) {
  return repeat_rows(descriptor, n);
}

/// phi_f([f_p0 || duplicate(g, N)]).
template <class T>
Tensor<T> fuse_full_res(const Tensor<T>& f_p0, const Tensor<T>& descriptor, const FusionParams<T>& p) {
  if (f_p0.rank() != 2 || descriptor.numel() != f_p0.dim(1)) {
    throw DimensionError("fuse_full_res: map " + shape_str(f_p0.shape()) + " vs descriptor " +
                         shape_str(descriptor.shape()));
  }
  return p.fuse(concat_cols(f_p0, duplicate(descriptor, f_p0.dim(0))));
}

template <class T>
struct IntegrationResult {
  Tensor<T> fused;  // f~_p, N x d
  MultiScaleFeatures<T> multiscale;
};

/// encode -> [stage I] -> decode -> [stage II].
template <class T>
IntegrationResult<T> integrate(std::span<const Vec3> coords, const Tensor<T>& f_h, const Backbone<T>& backbone,
                               const FusionParams<T>& p) {
  auto enc = backbone.encode(coords);
  Tensor<T> bottleneck = enc.bottleneck();
  if (p.switches.stage1) bottleneck = bottleneck_cross_attention(bottleneck, f_h, p);
  IntegrationResult<T> r;
  r.multiscale = backbone.decode(bottleneck, enc);
  if (p.switches.stage2) {
    r.fused = fuse_full_res(r.multiscale.full_res, gated_global_descriptor(f_h, p.gate), p);
  } else {
    r.fused = r.multiscale.full_res;
  }
  return r;
}

}  // namespace hammer
