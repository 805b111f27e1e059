#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>
#include <utility>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/feature.hpp"
#include "dvkit/rng.hpp"
#include "dvkit/tensor.hpp"

namespace dvkit {

struct ConvSpec {
  int maps = 0;
  int patch_time = 0;
  int patch_freq = 0;
  int pool_freq = 1;
};

// Convolutional + time-delay feature extractor: two conv layers with
// frequency max-pooling over the spliced frame image, a bottleneck, two
// time-delay layers with P-norm, a linear feature layer and a softmax
// speaker classifier on top.
struct CtDnnConfig {
  int input_mels = 40;
  SpliceSpec splice{4, 4};
  ConvSpec conv1{64, 3, 5, 2};
  ConvSpec conv2{128, 3, 5, 2};
  int bottleneck_dim = 512;
  std::vector<int> td1_offsets{-2, 0, 2};
  std::vector<int> td2_offsets{-4, 0, 4};
  int td_affine_dim = 2048;  // P-norm input width
  int pnorm_p = 2;
  int pnorm_group = 4;
  int feature_dim = 400;
  int n_speakers = 0;
};

// Extents derived from a config; computed once and reused everywhere.
struct NetDims {
  int img_t, img_f;
  int c1_t, c1_f, p1_f;
  int c2_t, c2_f, p2_f;
  int flat;
  int n_off1, n_off2;
  int td1_in, td2_in;
  int pnorm_out;
};

inline NetDims dims(const CtDnnConfig& c) {
  NetDims d;
  d.img_t = c.splice.left + c.splice.right + 1;
  d.img_f = c.input_mels;
  d.c1_t = d.img_t - c.conv1.patch_time + 1;
  d.c1_f = d.img_f - c.conv1.patch_freq + 1;
  d.p1_f = c.conv1.pool_freq > 0 ? d.c1_f / c.conv1.pool_freq : 0;
  d.c2_t = d.c1_t - c.conv2.patch_time + 1;
  d.c2_f = d.p1_f - c.conv2.patch_freq + 1;
  d.p2_f = c.conv2.pool_freq > 0 ? d.c2_f / c.conv2.pool_freq : 0;
  d.flat = c.conv2.maps * d.c2_t * d.p2_f;
  d.n_off1 = static_cast<int>(c.td1_offsets.size());
  d.n_off2 = static_cast<int>(c.td2_offsets.size());
  d.pnorm_out = c.pnorm_group > 0 ? c.td_affine_dim / c.pnorm_group : 0;
  d.td1_in = c.bottleneck_dim * d.n_off1;
  d.td2_in = d.pnorm_out * d.n_off2;
  return d;
}

inline void validate(const CtDnnConfig& c) {
  auto bad = [](const std::string& m) { fail(Errc::invalid_config, "ctdnn: " + m); };
  if (c.input_mels < 1) bad("input_mels must be positive");
  if (c.splice.left < 0 || c.splice.right < 0) bad("negative splice context");
  for (const ConvSpec* cv : {&c.conv1, &c.conv2}) {
    if (cv->maps < 1) bad("conv maps must be positive");
    if (cv->patch_time < 1 || cv->patch_freq < 1) bad("conv patch must be positive");
    if (cv->pool_freq < 1) bad("pool_freq must be >= 1");
  }
  NetDims d = dims(c);
  if (d.c1_t < 1 || d.c1_f < 1) bad("conv1 patch larger than spliced image");
  if (d.c1_f % c.conv1.pool_freq != 0) bad("conv1 output width not divisible by pool_freq");
  if (d.c2_t < 1 || d.c2_f < 1) bad("conv2 patch larger than conv1 output");
  if (d.c2_f % c.conv2.pool_freq != 0) bad("conv2 output width not divisible by pool_freq");
  if (c.bottleneck_dim < 1) bad("bottleneck_dim must be positive");
  if (c.td1_offsets.empty() || c.td2_offsets.empty()) bad("empty time-delay offsets");
  if (c.td_affine_dim < 1) bad("td_affine_dim must be positive");
  if (c.pnorm_p != 2) bad("only p = 2 is supported for the P-norm");
  if (c.pnorm_group < 1) bad("pnorm_group must be positive");
  if (c.td_affine_dim % c.pnorm_group != 0)
    bad("td_affine_dim not divisible by pnorm_group");
  if (c.feature_dim < 1) bad("feature_dim must be positive");
  if (c.n_speakers < 1) bad("n_speakers must be positive");
}

// Frames of context either side of the center frame, end to end.
inline int receptive_field_span(const CtDnnConfig& c) {
  auto max_abs = [](const std::vector<int>& v) {
    int m = 0;
    for (int x : v) m = std::max(m, std::abs(x));
    return m;
  };
  return 1 + 2 * (c.splice.left + max_abs(c.td1_offsets) + max_abs(c.td2_offsets));
}

struct CtDnnParams {
  CtDnnConfig config;
  Tensor conv1_w, conv1_b;
  Tensor conv2_w, conv2_b;
  Tensor bottleneck_w, bottleneck_b;
  Tensor td1_w, td1_b;
  Tensor td2_w, td2_b;
  Tensor feature_w, feature_b;
  Tensor output_w, output_b;
};

template <typename P, typename F>
void for_each_tensor(P& p, F&& f) {
  f("conv1_w", p.conv1_w);
  f("conv1_b", p.conv1_b);
  f("conv2_w", p.conv2_w);
  f("conv2_b", p.conv2_b);
  f("bottleneck_w", p.bottleneck_w);
  f("bottleneck_b", p.bottleneck_b);
  f("td1_w", p.td1_w);
  f("td1_b", p.td1_b);
  f("td2_w", p.td2_w);
  f("td2_b", p.td2_b);
  f("feature_w", p.feature_w);
  f("feature_b", p.feature_b);
  f("output_w", p.output_w);
  f("output_b", p.output_b);
}

// Zero-valued parameter set with shapes derived from the config.
inline CtDnnParams make_params(const CtDnnConfig& c) {
  validate(c);
  NetDims d = dims(c);
  CtDnnParams p;
  p.config = c;
  p.conv1_w = Tensor({c.conv1.maps, c.conv1.patch_time, c.conv1.patch_freq});
  p.conv1_b = Tensor({c.conv1.maps});
  p.conv2_w = Tensor({c.conv2.maps, c.conv1.maps, c.conv2.patch_time, c.conv2.patch_freq});
  p.conv2_b = Tensor({c.conv2.maps});
  p.bottleneck_w = Tensor({c.bottleneck_dim, d.flat});
  p.bottleneck_b = Tensor({c.bottleneck_dim});
  p.td1_w = Tensor({c.td_affine_dim, d.td1_in});
  p.td1_b = Tensor({c.td_affine_dim});
  p.td2_w = Tensor({c.td_affine_dim, d.td2_in});
  p.td2_b = Tensor({c.td_affine_dim});
  p.feature_w = Tensor({c.feature_dim, d.pnorm_out});
  p.feature_b = Tensor({c.feature_dim});
  p.output_w = Tensor({c.n_speakers, c.feature_dim});
  p.output_b = Tensor({c.n_speakers});
  return p;
}

// Xavier-uniform weights, zero biases. Each tensor gets its own stream
// derived from (seed, name), so draws do not depend on visit order.
inline CtDnnParams init_params(const CtDnnConfig& c, std::uint64_t seed) {
  CtDnnParams p = make_params(c);
  auto fill = [&](const char* name, Tensor& t, int fan_in, int fan_out) {
    double bound = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng(mix_seed(seed, name));
    for (double& x : t.v) x = rng.uniform(-bound, bound);
  };
  const int k1 = c.conv1.patch_time * c.conv1.patch_freq;
  const int k2 = c.conv2.patch_time * c.conv2.patch_freq;
  NetDims d = dims(c);
  fill("conv1_w", p.conv1_w, k1, c.conv1.maps * k1);
  fill("conv2_w", p.conv2_w, c.conv1.maps * k2, c.conv2.maps * k2);
  fill("bottleneck_w", p.bottleneck_w, d.flat, c.bottleneck_dim);
  fill("td1_w", p.td1_w, d.td1_in, c.td_affine_dim);
  fill("td2_w", p.td2_w, d.td2_in, c.td_affine_dim);
  fill("feature_w", p.feature_w, d.pnorm_out, c.feature_dim);
  fill("output_w", p.output_w, c.feature_dim, c.n_speakers);
  return p;
}

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

// Frames per GEMM block. Products run on fixed-size blocks (the tail is
// zero-padded) so a frame's result does not depend on the utterance length
// or its position; forward outputs are then exactly translation-consistent.
constexpr int kFrameBlock = 32;

// Column sums accumulated strictly in row order. Eigen's colwise().sum()
// may change its reduction order with the heap alignment of the target,
// which breaks bit-reproducibility of gradients.
inline void col_sums(const RowMat& m, double* out) {
  const Eigen::Index cols = m.cols();
  std::fill(out, out + cols, 0.0);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double* row = m.data() + r * cols;
    for (Eigen::Index j = 0; j < cols; ++j) out[j] += row[j];
  }
}

// y = x * w^T (+ bias), row-blocked. `unit` rows belong to one frame; x has
// frames*unit rows of width k; w is n x k.
inline void affine_rows(const double* x, int frames, int unit, int k,
                        const Tensor& w, const Tensor* bias, int n, double* y) {
  const int rows_per_block = kFrameBlock * unit;
  CMapRM wm(w.v.data(), n, k);
  Eigen::Map<const Eigen::VectorXd> bm(bias ? bias->v.data() : nullptr,
                                       bias ? n : 0);
  RowMat xpad, ypad;
  const int n_blocks = (frames + kFrameBlock - 1) / kFrameBlock;
  for (int b = 0; b < n_blocks; ++b) {
    const int f0 = b * kFrameBlock;
    const int live = std::min(kFrameBlock, frames - f0) * unit;
    const double* xb = x + static_cast<std::size_t>(f0) * unit * k;
    double* yb = y + static_cast<std::size_t>(f0) * unit * n;
    if (live == rows_per_block) {
      CMapRM xm(xb, rows_per_block, k);
      MapRM ym(yb, rows_per_block, n);
      ym.noalias() = xm * wm.transpose();
      if (bias) ym.rowwise() += bm.transpose();
    } else {
      xpad.setZero(rows_per_block, k);
      xpad.topRows(live) = CMapRM(xb, live, k);
      ypad.resize(rows_per_block, n);
      ypad.noalias() = xpad * wm.transpose();
      if (bias) ypad.rowwise() += bm.transpose();
      MapRM(yb, live, n) = ypad.topRows(live);
    }
  }
}

// Intermediate activations kept for the backward pass.
struct ForwardCache {
  int T = 0;
  std::vector<double> x1col;  // (T*c1 positions) x k1
  std::vector<double> a1;     // (T*c1 positions) x maps1, post-ReLU
  std::vector<double> x2col;  // (T*c2 positions) x k2
  std::vector<double> a2;     // (T*c2 positions) x maps2, post-ReLU
  std::vector<double> flat;   // T x flat
  std::vector<double> bn;     // T x bottleneck, post-ReLU
  std::vector<double> in1;    // T x td1_in
  std::vector<double> u1;     // T x td_affine
  std::vector<double> pn1;    // T x pnorm_out
  std::vector<double> in2;    // T x td2_in
  std::vector<double> u2;     // T x td_affine
  std::vector<double> pn2;    // T x pnorm_out
};

inline void gather_offsets(const std::vector<double>& src, int T, int dim,
                           const std::vector<int>& offsets,
                           std::vector<double>& dst) {
  const int n_off = static_cast<int>(offsets.size());
  dst.resize(static_cast<std::size_t>(T) * n_off * dim);
  for (int t = 0; t < T; ++t) {
    double* row = dst.data() + static_cast<std::size_t>(t) * n_off * dim;
    for (int k = 0; k < n_off; ++k) {
      int s = std::clamp(t + offsets[k], 0, T - 1);
      const double* from = src.data() + static_cast<std::size_t>(s) * dim;
      std::copy(from, from + dim, row + static_cast<std::size_t>(k) * dim);
    }
  }
}

inline void pnorm2_forward(const std::vector<double>& u, int T, int groups,
                           int group_size, std::vector<double>& y) {
  y.resize(static_cast<std::size_t>(T) * groups);
  for (std::size_t t = 0; t < static_cast<std::size_t>(T); ++t) {
    const double* ur = u.data() + t * groups * group_size;
    double* yr = y.data() + t * groups;
    for (int g = 0; g < groups; ++g) {
      double s = 0.0;
      for (int k = 0; k < group_size; ++k) {
        double v = ur[g * group_size + k];
        s += v * v;
      }
      yr[g] = std::sqrt(s);
    }
  }
}

inline void forward_cached(const CtDnnParams& p, const FeatureMatrix& spliced,
                           ForwardCache& cc, FeatureMatrix& features,
                           FeatureMatrix& logits) {
  const CtDnnConfig& c = p.config;
  validate(c);
  const NetDims d = dims(c);
  const int T = spliced.n_frames;
  if (T < 1) fail(Errc::empty_utterance, "forward: no frames");
  if (spliced.dim != d.img_t * d.img_f)
    fail(Errc::shape_mismatch,
         "forward: spliced dim " + std::to_string(spliced.dim) + " != " +
             std::to_string(d.img_t) + "x" + std::to_string(d.img_f));

  cc.T = T;
  const int pos1 = d.c1_t * d.c1_f;
  const int pos2 = d.c2_t * d.c2_f;
  const int k1 = c.conv1.patch_time * c.conv1.patch_freq;
  const int k2 = c.conv1.maps * c.conv2.patch_time * c.conv2.patch_freq;

  // conv stage, frame by frame (the spliced row is a time x freq image)
  cc.x1col.resize(static_cast<std::size_t>(T) * pos1 * k1);
  for (int t = 0; t < T; ++t) {
    const double* img = spliced.row(t);
    double* dst = cc.x1col.data() + static_cast<std::size_t>(t) * pos1 * k1;
    for (int ot = 0; ot < d.c1_t; ++ot)
      for (int of = 0; of < d.c1_f; ++of)
        for (int dt = 0; dt < c.conv1.patch_time; ++dt)
          for (int df = 0; df < c.conv1.patch_freq; ++df)
            *dst++ = img[(ot + dt) * d.img_f + (of + df)];
  }
  cc.a1.resize(static_cast<std::size_t>(T) * pos1 * c.conv1.maps);
  affine_rows(cc.x1col.data(), T, pos1, k1, p.conv1_w, &p.conv1_b,
              c.conv1.maps, cc.a1.data());
  for (double& v : cc.a1) v = v > 0.0 ? v : 0.0;

  // pool over frequency, gather into the conv2 im2col matrix
  cc.x2col.resize(static_cast<std::size_t>(T) * pos2 * k2);
  {
    std::vector<double> p1(static_cast<std::size_t>(d.c1_t) * d.p1_f * c.conv1.maps);
    for (int t = 0; t < T; ++t) {
      const double* a1t = cc.a1.data() + static_cast<std::size_t>(t) * pos1 * c.conv1.maps;
      for (int ot = 0; ot < d.c1_t; ++ot)
        for (int of = 0; of < d.p1_f; ++of)
          for (int m = 0; m < c.conv1.maps; ++m) {
            double best = a1t[(ot * d.c1_f + of * c.conv1.pool_freq) * c.conv1.maps + m];
            for (int kk = 1; kk < c.conv1.pool_freq; ++kk)
              best = std::max(best, a1t[(ot * d.c1_f + of * c.conv1.pool_freq + kk) *
                                            c.conv1.maps + m]);
            p1[(ot * d.p1_f + of) * c.conv1.maps + m] = best;
          }
      double* dst = cc.x2col.data() + static_cast<std::size_t>(t) * pos2 * k2;
      for (int ot = 0; ot < d.c2_t; ++ot)
        for (int of = 0; of < d.c2_f; ++of)
          for (int m = 0; m < c.conv1.maps; ++m)
            for (int dt = 0; dt < c.conv2.patch_time; ++dt)
              for (int df = 0; df < c.conv2.patch_freq; ++df)
                *dst++ = p1[((ot + dt) * d.p1_f + (of + df)) * c.conv1.maps + m];
    }
  }
  cc.a2.resize(static_cast<std::size_t>(T) * pos2 * c.conv2.maps);
  affine_rows(cc.x2col.data(), T, pos2, k2, p.conv2_w, &p.conv2_b,
              c.conv2.maps, cc.a2.data());
  for (double& v : cc.a2) v = v > 0.0 ? v : 0.0;

  // pool over frequency and flatten as [map][time][freq]
  cc.flat.resize(static_cast<std::size_t>(T) * d.flat);
  for (int t = 0; t < T; ++t) {
    const double* a2t = cc.a2.data() + static_cast<std::size_t>(t) * pos2 * c.conv2.maps;
    double* ft = cc.flat.data() + static_cast<std::size_t>(t) * d.flat;
    for (int n = 0; n < c.conv2.maps; ++n)
      for (int ot = 0; ot < d.c2_t; ++ot)
        for (int of = 0; of < d.p2_f; ++of) {
          double best = a2t[(ot * d.c2_f + of * c.conv2.pool_freq) * c.conv2.maps + n];
          for (int kk = 1; kk < c.conv2.pool_freq; ++kk)
            best = std::max(best, a2t[(ot * d.c2_f + of * c.conv2.pool_freq + kk) *
                                          c.conv2.maps + n]);
          ft[(n * d.c2_t + ot) * d.p2_f + of] = best;
        }
  }

  cc.bn.resize(static_cast<std::size_t>(T) * c.bottleneck_dim);
  affine_rows(cc.flat.data(), T, 1, d.flat, p.bottleneck_w, &p.bottleneck_b,
              c.bottleneck_dim, cc.bn.data());
  for (double& v : cc.bn) v = v > 0.0 ? v : 0.0;

  // time-delay layer 1
  gather_offsets(cc.bn, T, c.bottleneck_dim, c.td1_offsets, cc.in1);
  cc.u1.resize(static_cast<std::size_t>(T) * c.td_affine_dim);
  affine_rows(cc.in1.data(), T, 1, d.td1_in, p.td1_w, &p.td1_b,
              c.td_affine_dim, cc.u1.data());
  pnorm2_forward(cc.u1, T, d.pnorm_out, c.pnorm_group, cc.pn1);

  // time-delay layer 2
  gather_offsets(cc.pn1, T, d.pnorm_out, c.td2_offsets, cc.in2);
  cc.u2.resize(static_cast<std::size_t>(T) * c.td_affine_dim);
  affine_rows(cc.in2.data(), T, 1, d.td2_in, p.td2_w, &p.td2_b,
              c.td_affine_dim, cc.u2.data());
  pnorm2_forward(cc.u2, T, d.pnorm_out, c.pnorm_group, cc.pn2);

  // linear feature layer and logits
  features = FeatureMatrix(T, c.feature_dim);
  affine_rows(cc.pn2.data(), T, 1, d.pnorm_out, p.feature_w, &p.feature_b,
              c.feature_dim, features.values.data());
  logits = FeatureMatrix(T, c.n_speakers);
  affine_rows(features.values.data(), T, 1, c.feature_dim, p.output_w,
              &p.output_b, c.n_speakers, logits.values.data());

  for (double v : features.values)
    if (!std::isfinite(v)) fail(Errc::shape_mismatch, "forward: non-finite feature");
  for (double v : logits.values)
    if (!std::isfinite(v)) fail(Errc::shape_mismatch, "forward: non-finite logit");
}

}  // namespace detail

// Frame-level speaker features (feature-layer activations) and classifier
// logits for one spliced utterance.
inline std::pair<FeatureMatrix, FeatureMatrix> forward(
    const CtDnnParams& p, const FeatureMatrix& spliced) {
  detail::ForwardCache cc;
  FeatureMatrix features, logits;
  detail::forward_cached(p, spliced, cc, features, logits);
  return {std::move(features), std::move(logits)};
}

// Mean softmax cross-entropy over frames plus exact gradients for every
// parameter tensor. n_correct, when given, receives the count of frames
// whose top logit matches the label.
inline std::pair<double, CtDnnParams> loss_and_grads(
    const CtDnnParams& p, const FeatureMatrix& spliced,
    const std::vector<int>& labels, int* n_correct = nullptr) {
  using detail::CMapRM;
  using detail::MapRM;
  const CtDnnConfig& c = p.config;
  const NetDims d = dims(c);
  const int T = spliced.n_frames;
  if (static_cast<int>(labels.size()) != T)
    fail(Errc::shape_mismatch, "loss_and_grads: labels length != frames");
  for (int l : labels)
    if (l < 0 || l >= c.n_speakers)
      fail(Errc::label_out_of_range,
           "loss_and_grads: label " + std::to_string(l) + " not in [0, " +
               std::to_string(c.n_speakers) + ")");

  detail::ForwardCache cc;
  FeatureMatrix features, logits;
  detail::forward_cached(p, spliced, cc, features, logits);

  // softmax cross-entropy and dLoss/dlogits
  double loss = 0.0;
  int correct = 0;
  detail::RowMat dz(T, c.n_speakers);
  for (int t = 0; t < T; ++t) {
    const double* z = logits.row(t);
    int arg = 0;
    double m = z[0];
    for (int s = 1; s < c.n_speakers; ++s)
      if (z[s] > m) {
        m = z[s];
        arg = s;
      }
    if (arg == labels[t]) ++correct;
    double sum = 0.0;
    for (int s = 0; s < c.n_speakers; ++s) sum += std::exp(z[s] - m);
    double lse = m + std::log(sum);
    loss += lse - z[labels[t]];
    for (int s = 0; s < c.n_speakers; ++s)
      dz(t, s) = std::exp(z[s] - lse) / T;
    dz(t, labels[t]) -= 1.0 / T;
  }
  loss /= T;
  if (n_correct) *n_correct = correct;
  if (!std::isfinite(loss))
    fail(Errc::shape_mismatch, "loss_and_grads: non-finite loss");

  CtDnnParams g = make_params(c);
  const int pos1 = d.c1_t * d.c1_f;
  const int pos2 = d.c2_t * d.c2_f;
  const int k1 = c.conv1.patch_time * c.conv1.patch_freq;
  const int k2 = c.conv1.maps * c.conv2.patch_time * c.conv2.patch_freq;

  CMapRM feat(features.values.data(), T, c.feature_dim);
  CMapRM pn2(cc.pn2.data(), T, d.pnorm_out);
  CMapRM pn1(cc.pn1.data(), T, d.pnorm_out);
  CMapRM u2(cc.u2.data(), T, c.td_affine_dim);
  CMapRM u1(cc.u1.data(), T, c.td_affine_dim);
  CMapRM in2(cc.in2.data(), T, d.td2_in);
  CMapRM in1(cc.in1.data(), T, d.td1_in);
  CMapRM bn(cc.bn.data(), T, c.bottleneck_dim);
  CMapRM flat(cc.flat.data(), T, d.flat);

  // output affine
  MapRM(g.output_w.v.data(), c.n_speakers, c.feature_dim).noalias() =
      dz.transpose() * feat;
  detail::col_sums(dz, g.output_b.v.data());
  detail::RowMat dfeat = dz * CMapRM(p.output_w.v.data(), c.n_speakers, c.feature_dim);

  // feature affine
  MapRM(g.feature_w.v.data(), c.feature_dim, d.pnorm_out).noalias() =
      dfeat.transpose() * pn2;
  detail::col_sums(dfeat, g.feature_b.v.data());
  detail::RowMat dpn2 =
      dfeat * CMapRM(p.feature_w.v.data(), c.feature_dim, d.pnorm_out);

  // P-norm 2 backward: du = dy * u / y (zero where the norm is zero)
  detail::RowMat du2(T, c.td_affine_dim);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c.td_affine_dim; ++i) {
      int grp = i / c.pnorm_group;
      double y = pn2(t, grp);
      du2(t, i) = y > 0.0 ? dpn2(t, grp) * u2(t, i) / y : 0.0;
    }

  // td2 affine
  MapRM(g.td2_w.v.data(), c.td_affine_dim, d.td2_in).noalias() =
      du2.transpose() * in2;
  detail::col_sums(du2, g.td2_b.v.data());
  detail::RowMat din2 = du2 * CMapRM(p.td2_w.v.data(), c.td_affine_dim, d.td2_in);

  // scatter back through the clamped td2 splice
  detail::RowMat dpn1 = detail::RowMat::Zero(T, d.pnorm_out);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < d.n_off2; ++k) {
      int s = std::clamp(t + c.td2_offsets[k], 0, T - 1);
      dpn1.row(s) += din2.row(t).segment(k * d.pnorm_out, d.pnorm_out);
    }

  // P-norm 1 backward
  detail::RowMat du1(T, c.td_affine_dim);
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c.td_affine_dim; ++i) {
      int grp = i / c.pnorm_group;
      double y = pn1(t, grp);
      du1(t, i) = y > 0.0 ? dpn1(t, grp) * u1(t, i) / y : 0.0;
    }

  // td1 affine
  MapRM(g.td1_w.v.data(), c.td_affine_dim, d.td1_in).noalias() =
      du1.transpose() * in1;
  detail::col_sums(du1, g.td1_b.v.data());
  detail::RowMat din1 = du1 * CMapRM(p.td1_w.v.data(), c.td_affine_dim, d.td1_in);

  detail::RowMat dbn = detail::RowMat::Zero(T, c.bottleneck_dim);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < d.n_off1; ++k) {
      int s = std::clamp(t + c.td1_offsets[k], 0, T - 1);
      dbn.row(s) += din1.row(t).segment(k * c.bottleneck_dim, c.bottleneck_dim);
    }

  // bottleneck ReLU + affine
  for (int t = 0; t < T; ++t)
    for (int i = 0; i < c.bottleneck_dim; ++i)
      if (!(bn(t, i) > 0.0)) dbn(t, i) = 0.0;
  MapRM(g.bottleneck_w.v.data(), c.bottleneck_dim, d.flat).noalias() =
      dbn.transpose() * flat;
  detail::col_sums(dbn, g.bottleneck_b.v.data());
  detail::RowMat dflat =
      dbn * CMapRM(p.bottleneck_w.v.data(), c.bottleneck_dim, d.flat);

  // un-flatten, pool2 backward (route to the first max), conv2 ReLU mask
  detail::RowMat da2 = detail::RowMat::Zero(static_cast<Eigen::Index>(T) * pos2,
                                            c.conv2.maps);
  for (int t = 0; t < T; ++t) {
    const double* a2t = cc.a2.data() + static_cast<std::size_t>(t) * pos2 * c.conv2.maps;
    for (int n = 0; n < c.conv2.maps; ++n)
      for (int ot = 0; ot < d.c2_t; ++ot)
        for (int of = 0; of < d.p2_f; ++of) {
          double gval = dflat(t, (n * d.c2_t + ot) * d.p2_f + of);
          if (gval == 0.0) continue;
          int base = of * c.conv2.pool_freq;
          int best = 0;
          double bv = a2t[(ot * d.c2_f + base) * c.conv2.maps + n];
          for (int kk = 1; kk < c.conv2.pool_freq; ++kk) {
            double v = a2t[(ot * d.c2_f + base + kk) * c.conv2.maps + n];
            if (v > bv) {
              bv = v;
              best = kk;
            }
          }
          if (bv > 0.0)
            da2(static_cast<Eigen::Index>(t) * pos2 + ot * d.c2_f + base + best,
                n) += gval;
        }
  }

  // conv2 as matrix product on the im2col matrix
  CMapRM x2col(cc.x2col.data(), static_cast<Eigen::Index>(T) * pos2, k2);
  MapRM(g.conv2_w.v.data(), c.conv2.maps, k2).noalias() = da2.transpose() * x2col;
  detail::col_sums(da2, g.conv2_b.v.data());
  detail::RowMat dx2col = da2 * CMapRM(p.conv2_w.v.data(), c.conv2.maps, k2);

  // col2im into pooled conv1 space, then pool1 backward + ReLU mask
  detail::RowMat da1 = detail::RowMat::Zero(static_cast<Eigen::Index>(T) * pos1,
                                            c.conv1.maps);
  {
    std::vector<double> dp1(static_cast<std::size_t>(d.c1_t) * d.p1_f * c.conv1.maps);
    for (int t = 0; t < T; ++t) {
      std::fill(dp1.begin(), dp1.end(), 0.0);
      for (int ot = 0; ot < d.c2_t; ++ot)
        for (int of = 0; of < d.c2_f; ++of) {
          const double* src = dx2col.data() +
                              (static_cast<std::size_t>(t) * pos2 + ot * d.c2_f + of) * k2;
          for (int m = 0; m < c.conv1.maps; ++m)
            for (int dt = 0; dt < c.conv2.patch_time; ++dt)
              for (int df = 0; df < c.conv2.patch_freq; ++df)
                dp1[((ot + dt) * d.p1_f + (of + df)) * c.conv1.maps + m] +=
                    src[(m * c.conv2.patch_time + dt) * c.conv2.patch_freq + df];
        }
      const double* a1t = cc.a1.data() + static_cast<std::size_t>(t) * pos1 * c.conv1.maps;
      for (int ot = 0; ot < d.c1_t; ++ot)
        for (int of = 0; of < d.p1_f; ++of)
          for (int m = 0; m < c.conv1.maps; ++m) {
            double gval = dp1[(ot * d.p1_f + of) * c.conv1.maps + m];
            if (gval == 0.0) continue;
            int base = of * c.conv1.pool_freq;
            int best = 0;
            double bv = a1t[(ot * d.c1_f + base) * c.conv1.maps + m];
            for (int kk = 1; kk < c.conv1.pool_freq; ++kk) {
              double v = a1t[(ot * d.c1_f + base + kk) * c.conv1.maps + m];
              if (v > bv) {
                bv = v;
                best = kk;
              }
            }
            if (bv > 0.0)
              da1(static_cast<Eigen::Index>(t) * pos1 + ot * d.c1_f + base + best,
                  m) += gval;
          }
    }
  }

  CMapRM x1col(cc.x1col.data(), static_cast<Eigen::Index>(T) * pos1, k1);
  MapRM(g.conv1_w.v.data(), c.conv1.maps, k1).noalias() = da1.transpose() * x1col;
  detail::col_sums(da1, g.conv1_b.v.data());

  return {loss, std::move(g)};
}

}  // namespace dvkit
