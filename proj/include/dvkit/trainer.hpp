#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/ctdnn.hpp"
#include "dvkit/rng.hpp"

namespace dvkit {

struct TrainReport {
  int epoch = 0;
  double mean_cross_entropy = 0.0;
  double frame_accuracy = 0.0;
};

struct TrainOptions {
  int epochs = 10;
  double lr = 0.02;
  double momentum = 0.9;
  double lr_decay = 1.0;    // multiplied into lr after each epoch
  int batch_frames = 512;   // frame budget per minibatch
  int threads = 2;          // gradient workers; results do not depend on this
  std::uint64_t seed = 0;
};

struct Utterance {
  FeatureMatrix spliced;
  std::vector<int> labels;
};

namespace detail {

template <typename P, typename Q, typename F>
void for_each_tensor_pair(P& a, Q& b, F&& f) {
  f(a.conv1_w, b.conv1_w);
  f(a.conv1_b, b.conv1_b);
  f(a.conv2_w, b.conv2_w);
  f(a.conv2_b, b.conv2_b);
  f(a.bottleneck_w, b.bottleneck_w);
  f(a.bottleneck_b, b.bottleneck_b);
  f(a.td1_w, b.td1_w);
  f(a.td1_b, b.td1_b);
  f(a.td2_w, b.td2_w);
  f(a.td2_b, b.td2_b);
  f(a.feature_w, b.feature_w);
  f(a.feature_b, b.feature_b);
  f(a.output_w, b.output_w);
  f(a.output_b, b.output_b);
}

inline void axpy_params(double a, const CtDnnParams& x, CtDnnParams& y) {
  for_each_tensor_pair(x, y, [a](const Tensor& xs, Tensor& ys) {
    for (std::size_t i = 0; i < xs.v.size(); ++i) ys.v[i] += a * xs.v[i];
  });
}

inline void zero_params(CtDnnParams& p) {
  for_each_tensor(p, [](const char*, Tensor& t) {
    std::fill(t.v.begin(), t.v.end(), 0.0);
  });
}

}  // namespace detail

// Momentum update: v <- momentum*v - lr*g; w <- w + v.
inline void sgd_step(CtDnnParams& params, const CtDnnParams& grads, double lr,
                     double momentum, CtDnnParams& velocity) {
  if (!(lr > 0.0)) fail(Errc::invalid_config, "sgd_step: lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0))
    fail(Errc::invalid_config, "sgd_step: momentum must be in [0,1)");
  detail::for_each_tensor_pair(params, grads, [](Tensor& w, const Tensor& g) {
    if (!w.same_shape(g))
      fail(Errc::shape_mismatch, "sgd_step: gradient shape mismatch");
    if (!g.all_finite())
      fail(Errc::non_finite_gradient, "sgd_step: non-finite gradient");
  });
  detail::for_each_tensor_pair(velocity, grads, [&](Tensor& v, const Tensor& g) {
    for (std::size_t i = 0; i < v.v.size(); ++i)
      v.v[i] = momentum * v.v[i] - lr * g.v[i];
  });
  detail::for_each_tensor_pair(params, velocity, [](Tensor& w, const Tensor& v) {
    for (std::size_t i = 0; i < w.v.size(); ++i) w.v[i] += v.v[i];
  });
}

// Seeded epoch shuffle; utterances grouped greedily into minibatches under
// a frame budget; gradients frame-weighted so each batch optimizes the mean
// cross-entropy over its frames.
//
// Per-utterance gradients within a batch run on worker threads, but slots
// are reduced in utterance order, so the result is bit-identical for any
// thread count (including 1).
inline std::vector<TrainReport> train(CtDnnParams& params,
                                      const std::vector<Utterance>& dataset,
                                      const TrainOptions& opts) {
  if (opts.epochs < 0) fail(Errc::invalid_config, "train: negative epochs");
  if (opts.epochs == 0) return {};
  if (dataset.empty()) fail(Errc::invalid_config, "train: empty dataset");
  const NetDims d = dims(params.config);
  for (const auto& u : dataset) {
    if (u.spliced.dim != d.img_t * d.img_f)
      fail(Errc::shape_mismatch, "train: utterance dim mismatch");
    if (u.spliced.n_frames < 1 ||
        static_cast<int>(u.labels.size()) != u.spliced.n_frames)
      fail(Errc::shape_mismatch, "train: labels/frames mismatch");
  }

  CtDnnParams velocity = make_params(params.config);
  const int n_workers =
      std::max(1, std::min(opts.threads, 4));  // slots are fixed at 4
  constexpr int kSlots = 4;
  std::vector<CtDnnParams> slot_grads;
  for (int i = 0; i < kSlots; ++i) slot_grads.push_back(make_params(params.config));
  std::vector<double> slot_loss(kSlots);
  std::vector<int> slot_correct(kSlots);
  CtDnnParams batch_grads = make_params(params.config);

  std::vector<TrainReport> reports;
  double lr = opts.lr;
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    Rng rng(mix_seed(mix_seed(opts.seed, "epoch"), static_cast<std::uint64_t>(epoch)));
    rng.shuffle(order);

    double epoch_loss = 0.0;
    long epoch_frames = 0;
    long epoch_correct = 0;

    std::size_t pos = 0;
    while (pos < order.size()) {
      // assemble one minibatch
      std::vector<std::size_t> batch;
      int frames = 0;
      while (pos < order.size() &&
             (batch.empty() || frames + dataset[order[pos]].spliced.n_frames <=
                                   opts.batch_frames)) {
        frames += dataset[order[pos]].spliced.n_frames;
        batch.push_back(order[pos++]);
      }

      detail::zero_params(batch_grads);
      double batch_loss = 0.0;
      long batch_correct = 0;

      for (std::size_t chunk = 0; chunk < batch.size(); chunk += kSlots) {
        const int live = static_cast<int>(
            std::min<std::size_t>(kSlots, batch.size() - chunk));
        std::vector<std::exception_ptr> errors(kSlots);
        auto work = [&](int w0) {
          try {
            for (int i = w0; i < live; i += n_workers) {
              const Utterance& u = dataset[batch[chunk + i]];
              auto [loss, g] = loss_and_grads(params, u.spliced, u.labels,
                                              &slot_correct[i]);
              slot_grads[i] = std::move(g);
              slot_loss[i] = loss;
            }
          } catch (...) {
            errors[w0] = std::current_exception();
          }
        };
        if (n_workers == 1 || live == 1) {
          work(0);
        } else {
          std::vector<std::thread> pool;
          for (int w = 1; w < std::min(n_workers, live); ++w)
            pool.emplace_back(work, w);
          work(0);
          for (auto& th : pool) th.join();
        }
        for (const auto& err : errors)
          if (err) std::rethrow_exception(err);
        for (int i = 0; i < live; ++i) {
          const int tu = dataset[batch[chunk + i]].spliced.n_frames;
          detail::axpy_params(static_cast<double>(tu), slot_grads[i], batch_grads);
          batch_loss += slot_loss[i] * tu;
          batch_correct += slot_correct[i];
        }
      }

      // scale the frame-weighted sum down to a mean over batch frames
      for_each_tensor(batch_grads, [&](const char*, Tensor& t) {
        for (double& x : t.v) x /= frames;
      });
      epoch_loss += batch_loss;
      epoch_frames += frames;
      epoch_correct += batch_correct;

      sgd_step(params, batch_grads, lr, opts.momentum, velocity);
    }

    TrainReport rep;
    rep.epoch = epoch;
    rep.mean_cross_entropy = epoch_loss / epoch_frames;
    rep.frame_accuracy = static_cast<double>(epoch_correct) / epoch_frames;
    reports.push_back(rep);
    lr *= opts.lr_decay;
  }
  return reports;
}

}  // namespace dvkit
