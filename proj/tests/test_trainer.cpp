#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dvkit/ctdnn.hpp"
#include "dvkit/rng.hpp"
#include "dvkit/trainer.hpp"
#include "test_configs.hpp"

using dvkit::CtDnnConfig;
using dvkit::CtDnnParams;
using dvkit::Errc;
using dvkit::Error;
using dvkit::FeatureMatrix;
using dvkit::TrainOptions;
using dvkit::Utterance;

namespace {

std::vector<const dvkit::Tensor*> tensors_of(const CtDnnParams& p) {
  std::vector<const dvkit::Tensor*> out;
  dvkit::for_each_tensor(p, [&](const char*, const dvkit::Tensor& t) { out.push_back(&t); });
  return out;
}

bool params_equal(const CtDnnParams& a, const CtDnnParams& b) {
  auto ta = tensors_of(a), tb = tensors_of(b);
  for (std::size_t i = 0; i < ta.size(); ++i)
    if (ta[i]->v != tb[i]->v) return false;
  return true;
}

// Separable by construction: per-speaker +-1 sign patterns, so any two
// speaker means differ by 2.0 wherever the patterns disagree.
std::vector<Utterance> toy_dataset(const CtDnnConfig& c, int utts_per_spk,
                                   int frames, std::uint64_t seed) {
  std::vector<Utterance> data;
  const int dim = (c.splice.left + c.splice.right + 1) * c.input_mels;
  std::vector<std::vector<double>> mean(c.n_speakers, std::vector<double>(dim));
  dvkit::Rng mrng(dvkit::mix_seed(seed, "means"));
  for (auto& m : mean)
    for (double& v : m) v = mrng.uniform() < 0.5 ? -1.0 : 1.0;
  dvkit::Rng rng(dvkit::mix_seed(seed, "noise"));
  for (int spk = 0; spk < c.n_speakers; ++spk) {
    for (int u = 0; u < utts_per_spk; ++u) {
      Utterance ut;
      ut.spliced = FeatureMatrix(frames, dim);
      for (int t = 0; t < frames; ++t)
        for (int d = 0; d < dim; ++d)
          ut.spliced.at(t, d) = mean[spk][d] + rng.uniform(-0.5, 0.5);
      ut.labels.assign(frames, spk);
      data.push_back(std::move(ut));
    }
  }
  return data;
}

}  // namespace

TEST_CASE("sgd_step") {
  CtDnnConfig c = testutil::tiny_config(2);

  SECTION("momentum 0 is plain gradient descent") {
    CtDnnParams w = dvkit::init_params(c, 1);
    CtDnnParams w0 = w;
    CtDnnParams g = dvkit::init_params(c, 2);
    CtDnnParams v = dvkit::make_params(c);
    dvkit::sgd_step(w, g, 0.1, 0.0, v);
    auto tw = tensors_of(w), tw0 = tensors_of(w0), tg = tensors_of(g);
    for (std::size_t i = 0; i < tw.size(); ++i)
      for (std::size_t j = 0; j < tw[i]->v.size(); ++j)
        REQUIRE(tw[i]->v[j] ==
                Catch::Approx(tw0[i]->v[j] - 0.1 * tg[i]->v[j]).margin(1e-15));
  }

  SECTION("zero gradients leave params unchanged") {
    CtDnnParams w = dvkit::init_params(c, 1);
    CtDnnParams w0 = w;
    CtDnnParams g = dvkit::make_params(c);
    CtDnnParams v = dvkit::make_params(c);
    dvkit::sgd_step(w, g, 0.1, 0.9, v);
    REQUIRE(params_equal(w, w0));
  }

  SECTION("two-step momentum recurrence") {
    // scalar case w=0, g=1, lr=0.1, momentum=0.9: w -> -0.1 then -0.29
    CtDnnParams w = dvkit::make_params(c);
    CtDnnParams g = dvkit::make_params(c);
    CtDnnParams v = dvkit::make_params(c);
    for (double& x : g.conv1_w.v) x = 1.0;
    dvkit::sgd_step(w, g, 0.1, 0.9, v);
    REQUIRE(w.conv1_w.v[0] == Catch::Approx(-0.1).margin(1e-15));
    dvkit::sgd_step(w, g, 0.1, 0.9, v);
    REQUIRE(w.conv1_w.v[0] == Catch::Approx(-0.29).margin(1e-15));
  }

  SECTION("non-finite gradients are rejected") {
    CtDnnParams w = dvkit::init_params(c, 1);
    CtDnnParams g = dvkit::make_params(c);
    CtDnnParams v = dvkit::make_params(c);
    g.td1_w.v[5] = std::nan("");
    try {
      dvkit::sgd_step(w, g, 0.1, 0.9, v);
      FAIL("expected NonFiniteGradient");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::non_finite_gradient);
    }
  }
}

TEST_CASE("train") {
  CtDnnConfig c = testutil::small_config(4);

  SECTION("zero epochs is a no-op") {
    CtDnnParams p = dvkit::init_params(c, 5);
    CtDnnParams p0 = p;
    auto data = toy_dataset(c, 2, 6, 50);
    TrainOptions opts;
    opts.epochs = 0;
    auto reports = dvkit::train(p, data, opts);
    REQUIRE(reports.empty());
    REQUIRE(params_equal(p, p0));
  }

  SECTION("separable toy data reaches high frame accuracy") {
    CtDnnParams p = dvkit::init_params(c, 5);
    auto data = toy_dataset(c, 4, 8, 51);
    TrainOptions opts;
    opts.epochs = 20;
    opts.lr = 0.02;
    opts.momentum = 0.9;
    opts.batch_frames = 64;
    opts.seed = 3;
    auto reports = dvkit::train(p, data, opts);
    REQUIRE(reports.size() == 20);
    bool reached = false;
    for (const auto& r : reports) reached = reached || r.frame_accuracy > 0.95;
    INFO("final accuracy " << reports.back().frame_accuracy);
    REQUIRE(reached);
    REQUIRE(reports.back().frame_accuracy > 0.95);
  }

  SECTION("same seed gives identical final params; thread count is irrelevant") {
    auto data = toy_dataset(c, 3, 7, 52);
    TrainOptions opts;
    opts.epochs = 3;
    opts.lr = 0.02;
    opts.seed = 9;

    CtDnnParams p1 = dvkit::init_params(c, 5);
    opts.threads = 1;
    auto r1 = dvkit::train(p1, data, opts);
    CtDnnParams p2 = dvkit::init_params(c, 5);
    opts.threads = 2;
    auto r2 = dvkit::train(p2, data, opts);
    CtDnnParams p3 = dvkit::init_params(c, 5);
    opts.threads = 4;
    auto r3 = dvkit::train(p3, data, opts);

    REQUIRE(params_equal(p1, p2));
    REQUIRE(params_equal(p1, p3));
    for (std::size_t i = 0; i < r1.size(); ++i) {
      REQUIRE(r1[i].mean_cross_entropy == r2[i].mean_cross_entropy);
      REQUIRE(r1[i].mean_cross_entropy == r3[i].mean_cross_entropy);
    }
  }

  SECTION("full-batch loss decreases on a fixed toy batch") {
    // 50 full-batch steps at lr 1e-3: final loss below the initial one
    CtDnnParams p = dvkit::init_params(c, 6);
    auto data = toy_dataset(c, 2, 6, 53);
    TrainOptions opts;
    opts.epochs = 50;
    opts.lr = 1e-3;
    opts.momentum = 0.0;
    opts.batch_frames = 1 << 20;  // everything in one batch
    opts.seed = 4;
    auto reports = dvkit::train(p, data, opts);
    REQUIRE(reports.front().mean_cross_entropy > reports.back().mean_cross_entropy);
  }

  SECTION("empty dataset is rejected") {
    CtDnnParams p = dvkit::init_params(c, 5);
    TrainOptions opts;
    REQUIRE_THROWS_AS(dvkit::train(p, {}, opts), Error);
  }
}
