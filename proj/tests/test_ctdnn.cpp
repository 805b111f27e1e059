#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "dvkit/ctdnn.hpp"
#include "dvkit/ctdnn_io.hpp"
#include "dvkit/rng.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"
#include "reference_forward.hpp"
#include "test_configs.hpp"

using dvkit::CtDnnConfig;
using dvkit::CtDnnParams;
using dvkit::Errc;
using dvkit::Error;
using dvkit::FeatureMatrix;

TEST_CASE("receptive_field_span") {
  CtDnnConfig c;
  c.n_speakers = 10;
  REQUIRE(dvkit::receptive_field_span(c) == 21);

  c.td1_offsets = {0};
  c.td2_offsets = {0};
  REQUIRE(dvkit::receptive_field_span(c) == 9);

  c.splice = {0, 0};
  REQUIRE(dvkit::receptive_field_span(c) == 1);
}

TEST_CASE("init_params") {
  CtDnnConfig c = testutil::small_config();

  SECTION("deterministic per seed") {
    CtDnnParams a = dvkit::init_params(c, 42);
    CtDnnParams b = dvkit::init_params(c, 42);
    std::vector<const dvkit::Tensor*> ta, tb;
    dvkit::for_each_tensor(a, [&](const char*, const dvkit::Tensor& t) { ta.push_back(&t); });
    dvkit::for_each_tensor(b, [&](const char*, const dvkit::Tensor& t) { tb.push_back(&t); });
    for (std::size_t i = 0; i < ta.size(); ++i) REQUIRE(ta[i]->v == tb[i]->v);

    CtDnnParams d = dvkit::init_params(c, 43);
    REQUIRE(a.conv1_w.v != d.conv1_w.v);
  }

  SECTION("biases zero, weights inside the Xavier bound") {
    CtDnnParams p = dvkit::init_params(c, 7);
    for (const dvkit::Tensor* b :
         {&p.conv1_b, &p.conv2_b, &p.bottleneck_b, &p.td1_b, &p.td2_b,
          &p.feature_b, &p.output_b})
      for (double v : b->v) REQUIRE(v == 0.0);

    dvkit::NetDims d = dvkit::dims(c);
    auto check_bound = [](const dvkit::Tensor& t, int fan_in, int fan_out) {
      double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double v : t.v) REQUIRE(std::fabs(v) <= bound);
    };
    int k1 = c.conv1.patch_time * c.conv1.patch_freq;
    int k2 = c.conv2.patch_time * c.conv2.patch_freq;
    check_bound(p.conv1_w, k1, c.conv1.maps * k1);
    check_bound(p.conv2_w, c.conv1.maps * k2, c.conv2.maps * k2);
    check_bound(p.bottleneck_w, d.flat, c.bottleneck_dim);
    check_bound(p.td1_w, d.td1_in, c.td_affine_dim);
    check_bound(p.td2_w, d.td2_in, c.td_affine_dim);
    check_bound(p.feature_w, d.pnorm_out, c.feature_dim);
    check_bound(p.output_w, c.feature_dim, c.n_speakers);
  }

  SECTION("invalid configs are rejected") {
    CtDnnConfig bad = c;
    bad.td_affine_dim = 15;  // not divisible by group 4
    REQUIRE_THROWS_AS(dvkit::init_params(bad, 1), Error);
    bad = c;
    bad.conv1.patch_freq = 99;
    REQUIRE_THROWS_AS(dvkit::init_params(bad, 1), Error);
    bad = c;
    bad.n_speakers = 0;
    REQUIRE_THROWS_AS(dvkit::init_params(bad, 1), Error);
    bad = c;
    bad.pnorm_p = 3;
    REQUIRE_THROWS_AS(dvkit::init_params(bad, 1), Error);
  }
}

TEST_CASE("forward with zero params gives a uniform softmax") {
  CtDnnConfig c = testutil::small_config(7);
  CtDnnParams p = dvkit::make_params(c);
  FeatureMatrix x = testutil::random_spliced(c, 5, 11);
  auto [features, logits] = dvkit::forward(p, x);
  REQUIRE(features.n_frames == 5);
  REQUIRE(features.dim == c.feature_dim);
  for (int t = 0; t < 5; ++t)
    for (int s = 0; s < c.n_speakers; ++s) REQUIRE(logits.at(t, s) == 0.0);

  // softmax over equal logits -> 1/n each, sums to one
  for (int t = 0; t < 5; ++t) {
    double sum = 0.0;
    for (int s = 0; s < c.n_speakers; ++s) sum += std::exp(logits.at(t, s));
    for (int s = 0; s < c.n_speakers; ++s)
      REQUIRE(std::exp(logits.at(t, s)) / sum ==
              Catch::Approx(1.0 / c.n_speakers).margin(1e-12));
  }
}

TEST_CASE("forward shapes for a single frame") {
  CtDnnConfig c = testutil::small_config(3);
  CtDnnParams p = dvkit::init_params(c, 5);
  FeatureMatrix x = testutil::random_spliced(c, 1, 6);
  auto [features, logits] = dvkit::forward(p, x);
  REQUIRE(features.n_frames == 1);
  REQUIRE(features.dim == c.feature_dim);
  REQUIRE(logits.n_frames == 1);
  REQUIRE(logits.dim == 3);
}

TEST_CASE("forward rejects mismatched input width") {
  CtDnnConfig c = testutil::small_config(3);
  CtDnnParams p = dvkit::init_params(c, 5);
  FeatureMatrix x(4, 17);
  try {
    dvkit::forward(p, x);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::shape_mismatch);
  }
}

TEST_CASE("optimized forward matches the loop-only reference") {
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    CtDnnConfig c = testutil::small_config(5);
    CtDnnParams p = dvkit::init_params(c, seed);
    FeatureMatrix x = testutil::random_spliced(c, 7, 100 + seed);
    auto [features, logits] = dvkit::forward(p, x);
    refnet::Result ref = refnet::forward(p, x);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < features.values.size(); ++i)
      max_diff = std::max(max_diff,
                          std::fabs(features.values[i] - ref.features.values[i]));
    for (std::size_t i = 0; i < logits.values.size(); ++i)
      max_diff = std::max(max_diff,
                          std::fabs(logits.values[i] - ref.logits.values[i]));
    REQUIRE(max_diff < 1e-10);
  }

  SECTION("default-sized architecture, one case") {
    CtDnnConfig c;  // full defaults
    c.n_speakers = 6;
    CtDnnParams p = dvkit::init_params(c, 9);
    FeatureMatrix x = testutil::random_spliced(c, 3, 500);
    auto [features, logits] = dvkit::forward(p, x);
    refnet::Result ref = refnet::forward(p, x);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < features.values.size(); ++i)
      max_diff = std::max(max_diff,
                          std::fabs(features.values[i] - ref.features.values[i]));
    REQUIRE(max_diff < 1e-10);
  }
}

TEST_CASE("p-norm groups reduce to the Euclidean norm") {
  dvkit::Rng rng(4);
  std::vector<double> u(6 * 8);
  for (double& v : u) v = rng.uniform(-2.0, 2.0);
  std::vector<double> y;
  dvkit::detail::pnorm2_forward(u, 6, 2, 4, y);
  REQUIRE(y.size() == 12);
  for (int t = 0; t < 6; ++t)
    for (int g = 0; g < 2; ++g) {
      double s = 0.0;
      for (int k = 0; k < 4; ++k) s += u[t * 8 + g * 4 + k] * u[t * 8 + g * 4 + k];
      REQUIRE(y[t * 2 + g] == Catch::Approx(std::sqrt(s)).margin(1e-12));
      REQUIRE(y[t * 2 + g] >= 0.0);
    }
}

TEST_CASE("loss at zero params equals log n_speakers") {
  for (int n : {2, 5, 20}) {
    CtDnnConfig c = testutil::tiny_config(n);
    CtDnnParams p = dvkit::make_params(c);
    FeatureMatrix x = testutil::random_spliced(c, 6, 21);
    auto labels = testutil::random_labels(6, n, 22);
    auto [loss, grads] = dvkit::loss_and_grads(p, x, labels);
    (void)grads;
    REQUIRE(loss == Catch::Approx(std::log(static_cast<double>(n))).margin(1e-9));
  }
}

TEST_CASE("loss_and_grads rejects bad labels") {
  CtDnnConfig c = testutil::tiny_config(2);
  CtDnnParams p = dvkit::init_params(c, 1);
  FeatureMatrix x = testutil::random_spliced(c, 3, 2);
  try {
    dvkit::loss_and_grads(p, x, {0, 1, 2});
    FAIL("expected LabelOutOfRange");
  } catch (const Error& e) {
    REQUIRE(e.code() == Errc::label_out_of_range);
  }
  REQUIRE_THROWS_AS(dvkit::loss_and_grads(p, x, {0, 1}), Error);
}

TEST_CASE("analytic gradients match central finite differences") {
  // Three seeded tiny configs, every parameter tensor. Seeds are chosen so
  // the evaluation point is differentiable: a ReLU or pool tie within h of
  // zero turns the central difference itself into noise.
  for (std::uint64_t seed : {11ull, 12ull, 14ull}) {
    CtDnnConfig c = testutil::tiny_config(2);
    FeatureMatrix x = testutil::random_spliced(c, 7, 300 + seed);
    auto labels = testutil::random_labels(7, 2, 400 + seed);
    auto res = testutil::gradcheck(c, seed, x, labels);
    INFO("seed " << seed << " worst tensor " << res.worst_tensor);
    REQUIRE(res.max_rel_err < 1e-4);
  }
}

TEST_CASE("mean-over-frames loss semantics") {
  SECTION("frame duplication with per-frame context") {
    CtDnnConfig c = testutil::tiny_config(3);
    c.td1_offsets = {0};
    c.td2_offsets = {0};
    CtDnnParams p = dvkit::init_params(c, 8);
    FeatureMatrix x = testutil::random_spliced(c, 5, 31);
    auto labels = testutil::random_labels(5, 3, 32);

    FeatureMatrix x2(10, x.dim);
    std::vector<int> labels2(10);
    for (int t = 0; t < 5; ++t)
      for (int r = 0; r < 2; ++r) {
        for (int d = 0; d < x.dim; ++d) x2.at(2 * t + r, d) = x.at(t, d);
        labels2[2 * t + r] = labels[t];
      }
    double l1 = dvkit::loss_and_grads(p, x, labels).first;
    double l2 = dvkit::loss_and_grads(p, x2, labels2).first;
    REQUIRE(l2 == Catch::Approx(l1).margin(1e-12));
  }

  SECTION("constant utterance, default offsets") {
    CtDnnConfig c = testutil::tiny_config(3);
    CtDnnParams p = dvkit::init_params(c, 9);
    FeatureMatrix x(4, (c.splice.left + c.splice.right + 1) * c.input_mels);
    dvkit::Rng rng(77);
    for (int d = 0; d < x.dim; ++d) x.at(0, d) = rng.uniform(-1.0, 1.0);
    for (int t = 1; t < 4; ++t)
      for (int d = 0; d < x.dim; ++d) x.at(t, d) = x.at(0, d);
    FeatureMatrix x2(8, x.dim);
    for (int t = 0; t < 8; ++t)
      for (int d = 0; d < x.dim; ++d) x2.at(t, d) = x.at(0, d);
    double l1 = dvkit::loss_and_grads(p, x, std::vector<int>(4, 1)).first;
    double l2 = dvkit::loss_and_grads(p, x2, std::vector<int>(8, 1)).first;
    REQUIRE(l2 == Catch::Approx(l1).margin(1e-12));
  }
}

TEST_CASE("forward is translation-consistent away from the edges") {
  CtDnnConfig c = testutil::small_config(4);
  CtDnnParams p = dvkit::init_params(c, 17);
  const int T = 30, k = 3;
  FeatureMatrix x = testutil::random_spliced(c, T, 55);
  FeatureMatrix shifted(T - k, x.dim);
  for (int t = 0; t < T - k; ++t)
    for (int d = 0; d < x.dim; ++d) shifted.at(t, d) = x.at(t + k, d);

  auto [f1, z1] = dvkit::forward(p, x);
  auto [f2, z2] = dvkit::forward(p, shifted);
  for (int t = 10; t < (T - k) - 10; ++t)
    for (int d = 0; d < c.feature_dim; ++d)
      REQUIRE(f2.at(t, d) == f1.at(t + k, d));  // bit-exact
}

TEST_CASE("save/load round-trips parameters bit-exactly") {
  testutil::TempDir tmp("ctdnn");
  CtDnnConfig c = testutil::small_config(5);
  CtDnnParams p = dvkit::init_params(c, 77);
  // make biases non-trivial too
  dvkit::Rng rng(78);
  for (double& v : p.conv1_b.v) v = rng.normal();
  for (double& v : p.output_b.v) v = rng.normal() * 1e-30;

  dvkit::save_params(p, tmp.file("m.ctdnn"));
  CtDnnParams q = dvkit::load_params(tmp.file("m.ctdnn"));

  REQUIRE(q.config.input_mels == c.input_mels);
  REQUIRE(q.config.td1_offsets == c.td1_offsets);
  REQUIRE(q.config.n_speakers == c.n_speakers);
  std::vector<const dvkit::Tensor*> a, b;
  dvkit::for_each_tensor(p, [&](const char*, const dvkit::Tensor& t) { a.push_back(&t); });
  dvkit::for_each_tensor(q, [&](const char*, const dvkit::Tensor& t) { b.push_back(&t); });
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i]->shape == b[i]->shape);
    REQUIRE(a[i]->v == b[i]->v);  // bit-exact via hex floats
  }

  // a second save of the loaded params is byte-identical
  dvkit::save_params(q, tmp.file("m2.ctdnn"));
  REQUIRE(testutil::read_bytes(tmp.file("m.ctdnn")) ==
          testutil::read_bytes(tmp.file("m2.ctdnn")));
}

TEST_CASE("load_params failure modes") {
  testutil::TempDir tmp("ctdnnio");

  SECTION("wrong version tag") {
    testutil::write_text(tmp.file("v.ctdnn"), "CTDNN9\nfoo=1\n");
    try {
      dvkit::load_params(tmp.file("v.ctdnn"));
      FAIL("expected VersionMismatch");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::version_mismatch);
    }
  }

  SECTION("truncated value list") {
    CtDnnConfig c = testutil::tiny_config(2);
    CtDnnParams p = dvkit::init_params(c, 3);
    dvkit::save_params(p, tmp.file("t.ctdnn"));
    std::string bytes = testutil::read_bytes(tmp.file("t.ctdnn"));
    testutil::write_text(tmp.file("t.ctdnn"), bytes.substr(0, bytes.size() / 2));
    try {
      dvkit::load_params(tmp.file("t.ctdnn"));
      FAIL("expected CorruptTensor");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::corrupt_tensor);
    }
  }

  SECTION("missing file") {
    REQUIRE_THROWS_AS(dvkit::load_params(tmp.file("missing.ctdnn")), Error);
  }
}
