#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/dvector.hpp"

namespace dvkit {

// Two-covariance PLDA: speaker mean y ~ N(mu, between), observation
// x ~ N(y, within). em_loglik records the total marginal log-likelihood at
// the start of each EM iteration.
struct PldaModel {
  int dim = 0;
  std::vector<double> mu;       // dim
  std::vector<double> between;  // dim x dim, row-major
  std::vector<double> within;   // dim x dim
  std::vector<double> em_loglik;
};

namespace detail {

inline Eigen::Map<const Eigen::MatrixXd> as_mat(const std::vector<double>& v,
                                                int d) {
  return Eigen::Map<const Eigen::MatrixXd>(v.data(), d, d);
}

// Cholesky with the spec'd rescue: one ridge of 1e-6 * mean-diagonal before
// giving up.
inline Eigen::LLT<Eigen::MatrixXd> chol_or_ridge(Eigen::MatrixXd m,
                                                 const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() == Eigen::Success) return llt;
  double ridge = 1e-6 * m.diagonal().mean();
  if (!(ridge > 0.0)) ridge = 1e-12;
  m.diagonal().array() += ridge;
  llt.compute(m);
  if (llt.info() != Eigen::Success)
    fail(Errc::singular_covariance,
         std::string("plda: ") + what + " covariance not positive definite");
  return llt;
}

inline double log_det_from_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
}

inline double gaussian_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean,
                              const Eigen::LLT<Eigen::MatrixXd>& llt,
                              double logdet) {
  Eigen::VectorXd z = llt.matrixL().solve(x - mean);
  return -0.5 * (x.size() * std::log(2.0 * M_PI) + logdet + z.squaredNorm());
}

struct SpeakerStats {
  int n = 0;
  Eigen::VectorXd mean;
  Eigen::MatrixXd scatter;  // sum of (x - mean)(x - mean)^T within the class
};

}  // namespace detail

inline PldaModel fit_plda(const std::vector<DVector>& vectors, int iters) {
  if (iters < 1) fail(Errc::invalid_spec, "fit_plda: iters must be >= 1");
  if (vectors.empty()) fail(Errc::too_few_samples, "fit_plda: no vectors");
  const int D = vectors[0].dim();
  std::map<std::string, std::vector<const DVector*>> classes;
  for (const auto& v : vectors) {
    if (v.dim() != D) fail(Errc::dim_mismatch, "fit_plda: inconsistent dims");
    if (v.spk_id.empty())
      fail(Errc::too_few_samples, "fit_plda: vector " + v.utt_id + " has no spk_id");
    classes[v.spk_id].push_back(&v);
  }
  const int C = static_cast<int>(classes.size());
  if (C < 2) fail(Errc::too_few_samples, "fit_plda: need at least 2 classes");
  for (const auto& [spk, vs] : classes)
    if (vs.size() < 2)
      fail(Errc::too_few_samples, "fit_plda: class " + spk + " has < 2 vectors");

  const int N = static_cast<int>(vectors.size());
  std::vector<detail::SpeakerStats> stats;
  Eigen::VectorXd global = Eigen::VectorXd::Zero(D);
  for (const auto& [spk, vs] : classes) {
    detail::SpeakerStats s;
    s.n = static_cast<int>(vs.size());
    s.mean = Eigen::VectorXd::Zero(D);
    for (const auto* v : vs)
      s.mean += Eigen::Map<const Eigen::VectorXd>(v->values.data(), D);
    s.mean /= s.n;
    s.scatter = Eigen::MatrixXd::Zero(D, D);
    for (const auto* v : vs) {
      Eigen::VectorXd d =
          Eigen::Map<const Eigen::VectorXd>(v->values.data(), D) - s.mean;
      s.scatter.noalias() += d * d.transpose();
    }
    global += s.mean * static_cast<double>(s.n);
    stats.push_back(std::move(s));
  }
  global /= N;

  // moment initialization
  Eigen::VectorXd mu = global;
  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(D, D);
  Eigen::MatrixXd within = Eigen::MatrixXd::Zero(D, D);
  for (const auto& s : stats) {
    Eigen::VectorXd d = s.mean - global;
    between.noalias() += d * d.transpose();
    within += s.scatter;
  }
  between /= C;
  within /= N;

  std::vector<double> loglik;
  for (int it = 0; it < iters; ++it) {
    auto llt_w = detail::chol_or_ridge(within, "within");
    const double logdet_w = detail::log_det_from_llt(llt_w);
    auto llt_b = detail::chol_or_ridge(between, "between");
    Eigen::MatrixXd w_inv = llt_w.solve(Eigen::MatrixXd::Identity(D, D));
    Eigen::MatrixXd b_inv = llt_b.solve(Eigen::MatrixXd::Identity(D, D));

    // marginal log-likelihood at the current parameters
    double ll = 0.0;
    std::map<int, std::pair<Eigen::LLT<Eigen::MatrixXd>, double>> by_count;
    for (const auto& s : stats) {
      auto it2 = by_count.find(s.n);
      if (it2 == by_count.end()) {
        Eigen::LLT<Eigen::MatrixXd> llt(
            Eigen::MatrixXd(between + within / static_cast<double>(s.n)));
        if (llt.info() != Eigen::Success)
          fail(Errc::singular_covariance, "plda: between + within/n not PD");
        double ld = detail::log_det_from_llt(llt);
        it2 = by_count.emplace(s.n, std::make_pair(std::move(llt), ld)).first;
      }
      ll += -0.5 * ((s.n - 1) * D * std::log(2.0 * M_PI) +
                    (s.n - 1) * logdet_w + D * std::log(static_cast<double>(s.n)));
      ll += -0.5 * (w_inv.cwiseProduct(s.scatter)).sum();
      ll += detail::gaussian_logpdf(s.mean, mu, it2->second.first,
                                    it2->second.second);
    }
    loglik.push_back(ll);

    // E step: posterior of each speaker mean; M step: update mu, B, W
    Eigen::VectorXd mu_new = Eigen::VectorXd::Zero(D);
    Eigen::MatrixXd b_new = Eigen::MatrixXd::Zero(D, D);
    Eigen::MatrixXd w_new = Eigen::MatrixXd::Zero(D, D);
    std::vector<Eigen::VectorXd> post_mean(stats.size());
    std::vector<Eigen::MatrixXd> post_cov(stats.size());
    for (std::size_t si = 0; si < stats.size(); ++si) {
      const auto& s = stats[si];
      Eigen::MatrixXd prec = b_inv + s.n * w_inv;
      Eigen::LLT<Eigen::MatrixXd> llt_p(prec);
      if (llt_p.info() != Eigen::Success)
        fail(Errc::singular_covariance, "plda: posterior precision not PD");
      post_cov[si] = llt_p.solve(Eigen::MatrixXd::Identity(D, D));
      post_mean[si] =
          llt_p.solve(b_inv * mu + s.n * (w_inv * s.mean));
      mu_new += post_mean[si];
    }
    mu_new /= static_cast<double>(stats.size());
    for (std::size_t si = 0; si < stats.size(); ++si) {
      const auto& s = stats[si];
      Eigen::VectorXd d = post_mean[si] - mu_new;
      b_new.noalias() += post_cov[si] + d * d.transpose();
      Eigen::VectorXd e = s.mean - post_mean[si];
      w_new.noalias() +=
          s.scatter + s.n * (post_cov[si] + e * e.transpose());
    }
    b_new /= static_cast<double>(stats.size());
    w_new /= static_cast<double>(N);

    mu = mu_new;
    between = 0.5 * (b_new + b_new.transpose().eval());
    within = 0.5 * (w_new + w_new.transpose().eval());
  }

  PldaModel model;
  model.dim = D;
  model.mu.assign(mu.data(), mu.data() + D);
  model.between.assign(between.data(), between.data() + D * D);
  model.within.assign(within.data(), within.data() + D * D);
  model.em_loglik = std::move(loglik);
  return model;
}

// Precomputed scoring form. The log-likelihood ratio
//   log N([e;t]; [mu;mu], [[B+W, B],[B, B+W]]) - log N(e) - log N(t)
// is evaluated through the conditional factorization
//   llr = log N(t; mu + B (B+W)^-1 (e - mu), (B+W) - B (B+W)^-1 B)
//       - log N(t; mu, B+W),
// which is algebraically the same joint but never forms the 2D x 2D matrix.
class PldaScorer {
 public:
  explicit PldaScorer(const PldaModel& m) : dim_(m.dim) {
    mu_ = Eigen::Map<const Eigen::VectorXd>(m.mu.data(), dim_);
    Eigen::MatrixXd b = detail::as_mat(m.between, dim_);
    Eigen::MatrixXd tot = b + detail::as_mat(m.within, dim_);
    llt_tot_.compute(tot);
    if (llt_tot_.info() != Eigen::Success)
      fail(Errc::singular_covariance, "plda_score: B + W not PD");
    logdet_tot_ = detail::log_det_from_llt(llt_tot_);
    gain_ = (llt_tot_.solve(b)).transpose();  // B (B+W)^-1, symmetric pair
    Eigen::MatrixXd cond = tot - gain_ * b;
    cond = 0.5 * (cond + cond.transpose().eval());
    llt_cond_.compute(cond);
    if (llt_cond_.info() != Eigen::Success)
      fail(Errc::singular_covariance, "plda_score: conditional covariance not PD");
    logdet_cond_ = detail::log_det_from_llt(llt_cond_);
  }

  int dim() const { return dim_; }

  double score(const DVector& enroll, const DVector& test) const {
    if (enroll.dim() != dim_ || test.dim() != dim_)
      fail(Errc::dim_mismatch, "plda_score: dims " + std::to_string(enroll.dim()) +
                                   "/" + std::to_string(test.dim()) + " vs model " +
                                   std::to_string(dim_));
    Eigen::Map<const Eigen::VectorXd> e(enroll.values.data(), dim_);
    Eigen::Map<const Eigen::VectorXd> t(test.values.data(), dim_);
    Eigen::VectorXd cond_mean = mu_ + gain_ * (e - mu_);
    return detail::gaussian_logpdf(t, cond_mean, llt_cond_, logdet_cond_) -
           detail::gaussian_logpdf(t, mu_, llt_tot_, logdet_tot_);
  }

 private:
  int dim_;
  Eigen::VectorXd mu_;
  Eigen::MatrixXd gain_;
  Eigen::LLT<Eigen::MatrixXd> llt_tot_;
  double logdet_tot_ = 0.0;
  Eigen::LLT<Eigen::MatrixXd> llt_cond_;
  double logdet_cond_ = 0.0;
};

inline double plda_score(const PldaModel& model, const DVector& enroll,
                         const DVector& test) {
  return PldaScorer(model).score(enroll, test);
}

}  // namespace dvkit
