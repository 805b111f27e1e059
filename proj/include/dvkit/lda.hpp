#pragma once

#include <Eigen/Dense>
#include <map>
#include <string>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/dvector.hpp"

namespace dvkit {

// Discriminant projection. Rows of `projection` are ordered by decreasing
// generalized eigenvalue and scaled so P * Sw * P^T = I for the
// within-class covariance used in fitting.
struct LdaTransform {
  int in_dim = 0;
  int out_dim = 0;
  std::vector<double> mean;        // in_dim
  std::vector<double> projection;  // out_dim x in_dim, row-major
};

inline LdaTransform fit_lda(const std::vector<DVector>& vectors, int out_dim) {
  if (vectors.empty()) fail(Errc::too_few_samples, "fit_lda: no vectors");
  const int D = vectors[0].dim();
  std::map<std::string, std::vector<const DVector*>> classes;
  for (const auto& v : vectors) {
    if (v.dim() != D) fail(Errc::dim_mismatch, "fit_lda: inconsistent dims");
    if (v.spk_id.empty())
      fail(Errc::too_few_samples, "fit_lda: vector " + v.utt_id + " has no spk_id");
    classes[v.spk_id].push_back(&v);
  }
  const int C = static_cast<int>(classes.size());
  if (C < 2) fail(Errc::too_few_samples, "fit_lda: need at least 2 classes");
  for (const auto& [spk, vs] : classes)
    if (vs.size() < 2)
      fail(Errc::too_few_samples, "fit_lda: class " + spk + " has < 2 vectors");
  if (out_dim < 1 || out_dim > std::min(D, C - 1))
    fail(Errc::bad_dim, "fit_lda: out_dim " + std::to_string(out_dim) +
                            " not in [1, min(dim, classes-1) = " +
                            std::to_string(std::min(D, C - 1)) + "]");

  const int N = static_cast<int>(vectors.size());
  Eigen::VectorXd global = Eigen::VectorXd::Zero(D);
  for (const auto& v : vectors)
    global += Eigen::Map<const Eigen::VectorXd>(v.values.data(), D);
  global /= N;

  Eigen::MatrixXd sw = Eigen::MatrixXd::Zero(D, D);
  Eigen::MatrixXd sb = Eigen::MatrixXd::Zero(D, D);
  for (const auto& [spk, vs] : classes) {
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(D);
    for (const auto* v : vs)
      mu += Eigen::Map<const Eigen::VectorXd>(v->values.data(), D);
    mu /= static_cast<double>(vs.size());
    for (const auto* v : vs) {
      Eigen::VectorXd d = Eigen::Map<const Eigen::VectorXd>(v->values.data(), D) - mu;
      sw.noalias() += d * d.transpose();
    }
    Eigen::VectorXd m = mu - global;
    sb.noalias() += static_cast<double>(vs.size()) * (m * m.transpose());
  }
  sw /= static_cast<double>(N - C);
  sb /= static_cast<double>(N);

  if (!(sb.trace() > 0.0))
    fail(Errc::degenerate_scatter, "fit_lda: between-class scatter is zero");

  double ridge = sw.trace() > 0.0 ? 1e-6 * sw.trace() / D : 1e-6;
  sw.diagonal().array() += ridge;

  // whiten within-class covariance, then an ordinary symmetric eigenproblem
  Eigen::LLT<Eigen::MatrixXd> llt(sw);
  if (llt.info() != Eigen::Success)
    fail(Errc::singular_covariance, "fit_lda: within-class covariance not PD");
  Eigen::MatrixXd l = llt.matrixL();
  Eigen::MatrixXd m = l.triangularView<Eigen::Lower>().solve(sb);
  m = l.triangularView<Eigen::Lower>().solve(m.transpose().eval());
  m = 0.5 * (m + m.transpose().eval());  // symmetrize against roundoff

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  if (eig.info() != Eigen::Success)
    fail(Errc::singular_covariance, "fit_lda: eigensolver failed");

  LdaTransform t;
  t.in_dim = D;
  t.out_dim = out_dim;
  t.mean.assign(global.data(), global.data() + D);
  t.projection.resize(static_cast<std::size_t>(out_dim) * D);
  for (int r = 0; r < out_dim; ++r) {
    // eigenvalues come back ascending; take the top ones
    Eigen::VectorXd v = eig.eigenvectors().col(D - 1 - r);
    Eigen::VectorXd u = l.transpose().triangularView<Eigen::Upper>().solve(v);
    for (int j = 0; j < D; ++j)
      t.projection[static_cast<std::size_t>(r) * D + j] = u(j);
  }
  return t;
}

inline DVector apply_lda(const LdaTransform& t, const DVector& v) {
  if (v.dim() != t.in_dim)
    fail(Errc::dim_mismatch, "apply_lda: vector dim " + std::to_string(v.dim()) +
                                 " != " + std::to_string(t.in_dim));
  DVector out;
  out.utt_id = v.utt_id;
  out.spk_id = v.spk_id;
  out.event = v.event;
  out.values.assign(t.out_dim, 0.0);
  for (int r = 0; r < t.out_dim; ++r) {
    double acc = 0.0;
    const double* row = t.projection.data() + static_cast<std::size_t>(r) * t.in_dim;
    for (int j = 0; j < t.in_dim; ++j) acc += row[j] * (v.values[j] - t.mean[j]);
    out.values[r] = acc;
  }
  return out;
}

}  // namespace dvkit
