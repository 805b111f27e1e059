#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/ctdnn.hpp"

namespace dvkit {

// Utterance embedding: the mean of the frame-level speaker features.
// spk_id/event may be empty when unknown ("-" on disk).
struct DVector {
  std::string utt_id;
  std::string spk_id;
  std::string event;
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
};

inline DVector extract_dvector(const CtDnnParams& model,
                               const FeatureMatrix& spliced) {
  if (spliced.n_frames < 1)
    fail(Errc::empty_utterance, "extract_dvector: no frames");
  auto [features, logits] = forward(model, spliced);
  (void)logits;
  DVector d;
  d.values.assign(features.dim, 0.0);
  for (int t = 0; t < features.n_frames; ++t)
    for (int i = 0; i < features.dim; ++i) d.values[i] += features.at(t, i);
  for (double& v : d.values) v /= features.n_frames;
  return d;
}

inline double norm2(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline DVector length_normalize(const DVector& v) {
  double n = norm2(v.values);
  if (n == 0.0) fail(Errc::zero_vector, "length_normalize: zero vector");
  DVector out = v;
  for (double& x : out.values) x /= n;
  return out;
}

inline double cosine_score(const DVector& enroll, const DVector& test) {
  if (enroll.dim() != test.dim())
    fail(Errc::dim_mismatch, "cosine_score: dims " + std::to_string(enroll.dim()) +
                                 " vs " + std::to_string(test.dim()));
  double dot = 0.0;
  for (int i = 0; i < enroll.dim(); ++i) dot += enroll.values[i] * test.values[i];
  double ne = norm2(enroll.values), nt = norm2(test.values);
  if (ne == 0.0 || nt == 0.0)
    fail(Errc::zero_vector, "cosine_score: zero vector");
  return dot / (ne * nt);
}

// ---- d-vector file -------------------------------------------------------
// Per vector: header `utt_id spk_id event dim`, then one line of
// space-separated decimals (17 significant digits, which round-trips
// doubles). A collection is the concatenation of such pairs.

inline void write_dvectors(const std::vector<DVector>& vecs,
                           const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(Errc::io_error, "cannot write " + path);
  char buf[40];
  for (const auto& v : vecs) {
    f << v.utt_id << ' ' << (v.spk_id.empty() ? "-" : v.spk_id) << ' '
      << (v.event.empty() ? "-" : v.event) << ' ' << v.dim() << '\n';
    for (int i = 0; i < v.dim(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", v.values[i]);
      if (i) f << ' ';
      f << buf;
    }
    f << '\n';
  }
  if (!f) fail(Errc::io_error, "short write to " + path);
}

inline std::vector<DVector> read_dvectors(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::not_found, "cannot open " + path);
  std::vector<DVector> out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream hs(line);
    DVector v;
    int dim = -1;
    if (!(hs >> v.utt_id >> v.spk_id >> v.event >> dim) || dim < 1)
      fail(Errc::parse_error,
           path + ":" + std::to_string(lineno) + ": bad d-vector header");
    if (v.spk_id == "-") v.spk_id.clear();
    if (v.event == "-") v.event.clear();
    if (!std::getline(f, line))
      fail(Errc::parse_error, path + ": truncated after header of " + v.utt_id);
    ++lineno;
    v.values.resize(dim);
    const char* s = line.c_str();
    char* end = nullptr;
    for (int i = 0; i < dim; ++i) {
      v.values[i] = std::strtod(s, &end);
      if (end == s)
        fail(Errc::parse_error, path + ":" + std::to_string(lineno) +
                                    ": expected " + std::to_string(dim) +
                                    " values for " + v.utt_id);
      s = end;
    }
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace dvkit
