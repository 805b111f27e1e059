#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dvkit/audio.hpp"
#include "dvkit/common.hpp"
#include "dvkit/ctdnn.hpp"
#include "dvkit/dvector.hpp"
#include "dvkit/lda.hpp"
#include "dvkit/manifest.hpp"
#include "dvkit/plda.hpp"
#include "dvkit/rng.hpp"

namespace dvkit {

struct Trial {
  std::vector<std::string> enroll_utts;  // same speaker
  std::string test_utt;
  bool target = false;
  Event event = Event::other;
};

struct ScoreSet {
  std::vector<Trial> trials;
  std::vector<double> scores;
};

struct EerReport {
  double eer = 0.0;
  double threshold = 0.0;
  long n_target = 0;
  long n_nontarget = 0;
  std::vector<std::pair<double, double>> det_points;  // (FAR, FRR)
};

// ---- trial construction --------------------------------------------------

// Per speaker of the chosen event, a seeded shuffle picks `enroll_per_spk`
// utterances as the enrollment set; every remaining same-event utterance of
// every speaker is tested against every enrollment set. Speakers without
// enough utterances contribute tests only.
inline std::vector<Trial> build_trials(const std::vector<ManifestEntry>& manifest,
                                       Event event, int enroll_per_spk,
                                       std::uint64_t seed) {
  if (enroll_per_spk < 1)
    fail(Errc::invalid_spec, "build_trials: enroll_per_spk must be >= 1");
  std::map<std::string, std::vector<std::string>> by_spk;  // sorted speakers
  for (const auto& e : manifest)
    if (e.event == event) by_spk[e.spk_id].push_back(e.utt_id);

  int full = 0;
  for (const auto& [spk, utts] : by_spk)
    if (static_cast<int>(utts.size()) >= enroll_per_spk + 1) ++full;
  if (full < 2)
    fail(Errc::insufficient_data,
         std::string("build_trials: need >= 2 speakers with >= ") +
             std::to_string(enroll_per_spk + 1) + " '" + event_name(event) +
             "' utterances, got " + std::to_string(full));

  Rng rng(mix_seed(seed, event_name(event)));
  std::map<std::string, std::vector<std::string>> enroll_sets;
  std::vector<std::pair<std::string, std::string>> tests;  // (spk, utt)
  for (auto& [spk, utts] : by_spk) {
    rng.shuffle(utts);
    if (static_cast<int>(utts.size()) >= enroll_per_spk) {
      enroll_sets[spk] =
          std::vector<std::string>(utts.begin(), utts.begin() + enroll_per_spk);
      for (std::size_t i = enroll_per_spk; i < utts.size(); ++i)
        tests.emplace_back(spk, utts[i]);
    } else {
      for (const auto& u : utts) tests.emplace_back(spk, u);
    }
  }

  std::vector<Trial> trials;
  for (const auto& [espk, eutts] : enroll_sets)
    for (const auto& [tspk, tutt] : tests) {
      Trial t;
      t.enroll_utts = eutts;
      t.test_utt = tutt;
      t.target = espk == tspk;
      t.event = event;
      trials.push_back(std::move(t));
    }
  return trials;
}

// ---- scoring ------------------------------------------------------------

enum class Scorer { cosine, lda, plda };

inline Scorer scorer_from_string(const std::string& s) {
  if (s == "cosine") return Scorer::cosine;
  if (s == "lda") return Scorer::lda;
  if (s == "plda") return Scorer::plda;
  fail(Errc::invalid_spec, "unknown scorer '" + s + "'");
}

struct ScorerSetup {
  Scorer kind = Scorer::cosine;
  bool length_norm = true;  // normalize d-vectors before pooling/backends
  std::optional<LdaTransform> lda;
  std::optional<PldaModel> plda;
};

inline ScoreSet score_trials(const std::vector<Trial>& trials,
                             const std::vector<DVector>& dvectors,
                             const ScorerSetup& setup) {
  if (setup.kind == Scorer::lda && !setup.lda)
    fail(Errc::invalid_spec, "score_trials: lda scorer without a transform");
  if (setup.kind == Scorer::plda && !setup.plda)
    fail(Errc::invalid_spec, "score_trials: plda scorer without a model");

  std::map<std::string, const DVector*> index;
  for (const auto& v : dvectors) index[v.utt_id] = &v;
  auto lookup = [&](const std::string& utt) -> const DVector& {
    auto it = index.find(utt);
    if (it == index.end())
      fail(Errc::missing_embedding, "score_trials: no d-vector for '" + utt + "'");
    return *it->second;
  };

  std::optional<PldaScorer> plda_scorer;
  if (setup.kind == Scorer::plda) plda_scorer.emplace(*setup.plda);

  // multi-utterance enrollment: average, then re-normalize
  auto pool_enroll = [&](const std::vector<std::string>& utts) {
    DVector pooled;
    pooled.utt_id = utts.front();
    for (const auto& u : utts) {
      DVector v = lookup(u);
      if (setup.length_norm) v = length_normalize(v);
      if (pooled.values.empty()) {
        pooled.values.assign(v.dim(), 0.0);
      } else if (pooled.dim() != v.dim()) {
        fail(Errc::dim_mismatch, "score_trials: mixed d-vector dims");
      }
      for (int i = 0; i < v.dim(); ++i) pooled.values[i] += v.values[i];
    }
    for (double& x : pooled.values) x /= static_cast<double>(utts.size());
    if (setup.length_norm) pooled = length_normalize(pooled);
    return pooled;
  };

  ScoreSet out;
  out.trials = trials;
  out.scores.reserve(trials.size());
  std::map<std::string, DVector> pooled_cache;
  for (const auto& t : trials) {
    std::string key;
    for (const auto& u : t.enroll_utts) key += u + "\x1f";
    auto pit = pooled_cache.find(key);
    if (pit == pooled_cache.end())
      pit = pooled_cache.emplace(key, pool_enroll(t.enroll_utts)).first;
    DVector enroll = pit->second;
    DVector test = lookup(t.test_utt);
    if (setup.length_norm) test = length_normalize(test);

    double s = 0.0;
    switch (setup.kind) {
      case Scorer::cosine:
        s = cosine_score(enroll, test);
        break;
      case Scorer::lda:
        s = cosine_score(apply_lda(*setup.lda, enroll), apply_lda(*setup.lda, test));
        break;
      case Scorer::plda:
        s = plda_scorer->score(enroll, test);
        break;
    }
    if (!std::isfinite(s))
      fail(Errc::invalid_spec, "score_trials: non-finite score for " + t.test_utt);
    out.scores.push_back(s);
  }
  return out;
}

// ---- EER / DET ------------------------------------------------------------

namespace detail {

struct Sweep {
  std::vector<double> thresholds;  // distinct scores ascending
  std::vector<long> n_acc;         // nontargets accepted (score >= thr)
  std::vector<long> n_rej;         // targets rejected (score < thr)
  long nt = 0, nn = 0;
};

// Operating points at every distinct score with the accept-if >= rule.
inline Sweep sweep_scores(const ScoreSet& s) {
  Sweep sw;
  std::vector<double> tgt, non;
  for (std::size_t i = 0; i < s.trials.size(); ++i) {
    if (!std::isfinite(s.scores[i]))
      fail(Errc::invalid_spec, "compute_eer: non-finite score");
    (s.trials[i].target ? tgt : non).push_back(s.scores[i]);
  }
  sw.nt = static_cast<long>(tgt.size());
  sw.nn = static_cast<long>(non.size());
  if (sw.nt == 0 || sw.nn == 0)
    fail(Errc::one_class_only, "compute_eer: need both target and nontarget trials");

  std::sort(tgt.begin(), tgt.end());
  std::sort(non.begin(), non.end());
  sw.thresholds = tgt;
  sw.thresholds.insert(sw.thresholds.end(), non.begin(), non.end());
  std::sort(sw.thresholds.begin(), sw.thresholds.end());
  sw.thresholds.erase(std::unique(sw.thresholds.begin(), sw.thresholds.end()),
                      sw.thresholds.end());

  for (double thr : sw.thresholds) {
    long acc = sw.nn - (std::lower_bound(non.begin(), non.end(), thr) - non.begin());
    long rej = std::lower_bound(tgt.begin(), tgt.end(), thr) - tgt.begin();
    sw.n_acc.push_back(acc);
    sw.n_rej.push_back(rej);
  }
  return sw;
}

}  // namespace detail

// One point per distinct threshold, ascending, plus the accept-nothing
// endpoint. FAR is non-increasing and FRR non-decreasing along the list.
inline std::vector<std::pair<double, double>> det_points(const ScoreSet& s) {
  detail::Sweep sw = detail::sweep_scores(s);
  std::vector<std::pair<double, double>> pts;
  pts.reserve(sw.thresholds.size() + 1);
  for (std::size_t i = 0; i < sw.thresholds.size(); ++i)
    pts.emplace_back(static_cast<double>(sw.n_acc[i]) / sw.nn,
                     static_cast<double>(sw.n_rej[i]) / sw.nt);
  pts.emplace_back(0.0, 1.0);
  return pts;
}

// Threshold sweep at all distinct scores (accept iff score >= thr). The
// reported threshold minimizes |FAR - FRR| over the sweep; when no sweep
// point hits equality exactly, the EER is the crossing of the linearly
// interpolated FAR/FRR between the two straddling points.
inline EerReport compute_eer(const ScoreSet& s) {
  detail::Sweep sw = detail::sweep_scores(s);
  const std::size_t k = sw.thresholds.size();

  EerReport rep;
  rep.n_target = sw.nt;
  rep.n_nontarget = sw.nn;
  rep.det_points = det_points(s);

  // d_i = FAR - FRR compared exactly with integers: n_acc*nt - n_rej*nn
  auto diff = [&](std::size_t i) {
    return sw.n_acc[i] * sw.nt - sw.n_rej[i] * sw.nn;
  };
  auto far_at = [&](std::size_t i) { return static_cast<double>(sw.n_acc[i]) / sw.nn; };
  auto frr_at = [&](std::size_t i) { return static_cast<double>(sw.n_rej[i]) / sw.nt; };

  std::size_t best = 0;
  long best_abs = std::abs(diff(0));
  for (std::size_t i = 1; i < k; ++i) {
    long a = std::abs(diff(i));
    if (a < best_abs) {
      best_abs = a;
      best = i;
    }
  }
  rep.threshold = sw.thresholds[best];

  if (best_abs == 0) {
    rep.eer = 0.5 * (far_at(best) + frr_at(best));
    return rep;
  }

  // locate the sign flip; diff is non-increasing in the threshold
  std::size_t j = k;  // flip between j and j+1
  for (std::size_t i = 0; i + 1 < k; ++i)
    if (diff(i) > 0 && diff(i + 1) < 0) {
      j = i;
      break;
    }
  if (j == k) {
    // flip happens against the accept-nothing endpoint (FAR 0, FRR 1)
    double f0 = far_at(k - 1), r0 = frr_at(k - 1);
    double t = (f0 - r0) / ((f0 - r0) - (0.0 - 1.0));
    rep.eer = f0 + t * (0.0 - f0);
    return rep;
  }
  double f0 = far_at(j), r0 = frr_at(j);
  double f1 = far_at(j + 1), r1 = frr_at(j + 1);
  double t = (f0 - r0) / ((f0 - r0) - (f1 - r1));
  rep.eer = f0 + t * (f1 - f0);
  return rep;
}

// ---- files ----------------------------------------------------------------
// Trial line: enroll list (comma separated) TAB test TAB label TAB event.
// Score line: trial line TAB score.

inline std::string trial_line(const Trial& t) {
  std::string s;
  for (std::size_t i = 0; i < t.enroll_utts.size(); ++i) {
    if (i) s += ',';
    s += t.enroll_utts[i];
  }
  s += '\t';
  s += t.test_utt;
  s += '\t';
  s += t.target ? "target" : "nontarget";
  s += '\t';
  s += event_name(t.event);
  return s;
}

inline Trial parse_trial_line(const std::string& line, const std::string& where) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  if (fields.size() < 4)
    fail(Errc::parse_error, where + ": expected 4 tab-separated trial fields");
  Trial t;
  std::size_t p = 0;
  while (p <= fields[0].size()) {
    std::size_t comma = fields[0].find(',', p);
    std::string tok = comma == std::string::npos ? fields[0].substr(p)
                                                 : fields[0].substr(p, comma - p);
    if (tok.empty()) fail(Errc::parse_error, where + ": empty enrollment utt");
    t.enroll_utts.push_back(tok);
    if (comma == std::string::npos) break;
    p = comma + 1;
  }
  t.test_utt = fields[1];
  if (fields[2] == "target")
    t.target = true;
  else if (fields[2] == "nontarget")
    t.target = false;
  else
    fail(Errc::parse_error, where + ": bad label '" + fields[2] + "'");
  t.event = event_from_string(fields[3]);
  return t;
}

inline void write_trials(const std::vector<Trial>& trials, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(Errc::io_error, "cannot write " + path);
  for (const auto& t : trials) f << trial_line(t) << '\n';
  if (!f) fail(Errc::io_error, "short write to " + path);
}

inline std::vector<Trial> read_trials(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::not_found, "cannot open " + path);
  std::vector<Trial> trials;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    trials.push_back(parse_trial_line(line, path + ":" + std::to_string(lineno)));
  }
  return trials;
}

inline void write_scores(const ScoreSet& s, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(Errc::io_error, "cannot write " + path);
  char buf[40];
  for (std::size_t i = 0; i < s.trials.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", s.scores[i]);
    f << trial_line(s.trials[i]) << '\t' << buf << '\n';
  }
  if (!f) fail(Errc::io_error, "short write to " + path);
}

inline ScoreSet read_scores(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::not_found, "cannot open " + path);
  ScoreSet out;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::size_t tab = line.rfind('\t');
    if (tab == std::string::npos)
      fail(Errc::parse_error, path + ":" + std::to_string(lineno) + ": no score");
    std::string where = path + ":" + std::to_string(lineno);
    out.trials.push_back(parse_trial_line(line.substr(0, tab), where));
    const std::string num = line.substr(tab + 1);
    char* end = nullptr;
    double v = std::strtod(num.c_str(), &end);
    if (num.empty() || end != num.c_str() + num.size())
      fail(Errc::parse_error, where + ": bad score '" + num + "'");
    out.scores.push_back(v);
  }
  return out;
}

// Plain-text report plus a comma-separated DET listing for plotting.
inline void write_eer_report(const EerReport& rep, const std::string& path,
                             const std::string& csv_path = "") {
  std::ofstream f(path);
  if (!f) fail(Errc::io_error, "cannot write " + path);
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", rep.eer);
  f << "eer=" << buf << '\n';
  std::snprintf(buf, sizeof(buf), "%.9g", rep.threshold);
  f << "threshold=" << buf << '\n';
  f << "n_target=" << rep.n_target << '\n';
  f << "n_nontarget=" << rep.n_nontarget << '\n';
  f << "det:\n";
  for (const auto& [far, frr] : rep.det_points) {
    std::snprintf(buf, sizeof(buf), "%.9g %.9g", far, frr);
    f << buf << '\n';
  }
  if (!f) fail(Errc::io_error, "short write to " + path);
  if (!csv_path.empty()) {
    std::ofstream c(csv_path);
    if (!c) fail(Errc::io_error, "cannot write " + csv_path);
    c << "far,frr\n";
    for (const auto& [far, frr] : rep.det_points) {
      std::snprintf(buf, sizeof(buf), "%.9g,%.9g", far, frr);
      c << buf << '\n';
    }
  }
}

// ---- feature preparation / dumps -------------------------------------------

// WAV -> (optional 2x decimation) -> Fbank -> CMVN -> splice. Clips at twice
// the configured rate are decimated; anything else that is not already at
// the configured rate is rejected.
inline FeatureMatrix prepare_features(const std::string& wav_path,
                                      const FrontendConfig& cfg,
                                      const SpliceSpec& splice_spec) {
  AudioClip clip = read_wav(wav_path);
  if (clip.sample_rate_hz == 2 * cfg.sample_rate_hz) clip = decimate_2x(clip);
  if (clip.sample_rate_hz != cfg.sample_rate_hz)
    fail(Errc::rate_mismatch,
         wav_path + ": rate " + std::to_string(clip.sample_rate_hz) +
             " (expected " + std::to_string(cfg.sample_rate_hz) + " or 2x)");
  return splice(apply_cmvn(compute_fbank(clip, cfg)), splice_spec);
}

// Entry paths are taken relative to the manifest's directory unless absolute.
inline std::string resolve_path(const std::string& manifest_path,
                                const std::string& entry_path) {
  std::filesystem::path p(entry_path);
  if (p.is_absolute()) return entry_path;
  return (std::filesystem::path(manifest_path).parent_path() / p).string();
}

// Writes per-frame speaker features for every manifest entry, labeled with
// speaker and event, in the frontend dump format. Returns rows written.
inline long dump_features(const CtDnnParams& model,
                          const std::vector<ManifestEntry>& manifest,
                          const std::string& manifest_path,
                          const FrontendConfig& cfg, const SpliceSpec& sp,
                          const std::string& out_path, bool hex = false) {
  std::ofstream f(out_path);
  if (!f) fail(Errc::io_error, "cannot write " + out_path);
  long rows = 0;
  for (const auto& e : manifest) {
    FeatureMatrix feats =
        prepare_features(resolve_path(manifest_path, e.path), cfg, sp);
    auto [spk_feats, logits] = forward(model, feats);
    (void)logits;
    write_feature_dump(f, e.utt_id, e.spk_id, event_name(e.event), spk_feats, hex);
    rows += spk_feats.n_frames;
  }
  if (!f) fail(Errc::io_error, "short write to " + out_path);
  return rows;
}

}  // namespace dvkit
