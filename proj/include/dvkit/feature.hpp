#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dvkit/audio.hpp"
#include "dvkit/common.hpp"

namespace dvkit {

// T x D frame features, row-major by frame.
struct FeatureMatrix {
  int n_frames = 0;
  int dim = 0;
  std::vector<double> values;

  FeatureMatrix() = default;
  FeatureMatrix(int t, int d)
      : n_frames(t), dim(d), values(static_cast<std::size_t>(t) * d, 0.0) {}

  double& at(int t, int d) {
    return values[static_cast<std::size_t>(t) * dim + d];
  }
  double at(int t, int d) const {
    return values[static_cast<std::size_t>(t) * dim + d];
  }
  double* row(int t) { return values.data() + static_cast<std::size_t>(t) * dim; }
  const double* row(int t) const {
    return values.data() + static_cast<std::size_t>(t) * dim;
  }
};

struct FrontendConfig {
  int sample_rate_hz = 8000;
  double frame_len_ms = 25.0;
  double frame_shift_ms = 10.0;
  double preemphasis = 0.97;
  int n_mels = 40;
  double fmin_hz = 20.0;
  double fmax_hz = 3800.0;
  double log_floor = 1e-10;

  int frame_len_samples() const {
    return static_cast<int>(std::lround(frame_len_ms * sample_rate_hz / 1000.0));
  }
  int frame_shift_samples() const {
    return static_cast<int>(std::lround(frame_shift_ms * sample_rate_hz / 1000.0));
  }
};

struct SpliceSpec {
  int left = 4;
  int right = 4;
};

namespace detail {

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) {
  return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
}

// In-place radix-2 FFT, n a power of two.
inline void fft_radix2(std::vector<double>& re, std::vector<double>& im) {
  const std::size_t n = re.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = -2.0 * M_PI / static_cast<double>(len);
    double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::size_t a = i + k, b = i + k + len / 2;
        double xr = re[b] * cr - im[b] * ci;
        double xi = re[b] * ci + im[b] * cr;
        re[b] = re[a] - xr;
        im[b] = im[a] - xi;
        re[a] += xr;
        im[a] += xi;
        double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

// Triangular filters equally spaced on the HTK mel scale; weights per FFT bin.
struct MelBank {
  int n_fft = 0;
  std::vector<double> center_hz;
  std::vector<std::vector<double>> weights;  // [filter][bin 0..n_fft/2]

  MelBank(const FrontendConfig& cfg, int n_fft_in) : n_fft(n_fft_in) {
    const int m = cfg.n_mels;
    const double mel_lo = hz_to_mel(cfg.fmin_hz);
    const double mel_hi = hz_to_mel(cfg.fmax_hz);
    std::vector<double> mel_pts(static_cast<std::size_t>(m) + 2);
    for (int j = 0; j < m + 2; ++j)
      mel_pts[j] = mel_lo + (mel_hi - mel_lo) * j / (m + 1);

    center_hz.resize(m);
    weights.assign(m, std::vector<double>(static_cast<std::size_t>(n_fft / 2) + 1, 0.0));
    for (int i = 0; i < m; ++i) {
      center_hz[i] = mel_to_hz(mel_pts[i + 1]);
      for (int k = 0; k <= n_fft / 2; ++k) {
        double f = static_cast<double>(k) * cfg.sample_rate_hz / n_fft;
        double mel = hz_to_mel(f);
        double w = 0.0;
        if (mel > mel_pts[i] && mel < mel_pts[i + 2]) {
          w = mel <= mel_pts[i + 1]
                  ? (mel - mel_pts[i]) / (mel_pts[i + 1] - mel_pts[i])
                  : (mel_pts[i + 2] - mel) / (mel_pts[i + 2] - mel_pts[i + 1]);
        }
        weights[i][k] = w;
      }
    }
  }
};

inline int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace detail

inline void validate(const FrontendConfig& cfg) {
  if (cfg.n_mels < 2) fail(Errc::invalid_config, "frontend: n_mels must be >= 2");
  if (!(cfg.fmin_hz < cfg.fmax_hz && cfg.fmax_hz <= cfg.sample_rate_hz / 2.0))
    fail(Errc::invalid_config, "frontend: need fmin < fmax <= sample_rate/2");
  if (!(cfg.preemphasis >= 0.0 && cfg.preemphasis < 1.0))
    fail(Errc::invalid_config, "frontend: preemphasis must be in [0,1)");
  if (cfg.frame_len_samples() <= 0 || cfg.frame_shift_samples() <= 0)
    fail(Errc::invalid_config, "frontend: frame length/shift must be positive");
  if (cfg.log_floor <= 0.0)
    fail(Errc::invalid_config, "frontend: log_floor must be positive");
}

// Log mel filterbank energies. Per frame: pre-emphasis, Hamming window,
// power spectrum on a next-pow2 DFT, triangular mel filters, natural log
// with an energy floor.
inline FeatureMatrix compute_fbank(const AudioClip& clip,
                                   const FrontendConfig& cfg) {
  validate(cfg);
  if (clip.sample_rate_hz != cfg.sample_rate_hz)
    fail(Errc::rate_mismatch,
         "compute_fbank: clip rate " + std::to_string(clip.sample_rate_hz) +
             " != configured " + std::to_string(cfg.sample_rate_hz));

  const int flen = cfg.frame_len_samples();
  const int fshift = cfg.frame_shift_samples();
  const std::size_t n = clip.samples.size();
  if (n < static_cast<std::size_t>(flen))
    fail(Errc::too_short, "compute_fbank: clip of " + std::to_string(n) +
                              " samples is shorter than one frame (" +
                              std::to_string(flen) + ")");

  const int n_frames = 1 + static_cast<int>((n - flen) / fshift);
  const int n_fft = detail::next_pow2(flen);
  detail::MelBank bank(cfg, n_fft);

  std::vector<double> window(static_cast<std::size_t>(flen));
  for (int i = 0; i < flen; ++i)
    window[i] = 0.54 - 0.46 * std::cos(2.0 * M_PI * i / (flen - 1));

  FeatureMatrix out(n_frames, cfg.n_mels);
  std::vector<double> re(static_cast<std::size_t>(n_fft));
  std::vector<double> im(static_cast<std::size_t>(n_fft));
  std::vector<double> frame(static_cast<std::size_t>(flen));

  for (int t = 0; t < n_frames; ++t) {
    const double* src = clip.samples.data() + static_cast<std::size_t>(t) * fshift;
    for (int i = 0; i < flen; ++i) frame[i] = src[i];
    for (int i = flen - 1; i > 0; --i) frame[i] -= cfg.preemphasis * frame[i - 1];
    frame[0] -= cfg.preemphasis * frame[0];

    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (int i = 0; i < flen; ++i) re[i] = frame[i] * window[i];
    detail::fft_radix2(re, im);

    for (int m = 0; m < cfg.n_mels; ++m) {
      double energy = 0.0;
      const auto& w = bank.weights[m];
      for (int k = 0; k <= n_fft / 2; ++k)
        energy += w[k] * (re[k] * re[k] + im[k] * im[k]);
      out.at(t, m) = std::log(std::max(energy, cfg.log_floor));
    }
  }
  return out;
}

// Subtracts the per-dimension mean over frames. Variance is left alone.
inline FeatureMatrix apply_cmvn(const FeatureMatrix& feats) {
  if (feats.n_frames < 1)
    fail(Errc::empty_utterance, "apply_cmvn: no frames");
  FeatureMatrix out = feats;
  for (int d = 0; d < feats.dim; ++d) {
    double mean = 0.0;
    for (int t = 0; t < feats.n_frames; ++t) mean += feats.at(t, d);
    mean /= feats.n_frames;
    for (int t = 0; t < feats.n_frames; ++t) out.at(t, d) -= mean;
  }
  return out;
}

// Concatenates each frame with its neighbours; indices past the ends are
// clamped so the frame count is preserved.
inline FeatureMatrix splice(const FeatureMatrix& feats, const SpliceSpec& spec) {
  if (feats.n_frames < 1) fail(Errc::empty_utterance, "splice: no frames");
  if (spec.left < 0 || spec.right < 0)
    fail(Errc::invalid_config, "splice: negative context");
  const int ctx = spec.left + spec.right + 1;
  FeatureMatrix out(feats.n_frames, ctx * feats.dim);
  for (int t = 0; t < feats.n_frames; ++t) {
    double* dst = out.row(t);
    for (int c = -spec.left; c <= spec.right; ++c) {
      int src = std::clamp(t + c, 0, feats.n_frames - 1);
      const double* s = feats.row(src);
      for (int d = 0; d < feats.dim; ++d) *dst++ = s[d];
    }
  }
  return out;
}

// ---- feature dump -------------------------------------------------------
//
// Header line: `utt_id T D`, or `utt_id spk_id event T D` when labeled.
// One line of space-separated values per frame; decimal mode keeps 9
// significant digits (lossy), hex mode round-trips exactly.

inline void write_feature_dump(std::ostream& os, const std::string& utt_id,
                               const std::string& spk_id,
                               const std::string& event,
                               const FeatureMatrix& feats, bool hex = false) {
  os << utt_id;
  if (!spk_id.empty()) os << ' ' << spk_id << ' ' << event;
  os << ' ' << feats.n_frames << ' ' << feats.dim << '\n';
  char buf[48];
  for (int t = 0; t < feats.n_frames; ++t) {
    for (int d = 0; d < feats.dim; ++d) {
      std::snprintf(buf, sizeof(buf), hex ? "%a" : "%.9g", feats.at(t, d));
      if (d) os << ' ';
      os << buf;
    }
    os << '\n';
  }
}

struct FeatureDumpRecord {
  std::string utt_id;
  std::string spk_id;  // empty when the dump is unlabeled
  std::string event;
  FeatureMatrix feats;
};

inline std::vector<FeatureDumpRecord> read_feature_dump(std::istream& is) {
  std::vector<FeatureDumpRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream hs(line);
    std::vector<std::string> tok;
    std::string t;
    while (hs >> t) tok.push_back(t);
    FeatureDumpRecord rec;
    int rows = 0, cols = 0;
    if (tok.size() == 3) {
      rec.utt_id = tok[0];
      rows = std::atoi(tok[1].c_str());
      cols = std::atoi(tok[2].c_str());
    } else if (tok.size() == 5) {
      rec.utt_id = tok[0];
      rec.spk_id = tok[1];
      rec.event = tok[2];
      rows = std::atoi(tok[3].c_str());
      cols = std::atoi(tok[4].c_str());
    } else {
      fail(Errc::parse_error,
           "feature dump line " + std::to_string(lineno) + ": bad header");
    }
    if (rows < 0 || cols <= 0)
      fail(Errc::parse_error,
           "feature dump line " + std::to_string(lineno) + ": bad shape");
    rec.feats = FeatureMatrix(rows, cols);
    for (int r = 0; r < rows; ++r) {
      if (!std::getline(is, line))
        fail(Errc::parse_error, "feature dump: truncated at row " +
                                    std::to_string(r) + " of " + rec.utt_id);
      ++lineno;
      const char* p = line.c_str();
      char* end = nullptr;
      for (int c = 0; c < cols; ++c) {
        double v = std::strtod(p, &end);
        if (end == p)
          fail(Errc::parse_error,
               "feature dump line " + std::to_string(lineno) + ": bad value");
        rec.feats.at(r, c) = v;
        p = end;
      }
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace dvkit
