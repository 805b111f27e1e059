#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <utility>
#include <vector>

#include "dvkit/audio.hpp"
#include "dvkit/common.hpp"
#include "dvkit/manifest.hpp"
#include "dvkit/rng.hpp"

namespace dvkit {

struct SynthSpec {
  int n_speakers = 20;
  int utts_per_speaker_per_event = 8;
  std::vector<Event> events = {Event::cough, Event::laugh, Event::wei};
  double dur_min_s = 0.2;
  double dur_max_s = 0.4;
  int sample_rate_hz = 16000;
  std::uint64_t seed = 0;
};

namespace detail {

// Speaker identity: a 4-peak spectral envelope (8 poles) and a base pitch.
struct SpeakerProfile {
  double pole_freq[4];
  double pole_bw[4];
  double pole_gain[4];
  double pitch_hz;
};

inline SpeakerProfile make_speaker(std::uint64_t seed, int spk) {
  Rng rng(mix_seed(mix_seed(seed, "spk"), static_cast<std::uint64_t>(spk)));
  SpeakerProfile p;
  // Bands sit below the decimation passband edge so identity survives a
  // 16k -> 8k chain.
  const double lo[4] = {260.0, 700.0, 1250.0, 2000.0};
  const double hi[4] = {600.0, 1100.0, 1750.0, 2800.0};
  for (int i = 0; i < 4; ++i) {
    p.pole_freq[i] = rng.uniform(lo[i], hi[i]);
    p.pole_bw[i] = rng.uniform(80.0, 220.0);
    p.pole_gain[i] = rng.uniform(0.4, 1.0);
  }
  p.pitch_hz = rng.uniform(90.0, 260.0);
  return p;
}

// Parallel bank of two-pole resonators.
class ResonatorBank {
 public:
  ResonatorBank(const SpeakerProfile& p, double fs) {
    for (int i = 0; i < 4; ++i) {
      double r = std::exp(-M_PI * p.pole_bw[i] / fs);
      double th = 2.0 * M_PI * p.pole_freq[i] / fs;
      a1_[i] = 2.0 * r * std::cos(th);
      a2_[i] = -r * r;
      g_[i] = p.pole_gain[i] * (1.0 - r);
      y1_[i] = y2_[i] = 0.0;
    }
  }

  double step(double x) {
    double out = 0.0;
    for (int i = 0; i < 4; ++i) {
      double y = g_[i] * x + a1_[i] * y1_[i] + a2_[i] * y2_[i];
      y2_[i] = y1_[i];
      y1_[i] = y;
      out += y;
    }
    return out;
  }

 private:
  double a1_[4], a2_[4], g_[4], y1_[4], y2_[4];
};

struct UttJitter {
  double dur_s;
  double gain;
  double pitch_scale;
};

inline std::vector<double> render_event(const SpeakerProfile& spk, Event ev,
                                        const UttJitter& jit, double fs,
                                        double dur_min_s, double dur_max_s,
                                        Rng& rng) {
  // keep the rendered length on the sample grid inside [dur_min, dur_max]
  const long n_min = std::max<long>(1, std::lround(std::ceil(dur_min_s * fs)));
  const long n_max = std::max(n_min, static_cast<long>(std::floor(dur_max_s * fs)));
  const int n = static_cast<int>(
      std::clamp(std::lround(jit.dur_s * fs), n_min, n_max));
  std::vector<double> x(static_cast<std::size_t>(n), 0.0);
  ResonatorBank bank(spk, fs);
  const double pitch = spk.pitch_hz * jit.pitch_scale;

  if (ev == Event::cough) {
    // noise burst, sharp attack, exponential decay
    const double attack_s = rng.uniform(0.003, 0.008);
    const double tau = jit.dur_s / rng.uniform(2.5, 4.0);
    for (int i = 0; i < n; ++i) {
      double t = i / fs;
      double env = t < attack_s ? t / attack_s : std::exp(-(t - attack_s) / tau);
      x[static_cast<std::size_t>(i)] =
          bank.step(env * rng.uniform(-1.0, 1.0));
    }
  } else if (ev == Event::laugh) {
    // pulse train with syllabic amplitude modulation and a little aspiration
    const double am_hz = rng.uniform(3.5, 6.5);
    const double am_phase = rng.uniform(0.0, 2.0 * M_PI);
    double phase = 0.0;
    for (int i = 0; i < n; ++i) {
      double t = i / fs;
      double am = 0.55 + 0.45 * std::cos(2.0 * M_PI * am_hz * t + am_phase);
      double exc = 0.05 * rng.uniform(-1.0, 1.0);
      phase += pitch / fs;
      if (phase >= 1.0) {
        phase -= 1.0;
        exc += 1.0;
      }
      double edge = std::min({t / 0.01, (jit.dur_s - t) / 0.02, 1.0});
      x[static_cast<std::size_t>(i)] = bank.step(am * std::max(edge, 0.0) * exc);
    }
  } else {
    // steady voiced tone, pitch gliding down
    const double glide_start = pitch * rng.uniform(1.05, 1.15);
    const double glide_end = pitch * rng.uniform(0.80, 0.90);
    double phase = 0.0;
    for (int i = 0; i < n; ++i) {
      double t = i / fs;
      double frac = t / jit.dur_s;
      double f0 = glide_start + (glide_end - glide_start) * frac;
      double exc = 0.02 * rng.uniform(-1.0, 1.0);
      phase += f0 / fs;
      if (phase >= 1.0) {
        phase -= 1.0;
        exc += 1.0;
      }
      double edge = std::min({t / 0.015, (jit.dur_s - t) / 0.03, 1.0});
      x[static_cast<std::size_t>(i)] = bank.step(std::max(edge, 0.0) * exc);
    }
  }

  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::fabs(v));
  double scale = peak > 0.0 ? 0.35 * jit.gain / peak : 0.0;
  for (double& v : x) v *= scale;
  return x;
}

}  // namespace detail

inline void validate(const SynthSpec& spec) {
  if (spec.n_speakers <= 0)
    fail(Errc::invalid_spec, "synth: n_speakers must be positive");
  if (spec.utts_per_speaker_per_event <= 0)
    fail(Errc::invalid_spec, "synth: utts per speaker per event must be positive");
  if (spec.events.empty()) fail(Errc::invalid_spec, "synth: no events");
  for (Event e : spec.events)
    if (e == Event::other)
      fail(Errc::invalid_spec, "synth: cannot render event 'other'");
  for (std::size_t i = 0; i < spec.events.size(); ++i)
    for (std::size_t j = i + 1; j < spec.events.size(); ++j)
      if (spec.events[i] == spec.events[j])
        fail(Errc::invalid_spec, "synth: duplicate event");
  if (!(spec.dur_min_s > 0.0 && spec.dur_min_s <= spec.dur_max_s))
    fail(Errc::invalid_spec, "synth: need 0 < dur_min_s <= dur_max_s");
  if (spec.sample_rate_hz < 8000)
    fail(Errc::invalid_spec, "synth: sample rate below 8000 Hz");
}

// Renders a deterministic corpus. Every stream is derived from
// (seed, speaker, event, utterance), so output is bit-identical per seed and
// independent of call order. Samples come back already on the int16 grid;
// entry paths are relative file names the caller may prefix.
inline std::pair<std::vector<AudioClip>, std::vector<ManifestEntry>>
synth_corpus(const SynthSpec& spec) {
  validate(spec);

  std::vector<AudioClip> clips;
  std::vector<ManifestEntry> entries;
  const double fs = spec.sample_rate_hz;
  char name[96];

  for (int s = 0; s < spec.n_speakers; ++s) {
    detail::SpeakerProfile prof = detail::make_speaker(spec.seed, s);
    std::snprintf(name, sizeof(name), "S%03d", s + 1);
    std::string spk_id = name;
    for (Event ev : spec.events) {
      for (int u = 0; u < spec.utts_per_speaker_per_event; ++u) {
        std::uint64_t tag = (static_cast<std::uint64_t>(s) << 20) |
                            (static_cast<std::uint64_t>(ev) << 16) |
                            static_cast<std::uint64_t>(u);
        Rng rng(mix_seed(mix_seed(spec.seed, "utt"), tag));
        detail::UttJitter jit;
        jit.dur_s = rng.uniform(spec.dur_min_s, spec.dur_max_s);
        jit.gain = std::pow(10.0, rng.uniform(-3.0, 3.0) / 20.0);
        jit.pitch_scale = rng.uniform(0.95, 1.05);

        AudioClip clip;
        clip.sample_rate_hz = spec.sample_rate_hz;
        clip.samples = detail::render_event(prof, ev, jit, fs, spec.dur_min_s,
                                            spec.dur_max_s, rng);
        quantize_16bit(clip);

        std::snprintf(name, sizeof(name), "%s_%s_%02d", spk_id.c_str(),
                      event_name(ev), u);
        ManifestEntry e;
        e.utt_id = name;
        e.spk_id = spk_id;
        e.event = ev;
        e.path = std::string(name) + ".wav";
        e.duration_s = clip.samples.size() / fs;
        clips.push_back(std::move(clip));
        entries.push_back(std::move(e));
      }
    }
  }
  return {std::move(clips), std::move(entries)};
}

}  // namespace dvkit
