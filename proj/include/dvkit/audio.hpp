#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dvkit/common.hpp"

namespace dvkit {

// Mono PCM audio, samples scaled to [-1, 1].
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 0;

  double duration_s() const {
    return sample_rate_hz > 0
               ? static_cast<double>(samples.size()) / sample_rate_hz
               : 0.0;
  }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t read_u16le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

inline void put_u32le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline void put_u16le(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

}  // namespace detail

// Reads a RIFF/WAVE file. Only PCM, 16-bit, mono is accepted.
inline AudioClip read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(Errc::not_found, "cannot open " + path);

  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    fail(Errc::unsupported_format, path + " is not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  std::size_t data_off = 0, data_len = 0;
  bool have_data = false;

  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* hdr = bytes.data() + pos;
    std::uint32_t chunk_len = detail::read_u32le(hdr + 4);
    std::size_t body = pos + 8;
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (body + 16 > bytes.size())
        fail(Errc::truncated_file, path + ": fmt chunk truncated");
      format = detail::read_u16le(&bytes[body]);
      channels = detail::read_u16le(&bytes[body + 2]);
      rate = detail::read_u32le(&bytes[body + 4]);
      bits = detail::read_u16le(&bytes[body + 14]);
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      data_off = body;
      data_len = chunk_len;
      have_data = true;
      if (data_off + data_len > bytes.size())
        fail(Errc::truncated_file,
             path + ": data chunk shorter than header claims");
    }
    pos = body + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }

  if (!have_fmt || !have_data)
    fail(Errc::unsupported_format, path + ": missing fmt or data chunk");
  if (format != 1)
    fail(Errc::unsupported_format, path + ": not PCM");
  if (channels != 1)
    fail(Errc::unsupported_format, path + ": not mono");
  if (bits != 16)
    fail(Errc::unsupported_format, path + ": not 16-bit");
  if (rate == 0) fail(Errc::unsupported_format, path + ": zero sample rate");

  AudioClip clip;
  clip.sample_rate_hz = static_cast<int>(rate);
  std::size_t n = data_len / 2;
  clip.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::int16_t s = static_cast<std::int16_t>(
        detail::read_u16le(&bytes[data_off + 2 * i]));
    clip.samples[i] = s / 32768.0;
  }
  return clip;
}

// Writes 16-bit PCM mono. Samples are clamped and rounded to the int16 grid.
inline void write_wav(const AudioClip& clip, const std::string& path) {
  if (clip.sample_rate_hz <= 0)
    fail(Errc::invalid_spec, "write_wav: bad sample rate");
  std::string out;
  std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.reserve(44 + data_len);
  out.append("RIFF");
  detail::put_u32le(out, 36 + data_len);
  out.append("WAVE");
  out.append("fmt ");
  detail::put_u32le(out, 16);
  detail::put_u16le(out, 1);  // PCM
  detail::put_u16le(out, 1);  // mono
  detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate_hz) * 2);
  detail::put_u16le(out, 2);
  detail::put_u16le(out, 16);
  out.append("data");
  detail::put_u32le(out, data_len);
  for (double x : clip.samples) {
    double v = std::lround(x * 32768.0);
    v = std::min(32767.0, std::max(-32768.0, v));
    detail::put_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(Errc::io_error, "cannot write " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(Errc::io_error, "short write to " + path);
}

// Snaps samples to the int16 grid in place, so a write/read round trip is
// exact.
inline void quantize_16bit(AudioClip& clip) {
  for (double& x : clip.samples) {
    double v = std::lround(x * 32768.0);
    v = std::min(32767.0, std::max(-32768.0, v));
    x = v / 32768.0;
  }
}

// Halves the sample rate. A 63-tap Hamming-windowed sinc low-pass at
// 0.9 x the output Nyquist runs first, then every second sample is kept.
// Output length is ceil(n/2).
inline AudioClip decimate_2x(const AudioClip& clip) {
  if (clip.sample_rate_hz % 2 != 0)
    fail(Errc::odd_rate, "decimate_2x: sample rate " +
                             std::to_string(clip.sample_rate_hz) +
                             " is not divisible by 2");
  constexpr int kTaps = 63;
  constexpr int kHalf = kTaps / 2;
  const int out_rate = clip.sample_rate_hz / 2;
  const double cutoff_hz = 0.9 * (out_rate / 2.0);
  const double fc = cutoff_hz / clip.sample_rate_hz;  // cycles per input sample

  double taps[kTaps];
  double sum = 0.0;
  for (int k = 0; k < kTaps; ++k) {
    int n = k - kHalf;
    double ideal = (n == 0) ? 2.0 * fc
                            : std::sin(2.0 * M_PI * fc * n) / (M_PI * n);
    double w = 0.54 - 0.46 * std::cos(2.0 * M_PI * k / (kTaps - 1));
    taps[k] = ideal * w;
    sum += taps[k];
  }
  for (double& t : taps) t /= sum;  // unit DC gain

  const std::size_t n_in = clip.samples.size();
  AudioClip out;
  out.sample_rate_hz = out_rate;
  out.samples.resize((n_in + 1) / 2);
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const std::ptrdiff_t center = static_cast<std::ptrdiff_t>(2 * i);
    double acc = 0.0;
    for (int k = 0; k < kTaps; ++k) {
      std::ptrdiff_t idx = center + k - kHalf;
      if (idx >= 0 && idx < static_cast<std::ptrdiff_t>(n_in))
        acc += taps[k] * clip.samples[static_cast<std::size_t>(idx)];
    }
    out.samples[i] = acc;
  }
  return out;
}

}  // namespace dvkit
