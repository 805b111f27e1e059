#pragma once

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/ctdnn.hpp"
#include "dvkit/eval.hpp"
#include "dvkit/feature.hpp"
#include "dvkit/manifest.hpp"
#include "dvkit/synth.hpp"
#include "dvkit/trainer.hpp"

namespace dvkit {

// Everything a run needs, file values first, then --set overrides. Unknown
// keys are rejected.
struct RunConfig {
  std::string out_dir = "out";
  std::string manifest_path;  // defaults to <out>/corpus/manifest.tsv
  std::string model_path;     // defaults to <out>/model.ctdnn
  std::string dvectors_path;  // defaults to <out>/dvectors.txt
  std::uint64_t seed = 7;
  std::string event = "all";  // cough | laugh | wei | all
  std::string scorer = "cosine";

  FrontendConfig frontend;
  SpliceSpec splice;
  CtDnnConfig ctdnn;  // n_speakers filled in from the manifest at train time
  TrainOptions trainer{.epochs = 3, .lr = 0.02, .momentum = 0.9};
  SynthSpec synth;

  int enroll_per_spk = 3;
  int lda_dim = 150;  // capped at min(dim, classes-1) when fitting
  int plda_iters = 10;
  bool length_norm = true;

  std::vector<std::string> warnings;  // duplicate-key notes from parsing

  std::string manifest() const {
    return manifest_path.empty() ? out_dir + "/corpus/manifest.tsv" : manifest_path;
  }
  std::string model() const {
    return model_path.empty() ? out_dir + "/model.ctdnn" : model_path;
  }
  std::string dvectors() const {
    return dvectors_path.empty() ? out_dir + "/dvectors.txt" : dvectors_path;
  }
};

namespace detail {

struct KeyDef {
  const char* key;
  const char* desc;
  std::function<void(RunConfig&, const std::string&)> apply;
};

inline long parse_long(const std::string& v, const std::string& key) {
  char* end = nullptr;
  long x = std::strtol(v.c_str(), &end, 10);
  if (v.empty() || end != v.c_str() + v.size())
    fail(Errc::parse_error, "key " + key + ": '" + v + "' is not an integer");
  return x;
}

inline double parse_double(const std::string& v, const std::string& key) {
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size())
    fail(Errc::parse_error, "key " + key + ": '" + v + "' is not a number");
  return x;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(Errc::parse_error, "key " + key + ": '" + v + "' is not a bool");
}

inline std::vector<int> parse_int_list(const std::string& v, const std::string& key) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t comma = v.find(',', start);
    std::string tok = comma == std::string::npos ? v.substr(start)
                                                 : v.substr(start, comma - start);
    out.push_back(static_cast<int>(parse_long(tok, key)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<Event> parse_event_list(const std::string& v,
                                           const std::string& key) {
  std::vector<Event> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    std::size_t comma = v.find(',', start);
    std::string tok = comma == std::string::npos ? v.substr(start)
                                                 : v.substr(start, comma - start);
    Event e = event_from_string(tok);
    if (e == Event::other)
      fail(Errc::parse_error, "key " + key + ": unknown event '" + tok + "'");
    out.push_back(e);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

#define DVKIT_KEY_LONG(KEY, DESC, FIELD)                                     \
  {KEY, DESC, [](RunConfig& c, const std::string& v) {                       \
     c.FIELD = static_cast<decltype(c.FIELD)>(parse_long(v, KEY));           \
   }}
#define DVKIT_KEY_DOUBLE(KEY, DESC, FIELD)                                   \
  {KEY, DESC,                                                                \
   [](RunConfig& c, const std::string& v) { c.FIELD = parse_double(v, KEY); }}
#define DVKIT_KEY_STRING(KEY, DESC, FIELD) \
  {KEY, DESC, [](RunConfig& c, const std::string& v) { c.FIELD = v; }}

inline const std::vector<KeyDef>& key_defs() {
  static const std::vector<KeyDef> defs = {
      DVKIT_KEY_STRING("out", "artifact directory (default out)", out_dir),
      DVKIT_KEY_STRING("manifest", "manifest path (default <out>/corpus/manifest.tsv)",
                       manifest_path),
      DVKIT_KEY_STRING("model", "model path (default <out>/model.ctdnn)", model_path),
      DVKIT_KEY_STRING("dvectors", "d-vector file (default <out>/dvectors.txt)",
                       dvectors_path),
      DVKIT_KEY_LONG("seed", "master seed, fanned out per stage (default 7)", seed),
      {"event", "event filter: cough|laugh|wei|all (default all)",
       [](RunConfig& c, const std::string& v) {
         if (v != "all" && event_from_string(v) == Event::other)
           fail(Errc::parse_error, "key event: unknown event '" + v + "'");
         c.event = v;
       }},
      {"scorer", "scorer: cosine|lda|plda (default cosine)",
       [](RunConfig& c, const std::string& v) {
         scorer_from_string(v);  // validates
         c.scorer = v;
       }},

      DVKIT_KEY_DOUBLE("frontend.frame_len_ms", "frame length in ms (default 25)",
                       frontend.frame_len_ms),
      DVKIT_KEY_DOUBLE("frontend.frame_shift_ms", "frame shift in ms (default 10)",
                       frontend.frame_shift_ms),
      DVKIT_KEY_DOUBLE("frontend.preemphasis", "pre-emphasis in [0,1) (default 0.97)",
                       frontend.preemphasis),
      DVKIT_KEY_LONG("frontend.n_mels", "mel filters (default 40)", frontend.n_mels),
      DVKIT_KEY_DOUBLE("frontend.fmin_hz", "lowest mel edge (default 20)",
                       frontend.fmin_hz),
      DVKIT_KEY_DOUBLE("frontend.fmax_hz", "highest mel edge (default 3800)",
                       frontend.fmax_hz),
      DVKIT_KEY_DOUBLE("frontend.log_floor", "energy floor (default 1e-10)",
                       frontend.log_floor),
      DVKIT_KEY_LONG("frontend.sample_rate_hz", "frontend rate (default 8000)",
                     frontend.sample_rate_hz),
      DVKIT_KEY_LONG("splice.left", "left context frames (default 4)", splice.left),
      DVKIT_KEY_LONG("splice.right", "right context frames (default 4)", splice.right),

      DVKIT_KEY_LONG("ctdnn.conv1_maps", "conv1 feature maps (default 64)",
                     ctdnn.conv1.maps),
      DVKIT_KEY_LONG("ctdnn.conv1_patch_time", "conv1 patch, time (default 3)",
                     ctdnn.conv1.patch_time),
      DVKIT_KEY_LONG("ctdnn.conv1_patch_freq", "conv1 patch, freq (default 5)",
                     ctdnn.conv1.patch_freq),
      DVKIT_KEY_LONG("ctdnn.conv1_pool_freq", "conv1 freq pool (default 2)",
                     ctdnn.conv1.pool_freq),
      DVKIT_KEY_LONG("ctdnn.conv2_maps", "conv2 feature maps (default 128)",
                     ctdnn.conv2.maps),
      DVKIT_KEY_LONG("ctdnn.conv2_patch_time", "conv2 patch, time (default 3)",
                     ctdnn.conv2.patch_time),
      DVKIT_KEY_LONG("ctdnn.conv2_patch_freq", "conv2 patch, freq (default 5)",
                     ctdnn.conv2.patch_freq),
      DVKIT_KEY_LONG("ctdnn.conv2_pool_freq", "conv2 freq pool (default 2)",
                     ctdnn.conv2.pool_freq),
      DVKIT_KEY_LONG("ctdnn.bottleneck_dim", "bottleneck units (default 512)",
                     ctdnn.bottleneck_dim),
      {"ctdnn.td1_offsets", "time-delay 1 offsets (default -2,0,2)",
       [](RunConfig& c, const std::string& v) {
         c.ctdnn.td1_offsets = parse_int_list(v, "ctdnn.td1_offsets");
       }},
      {"ctdnn.td2_offsets", "time-delay 2 offsets (default -4,0,4)",
       [](RunConfig& c, const std::string& v) {
         c.ctdnn.td2_offsets = parse_int_list(v, "ctdnn.td2_offsets");
       }},
      DVKIT_KEY_LONG("ctdnn.td_affine_dim", "P-norm input width (default 2048)",
                     ctdnn.td_affine_dim),
      DVKIT_KEY_LONG("ctdnn.pnorm_group", "P-norm group size (default 4)",
                     ctdnn.pnorm_group),
      DVKIT_KEY_LONG("ctdnn.feature_dim", "speaker feature width (default 400)",
                     ctdnn.feature_dim),

      DVKIT_KEY_LONG("trainer.epochs", "training epochs (default 3)", trainer.epochs),
      DVKIT_KEY_DOUBLE("trainer.lr", "learning rate (default 0.02)", trainer.lr),
      DVKIT_KEY_DOUBLE("trainer.momentum", "momentum in [0,1) (default 0.9)",
                       trainer.momentum),
      DVKIT_KEY_DOUBLE("trainer.lr_decay", "per-epoch lr factor (default 1.0)",
                       trainer.lr_decay),
      DVKIT_KEY_LONG("trainer.batch_frames", "frames per minibatch (default 512)",
                     trainer.batch_frames),
      DVKIT_KEY_LONG("trainer.threads", "gradient workers (default 2)",
                     trainer.threads),

      DVKIT_KEY_LONG("synth.n_speakers", "synthetic speakers (default 20)",
                     synth.n_speakers),
      DVKIT_KEY_LONG("synth.utts_per_event", "utterances per speaker per event (default 8)",
                     synth.utts_per_speaker_per_event),
      {"synth.events", "events to render (default cough,laugh,wei)",
       [](RunConfig& c, const std::string& v) {
         c.synth.events = parse_event_list(v, "synth.events");
       }},
      DVKIT_KEY_DOUBLE("synth.dur_min_s", "min utterance seconds (default 0.2)",
                       synth.dur_min_s),
      DVKIT_KEY_DOUBLE("synth.dur_max_s", "max utterance seconds (default 0.4)",
                       synth.dur_max_s),
      DVKIT_KEY_LONG("synth.sample_rate_hz", "render rate (default 16000)",
                     synth.sample_rate_hz),

      DVKIT_KEY_LONG("trials.enroll_per_spk", "enrollment utts per speaker (default 3)",
                     enroll_per_spk),
      DVKIT_KEY_LONG("lda.dim", "LDA output dim, capped at classes-1 (default 150)",
                     lda_dim),
      DVKIT_KEY_LONG("plda.iters", "PLDA EM iterations (default 10)", plda_iters),
      {"backend.length_norm", "length-normalize d-vectors (default true)",
       [](RunConfig& c, const std::string& v) {
         c.length_norm = parse_bool(v, "backend.length_norm");
       }},
  };
  return defs;
}

#undef DVKIT_KEY_LONG
#undef DVKIT_KEY_DOUBLE
#undef DVKIT_KEY_STRING

inline void apply_kv(RunConfig& cfg, const std::string& key,
                     const std::string& value) {
  for (const auto& def : key_defs()) {
    if (key == def.key) {
      def.apply(cfg, value);
      return;
    }
  }
  fail(Errc::unknown_key, "unknown config key '" + key + "'");
}

}  // namespace detail

inline std::string config_help() {
  std::string s = "Config keys (key=value lines, '#' comments; --set overrides):\n";
  for (const auto& def : detail::key_defs()) {
    std::string key = def.key;
    s += "  " + key;
    s.append(key.size() < 26 ? 26 - key.size() : 1, ' ');
    s += def.desc;
    s += '\n';
  }
  return s;
}

// File values first, overrides second; a key repeated in the file keeps the
// last value and leaves a warning.
inline RunConfig parse_config(const std::string& path,
                              const std::vector<std::string>& overrides = {}) {
  RunConfig cfg;

  auto split_kv = [](const std::string& item, const std::string& where) {
    std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      fail(Errc::parse_error, where + ": expected key=value, got '" + item + "'");
    return std::pair<std::string, std::string>(item.substr(0, eq),
                                               item.substr(eq + 1));
  };

  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) fail(Errc::not_found, "cannot open config " + path);
    std::string line;
    int lineno = 0;
    std::map<std::string, int> seen;
    while (std::getline(f, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::size_t first = line.find_first_not_of(" \t");
      if (first == std::string::npos || line[first] == '#') continue;
      auto [key, value] = split_kv(line.substr(first),
                                   path + ":" + std::to_string(lineno));
      auto [it, fresh] = seen.emplace(key, lineno);
      if (!fresh) {
        cfg.warnings.push_back("duplicate key '" + key + "' at " + path + ":" +
                               std::to_string(lineno) + "; last value wins");
        it->second = lineno;
      }
      try {
        detail::apply_kv(cfg, key, value);
      } catch (const Error& e) {
        if (e.code() == Errc::unknown_key)
          throw Error(Errc::unknown_key, path + ":" + std::to_string(lineno) +
                                             ": " + e.what());
        throw Error(Errc::parse_error, path + ":" + std::to_string(lineno) + ": " +
                                           e.what());
      }
    }
  }
  for (const auto& item : overrides) {
    auto [key, value] = split_kv(item, "--set");
    detail::apply_kv(cfg, key, value);
  }
  cfg.synth.seed = cfg.seed;  // synth randomness follows the master seed
  return cfg;
}

}  // namespace dvkit
