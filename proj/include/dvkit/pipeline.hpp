#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "dvkit/config.hpp"
#include "dvkit/ctdnn_io.hpp"
#include "dvkit/eval.hpp"

namespace dvkit {

// One master seed fans out per stage, so stages stay reproducible when run
// separately or chained.
inline std::uint64_t stage_seed(std::uint64_t seed, const char* stage) {
  return mix_seed(seed, stage);
}

namespace detail {

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(Errc::io_error, "cannot create directory " + dir);
}

// speakers sorted by id -> label index
inline std::map<std::string, int> speaker_labels(
    const std::vector<ManifestEntry>& manifest) {
  std::set<std::string> spks;
  for (const auto& e : manifest) spks.insert(e.spk_id);
  std::map<std::string, int> labels;
  int next = 0;
  for (const auto& s : spks) labels[s] = next++;
  return labels;
}

inline std::vector<Event> selected_events(const RunConfig& cfg,
                                          const std::vector<ManifestEntry>& manifest) {
  if (cfg.event != "all") return {event_from_string(cfg.event)};
  std::vector<Event> out;
  for (Event ev : {Event::cough, Event::laugh, Event::wei})
    if (std::any_of(manifest.begin(), manifest.end(),
                    [ev](const ManifestEntry& e) { return e.event == ev; }))
      out.push_back(ev);
  if (out.empty()) fail(Errc::insufficient_data, "no known events in manifest");
  return out;
}

// Frontend features for every entry, in manifest order. Worker threads split
// the list; results land in per-entry slots, so order and values do not
// depend on the thread count.
inline std::vector<FeatureMatrix> features_for_manifest(
    const std::vector<ManifestEntry>& manifest, const std::string& manifest_path,
    const RunConfig& cfg, int threads) {
  std::vector<FeatureMatrix> feats(manifest.size());
  std::vector<std::exception_ptr> errors(std::max(1, threads));
  auto work = [&](int w) {
    try {
      for (std::size_t i = w; i < manifest.size(); i += std::max(1, threads))
        feats[i] = prepare_features(resolve_path(manifest_path, manifest[i].path),
                                    cfg.frontend, cfg.splice);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads <= 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 1; w < threads; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& th : pool) th.join();
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);
  return feats;
}

}  // namespace detail

// Renders the synthetic corpus into <out>/corpus and writes its manifest.
inline std::string run_synth(const RunConfig& cfg) {
  SynthSpec spec = cfg.synth;
  spec.seed = stage_seed(cfg.seed, "synth");
  auto [clips, entries] = synth_corpus(spec);

  const std::string dir = cfg.out_dir + "/corpus";
  detail::ensure_dir(dir);
  for (std::size_t i = 0; i < clips.size(); ++i)
    write_wav(clips[i], dir + "/" + entries[i].path);
  save_manifest(entries, cfg.manifest());
  return cfg.manifest();
}

// Trains the speaker classifier on every utterance in the manifest (labels
// are speakers, all events pooled) and writes the model plus a per-epoch
// report.
inline std::string run_train(const RunConfig& cfg) {
  auto manifest = load_manifest(cfg.manifest());
  if (manifest.empty()) fail(Errc::empty_manifest, cfg.manifest() + " is empty");
  auto labels = detail::speaker_labels(manifest);

  auto feats = detail::features_for_manifest(manifest, cfg.manifest(), cfg,
                                             cfg.trainer.threads);
  std::vector<Utterance> dataset(manifest.size());
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    dataset[i].spliced = std::move(feats[i]);
    dataset[i].labels.assign(dataset[i].spliced.n_frames,
                             labels.at(manifest[i].spk_id));
  }

  CtDnnConfig net = cfg.ctdnn;
  net.input_mels = cfg.frontend.n_mels;
  net.splice = cfg.splice;
  net.n_speakers = static_cast<int>(labels.size());
  CtDnnParams params = init_params(net, stage_seed(cfg.seed, "init"));

  TrainOptions opts = cfg.trainer;
  opts.seed = stage_seed(cfg.seed, "train");
  auto reports = train(params, dataset, opts);

  detail::ensure_dir(cfg.out_dir);
  save_params(params, cfg.model());
  std::ofstream rep(cfg.out_dir + "/train_report.txt");
  rep << "epoch\tcross_entropy\tframe_accuracy\n";
  char buf[64];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f", r.epoch,
                  r.mean_cross_entropy, r.frame_accuracy);
    rep << buf << '\n';
  }
  return cfg.model();
}

// Extracts one d-vector per manifest entry, in manifest order.
inline std::string run_extract(const RunConfig& cfg) {
  auto manifest = load_manifest(cfg.manifest());
  if (manifest.empty()) fail(Errc::empty_manifest, cfg.manifest() + " is empty");
  CtDnnParams model = load_params(cfg.model());

  auto feats = detail::features_for_manifest(manifest, cfg.manifest(), cfg,
                                             cfg.trainer.threads);
  std::vector<DVector> vecs(manifest.size());
  const int threads = std::max(1, cfg.trainer.threads);
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](int w) {
    try {
      for (std::size_t i = w; i < manifest.size(); i += threads) {
        DVector d = extract_dvector(model, feats[i]);
        d.utt_id = manifest[i].utt_id;
        d.spk_id = manifest[i].spk_id;
        d.event = event_name(manifest[i].event);
        vecs[i] = std::move(d);
      }
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 1; w < threads; ++w) pool.emplace_back(work, w);
    work(0);
    for (auto& th : pool) th.join();
  }
  for (auto& err : errors)
    if (err) std::rethrow_exception(err);

  detail::ensure_dir(cfg.out_dir);
  write_dvectors(vecs, cfg.dvectors());
  return cfg.dvectors();
}

// Builds per-event trials from the manifest and scores them with the chosen
// backend; LDA/PLDA models are fitted on the extracted d-vector collection.
inline std::vector<std::string> run_score(const RunConfig& cfg) {
  auto manifest = load_manifest(cfg.manifest());
  auto dvecs = read_dvectors(cfg.dvectors());

  ScorerSetup setup;
  setup.kind = scorer_from_string(cfg.scorer);
  setup.length_norm = cfg.length_norm;
  if (setup.kind != Scorer::cosine) {
    std::vector<DVector> fitted = dvecs;
    if (setup.length_norm)
      for (auto& v : fitted) v = length_normalize(v);
    if (setup.kind == Scorer::lda) {
      std::set<std::string> spks;
      for (const auto& v : fitted) spks.insert(v.spk_id);
      int cap = std::min(static_cast<int>(spks.size()) - 1,
                         fitted.empty() ? 0 : fitted[0].dim());
      setup.lda = fit_lda(fitted, std::min(cfg.lda_dim, cap));
    } else {
      setup.plda = fit_plda(fitted, cfg.plda_iters);
    }
  }

  std::vector<std::string> outputs;
  for (Event ev : detail::selected_events(cfg, manifest)) {
    auto trials = build_trials(manifest, ev, cfg.enroll_per_spk,
                               stage_seed(cfg.seed, "trials"));
    ScoreSet scores = score_trials(trials, dvecs, setup);
    detail::ensure_dir(cfg.out_dir);
    std::string base = cfg.out_dir + "/trials_" + event_name(ev) + ".tsv";
    write_trials(trials, base);
    std::string spath = cfg.out_dir + "/scores_" + event_name(ev) + ".tsv";
    write_scores(scores, spath);
    outputs.push_back(spath);
  }
  return outputs;
}

// EER report (+ CSV DET) per event from the score files.
inline std::vector<std::string> run_eval(const RunConfig& cfg) {
  auto manifest = load_manifest(cfg.manifest());
  std::vector<std::string> outputs;
  for (Event ev : detail::selected_events(cfg, manifest)) {
    std::string spath = cfg.out_dir + "/scores_" + event_name(ev) + ".tsv";
    ScoreSet scores = read_scores(spath);
    EerReport rep = compute_eer(scores);
    std::string rpath = cfg.out_dir + "/eer_" + event_name(ev) + ".txt";
    write_eer_report(rep, rpath, cfg.out_dir + "/eer_" + event_name(ev) + ".csv");
    outputs.push_back(rpath);
  }
  return outputs;
}

inline void run_pipeline(const RunConfig& cfg) {
  run_synth(cfg);
  run_train(cfg);
  run_extract(cfg);
  run_score(cfg);
  run_eval(cfg);
}

// Per-frame speaker features for external projection tools.
inline long run_dump(const RunConfig& cfg, const std::string& out_path,
                     bool hex = false) {
  auto manifest = load_manifest(cfg.manifest());
  CtDnnParams model = load_params(cfg.model());
  return dump_features(model, manifest, cfg.manifest(), cfg.frontend, cfg.splice,
                       out_path, hex);
}

}  // namespace dvkit
