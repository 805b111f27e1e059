// dvkit: synthetic trivial-event speaker verification toolkit.
//
// One binary, one seed: synth -> train -> extract -> score -> eval, each
// runnable alone or chained with `pipeline`.

#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "dvkit/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"d-vector speaker verification toolkit"};
  app.require_subcommand(1);
  app.footer(dvkit::config_help());

  std::string config_path;
  std::vector<std::string> sets;
  std::string event, scorer, out_dir;
  std::string seed_str;
  app.add_option("--config", config_path, "config file (key=value lines)");
  app.add_option("--set", sets, "override, key=value (repeatable)");
  app.add_option("--event", event, "event filter: cough|laugh|wei|all");
  app.add_option("--scorer", scorer, "scorer: cosine|lda|plda");
  app.add_option("--seed", seed_str, "master seed");
  app.add_option("--out", out_dir, "artifact directory");

  auto* sub_synth = app.add_subcommand("synth", "render the synthetic corpus");
  auto* sub_train = app.add_subcommand("train", "train the speaker classifier");
  auto* sub_extract = app.add_subcommand("extract", "extract d-vectors");
  auto* sub_score = app.add_subcommand("score", "build and score trials");
  auto* sub_eval = app.add_subcommand("eval", "compute EER reports");
  auto* sub_pipeline = app.add_subcommand("pipeline", "run all stages in order");
  auto* sub_dump = app.add_subcommand("dump", "dump per-frame speaker features");
  std::string dump_out;
  bool dump_hex = false;
  sub_dump->add_option("--dump-out", dump_out, "output path (default <out>/features.txt)");
  sub_dump->add_flag("--hex", dump_hex, "exact hexadecimal floats");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const char* stage = "config";
  try {
    dvkit::RunConfig cfg = dvkit::parse_config(config_path, sets);
    if (!event.empty()) dvkit::detail::apply_kv(cfg, "event", event);
    if (!scorer.empty()) dvkit::detail::apply_kv(cfg, "scorer", scorer);
    if (!seed_str.empty()) dvkit::detail::apply_kv(cfg, "seed", seed_str);
    if (!out_dir.empty()) dvkit::detail::apply_kv(cfg, "out", out_dir);
    cfg.synth.seed = cfg.seed;
    for (const auto& w : cfg.warnings)
      std::fprintf(stderr, "dvkit: warning: %s\n", w.c_str());

    try {
      if (sub_synth->parsed()) {
        stage = "synth";
        std::string manifest = dvkit::run_synth(cfg);
        std::printf("synth: wrote %s\n", manifest.c_str());
      } else if (sub_train->parsed()) {
        stage = "train";
        std::string model = dvkit::run_train(cfg);
        std::printf("train: wrote %s\n", model.c_str());
      } else if (sub_extract->parsed()) {
        stage = "extract";
        std::string dv = dvkit::run_extract(cfg);
        std::printf("extract: wrote %s\n", dv.c_str());
      } else if (sub_score->parsed()) {
        stage = "score";
        for (const auto& p : dvkit::run_score(cfg))
          std::printf("score: wrote %s\n", p.c_str());
      } else if (sub_eval->parsed()) {
        stage = "eval";
        for (const auto& p : dvkit::run_eval(cfg))
          std::printf("eval: wrote %s\n", p.c_str());
      } else if (sub_dump->parsed()) {
        stage = "dump";
        if (dump_out.empty()) dump_out = cfg.out_dir + "/features.txt";
        long rows = dvkit::run_dump(cfg, dump_out, dump_hex);
        std::printf("dump: wrote %ld rows to %s\n", rows, dump_out.c_str());
      } else if (sub_pipeline->parsed()) {
        stage = "synth";
        dvkit::run_synth(cfg);
        stage = "train";
        dvkit::run_train(cfg);
        stage = "extract";
        dvkit::run_extract(cfg);
        stage = "score";
        dvkit::run_score(cfg);
        stage = "eval";
        for (const auto& p : dvkit::run_eval(cfg))
          std::printf("pipeline: wrote %s\n", p.c_str());
      }
    } catch (const dvkit::Error& e) {
      std::fprintf(stderr, "dvkit %s: %s\n", stage, e.what());
      return 1;
    }
  } catch (const dvkit::Error& e) {
    // configuration problems: bad file, bad key, bad value
    std::fprintf(stderr, "dvkit config: %s\n", e.what());
    return 2;
  }
  return 0;
}
