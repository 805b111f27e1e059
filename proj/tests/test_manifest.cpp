#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>
#include <set>
#include <string>

#include "dvkit/manifest.hpp"
#include "dvkit/rng.hpp"
#include "dvkit/synth.hpp"
#include "helpers.hpp"

using dvkit::Errc;
using dvkit::Error;
using dvkit::Event;
using dvkit::ManifestEntry;

TEST_CASE("load_manifest") {
  testutil::TempDir tmp("man");

  SECTION("empty file gives empty list") {
    testutil::write_text(tmp.file("m.tsv"), "");
    REQUIRE(dvkit::load_manifest(tmp.file("m.tsv")).empty());
  }

  SECTION("single line parses") {
    testutil::write_text(tmp.file("m.tsv"), "c01\tS001\tcough\t/d/c01.wav\t0.27\n");
    auto es = dvkit::load_manifest(tmp.file("m.tsv"));
    REQUIRE(es.size() == 1);
    REQUIRE(es[0].utt_id == "c01");
    REQUIRE(es[0].spk_id == "S001");
    REQUIRE(es[0].event == Event::cough);
    REQUIRE(es[0].path == "/d/c01.wav");
    REQUIRE(es[0].duration_s == 0.27);
  }

  SECTION("comments and blank lines are skipped") {
    testutil::write_text(tmp.file("m.tsv"),
                         "# header\n\nc01\tS001\tlaugh\ta.wav\t0.3\n");
    auto es = dvkit::load_manifest(tmp.file("m.tsv"));
    REQUIRE(es.size() == 1);
    REQUIRE(es[0].event == Event::laugh);
  }

  SECTION("unknown event maps to other") {
    testutil::write_text(tmp.file("m.tsv"), "c01\tS001\tsneeze\ta.wav\t0.3\n");
    REQUIRE(dvkit::load_manifest(tmp.file("m.tsv"))[0].event == Event::other);
  }

  SECTION("duplicate utt_id") {
    testutil::write_text(tmp.file("m.tsv"),
                         "c01\tS001\tcough\ta.wav\t0.3\n"
                         "c01\tS002\tcough\tb.wav\t0.3\n");
    try {
      dvkit::load_manifest(tmp.file("m.tsv"));
      FAIL("expected DuplicateUttId");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::duplicate_utt_id);
    }
  }

  SECTION("wrong field count reports the line") {
    testutil::write_text(tmp.file("m.tsv"),
                         "c01\tS001\tcough\ta.wav\t0.3\n"
                         "c02\tS001\tcough\n");
    try {
      dvkit::load_manifest(tmp.file("m.tsv"));
      FAIL("expected ParseError");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::parse_error);
      REQUIRE(std::string(e.what()).find(":2") != std::string::npos);
    }
  }

  SECTION("non-numeric duration") {
    testutil::write_text(tmp.file("m.tsv"), "c01\tS001\tcough\ta.wav\tlong\n");
    try {
      dvkit::load_manifest(tmp.file("m.tsv"));
      FAIL("expected ParseError");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::parse_error);
    }
  }

  SECTION("save then load round-trips") {
    std::vector<ManifestEntry> es;
    for (int i = 0; i < 5; ++i)
      es.push_back({"u" + std::to_string(i), "S00" + std::to_string(i % 2),
                    Event::wei, "u" + std::to_string(i) + ".wav", 0.25 + i * 0.01});
    dvkit::save_manifest(es, tmp.file("m.tsv"));
    auto back = dvkit::load_manifest(tmp.file("m.tsv"));
    REQUIRE(back.size() == es.size());
    for (std::size_t i = 0; i < es.size(); ++i) {
      REQUIRE(back[i].utt_id == es[i].utt_id);
      REQUIRE(back[i].spk_id == es[i].spk_id);
      REQUIRE(back[i].event == es[i].event);
      REQUIRE(back[i].path == es[i].path);
      REQUIRE(back[i].duration_s == Catch::Approx(es[i].duration_s).margin(1e-6));
    }
  }
}

namespace {

// 104 speakers, 890 utterances: the first 58 speakers get 9, the rest 8.
std::vector<ManifestEntry> cough_subset_manifest() {
  std::vector<ManifestEntry> es;
  int utt = 0;
  for (int s = 0; s < 104; ++s) {
    int n = s < 58 ? 9 : 8;
    for (int u = 0; u < n; ++u)
      es.push_back({"c" + std::to_string(utt++), "S" + std::to_string(s),
                    Event::cough, "x.wav", 0.27});
  }
  return es;
}

}  // namespace

TEST_CASE("manifest_stats") {
  SECTION("104-speaker cough subset arithmetic") {
    auto es = cough_subset_manifest();
    auto st = dvkit::manifest_stats(es);
    REQUIRE(st.overall.n_speakers == 104);
    REQUIRE(st.overall.n_utts == 890);
    // 890/104 = 8.557... -> 8.6 at one decimal place
    REQUIRE(std::round(st.overall.utts_per_spk * 10.0) / 10.0 == 8.6);
    REQUIRE(st.overall.avg_dur_s == Catch::Approx(0.27).margin(1e-12));
    REQUIRE(st.per_event.at(Event::cough).n_utts == 890);
  }

  SECTION("single entry") {
    std::vector<ManifestEntry> es{{"u0", "S0", Event::wei, "x.wav", 0.5}};
    auto st = dvkit::manifest_stats(es);
    REQUIRE(st.overall.n_speakers == 1);
    REQUIRE(st.overall.n_utts == 1);
    REQUIRE(st.overall.avg_dur_s == 0.5);
  }

  SECTION("two speakers with 2 and 4 utts") {
    std::vector<ManifestEntry> es;
    for (int i = 0; i < 2; ++i)
      es.push_back({"a" + std::to_string(i), "A", Event::cough, "x", 0.2});
    for (int i = 0; i < 4; ++i)
      es.push_back({"b" + std::to_string(i), "B", Event::cough, "x", 0.2});
    REQUIRE(dvkit::manifest_stats(es).overall.utts_per_spk == 3.0);
  }

  SECTION("empty manifest") {
    try {
      dvkit::manifest_stats({});
      FAIL("expected EmptyManifest");
    } catch (const Error& e) {
      REQUIRE(e.code() == Errc::empty_manifest);
    }
  }

  SECTION("totals match a brute-force recount on random manifests") {
    dvkit::Rng rng(123);
    for (int it = 0; it < 100; ++it) {
      std::vector<ManifestEntry> es;
      int n_spk = 1 + static_cast<int>(rng.uniform_int(6));
      int utt = 0;
      for (int s = 0; s < n_spk; ++s) {
        int n = 1 + static_cast<int>(rng.uniform_int(7));
        for (int u = 0; u < n; ++u) {
          Event ev = static_cast<Event>(rng.uniform_int(3));
          es.push_back({"u" + std::to_string(utt++), "S" + std::to_string(s),
                        ev, "x", rng.uniform(0.1, 1.0)});
        }
      }
      auto st = dvkit::manifest_stats(es);

      // independent fold
      std::set<std::string> spks;
      double dur = 0.0;
      std::map<Event, int> ev_counts;
      for (const auto& e : es) {
        spks.insert(e.spk_id);
        dur += e.duration_s;
        ev_counts[e.event]++;
      }
      REQUIRE(st.overall.n_utts == static_cast<int>(es.size()));
      REQUIRE(st.overall.n_speakers == static_cast<int>(spks.size()));
      REQUIRE(st.overall.utts_per_spk ==
              Catch::Approx(static_cast<double>(es.size()) / spks.size())
                  .margin(1e-9));
      REQUIRE(st.overall.avg_dur_s ==
              Catch::Approx(dur / es.size()).margin(1e-9));
      int per_event_total = 0;
      for (const auto& [ev, n] : ev_counts) {
        REQUIRE(st.per_event.at(ev).n_utts == n);
        per_event_total += st.per_event.at(ev).n_utts;
      }
      REQUIRE(per_event_total == st.overall.n_utts);
    }
  }
}

TEST_CASE("synth_corpus") {
  dvkit::SynthSpec spec;
  spec.n_speakers = 4;
  spec.utts_per_speaker_per_event = 2;
  spec.seed = 7;

  SECTION("deterministic per seed") {
    auto [clips1, man1] = dvkit::synth_corpus(spec);
    auto [clips2, man2] = dvkit::synth_corpus(spec);
    REQUIRE(clips1.size() == clips2.size());
    for (std::size_t i = 0; i < clips1.size(); ++i)
      REQUIRE(clips1[i].samples == clips2[i].samples);
    REQUIRE(man1.size() == man2.size());
    for (std::size_t i = 0; i < man1.size(); ++i)
      REQUIRE(man1[i].utt_id == man2[i].utt_id);
  }

  SECTION("different seeds differ") {
    auto a = dvkit::synth_corpus(spec);
    spec.seed = 8;
    auto b = dvkit::synth_corpus(spec);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.first.size() && !any_diff; ++i)
      any_diff = a.first[i].samples != b.first[i].samples;
    REQUIRE(any_diff);
  }

  SECTION("counts and ids") {
    dvkit::SynthSpec big;
    big.n_speakers = 20;
    big.utts_per_speaker_per_event = 8;
    big.seed = 1;
    auto [clips, man] = dvkit::synth_corpus(big);
    REQUIRE(man.size() == 480);
    REQUIRE(clips.size() == 480);
    std::set<std::string> spks, utts;
    for (const auto& e : man) {
      spks.insert(e.spk_id);
      utts.insert(e.utt_id);
    }
    REQUIRE(spks.size() == 20);
    REQUIRE(utts.size() == 480);
  }

  SECTION("durations stay in range and samples are quantized") {
    auto [clips, man] = dvkit::synth_corpus(spec);
    for (std::size_t i = 0; i < clips.size(); ++i) {
      double dur = clips[i].duration_s();
      REQUIRE(dur >= spec.dur_min_s - 1e-12);
      REQUIRE(dur <= spec.dur_max_s + 1e-12);
      REQUIRE(man[i].duration_s == Catch::Approx(dur).margin(1e-9));
      for (double v : clips[i].samples) {
        REQUIRE(std::fabs(v) <= 1.0);
        double grid = v * 32768.0;
        REQUIRE(grid == std::round(grid));
      }
    }
  }

  SECTION("wav write/read round-trips synthesized clips exactly") {
    testutil::TempDir tmp("synthwav");
    auto [clips, man] = dvkit::synth_corpus(spec);
    dvkit::write_wav(clips[0], tmp.file(man[0].path));
    auto back = dvkit::read_wav(tmp.file(man[0].path));
    REQUIRE(back.samples == clips[0].samples);
    REQUIRE(back.sample_rate_hz == clips[0].sample_rate_hz);
  }

  SECTION("invalid specs are rejected") {
    dvkit::SynthSpec bad = spec;
    bad.n_speakers = 0;
    REQUIRE_THROWS_AS(dvkit::synth_corpus(bad), Error);
    bad = spec;
    bad.dur_min_s = 0.5;
    bad.dur_max_s = 0.4;
    REQUIRE_THROWS_AS(dvkit::synth_corpus(bad), Error);
    bad = spec;
    bad.events = {Event::cough, Event::cough};
    REQUIRE_THROWS_AS(dvkit::synth_corpus(bad), Error);
  }
}
