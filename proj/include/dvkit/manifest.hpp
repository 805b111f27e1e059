#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dvkit/common.hpp"

namespace dvkit {

enum class Event { cough, laugh, wei, other };

inline const char* event_name(Event e) {
  switch (e) {
    case Event::cough: return "cough";
    case Event::laugh: return "laugh";
    case Event::wei: return "wei";
    case Event::other: return "other";
  }
  return "other";
}

// Unknown tokens map to `other`.
inline Event event_from_string(const std::string& s) {
  if (s == "cough") return Event::cough;
  if (s == "laugh") return Event::laugh;
  if (s == "wei") return Event::wei;
  return Event::other;
}

struct ManifestEntry {
  std::string utt_id;
  std::string spk_id;
  Event event = Event::other;
  std::string path;
  double duration_s = 0.0;
};

// One TAB-separated entry per line: utt_id spk_id event path duration_s.
// Lines starting with '#' and blank lines are ignored.
inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::not_found, "cannot open manifest " + path);

  std::vector<ManifestEntry> entries;
  std::set<std::string> seen;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;

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
    if (fields.size() != 5)
      fail(Errc::parse_error, path + ":" + std::to_string(lineno) +
                                  ": expected 5 tab-separated fields, got " +
                                  std::to_string(fields.size()));
    ManifestEntry e;
    e.utt_id = fields[0];
    e.spk_id = fields[1];
    e.event = event_from_string(fields[2]);
    e.path = fields[3];
    const std::string& dur = fields[4];
    char* end = nullptr;
    e.duration_s = std::strtod(dur.c_str(), &end);
    if (dur.empty() || end != dur.c_str() + dur.size())
      fail(Errc::parse_error, path + ":" + std::to_string(lineno) +
                                  ": non-numeric duration '" + dur + "'");
    if (e.utt_id.empty())
      fail(Errc::parse_error,
           path + ":" + std::to_string(lineno) + ": empty utt_id");
    if (!seen.insert(e.utt_id).second)
      fail(Errc::duplicate_utt_id,
           path + ":" + std::to_string(lineno) + ": duplicate utt_id '" +
               e.utt_id + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

inline void save_manifest(const std::vector<ManifestEntry>& entries,
                          const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(Errc::io_error, "cannot write manifest " + path);
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof(buf), "%.6f", e.duration_s);
    f << e.utt_id << '\t' << e.spk_id << '\t' << event_name(e.event) << '\t'
      << e.path << '\t' << buf << '\n';
  }
  if (!f) fail(Errc::io_error, "short write to " + path);
}

struct EventStats {
  int n_speakers = 0;
  int n_utts = 0;
  double utts_per_spk = 0.0;
  double avg_dur_s = 0.0;
};

struct CorpusStats {
  EventStats overall;
  std::map<Event, EventStats> per_event;
};

inline std::vector<ManifestEntry> filter_event(
    const std::vector<ManifestEntry>& entries, Event event) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.event == event) out.push_back(e);
  return out;
}

inline CorpusStats manifest_stats(const std::vector<ManifestEntry>& entries) {
  if (entries.empty()) fail(Errc::empty_manifest, "no manifest entries");

  auto tally = [](const std::vector<ManifestEntry>& es) {
    EventStats s;
    std::set<std::string> spks;
    double dur = 0.0;
    for (const auto& e : es) {
      spks.insert(e.spk_id);
      dur += e.duration_s;
    }
    s.n_speakers = static_cast<int>(spks.size());
    s.n_utts = static_cast<int>(es.size());
    s.utts_per_spk = static_cast<double>(s.n_utts) / s.n_speakers;
    s.avg_dur_s = dur / s.n_utts;
    return s;
  };

  CorpusStats stats;
  stats.overall = tally(entries);
  std::set<Event> events;
  for (const auto& e : entries) events.insert(e.event);
  for (Event ev : events) stats.per_event[ev] = tally(filter_event(entries, ev));
  return stats;
}

}  // namespace dvkit
