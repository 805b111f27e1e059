#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dvkit/common.hpp"
#include "dvkit/ctdnn.hpp"

namespace dvkit {

namespace detail {

inline std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::vector<int> split_ints(const std::string& s) {
  std::vector<int> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t comma = s.find(',', start);
    std::string tok = comma == std::string::npos ? s.substr(start)
                                                 : s.substr(start, comma - start);
    if (tok.empty()) fail(Errc::parse_error, "empty integer in list");
    char* end = nullptr;
    long v = std::strtol(tok.c_str(), &end, 10);
    if (end != tok.c_str() + tok.size())
      fail(Errc::parse_error, "bad integer '" + tok + "'");
    out.push_back(static_cast<int>(v));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace detail

// Text format, version tag CTDNN1: config key=value lines, then per tensor a
// `tensor <name> <extents...>` line followed by its values as hexadecimal
// floats (bit-exact round trips), then `end`.
inline void save_params(const CtDnnParams& p, const std::string& path) {
  std::ofstream f(path);
  if (!f) fail(Errc::io_error, "cannot write " + path);
  const CtDnnConfig& c = p.config;
  f << "CTDNN1\n";
  f << "input_mels=" << c.input_mels << '\n';
  f << "splice_left=" << c.splice.left << '\n';
  f << "splice_right=" << c.splice.right << '\n';
  f << "conv1_maps=" << c.conv1.maps << '\n';
  f << "conv1_patch_time=" << c.conv1.patch_time << '\n';
  f << "conv1_patch_freq=" << c.conv1.patch_freq << '\n';
  f << "conv1_pool_freq=" << c.conv1.pool_freq << '\n';
  f << "conv2_maps=" << c.conv2.maps << '\n';
  f << "conv2_patch_time=" << c.conv2.patch_time << '\n';
  f << "conv2_patch_freq=" << c.conv2.patch_freq << '\n';
  f << "conv2_pool_freq=" << c.conv2.pool_freq << '\n';
  f << "bottleneck_dim=" << c.bottleneck_dim << '\n';
  f << "td1_offsets=" << detail::join_ints(c.td1_offsets) << '\n';
  f << "td2_offsets=" << detail::join_ints(c.td2_offsets) << '\n';
  f << "td_affine_dim=" << c.td_affine_dim << '\n';
  f << "pnorm_p=" << c.pnorm_p << '\n';
  f << "pnorm_group=" << c.pnorm_group << '\n';
  f << "feature_dim=" << c.feature_dim << '\n';
  f << "n_speakers=" << c.n_speakers << '\n';

  char buf[40];
  for_each_tensor(p, [&](const char* name, const Tensor& t) {
    f << "tensor " << name;
    for (int e : t.shape) f << ' ' << e;
    f << '\n';
    for (std::size_t i = 0; i < t.v.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%a", t.v[i]);
      f << buf << ((i + 1) % 8 == 0 || i + 1 == t.v.size() ? '\n' : ' ');
    }
  });
  f << "end\n";
  if (!f) fail(Errc::io_error, "short write to " + path);
}

inline CtDnnParams load_params(const std::string& path) {
  std::ifstream f(path);
  if (!f) fail(Errc::io_error, "cannot open " + path);
  std::string line;
  if (!std::getline(f, line)) fail(Errc::io_error, path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "CTDNN1")
    fail(Errc::version_mismatch, path + ": expected CTDNN1, got '" + line + "'");

  std::map<std::string, std::string> kv;
  std::streampos tensor_start;
  while (true) {
    tensor_start = f.tellg();
    if (!std::getline(f, line)) fail(Errc::corrupt_tensor, path + ": no tensors");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("tensor ", 0) == 0) break;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(Errc::corrupt_tensor, path + ": bad config line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }

  auto get_int = [&](const std::string& key) {
    auto it = kv.find(key);
    if (it == kv.end())
      fail(Errc::corrupt_tensor, path + ": missing config key " + key);
    return static_cast<int>(std::strtol(it->second.c_str(), nullptr, 10));
  };
  CtDnnConfig c;
  c.input_mels = get_int("input_mels");
  c.splice.left = get_int("splice_left");
  c.splice.right = get_int("splice_right");
  c.conv1 = {get_int("conv1_maps"), get_int("conv1_patch_time"),
             get_int("conv1_patch_freq"), get_int("conv1_pool_freq")};
  c.conv2 = {get_int("conv2_maps"), get_int("conv2_patch_time"),
             get_int("conv2_patch_freq"), get_int("conv2_pool_freq")};
  c.bottleneck_dim = get_int("bottleneck_dim");
  c.td1_offsets = detail::split_ints(kv["td1_offsets"]);
  c.td2_offsets = detail::split_ints(kv["td2_offsets"]);
  c.td_affine_dim = get_int("td_affine_dim");
  c.pnorm_p = get_int("pnorm_p");
  c.pnorm_group = get_int("pnorm_group");
  c.feature_dim = get_int("feature_dim");
  c.n_speakers = get_int("n_speakers");

  CtDnnParams p = make_params(c);
  f.seekg(tensor_start);

  for_each_tensor(p, [&](const char* name, Tensor& t) {
    if (!std::getline(f, line))
      fail(Errc::corrupt_tensor, path + ": missing tensor " + std::string(name));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream hs(line);
    std::string kw, got;
    hs >> kw >> got;
    if (kw != "tensor" || got != name)
      fail(Errc::corrupt_tensor,
           path + ": expected tensor " + std::string(name) + ", got '" + line + "'");
    std::vector<int> shape;
    int e;
    while (hs >> e) shape.push_back(e);
    if (shape != t.shape)
      fail(Errc::corrupt_tensor,
           path + ": tensor " + std::string(name) + " shape mismatch");

    std::size_t got_n = 0;
    while (got_n < t.numel()) {
      if (!std::getline(f, line))
        fail(Errc::corrupt_tensor,
             path + ": tensor " + std::string(name) + " truncated");
      const char* s = line.c_str();
      char* end = nullptr;
      while (*s) {
        double v = std::strtod(s, &end);
        if (end == s) break;
        if (got_n >= t.numel())
          fail(Errc::corrupt_tensor,
               path + ": tensor " + std::string(name) + " has extra values");
        t.v[got_n++] = v;
        s = end;
      }
    }
  });

  if (!std::getline(f, line) || (line != "end" && line != "end\r"))
    fail(Errc::corrupt_tensor, path + ": missing end marker");
  return p;
}

}  // namespace dvkit
