#include "tut/loss.hpp"

#include <algorithm>
#include <cctype>

namespace tut {

BoundarySet derive_boundaries(std::span<const int> labels) {
  BoundarySet b;
  const auto T = static_cast<Index>(labels.size());
  for (Index t = 0; t < T; ++t) {
    const auto i = static_cast<std::size_t>(t);
    if (t == 0 || labels[i] != labels[i - 1]) b.starts.push_back(t);
    if (t == T - 1 || labels[i] != labels[i + 1]) b.ends.push_back(t);
  }
  return b;
}

std::vector<double> prior(PriorVariant variant, Index window) {
  if (window < 3 || window % 2 == 0) throw ConfigError("prior: window must be odd and >= 3");
  const Index r = window / 2;
  std::vector<double> p(static_cast<std::size_t>(window), 0.0);
  // Start: Sgn(j−i)+1 is 2 for offsets >= 0; End: −Sgn(j−i)+1 is 2 for offsets < 0.
  for (Index slot = 0; slot < window; ++slot) {
    const Index offset = slot - r;
    const bool on = variant == PriorVariant::Start ? offset >= 0 : offset < 0;
    if (on) p[static_cast<std::size_t>(slot)] = 1.0;
  }
  const double mass = variant == PriorVariant::Start ? static_cast<double>(r + 1) : static_cast<double>(r);
  for (double& v : p) v /= mass;
  return p;
}

MappedBoundaries map_boundaries(const BoundarySet& b, Index video_length, Index record_length, Index window) {
  const Index r = window / 2;
  auto map = [&](const std::vector<Index>& frames) {
    std::vector<Index> out;
    for (Index t : frames) {
      const Index m = map_to_resolution(t, video_length, record_length);
      if (m < r || m > record_length - 1 - r) continue;
      if (out.empty() || out.back() != m) out.push_back(m);
    }
    return out;
  };
  return {map(b.starts), map(b.ends)};
}

std::string to_string(BaDistance d) {
  switch (d) {
    case BaDistance::KL: return "KL";
    case BaDistance::JS: return "JS";
    case BaDistance::L2: return "L2";
    case BaDistance::Wasserstein: return "Wasserstein";
  }
  return "?";
}

BaDistance parse_ba_distance(const std::string& s) {
  std::string v = s;
  std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "kl") return BaDistance::KL;
  if (v == "js") return BaDistance::JS;
  if (v == "l2") return BaDistance::L2;
  if (v == "wasserstein" || v == "w1") return BaDistance::Wasserstein;
  throw ConfigError("unknown boundary distance: " + s);
}

}  // namespace tut
