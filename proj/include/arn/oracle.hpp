#pragma once

// Independent reference for CMC and mAP. Shares no code with rank/cmc/mAP:
// each relevant item's rank is found by counting the valid items that beat it.

#include <algorithm>
#include <vector>

#include "arn/evaluator.hpp"

namespace arn {

struct OracleResult {
  std::vector<double> cmc;
  double mAP = 0.0;
  int num_scored = 0;
};

inline OracleResult brute_force_oracle(const EmbeddingSet& queries, const EmbeddingSet& gallery, Protocol protocol,
                                       int max_rank) {
  OracleResult out;
  out.cmc.assign(static_cast<std::size_t>(max_rank), 0.0);

  bool single_camera = true;
  int cam0 = 0;
  bool have_cam = false;
  for (const auto* set : {&queries, &gallery})
    for (int c : set->cameras) {
      if (!have_cam) {
        cam0 = c;
        have_cam = true;
      }
      if (c != cam0) single_camera = false;
    }
  const bool cross = protocol == Protocol::CrossCamera && !single_camera;

  const auto d = static_cast<std::size_t>(queries.vectors.cols());
  double ap_sum = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::vector<double> sim(gallery.size(), 0.0);
    std::vector<bool> valid(gallery.size(), true);
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      const double* a = queries.vectors.row(static_cast<Eigen::Index>(q)).data();
      const double* b = gallery.vectors.row(static_cast<Eigen::Index>(g)).data();
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += a[k] * b[k];
      sim[g] = s;
      if (cross && gallery.identities[g] == queries.identities[q] && gallery.cameras[g] == queries.cameras[q])
        valid[g] = false;
    }
    // 1-based position of every relevant valid item.
    std::vector<int> positions;
    for (std::size_t g = 0; g < gallery.size(); ++g) {
      if (!valid[g] || gallery.identities[g] != queries.identities[q]) continue;
      int pos = 1;
      for (std::size_t h = 0; h < gallery.size(); ++h)
        if (valid[h] && h != g && (sim[h] > sim[g] || (sim[h] == sim[g] && h < g))) ++pos;
      positions.push_back(pos);
    }
    if (positions.empty()) continue;
    ++out.num_scored;
    const int first = *std::min_element(positions.begin(), positions.end());
    for (int k = 1; k <= max_rank; ++k)
      if (first <= k) out.cmc[static_cast<std::size_t>(k - 1)] += 1.0;
    double ap = 0.0;
    for (int p : positions) {
      int hits = 0;
      for (int r : positions)
        if (r <= p) ++hits;
      ap += static_cast<double>(hits) / p;
    }
    ap_sum += ap / static_cast<double>(positions.size());
  }
  if (out.num_scored > 0) {
    for (double& v : out.cmc) v /= out.num_scored;
    out.mAP = ap_sum / out.num_scored;
  }
  return out;
}

}  // namespace arn
