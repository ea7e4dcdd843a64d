#include "vlaforge/metrics.hpp"

#include "vlaforge/errors.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_map>

namespace vlaforge::evalkit {

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw MetricError("auroc: scores and labels differ in length");
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] < scores[b]; });

  // Midranks of tied groups, summed over positives.
  double positive_rank_sum = 0;
  size_t positives = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (size_t k = i; k < j; ++k) {
      const int y = labels[order[k]];
      if (y != 0 && y != 1) throw MetricError("auroc: labels must be 0 or 1");
      if (y == 1) {
        positive_rank_sum += midrank;
        ++positives;
      }
    }
    i = j;
  }
  const size_t negatives = scores.size() - positives;
  if (positives == 0 || negatives == 0) {
    throw MetricError("auroc is undefined without both positive and negative samples");
  }
  const double p = static_cast<double>(positives);
  const double u = positive_rank_sum - p * (p + 1) / 2;
  return u / (p * static_cast<double>(negatives));
}

double auroc(const std::vector<std::pair<double, int>>& scored) {
  std::vector<double> s;
  std::vector<int> y;
  for (const auto& [score, label] : scored) {
    s.push_back(score);
    y.push_back(label);
  }
  return auroc(s, y);
}

double video_score(const std::vector<double>& frame_scores) {
  if (frame_scores.empty()) throw MetricError("video_score needs at least one frame");
  return std::accumulate(frame_scores.begin(), frame_scores.end(), 0.0) / static_cast<double>(frame_scores.size());
}

VideoAggregate aggregate_videos(const std::vector<double>& frame_scores, const std::vector<int>& labels,
                                const std::vector<std::string>& video_ids) {
  if (frame_scores.size() != labels.size() || labels.size() != video_ids.size()) {
    throw MetricError("aggregate_videos: inputs differ in length");
  }
  VideoAggregate out;
  std::unordered_map<std::string, size_t> index;
  std::vector<std::vector<double>> grouped;
  for (size_t i = 0; i < video_ids.size(); ++i) {
    auto [it, inserted] = index.emplace(video_ids[i], out.video_ids.size());
    if (inserted) {
      out.video_ids.push_back(video_ids[i]);
      out.labels.push_back(labels[i]);
      grouped.emplace_back();
    } else if (out.labels[it->second] != labels[i]) {
      throw MetricError("video '" + video_ids[i] + "' mixes labels");
    }
    grouped[it->second].push_back(frame_scores[i]);
  }
  for (const auto& g : grouped) out.scores.push_back(video_score(g));
  return out;
}

}  // namespace vlaforge::evalkit
