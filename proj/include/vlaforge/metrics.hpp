#pragma once

#include <string>
#include <utility>
#include <vector>

namespace vlaforge::evalkit {

// Mann-Whitney statistic: P(score_fake > score_real) + 0.5 P(tie).
// labels are 1 (fake, positive) or 0. Throws MetricError unless both classes occur.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);
double auroc(const std::vector<std::pair<double, int>>& scored);

// Mean of a video's frame scores. Throws MetricError on an empty list.
double video_score(const std::vector<double>& frame_scores);

struct VideoAggregate {
  std::vector<std::string> video_ids;  // first-appearance order
  std::vector<double> scores;
  std::vector<int> labels;
};

// Groups frames by video id. Frames of one video must share a label.
VideoAggregate aggregate_videos(const std::vector<double>& frame_scores, const std::vector<int>& labels,
                                const std::vector<std::string>& video_ids);

}  // namespace vlaforge::evalkit
