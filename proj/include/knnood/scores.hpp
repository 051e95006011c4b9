#pragma once

#include <string>
#include <vector>

namespace knnood {

/// Per-sample detector output. Higher means more in-distribution.
struct ScoreVector {
    std::vector<double> scores;
    std::string detector_tag;

    std::size_t size() const { return scores.size(); }
};

}  // namespace knnood
