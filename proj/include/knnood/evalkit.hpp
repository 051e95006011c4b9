#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "knnood/embed_io.hpp"
#include "knnood/knn_core.hpp"
#include "knnood/scores.hpp"

namespace knnood {

/// Largest lambda with fraction{score >= lambda} >= target_tpr.
double calibrate_lambda(std::span<const double> id_scores, double target_tpr = 0.95);

/// Fraction of OOD scores at or above the lambda calibrated on the ID scores.
double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double target_tpr = 0.95);

/// P(id > ood) + 0.5 P(id == ood), computed from average ranks.
double auroc(std::span<const double> id_scores, std::span<const double> ood_scores);

struct OodMetrics {
    double fpr95 = 0.0;
    double auroc = 0.0;
    std::size_t n_ood = 0;
};

struct EvalReport {
    std::string detector_tag;
    double lambda = 0.0;
    double tpr_at_lambda = 0.0;
    std::map<std::string, OodMetrics> per_ood_set;
    std::size_t n_id = 0;
    std::int64_t timing_ns_per_query = 0;

    std::string to_json() const;
    /// Header plus one `detector,ood_set,fpr95,auroc` row per OOD set.
    std::string to_csv() const;
};

struct NamedScores {
    std::string name;
    std::vector<double> scores;
};

EvalReport evaluate(const std::string& detector_tag, std::span<const double> id_scores,
                    const std::vector<NamedScores>& ood_sets, double target_tpr = 0.95,
                    std::int64_t timing_ns_per_query = 0);

enum class SweepObjective { MinFpr95, MaxAuroc };

SweepObjective parse_sweep_objective(const std::string& name);

struct SweepResult {
    std::vector<int> grid;
    std::vector<OodMetrics> metric_per_k;
    int chosen_k = 0;

    std::string to_csv() const;
};

/// The k grid used for validation-based k selection.
inline const std::vector<int> kDefaultKGrid = {1, 10, 20, 50, 100, 200, 500, 1000, 3000, 5000};

SweepResult sweep_k(const KnnIndex& index, const EmbeddingSet& id_val, const EmbeddingSet& ood_val,
                    const std::vector<int>& grid, SweepObjective objective = SweepObjective::MinFpr95,
                    KnnVariant variant = KnnVariant::Kth, double target_tpr = 0.95);

struct HistogramBin {
    double left = 0.0;
    std::size_t count = 0;
};

/// Equal-width histogram over [lo, hi]; the last bin is closed on the right.
std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t bins, double lo, double hi);
std::string histogram_csv(const std::vector<HistogramBin>& bins);

}  // namespace knnood
