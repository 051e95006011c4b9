#include "knnood/evalkit.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "knnood/error.hpp"

namespace knnood {

namespace {

void require_nonempty(std::span<const double> v, const char* what) {
    if (v.empty()) fail(ErrorKind::InvalidArgument, std::string(what) + " scores are empty");
}

void require_finite(std::span<const double> v, const char* what) {
    for (double s : v) {
        if (!std::isfinite(s)) fail(ErrorKind::InvalidArgument, std::string(what) + " scores contain a non-finite value");
    }
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

// Smallest count c with c / n >= target, evaluated exactly as the acceptance test is.
std::size_t required_accepts(std::size_t n, double target) {
    const double nd = static_cast<double>(n);
    auto c = static_cast<std::size_t>(std::ceil(target * nd));
    c = std::min(c, n);
    while (c > 0 && static_cast<double>(c - 1) / nd >= target) --c;
    while (c < n && static_cast<double>(c) / nd < target) ++c;
    return std::max<std::size_t>(c, 1);
}

}  // namespace

double calibrate_lambda(std::span<const double> id_scores, double target_tpr) {
    require_nonempty(id_scores, "ID");
    require_finite(id_scores, "ID");
    if (!(target_tpr > 0.0 && target_tpr <= 1.0)) fail(ErrorKind::InvalidArgument, "target TPR must lie in (0, 1]");
    std::vector<double> sorted(id_scores.begin(), id_scores.end());
    const std::size_t c = required_accepts(sorted.size(), target_tpr);
    // c-th largest score: every lambda above it accepts fewer than c ID samples.
    const auto nth = sorted.begin() + static_cast<std::ptrdiff_t>(c - 1);
    std::nth_element(sorted.begin(), nth, sorted.end(), std::greater<>());
    return *nth;
}

double fpr_at_tpr(std::span<const double> id_scores, std::span<const double> ood_scores, double target_tpr) {
    require_nonempty(ood_scores, "OOD");
    require_finite(ood_scores, "OOD");
    const double lambda = calibrate_lambda(id_scores, target_tpr);
    const auto accepted = std::count_if(ood_scores.begin(), ood_scores.end(), [lambda](double s) { return s >= lambda; });
    return static_cast<double>(accepted) / static_cast<double>(ood_scores.size());
}

double auroc(std::span<const double> id_scores, std::span<const double> ood_scores) {
    require_nonempty(id_scores, "ID");
    require_nonempty(ood_scores, "OOD");
    require_finite(id_scores, "ID");
    require_finite(ood_scores, "OOD");

    struct Entry {
        double score;
        bool is_id;
    };
    std::vector<Entry> all;
    all.reserve(id_scores.size() + ood_scores.size());
    for (double s : id_scores) all.push_back({s, true});
    for (double s : ood_scores) all.push_back({s, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // Sum of 1-based average ranks of the ID entries. Ranks are half-integers, so the sum is exact.
    double id_rank_sum = 0.0;
    std::size_t i = 0;
    while (i < all.size()) {
        std::size_t j = i;
        std::size_t id_in_group = 0;
        while (j < all.size() && all[j].score == all[i].score) {
            id_in_group += all[j].is_id ? 1 : 0;
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
        id_rank_sum += avg_rank * static_cast<double>(id_in_group);
        i = j;
    }
    const auto n1 = static_cast<double>(id_scores.size());
    const auto n2 = static_cast<double>(ood_scores.size());
    const double u = id_rank_sum - n1 * (n1 + 1.0) / 2.0;
    return u / (n1 * n2);
}

EvalReport evaluate(const std::string& detector_tag, std::span<const double> id_scores,
                    const std::vector<NamedScores>& ood_sets, double target_tpr, std::int64_t timing_ns_per_query) {
    if (ood_sets.empty()) fail(ErrorKind::InvalidArgument, "evaluation needs at least one OOD set");
    EvalReport report;
    report.detector_tag = detector_tag;
    report.n_id = id_scores.size();
    report.lambda = calibrate_lambda(id_scores, target_tpr);
    const auto accepted =
        std::count_if(id_scores.begin(), id_scores.end(), [&](double s) { return s >= report.lambda; });
    report.tpr_at_lambda = static_cast<double>(accepted) / static_cast<double>(id_scores.size());
    report.timing_ns_per_query = timing_ns_per_query;
    for (const auto& set : ood_sets) {
        if (report.per_ood_set.count(set.name)) fail(ErrorKind::InvalidArgument, "duplicate OOD set name '" + set.name + "'");
        OodMetrics metrics;
        metrics.fpr95 = fpr_at_tpr(id_scores, set.scores, target_tpr);
        metrics.auroc = auroc(id_scores, set.scores);
        metrics.n_ood = set.scores.size();
        report.per_ood_set.emplace(set.name, metrics);
    }
    return report;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["detector_tag"] = detector_tag;
    j["lambda"] = lambda;
    j["tpr_at_lambda"] = tpr_at_lambda;
    j["n_id"] = n_id;
    j["timing_ns_per_query"] = timing_ns_per_query;
    nlohmann::ordered_json sets = nlohmann::ordered_json::object();
    for (const auto& [name, m] : per_ood_set) {
        sets[name] = {{"fpr95", m.fpr95}, {"auroc", m.auroc}, {"n_ood", m.n_ood}};
    }
    j["per_ood_set"] = std::move(sets);
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::ostringstream out;
    out << "detector,ood_set,fpr95,auroc\n";
    for (const auto& [name, m] : per_ood_set) {
        out << detector_tag << ',' << name << ',' << fmt(m.fpr95) << ',' << fmt(m.auroc) << '\n';
    }
    return out.str();
}

SweepObjective parse_sweep_objective(const std::string& name) {
    if (name == "min_fpr95") return SweepObjective::MinFpr95;
    if (name == "max_auroc") return SweepObjective::MaxAuroc;
    fail(ErrorKind::InvalidArgument, "unknown sweep objective '" + name + "' (expected min_fpr95 or max_auroc)");
}

SweepResult sweep_k(const KnnIndex& index, const EmbeddingSet& id_val, const EmbeddingSet& ood_val,
                    const std::vector<int>& grid, SweepObjective objective, KnnVariant variant, double target_tpr) {
    if (grid.empty()) fail(ErrorKind::InvalidArgument, "k grid is empty");
    for (int k : grid) {
        if (k < 1 || static_cast<std::size_t>(k) > index.size()) {
            fail(ErrorKind::InvalidArgument, "grid value k=" + std::to_string(k) + " out of range [1, " +
                                                 std::to_string(index.size()) + "]");
        }
    }
    const int k_max = *std::max_element(grid.begin(), grid.end());
    const auto id_d = batch_nearest_distances(index, id_val, k_max);
    const auto ood_d = batch_nearest_distances(index, ood_val, k_max);
    const auto kk = static_cast<std::size_t>(k_max);

    auto scores_for = [&](const std::vector<double>& dists, std::size_t rows, int k) {
        std::vector<double> s(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* row = dists.data() + i * kk;
            s[i] = variant == KnnVariant::Kth
                       ? -row[k - 1]
                       : -std::accumulate(row, row + k, 0.0) / static_cast<double>(k);
        }
        return s;
    };

    SweepResult result;
    result.grid = grid;
    std::size_t best = 0;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        const auto id_s = scores_for(id_d, id_val.rows(), grid[g]);
        const auto ood_s = scores_for(ood_d, ood_val.rows(), grid[g]);
        OodMetrics m;
        m.fpr95 = fpr_at_tpr(id_s, ood_s, target_tpr);
        m.auroc = auroc(id_s, ood_s);
        m.n_ood = ood_s.size();
        result.metric_per_k.push_back(m);
        if (g == 0) continue;
        const auto& cur = result.metric_per_k[g];
        const auto& top = result.metric_per_k[best];
        const bool better = objective == SweepObjective::MinFpr95 ? cur.fpr95 < top.fpr95 : cur.auroc > top.auroc;
        const bool tie = objective == SweepObjective::MinFpr95 ? cur.fpr95 == top.fpr95 : cur.auroc == top.auroc;
        if (better || (tie && grid[g] < grid[best])) best = g;
    }
    result.chosen_k = grid[best];
    return result;
}

std::string SweepResult::to_csv() const {
    std::ostringstream out;
    out << "k,fpr95,auroc,chosen\n";
    for (std::size_t g = 0; g < grid.size(); ++g) {
        out << grid[g] << ',' << fmt(metric_per_k[g].fpr95) << ',' << fmt(metric_per_k[g].auroc) << ','
            << (grid[g] == chosen_k ? 1 : 0) << '\n';
    }
    return out.str();
}

std::vector<HistogramBin> histogram(std::span<const double> values, std::size_t bins, double lo, double hi) {
    if (bins == 0) fail(ErrorKind::InvalidArgument, "histogram needs at least one bin");
    if (!(hi >= lo)) fail(ErrorKind::InvalidArgument, "histogram range is inverted");
    std::vector<HistogramBin> out(bins);
    const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
    for (std::size_t b = 0; b < bins; ++b) out[b].left = lo + width * static_cast<double>(b);
    for (double v : values) {
        if (v < lo || v > hi) continue;
        auto b = static_cast<std::size_t>((v - lo) / width);
        ++out[std::min(b, bins - 1)].count;
    }
    return out;
}

std::string histogram_csv(const std::vector<HistogramBin>& bins) {
    std::ostringstream out;
    out << "bin_left,count\n";
    for (const auto& b : bins) out << fmt(b.left) << ',' << b.count << '\n';
    return out.str();
}

}  // namespace knnood
