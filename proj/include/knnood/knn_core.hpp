#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "knnood/embed_io.hpp"
#include "knnood/scores.hpp"

namespace knnood {

struct NeighborQueryResult {
    double r_k = 0.0;    ///< k-th smallest Euclidean distance
    double r_avg = 0.0;  ///< mean of the k smallest distances
    int k_used = 0;
};

struct QueryOptions {
    /// Drop one zero distance per query (leave-one-out scoring of indexed points).
    bool exclude_self_distance_zero = false;
};

enum class KnnVariant { Kth, Kavg };

/// Number of neighbours after subsampling: max(1, round(base_k * alpha)).
int scaled_k(int base_k, double alpha);

/**
 * Exact flat Euclidean index over unit-norm training embeddings.
 *
 * The stored rows are a seeded subsample (without replacement) of the input
 * set, kept in their original relative order. Queries compare against every
 * stored row; there is no approximation.
 */
class KnnIndex {
public:
    static KnnIndex build(const EmbeddingSet& normalized, double alpha, int base_k, std::uint64_t seed);

    /// Same index over raw rows, without the unit-norm contract on rows or
    /// queries. Only for ablations; it cannot be saved.
    static KnnIndex build_unnormalized(const EmbeddingSet& raw, double alpha, int base_k, std::uint64_t seed);

    const RowMatrix& vectors() const { return vectors_; }
    std::size_t size() const { return static_cast<std::size_t>(vectors_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
    double sample_ratio() const { return alpha_; }
    int base_k() const { return base_k_; }
    int effective_k() const { return effective_k_; }
    std::uint64_t seed() const { return seed_; }
    bool unit_rows() const { return unit_rows_; }
    /// Row indices of the source set that were retained, ascending.
    const std::vector<std::size_t>& retained_rows() const { return retained_; }

    NeighborQueryResult query(std::span<const double> z, int k, const QueryOptions& opts = {}) const;

    /// The k smallest distances to `z`, ascending.
    std::vector<double> nearest_distances(std::span<const double> z, int k, const QueryOptions& opts = {}) const;

    /// Throws unless `z` has the index dimension, unit norm, and 1 <= k <= available rows.
    void validate_query(std::span<const double> z, int k, const QueryOptions& opts = {}) const;

    void save(const std::filesystem::path& path) const;
    static KnnIndex load(const std::filesystem::path& path);

private:
    static KnnIndex build_rows(const EmbeddingSet& e, double alpha, int base_k, std::uint64_t seed, bool unit_rows);

    RowMatrix vectors_;
    double alpha_ = 1.0;
    int base_k_ = 1;
    int effective_k_ = 1;
    std::uint64_t seed_ = 0;
    bool unit_rows_ = true;
    std::vector<std::size_t> retained_;
    std::vector<double> panels_;  // vectors_ re-laid out for blocked scanning

    friend std::vector<double> batch_nearest_distances(const KnnIndex&, const EmbeddingSet&, int,
                                                       const QueryOptions&, unsigned);
};

/// Scores each query row as the negated k-th (or k-avg) neighbour distance.
/// `threads == 0` uses the hardware concurrency; results do not depend on it.
ScoreVector score_knn(const KnnIndex& index, const EmbeddingSet& queries, int k, KnnVariant variant,
                      const QueryOptions& opts = {}, unsigned threads = 0);

/// Sorted k_max nearest distances for every query row (row-major, k_max per row).
std::vector<double> batch_nearest_distances(const KnnIndex& index, const EmbeddingSet& queries, int k_max,
                                            const QueryOptions& opts = {}, unsigned threads = 0);

enum class Decision : std::uint8_t { Ood = 0, Id = 1 };

/// ID iff score >= lambda.
std::vector<Decision> decide(const ScoreVector& scores, double lambda);

}  // namespace knnood
