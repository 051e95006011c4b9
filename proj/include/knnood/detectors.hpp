#pragma once

#include <filesystem>
#include <optional>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "knnood/embed_io.hpp"
#include "knnood/knn_core.hpp"
#include "knnood/scores.hpp"

namespace knnood {

// Logit baselines.

/// Maximum softmax probability per row.
ScoreVector score_msp(const LogitSet& logits);

/// Negative free energy, T * logsumexp(f / T).
ScoreVector score_energy(const LogitSet& logits, double temperature = 1.0);

// Mahalanobis with class centroids and a shared covariance.

class GaussianModel {
public:
    GaussianModel(RowMatrix means, Eigen::MatrixXd covariance, double ridge);

    const RowMatrix& means() const { return means_; }
    /// Shared covariance including the ridge term.
    const Eigen::MatrixXd& covariance() const { return covariance_; }
    double ridge() const { return ridge_; }
    std::size_t classes() const { return static_cast<std::size_t>(means_.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(means_.cols()); }

    /// Squared Mahalanobis distance to class `c`, via triangular solves on the Cholesky factor.
    double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& z, std::size_t c) const;

private:
    RowMatrix means_;
    Eigen::MatrixXd covariance_;
    double ridge_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Default ridge: 1e-6 * trace(scatter) / m.
GaussianModel fit_gaussian(const EmbeddingSet& e, std::optional<double> ridge = std::nullopt);

/// -min_c (z - mu_c)^T Sigma^-1 (z - mu_c).
ScoreVector score_mahalanobis(const GaussianModel& model, const EmbeddingSet& queries);

// Local outlier factor against a fixed reference set.

/**
 * LOF model over a reference point set.
 *
 * Reference points get their k-distance and local reachability density from
 * their k nearest *other* reference points. A query's neighbours are its k
 * nearest reference points. Reachability sums carry a 1e-10 floor so
 * coincident points give finite densities and a LOF of exactly 1.
 */
class LofModel {
public:
    LofModel(RowMatrix reference, int k);

    int k() const { return k_; }
    std::size_t size() const { return static_cast<std::size_t>(reference_.rows()); }

    /// LOF_k of one query point (about 1 for inliers, larger for outliers).
    double lof(const Eigen::Ref<const Eigen::RowVectorXd>& q) const;

private:
    std::vector<std::pair<double, std::size_t>> neighbours(const Eigen::Ref<const Eigen::RowVectorXd>& q,
                                                           std::optional<std::size_t> skip) const;

    RowMatrix reference_;
    int k_;
    std::vector<double> k_distance_;
    std::vector<double> lrd_;
};

inline constexpr int kDefaultLofK = 50;

/// -LOF_k for each query, with the index rows as the reference set.
ScoreVector score_lof(const KnnIndex& index, const EmbeddingSet& queries, int k = kDefaultLofK);
ScoreVector score_lof(const LofModel& model, const EmbeddingSet& queries);

// PCA reconstruction residual.

struct PcaModel {
    Eigen::RowVectorXd mean;
    RowMatrix components;  ///< p x m, orthonormal rows, largest variance first

    std::size_t p() const { return static_cast<std::size_t>(components.rows()); }
};

inline constexpr int kDefaultPcaComponents = 50;

PcaModel fit_pca(const EmbeddingSet& e, int p = kDefaultPcaComponents);

/// -||r - P^T P r||^2 with r = z - mean.
ScoreVector score_pca(const PcaModel& model, const EmbeddingSet& queries);

// MDL1 model container.

void save_model(const GaussianModel& model, const std::filesystem::path& path);
void save_model(const PcaModel& model, const std::filesystem::path& path);

enum class ModelKind { Gaussian, Pca };

ModelKind peek_model_kind(const std::filesystem::path& path);
GaussianModel load_gaussian_model(const std::filesystem::path& path);
PcaModel load_pca_model(const std::filesystem::path& path);

}  // namespace knnood
