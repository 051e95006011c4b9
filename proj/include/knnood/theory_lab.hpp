#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace knnood {

/// Parameters of the contaminated test distribution and the kNN density estimator.
struct ContaminationSetup {
    double epsilon = 0.5;  ///< OOD fraction in (0, 1)
    double beta = 0.5;     ///< posterior threshold in (0, 1)
    double c_b = 1.0;      ///< small-cap volume constant
    double c0_hat = 1.0;   ///< OOD density plateau
    int m = 3;             ///< ambient dimension
    std::int64_t n = 1;    ///< ID sample count
    std::int64_t k = 1;

    void validate() const;
};

struct DensityEstimate {
    double p_in_hat = 0.0;
    double r_k = 0.0;
    std::int64_t k = 0;
    std::int64_t n = 0;
};

/// k / (c_b n r_k^(m-1)). Throws for r_k <= 0.
DensityEstimate estimate_density(const ContaminationSetup& setup, double r_k);

/// Same estimate, but r_k == 0 (a duplicated training point) maps to +infinity.
DensityEstimate estimate_density_or_infinite(const ContaminationSetup& setup, double r_k);

/// ID-density level below which the OOD plateau switches on: beta eps c0 / ((1-beta)(1-eps)).
double plateau_threshold(const ContaminationSetup& setup);

/// Plateau OOD density estimate: c0_hat if p_in_hat is below the plateau threshold, else 0.
double estimate_ood_density(const ContaminationSetup& setup, double p_in_hat);

/// Empirical ID posterior (1-eps) p_in / ((1-eps) p_in + eps p_out).
double posterior_id(const ContaminationSetup& setup, double p_in_hat);

/// Closed-form threshold on -r_k matching the posterior rule at level beta.
double posterior_lambda(const ContaminationSetup& setup);

struct IdentityCheck {
    bool pass = true;
    std::size_t checked = 0;
    std::size_t skipped_zero = 0;
    /// First r_k where the two indicators disagree.
    std::optional<double> counterexample;
    bool distance_indicator = false;
    bool posterior_indicator = false;

    std::string summary() const;
};

/**
 * Checks 1{-r_k >= lambda} == 1{posterior >= beta} for every sample.
 *
 * Both sides are evaluated through the public functions above. `lambda_offset`
 * shifts the distance-side threshold (negative control). Samples equal to zero
 * are skipped and counted.
 */
IdentityCheck verify_posterior_identity(const ContaminationSetup& setup, std::span<const double> r_k_samples,
                              double lambda_offset = 0.0);

/// Test radii for the identity check: log-uniform on [1e-6, 2], bands within
/// 1e-3 and 1e-7 (relative) of the boundary, and the boundary itself.
std::vector<double> verification_radii(const ContaminationSetup& setup, std::size_t count, std::uint64_t seed);

/// Volume of the unit ball in R^d (the small-cap constant on S^d is this with d = m - 1).
double unit_ball_volume(int d);

/// Surface measure of the unit sphere S^(m-1) in R^m.
double sphere_area(int m);

/// A density on the unit sphere with a sampler and an analytic value.
struct SphereDensity {
    std::string name;
    int m = 2;
    std::function<Eigen::MatrixXd(std::size_t n, std::uint64_t seed)> sample;  // n x m, unit rows
    std::function<double(const Eigen::Ref<const Eigen::RowVectorXd>&)> density;
};

SphereDensity uniform_sphere_density(int m);
SphereDensity vmf_sphere_density(const Eigen::VectorXd& mu, double kappa);

struct ConvergenceRow {
    std::size_t n = 0;
    std::int64_t k = 0;
    double mean_abs_error = 0.0;
};

struct ConvergenceConfig {
    std::vector<std::size_t> n_grid = {1000, 10000, 100000};
    /// Maps n to k; defaults to ceil(sqrt(n)).
    std::function<std::int64_t(std::size_t)> k_rule;
    std::size_t eval_points = 200;
    /// Small-cap constant; defaults to unit_ball_volume(m - 1).
    std::optional<double> c_b;
    /// Divides both true and estimated densities (a change of length unit).
    double density_unit_scale = 1.0;
};

std::int64_t sqrt_k_rule(std::size_t n);

/// Fixed quasi-uniform evaluation points on S^(m-1).
Eigen::MatrixXd evaluation_points(int m, std::size_t count);

std::vector<ConvergenceRow> convergence_experiment(const SphereDensity& density, const ConvergenceConfig& config,
                                                   std::uint64_t seed);

std::string convergence_csv(const std::vector<ConvergenceRow>& rows);

}  // namespace knnood
