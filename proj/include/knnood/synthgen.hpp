#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "knnood/embed_io.hpp"

namespace knnood {

/// Seeded generator for one named stream of a dataset; streams are independent.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

/// n points uniform on S^(m-1).
RowMatrix sample_uniform_sphere(int m, std::size_t n, std::mt19937_64& rng);

/// n draws from vMF(mu, kappa) by rejection on the radial component plus a uniform tangent direction.
RowMatrix sample_vmf(const Eigen::VectorXd& mu, double kappa, std::size_t n, std::mt19937_64& rng);

/// log of the vMF normalizing constant C_m(kappa); kappa = 0 gives the uniform density.
double vmf_log_normalizer(int m, double kappa);

double vmf_log_density(const Eigen::Ref<const Eigen::RowVectorXd>& z, const Eigen::VectorXd& mu, double kappa);

/// Mean of <z, mu> under vMF(mu, kappa) on S^2: coth(kappa) - 1/kappa.
double vmf_mean_resultant_s2(double kappa);

struct VmfComponent {
    Eigen::VectorXd mu;
    double kappa = 0.0;
    std::uint32_t class_id = 0;
};

enum class OodKind { UniformSphere, PlateauOutsideId };

struct NormDisparity {
    double id_lo = 5.0, id_hi = 10.0;
    double ood_lo = 0.5, ood_hi = 1.0;
};

/**
 * Synthetic benchmark description.
 *
 * ID points come from an equal-weight mixture of vMF components; several
 * components may share a class id. OOD points are uniform on the sphere, or
 * uniform restricted to where the analytic ID density is below a cutoff c1.
 */
struct SyntheticSpec {
    int m = 8;
    std::vector<VmfComponent> components;
    double epsilon = 0.1;
    std::size_t n_id = 1000;
    std::size_t n_ood = 1000;
    OodKind ood_kind = OodKind::UniformSphere;
    /// Explicit plateau cutoff c1; otherwise the `plateau_quantile` of ID densities.
    std::optional<double> plateau_c1;
    double plateau_quantile = 0.5;
    std::optional<NormDisparity> norm_disparity;
    /// When set, benchmarks carry logits equal to this scale times log class posteriors.
    std::optional<double> logit_scale;
    std::uint64_t seed = 0;

    std::size_t classes() const;
    void validate() const;
};

/// Analytic ID mixture density at a unit vector.
double mixture_density(const SyntheticSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& z);

/// Resolved plateau cutoff c1 for the spec.
double plateau_cutoff(const SyntheticSpec& spec);

EmbeddingSet sample_id(const SyntheticSpec& spec);
EmbeddingSet sample_ood(const SyntheticSpec& spec);

/// n draws from eps * P_out + (1 - eps) * P_in; labels are 1 for ID and 0 for OOD.
EmbeddingSet sample_contaminated(const SyntheticSpec& spec, std::size_t n);

/// scale * log p(class | direction of z) for every row.
LogitSet class_posterior_logits(const SyntheticSpec& spec, const EmbeddingSet& points, double scale);

struct Benchmark {
    EmbeddingSet id_train;
    EmbeddingSet id_test;
    EmbeddingSet ood_test;
    std::optional<LogitSet> id_test_logits;
    std::optional<LogitSet> ood_test_logits;
};

/// Deterministic 80/20 train/test split of the ID draw plus the OOD draw.
/// With a norm disparity the sets are raw (rescaled rows, normalized = false).
Benchmark make_benchmark(const SyntheticSpec& spec);

/// Text manifest (key = value lines) recording every parameter and the seed.
std::string write_manifest(const SyntheticSpec& spec);
SyntheticSpec parse_manifest(const std::string& text);

/// Four well-separated classes in R^8 against uniform OOD.
SyntheticSpec standard_benchmark_spec(std::uint64_t seed, std::size_t n_id = 100000, std::size_t n_ood = 10000);

/// Each class is two vMF lobes, so class means fall between the data.
SyntheticSpec non_gaussian_spec(std::uint64_t seed);

/// Raw features where ID norms exceed OOD norms and directions overlap.
SyntheticSpec norm_disparity_spec(std::uint64_t seed);

}  // namespace knnood
