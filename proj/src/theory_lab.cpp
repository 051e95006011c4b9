#include "knnood/theory_lab.hpp"

#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

#include "knnood/error.hpp"
#include "knnood/knn_core.hpp"
#include "knnood/synthgen.hpp"

namespace knnood {

namespace {

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

void ContaminationSetup::validate() const {
    if (!(epsilon > 0.0 && epsilon < 1.0)) fail(ErrorKind::InvalidArgument, "epsilon must lie in (0, 1)");
    if (!(beta > 0.0 && beta < 1.0)) fail(ErrorKind::InvalidArgument, "beta must lie in (0, 1)");
    if (!(c_b > 0.0) || !std::isfinite(c_b)) fail(ErrorKind::InvalidArgument, "c_b must be positive");
    if (!(c0_hat > 0.0) || !std::isfinite(c0_hat)) fail(ErrorKind::InvalidArgument, "c0_hat must be positive");
    if (m < 2) fail(ErrorKind::InvalidArgument, "dimension m must be >= 2");
    if (n < 1) fail(ErrorKind::InvalidArgument, "n must be >= 1");
    if (k < 1 || k > n) fail(ErrorKind::InvalidArgument, "k must lie in [1, n]");
}

DensityEstimate estimate_density(const ContaminationSetup& setup, double r_k) {
    setup.validate();
    if (!(r_k > 0.0) || !std::isfinite(r_k)) {
        fail(ErrorKind::InvalidArgument, "density estimate needs a positive finite r_k, got " + fmt(r_k));
    }
    DensityEstimate d;
    d.r_k = r_k;
    d.k = setup.k;
    d.n = setup.n;
    d.p_in_hat = static_cast<double>(setup.k) /
                 (setup.c_b * static_cast<double>(setup.n) * std::pow(r_k, setup.m - 1));
    return d;
}

DensityEstimate estimate_density_or_infinite(const ContaminationSetup& setup, double r_k) {
    if (r_k == 0.0) {
        setup.validate();
        return {std::numeric_limits<double>::infinity(), 0.0, setup.k, setup.n};
    }
    return estimate_density(setup, r_k);
}

double plateau_threshold(const ContaminationSetup& setup) {
    return setup.beta * setup.epsilon * setup.c0_hat / ((1.0 - setup.beta) * (1.0 - setup.epsilon));
}

double estimate_ood_density(const ContaminationSetup& setup, double p_in_hat) {
    return p_in_hat < plateau_threshold(setup) ? setup.c0_hat : 0.0;
}

double posterior_id(const ContaminationSetup& setup, double p_in_hat) {
    setup.validate();
    if (!(p_in_hat >= 0.0)) fail(ErrorKind::InvalidArgument, "ID density estimate must be non-negative");
    const double p_out = estimate_ood_density(setup, p_in_hat);
    if (p_out == 0.0) {
        if (p_in_hat > 0.0) return 1.0;
        fail(ErrorKind::Numeric, "posterior undefined: both density estimates are zero");
    }
    const double id_mass = (1.0 - setup.epsilon) * p_in_hat;
    return id_mass / (id_mass + setup.epsilon * p_out);
}

double posterior_lambda(const ContaminationSetup& setup) {
    setup.validate();
    const double ratio = (1.0 - setup.beta) * (1.0 - setup.epsilon) * static_cast<double>(setup.k) /
                         (setup.beta * setup.epsilon * setup.c_b * static_cast<double>(setup.n) * setup.c0_hat);
    double r = std::pow(ratio, 1.0 / (setup.m - 1));

    // The closed form can land an ulp or two on the wrong side of the boundary
    // the posterior chain actually computes. Snap r to the largest radius the
    // chain still accepts so both indicators agree at r = -lambda exactly.
    auto accepts = [&](double radius) {
        return radius > 0.0 && std::isfinite(radius) &&
               posterior_id(setup, estimate_density(setup, radius).p_in_hat) >= setup.beta;
    };
    constexpr int kMaxSteps = 64;
    for (int i = 0; i < kMaxSteps && r > 0.0 && !accepts(r); ++i) r = std::nextafter(r, 0.0);
    for (int i = 0; i < kMaxSteps && accepts(std::nextafter(r, std::numeric_limits<double>::infinity())); ++i) {
        r = std::nextafter(r, std::numeric_limits<double>::infinity());
    }
    return -r;
}

std::string IdentityCheck::summary() const {
    std::ostringstream out;
    if (pass) {
        out << "PASS checked=" << checked << " skipped_zero=" << skipped_zero;
    } else {
        out << "FAIL checked=" << checked << " counterexample_r_k=" << fmt(*counterexample)
            << " distance_indicator=" << distance_indicator << " posterior_indicator=" << posterior_indicator;
    }
    return out.str();
}

IdentityCheck verify_posterior_identity(const ContaminationSetup& setup, std::span<const double> r_k_samples,
                              double lambda_offset) {
    const double lambda = posterior_lambda(setup) + lambda_offset;
    IdentityCheck result;
    for (double r : r_k_samples) {
        if (r == 0.0) {
            ++result.skipped_zero;
            continue;
        }
        const bool by_distance = -r >= lambda;
        const double p_in = estimate_density(setup, r).p_in_hat;
        const bool by_posterior = posterior_id(setup, p_in) >= setup.beta;
        ++result.checked;
        if (by_distance != by_posterior) {
            result.pass = false;
            result.counterexample = r;
            result.distance_indicator = by_distance;
            result.posterior_indicator = by_posterior;
            return result;
        }
    }
    return result;
}

std::vector<double> verification_radii(const ContaminationSetup& setup, std::size_t count, std::uint64_t seed) {
    const double boundary = -posterior_lambda(setup);
    auto rng = make_stream(seed, 0x7E0);
    std::uniform_real_distribution<double> log_r(std::log(1e-6), std::log(2.0));
    std::uniform_real_distribution<double> band(-1e-3, 1e-3);
    std::uniform_real_distribution<double> tight(-1e-7, 1e-7);
    std::vector<double> r;
    r.reserve(count);
    if (count > 0) r.push_back(boundary);
    while (r.size() < count) {
        switch (r.size() % 10) {
            case 0: r.push_back(boundary * (1.0 + band(rng))); break;
            case 5: r.push_back(boundary * (1.0 + tight(rng))); break;
            default: r.push_back(std::exp(log_r(rng))); break;
        }
    }
    return r;
}

double unit_ball_volume(int d) {
    const double half = d / 2.0;
    return std::exp(half * std::log(std::numbers::pi) - std::lgamma(half + 1.0));
}

double sphere_area(int m) {
    const double half = m / 2.0;
    return 2.0 * std::exp(half * std::log(std::numbers::pi) - std::lgamma(half));
}

SphereDensity uniform_sphere_density(int m) {
    if (m < 2) fail(ErrorKind::InvalidArgument, "sphere dimension must be >= 2");
    SphereDensity d;
    d.name = "uniform";
    d.m = m;
    const double value = 1.0 / sphere_area(m);
    d.sample = [m](std::size_t n, std::uint64_t seed) {
        auto rng = make_stream(seed, 0x5EED);
        return Eigen::MatrixXd(sample_uniform_sphere(m, n, rng));
    };
    d.density = [value](const Eigen::Ref<const Eigen::RowVectorXd>&) { return value; };
    return d;
}

SphereDensity vmf_sphere_density(const Eigen::VectorXd& mu, double kappa) {
    SphereDensity d;
    d.name = "vmf";
    d.m = static_cast<int>(mu.size());
    d.sample = [mu, kappa](std::size_t n, std::uint64_t seed) {
        auto rng = make_stream(seed, 0x5EED);
        return Eigen::MatrixXd(sample_vmf(mu, kappa, n, rng));
    };
    d.density = [mu, kappa](const Eigen::Ref<const Eigen::RowVectorXd>& z) { return std::exp(vmf_log_density(z, mu, kappa)); };
    return d;
}

std::int64_t sqrt_k_rule(std::size_t n) {
    return static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n))));
}

Eigen::MatrixXd evaluation_points(int m, std::size_t count) {
    Eigen::MatrixXd pts(static_cast<Eigen::Index>(count), m);
    if (m == 2) {
        for (std::size_t i = 0; i < count; ++i) {
            const double a = 2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
            pts.row(static_cast<Eigen::Index>(i)) << std::cos(a), std::sin(a);
        }
    } else if (m == 3) {
        // Fibonacci lattice.
        const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
        for (std::size_t i = 0; i < count; ++i) {
            const double y = 1.0 - 2.0 * (static_cast<double>(i) + 0.5) / static_cast<double>(count);
            const double r = std::sqrt(1.0 - y * y);
            const double a = golden * static_cast<double>(i);
            pts.row(static_cast<Eigen::Index>(i)) << r * std::cos(a), y, r * std::sin(a);
        }
    } else {
        auto rng = make_stream(0xE7A1, static_cast<std::uint64_t>(m));
        pts = sample_uniform_sphere(m, count, rng);
    }
    return pts;
}

std::vector<ConvergenceRow> convergence_experiment(const SphereDensity& density, const ConvergenceConfig& config,
                                                   std::uint64_t seed) {
    const int m = density.m;
    const double c_b = config.c_b.value_or(unit_ball_volume(m - 1));
    const auto k_rule = config.k_rule ? config.k_rule : sqrt_k_rule;
    const Eigen::MatrixXd eval = evaluation_points(m, config.eval_points);
    std::vector<double> truth(config.eval_points);
    for (std::size_t e = 0; e < config.eval_points; ++e) {
        truth[e] = density.density(eval.row(static_cast<Eigen::Index>(e))) / config.density_unit_scale;
    }

    std::vector<ConvergenceRow> rows;
    for (std::size_t g = 0; g < config.n_grid.size(); ++g) {
        const std::size_t n = config.n_grid[g];
        EmbeddingSet samples;
        samples.data = density.sample(n, seed + 0x9E37 * (g + 1));
        samples.normalized = true;
        const KnnIndex index = KnnIndex::build(samples, 1.0, 1, seed);

        ConvergenceRow row;
        row.n = n;
        row.k = k_rule(n);
        ContaminationSetup setup;
        setup.c_b = c_b;
        setup.m = m;
        setup.n = static_cast<std::int64_t>(n);
        setup.k = row.k;

        double total = 0.0;
        for (std::size_t e = 0; e < config.eval_points; ++e) {
            const Eigen::RowVectorXd z = eval.row(static_cast<Eigen::Index>(e));
            const double r_k = index.query(std::span<const double>(z.data(), static_cast<std::size_t>(m)),
                                           static_cast<int>(row.k)).r_k;
            const double estimate = estimate_density_or_infinite(setup, r_k).p_in_hat / config.density_unit_scale;
            total += std::abs(estimate - truth[e]);
        }
        row.mean_abs_error = total / static_cast<double>(config.eval_points);
        rows.push_back(row);
    }
    return rows;
}

std::string convergence_csv(const std::vector<ConvergenceRow>& rows) {
    std::ostringstream out;
    out << "n,k,mean_abs_error\n";
    for (const auto& r : rows) out << r.n << ',' << r.k << ',' << fmt(r.mean_abs_error) << '\n';
    return out.str();
}

}  // namespace knnood
