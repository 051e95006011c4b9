#include <doctest.h>

#include <cmath>
#include <random>

#include "knnood/detectors.hpp"
#include "knnood/error.hpp"
#include "oracles.hpp"

using namespace knnood;

namespace {

LogitSet logits(std::initializer_list<std::initializer_list<double>> rows) {
    LogitSet l;
    l.data.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) l.data(i, j++) = v;
        ++i;
    }
    return l;
}

EmbeddingSet points(std::initializer_list<std::initializer_list<double>> rows) {
    EmbeddingSet e;
    e.data = logits(rows).data;
    return e;
}

}  // namespace

TEST_CASE("msp") {
    CHECK(score_msp(logits({{0, 0, 0, 0}})).scores[0] == doctest::Approx(0.25).epsilon(1e-15));
    const double s = score_msp(logits({{10, -10}})).scores[0];
    CHECK(std::abs(s - 1.0) < 1e-8);
    CHECK(s == doctest::Approx(0.9999999979388463).epsilon(1e-14));
    const auto a = score_msp(logits({{1.5, -0.3, 2.0}}));
    const auto b = score_msp(logits({{101.5, 99.7, 102.0}}));
    CHECK(a.scores[0] == doctest::Approx(b.scores[0]).epsilon(1e-12));
    CHECK(score_msp(logits({{1000, 0}})).scores[0] == 1.0);
}

TEST_CASE("energy") {
    CHECK(score_energy(logits({{0, 0}})).scores[0] == doctest::Approx(0.69314718).epsilon(1e-8));
    // log(e^5 + 2) = 5.013385901721449.
    const double e = score_energy(logits({{5, 0, 0}})).scores[0];
    CHECK(e == doctest::Approx(5.013385901721449).epsilon(1e-14));
    CHECK(e == doctest::Approx(std::log(std::exp(5.0) + 2.0)).epsilon(1e-15));
    // Overflow-safe for huge logits.
    CHECK(score_energy(logits({{1000, 1000}})).scores[0] == doctest::Approx(1000.0 + std::log(2.0)));
    // Temperature: T * log sum exp(f / T).
    CHECK(score_energy(logits({{2, 0}}), 2.0).scores[0] == doctest::Approx(2.0 * std::log(std::exp(1.0) + 1.0)));
    CHECK_THROWS_AS(score_energy(logits({{0, 0}}), 0.0), Error);
}

TEST_CASE("gaussian fit with zero scatter falls back to the ridge") {
    auto e = points({{1, 0}, {1, 0}, {-1, 0}, {-1, 0}});
    e.labels = std::vector<std::uint32_t>{0, 0, 1, 1};
    const auto g = fit_gaussian(e, 1e-6);
    CHECK(g.means()(0, 0) == 1.0);
    CHECK(g.means()(1, 0) == -1.0);
    CHECK(g.covariance().isApprox(1e-6 * Eigen::MatrixXd::Identity(2, 2)));
}

TEST_CASE("gaussian fit on four axis points") {
    auto e = points({{1, 0}, {-1, 0}, {0, 1}, {0, -1}});
    e.labels = std::vector<std::uint32_t>{0, 0, 0, 0};
    const auto g = fit_gaussian(e, 1e-6);
    CHECK(g.means().row(0).norm() == 0.0);
    CHECK(g.covariance()(0, 0) == doctest::Approx(0.5 + 1e-6).epsilon(1e-15));
    CHECK(g.covariance()(1, 1) == doctest::Approx(0.5 + 1e-6).epsilon(1e-15));
    CHECK(g.covariance()(0, 1) == 0.0);
}

TEST_CASE("gaussian fit contract") {
    auto e = points({{1, 0}, {-1, 0}, {0, 1}});
    e.labels = std::vector<std::uint32_t>{0, 0, 1};
    CHECK_THROWS_AS(fit_gaussian(e), Error);
    e.labels.reset();
    CHECK_THROWS_AS(fit_gaussian(e), Error);
    Eigen::MatrixXd bad(2, 2);
    bad << 1, 2, 2, 1;  // indefinite
    CHECK_THROWS_AS(GaussianModel(RowMatrix::Zero(1, 2), bad, 0.0), Error);
}

TEST_CASE("mahalanobis score") {
    const GaussianModel unit(RowMatrix::Zero(1, 2), Eigen::MatrixXd::Identity(2, 2), 0.0);
    CHECK(score_mahalanobis(unit, points({{1, 0}})).scores[0] == -1.0);
    CHECK(score_mahalanobis(unit, points({{0, 0}})).scores[0] == 0.0);

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(2, 2);
    cov.diagonal() << 4, 1;
    const GaussianModel stretched(RowMatrix::Zero(1, 2), cov, 0.0);
    CHECK(score_mahalanobis(stretched, points({{2, 0}})).scores[0] == doctest::Approx(-1.0).epsilon(1e-15));

    RowMatrix means(2, 2);
    means << 1, 0, -1, 0;
    const GaussianModel two(means, Eigen::MatrixXd::Identity(2, 2), 0.0);
    CHECK(score_mahalanobis(two, points({{-1, 0}})).scores[0] == 0.0);
    CHECK(score_mahalanobis(two, points({{0, 1}})).scores[0] == doctest::Approx(-2.0));
}

TEST_CASE("mahalanobis factorization agrees with an explicit inverse") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
        const int m = 2 + trial % 7;
        EmbeddingSet e;
        e.data.resize(60, m);
        std::vector<std::uint32_t> labels(60);
        for (Eigen::Index i = 0; i < 60; ++i) {
            labels[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(i % 3);
            for (int j = 0; j < m; ++j) e.data(i, j) = g(rng) * (1.0 + j) + 3.0 * (i % 3);
        }
        e.labels = labels;
        const auto model = fit_gaussian(e);
        for (int q = 0; q < 10; ++q) {
            Eigen::RowVectorXd z(m);
            for (int j = 0; j < m; ++j) z(j) = 4.0 * g(rng);
            for (std::size_t c = 0; c < model.classes(); ++c) {
                const double fast = model.squared_distance(z, c);
                const double slow = oracle::mahalanobis_sq(model.covariance(), model.means().row(static_cast<Eigen::Index>(c)), z);
                CHECK(oracle::relative_error(fast, slow) <= 1e-8);
            }
        }
    }
}

TEST_CASE("lof on a lattice") {
    RowMatrix grid(21 * 21, 2);
    for (int i = 0; i < 21; ++i)
        for (int j = 0; j < 21; ++j) grid.row(i * 21 + j) << i, j;
    const LofModel model(grid, 8);
    const Eigen::RowVectorXd centre = (Eigen::RowVectorXd(2) << 10, 10).finished();
    const double inside = model.lof(centre);
    CHECK(std::abs(inside - 1.0) < 0.05);
    CHECK(inside == doctest::Approx(oracle::lof(grid, centre, 8)).epsilon(1e-12));

    const Eigen::RowVectorXd far = (Eigen::RowVectorXd(2) << 100, 100).finished();
    const double outside = model.lof(far);
    CHECK(outside > 1.0);
    CHECK(outside == doctest::Approx(oracle::lof(grid, far, 8)).epsilon(1e-12));
}

TEST_CASE("lof matches the oracle on random unit data via the index") {
    std::mt19937_64 rng(8);
    EmbeddingSet train;
    train.data = oracle::random_unit_rows(120, 3, rng);
    train.normalized = true;
    EmbeddingSet q;
    q.data = oracle::random_unit_rows(15, 3, rng);
    q.normalized = true;
    const auto idx = KnnIndex::build(train, 1.0, 1, 0);
    const auto s = score_lof(idx, q, 10);
    const Eigen::MatrixXd ref = train.data;
    for (std::size_t i = 0; i < q.rows(); ++i)
        CHECK(-s.scores[i] == doctest::Approx(oracle::lof(ref, q.data.row(static_cast<Eigen::Index>(i)), 10)).epsilon(1e-12));
    CHECK_THROWS_AS(score_lof(idx, q, 120), Error);
}

TEST_CASE("lof with all points identical is exactly one") {
    RowMatrix same = RowMatrix::Zero(10, 2);
    same.col(0).setOnes();
    const LofModel model(same, 3);
    CHECK(model.lof(same.row(0)) == 1.0);
}

TEST_CASE("pca residual") {
    const auto line = points({{-2, 0}, {-1, 0}, {1, 0}, {2, 0}});
    const auto model = fit_pca(line, 1);
    CHECK(std::abs(score_pca(model, points({{0.37, 0}})).scores[0]) < 1e-24);
    CHECK(score_pca(model, points({{0, 1}})).scores[0] == doctest::Approx(-1.0).epsilon(1e-14));

    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    EmbeddingSet cloud;
    cloud.data.resize(30, 3);
    for (Eigen::Index i = 0; i < 30; ++i)
        for (int j = 0; j < 3; ++j) cloud.data(i, j) = g(rng);
    const auto full = fit_pca(cloud, 3);
    for (double s : score_pca(full, cloud).scores) CHECK(std::abs(s) < 1e-20);
    CHECK_THROWS_AS(fit_pca(cloud, 4), Error);
    CHECK_THROWS_AS(fit_pca(cloud, 0), Error);
}

TEST_CASE("model snapshots round trip") {
    oracle::TempDir dir;
    auto e = points({{1, 0.5}, {-1, 0.2}, {0.3, 1}, {0, -1}, {2, 2}, {1, -2}});
    e.labels = std::vector<std::uint32_t>{0, 0, 0, 1, 1, 1};
    const auto g = fit_gaussian(e);
    save_model(g, dir / "g.mdl");
    CHECK(peek_model_kind(dir / "g.mdl") == ModelKind::Gaussian);
    const auto g2 = load_gaussian_model(dir / "g.mdl");
    const auto q = points({{0.5, 0.5}});
    CHECK(score_mahalanobis(g2, q).scores[0] == doctest::Approx(score_mahalanobis(g, q).scores[0]).epsilon(1e-5));
    CHECK_THROWS_AS(load_pca_model(dir / "g.mdl"), Error);

    const auto p = fit_pca(e, 1);
    save_model(p, dir / "p.mdl");
    CHECK(peek_model_kind(dir / "p.mdl") == ModelKind::Pca);
    const auto p2 = load_pca_model(dir / "p.mdl");
    CHECK(p2.components.row(0).norm() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(score_pca(p2, q).scores[0] == doctest::Approx(score_pca(p, q).scores[0]).epsilon(1e-5));
}
