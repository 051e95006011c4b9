#pragma once

// Deliberately naive reference implementations. They share no code with the
// library so that agreement is evidence, not tautology.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

// Squared differences summed in dimension order, then sqrt; sorted ascending.
inline std::vector<double> sorted_distances(const Eigen::MatrixXd& train, const Eigen::RowVectorXd& q) {
    std::vector<double> d;
    d.reserve(static_cast<std::size_t>(train.rows()));
    for (Eigen::Index i = 0; i < train.rows(); ++i) {
        double s = 0.0;
        for (Eigen::Index j = 0; j < train.cols(); ++j) {
            const double diff = q(j) - train(i, j);
            s += diff * diff;
        }
        d.push_back(std::sqrt(s));
    }
    std::sort(d.begin(), d.end());
    return d;
}

inline double kth_distance(const Eigen::MatrixXd& train, const Eigen::RowVectorXd& q, int k) {
    return sorted_distances(train, q)[static_cast<std::size_t>(k - 1)];
}

// P(id > ood) + 0.5 P(id == ood) by enumerating every pair.
inline double pairwise_auroc(const std::vector<double>& id, const std::vector<double>& ood) {
    long double wins = 0.0L;
    for (double a : id) {
        for (double b : ood) {
            if (a > b) {
                wins += 1.0L;
            } else if (a == b) {
                wins += 0.5L;
            }
        }
    }
    return static_cast<double>(wins / (static_cast<long double>(id.size()) * static_cast<long double>(ood.size())));
}

// Scan every observed ID score as a candidate threshold; keep the largest
// one whose acceptance fraction reaches the target.
inline double scan_lambda(const std::vector<double>& id, double tpr) {
    double best = -std::numeric_limits<double>::infinity();
    for (double cand : id) {
        std::size_t accepted = 0;
        for (double s : id) accepted += s >= cand ? 1 : 0;
        if (static_cast<double>(accepted) / static_cast<double>(id.size()) >= tpr) best = std::max(best, cand);
    }
    return best;
}

inline double scan_fpr(const std::vector<double>& id, const std::vector<double>& ood, double tpr) {
    const double lambda = scan_lambda(id, tpr);
    std::size_t fp = 0;
    for (double s : ood) fp += s >= lambda ? 1 : 0;
    return static_cast<double>(fp) / static_cast<double>(ood.size());
}

// Textbook LOF with the k-distance neighbourhood taken as exactly k points.
inline double lof(const Eigen::MatrixXd& ref, const Eigen::RowVectorXd& q, int k) {
    const auto n = ref.rows();
    auto dist = [](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) { return (a - b).norm(); };
    auto knn = [&](const Eigen::RowVectorXd& p, Eigen::Index skip) {
        std::vector<std::pair<double, Eigen::Index>> all;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (i != skip) all.emplace_back(dist(p, ref.row(i)), i);
        }
        std::sort(all.begin(), all.end());
        all.resize(static_cast<std::size_t>(k));
        return all;
    };
    std::vector<double> kdist(static_cast<std::size_t>(n));
    std::vector<std::vector<std::pair<double, Eigen::Index>>> nb(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        nb[static_cast<std::size_t>(i)] = knn(ref.row(i), i);
        kdist[static_cast<std::size_t>(i)] = nb[static_cast<std::size_t>(i)].back().first;
    }
    auto lrd_of = [&](const std::vector<std::pair<double, Eigen::Index>>& neighbours) {
        double s = 0.0;
        for (const auto& [d, j] : neighbours) s += std::max(d, kdist[static_cast<std::size_t>(j)]);
        return 1.0 / (s / static_cast<double>(k) + 1e-10);
    };
    std::vector<double> lrd(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) lrd[static_cast<std::size_t>(i)] = lrd_of(nb[static_cast<std::size_t>(i)]);
    const auto qn = knn(q, -1);
    const double lrd_q = lrd_of(qn);
    double s = 0.0;
    for (const auto& [d, j] : qn) s += lrd[static_cast<std::size_t>(j)];
    return s / (static_cast<double>(k) * lrd_q);
}

// Mahalanobis distance via an explicit inverse.
inline double mahalanobis_sq(const Eigen::MatrixXd& cov, const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& q) {
    const Eigen::VectorXd d = (q - mean).transpose();
    return d.dot(cov.inverse() * d);
}

inline double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
    return std::abs(a - b) / scale;
}

// Scratch directory removed on destruction.
class TempDir {
public:
    TempDir() {
        static std::atomic<int> counter{0};
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("knnood_test_" + std::to_string(rd()) + "_" + std::to_string(counter++));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

inline Eigen::MatrixXd random_unit_rows(std::size_t n, int m, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd out(static_cast<Eigen::Index>(n), m);
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
        for (int j = 0; j < m; ++j) out(i, j) = g(rng);
        out.row(i) /= out.row(i).norm();
    }
    return out;
}

}  // namespace oracle
