#include "knnood/detectors.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "knnood/error.hpp"

namespace knnood {

namespace {

constexpr char kModelMagic[4] = {'M', 'D', 'L', '1'};
constexpr std::uint32_t kGaussianTag = 1;
constexpr std::uint32_t kPcaTag = 2;

void check_dim(std::size_t got, std::size_t want, const char* what) {
    if (got != want) {
        fail(ErrorKind::InvalidArgument, std::string(what) + ": query dimension " + std::to_string(got) +
                                             " does not match model dimension " + std::to_string(want));
    }
}

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.put(static_cast<char>((v >> s) & 0xFF));
}

std::uint64_t get_le(std::istream& in, int bytes) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) fail(ErrorKind::Format, "MDL1: truncated header");
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

struct ModelHeader {
    std::uint32_t kind;
    std::uint32_t rows;
    std::uint32_t dim;
    double ridge;
};

void write_header(std::ostream& out, const ModelHeader& h) {
    out.write(kModelMagic, 4);
    put_u32(out, h.kind);
    put_u32(out, h.rows);
    put_u32(out, h.dim);
    const auto bits = std::bit_cast<std::uint64_t>(h.ridge);
    for (int s = 0; s < 64; s += 8) out.put(static_cast<char>((bits >> s) & 0xFF));
}

ModelHeader read_header(std::istream& in, const std::filesystem::path& path) {
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kModelMagic)) {
        fail(ErrorKind::Format, path.filename().string() + ": missing MDL1 magic");
    }
    ModelHeader h{};
    h.kind = static_cast<std::uint32_t>(get_le(in, 4));
    h.rows = static_cast<std::uint32_t>(get_le(in, 4));
    h.dim = static_cast<std::uint32_t>(get_le(in, 4));
    h.ridge = std::bit_cast<double>(get_le(in, 8));
    return h;
}

std::ifstream open_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return in;
}

RowMatrix read_block(std::istream& in, const std::filesystem::path& path, std::uint32_t rows, std::uint32_t cols) {
    EmbeddingSet block = read_emb1(in, path.filename().string());
    if (block.rows() != rows || block.dim() != cols) {
        fail(ErrorKind::Format, path.filename().string() + ": MDL1 block shape disagrees with header");
    }
    return std::move(block.data);
}

void expect_end(std::istream& in, const std::filesystem::path& path) {
    if (in.peek() != std::char_traits<char>::eof()) {
        fail(ErrorKind::Format, path.filename().string() + ": trailing bytes after model payload");
    }
}

}  // namespace

ScoreVector score_msp(const LogitSet& logits) {
    logits.validate();
    ScoreVector out;
    out.detector_tag = "msp";
    out.scores.resize(logits.rows());
    for (Eigen::Index i = 0; i < logits.data.rows(); ++i) {
        const auto row = logits.data.row(i);
        const double top = row.maxCoeff();
        const double denom = (row.array() - top).exp().sum();
        out.scores[static_cast<std::size_t>(i)] = 1.0 / denom;
    }
    return out;
}

ScoreVector score_energy(const LogitSet& logits, double temperature) {
    if (!(temperature > 0.0)) fail(ErrorKind::InvalidArgument, "energy temperature must be positive");
    logits.validate();
    ScoreVector out;
    out.detector_tag = "energy";
    out.scores.resize(logits.rows());
    for (Eigen::Index i = 0; i < logits.data.rows(); ++i) {
        const Eigen::RowVectorXd scaled = logits.data.row(i) / temperature;
        const double top = scaled.maxCoeff();
        out.scores[static_cast<std::size_t>(i)] = temperature * (top + std::log((scaled.array() - top).exp().sum()));
    }
    return out;
}

GaussianModel::GaussianModel(RowMatrix means, Eigen::MatrixXd covariance, double ridge)
    : means_(std::move(means)), covariance_(std::move(covariance)), ridge_(ridge) {
    if (means_.rows() < 1) fail(ErrorKind::InvalidArgument, "gaussian model needs at least one class");
    if (covariance_.rows() != means_.cols() || covariance_.cols() != means_.cols()) {
        fail(ErrorKind::InvalidArgument, "covariance shape does not match centroid dimension");
    }
    const double asym = (covariance_ - covariance_.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-9) fail(ErrorKind::InvalidArgument, "covariance is not symmetric");
    llt_.compute(covariance_);
    if (llt_.info() != Eigen::Success) {
        fail(ErrorKind::Numeric, "covariance is singular even after ridge " + std::to_string(ridge_));
    }
}

double GaussianModel::squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& z, std::size_t c) const {
    const Eigen::VectorXd diff = (z - means_.row(static_cast<Eigen::Index>(c))).transpose();
    const Eigen::VectorXd y = llt_.matrixL().solve(diff);
    return y.squaredNorm();
}

GaussianModel fit_gaussian(const EmbeddingSet& e, std::optional<double> ridge) {
    if (!e.labels) fail(ErrorKind::InvalidArgument, "mahalanobis fit needs class labels");
    e.validate();
    const auto& labels = *e.labels;
    const std::uint32_t classes = *std::max_element(labels.begin(), labels.end()) + 1;
    const auto m = e.data.cols();

    RowMatrix means = RowMatrix::Zero(classes, m);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < e.rows(); ++i) {
        means.row(labels[i]) += e.data.row(static_cast<Eigen::Index>(i));
        ++counts[labels[i]];
    }
    for (std::uint32_t c = 0; c < classes; ++c) {
        if (counts[c] < 2) {
            fail(ErrorKind::InvalidArgument, "class " + std::to_string(c) + " has " + std::to_string(counts[c]) +
                                                 " samples; at least 2 are required");
        }
        means.row(c) /= static_cast<double>(counts[c]);
    }

    RowMatrix centered = e.data;
    for (std::size_t i = 0; i < e.rows(); ++i) centered.row(static_cast<Eigen::Index>(i)) -= means.row(labels[i]);
    Eigen::MatrixXd scatter = (centered.transpose() * centered) / static_cast<double>(e.rows());
    scatter = 0.5 * (scatter + scatter.transpose());

    const double r = ridge.value_or(1e-6 * scatter.trace() / static_cast<double>(m));
    if (!(r >= 0.0)) fail(ErrorKind::InvalidArgument, "ridge must be non-negative");
    scatter.diagonal().array() += r;
    return GaussianModel(std::move(means), std::move(scatter), r);
}

ScoreVector score_mahalanobis(const GaussianModel& model, const EmbeddingSet& queries) {
    check_dim(queries.dim(), model.dim(), "mahalanobis");
    ScoreVector out;
    out.detector_tag = "maha";
    out.scores.resize(queries.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const auto z = queries.data.row(static_cast<Eigen::Index>(i));
        double best = model.squared_distance(z, 0);
        for (std::size_t c = 1; c < model.classes(); ++c) best = std::min(best, model.squared_distance(z, c));
        out.scores[i] = -best;
    }
    return out;
}

LofModel::LofModel(RowMatrix reference, int k) : reference_(std::move(reference)), k_(k) {
    const std::size_t n = size();
    if (k_ < 1 || static_cast<std::size_t>(k_) + 1 > n) {
        fail(ErrorKind::InvalidArgument, "LOF k=" + std::to_string(k_) + " out of range [1, " +
                                             std::to_string(n == 0 ? 0 : n - 1) + "] for " + std::to_string(n) +
                                             " reference points");
    }
    k_distance_.resize(n);
    std::vector<std::vector<std::pair<double, std::size_t>>> nbrs(n);
    for (std::size_t i = 0; i < n; ++i) {
        nbrs[i] = neighbours(reference_.row(static_cast<Eigen::Index>(i)), i);
        k_distance_[i] = nbrs[i].back().first;
    }
    lrd_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double reach = 0.0;
        for (const auto& [d, o] : nbrs[i]) reach += std::max(k_distance_[o], d);
        lrd_[i] = 1.0 / (reach / static_cast<double>(k_) + 1e-10);
    }
}

std::vector<std::pair<double, std::size_t>> LofModel::neighbours(const Eigen::Ref<const Eigen::RowVectorXd>& q,
                                                                 std::optional<std::size_t> skip) const {
    std::vector<std::pair<double, std::size_t>> all;
    all.reserve(size());
    for (std::size_t j = 0; j < size(); ++j) {
        if (skip && *skip == j) continue;
        all.emplace_back((reference_.row(static_cast<Eigen::Index>(j)) - q).norm(), j);
    }
    const auto kth = all.begin() + k_;
    std::partial_sort(all.begin(), kth, all.end());
    all.erase(kth, all.end());
    return all;
}

double LofModel::lof(const Eigen::Ref<const Eigen::RowVectorXd>& q) const {
    check_dim(static_cast<std::size_t>(q.size()), static_cast<std::size_t>(reference_.cols()), "lof");
    const auto nbrs = neighbours(q, std::nullopt);
    double reach = 0.0;
    double lrd_sum = 0.0;
    for (const auto& [d, o] : nbrs) {
        reach += std::max(k_distance_[o], d);
        lrd_sum += lrd_[o];
    }
    const double lrd_q = 1.0 / (reach / static_cast<double>(k_) + 1e-10);
    return (lrd_sum / static_cast<double>(k_)) / lrd_q;
}

ScoreVector score_lof(const LofModel& model, const EmbeddingSet& queries) {
    ScoreVector out;
    out.detector_tag = "lof";
    out.scores.resize(queries.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        out.scores[i] = -model.lof(queries.data.row(static_cast<Eigen::Index>(i)));
    }
    return out;
}

ScoreVector score_lof(const KnnIndex& index, const EmbeddingSet& queries, int k) {
    check_dim(queries.dim(), index.dim(), "lof");
    if (!queries.normalized) fail(ErrorKind::InvalidArgument, "lof queries must be L2-normalized");
    return score_lof(LofModel(index.vectors(), k), queries);
}

PcaModel fit_pca(const EmbeddingSet& e, int p) {
    e.validate();
    const auto m = static_cast<int>(e.dim());
    if (p < 1 || p > m) {
        fail(ErrorKind::InvalidArgument, "PCA components p=" + std::to_string(p) + " must lie in [1, " +
                                             std::to_string(m) + "]");
    }
    PcaModel model;
    model.mean = e.data.colwise().mean();
    const RowMatrix centered = e.data.rowwise() - model.mean;
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(e.rows());
    cov = 0.5 * (cov + cov.transpose());
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) fail(ErrorKind::Numeric, "PCA eigendecomposition failed");
    // Eigenvalues come back ascending.
    model.components.resize(p, m);
    for (int r = 0; r < p; ++r) model.components.row(r) = eig.eigenvectors().col(m - 1 - r).transpose();
    return model;
}

ScoreVector score_pca(const PcaModel& model, const EmbeddingSet& queries) {
    check_dim(queries.dim(), static_cast<std::size_t>(model.mean.size()), "pca");
    ScoreVector out;
    out.detector_tag = "pca";
    out.scores.resize(queries.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const Eigen::RowVectorXd r = queries.data.row(static_cast<Eigen::Index>(i)) - model.mean;
        const Eigen::VectorXd coeffs = model.components * r.transpose();
        const Eigen::RowVectorXd residual = r - (model.components.transpose() * coeffs).transpose();
        out.scores[i] = -residual.squaredNorm();
    }
    return out;
}

void save_model(const GaussianModel& model, const std::filesystem::path& path) {
    std::ostringstream out(std::ios::binary);
    write_header(out, {kGaussianTag, static_cast<std::uint32_t>(model.classes()),
                       static_cast<std::uint32_t>(model.dim()), model.ridge()});
    write_emb1(out, model.means());
    write_emb1(out, RowMatrix(model.covariance()));
    write_file_atomic(path, out.str());
}

void save_model(const PcaModel& model, const std::filesystem::path& path) {
    std::ostringstream out(std::ios::binary);
    write_header(out, {kPcaTag, static_cast<std::uint32_t>(model.p()),
                       static_cast<std::uint32_t>(model.mean.size()), 0.0});
    write_emb1(out, RowMatrix(model.mean));
    write_emb1(out, model.components);
    write_file_atomic(path, out.str());
}

ModelKind peek_model_kind(const std::filesystem::path& path) {
    auto in = open_model(path);
    const auto h = read_header(in, path);
    if (h.kind == kGaussianTag) return ModelKind::Gaussian;
    if (h.kind == kPcaTag) return ModelKind::Pca;
    fail(ErrorKind::Format, path.filename().string() + ": unknown MDL1 model kind " + std::to_string(h.kind));
}

GaussianModel load_gaussian_model(const std::filesystem::path& path) {
    auto in = open_model(path);
    const auto h = read_header(in, path);
    if (h.kind != kGaussianTag) fail(ErrorKind::Format, path.filename().string() + ": not a gaussian model");
    RowMatrix means = read_block(in, path, h.rows, h.dim);
    Eigen::MatrixXd cov = read_block(in, path, h.dim, h.dim);
    expect_end(in, path);
    cov = 0.5 * (cov + cov.transpose());
    return GaussianModel(std::move(means), std::move(cov), h.ridge);
}

PcaModel load_pca_model(const std::filesystem::path& path) {
    auto in = open_model(path);
    const auto h = read_header(in, path);
    if (h.kind != kPcaTag) fail(ErrorKind::Format, path.filename().string() + ": not a PCA model");
    PcaModel model;
    model.mean = read_block(in, path, 1, h.dim).row(0);
    model.components = read_block(in, path, h.rows, h.dim);
    expect_end(in, path);
    // The payload is single precision; restore orthonormality with modified Gram-Schmidt.
    for (Eigen::Index r = 0; r < model.components.rows(); ++r) {
        for (Eigen::Index q = 0; q < r; ++q) {
            model.components.row(r) -= model.components.row(r).dot(model.components.row(q)) * model.components.row(q);
        }
        const double norm = model.components.row(r).norm();
        if (norm == 0.0) fail(ErrorKind::Format, path.filename().string() + ": degenerate PCA components");
        model.components.row(r) /= norm;
    }
    return model;
}

}  // namespace knnood
