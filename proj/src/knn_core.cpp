#include "knnood/knn_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "knnood/error.hpp"

namespace knnood {

namespace {

constexpr char kKnnMagic[4] = {'K', 'N', 'N', '1'};

// Index rows are scanned in panels of kPanel rows stored dimension-major, so the
// inner loop runs across rows while each row still accumulates its squared
// differences in dimension order.
constexpr std::size_t kPanel = 8;

void put_u32(std::ostream& out, std::uint32_t v) {
    for (int s = 0; s < 32; s += 8) out.put(static_cast<char>((v >> s) & 0xFF));
}

void put_u64(std::ostream& out, std::uint64_t v) {
    for (int s = 0; s < 64; s += 8) out.put(static_cast<char>((v >> s) & 0xFF));
}

std::uint64_t get_le(std::istream& in, int bytes, const char* field) {
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
        const int c = in.get();
        if (c == std::char_traits<char>::eof()) fail(ErrorKind::Format, std::string("KNN1: truncated at ") + field);
        v |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    return v;
}

std::vector<double> make_panels(const RowMatrix& rows) {
    const auto n = static_cast<std::size_t>(rows.rows());
    const auto m = static_cast<std::size_t>(rows.cols());
    const std::size_t panels = (n + kPanel - 1) / kPanel;
    std::vector<double> data(panels * kPanel * m, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t p = i / kPanel;
        const std::size_t lane = i % kPanel;
        for (std::size_t j = 0; j < m; ++j) {
            data[(p * m + j) * kPanel + lane] = rows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        }
    }
    return data;
}

// Squared distances for `panels` consecutive panels. A panel whose partial
// sums all reach `cutoff` is abandoned and reported as +inf; partial sums only
// grow, so such rows can never be among the nearest.
void panel_distances(const double* block, std::size_t panels, std::size_t m, const double* query, double cutoff,
                     double* out) {
    constexpr std::size_t kCheckEvery = 4;
    for (std::size_t p = 0; p < panels; ++p, block += m * kPanel, out += kPanel) {
        double acc[kPanel] = {};
        bool pruned = false;
        for (std::size_t j = 0; j < m; ++j) {
            const double q = query[j];
            const double* col = block + j * kPanel;
            for (std::size_t lane = 0; lane < kPanel; ++lane) {
                const double d = col[lane] - q;
                acc[lane] += d * d;
            }
            if (j % kCheckEvery == kCheckEvery - 1 && j + 1 < m &&
                *std::min_element(acc, acc + kPanel) > cutoff) {
                pruned = true;
                break;
            }
        }
        if (pruned) {
            std::fill(out, out + kPanel, std::numeric_limits<double>::infinity());
        } else {
            std::copy(acc, acc + kPanel, out);
        }
    }
}

class PanelScanner {
public:
    PanelScanner(const std::vector<double>& panels, std::size_t n, std::size_t m) : data_(panels), n_(n), m_(m) {}

    std::size_t size() const { return n_; }

    /// Writes squared distances for rows [first, first + count) into `out`.
    /// `first` must be a multiple of kPanel; `out` needs room for whole panels.
    /// Rows whose distance provably exceeds `cutoff` may come back as +inf.
    void distances(const double* query, std::size_t first, std::size_t count, double cutoff, double* out) const {
        const std::size_t p0 = first / kPanel;
        const std::size_t p1 = (first + count + kPanel - 1) / kPanel;
        panel_distances(data_.data() + p0 * m_ * kPanel, p1 - p0, m_, query, cutoff, out);
    }

private:
    const std::vector<double>& data_;
    std::size_t n_;
    std::size_t m_;
};

// Keeps the k smallest values offered. Candidates below the current cut-off
// are buffered and the buffer is trimmed back to k with nth_element.
class BoundedSelection {
public:
    explicit BoundedSelection(std::size_t k) : k_(k) { buf_.reserve(2 * k + kBlock); }

    double cutoff() const { return cutoff_; }

    void offer(double v) {
        if (v >= cutoff_) return;
        buf_.push_back(v);
        if (buf_.size() >= 2 * k_ + kBlock) trim();
    }

    std::vector<double> take_sorted() {
        trim();
        std::sort(buf_.begin(), buf_.end());
        return std::move(buf_);
    }

    static constexpr std::size_t kBlock = 256;

private:
    void trim() {
        if (buf_.size() < k_) return;
        std::nth_element(buf_.begin(), buf_.begin() + static_cast<std::ptrdiff_t>(k_ - 1), buf_.end());
        buf_.resize(k_);
        // A later value equal to the k-th cannot change the k smallest values.
        cutoff_ = buf_[k_ - 1];
    }

    std::size_t k_;
    std::vector<double> buf_;
    double cutoff_ = std::numeric_limits<double>::infinity();
};

template <class Fn>
void parallel_rows(std::size_t rows, unsigned threads, Fn&& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(rows, 1)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < rows; ++i) fn(i);
        return;
    }
    std::vector<std::jthread> workers;
    const std::size_t chunk = (rows + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
        const std::size_t begin = t * chunk;
        const std::size_t end = std::min(rows, begin + chunk);
        if (begin >= end) break;
        workers.emplace_back([&fn, begin, end] {
            for (std::size_t i = begin; i < end; ++i) fn(i);
        });
    }
}

std::vector<double> select_nearest(const PanelScanner& scanner, const double* z, std::size_t k, bool exclude_self) {
    BoundedSelection sel(k);
    bool skipped = !exclude_self;
    double block[BoundedSelection::kBlock];
    const std::size_t n = scanner.size();
    for (std::size_t first = 0; first < n; first += BoundedSelection::kBlock) {
        const std::size_t count = std::min(BoundedSelection::kBlock, n - first);
        scanner.distances(z, first, count, sel.cutoff(), block);
        for (std::size_t i = 0; i < count; ++i) {
            const double sq = block[i];
            if (!skipped && sq == 0.0) {
                skipped = true;
                continue;
            }
            sel.offer(sq);
        }
    }
    auto out = sel.take_sorted();
    for (auto& v : out) v = std::sqrt(v);
    return out;
}

}  // namespace

int scaled_k(int base_k, double alpha) {
    return std::max(1, static_cast<int>(std::lround(static_cast<double>(base_k) * alpha)));
}

KnnIndex KnnIndex::build(const EmbeddingSet& normalized, double alpha, int base_k, std::uint64_t seed) {
    if (!normalized.normalized) fail(ErrorKind::InvalidArgument, "index input must be L2-normalized");
    return build_rows(normalized, alpha, base_k, seed, true);
}

KnnIndex KnnIndex::build_unnormalized(const EmbeddingSet& raw, double alpha, int base_k, std::uint64_t seed) {
    return build_rows(raw, alpha, base_k, seed, false);
}

KnnIndex KnnIndex::build_rows(const EmbeddingSet& normalized, double alpha, int base_k, std::uint64_t seed,
                              bool unit_rows) {
    normalized.validate();
    if (!(alpha > 0.0 && alpha <= 1.0)) fail(ErrorKind::InvalidArgument, "alpha must lie in (0, 1]");
    if (base_k < 1) fail(ErrorKind::InvalidArgument, "k must be at least 1");

    const std::size_t n = normalized.rows();
    const auto retained = static_cast<std::size_t>(std::llround(alpha * static_cast<double>(n)));
    const int eff_k = alpha == 1.0 ? base_k : scaled_k(base_k, alpha);
    if (retained < static_cast<std::size_t>(eff_k)) {
        fail(ErrorKind::InvalidArgument, "retained row count " + std::to_string(retained) +
                                             " is smaller than effective k " + std::to_string(eff_k));
    }

    std::vector<std::size_t> rows(n);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    if (retained < n) {
        std::mt19937_64 rng(seed);
        for (std::size_t i = 0; i < retained; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, n - 1);
            std::swap(rows[i], rows[pick(rng)]);
        }
        rows.resize(retained);
        std::sort(rows.begin(), rows.end());
    }

    KnnIndex index;
    index.vectors_.resize(static_cast<Eigen::Index>(retained), normalized.data.cols());
    for (std::size_t i = 0; i < retained; ++i) {
        index.vectors_.row(static_cast<Eigen::Index>(i)) = normalized.data.row(static_cast<Eigen::Index>(rows[i]));
    }
    index.alpha_ = alpha;
    index.base_k_ = base_k;
    index.effective_k_ = eff_k;
    index.seed_ = seed;
    index.unit_rows_ = unit_rows;
    index.retained_ = std::move(rows);
    index.panels_ = make_panels(index.vectors_);
    return index;
}

void KnnIndex::validate_query(std::span<const double> z, int k, const QueryOptions& opts) const {
    if (z.size() != dim()) {
        fail(ErrorKind::InvalidArgument, "query has dimension " + std::to_string(z.size()) + ", index has " +
                                             std::to_string(dim()));
    }
    const std::size_t available = size() - (opts.exclude_self_distance_zero ? 1 : 0);
    if (k < 1 || static_cast<std::size_t>(k) > available) {
        fail(ErrorKind::InvalidArgument, "k=" + std::to_string(k) + " out of range [1, " + std::to_string(available) +
                                             "] for index of size " + std::to_string(size()));
    }
    if (!unit_rows_) return;
    double sq = 0.0;
    for (double v : z) sq += v * v;
    if (std::abs(std::sqrt(sq) - 1.0) > kUnitNormTolerance) {
        fail(ErrorKind::InvalidArgument, "query is not unit-norm (norm " + std::to_string(std::sqrt(sq)) + ")");
    }
}

std::vector<double> KnnIndex::nearest_distances(std::span<const double> z, int k, const QueryOptions& opts) const {
    validate_query(z, k, opts);
    const PanelScanner scanner(panels_, size(), dim());
    return select_nearest(scanner, z.data(), static_cast<std::size_t>(k), opts.exclude_self_distance_zero);
}

NeighborQueryResult KnnIndex::query(std::span<const double> z, int k, const QueryOptions& opts) const {
    const auto d = nearest_distances(z, k, opts);
    NeighborQueryResult r;
    r.k_used = k;
    r.r_k = d.back();
    r.r_avg = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    return r;
}

std::vector<double> batch_nearest_distances(const KnnIndex& index, const EmbeddingSet& queries, int k_max,
                                            const QueryOptions& opts, unsigned threads) {
    if (queries.dim() != index.dim()) {
        fail(ErrorKind::InvalidArgument, "query dimension " + std::to_string(queries.dim()) +
                                             " does not match index dimension " + std::to_string(index.dim()));
    }
    const std::size_t n = queries.rows();
    // Sequential validation so the first offending row is the one reported.
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = queries.data.row(static_cast<Eigen::Index>(i));
        index.validate_query(std::span<const double>(row.data(), queries.dim()), k_max, opts);
    }
    const PanelScanner scanner(index.panels_, index.size(), index.dim());
    const auto k = static_cast<std::size_t>(k_max);
    std::vector<double> out(n * k);
    parallel_rows(n, threads, [&](std::size_t i) {
        const double* row = queries.data.row(static_cast<Eigen::Index>(i)).data();
        const auto d = select_nearest(scanner, row, k, opts.exclude_self_distance_zero);
        std::copy(d.begin(), d.end(), out.begin() + static_cast<std::ptrdiff_t>(i * k));
    });
    return out;
}

ScoreVector score_knn(const KnnIndex& index, const EmbeddingSet& queries, int k, KnnVariant variant,
                      const QueryOptions& opts, unsigned threads) {
    const auto d = batch_nearest_distances(index, queries, k, opts, threads);
    ScoreVector out;
    out.detector_tag = variant == KnnVariant::Kth ? "knn" : "knn_avg";
    const auto kk = static_cast<std::size_t>(k);
    out.scores.resize(queries.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        const double* row = d.data() + i * kk;
        if (variant == KnnVariant::Kth) {
            out.scores[i] = -row[kk - 1];
        } else {
            out.scores[i] = -std::accumulate(row, row + kk, 0.0) / static_cast<double>(kk);
        }
    }
    return out;
}

std::vector<Decision> decide(const ScoreVector& scores, double lambda) {
    std::vector<Decision> out(scores.size());
    std::transform(scores.scores.begin(), scores.scores.end(), out.begin(),
                   [lambda](double s) { return s >= lambda ? Decision::Id : Decision::Ood; });
    return out;
}

void KnnIndex::save(const std::filesystem::path& path) const {
    if (!unit_rows_) fail(ErrorKind::InvalidArgument, "KNN1 snapshots hold normalized indexes only");
    std::ostringstream out(std::ios::binary);
    out.write(kKnnMagic, 4);
    put_u32(out, static_cast<std::uint32_t>(size()));
    put_u32(out, static_cast<std::uint32_t>(dim()));
    put_u64(out, std::bit_cast<std::uint64_t>(alpha_));
    put_u32(out, static_cast<std::uint32_t>(effective_k_));
    put_u64(out, seed_);
    write_emb1(out, vectors_);
    write_file_atomic(path, out.str());
}

KnnIndex KnnIndex::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    char magic[4];
    if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kKnnMagic)) {
        fail(ErrorKind::Format, path.filename().string() + ": missing KNN1 magic");
    }
    const auto n = static_cast<std::uint32_t>(get_le(in, 4, "row count"));
    const auto m = static_cast<std::uint32_t>(get_le(in, 4, "dimension"));
    const double alpha = std::bit_cast<double>(get_le(in, 8, "alpha"));
    const auto eff_k = static_cast<std::uint32_t>(get_le(in, 4, "effective k"));
    const std::uint64_t seed = get_le(in, 8, "seed");
    EmbeddingSet payload = read_emb1(in, path.filename().string());
    if (payload.rows() != n || payload.dim() != m) {
        fail(ErrorKind::Format, path.filename().string() + ": KNN1 header shape disagrees with payload");
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        fail(ErrorKind::Format, path.filename().string() + ": trailing bytes after index payload");
    }
    if (!(alpha > 0.0 && alpha <= 1.0) || eff_k < 1 || eff_k > n) {
        fail(ErrorKind::Format, path.filename().string() + ": invalid alpha or effective k in KNN1 header");
    }
    payload.normalized = true;
    payload.validate();

    KnnIndex index;
    index.vectors_ = std::move(payload.data);
    index.alpha_ = alpha;
    index.effective_k_ = static_cast<int>(eff_k);
    index.base_k_ = static_cast<int>(eff_k);
    index.seed_ = seed;
    index.panels_ = make_panels(index.vectors_);
    return index;
}

}  // namespace knnood
