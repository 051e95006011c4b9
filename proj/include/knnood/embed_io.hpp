#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace knnood {

/// Dense row-major matrix; one sample per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class FileFormat { Binary, Csv };

FileFormat parse_file_format(const std::string& name);

/// Tolerance on row norms for sets flagged as normalized.
inline constexpr double kUnitNormTolerance = 1e-6;

/**
 * A set of feature vectors (one per row), optionally labeled.
 *
 * Entries are always finite. When `normalized` is set every row has unit L2
 * norm. Use `validate()` after mutating fields directly.
 */
struct EmbeddingSet {
    RowMatrix data;
    std::optional<std::vector<std::uint32_t>> labels;
    bool normalized = false;
    std::string source_tag;

    std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(data.cols()); }

    void validate() const;
};

/// Pre-softmax classifier outputs, one row per sample.
struct LogitSet {
    RowMatrix data;

    std::size_t rows() const { return static_cast<std::size_t>(data.rows()); }
    std::size_t classes() const { return static_cast<std::size_t>(data.cols()); }

    /// Checks finiteness and C >= 2; `expected_classes`, when given, must match C.
    void validate(std::optional<std::size_t> expected_classes = std::nullopt) const;
};

/// ReAct clamp level: either a fixed cap or a percentile of calibration activations.
class ClampSpec {
public:
    static ClampSpec with_threshold(double threshold);
    static ClampSpec with_percentile(double percentile);

    bool has_threshold() const { return threshold_.has_value(); }
    bool has_percentile() const { return percentile_.has_value(); }
    double threshold() const { return *threshold_; }
    double percentile() const { return *percentile_; }

private:
    ClampSpec() = default;
    std::optional<double> threshold_;
    std::optional<double> percentile_;
};

struct CsvOptions {
    /// Treat the last column as an integer class label.
    bool last_column_is_label = false;
};

EmbeddingSet load_embeddings(const std::filesystem::path& path, FileFormat format,
                             const CsvOptions& csv = {});
void save_embeddings(const EmbeddingSet& e, const std::filesystem::path& path, FileFormat format);

/// Stream variants used by the file functions and by containers that embed EMB1 blocks.
EmbeddingSet read_emb1(std::istream& in, const std::string& what);
void write_emb1(std::ostream& out, const RowMatrix& data,
                const std::vector<std::uint32_t>* labels = nullptr);
EmbeddingSet parse_csv(std::istream& in, const std::string& what, const CsvOptions& csv = {});
void write_csv(std::ostream& out, const EmbeddingSet& e);

LogitSet load_logits(const std::filesystem::path& path, FileFormat format);
void save_logits(const LogitSet& l, const std::filesystem::path& path, FileFormat format);

/// Divides every row by its L2 norm. Throws on an all-zero row.
EmbeddingSet normalize(const EmbeddingSet& e);

/// Cap level `c` for a clamp spec; percentile specs are resolved against `calib`.
double resolve_clamp_level(const ClampSpec& spec, const EmbeddingSet* calib);

/// Elementwise min(x, c) on raw activations.
EmbeddingSet clamp_react(const EmbeddingSet& e, const ClampSpec& spec,
                         const EmbeddingSet* calib = nullptr);

/// Nearest-rank percentile of all entries of `values` (p in (0, 100]).
double flattened_percentile(const RowMatrix& values, double percentile);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace knnood
