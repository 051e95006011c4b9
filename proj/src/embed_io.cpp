#include "knnood/embed_io.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string_view>

#include "knnood/error.hpp"

namespace knnood {

namespace {

constexpr std::array<char, 4> kEmbMagic{'E', 'M', 'B', '1'};
constexpr std::array<char, 4> kLabelMagic{'L', 'B', 'L', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                           static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what, const char* field) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        fail(ErrorKind::Format, what + ": truncated header reading " + field);
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

bool read_magic(std::istream& in, const std::array<char, 4>& magic) {
    char got[4];
    if (!in.read(got, 4)) return false;
    return std::equal(magic.begin(), magic.end(), got);
}

std::string cell_name(std::size_t row, std::size_t col) {
    return "row " + std::to_string(row) + ", col " + std::to_string(col);
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

void check_row_norms(const RowMatrix& data, const std::string& what) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        const double norm = data.row(i).norm();
        if (norm == 0.0) {
            fail(ErrorKind::InvalidArgument, what + ": all-zero row " + std::to_string(i) + " in normalized set");
        }
        if (std::abs(norm - 1.0) > kUnitNormTolerance) {
            fail(ErrorKind::InvalidArgument,
                 what + ": row " + std::to_string(i) + " has norm " + std::to_string(norm) + " but set is normalized");
        }
    }
}

void check_finite(const RowMatrix& data, const std::string& what) {
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            if (!std::isfinite(data(i, j))) {
                fail(ErrorKind::Format, what + ": non-finite value at " +
                                            cell_name(static_cast<std::size_t>(i), static_cast<std::size_t>(j)));
            }
        }
    }
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return in;
}

}  // namespace

FileFormat parse_file_format(const std::string& name) {
    if (name == "binary" || name == "emb" || name == "bin") return FileFormat::Binary;
    if (name == "csv") return FileFormat::Csv;
    fail(ErrorKind::InvalidArgument, "unknown file format '" + name + "' (expected binary or csv)");
}

void EmbeddingSet::validate() const {
    const std::string what = source_tag.empty() ? std::string("embedding set") : source_tag;
    if (data.rows() < 1) fail(ErrorKind::InvalidArgument, what + ": needs at least one row");
    if (data.cols() < 2) fail(ErrorKind::InvalidArgument, what + ": needs at least two columns");
    check_finite(data, what);
    if (labels && labels->size() != rows()) {
        fail(ErrorKind::InvalidArgument, what + ": label count " + std::to_string(labels->size()) +
                                             " does not match row count " + std::to_string(rows()));
    }
    if (normalized) check_row_norms(data, what);
}

void LogitSet::validate(std::optional<std::size_t> expected_classes) const {
    if (data.rows() < 1) fail(ErrorKind::InvalidArgument, "logit set: needs at least one row");
    if (data.cols() < 2) fail(ErrorKind::InvalidArgument, "logit set: needs at least two classes");
    check_finite(data, "logit set");
    if (expected_classes && *expected_classes != classes()) {
        fail(ErrorKind::InvalidArgument, "logit set: has " + std::to_string(classes()) + " classes, expected " +
                                             std::to_string(*expected_classes));
    }
}

ClampSpec ClampSpec::with_threshold(double threshold) {
    if (!(threshold > 0.0) || !std::isfinite(threshold)) {
        fail(ErrorKind::InvalidArgument, "clamp threshold must be a positive finite number");
    }
    ClampSpec spec;
    spec.threshold_ = threshold;
    return spec;
}

ClampSpec ClampSpec::with_percentile(double percentile) {
    if (!(percentile > 0.0 && percentile <= 100.0)) {
        fail(ErrorKind::InvalidArgument, "clamp percentile must lie in (0, 100], got " + format_double(percentile));
    }
    ClampSpec spec;
    spec.percentile_ = percentile;
    return spec;
}

void write_emb1(std::ostream& out, const RowMatrix& data, const std::vector<std::uint32_t>* labels) {
    out.write(kEmbMagic.data(), 4);
    put_u32(out, static_cast<std::uint32_t>(data.rows()));
    put_u32(out, static_cast<std::uint32_t>(data.cols()));
    for (Eigen::Index i = 0; i < data.rows(); ++i) {
        for (Eigen::Index j = 0; j < data.cols(); ++j) {
            put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(data(i, j))));
        }
    }
    if (labels) {
        out.write(kLabelMagic.data(), 4);
        for (auto label : *labels) put_u32(out, label);
    }
}

EmbeddingSet read_emb1(std::istream& in, const std::string& what) {
    if (!read_magic(in, kEmbMagic)) fail(ErrorKind::Format, what + ": missing EMB1 magic");
    const std::uint32_t n = get_u32(in, what, "row count");
    const std::uint32_t m = get_u32(in, what, "column count");
    if (n == 0 || m == 0) fail(ErrorKind::Format, what + ": header declares an empty matrix");

    EmbeddingSet e;
    e.source_tag = what;
    e.data.resize(n, m);
    std::vector<unsigned char> row_bytes(static_cast<std::size_t>(m) * 4);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!in.read(reinterpret_cast<char*>(row_bytes.data()), static_cast<std::streamsize>(row_bytes.size()))) {
            fail(ErrorKind::Format, what + ": payload truncated at row " + std::to_string(i) + " (shape mismatch)");
        }
        for (std::uint32_t j = 0; j < m; ++j) {
            const unsigned char* b = row_bytes.data() + 4 * j;
            const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                       (static_cast<std::uint32_t>(b[2]) << 16) |
                                       (static_cast<std::uint32_t>(b[3]) << 24);
            const float value = std::bit_cast<float>(bits);
            if (!std::isfinite(value)) fail(ErrorKind::Format, what + ": non-finite value at " + cell_name(i, j));
            e.data(i, j) = static_cast<double>(value);
        }
    }

    // Optional label block; only consumed when its tag is next in the stream.
    char tag[4];
    const auto mark = in.tellg();
    if (in.read(tag, 4)) {
        if (std::equal(kLabelMagic.begin(), kLabelMagic.end(), tag)) {
            std::vector<std::uint32_t> labels(n);
            for (std::uint32_t i = 0; i < n; ++i) labels[i] = get_u32(in, what, "label block");
            e.labels = std::move(labels);
            return e;
        }
    }
    in.clear();
    in.seekg(mark);
    return e;
}

EmbeddingSet parse_csv(std::istream& in, const std::string& what, const CsvOptions& csv) {
    std::vector<double> values;
    std::vector<std::uint32_t> labels;
    std::size_t cols = 0;
    std::size_t row = 0;
    std::string line;
    while (std::getline(in, line)) {
        std::string_view view = trim(line);
        if (view.empty()) continue;
        std::vector<std::string_view> cells;
        std::size_t start = 0;
        while (true) {
            const auto comma = view.find(',', start);
            cells.push_back(trim(view.substr(start, comma == std::string_view::npos ? comma : comma - start)));
            if (comma == std::string_view::npos) break;
            start = comma + 1;
        }
        std::size_t feature_cols = cells.size();
        if (csv.last_column_is_label) {
            if (feature_cols < 2) fail(ErrorKind::Format, what + ": row " + std::to_string(row) + " has no label column");
            --feature_cols;
        }
        if (row == 0) {
            cols = feature_cols;
        } else if (feature_cols != cols) {
            fail(ErrorKind::Format, what + ": row " + std::to_string(row) + " has " + std::to_string(feature_cols) +
                                        " values, expected " + std::to_string(cols) + " (shape mismatch)");
        }
        for (std::size_t j = 0; j < feature_cols; ++j) {
            const std::string_view cell = cells[j];
            double v = 0.0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
                fail(ErrorKind::Format, what + ": cannot parse '" + std::string(cell) + "' at " + cell_name(row, j));
            }
            if (!std::isfinite(v)) fail(ErrorKind::Format, what + ": non-finite value at " + cell_name(row, j));
            values.push_back(v);
        }
        if (csv.last_column_is_label) {
            const std::string_view cell = cells.back();
            std::uint32_t label = 0;
            const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), label);
            if (res.ec != std::errc() || res.ptr != cell.data() + cell.size()) {
                fail(ErrorKind::Format, what + ": bad label '" + std::string(cell) + "' at " + cell_name(row, feature_cols));
            }
            labels.push_back(label);
        }
        ++row;
    }
    if (row == 0) fail(ErrorKind::Format, what + ": no data rows");

    EmbeddingSet e;
    e.source_tag = what;
    e.data = Eigen::Map<const RowMatrix>(values.data(), static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(cols));
    if (csv.last_column_is_label) e.labels = std::move(labels);
    return e;
}

void write_csv(std::ostream& out, const EmbeddingSet& e) {
    for (Eigen::Index i = 0; i < e.data.rows(); ++i) {
        for (Eigen::Index j = 0; j < e.data.cols(); ++j) {
            if (j) out << ',';
            out << format_double(e.data(i, j));
        }
        if (e.labels) out << ',' << (*e.labels)[static_cast<std::size_t>(i)];
        out << '\n';
    }
}

EmbeddingSet load_embeddings(const std::filesystem::path& path, FileFormat format, const CsvOptions& csv) {
    auto in = open_input(path);
    const std::string what = path.filename().string();
    EmbeddingSet e;
    if (format == FileFormat::Binary) {
        e = read_emb1(in, what);
        if (in.peek() != std::char_traits<char>::eof()) {
            fail(ErrorKind::Format, what + ": trailing bytes after payload (shape mismatch)");
        }
    } else {
        e = parse_csv(in, what, csv);
    }
    e.normalized = false;
    e.validate();
    return e;
}

void save_embeddings(const EmbeddingSet& e, const std::filesystem::path& path, FileFormat format) {
    std::ostringstream out(std::ios::binary);
    if (format == FileFormat::Binary) {
        write_emb1(out, e.data, e.labels ? &*e.labels : nullptr);
    } else {
        write_csv(out, e);
    }
    write_file_atomic(path, out.str());
}

LogitSet load_logits(const std::filesystem::path& path, FileFormat format) {
    const EmbeddingSet e = load_embeddings(path, format);
    LogitSet l{e.data};
    l.validate();
    return l;
}

void save_logits(const LogitSet& l, const std::filesystem::path& path, FileFormat format) {
    EmbeddingSet e;
    e.data = l.data;
    save_embeddings(e, path, format);
}

EmbeddingSet normalize(const EmbeddingSet& e) {
    EmbeddingSet out = e;
    for (Eigen::Index i = 0; i < out.data.rows(); ++i) {
        const double norm = out.data.row(i).norm();
        if (norm == 0.0) fail(ErrorKind::InvalidArgument, "cannot normalize zero-norm row " + std::to_string(i));
        out.data.row(i) /= norm;
    }
    out.normalized = true;
    return out;
}

double flattened_percentile(const RowMatrix& values, double percentile) {
    if (values.size() == 0) fail(ErrorKind::InvalidArgument, "percentile of an empty set");
    if (!(percentile > 0.0 && percentile <= 100.0)) {
        fail(ErrorKind::InvalidArgument, "percentile must lie in (0, 100]");
    }
    std::vector<double> flat(values.data(), values.data() + values.size());
    const auto n = flat.size();
    auto rank = static_cast<std::size_t>(std::ceil(percentile / 100.0 * static_cast<double>(n)));
    rank = std::clamp<std::size_t>(rank, 1, n);
    std::nth_element(flat.begin(), flat.begin() + static_cast<std::ptrdiff_t>(rank - 1), flat.end());
    return flat[rank - 1];
}

double resolve_clamp_level(const ClampSpec& spec, const EmbeddingSet* calib) {
    if (spec.has_threshold()) return spec.threshold();
    if (calib == nullptr || calib->data.size() == 0) {
        fail(ErrorKind::InvalidArgument, "percentile clamp needs a non-empty calibration set");
    }
    if (calib->normalized) fail(ErrorKind::InvalidArgument, "clamp calibration set must hold raw activations");
    const double c = flattened_percentile(calib->data, spec.percentile());
    if (!(c > 0.0)) {
        fail(ErrorKind::InvalidArgument, "percentile " + format_double(spec.percentile()) +
                                             " gives non-positive clamp level " + format_double(c));
    }
    return c;
}

EmbeddingSet clamp_react(const EmbeddingSet& e, const ClampSpec& spec, const EmbeddingSet* calib) {
    if (e.normalized) fail(ErrorKind::InvalidArgument, "clamp must be applied to raw activations, before normalization");
    const double c = resolve_clamp_level(spec, calib);
    EmbeddingSet out = e;
    out.data = out.data.cwiseMin(c);
    return out;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) fail(ErrorKind::Io, "cannot open " + tmp.string() + " for writing");
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        out.flush();
        if (!out) fail(ErrorKind::Io, "write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        fail(ErrorKind::Io, "cannot rename into " + path.string());
    }
}

}  // namespace knnood
