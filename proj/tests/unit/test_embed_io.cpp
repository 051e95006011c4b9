#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "knnood/embed_io.hpp"
#include "knnood/error.hpp"
#include "oracles.hpp"

using namespace knnood;

namespace {

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
}

std::string read_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void put_u32(std::string& s, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& s, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(s, bits);
}

EmbeddingSet random_set(std::size_t n, int m, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    EmbeddingSet e;
    e.data.resize(static_cast<Eigen::Index>(n), m);
    // Float-representable values so the 32-bit payload is lossless.
    for (Eigen::Index i = 0; i < e.data.rows(); ++i)
        for (int j = 0; j < m; ++j) e.data(i, j) = static_cast<double>(static_cast<float>(g(rng)));
    return e;
}

}  // namespace

TEST_CASE("csv parse gives the expected rows") {
    oracle::TempDir dir;
    write_text(dir / "a.csv", "3,4\n0,1\n");
    const auto e = load_embeddings(dir / "a.csv", FileFormat::Csv);
    REQUIRE(e.rows() == 2);
    REQUIRE(e.dim() == 2);
    CHECK(e.data(0, 0) == 3.0);
    CHECK(e.data(0, 1) == 4.0);
    CHECK(e.data(1, 0) == 0.0);
    CHECK(e.data(1, 1) == 1.0);
    CHECK_FALSE(e.labels.has_value());
}

TEST_CASE("hand-built EMB1 file loads as the same matrix") {
    oracle::TempDir dir;
    std::string bytes = "EMB1";
    put_u32(bytes, 2);
    put_u32(bytes, 2);
    for (float f : {3.0f, 4.0f, 0.0f, 1.0f}) put_f32(bytes, f);
    write_text(dir / "a.emb", bytes);
    const auto e = load_embeddings(dir / "a.emb", FileFormat::Binary);
    REQUIRE(e.rows() == 2);
    CHECK(e.data(0, 0) == 3.0);
    CHECK(e.data(0, 1) == 4.0);
    CHECK(e.data(1, 1) == 1.0);

    // The writer must produce exactly the same bytes.
    save_embeddings(e, dir / "b.emb", FileFormat::Binary);
    CHECK(read_bytes(dir / "b.emb") == bytes);
}

TEST_CASE("csv with nan names the offending cell") {
    oracle::TempDir dir;
    write_text(dir / "bad.csv", "1,2\n3,nan\n");
    try {
        load_embeddings(dir / "bad.csv", FileFormat::Csv);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
        CHECK(std::string(e.what()).find("row 1, col 1") != std::string::npos);
    }
}

TEST_CASE("csv rejects ragged rows and junk") {
    oracle::TempDir dir;
    write_text(dir / "ragged.csv", "1,2\n3,4,5\n");
    CHECK_THROWS_AS(load_embeddings(dir / "ragged.csv", FileFormat::Csv), Error);
    write_text(dir / "junk.csv", "1,abc\n");
    CHECK_THROWS_AS(load_embeddings(dir / "junk.csv", FileFormat::Csv), Error);
    write_text(dir / "one_col.csv", "1\n2\n");
    CHECK_THROWS_AS(load_embeddings(dir / "one_col.csv", FileFormat::Csv), Error);
    write_text(dir / "empty.csv", "");
    CHECK_THROWS_AS(load_embeddings(dir / "empty.csv", FileFormat::Csv), Error);
}

TEST_CASE("csv label column") {
    oracle::TempDir dir;
    write_text(dir / "l.csv", "1,2,0\n3,4,7\n");
    CsvOptions opts;
    opts.last_column_is_label = true;
    const auto e = load_embeddings(dir / "l.csv", FileFormat::Csv, opts);
    REQUIRE(e.labels.has_value());
    CHECK(e.dim() == 2);
    CHECK((*e.labels)[1] == 7u);
}

TEST_CASE("binary round trip is exact, labels included") {
    oracle::TempDir dir;
    auto e = random_set(10, 8, 42);
    e.labels = std::vector<std::uint32_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    save_embeddings(e, dir / "r.emb", FileFormat::Binary);
    const auto back = load_embeddings(dir / "r.emb", FileFormat::Binary);
    CHECK(back.data == e.data);
    CHECK(back.labels == e.labels);
    save_embeddings(back, dir / "r2.emb", FileFormat::Binary);
    CHECK(read_bytes(dir / "r.emb") == read_bytes(dir / "r2.emb"));
}

TEST_CASE("csv round trip within 1e-9 relative") {
    oracle::TempDir dir;
    EmbeddingSet e;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    e.data.resize(10, 8);
    for (Eigen::Index i = 0; i < 10; ++i)
        for (Eigen::Index j = 0; j < 8; ++j) e.data(i, j) = u(rng);
    save_embeddings(e, dir / "r.csv", FileFormat::Csv);
    const auto back = load_embeddings(dir / "r.csv", FileFormat::Csv);
    for (Eigen::Index i = 0; i < 10; ++i)
        for (Eigen::Index j = 0; j < 8; ++j) CHECK(oracle::relative_error(back.data(i, j), e.data(i, j)) <= 1e-9);
}

TEST_CASE("wrong declared format is a parse error") {
    oracle::TempDir dir;
    const auto e = random_set(4, 3, 1);
    save_embeddings(e, dir / "x.emb", FileFormat::Binary);
    CHECK_THROWS_AS(load_embeddings(dir / "x.emb", FileFormat::Csv), Error);
    save_embeddings(e, dir / "x.csv", FileFormat::Csv);
    try {
        load_embeddings(dir / "x.csv", FileFormat::Binary);
        FAIL("expected an error");
    } catch (const Error& err) {
        CHECK(err.kind() == ErrorKind::Format);
    }
}

TEST_CASE("binary shape mismatch and truncation are rejected") {
    oracle::TempDir dir;
    std::string bytes = "EMB1";
    put_u32(bytes, 2);
    put_u32(bytes, 2);
    for (float f : {1.0f, 2.0f, 3.0f}) put_f32(bytes, f);
    write_text(dir / "short.emb", bytes);
    CHECK_THROWS_AS(load_embeddings(dir / "short.emb", FileFormat::Binary), Error);

    put_f32(bytes, 4.0f);
    put_f32(bytes, 5.0f);
    write_text(dir / "long.emb", bytes);
    CHECK_THROWS_AS(load_embeddings(dir / "long.emb", FileFormat::Binary), Error);

    CHECK_THROWS_AS(load_embeddings(dir / "missing.emb", FileFormat::Binary), Error);
}

TEST_CASE("logits share the embedding contracts") {
    oracle::TempDir dir;
    LogitSet l{random_set(5, 3, 9).data};
    save_logits(l, dir / "l.emb", FileFormat::Binary);
    CHECK(load_logits(dir / "l.emb", FileFormat::Binary).data == l.data);
    save_logits(l, dir / "l.csv", FileFormat::Csv);
    CHECK(load_logits(dir / "l.csv", FileFormat::Csv).classes() == 3);
    write_text(dir / "bad.csv", "1,inf\n");
    CHECK_THROWS_AS(load_logits(dir / "bad.csv", FileFormat::Csv), Error);
}

TEST_CASE("normalize") {
    EmbeddingSet e;
    e.data.resize(1, 2);
    e.data << 3, 4;
    auto z = normalize(e);
    CHECK(z.normalized);
    CHECK(z.data(0, 0) == doctest::Approx(0.6).epsilon(1e-15));
    CHECK(z.data(0, 1) == doctest::Approx(0.8).epsilon(1e-15));

    e.data.resize(1, 3);
    e.data << 0, 0, 1;
    z = normalize(e);
    CHECK(z.data(0, 2) == 1.0);
    CHECK(z.data(0, 0) == 0.0);

    e.data.resize(1, 2);
    e.data << 1, 1;
    z = normalize(e);
    CHECK(z.data(0, 0) == doctest::Approx(0.70710678).epsilon(1e-8));
    CHECK(z.data(0, 1) == doctest::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-15));

    e.data.resize(2, 2);
    e.data << 1, 1, 0, 0;
    CHECK_THROWS_AS(normalize(e), Error);
}

TEST_CASE("normalized sets enforce unit rows") {
    EmbeddingSet e;
    e.data.resize(1, 2);
    e.data << 1, 1;
    e.normalized = true;
    CHECK_THROWS_AS(e.validate(), Error);
}

TEST_CASE("react clamp") {
    EmbeddingSet e;
    e.data.resize(1, 2);
    e.data << 0.1, 5.0;
    const auto c = clamp_react(e, ClampSpec::with_threshold(1.0));
    CHECK(c.data(0, 0) == 0.1);
    CHECK(c.data(0, 1) == 1.0);

    const auto noop = clamp_react(e, ClampSpec::with_threshold(100.0));
    CHECK(noop.data == e.data);

    EmbeddingSet z = normalize(e);
    CHECK_THROWS_AS(clamp_react(z, ClampSpec::with_threshold(1.0)), Error);
    CHECK_THROWS_AS(ClampSpec::with_threshold(0.0), Error);
    CHECK_THROWS_AS(ClampSpec::with_percentile(0.0), Error);
    CHECK_THROWS_AS(ClampSpec::with_percentile(101.0), Error);
}

TEST_CASE("react percentile matches a sort-based order statistic") {
    // Shuffled grid 1..200 laid out as 20x10.
    std::vector<double> grid(200);
    for (int i = 0; i < 200; ++i) grid[static_cast<std::size_t>(i)] = 0.5 * (i + 1);
    std::mt19937_64 rng(3);
    std::shuffle(grid.begin(), grid.end(), rng);
    EmbeddingSet calib;
    calib.data = Eigen::Map<RowMatrix>(grid.data(), 20, 10);

    std::vector<double> sorted = grid;
    std::sort(sorted.begin(), sorted.end());
    // Nearest rank: ceil(0.9 * 200) = 180th smallest.
    const double expected = sorted[179];
    CHECK(resolve_clamp_level(ClampSpec::with_percentile(90.0), &calib) == expected);
    CHECK(expected == 90.0);
    CHECK(resolve_clamp_level(ClampSpec::with_percentile(100.0), &calib) == sorted.back());

    const auto clamped = clamp_react(calib, ClampSpec::with_percentile(90.0), &calib);
    CHECK(clamped.data.maxCoeff() == expected);
    CHECK_THROWS_AS(resolve_clamp_level(ClampSpec::with_percentile(90.0), nullptr), Error);
}

TEST_CASE("atomic write leaves no temp file") {
    oracle::TempDir dir;
    write_file_atomic(dir / "f.txt", "hello");
    CHECK(read_bytes(dir / "f.txt") == "hello");
    CHECK_FALSE(std::filesystem::exists(dir / "f.txt.tmp"));
}
