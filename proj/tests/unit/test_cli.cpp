#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "knnood/cli.hpp"
#include "knnood/synthgen.hpp"
#include "oracles.hpp"

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = knnood::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

void write_text(const std::filesystem::path& p, const std::string& s) {
    std::ofstream(p, std::ios::binary) << s;
}

std::string read_text(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("eval on perfectly separated scores") {
    oracle::TempDir dir;
    write_text(dir / "id.csv", "score\n1\n1\n1\n");
    write_text(dir / "far.csv", "score\n0\n0\n");
    const auto r = run({"eval", "--input", (dir / "id.csv").string(), "--ood", (dir / "far.csv").string()});
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j["per_ood_set"]["far"]["fpr95"] == 0.0);
    CHECK(j["per_ood_set"]["far"]["auroc"] == 1.0);

    const auto csv = run({"eval", "--input", (dir / "id.csv").string(), "--ood", (dir / "far.csv").string(), "--csv"});
    CHECK(csv.out == "detector,ood_set,fpr95,auroc\nknn,far,0,1\n");
}

TEST_CASE("theory verify prints PASS") {
    const auto r = run({"theory", "verify", "--epsilon", "0.5", "--beta", "0.5", "--k", "10", "--n", "1000", "--m", "3",
                        "--c0", "1"});
    CHECK(r.code == 0);
    CHECK(r.out.rfind("PASS", 0) == 0);
    const auto bad = run({"theory", "verify", "--lambda-offset", "1e-6", "--samples", "1000"});
    CHECK(bad.code == 1);
    CHECK(bad.out.rfind("FAIL", 0) == 0);
}

TEST_CASE("theory converge writes a table") {
    const auto r = run({"theory", "converge", "--grid", "500,5000"});
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("n,k,mean_abs_error\n500,23,", 0) == 0);
}

TEST_CASE("score rejects k beyond the index") {
    oracle::TempDir dir;
    write_text(dir / "train.csv", "1,0\n0,1\n-1,0\n");
    REQUIRE(run({"index", "--input", (dir / "train.csv").string(), "--k", "1", "--out", (dir / "a.knn").string()}).code == 0);
    const auto r = run({"score", "--index", (dir / "a.knn").string(), "--input", (dir / "train.csv").string(), "--k", "7"});
    CHECK(r.code != 0);
    CHECK(r.err.rfind("error: invalid_argument:", 0) == 0);
    CHECK(r.err.find("[1, 3]") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
}

TEST_CASE("bad usage and missing files fail cleanly") {
    CHECK(run({}).code != 0);
    CHECK(run({"frobnicate"}).code != 0);
    const auto r = run({"calibrate", "--input", "/nonexistent/scores.csv"});
    CHECK(r.code != 0);
    CHECK(r.err.rfind("error: io:", 0) == 0);
    CHECK(run({"index", "--input", "x.csv", "--detector", "nope", "--out", "y"}).code != 0);
}

TEST_CASE("convert then the full pipeline is deterministic") {
    oracle::TempDir dir;
    auto spec = knnood::standard_benchmark_spec(3, 500, 100);
    write_text(dir / "spec.txt", knnood::write_manifest(spec));

    auto pipeline = [&](const std::string& tag) {
        const auto d = dir / tag;
        REQUIRE(run({"synth", "--input", (dir / "spec.txt").string(), "--out", d.string()}).code == 0);
        REQUIRE(run({"index", "--input", (d / "id_train.emb").string(), "--k", "5", "--alpha", "0.5", "--seed", "9",
                     "--out", (d / "idx.knn").string()}).code == 0);
        REQUIRE(run({"score", "--index", (d / "idx.knn").string(), "--input", (d / "id_test.emb").string(), "--out",
                     (d / "id.csv").string()}).code == 0);
        REQUIRE(run({"score", "--index", (d / "idx.knn").string(), "--input", (d / "ood_test.emb").string(), "--out",
                     (d / "ood.csv").string()}).code == 0);
        REQUIRE(run({"calibrate", "--input", (d / "id.csv").string(), "--out", (d / "lambda.txt").string()}).code == 0);
        REQUIRE(run({"eval", "--input", (d / "id.csv").string(), "--ood", (d / "ood.csv").string(), "--out",
                     (d / "report.json").string(), "--hist", "bins=10"}).code == 0);
        return d;
    };
    const auto a = pipeline("a");
    const auto b = pipeline("b");
    for (const char* f : {"id_train.emb", "idx.knn", "id.csv", "lambda.txt", "report.json", "report.json.hist.id.csv",
                          "report.json.hist.ood.csv"}) {
        INFO(f);
        CHECK(read_text(a / f) == read_text(b / f));
        CHECK_FALSE(read_text(a / f).empty());
    }
    CHECK(read_text(a / "lambda.txt").rfind("lambda=", 0) == 0);

    // Inline scoring agrees with the score files.
    const auto inline_eval = run({"eval", "--index", (a / "idx.knn").string(), "--input", (a / "id_test.emb").string(),
                                  "--ood", (a / "ood_test.emb").string(), "--csv"});
    REQUIRE(inline_eval.code == 0);
    const auto file_eval = run({"eval", "--input", (a / "id.csv").string(), "--ood", (a / "ood.csv").string(), "--csv"});
    // Set names come from file stems, so compare the metric columns only.
    auto metrics = [](const std::string& csv) {
        const auto row = csv.substr(csv.find('\n') + 1);
        return row.substr(row.find(',', row.find(',') + 1));
    };
    CHECK(inline_eval.out.find("knn,ood_test,") != std::string::npos);
    CHECK(metrics(inline_eval.out) == metrics(file_eval.out));

    // Sweep and the baselines run end to end.
    const auto sweep = run({"sweep", "--index", (a / "idx.knn").string(), "--input", (a / "id_test.emb").string(),
                            "--ood", (a / "ood_test.emb").string(), "--grid", "1,5,20"});
    CHECK(sweep.code == 0);
    CHECK(sweep.out.rfind("k,fpr95,auroc,chosen\n", 0) == 0);
    CHECK(run({"index", "--detector", "maha", "--input", (a / "id_train.emb").string(), "--normalize", "--out",
               (a / "g.mdl").string()}).code == 0);
    CHECK(run({"score", "--detector", "maha", "--model", (a / "g.mdl").string(), "--input",
               (a / "id_test.emb").string(), "--normalize"}).code == 0);
    CHECK(run({"score", "--detector", "energy", "--input", (a / "id_test.logits.emb").string()}).code == 0);
    CHECK(run({"index", "--detector", "pca", "--components", "3", "--input", (a / "id_train.emb").string(), "--out",
               (a / "p.mdl").string()}).code == 0);
    CHECK(run({"score", "--detector", "pca", "--model", (a / "p.mdl").string(), "--input",
               (a / "ood_test.emb").string()}).code == 0);

    write_text(dir / "raw.csv", "3,4\n1,1\n");
    CHECK(run({"convert", "--input", (dir / "raw.csv").string(), "--out", (dir / "raw.emb").string()}).code == 0);
    CHECK(std::filesystem::file_size(dir / "raw.emb") == 12 + 4 * 4);
}
