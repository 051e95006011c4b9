#include "knnood/cli.hpp"

#include <chrono>
#include <charconv>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include <CLI11.hpp>

#include "knnood/detectors.hpp"
#include "knnood/embed_io.hpp"
#include "knnood/error.hpp"
#include "knnood/evalkit.hpp"
#include "knnood/knn_core.hpp"
#include "knnood/synthgen.hpp"
#include "knnood/theory_lab.hpp"

namespace knnood::cli {

namespace {

namespace fs = std::filesystem;

enum class Detector { Knn, KnnAvg, Maha, Msp, Energy, Lof, Pca };

const std::map<std::string, Detector> kDetectors = {
    {"knn", Detector::Knn}, {"knn_avg", Detector::KnnAvg}, {"maha", Detector::Maha}, {"msp", Detector::Msp},
    {"energy", Detector::Energy}, {"lof", Detector::Lof}, {"pca", Detector::Pca},
};

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

FileFormat format_for(const fs::path& path, const std::string& override_name) {
    if (!override_name.empty()) return parse_file_format(override_name);
    return path.extension() == ".csv" ? FileFormat::Csv : FileFormat::Binary;
}

void require_exists(const fs::path& path, const char* flag) {
    if (path.empty()) fail(ErrorKind::InvalidArgument, std::string(flag) + " is required");
    if (!fs::exists(path)) fail(ErrorKind::Io, std::string(flag) + " file not found: " + path.string());
}

std::vector<double> read_scores(const fs::path& path) {
    require_exists(path, "score");
    std::ifstream in(path);
    std::vector<double> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty() || (lineno == 1 && line == "score")) continue;
        double v = 0.0;
        const auto res = std::from_chars(line.data(), line.data() + line.size(), v);
        if (res.ec != std::errc() || res.ptr != line.data() + line.size() || !std::isfinite(v)) {
            fail(ErrorKind::Format, path.filename().string() + ": bad score on line " + std::to_string(lineno));
        }
        out.push_back(v);
    }
    if (out.empty()) fail(ErrorKind::Format, path.filename().string() + ": no scores");
    return out;
}

std::string scores_csv(const ScoreVector& s) {
    std::string out = "score\n";
    for (double v : s.scores) out += fmt(v) + '\n';
    return out;
}

struct Common {
    fs::path input;
    std::vector<fs::path> ood;
    std::string detector = "knn";
    int k = 0;
    double alpha = 1.0;
    std::uint64_t seed = 0;
    double tpr = 0.95;
    double react_percentile = 0.0;
    fs::path out;
    bool csv = false;
    std::string hist;
    std::string input_format;
    bool labels = false;
};

Detector parse_detector(const std::string& name) {
    const auto it = kDetectors.find(name);
    if (it == kDetectors.end()) fail(ErrorKind::InvalidArgument, "unknown detector '" + name + "'");
    return it->second;
}

EmbeddingSet load_input(const fs::path& path, const Common& c) {
    require_exists(path, "--input");
    CsvOptions csv;
    csv.last_column_is_label = c.labels;
    return load_embeddings(path, format_for(path, c.input_format), csv);
}

/// Optional ReAct clamp then L2 normalization; the clamp level comes from `calib`.
EmbeddingSet prepare_knn_features(const EmbeddingSet& raw, const Common& c, const EmbeddingSet* calib) {
    if (c.react_percentile > 0.0) {
        const ClampSpec spec = ClampSpec::with_percentile(c.react_percentile);
        return normalize(clamp_react(raw, spec, calib ? calib : &raw));
    }
    return normalize(raw);
}

std::size_t parse_hist_bins(const std::string& text) {
    std::string digits = text;
    if (digits.rfind("bins=", 0) == 0) digits = digits.substr(5);
    std::size_t bins = 0;
    const auto res = std::from_chars(digits.data(), digits.data() + digits.size(), bins);
    if (res.ec != std::errc() || res.ptr != digits.data() + digits.size() || bins == 0) {
        fail(ErrorKind::InvalidArgument, "--hist expects bins=N with N >= 1, got '" + text + "'");
    }
    return bins;
}

std::vector<int> parse_grid(const std::string& text) {
    std::vector<int> grid;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        int v = 0;
        const auto res = std::from_chars(item.data(), item.data() + item.size(), v);
        if (res.ec != std::errc() || res.ptr != item.data() + item.size()) {
            fail(ErrorKind::InvalidArgument, "bad grid value '" + item + "'");
        }
        grid.push_back(v);
    }
    if (grid.empty()) fail(ErrorKind::InvalidArgument, "grid is empty");
    return grid;
}

void write_output(const fs::path& path, const std::string& contents, std::ostream& out) {
    if (path.empty()) {
        out << contents;
    } else {
        write_file_atomic(path, contents);
    }
}

// Commands.

int cmd_convert(const Common& c, std::ostream&) {
    if (c.out.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
    const EmbeddingSet e = load_input(c.input, c);
    save_embeddings(e, c.out, FileFormat::Binary);
    return 0;
}

int cmd_synth(const Common& c, const std::string& preset, std::size_t n_id, std::size_t n_ood, std::ostream&) {
    if (c.out.empty()) fail(ErrorKind::InvalidArgument, "--out directory is required");
    SyntheticSpec spec;
    if (!c.input.empty()) {
        require_exists(c.input, "--input");
        std::ifstream in(c.input);
        std::stringstream text;
        text << in.rdbuf();
        spec = parse_manifest(text.str());
    } else if (preset == "standard") {
        spec = standard_benchmark_spec(c.seed);
    } else if (preset == "nongaussian") {
        spec = non_gaussian_spec(c.seed);
    } else if (preset == "norm_disparity") {
        spec = norm_disparity_spec(c.seed);
    } else {
        fail(ErrorKind::InvalidArgument, "synth needs --input manifest or --preset standard|nongaussian|norm_disparity");
    }
    if (n_id) spec.n_id = n_id;
    if (n_ood) spec.n_ood = n_ood;
    spec.validate();

    const Benchmark b = make_benchmark(spec);
    fs::create_directories(c.out);
    save_embeddings(b.id_train, c.out / "id_train.emb", FileFormat::Binary);
    save_embeddings(b.id_test, c.out / "id_test.emb", FileFormat::Binary);
    save_embeddings(b.ood_test, c.out / "ood_test.emb", FileFormat::Binary);
    if (b.id_test_logits) {
        save_logits(*b.id_test_logits, c.out / "id_test.logits.emb", FileFormat::Binary);
        save_logits(*b.ood_test_logits, c.out / "ood_test.logits.emb", FileFormat::Binary);
    }
    write_file_atomic(c.out / "manifest.txt", write_manifest(spec));
    return 0;
}

int cmd_index(const Common& c, int components, bool normalize_features, std::optional<double> ridge, std::ostream&) {
    if (c.out.empty()) fail(ErrorKind::InvalidArgument, "--out is required");
    const Detector det = parse_detector(c.detector);
    const EmbeddingSet raw = load_input(c.input, c);
    switch (det) {
        case Detector::Knn:
        case Detector::KnnAvg:
        case Detector::Lof: {
            const int k = c.k > 0 ? c.k : (det == Detector::Lof ? kDefaultLofK : 50);
            const EmbeddingSet z = prepare_knn_features(raw, c, nullptr);
            KnnIndex::build(z, c.alpha, k, c.seed).save(c.out);
            return 0;
        }
        case Detector::Maha: {
            EmbeddingSet features = normalize_features ? normalize(raw) : raw;
            if (!features.labels) fail(ErrorKind::InvalidArgument, "maha index needs labeled input");
            save_model(fit_gaussian(features, ridge), c.out);
            return 0;
        }
        case Detector::Pca: {
            EmbeddingSet features = normalize_features ? normalize(raw) : raw;
            save_model(fit_pca(features, components), c.out);
            return 0;
        }
        case Detector::Msp:
        case Detector::Energy:
            fail(ErrorKind::InvalidArgument, "detector " + c.detector + " works on logits and needs no index");
    }
    return 0;
}

struct ScoringSource {
    fs::path index;
    fs::path model;
    fs::path calib;
    bool normalize_features = false;
    double temperature = 1.0;
};

/// Loads whatever the detector needs once, then scores any number of query files.
class Scorer {
public:
    Scorer(const Common& c, const ScoringSource& src) : c_(c), src_(src), det_(parse_detector(c.detector)) {
        switch (det_) {
            case Detector::Knn:
            case Detector::KnnAvg:
            case Detector::Lof:
                require_exists(src.index, "--index");
                index_ = KnnIndex::load(src.index);
                if (c.react_percentile > 0.0) {
                    require_exists(src.calib, "--calib");
                    calib_ = load_input(src.calib, c_);
                }
                if (det_ == Detector::Lof) lof_.emplace(index_->vectors(), c.k > 0 ? c.k : kDefaultLofK);
                break;
            case Detector::Maha:
                require_exists(src.model, "--model");
                gaussian_.emplace(load_gaussian_model(src.model));
                break;
            case Detector::Pca:
                require_exists(src.model, "--model");
                pca_ = load_pca_model(src.model);
                break;
            case Detector::Msp:
            case Detector::Energy:
                break;
        }
    }

    struct Timed {
        ScoreVector scores;
        std::int64_t elapsed_ns = 0;
    };

    Timed score(const fs::path& path) const {
        require_exists(path, "query");
        using clock = std::chrono::steady_clock;
        Timed t;
        if (det_ == Detector::Msp || det_ == Detector::Energy) {
            const LogitSet logits = load_logits(path, format_for(path, c_.input_format));
            const auto start = clock::now();
            t.scores = det_ == Detector::Msp ? score_msp(logits) : score_energy(logits, src_.temperature);
            t.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start).count();
            return t;
        }
        const EmbeddingSet raw = load_input(path, c_);
        switch (det_) {
            case Detector::Knn:
            case Detector::KnnAvg: {
                const EmbeddingSet z = prepare_knn_features(raw, c_, calib_ ? &*calib_ : nullptr);
                const int k = c_.k > 0 ? c_.k : index_->effective_k();
                const auto start = clock::now();
                t.scores = score_knn(*index_, z, k, det_ == Detector::Knn ? KnnVariant::Kth : KnnVariant::Kavg);
                t.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start).count();
                break;
            }
            case Detector::Lof: {
                const EmbeddingSet z = prepare_knn_features(raw, c_, calib_ ? &*calib_ : nullptr);
                const auto start = clock::now();
                t.scores = score_lof(*lof_, z);
                t.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start).count();
                break;
            }
            case Detector::Maha: {
                const EmbeddingSet f = src_.normalize_features ? normalize(raw) : raw;
                const auto start = clock::now();
                t.scores = score_mahalanobis(*gaussian_, f);
                t.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start).count();
                break;
            }
            case Detector::Pca: {
                const EmbeddingSet f = src_.normalize_features ? normalize(raw) : raw;
                const auto start = clock::now();
                t.scores = score_pca(*pca_, f);
                t.elapsed_ns = std::chrono::duration_cast<std::chrono::nanoseconds>(clock::now() - start).count();
                break;
            }
            default:
                break;
        }
        return t;
    }

private:
    const Common& c_;
    ScoringSource src_;
    Detector det_;
    std::optional<KnnIndex> index_;
    std::optional<EmbeddingSet> calib_;
    std::optional<LofModel> lof_;
    std::optional<GaussianModel> gaussian_;
    std::optional<PcaModel> pca_;
};

int cmd_score(const Common& c, const ScoringSource& src, std::ostream& out) {
    const Scorer scorer(c, src);
    write_output(c.out, scores_csv(scorer.score(c.input).scores), out);
    return 0;
}

int cmd_calibrate(const Common& c, std::ostream& out) {
    const auto scores = read_scores(c.input);
    const double lambda = calibrate_lambda(scores, c.tpr);
    write_output(c.out, "lambda=" + fmt(lambda) + "\n", out);
    return 0;
}

void write_histograms(const Common& c, const std::vector<double>& id, const std::vector<NamedScores>& ood) {
    const std::size_t bins = parse_hist_bins(c.hist);
    double lo = *std::min_element(id.begin(), id.end());
    double hi = *std::max_element(id.begin(), id.end());
    for (const auto& set : ood) {
        lo = std::min(lo, *std::min_element(set.scores.begin(), set.scores.end()));
        hi = std::max(hi, *std::max_element(set.scores.begin(), set.scores.end()));
    }
    const auto base = c.out.string();
    write_file_atomic(base + ".hist.id.csv", histogram_csv(histogram(id, bins, lo, hi)));
    for (const auto& set : ood) {
        write_file_atomic(base + ".hist." + set.name + ".csv", histogram_csv(histogram(set.scores, bins, lo, hi)));
    }
}

int cmd_eval(const Common& c, const ScoringSource& src, bool timing, std::ostream& out) {
    if (c.ood.empty()) fail(ErrorKind::InvalidArgument, "at least one --ood input is required");
    if (!c.hist.empty() && c.out.empty()) fail(ErrorKind::InvalidArgument, "--hist needs --out");
    std::vector<double> id;
    std::vector<NamedScores> ood;
    std::int64_t ns_per_query = 0;
    const bool direct = !src.index.empty() || !src.model.empty() || c.detector == "msp" || c.detector == "energy";
    if (direct) {
        const Scorer scorer(c, src);
        auto id_t = scorer.score(c.input);
        std::int64_t total_ns = id_t.elapsed_ns;
        std::size_t total_q = id_t.scores.size();
        id = std::move(id_t.scores.scores);
        for (const auto& p : c.ood) {
            auto t = scorer.score(p);
            total_ns += t.elapsed_ns;
            total_q += t.scores.size();
            ood.push_back({p.stem().string(), std::move(t.scores.scores)});
        }
        if (timing) ns_per_query = total_ns / static_cast<std::int64_t>(total_q);
    } else {
        id = read_scores(c.input);
        for (const auto& p : c.ood) ood.push_back({p.stem().string(), read_scores(p)});
    }
    const EvalReport report = evaluate(c.detector, id, ood, c.tpr, ns_per_query);
    write_output(c.out, c.csv ? report.to_csv() : report.to_json(), out);
    if (!c.hist.empty()) write_histograms(c, id, ood);
    return 0;
}

int cmd_sweep(const Common& c, const ScoringSource& src, const std::string& grid_text, const std::string& objective,
              std::ostream& out) {
    if (c.ood.size() != 1) fail(ErrorKind::InvalidArgument, "sweep needs exactly one --ood validation set");
    require_exists(src.index, "--index");
    const Detector det = parse_detector(c.detector);
    if (det != Detector::Knn && det != Detector::KnnAvg) fail(ErrorKind::InvalidArgument, "sweep supports knn and knn_avg");
    const KnnIndex index = KnnIndex::load(src.index);
    std::optional<EmbeddingSet> calib;
    if (c.react_percentile > 0.0) {
        require_exists(src.calib, "--calib");
        calib = load_input(src.calib, c);
    }
    const EmbeddingSet id = prepare_knn_features(load_input(c.input, c), c, calib ? &*calib : nullptr);
    const EmbeddingSet ood = prepare_knn_features(load_input(c.ood.front(), c), c, calib ? &*calib : nullptr);
    const auto grid = grid_text.empty() ? kDefaultKGrid : parse_grid(grid_text);
    const SweepResult r = sweep_k(index, id, ood, grid, parse_sweep_objective(objective),
                                  det == Detector::Knn ? KnnVariant::Kth : KnnVariant::Kavg, c.tpr);
    write_output(c.out, r.to_csv(), out);
    return 0;
}

struct TheoryArgs {
    std::string action;
    ContaminationSetup setup;
    std::size_t samples = 100000;
    double lambda_offset = 0.0;
    std::string grid = "1000,10000,100000";
    std::string k_rule = "sqrt";
    std::string density = "uniform";
    double kappa = 0.0;
    int m_converge = 2;
};

int cmd_theory(const Common& c, TheoryArgs t, std::ostream& out) {
    if (t.action == "verify") {
        t.setup.validate();
        const auto r = verification_radii(t.setup, t.samples, c.seed);
        const IdentityCheck check = verify_posterior_identity(t.setup, r, t.lambda_offset);
        write_output(c.out, check.summary() + "\n", out);
        if (!c.out.empty()) out << check.summary() << '\n';
        return check.pass ? 0 : 1;
    }
    if (t.action == "converge") {
        std::vector<std::size_t> grid;
        for (int v : parse_grid(t.grid)) {
            if (v < 1) fail(ErrorKind::InvalidArgument, "grid sizes must be positive");
            grid.push_back(static_cast<std::size_t>(v));
        }
        ConvergenceConfig cfg;
        cfg.n_grid = grid;
        if (t.k_rule == "n") {
            cfg.k_rule = [](std::size_t n) { return static_cast<std::int64_t>(n); };
        } else if (t.k_rule != "sqrt") {
            fail(ErrorKind::InvalidArgument, "--k-rule must be sqrt or n");
        }
        SphereDensity density;
        if (t.density == "uniform") {
            density = uniform_sphere_density(t.m_converge);
        } else if (t.density == "vmf") {
            Eigen::VectorXd mu = Eigen::VectorXd::Zero(t.m_converge);
            mu(0) = 1.0;
            density = vmf_sphere_density(mu, t.kappa);
        } else {
            fail(ErrorKind::InvalidArgument, "--density must be uniform or vmf");
        }
        write_output(c.out, convergence_csv(convergence_experiment(density, cfg, c.seed)), out);
        return 0;
    }
    fail(ErrorKind::InvalidArgument, "theory action must be verify or converge");
}

void add_common(CLI::App* sub, Common& c) {
    sub->add_option("--out", c.out, "Output path");
    sub->add_option("--seed", c.seed, "RNG seed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"kNN out-of-distribution detection toolkit", "knnood"};
    app.require_subcommand(1);

    Common c;
    ScoringSource src;
    std::string preset;
    std::size_t n_id = 0, n_ood = 0;
    int components = kDefaultPcaComponents;
    bool normalize_features = false;
    std::optional<double> ridge;
    bool timing = false;
    std::string grid;
    std::string objective = "min_fpr95";
    TheoryArgs theory;

    auto* convert = app.add_subcommand("convert", "CSV embeddings to EMB1");
    convert->add_option("--input", c.input, "CSV file")->required();
    convert->add_flag("--labels", c.labels, "Last CSV column holds class labels");
    add_common(convert, c);

    auto* synth = app.add_subcommand("synth", "Generate a synthetic benchmark");
    synth->add_option("--input", c.input, "Spec manifest");
    synth->add_option("--preset", preset, "standard | nongaussian | norm_disparity");
    synth->add_option("--n-id", n_id, "Override ID sample count");
    synth->add_option("--n-ood", n_ood, "Override OOD sample count");
    add_common(synth, c);

    auto* index = app.add_subcommand("index", "Build a KNN1 index or MDL1 model from training embeddings");
    index->add_option("--input", c.input, "Training embeddings")->required();
    index->add_option("--detector", c.detector, "knn | knn_avg | lof | maha | pca");
    index->add_option("--k", c.k, "Base k (scaled by alpha)");
    index->add_option("--alpha", c.alpha, "Sampling ratio in (0, 1]");
    index->add_option("--react-percentile", c.react_percentile, "Clamp raw activations at this percentile");
    index->add_option("--components", components, "PCA components");
    index->add_option("--ridge", ridge, "Covariance ridge");
    index->add_flag("--normalize", normalize_features, "L2-normalize features for maha/pca");
    index->add_flag("--labels", c.labels, "Last CSV column holds class labels");
    index->add_option("--input-format", c.input_format, "binary | csv");
    add_common(index, c);

    auto* score = app.add_subcommand("score", "Score query embeddings or logits");
    score->add_option("--input", c.input, "Query embeddings or logits")->required();
    score->add_option("--detector", c.detector, "knn | knn_avg | lof | maha | pca | msp | energy");
    score->add_option("--index", src.index, "KNN1 index");
    score->add_option("--model", src.model, "MDL1 model");
    score->add_option("--k", c.k, "Neighbour count (default: index effective k)");
    score->add_option("--react-percentile", c.react_percentile, "Clamp percentile");
    score->add_option("--calib", src.calib, "Raw ID set for the clamp percentile");
    score->add_option("--temperature", src.temperature, "Energy temperature");
    score->add_flag("--normalize", src.normalize_features, "L2-normalize features for maha/pca");
    score->add_option("--input-format", c.input_format, "binary | csv");
    add_common(score, c);

    auto* calibrate = app.add_subcommand("calibrate", "Threshold from ID scores");
    calibrate->add_option("--input", c.input, "ID score CSV")->required();
    calibrate->add_option("--tpr", c.tpr, "Target TPR");
    add_common(calibrate, c);

    auto* eval = app.add_subcommand("eval", "FPR95/AUROC report");
    eval->add_option("--input", c.input, "ID scores (or embeddings with --index/--model)")->required();
    eval->add_option("--ood", c.ood, "OOD scores (repeatable)");
    eval->add_option("--detector", c.detector, "Detector tag / detector for direct scoring");
    eval->add_option("--index", src.index, "KNN1 index for direct scoring");
    eval->add_option("--model", src.model, "MDL1 model for direct scoring");
    eval->add_option("--k", c.k, "Neighbour count");
    eval->add_option("--react-percentile", c.react_percentile, "Clamp percentile");
    eval->add_option("--calib", src.calib, "Raw ID set for the clamp percentile");
    eval->add_option("--temperature", src.temperature, "Energy temperature");
    eval->add_flag("--normalize", src.normalize_features, "L2-normalize features for maha/pca");
    eval->add_option("--tpr", c.tpr, "Target TPR");
    eval->add_flag("--csv", c.csv, "CSV rows instead of JSON");
    eval->add_option("--hist", c.hist, "Export score histograms, bins=N");
    eval->add_flag("--timing", timing, "Record ns/query (makes reports run-dependent)");
    add_common(eval, c);

    auto* sweep = app.add_subcommand("sweep", "Select k on validation data");
    sweep->add_option("--index", src.index, "KNN1 index")->required();
    sweep->add_option("--input", c.input, "ID validation embeddings")->required();
    sweep->add_option("--ood", c.ood, "OOD validation embeddings")->required();
    sweep->add_option("--detector", c.detector, "knn | knn_avg");
    sweep->add_option("--grid", grid, "Comma-separated k values");
    sweep->add_option("--objective", objective, "min_fpr95 | max_auroc");
    sweep->add_option("--react-percentile", c.react_percentile, "Clamp percentile");
    sweep->add_option("--calib", src.calib, "Raw ID set for the clamp percentile");
    sweep->add_option("--tpr", c.tpr, "Target TPR");
    add_common(sweep, c);

    auto* th = app.add_subcommand("theory", "Density-estimator identity and convergence experiments");
    th->add_option("action", theory.action, "verify | converge")->required();
    th->add_option("--epsilon", theory.setup.epsilon, "OOD contamination rate");
    th->add_option("--beta", theory.setup.beta, "Posterior level");
    th->add_option("--k", theory.setup.k, "Neighbour count");
    th->add_option("--n", theory.setup.n, "Sample size");
    th->add_option("--cb", theory.setup.c_b, "Ball constant");
    th->add_option("--c0", theory.setup.c0_hat, "OOD density estimate");
    th->add_option("--m", theory.setup.m, "Sphere dimension");
    th->add_option("--samples", theory.samples, "Test radii for verify");
    th->add_option("--lambda-offset", theory.lambda_offset, "Perturb lambda (negative control)");
    th->add_option("--grid", theory.grid, "Sample sizes for converge");
    th->add_option("--k-rule", theory.k_rule, "sqrt | n");
    th->add_option("--density", theory.density, "uniform | vmf");
    th->add_option("--kappa", theory.kappa, "vMF concentration");
    th->add_option("--sphere-dim", theory.m_converge, "Ambient dimension for converge");
    add_common(th, c);

    // Defaults for the verify setup when flags are absent.
    theory.setup.k = 10;
    theory.setup.n = 1000;
    theory.setup.c_b = 2.0 * std::numbers::pi;

    std::vector<const char*> argv;
    argv.push_back("knnood");
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        if (*convert) return cmd_convert(c, out);
        if (*synth) return cmd_synth(c, preset, n_id, n_ood, out);
        if (*index) return cmd_index(c, components, normalize_features, ridge, out);
        if (*score) return cmd_score(c, src, out);
        if (*calibrate) return cmd_calibrate(c, out);
        if (*eval) return cmd_eval(c, src, timing, out);
        if (*sweep) return cmd_sweep(c, src, grid, objective, out);
        if (*th) return cmd_theory(c, theory, out);
    } catch (const Error& e) {
        err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        err << "error: internal: " << e.what() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace knnood::cli
