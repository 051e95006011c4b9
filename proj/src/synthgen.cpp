#include "knnood/synthgen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "knnood/error.hpp"

namespace knnood {

namespace {

constexpr std::uint64_t kStreamId = 1;
constexpr std::uint64_t kStreamOod = 2;
constexpr std::uint64_t kStreamIdNorms = 3;
constexpr std::uint64_t kStreamOodNorms = 4;
constexpr std::uint64_t kStreamPlateauRef = 5;
constexpr std::uint64_t kStreamContaminated = 6;

constexpr std::size_t kPlateauReferenceDraws = 10000;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& s, const std::string& key) {
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        fail(ErrorKind::Format, "manifest: bad number '" + s + "' for " + key);
    }
    return v;
}

std::uint64_t parse_u64(const std::string& s, const std::string& key) {
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        fail(ErrorKind::Format, "manifest: bad integer '" + s + "' for " + key);
    }
    return v;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    return out;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double log_bessel_i(double nu, double x) {
    if (x < 500.0) return std::log(std::cyl_bessel_i(nu, x));
    // Large-argument expansion: I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k (-1)^k a_k(nu) / x^k.
    const double mu = 4.0 * nu * nu;
    double term = 1.0;
    double sum = 1.0;
    for (int k = 1; k < 30; ++k) {
        const double odd = 2.0 * k - 1.0;
        const double next = -term * (mu - odd * odd) / (k * 8.0 * x);
        if (std::abs(next) > std::abs(term)) break;
        term = next;
        sum += term;
        if (std::abs(term) < 1e-17 * std::abs(sum)) break;
    }
    return x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
}

Eigen::VectorXd random_unit(int m, std::mt19937_64& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::VectorXd v(m);
    double norm = 0.0;
    do {
        for (int j = 0; j < m; ++j) v(j) = normal(rng);
        norm = v.norm();
    } while (norm == 0.0);
    return v / norm;
}

double log_sum_exp(const std::vector<double>& v) {
    const double top = *std::max_element(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += std::exp(x - top);
    return top + std::log(s);
}

void rescale_rows(EmbeddingSet& e, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> norm(lo, hi);
    for (Eigen::Index i = 0; i < e.data.rows(); ++i) e.data.row(i) *= norm(rng);
    e.normalized = false;
}

EmbeddingSet slice_rows(const EmbeddingSet& e, std::size_t begin, std::size_t end, const std::string& tag) {
    EmbeddingSet out;
    out.data = e.data.middleRows(static_cast<Eigen::Index>(begin), static_cast<Eigen::Index>(end - begin));
    if (e.labels) out.labels = std::vector<std::uint32_t>(e.labels->begin() + static_cast<std::ptrdiff_t>(begin),
                                                          e.labels->begin() + static_cast<std::ptrdiff_t>(end));
    out.normalized = e.normalized;
    out.source_tag = tag;
    return out;
}

}  // namespace

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(stream)));
}

RowMatrix sample_uniform_sphere(int m, std::size_t n, std::mt19937_64& rng) {
    RowMatrix out(static_cast<Eigen::Index>(n), m);
    for (std::size_t i = 0; i < n; ++i) out.row(static_cast<Eigen::Index>(i)) = random_unit(m, rng).transpose();
    return out;
}

RowMatrix sample_vmf(const Eigen::VectorXd& mu, double kappa, std::size_t n, std::mt19937_64& rng) {
    const int m = static_cast<int>(mu.size());
    if (m < 2) fail(ErrorKind::InvalidArgument, "vMF needs dimension >= 2");
    if (!(kappa >= 0.0)) fail(ErrorKind::InvalidArgument, "vMF concentration must be non-negative");
    if (kappa == 0.0) return sample_uniform_sphere(m, n, rng);

    const double dm1 = m - 1.0;
    // Wood's rejection sampler for w = <z, mu>; b is written to avoid cancellation at large kappa.
    const double b = dm1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + dm1 * dm1));
    const double x0 = (1.0 - b) / (1.0 + b);
    const double c = kappa * x0 + dm1 * std::log1p(-x0 * x0);
    std::gamma_distribution<double> gamma(dm1 / 2.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    RowMatrix out(static_cast<Eigen::Index>(n), m);
    for (std::size_t i = 0; i < n; ++i) {
        double w = 0.0;
        while (true) {
            const double g1 = gamma(rng);
            const double g2 = gamma(rng);
            const double z = g1 / (g1 + g2);
            w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
            const double u = unif(rng);
            if (kappa * w + dm1 * std::log1p(-x0 * w) - c >= std::log(u)) break;
        }
        Eigen::VectorXd v(m);
        double vnorm = 0.0;
        do {
            for (int j = 0; j < m; ++j) v(j) = normal(rng);
            v -= v.dot(mu) * mu;
            vnorm = v.norm();
        } while (vnorm == 0.0);
        v /= vnorm;
        const double radial = std::sqrt(std::max(0.0, 1.0 - w * w));
        Eigen::VectorXd zvec = w * mu + radial * v;
        out.row(static_cast<Eigen::Index>(i)) = (zvec / zvec.norm()).transpose();
    }
    return out;
}

double vmf_log_normalizer(int m, double kappa) {
    const double half = m / 2.0;
    if (kappa == 0.0) {
        return -(std::log(2.0) + half * std::log(std::numbers::pi) - std::lgamma(half));
    }
    return (half - 1.0) * std::log(kappa) - half * std::log(2.0 * std::numbers::pi) - log_bessel_i(half - 1.0, kappa);
}

double vmf_log_density(const Eigen::Ref<const Eigen::RowVectorXd>& z, const Eigen::VectorXd& mu, double kappa) {
    return vmf_log_normalizer(static_cast<int>(mu.size()), kappa) + kappa * z.dot(mu.transpose());
}

double vmf_mean_resultant_s2(double kappa) {
    return 1.0 / std::tanh(kappa) - 1.0 / kappa;
}

std::size_t SyntheticSpec::classes() const {
    std::uint32_t top = 0;
    for (const auto& c : components) top = std::max(top, c.class_id);
    return components.empty() ? 0 : static_cast<std::size_t>(top) + 1;
}

void SyntheticSpec::validate() const {
    if (m < 2) fail(ErrorKind::InvalidArgument, "synthetic spec: dimension must be >= 2");
    if (components.empty()) fail(ErrorKind::InvalidArgument, "synthetic spec: needs at least one component");
    for (std::size_t c = 0; c < components.size(); ++c) {
        const auto& comp = components[c];
        if (comp.mu.size() != m) fail(ErrorKind::InvalidArgument, "synthetic spec: component " + std::to_string(c) + " has wrong dimension");
        if (std::abs(comp.mu.norm() - 1.0) > kUnitNormTolerance) {
            fail(ErrorKind::InvalidArgument, "synthetic spec: component " + std::to_string(c) + " mean is not unit-norm");
        }
        if (!(comp.kappa >= 0.0) || !std::isfinite(comp.kappa)) {
            fail(ErrorKind::InvalidArgument, "synthetic spec: component " + std::to_string(c) + " has invalid kappa");
        }
    }
    if (!(epsilon > 0.0 && epsilon < 1.0)) fail(ErrorKind::InvalidArgument, "synthetic spec: epsilon must lie in (0, 1)");
    if (n_id < 1 || n_ood < 1) fail(ErrorKind::InvalidArgument, "synthetic spec: counts must be >= 1");
    if (!(plateau_quantile > 0.0 && plateau_quantile <= 1.0)) {
        fail(ErrorKind::InvalidArgument, "synthetic spec: plateau quantile must lie in (0, 1]");
    }
    if (plateau_c1 && !(*plateau_c1 > 0.0)) fail(ErrorKind::InvalidArgument, "synthetic spec: plateau c1 must be positive");
    if (norm_disparity) {
        const auto& d = *norm_disparity;
        if (!(d.id_lo > 0.0 && d.id_hi >= d.id_lo && d.ood_lo > 0.0 && d.ood_hi >= d.ood_lo)) {
            fail(ErrorKind::InvalidArgument, "synthetic spec: invalid norm ranges");
        }
    }
    if (logit_scale && !(*logit_scale > 0.0)) fail(ErrorKind::InvalidArgument, "synthetic spec: logit scale must be positive");
}

double mixture_density(const SyntheticSpec& spec, const Eigen::Ref<const Eigen::RowVectorXd>& z) {
    std::vector<double> logs;
    logs.reserve(spec.components.size());
    for (const auto& c : spec.components) logs.push_back(vmf_log_density(z, c.mu, c.kappa));
    return std::exp(log_sum_exp(logs) - std::log(static_cast<double>(spec.components.size())));
}

double plateau_cutoff(const SyntheticSpec& spec) {
    if (spec.plateau_c1) return *spec.plateau_c1;
    auto rng = make_stream(spec.seed, kStreamPlateauRef);
    std::uniform_int_distribution<std::size_t> pick(0, spec.components.size() - 1);
    std::vector<double> dens(kPlateauReferenceDraws);
    for (auto& d : dens) {
        const auto& comp = spec.components[pick(rng)];
        const RowMatrix z = sample_vmf(comp.mu, comp.kappa, 1, rng);
        d = mixture_density(spec, z.row(0));
    }
    std::sort(dens.begin(), dens.end());
    auto rank = static_cast<std::size_t>(std::ceil(spec.plateau_quantile * static_cast<double>(dens.size())));
    rank = std::clamp<std::size_t>(rank, 1, dens.size());
    return dens[rank - 1];
}

EmbeddingSet sample_id(const SyntheticSpec& spec) {
    spec.validate();
    auto rng = make_stream(spec.seed, kStreamId);
    std::uniform_int_distribution<std::size_t> pick(0, spec.components.size() - 1);
    EmbeddingSet out;
    out.data.resize(static_cast<Eigen::Index>(spec.n_id), spec.m);
    std::vector<std::uint32_t> labels(spec.n_id);
    for (std::size_t i = 0; i < spec.n_id; ++i) {
        const auto& comp = spec.components[pick(rng)];
        out.data.row(static_cast<Eigen::Index>(i)) = sample_vmf(comp.mu, comp.kappa, 1, rng).row(0);
        labels[i] = comp.class_id;
    }
    out.labels = std::move(labels);
    out.normalized = true;
    out.source_tag = "synthetic_id";
    return out;
}

EmbeddingSet sample_ood(const SyntheticSpec& spec) {
    spec.validate();
    auto rng = make_stream(spec.seed, kStreamOod);
    EmbeddingSet out;
    out.normalized = true;
    out.source_tag = "synthetic_ood";
    if (spec.ood_kind == OodKind::UniformSphere) {
        out.data = sample_uniform_sphere(spec.m, spec.n_ood, rng);
        return out;
    }
    const double c1 = plateau_cutoff(spec);
    out.data.resize(static_cast<Eigen::Index>(spec.n_ood), spec.m);
    std::size_t accepted = 0;
    std::size_t attempts = 0;
    while (accepted < spec.n_ood) {
        const Eigen::VectorXd z = random_unit(spec.m, rng);
        ++attempts;
        if (mixture_density(spec, z.transpose()) < c1) {
            out.data.row(static_cast<Eigen::Index>(accepted++)) = z.transpose();
        }
        if (attempts >= 10000 && static_cast<double>(accepted) < 1e-3 * static_cast<double>(attempts)) {
            fail(ErrorKind::InvalidArgument, "plateau OOD acceptance rate below 1e-3; cutoff c1=" + fmt(c1) + " is infeasible");
        }
    }
    return out;
}

EmbeddingSet sample_contaminated(const SyntheticSpec& spec, std::size_t n) {
    spec.validate();
    SyntheticSpec id_spec = spec;
    SyntheticSpec ood_spec = spec;
    auto rng = make_stream(spec.seed, kStreamContaminated);
    std::bernoulli_distribution is_ood(spec.epsilon);
    std::vector<std::uint32_t> g(n);
    std::size_t n_out = 0;
    for (auto& label : g) {
        label = is_ood(rng) ? 0u : 1u;
        n_out += label == 0 ? 1 : 0;
    }
    id_spec.n_id = std::max<std::size_t>(n - n_out, 1);
    ood_spec.n_ood = std::max<std::size_t>(n_out, 1);
    id_spec.seed = splitmix64(spec.seed ^ 0xC0);
    ood_spec.seed = splitmix64(spec.seed ^ 0xC1);
    const EmbeddingSet id = sample_id(id_spec);
    const EmbeddingSet ood = sample_ood(ood_spec);

    EmbeddingSet out;
    out.data.resize(static_cast<Eigen::Index>(n), spec.m);
    std::size_t next_id = 0, next_ood = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.data.row(static_cast<Eigen::Index>(i)) =
            g[i] ? id.data.row(static_cast<Eigen::Index>(next_id++)) : ood.data.row(static_cast<Eigen::Index>(next_ood++));
    }
    out.labels = std::move(g);
    out.normalized = true;
    out.source_tag = "synthetic_contaminated";
    return out;
}

LogitSet class_posterior_logits(const SyntheticSpec& spec, const EmbeddingSet& points, double scale) {
    const std::size_t classes = spec.classes();
    LogitSet out;
    out.data.resize(points.data.rows(), static_cast<Eigen::Index>(std::max<std::size_t>(classes, 2)));
    out.data.setConstant(-std::numeric_limits<double>::infinity());
    for (Eigen::Index i = 0; i < points.data.rows(); ++i) {
        const Eigen::RowVectorXd z = points.data.row(i) / points.data.row(i).norm();
        std::vector<std::vector<double>> per_class(classes);
        for (const auto& c : spec.components) per_class[c.class_id].push_back(vmf_log_density(z, c.mu, c.kappa));
        std::vector<double> class_log(classes);
        for (std::size_t c = 0; c < classes; ++c) {
            class_log[c] = per_class[c].empty() ? -std::numeric_limits<double>::infinity() : log_sum_exp(per_class[c]);
        }
        const double total = log_sum_exp(class_log);
        for (std::size_t c = 0; c < classes; ++c) {
            out.data(i, static_cast<Eigen::Index>(c)) = scale * (class_log[c] - total);
        }
    }
    // Single-class specs still need two logit columns; the filler class has posterior ~0.
    const double floor = -1e3 * scale;
    out.data = out.data.unaryExpr([floor](double v) { return std::isfinite(v) ? std::max(v, floor) : floor; });
    return out;
}

Benchmark make_benchmark(const SyntheticSpec& spec) {
    spec.validate();
    EmbeddingSet id = sample_id(spec);
    EmbeddingSet ood = sample_ood(spec);
    Benchmark b;
    if (spec.logit_scale) {
        const EmbeddingSet id_test_dirs = slice_rows(id, spec.n_id * 4 / 5, spec.n_id, "id_test");
        b.id_test_logits = class_posterior_logits(spec, id_test_dirs, *spec.logit_scale);
        b.ood_test_logits = class_posterior_logits(spec, ood, *spec.logit_scale);
    }
    if (spec.norm_disparity) {
        auto id_rng = make_stream(spec.seed, kStreamIdNorms);
        auto ood_rng = make_stream(spec.seed, kStreamOodNorms);
        rescale_rows(id, spec.norm_disparity->id_lo, spec.norm_disparity->id_hi, id_rng);
        rescale_rows(ood, spec.norm_disparity->ood_lo, spec.norm_disparity->ood_hi, ood_rng);
    }
    const std::size_t n_train = spec.n_id * 4 / 5;
    if (n_train == 0 || n_train == spec.n_id) {
        fail(ErrorKind::InvalidArgument, "synthetic spec: n_id=" + std::to_string(spec.n_id) + " is too small to split 80/20");
    }
    b.id_train = slice_rows(id, 0, n_train, "id_train");
    b.id_test = slice_rows(id, n_train, spec.n_id, "id_test");
    b.ood_test = std::move(ood);
    b.ood_test.source_tag = "ood_test";
    return b;
}

std::string write_manifest(const SyntheticSpec& spec) {
    std::ostringstream out;
    out << "# synthetic benchmark manifest\n";
    out << "m = " << spec.m << '\n';
    out << "epsilon = " << fmt(spec.epsilon) << '\n';
    out << "n_id = " << spec.n_id << '\n';
    out << "n_ood = " << spec.n_ood << '\n';
    out << "ood_kind = " << (spec.ood_kind == OodKind::UniformSphere ? "uniform_sphere" : "plateau_outside_id") << '\n';
    if (spec.plateau_c1) out << "plateau_c1 = " << fmt(*spec.plateau_c1) << '\n';
    out << "plateau_quantile = " << fmt(spec.plateau_quantile) << '\n';
    if (spec.norm_disparity) {
        const auto& d = *spec.norm_disparity;
        out << "norm_disparity = " << fmt(d.id_lo) << ',' << fmt(d.id_hi) << ',' << fmt(d.ood_lo) << ','
            << fmt(d.ood_hi) << '\n';
    }
    if (spec.logit_scale) out << "logit_scale = " << fmt(*spec.logit_scale) << '\n';
    out << "seed = " << spec.seed << '\n';
    for (const auto& c : spec.components) {
        out << "component = " << c.class_id << ';' << fmt(c.kappa) << ';';
        for (Eigen::Index j = 0; j < c.mu.size(); ++j) out << (j ? "," : "") << fmt(c.mu(j));
        out << '\n';
    }
    return out.str();
}

SyntheticSpec parse_manifest(const std::string& text) {
    SyntheticSpec spec;
    spec.components.clear();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    bool saw_m = false;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(line);
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail(ErrorKind::Format, "manifest line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "m") {
            spec.m = static_cast<int>(parse_u64(value, key));
            saw_m = true;
        } else if (key == "epsilon") {
            spec.epsilon = parse_double(value, key);
        } else if (key == "n_id") {
            spec.n_id = parse_u64(value, key);
        } else if (key == "n_ood") {
            spec.n_ood = parse_u64(value, key);
        } else if (key == "ood_kind") {
            if (value == "uniform_sphere") spec.ood_kind = OodKind::UniformSphere;
            else if (value == "plateau_outside_id") spec.ood_kind = OodKind::PlateauOutsideId;
            else fail(ErrorKind::Format, "manifest: unknown ood_kind '" + value + "'");
        } else if (key == "plateau_c1") {
            spec.plateau_c1 = parse_double(value, key);
        } else if (key == "plateau_quantile") {
            spec.plateau_quantile = parse_double(value, key);
        } else if (key == "norm_disparity") {
            const auto parts = split(value, ',');
            if (parts.size() != 4) fail(ErrorKind::Format, "manifest: norm_disparity needs four values");
            spec.norm_disparity = NormDisparity{parse_double(trim(parts[0]), key), parse_double(trim(parts[1]), key),
                                                parse_double(trim(parts[2]), key), parse_double(trim(parts[3]), key)};
        } else if (key == "logit_scale") {
            spec.logit_scale = parse_double(value, key);
        } else if (key == "seed") {
            spec.seed = parse_u64(value, key);
        } else if (key == "component") {
            const auto parts = split(value, ';');
            if (parts.size() != 3) fail(ErrorKind::Format, "manifest: component needs class;kappa;mu");
            VmfComponent c;
            c.class_id = static_cast<std::uint32_t>(parse_u64(trim(parts[0]), key));
            c.kappa = parse_double(trim(parts[1]), key);
            const auto coords = split(parts[2], ',');
            c.mu.resize(static_cast<Eigen::Index>(coords.size()));
            for (std::size_t j = 0; j < coords.size(); ++j) c.mu(static_cast<Eigen::Index>(j)) = parse_double(trim(coords[j]), key);
            spec.components.push_back(std::move(c));
        } else {
            fail(ErrorKind::Format, "manifest: unknown key '" + key + "'");
        }
    }
    if (!saw_m) fail(ErrorKind::Format, "manifest: missing m");
    spec.validate();
    return spec;
}

SyntheticSpec standard_benchmark_spec(std::uint64_t seed, std::size_t n_id, std::size_t n_ood) {
    SyntheticSpec spec;
    spec.m = 8;
    spec.n_id = n_id;
    spec.n_ood = n_ood;
    spec.seed = seed;
    spec.logit_scale = 1.0;
    for (std::uint32_t c = 0; c < 4; ++c) {
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(spec.m);
        mu(2 * c) = 1.0;
        spec.components.push_back({mu, 8.0, c});
    }
    return spec;
}

SyntheticSpec non_gaussian_spec(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.m = 8;
    spec.n_id = 10000;
    spec.n_ood = 2000;
    spec.seed = seed;
    // Two lobes per class, 120 degrees apart in the class's own plane.
    const double angle = 2.0 * std::numbers::pi / 3.0;
    for (std::uint32_t c = 0; c < 2; ++c) {
        for (int lobe = 0; lobe < 2; ++lobe) {
            Eigen::VectorXd mu = Eigen::VectorXd::Zero(spec.m);
            const double a = (lobe == 0 ? -0.5 : 0.5) * angle;
            mu(4 * c) = std::cos(a);
            mu(4 * c + 1) = std::sin(a);
            spec.components.push_back({mu, 40.0, c});
        }
    }
    return spec;
}

SyntheticSpec norm_disparity_spec(std::uint64_t seed) {
    SyntheticSpec spec;
    spec.m = 8;
    spec.n_id = 20000;
    spec.n_ood = 4000;
    spec.seed = seed;
    spec.norm_disparity = NormDisparity{5.0, 40.0, 0.5, 1.0};
    for (std::uint32_t c = 0; c < 2; ++c) {
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(spec.m);
        mu(c) = 1.0;
        spec.components.push_back({mu, 30.0, c});
    }
    return spec;
}

}  // namespace knnood
