#include "shiftcal/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <system_error>

#include "shiftcal/errors.hpp"
#include "shiftcal/rng.hpp"

namespace shiftcal {

namespace {

// Lower Cholesky factor; `name` identifies the offending matrix on failure.
Matrix cholesky_or_throw(const Matrix& cov, const std::string& name) {
    if (cov.rows() != cov.cols())
        throw ConfigError(name + " is not square");
    double scale = std::max(1.0, cov.cwiseAbs().maxCoeff());
    if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw ConfigError(name + " is not symmetric");
    Eigen::LLT<Matrix> llt(cov);
    if (llt.info() != Eigen::Success)
        throw ConfigError(name + " is not positive definite");
    return llt.matrixL();
}

Matrix sample_gaussian(Rng& rng, const Vector& mean, const Matrix& chol_l,
                       Eigen::Index n) {
    const Eigen::Index d = mean.size();
    Matrix z(n, d);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < d; ++j) z(i, j) = rng.normal();
    Matrix x = z * chol_l.transpose();
    x.rowwise() += mean.transpose();
    return x;
}

void append_to_chars(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

void LabeledDataset::validate() const {
    if (features.rows() < 1 || features.cols() < 1)
        throw ConfigError("dataset needs n >= 1 samples and d >= 1 dims");
    if (labels.size() != features.rows())
        throw ConfigError("labels/features length mismatch");
    if (n_classes < 2) throw ConfigError("dataset needs K >= 2 classes");
    for (Eigen::Index i = 0; i < labels.size(); ++i)
        if (labels[i] < 0 || labels[i] >= n_classes)
            throw ConfigError("label " + std::to_string(labels[i]) +
                              " out of range [0, " + std::to_string(n_classes) +
                              ")");
    if (!features.allFinite())
        throw ConfigError("dataset contains non-finite feature values");
}

LabeledDataset LabeledDataset::subset(const std::vector<Eigen::Index>& idx) const {
    LabeledDataset out;
    out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
    out.labels.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.features.row(static_cast<Eigen::Index>(i)) = features.row(idx[i]);
        out.labels[static_cast<Eigen::Index>(i)] = labels[idx[i]];
    }
    out.n_classes = n_classes;
    out.domain = domain;
    out.seed = seed;
    return out;
}

double LabelRule::prob_class1(double x1) const {
    switch (kind) {
        case Kind::Sigmoid:
            return 1.0 / (1.0 + std::exp(-(a * x1 + b)));
        case Kind::Ramp:
            return std::clamp(a * x1 + b, 0.0, 1.0);
        case Kind::Constant:
            return p;
    }
    return p;
}

void GaussianShiftConfig::validate() const {
    if (n_source < 1 || n_target < 1)
        throw ConfigError("n_source and n_target must be >= 1");
    const Eigen::Index d = source_mean.size();
    if (d < 1) throw ConfigError("source_mean must have d >= 1");
    if (target_mean.size() != d)
        throw ConfigError("source_mean and target_mean dims differ");
    if (source_cov.rows() != d || target_cov.rows() != d)
        throw ConfigError("covariance dims do not match mean dims");
    cholesky_or_throw(source_cov, "source_cov");
    cholesky_or_throw(target_cov, "target_cov");
    if (label_fn.kind == LabelRule::Kind::Constant &&
        (label_fn.p < 0.0 || label_fn.p > 1.0))
        throw ConfigError("constant label rule needs p in [0, 1]");
}

void MixtureShiftConfig::validate() const {
    if (class_generators.size() < 2)
        throw ConfigError("mixture needs K >= 2 class generators");
    if (n_source < 1 || n_target < 1)
        throw ConfigError("n_source and n_target must be >= 1");
    const auto k = static_cast<Eigen::Index>(class_generators.size());
    if (source_ratio.size() != k || target_ratio.size() != k)
        throw ConfigError("ratio vectors must have one entry per class");
    for (Eigen::Index i = 0; i < k; ++i) {
        if (!(source_ratio[i] > 0.0))
            throw ConfigError("source_ratio[" + std::to_string(i) +
                              "] must be > 0");
        if (!(target_ratio[i] > 0.0))
            throw ConfigError("target_ratio[" + std::to_string(i) +
                              "] must be > 0");
    }
    const Eigen::Index d = class_generators.front().mean.size();
    for (std::size_t c = 0; c < class_generators.size(); ++c) {
        if (class_generators[c].mean.size() != d)
            throw ConfigError("class generator dims disagree");
        cholesky_or_throw(class_generators[c].cov,
                          "class " + std::to_string(c) + " cov");
    }
}

Vector MixtureShiftConfig::normalized_source_ratio() const {
    return source_ratio / source_ratio.sum();
}

Vector MixtureShiftConfig::normalized_target_ratio() const {
    return target_ratio / target_ratio.sum();
}

double MixtureShiftConfig::class_weight(int k) const {
    return normalized_target_ratio()[k] / normalized_source_ratio()[k];
}

MixtureShiftConfig make_default_mixture_config(int n_classes, int dim,
                                               const Vector& source_ratio,
                                               const Vector& target_ratio,
                                               Eigen::Index n_source,
                                               Eigen::Index n_target,
                                               std::uint64_t placement_seed,
                                               double separation) {
    if (n_classes < 2) throw ConfigError("mixture needs K >= 2 classes");
    if (dim < n_classes)
        throw ConfigError("default mixture placement needs dim >= K");
    // Seeded orthonormal directions; scaled basis columns give exact pairwise
    // distance `separation`.
    Rng rng(placement_seed);
    Matrix g(dim, n_classes);
    for (Eigen::Index i = 0; i < g.rows(); ++i)
        for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = rng.normal();
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = Matrix(qr.householderQ()).leftCols(n_classes);

    MixtureShiftConfig cfg;
    const double scale = separation / std::numbers::sqrt2;
    for (int k = 0; k < n_classes; ++k)
        cfg.class_generators.push_back(
            {scale * q.col(k), Matrix::Identity(dim, dim)});
    cfg.source_ratio = source_ratio;
    cfg.target_ratio = target_ratio;
    cfg.n_source = n_source;
    cfg.n_target = n_target;
    cfg.validate();
    return cfg;
}

std::pair<LabeledDataset, LabeledDataset>
generate_gaussian_shift(const GaussianShiftConfig& config, std::uint64_t seed) {
    config.validate();
    const Matrix ls = cholesky_or_throw(config.source_cov, "source_cov");
    const Matrix lt = cholesky_or_throw(config.target_cov, "target_cov");

    auto make = [&](Domain domain, const Vector& mean, const Matrix& chol,
                    Eigen::Index n, std::uint64_t domain_seed) {
        Rng rng(domain_seed);
        LabeledDataset ds;
        ds.features = sample_gaussian(rng, mean, chol, n);
        ds.labels.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            double p1 = config.label_fn.prob_class1(ds.features(i, 0));
            ds.labels[i] = rng.uniform() < p1 ? 1 : 0;
        }
        ds.n_classes = 2;
        ds.domain = domain;
        ds.seed = seed;
        return ds;
    };

    return {make(Domain::Source, config.source_mean, ls, config.n_source,
                 derive_seed(seed, 0)),
            make(Domain::Target, config.target_mean, lt, config.n_target,
                 derive_seed(seed, 1))};
}

MixtureSample generate_mixture_shift(const MixtureShiftConfig& config,
                                     std::uint64_t seed) {
    config.validate();
    const int k = config.n_classes();
    const Eigen::Index d = config.class_generators.front().mean.size();
    std::vector<Matrix> chols;
    chols.reserve(config.class_generators.size());
    for (std::size_t c = 0; c < config.class_generators.size(); ++c)
        chols.push_back(cholesky_or_throw(config.class_generators[c].cov,
                                          "class " + std::to_string(c) + " cov"));

    auto make = [&](Domain domain, const Vector& ratio, Eigen::Index n,
                    std::uint64_t domain_seed) {
        Rng rng(domain_seed);
        std::vector<double> mass(ratio.data(), ratio.data() + ratio.size());
        LabeledDataset ds;
        ds.features.resize(n, d);
        ds.labels.resize(n);
        for (Eigen::Index i = 0; i < n; ++i) {
            int c = static_cast<int>(rng.categorical(mass));
            for (Eigen::Index j = 0; j < d; ++j)
                ds.features(i, j) = rng.normal();
            ds.features.row(i) =
                (chols[c] * ds.features.row(i).transpose()).transpose() +
                config.class_generators[c].mean.transpose();
            ds.labels[i] = c;
        }
        ds.n_classes = k;
        ds.domain = domain;
        ds.seed = seed;
        return ds;
    };

    MixtureSample out;
    out.source = make(Domain::Source, config.normalized_source_ratio(),
                      config.n_source, derive_seed(seed, 0));
    out.target = make(Domain::Target, config.normalized_target_ratio(),
                      config.n_target, derive_seed(seed, 1));
    out.gt_weights.values.resize(config.n_source);
    for (Eigen::Index i = 0; i < config.n_source; ++i)
        out.gt_weights.values[i] = config.class_weight(out.source.labels[i]);
    out.gt_weights.provenance = WeightProvenance::GroundTruth;
    return out;
}

std::pair<std::vector<Eigen::Index>, std::vector<Eigen::Index>>
split_indices(Eigen::Index n, double fraction, std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0))
        throw SplitError("fraction must be in (0, 1)");
    // The epsilon absorbs FP dust in fraction*n (0.7*10 must give 7).
    const auto n_a = static_cast<Eigen::Index>(
        std::floor(fraction * static_cast<double>(n) + 1e-9));
    const Eigen::Index n_b = n - n_a;
    if (n_a < 1 || n_b < 1)
        throw SplitError("degenerate split: requested sizes (" +
                         std::to_string(n_a) + ", " + std::to_string(n_b) +
                         ") of " + std::to_string(n));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng(seed);
    rng.shuffle(idx);
    std::vector<Eigen::Index> a(idx.begin(), idx.begin() + n_a);
    std::vector<Eigen::Index> b(idx.begin() + n_a, idx.end());
    return {std::move(a), std::move(b)};
}

std::pair<LabeledDataset, LabeledDataset>
split(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
    auto [ia, ib] = split_indices(ds.size(), fraction, seed);
    return {ds.subset(ia), ds.subset(ib)};
}

void write_csv(const LabeledDataset& ds, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string() + " for writing");
    std::string buf;
    buf += "d=" + std::to_string(ds.dim()) + ",k=" + std::to_string(ds.n_classes) +
           ",domain=" + (ds.domain == Domain::Source ? "source" : "target") + "\n";
    for (Eigen::Index i = 0; i < ds.size(); ++i) {
        for (Eigen::Index j = 0; j < ds.dim(); ++j) {
            append_to_chars(buf, ds.features(i, j));
            buf += ',';
        }
        buf += std::to_string(ds.labels[i]);
        buf += '\n';
    }
    out << buf;
    if (!out) throw Error("write failed for " + path.string());
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        std::size_t pos = line.find(',', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

long parse_long(const std::string& s, std::size_t line_no) {
    long v = 0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError("expected integer, got '" + s + "'", line_no);
    return v;
}

double parse_double(const std::string& s, std::size_t line_no) {
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        throw ParseError("expected number, got '" + s + "'", line_no);
    return v;
}

}  // namespace

LabeledDataset read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("empty file", 1);

    auto header = split_fields(line);
    if (header.size() != 3 || header[0].rfind("d=", 0) != 0 ||
        header[1].rfind("k=", 0) != 0 || header[2].rfind("domain=", 0) != 0)
        throw ParseError("bad header, expected d=<int>,k=<int>,domain=<source|target>", 1);
    const long d = parse_long(header[0].substr(2), 1);
    const long k = parse_long(header[1].substr(2), 1);
    const std::string dom = header[2].substr(7);
    if (d < 1 || k < 2) throw ParseError("header needs d >= 1 and k >= 2", 1);
    if (dom != "source" && dom != "target")
        throw ParseError("domain must be source or target", 1);

    std::vector<double> feats;
    std::vector<int> labels;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto fields = split_fields(line);
        if (fields.size() != static_cast<std::size_t>(d) + 1)
            throw ParseError("expected " + std::to_string(d + 1) +
                             " columns, got " + std::to_string(fields.size()),
                             line_no);
        for (long j = 0; j < d; ++j) {
            double v = parse_double(fields[static_cast<std::size_t>(j)], line_no);
            if (!std::isfinite(v))
                throw ParseError("non-finite feature value", line_no);
            feats.push_back(v);
        }
        long label = parse_long(fields.back(), line_no);
        if (label < 0 || label >= k)
            throw ParseError("label " + std::to_string(label) +
                             " out of range [0, " + std::to_string(k) + ")",
                             line_no);
        labels.push_back(static_cast<int>(label));
    }
    if (labels.empty()) throw ParseError("file has no data rows", line_no);

    LabeledDataset ds;
    const auto n = static_cast<Eigen::Index>(labels.size());
    ds.features.resize(n, d);
    ds.labels.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (long j = 0; j < d; ++j)
            ds.features(i, j) = feats[static_cast<std::size_t>(i * d + j)];
        ds.labels[i] = labels[static_cast<std::size_t>(i)];
    }
    ds.n_classes = static_cast<int>(k);
    ds.domain = dom == "source" ? Domain::Source : Domain::Target;
    ds.seed = 0;
    return ds;
}

}  // namespace shiftcal
