#include "shiftcal/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "shiftcal/errors.hpp"

namespace shiftcal {

namespace {

// Argmax with ties broken toward the lower class index.
Eigen::Index argmax_row(const Matrix& probs, Eigen::Index i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < probs.cols(); ++j)
        if (probs(i, j) > probs(i, best)) best = j;
    return best;
}

void check_shapes(const Matrix& probs, const IntVector& labels) {
    if (probs.rows() != labels.size())
        throw ShapeError("probs/labels length mismatch");
    if (probs.cols() < 2) throw ShapeError("need at least 2 classes");
}

void append_number(std::string& out, double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    out.append(buf, res.ptr);
}

}  // namespace

std::string method_label(MethodTag tag) {
    switch (tag) {
        case MethodTag::Uncalibrated: return "uncalibrated";
        case MethodTag::Unweighted: return "unweighted";
        case MethodTag::Weighted: return "weighted";
        case MethodTag::UsingTarget: return "using_target";
    }
    return "unknown";
}

ReliabilityBins reliability_bins(const Matrix& probs, const IntVector& labels,
                                 int m_bins) {
    check_shapes(probs, labels);
    if (m_bins < 1) throw ConfigError("m_bins must be >= 1");

    ReliabilityBins out;
    out.m_bins = m_bins;
    out.n_total = probs.rows();
    out.bins.resize(static_cast<std::size_t>(m_bins));

    std::vector<double> conf_sum(static_cast<std::size_t>(m_bins), 0.0);
    std::vector<Eigen::Index> correct(static_cast<std::size_t>(m_bins), 0);
    for (Eigen::Index i = 0; i < probs.rows(); ++i) {
        const Eigen::Index pred = argmax_row(probs, i);
        const double conf = probs(i, pred);
        // bin m (1-based) covers ((m-1)/M, m/M]; confidence 0 goes to bin 1.
        // ceil gives the candidate; the comparisons pin the half-open
        // boundary exactly even when conf * m_bins rounds across an integer.
        int m = static_cast<int>(std::ceil(conf * m_bins));
        m = std::clamp(m, 1, m_bins);
        while (m > 1 && conf <= double(m - 1) / m_bins) --m;
        while (m < m_bins && conf > double(m) / m_bins) ++m;
        auto& bin = out.bins[static_cast<std::size_t>(m - 1)];
        bin.count += 1;
        conf_sum[static_cast<std::size_t>(m - 1)] += conf;
        if (pred == labels[i]) correct[static_cast<std::size_t>(m - 1)] += 1;
    }
    for (int m = 0; m < m_bins; ++m) {
        auto& bin = out.bins[static_cast<std::size_t>(m)];
        if (bin.count > 0) {
            bin.accuracy = double(correct[static_cast<std::size_t>(m)]) /
                           double(bin.count);
            bin.mean_confidence =
                conf_sum[static_cast<std::size_t>(m)] / double(bin.count);
        }
    }
    return out;
}

double ece(const ReliabilityBins& bins) {
    if (bins.n_total == 0) return 0.0;
    double total = 0.0;
    for (const auto& bin : bins.bins)
        if (bin.count > 0)
            total += double(bin.count) / double(bins.n_total) *
                     std::abs(bin.accuracy - bin.mean_confidence);
    return total;
}

double accuracy(const Matrix& probs, const IntVector& labels) {
    check_shapes(probs, labels);
    if (probs.rows() == 0) return 0.0;
    Eigen::Index correct = 0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        if (argmax_row(probs, i) == labels[i]) ++correct;
    return double(correct) / double(probs.rows());
}

double nll(const Matrix& probs, const IntVector& labels) {
    check_shapes(probs, labels);
    double total = 0.0;
    for (Eigen::Index i = 0; i < probs.rows(); ++i)
        total -= std::log(std::max(probs(i, labels[i]), 1e-12));
    return probs.rows() > 0 ? total / double(probs.rows()) : 0.0;
}

std::string reliability_csv(const ReliabilityBins& bins) {
    std::string out = "bin_low,bin_high,count,acc,conf,gap\n";
    for (int m = 0; m < bins.m_bins; ++m) {
        const auto& bin = bins.bins[static_cast<std::size_t>(m)];
        append_number(out, bins.bin_low(m));
        out += ',';
        append_number(out, bins.bin_high(m));
        out += ',' + std::to_string(bin.count) + ',';
        if (bin.count > 0) {
            append_number(out, bin.accuracy);
            out += ',';
            append_number(out, bin.mean_confidence);
            out += ',';
            append_number(out, bin.accuracy - bin.mean_confidence);
        } else {
            out += ",,";
        }
        out += '\n';
    }
    return out;
}

EvaluationReport evaluate(const Matrix& probs, const IntVector& labels,
                          int m_bins, MethodTag tag) {
    EvaluationReport report;
    report.bins = reliability_bins(probs, labels, m_bins);
    report.ece = ece(report.bins);
    report.accuracy = accuracy(probs, labels);
    report.nll = nll(probs, labels);
    report.method_tag = tag;
    return report;
}

}  // namespace shiftcal
