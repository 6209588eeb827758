#pragma once

#include <optional>
#include <string>
#include <vector>

#include "shiftcal/types.hpp"

namespace shiftcal {

struct RatioDiagnostics;  // importance.hpp

// Confidence histogram over ((m-1)/M, m/M] intervals.
struct ReliabilityBins {
    struct Bin {
        Eigen::Index count = 0;
        double accuracy = 0.0;         // acc(B_m), 0 when empty
        double mean_confidence = 0.0;  // conf(B_m), 0 when empty
    };
    int m_bins = 0;
    Eigen::Index n_total = 0;
    std::vector<Bin> bins;

    double bin_low(int m) const { return double(m) / m_bins; }
    double bin_high(int m) const { return double(m + 1) / m_bins; }
    bool all_empty() const { return n_total == 0; }
};

enum class MethodTag { Uncalibrated, Unweighted, Weighted, UsingTarget };

std::string method_label(MethodTag tag);

struct EvaluationReport {
    double ece = 0.0;
    double accuracy = 0.0;
    double nll = 0.0;
    ReliabilityBins bins;
    MethodTag method_tag = MethodTag::Uncalibrated;
};

// prediction = row argmax (ties to the lower class index),
// confidence = row max; confidence 0 goes to the first bin.
ReliabilityBins reliability_bins(const Matrix& probs, const IntVector& labels,
                                 int m_bins);

// sum over non-empty bins of (|B_m|/n) * |acc - conf|; 0 when no samples.
double ece(const ReliabilityBins& bins);

double accuracy(const Matrix& probs, const IntVector& labels);
double nll(const Matrix& probs, const IntVector& labels);

// One row per bin: bin_low,bin_high,count,acc,conf,gap. Empty bins keep the
// count but leave acc/conf/gap blank.
std::string reliability_csv(const ReliabilityBins& bins);

EvaluationReport evaluate(const Matrix& probs, const IntVector& labels,
                          int m_bins, MethodTag tag);

}  // namespace shiftcal
