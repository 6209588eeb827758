#pragma once

#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "shiftcal/types.hpp"

namespace shiftcal {

// Affine map on logits followed by softmax. May change the argmax.
struct PlattMap {
    Matrix weight;  // K x K
    Vector bias;    // K
};

// softmax(z / T); preserves the argmax for any T > 0.
struct TemperatureScale {
    double temperature = 1.0;
    bool search_bound_hit = false;
};

// Non-decreasing step function fitted by weighted pool-adjacent-violators.
struct IsotonicMap {
    enum class Mode {
        Class1,   // K=2: remaps P(class 1)
        TopLabel  // K>2: remaps the max probability, rest renormalized
    };
    struct Step {
        double breakpoint;  // block start score
        double value;
    };
    Mode mode = Mode::Class1;
    std::vector<Step> steps;

    // Value of the last block whose start is <= s (first value below).
    double eval(double s) const;
};

enum class CalibratorKind { Platt, Temperature, Isotonic };
enum class WeightsUsed { None, Uniform, Importance };

struct FitRecord {
    WeightsUsed weights_used = WeightsUsed::None;
    Eigen::Index n_fit = 0;
    double final_loss = 0.0;
};

struct Calibrator {
    std::variant<PlattMap, TemperatureScale, IsotonicMap> map;
    FitRecord fit_record;

    CalibratorKind kind() const {
        return static_cast<CalibratorKind>(map.index());
    }
};

// Multinomial logistic regression over the classifier's logits, minimizing
// the weighted NLL from an identity-map start.
Calibrator fit_platt(const Matrix& logits, const IntVector& labels,
                     const Vector& weights);

// 1-d golden-section search on log T in [log 1e-2, log 1e2].
Calibrator fit_temperature(const Matrix& logits, const IntVector& labels,
                           const Vector& weights);

// Weighted PAV on (score, correctness) pairs; equal scores are pre-pooled by
// weighted mean. scores must lie in [0,1], correctness in {0,1}.
Calibrator fit_isotonic(const Vector& scores, const Vector& correctness,
                        const Vector& weights,
                        IsotonicMap::Mode mode = IsotonicMap::Mode::Class1);

// Dispatch on kind; for Isotonic builds the score/correctness pairs from the
// logits (class-1 probability when K=2, top-label confidence otherwise).
Calibrator fit_calibrator(CalibratorKind kind, const Matrix& logits,
                          const IntVector& labels, const Vector& weights);

// Calibrated probability rows for a logits matrix.
Matrix apply(const Calibrator& cal, const Matrix& logits);

// Step-function evaluation on raw scores.
Vector apply_isotonic(const IsotonicMap& map, const Vector& scores);

void save_calibrator(const Calibrator& cal, const std::filesystem::path& path);
Calibrator load_calibrator(const std::filesystem::path& path);

std::string calibrator_label(CalibratorKind kind);
CalibratorKind parse_calibrator_label(const std::string& label);

}  // namespace shiftcal
