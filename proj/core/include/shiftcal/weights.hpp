#pragma once

#include <string>
#include <vector>

#include "shiftcal/types.hpp"

namespace shiftcal {

enum class WeightProvenance { GroundTruth, Discriminator, Noisy };

// One correction applied to a weight vector, in application order.
struct WeightCorrection {
    enum class Kind { SelfNormalize, Flatten, Clip };
    Kind kind;
    double param = 0.0;  // alpha for Flatten, cap for Clip, unused otherwise
};

// Per-sample density-ratio estimates gamma(x) for a set of source samples.
struct ImportanceWeights {
    Vector values;
    WeightProvenance provenance = WeightProvenance::GroundTruth;
    double noise_sigma = 0.0;  // meaningful when provenance == Noisy
    std::vector<WeightCorrection> corrections;

    Eigen::Index size() const { return values.size(); }
};

std::string provenance_label(WeightProvenance p, double noise_sigma);
std::string correction_label(const WeightCorrection& c);

}  // namespace shiftcal
