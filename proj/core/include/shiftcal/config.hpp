#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "shiftcal/harness.hpp"

namespace shiftcal {

enum class CalibrateMode { Unweighted, Weighted, UsingTarget };

// Parsed and schema-validated CLI configuration. Only the sections relevant
// to `command` are populated.
struct CliConfig {
    std::string command;
    std::filesystem::path workdir = ".";
    ExperimentConfig experiment;
    SweepSpec sweep;
    Figure2Config figure2;
    CalibratorKind calibrate_kind = CalibratorKind::Temperature;
    CalibrateMode calibrate_mode = CalibrateMode::Unweighted;
};

// Load a JSON config document. `overrides` are dotted-path assignments
// ("classifier.learning_rate=0.01") applied before validation. Unknown keys
// anywhere in the document are rejected.
CliConfig load_cli_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides = {});
CliConfig parse_cli_config(const std::string& json_text,
                           const std::vector<std::string>& overrides = {});

}  // namespace shiftcal
