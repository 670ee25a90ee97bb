#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nrba/estimate.hpp"

namespace nrba::cli {

struct ReportInputs {
    std::filesystem::path output;  ///< directory holding the stage CSVs
    std::vector<Method> methods;
    std::uint64_t seed = 0;
    bool weights = false;
    bool sensitivity = false;
    std::vector<double> sensitivity_k;
    std::vector<std::string> warnings;
};

/// Two-decimal rounding used in the report; never prints "-0.00".
std::string fixed2(double v);

/// Markdown report built from the CSV artifacts in `output`.
std::string render_report(const ReportInputs& in);

}  // namespace nrba::cli
