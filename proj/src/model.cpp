// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/model.hpp"

namespace pygs {

std::string_view to_string(WeightingMode m) {
    switch (m) {
    case WeightingMode::Learned: return "learned";
    case WeightingMode::Uniform: return "uniform";
    case WeightingMode::Random: return "random";
    case WeightingMode::Top1: return "top1";
    }
    return "learned";
}

WeightingMode weighting_mode_from_string(std::string_view s) {
    if (s == "learned") return WeightingMode::Learned;
    if (s == "uniform") return WeightingMode::Uniform;
    if (s == "random") return WeightingMode::Random;
    if (s == "top1") return WeightingMode::Top1;
    throw ConfigError("unknown weighting mode: " + std::string(s));
}

} // namespace pygs
