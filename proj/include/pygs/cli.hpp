// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>

namespace pygs::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;
inline constexpr int kExitNumerical = 3;

/// Runs one subcommand. Tables go to `out`, logs to standard error.
int run(int argc, const char* const* argv, std::ostream& out);

} // namespace pygs::cli
