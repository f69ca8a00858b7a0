// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#include "pygs/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return pygs::cli::run(argc, argv, std::cout); }
