// SPDX-FileCopyrightText: 2026 PyGS-cpp contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "pygs/image.hpp"

#include <cmath>

namespace pygs::testing {

// Direct 2-D windowed SSIM, no separable filtering and no shared code with the library.
inline double brute_force_ssim(const Image<double>& a, const Image<double>& b) {
    const int r = 5;
    double win[11][11], norm = 0.0;
    for (int i = -r; i <= r; ++i)
        for (int j = -r; j <= r; ++j) {
            win[i + r][j + r] = std::exp(-(i * i + j * j) / (2.0 * 1.5 * 1.5));
            norm += win[i + r][j + r];
        }
    const double c1 = 1e-4, c2 = 9e-4;
    double total = 0.0;
    int count = 0;
    for (int c = 0; c < a.channels; ++c)
        for (int y = r; y < a.height - r; ++y)
            for (int x = r; x < a.width - r; ++x) {
                double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
                for (int i = -r; i <= r; ++i)
                    for (int j = -r; j <= r; ++j) {
                        const double wt = win[i + r][j + r] / norm;
                        const double va = a.at(x + j, y + i, c), vb = b.at(x + j, y + i, c);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
                total += (2 * ma * mb + c1) * (2 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++count;
            }
    return total / count;
}

} // namespace pygs::testing
