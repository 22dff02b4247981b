#pragma once

// Reference implementations used only by tests. They are written from the
// defining formulas and share no code with the library.

#include <cstdint>
#include <random>
#include <vector>

namespace oracle {

// Smps = k^2 * (0.008985 * MV + 0.207762), k = 2.718282.
inline double moisture_from_mv(int mv) {
    const long double k = 2.718282L;
    return static_cast<double>(k * k * (0.008985L * mv + 0.207762L));
}

// Full 2-D convolution by scattering every input sample through the kernel,
// then cropped to the positions where the kernel lies inside the input.
// f is fh x fw and h is kh x kw, row-major.
inline std::vector<double> conv_valid(const std::vector<double>& f, int fh, int fw,
                                      const std::vector<double>& h, int kh, int kw) {
    const int full_h = fh + kh - 1;
    const int full_w = fw + kw - 1;
    std::vector<double> full(static_cast<std::size_t>(full_h * full_w), 0.0);
    for (int a = 0; a < fh; ++a)
        for (int b = 0; b < fw; ++b)
            for (int j = 0; j < kh; ++j)
                for (int k = 0; k < kw; ++k)
                    full[(a + j) * full_w + (b + k)] += f[a * fw + b] * h[j * kw + k];
    const int out_h = fh - kh + 1;
    const int out_w = fw - kw + 1;
    std::vector<double> out(static_cast<std::size_t>(out_h * out_w));
    for (int m = 0; m < out_h; ++m)
        for (int n = 0; n < out_w; ++n) out[m * out_w + n] = full[(m + kh - 1) * full_w + (n + kw - 1)];
    return out;
}

inline std::vector<double> uniform(std::mt19937_64& rng, std::size_t n, double lo = -1.0, double hi = 1.0) {
    std::vector<double> v(n);
    for (double& x : v) x = lo + (hi - lo) * (static_cast<double>(rng() >> 11) * 0x1.0p-53);
    return v;
}

}  // namespace oracle
