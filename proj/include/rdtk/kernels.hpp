#pragma once

#include <cmath>
#include <string>

#include "rdtk/error.hpp"

namespace rdtk {

// Compactly supported kernels on [-1, 1]. The bin and bandwidth localization
// logic throughout the library assumes compact support, so unbounded kernels
// are intentionally not offered.
enum class Kernel { triangular, uniform, epanechnikov };

inline const char* kernel_name(Kernel k) {
    switch (k) {
        case Kernel::triangular: return "triangular";
        case Kernel::uniform: return "uniform";
        case Kernel::epanechnikov: return "epanechnikov";
    }
    return "?";
}

inline Kernel kernel_from_name(const std::string& s) {
    if (s == "triangular" || s == "tri") return Kernel::triangular;
    if (s == "uniform" || s == "uni") return Kernel::uniform;
    if (s == "epanechnikov" || s == "epa") return Kernel::epanechnikov;
    throw_usage("unknown kernel '" + s + "' (expected triangular|uniform|epanechnikov)");
}

inline double kernel_weight(Kernel k, double u) {
    const double a = std::abs(u);
    if (a > 1.0) return 0.0;
    switch (k) {
        case Kernel::triangular: return 1.0 - a;
        case Kernel::uniform: return 1.0;
        case Kernel::epanechnikov: return 1.0 - u * u;
    }
    return 0.0;
}

// One-sided moment of the kernel: integral of u^degree * K(u)^power over
// [0, 1], by closed form. These are the building blocks of the boundary
// bias/variance constants used by the plug-in machinery.
inline double boundary_moment(Kernel k, int degree, int power = 1) {
    if (degree < 0) throw_usage("boundary_moment: degree must be >= 0");
    if (power < 1 || power > 2) throw_usage("boundary_moment: power must be 1 or 2");
    const double j = degree;
    switch (k) {
        case Kernel::uniform:
            return 1.0 / (j + 1.0);
        case Kernel::triangular:
            if (power == 1) // u^j (1-u)
                return 1.0 / (j + 1.0) - 1.0 / (j + 2.0);
            // u^j (1-u)^2
            return 1.0 / (j + 1.0) - 2.0 / (j + 2.0) + 1.0 / (j + 3.0);
        case Kernel::epanechnikov:
            if (power == 1) // u^j (1-u^2)
                return 1.0 / (j + 1.0) - 1.0 / (j + 3.0);
            // u^j (1-u^2)^2
            return 1.0 / (j + 1.0) - 2.0 / (j + 3.0) + 1.0 / (j + 5.0);
    }
    return 0.0;
}

} // namespace rdtk
