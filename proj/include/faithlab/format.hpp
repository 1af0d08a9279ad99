#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace faithlab {

/// Round-trippable decimal text for CSV output; NaN becomes an empty field.
inline std::string fmt_double(double v) {
    if (std::isnan(v)) return "";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace faithlab
