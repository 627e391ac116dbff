#pragma once

#include <charconv>
#include <cstdlib>
#include <string>
#include <system_error>

#include "dupless/errors.hpp"

namespace dupless {

/// Shortest decimal form that round-trips the value exactly. Used for every
/// numeric CSV/JSON field so that output files are byte-stable across runs.
inline std::string format_float(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string format_float(float v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& s) {
    double v = 0.0;
    const char* begin = s.c_str();
    const auto res = std::from_chars(begin, begin + s.size(), v);
    if (res.ec != std::errc() || res.ptr != begin + s.size())
        throw DataError("bad numeric field: '" + s + "'");
    return v;
}

inline long parse_long(const std::string& s) {
    long v = 0;
    const char* begin = s.c_str();
    const auto res = std::from_chars(begin, begin + s.size(), v);
    if (res.ec != std::errc() || res.ptr != begin + s.size())
        throw DataError("bad integer field: '" + s + "'");
    return v;
}

}  // namespace dupless
