#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcvs {

/// Error raised when tensor shapes are incompatible with an op.
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error raised on malformed files, bad configs, missing entries.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Error raised when a numeric invariant is violated at runtime (NaN loss, bad argument).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

/// NumericError flavour for NaN/Inf detected mid-run. Training throws this
/// instead of continuing with poisoned state; the CLI maps it to exit code 2
/// while ordinary validation failures stay at 1.
class NanAbort : public NumericError {
public:
    explicit NanAbort(const std::string& msg) : NumericError(msg) {}
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

inline bool same_shape(const Shape& a, const Shape& b) { return a == b; }

template <typename... Args>
[[noreturn]] inline void shape_fail(const char* op, Args&&... shapes) {
    std::ostringstream os;
    os << op << ": incompatible shapes";
    ((os << " " << shape_str(shapes)), ...);
    throw ShapeError(os.str());
}

}  // namespace pcvs
