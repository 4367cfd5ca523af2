#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace lmn {

// All numerics are 64-bit floats. Vectors are dense and fixed-length after
// creation; matrices are row-major.
using Vec = std::vector<double>;

struct Matrix {
    int rows = 0;
    int cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {
        if (r <= 0 || c <= 0) throw std::invalid_argument("Matrix: dimensions must be positive");
    }

    double& at(int r, int c) { return a[static_cast<size_t>(r) * cols + c]; }
    double at(int r, int c) const { return a[static_cast<size_t>(r) * cols + c]; }
    size_t size() const { return a.size(); }
};

// Parse failure in an external file; `offset` is a byte offset for binary
// inputs and a line number for line-oriented ones (see `unit`).
struct ParseError : std::runtime_error {
    size_t offset;
    std::string unit;  // "byte" or "line"
    ParseError(const std::string& msg, size_t off, std::string u = "byte")
        : std::runtime_error(msg + " (" + u + " " + std::to_string(off) + ")"),
          offset(off),
          unit(std::move(u)) {}
};

// Violation of a module contract (phase machine, frozen-model checksum).
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};

// Bad configuration value; carries the offending key for CLI diagnostics.
struct ConfigError : std::runtime_error {
    std::string key;
    ConfigError(std::string k, const std::string& msg)
        : std::runtime_error("config key '" + k + "': " + msg), key(std::move(k)) {}
};

inline bool all_finite(const Vec& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

inline void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace lmn
