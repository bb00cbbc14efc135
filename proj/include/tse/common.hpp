#ifndef TSE_COMMON_HPP
#define TSE_COMMON_HPP

#include <stdexcept>
#include <string>

namespace tse {

// Invalid scenario/topology/parameter input. CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Runtime numerical failure (factorization breakdown, divergence).
// CLI maps this to exit code 3.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

inline double clamp(double v, double lo, double hi) {
    return v < lo ? lo : (v > hi ? hi : v);
}

}  // namespace tse

#endif
