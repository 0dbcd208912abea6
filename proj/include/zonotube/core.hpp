#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace zonotube {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Shared tolerance profile. Every module reads its slack from one of these
/// so that certificates and tightenings agree.
struct Tolerances {
    double primal = 1e-8;      ///< primal residual bound for Optimal solves
    double dual = 1e-8;        ///< dual residual bound for Optimal solves
    double acceptance = 1e-6;  ///< slack used by membership / containment checks
};

class dimension_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a constrained set turns out to be empty (e.g. a noise model
/// that cannot explain the observed data).
class empty_set_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class vertex_cap_exceeded : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string shape(const Mat& m)
{
    std::ostringstream os;
    os << m.rows() << "x" << m.cols();
    return os.str();
}

inline void require(bool ok, const std::string& what)
{
    if (!ok) {
        throw dimension_error(what);
    }
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

}  // namespace detail

}  // namespace zonotube
