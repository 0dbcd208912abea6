#pragma once

// Mecanum-drive robot kinematics and the true-system plant used in simulation.

#include "setops.hpp"

#include <cmath>
#include <numbers>
#include <random>
#include <utility>

namespace zonotube::sim {

struct RosbotGeometry {
    double wheel_radius = 0.05;  // m
    double l_a = 0.13484;        // m, longitudinal half-spacing
    double l_b = 0.085;          // m, lateral half-spacing
    double l_ab() const { return l_a + l_b; }
};

/// Discrete model for state [x, y, phi] and wheel rates [w1..w4]: A = I, B = ts * J.
inline std::pair<Mat, Mat> rosbot_model(double ts, const RosbotGeometry& g = {})
{
    if (!(ts > 0.0)) throw std::invalid_argument("rosbot_model: ts must be positive");
    const double l = g.l_ab();
    Mat pattern(3, 4);
    pattern << l, l, l, l,
               l, -l, l, -l,
               1, -1, -1, 1;
    return {Mat::Identity(3, 3), (g.wheel_radius * ts / (4.0 * l)) * pattern};
}

inline Zonotope rosbot_disturbance(double alpha)
{
    Mat G(3, 2);
    G << 0.05, 0.08,
         0.01, 0.06,
         0.03, -0.01;
    return Zonotope(Vec::Zero(3), alpha * G);
}

/// Disturbance active while the offline prior data were recorded.
inline Zonotope rosbot_offline_disturbance()
{
    Mat G(3, 2);
    G << 0.03, -0.01,
         -0.04, 0.05,
         -0.01, 0.0;
    Vec c(3);
    c << 1.0, -1.0, 0.0;
    return Zonotope(c, G);
}

inline Polytope rosbot_state_set()
{
    Vec b(3);
    b << 4.0, 4.0, std::numbers::pi / 2;
    return Polytope::symmetric_box(b);
}

inline Polytope rosbot_input_set() { return Polytope::symmetric_box(Vec::Constant(4, 100.0)); }

/// True system x+ = A x + B u + w with w drawn from Zw.
class Plant {
public:
    Plant(Mat A, Mat B, Zonotope Zw, Vec x0)
        : A_(std::move(A)), B_(std::move(B)), Zw_(std::move(Zw)), x_(std::move(x0))
    {
        detail::require(A_.rows() == A_.cols() && B_.rows() == A_.rows() && Zw_.dim() == A_.rows() &&
                            x_.size() == A_.rows(),
                        "Plant: inconsistent dimensions");
    }

    template <class Rng>
    const Vec& step(const Vec& u, Rng& rng)
    {
        last_w_ = sample(Zw_, rng);
        x_ = A_ * x_ + B_ * u + last_w_;
        return x_;
    }

    const Vec& state() const { return x_; }
    const Vec& last_disturbance() const { return last_w_; }
    const Mat& A() const { return A_; }
    const Mat& B() const { return B_; }
    const Zonotope& disturbance() const { return Zw_; }

private:
    Mat A_;
    Mat B_;
    Zonotope Zw_;
    Vec x_;
    Vec last_w_;
};

}  // namespace zonotube::sim
