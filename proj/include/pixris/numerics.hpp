#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <random>

#include <Eigen/Dense>

namespace pixris {

using Complex = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using RVector = Eigen::VectorXd;

constexpr double kPi = 3.14159265358979323846;

// Counter-based stream of reproducible randomness. Identical (seed, stream_id)
// gives bit-identical draws on every platform: the engine is mt19937_64 (fully
// specified by the standard) and all distributions are generated inline here
// rather than through std::*_distribution, whose output is
// implementation-defined. Streams are not thread-safe; parallel code takes one
// stream per unit of work, keyed by stream_id.
class RngStream {
public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    double uniform();                      // [0, 1)
    double uniform(double lo, double hi);  // [lo, hi)
    double normal();                       // N(0, 1)
    Complex cnormal();                     // CN(0, 1), E|z|^2 = 1
    double phase();                        // [0, 2*pi)
    int uniform_int(int lo, int hi);       // inclusive both ends

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

private:
    std::uint64_t seed_, stream_id_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Real orthonormal spherical harmonic Y_b^r evaluated from the flat kernel
// index c = b^2 + b + r + 1, c >= 1. Azimuth branches: cos(r*az) for r > 0,
// sin(|r|*az) for r < 0, constant for r = 0; each carries the (-1)^r factor
// and the kappa_b^r normalization so that the family is orthonormal on the
// sphere. Throws std::invalid_argument on an undecodable c.
double legendre_kernel(int c, double azimuth, double elevation);

// Decode c = b^2 + b + r + 1 into (degree b, order r); throws on invalid c.
void decode_kernel_index(int c, int& degree, int& order);

// Number of kernels with degree <= B: (B+1)^2.
inline int kernel_count(int degree) { return (degree + 1) * (degree + 1); }

// All kernels f_{L,1..C} at one angle, C = (degree+1)^2.
RVector legendre_kernel_vector(int degree, double azimuth, double elevation);

// Associated Legendre P_b^r(x) with the (1-x^2)^{r/2} prefactor folded in and
// no Condon-Shortley phase, via upward recurrence on the degree. r >= 0.
double assoc_legendre(int degree, int order, double x);

// argmin_x ||A x - y||^2 + ridge ||x||^2. With ridge = 0 uses column-pivoted
// QR and reports rank deficiency; with ridge > 0 solves the regularized
// normal equations by LDLT. Requires rows >= cols unless ridge > 0.
CVector ls_solve(const CMatrix& A, const CVector& y, double ridge = 0.0);

struct AdamState {
    std::size_t step = 0;
    RVector first_moment;
    RVector second_moment;
    double learning_rate = 0.1;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState create(Eigen::Index dim, double learning_rate);
};

// One bias-corrected Adam descent step. Ascent callers negate the gradient.
// Throws if grads contain NaN or dimensions mismatch.
RVector adam_step(const RVector& params, const RVector& grads, AdamState& state);

// Central finite differences, one f evaluation pair per coordinate.
RVector finite_diff_grad(const std::function<double(const RVector&)>& f,
                         const RVector& x, double h);

}  // namespace pixris
