#include "pixris/numerics.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pixris {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id) {
    std::uint64_t x = seed;
    std::uint64_t a = splitmix64(x);
    x ^= stream_id * 0xD1B54A32D192ED03ULL;
    std::uint64_t b = splitmix64(x);
    engine_.seed(a ^ (b + 0x9E3779B97F4A7C15ULL));
}

double RngStream::uniform() {
    // 53 mantissa bits from the top of the 64-bit draw
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller; u strictly positive so the log is finite
    double u = 0.0;
    do {
        u = uniform();
    } while (u <= 0.0);
    double v = uniform();
    double r = std::sqrt(-2.0 * std::log(u));
    spare_ = r * std::sin(2.0 * kPi * v);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * v);
}

Complex RngStream::cnormal() {
    const double s = std::sqrt(0.5);
    double re = normal();
    double im = normal();
    return Complex(s * re, s * im);
}

double RngStream::phase() { return 2.0 * kPi * uniform(); }

int RngStream::uniform_int(int lo, int hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: hi < lo");
    auto span = static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1;
    auto draw = static_cast<std::uint64_t>(uniform() * static_cast<double>(span));
    if (draw >= span) draw = span - 1;
    return lo + static_cast<int>(draw);
}

void decode_kernel_index(int c, int& degree, int& order) {
    if (c < 1) throw std::invalid_argument("kernel index must be >= 1, got " + std::to_string(c));
    int b = static_cast<int>(std::floor(std::sqrt(static_cast<double>(c - 1))));
    // guard against floating floor at perfect squares
    while ((b + 1) * (b + 1) <= c - 1) ++b;
    while (b * b > c - 1) --b;
    int r = c - 1 - b * b - b;
    if (r < -b || r > b)
        throw std::invalid_argument("kernel index " + std::to_string(c) + " has no valid (degree, order)");
    degree = b;
    order = r;
}

double assoc_legendre(int degree, int order, double x) {
    if (order < 0 || order > degree) throw std::invalid_argument("assoc_legendre: need 0 <= order <= degree");
    // P_m^m = (2m-1)!! (1-x^2)^{m/2}, then upward in degree:
    // (b-r) P_b^r = (2b-1) x P_{b-1}^r - (b+r-1) P_{b-2}^r
    double somx2 = std::sqrt(std::max(0.0, (1.0 - x) * (1.0 + x)));
    double pmm = 1.0;
    double fact = 1.0;
    for (int m = 0; m < order; ++m) {
        pmm *= fact * somx2;
        fact += 2.0;
    }
    if (degree == order) return pmm;
    double pmmp1 = x * (2.0 * order + 1.0) * pmm;
    if (degree == order + 1) return pmmp1;
    double pbr = 0.0;
    for (int b = order + 2; b <= degree; ++b) {
        pbr = (x * (2.0 * b - 1.0) * pmmp1 - (b + order - 1.0) * pmm) / (b - order);
        pmm = pmmp1;
        pmmp1 = pbr;
    }
    return pbr;
}

namespace {

double sph_norm(int b, int r_abs) {
    double log_ratio = std::lgamma(b - r_abs + 1.0) - std::lgamma(b + r_abs + 1.0);
    return std::sqrt((2.0 * b + 1.0) / (4.0 * kPi) * std::exp(log_ratio));
}

}  // namespace

double legendre_kernel(int c, double azimuth, double elevation) {
    int b = 0, r = 0;
    decode_kernel_index(c, b, r);
    double x = std::cos(elevation);
    if (r == 0) return sph_norm(b, 0) * assoc_legendre(b, 0, x);
    int ra = std::abs(r);
    double sign = (ra % 2 == 0) ? 1.0 : -1.0;  // (-1)^r, same for +/-r
    double k = sign * std::sqrt(2.0) * sph_norm(b, ra) * assoc_legendre(b, ra, x);
    return r > 0 ? k * std::cos(ra * azimuth) : k * std::sin(ra * azimuth);
}

RVector legendre_kernel_vector(int degree, double azimuth, double elevation) {
    const int n = kernel_count(degree);
    RVector out(n);
    double x = std::cos(elevation);
    // shared P_b^r evaluations: iterate (b, r>=0) and fill both signs
    for (int b = 0; b <= degree; ++b) {
        out[b * b + b] = sph_norm(b, 0) * assoc_legendre(b, 0, x);
        for (int r = 1; r <= b; ++r) {
            double sign = (r % 2 == 0) ? 1.0 : -1.0;
            double k = sign * std::sqrt(2.0) * sph_norm(b, r) * assoc_legendre(b, r, x);
            out[b * b + b + r] = k * std::cos(r * azimuth);
            out[b * b + b - r] = k * std::sin(r * azimuth);
        }
    }
    return out;
}

CVector ls_solve(const CMatrix& A, const CVector& y, double ridge) {
    if (A.rows() != y.size()) throw std::invalid_argument("ls_solve: dimension mismatch");
    if (ridge < 0.0) throw std::invalid_argument("ls_solve: ridge must be >= 0");
    if (ridge == 0.0) {
        if (A.rows() < A.cols())
            throw std::invalid_argument("ls_solve: underdetermined system needs ridge > 0");
        Eigen::ColPivHouseholderQR<CMatrix> qr(A);
        if (qr.rank() < A.cols())
            throw std::runtime_error("ls_solve: A^H A is rank-deficient (rank " +
                                     std::to_string(qr.rank()) + " of " +
                                     std::to_string(A.cols()) + " columns); pass ridge > 0");
        return qr.solve(y);
    }
    CMatrix normal = A.adjoint() * A;
    normal.diagonal().array() += ridge;
    Eigen::LDLT<CMatrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("ls_solve: LDLT factorization of the ridge system failed");
    return ldlt.solve(A.adjoint() * y);
}

AdamState AdamState::create(Eigen::Index dim, double learning_rate) {
    AdamState s;
    s.first_moment = RVector::Zero(dim);
    s.second_moment = RVector::Zero(dim);
    s.learning_rate = learning_rate;
    return s;
}

RVector adam_step(const RVector& params, const RVector& grads, AdamState& state) {
    if (params.size() != grads.size() || params.size() != state.first_moment.size())
        throw std::invalid_argument("adam_step: dimension mismatch");
    if (!grads.allFinite()) throw std::invalid_argument("adam_step: gradient contains NaN/Inf");
    state.step += 1;
    state.first_moment = state.beta1 * state.first_moment + (1.0 - state.beta1) * grads;
    state.second_moment =
        state.beta2 * state.second_moment + (1.0 - state.beta2) * grads.cwiseProduct(grads);
    double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    RVector mhat = state.first_moment / c1;
    RVector vhat = state.second_moment / c2;
    return params.array() -
           state.learning_rate * mhat.array() / (vhat.array().sqrt() + state.epsilon);
}

RVector finite_diff_grad(const std::function<double(const RVector&)>& f,
                         const RVector& x, double h) {
    if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be > 0");
    RVector g(x.size());
    RVector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        double xi = x[i];
        xp[i] = xi + h;
        double fp = f(xp);
        xp[i] = xi - h;
        double fm = f(xp);
        xp[i] = xi;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

}  // namespace pixris
