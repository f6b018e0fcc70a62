#include "pixris/response.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "pixris/nn.hpp"

namespace pixris {

AnglePair::AnglePair(double az, double el) {
    if (!(el >= 0.0 && el <= kPi))
        throw std::invalid_argument("AnglePair: elevation must lie in [0, pi]");
    az = std::fmod(az + kPi, 2.0 * kPi);
    if (az < 0.0) az += 2.0 * kPi;
    azimuth = az - kPi;
    elevation = el;
}

AnglePair AnglePair::from_degrees(double az_deg, double el_deg) {
    return AnglePair(az_deg * kPi / 180.0, el_deg * kPi / 180.0);
}

PreprocessedAngle preprocess(const AnglePair& phi) {
    return PreprocessedAngle{std::cos(phi.azimuth), std::sin(phi.azimuth),
                             std::cos(phi.elevation)};
}

StateVector::StateVector(std::vector<int> states, int num_states)
    : states_(std::move(states)), num_states_(num_states) {
    if (num_states_ < 1) throw std::invalid_argument("StateVector: need num_states >= 1");
    for (int s : states_)
        if (s < 1 || s > num_states_)
            throw std::invalid_argument("StateVector: state " + std::to_string(s) +
                                        " outside 1.." + std::to_string(num_states_));
}

StateVector StateVector::constant(int n, int state, int num_states) {
    return StateVector(std::vector<int>(static_cast<std::size_t>(n), state), num_states);
}

CVector ResponseModel::eval_all(const AnglePair& in, const AnglePair& out) const {
    CVector v(num_states());
    for (int l = 1; l <= num_states(); ++l) v[l - 1] = eval(in, out, l);
    return v;
}

Complex eval_response(const ResponseModel& model, const AnglePair& in, const AnglePair& out,
                      int state) {
    if (state < 1 || state > model.num_states())
        throw std::invalid_argument("eval_response: state " + std::to_string(state) +
                                    " outside 1.." + std::to_string(model.num_states()));
    return model.eval(in, out, state);
}

CVector response_vector(const ResponseModel& model, const AnglePair& in, const AnglePair& out,
                        const StateVector& s) {
    CVector all = model.eval_all(in, out);
    CVector v(s.size());
    for (int n = 0; n < s.size(); ++n) {
        int state = s[n];
        if (state < 1 || state > model.num_states())
            throw std::invalid_argument("response_vector: state outside model range");
        v[n] = all[state - 1];
    }
    return v;
}

AnglePair random_angle(RngStream& rng) {
    double az = rng.uniform(-kPi, kPi);
    double el = std::acos(rng.uniform(-1.0, 1.0));
    return AnglePair(az, el);
}

// ---------------------------------------------------------------------------
// SyntheticTruth

namespace {

int degree_of_kernel(int c) {
    int b = 0, r = 0;
    decode_kernel_index(c, b, r);
    return b;
}

}  // namespace

SyntheticTruth SyntheticTruth::make(std::uint64_t seed, const Options& opts) {
    if (opts.num_states < 2) throw std::invalid_argument("SyntheticTruth: need L >= 2");
    if (opts.degree < 1) throw std::invalid_argument("SyntheticTruth: need degree >= 1");

    SyntheticTruth t;
    t.seed_ = seed;
    t.base_degree_ = opts.degree;
    t.degree_ = opts.hard_mode ? opts.degree + 2 : opts.degree;

    const int c_all = kernel_count(t.degree_);
    const int c_base = kernel_count(opts.degree);
    RngStream coeffs(seed, 0x5252u);

    t.weights_.resize(opts.num_states);
    for (auto& w : t.weights_) {
        w = CMatrix::Zero(c_all, c_all);
        for (int ci = 1; ci <= c_base; ++ci)
            for (int co = 1; co <= c_base; ++co) {
                double sd = std::pow(2.0, -(degree_of_kernel(ci) + degree_of_kernel(co)));
                w(ci - 1, co - 1) = sd * coeffs.cnormal();
            }
    }
    if (opts.hard_mode) {
        // residual term: coefficients only at degrees above the base expansion
        for (auto& w : t.weights_) {
            double base_pow = 0.0, res_pow = 0.0;
            for (int ci = 1; ci <= c_base; ++ci)
                for (int co = 1; co <= c_base; ++co) base_pow += std::norm(w(ci - 1, co - 1));
            CMatrix res = CMatrix::Zero(c_all, c_all);
            for (int ci = 1; ci <= c_all; ++ci)
                for (int co = 1; co <= c_all; ++co) {
                    if (degree_of_kernel(ci) <= opts.degree && degree_of_kernel(co) <= opts.degree)
                        continue;
                    double sd = std::pow(2.0, -(degree_of_kernel(ci) + degree_of_kernel(co)));
                    res(ci - 1, co - 1) = sd * coeffs.cnormal();
                    res_pow += std::norm(res(ci - 1, co - 1));
                }
            // orthonormal kernels: mean power is coefficient power / (4*pi)^2,
            // so power fractions can be set on the coefficients directly
            double want = base_pow * opts.residual_power / (1.0 - opts.residual_power);
            res *= std::sqrt(want / res_pow);
            w += res;
        }
    }

    // calibrate the amplitude so mean |nu|^2 over uniform pairs hits the target
    RngStream calib(seed, 0xCA11Bu);
    double acc = 0.0;
    const int n_cal = opts.calibration_samples;
    for (int i = 0; i < n_cal; ++i) {
        AnglePair in = random_angle(calib), out = random_angle(calib);
        RVector fi = legendre_kernel_vector(t.degree_, in.azimuth, in.elevation);
        RVector fo = legendre_kernel_vector(t.degree_, out.azimuth, out.elevation);
        int l = 1 + (i % opts.num_states);
        acc += std::norm(Complex((fi.transpose().cast<Complex>() * t.weights_[l - 1] *
                                  fo.cast<Complex>())
                                     .value()));
    }
    double measured = acc / n_cal;
    double target = std::pow(10.0, -opts.mean_loss_db / 10.0);
    t.scale_ = std::sqrt(target / measured);
    for (auto& w : t.weights_) w *= t.scale_;
    t.mean_power_ = target;
    return t;
}

Complex SyntheticTruth::eval(const AnglePair& in, const AnglePair& out, int state) const {
    if (state < 1 || state > num_states())
        throw std::invalid_argument("SyntheticTruth::eval: state out of range");
    RVector fi = legendre_kernel_vector(degree_, in.azimuth, in.elevation);
    RVector fo = legendre_kernel_vector(degree_, out.azimuth, out.elevation);
    return (fi.transpose().cast<Complex>() * (weights_[state - 1] * fo.cast<Complex>())).value();
}

CVector SyntheticTruth::eval_all(const AnglePair& in, const AnglePair& out) const {
    RVector fi = legendre_kernel_vector(degree_, in.azimuth, in.elevation);
    RVector fo = legendre_kernel_vector(degree_, out.azimuth, out.elevation);
    return eval_features(fi, fo);
}

CVector SyntheticTruth::eval_features(const RVector& feat_in, const RVector& feat_out) const {
    CVector out(num_states());
    CVector fo = feat_out.cast<Complex>();
    for (int l = 0; l < num_states(); ++l)
        out[l] = (feat_in.transpose().cast<Complex>() * (weights_[l] * fo)).value();
    return out;
}

namespace {

nlohmann::json cmatrix_to_json(const CMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c).real());
            row.push_back(m(r, c).imag());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

CMatrix cmatrix_from_json(const nlohmann::json& j) {
    auto rows = static_cast<Eigen::Index>(j.size());
    if (rows == 0) return CMatrix(0, 0);
    auto cols = static_cast<Eigen::Index>(j[0].size() / 2);
    CMatrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = Complex(j[r][2 * c].get<double>(), j[r][2 * c + 1].get<double>());
    return m;
}

}  // namespace

nlohmann::json SyntheticTruth::to_json() const {
    nlohmann::json j;
    j["kind"] = kind();
    j["version"] = 1;
    j["num_states"] = num_states();
    j["degree"] = degree_;
    j["base_degree"] = base_degree_;
    j["seed"] = seed_;
    j["amplitude_scale"] = scale_;
    j["mean_power"] = mean_power_;
    nlohmann::json w = nlohmann::json::array();
    for (const auto& m : weights_) w.push_back(cmatrix_to_json(m));
    j["weights"] = std::move(w);
    return j;
}

SyntheticTruth SyntheticTruth::from_json(const nlohmann::json& j) {
    SyntheticTruth t;
    t.degree_ = j.at("degree").get<int>();
    t.base_degree_ = j.at("base_degree").get<int>();
    t.seed_ = j.at("seed").get<std::uint64_t>();
    t.scale_ = j.at("amplitude_scale").get<double>();
    t.mean_power_ = j.at("mean_power").get<double>();
    for (const auto& m : j.at("weights")) t.weights_.push_back(cmatrix_from_json(m));
    return t;
}

// ---------------------------------------------------------------------------
// KernelModel

KernelModel::KernelModel(int degree, std::vector<CMatrix> weights)
    : degree_(degree), weights_(std::move(weights)) {
    const int c = kernel_count(degree);
    for (const auto& w : weights_)
        if (w.rows() != c || w.cols() != c)
            throw std::invalid_argument("KernelModel: weight tensor must be (B+1)^2 square");
}

Complex KernelModel::eval(const AnglePair& in, const AnglePair& out, int state) const {
    if (state < 1 || state > num_states())
        throw std::invalid_argument("KernelModel::eval: state out of range");
    RVector fi = legendre_kernel_vector(degree_, in.azimuth, in.elevation);
    RVector fo = legendre_kernel_vector(degree_, out.azimuth, out.elevation);
    return (fi.transpose().cast<Complex>() * (weights_[state - 1] * fo.cast<Complex>())).value();
}

CVector KernelModel::eval_all(const AnglePair& in, const AnglePair& out) const {
    RVector fi = legendre_kernel_vector(degree_, in.azimuth, in.elevation);
    RVector fo = legendre_kernel_vector(degree_, out.azimuth, out.elevation);
    return eval_features(fi, fo);
}

CVector KernelModel::eval_features(const RVector& feat_in, const RVector& feat_out) const {
    CVector out(num_states());
    CVector fo = feat_out.cast<Complex>();
    for (int l = 0; l < num_states(); ++l)
        out[l] = (feat_in.transpose().cast<Complex>() * (weights_[l] * fo)).value();
    return out;
}

long KernelModel::parameters_per_state() const {
    long c = kernel_count(degree_);
    return c * c;
}

nlohmann::json KernelModel::to_json() const {
    nlohmann::json j;
    j["kind"] = kind();
    j["version"] = 1;
    j["num_states"] = num_states();
    j["degree"] = degree_;
    nlohmann::json w = nlohmann::json::array();
    for (const auto& m : weights_) w.push_back(cmatrix_to_json(m));
    j["weights"] = std::move(w);
    return j;
}

KernelModel KernelModel::from_json(const nlohmann::json& j) {
    std::vector<CMatrix> w;
    for (const auto& m : j.at("weights")) w.push_back(cmatrix_from_json(m));
    return KernelModel(j.at("degree").get<int>(), std::move(w));
}

// ---------------------------------------------------------------------------
// fit_kernel

KernelFitResult fit_kernel(const ResponseModel& truth, int state, int degree, int num_samples,
                           FitMethod method, RngStream& rng, const KernelFitOptions& opts) {
    if (degree < 1) throw std::invalid_argument("fit_kernel: need degree >= 1");
    const int c = kernel_count(degree);
    const long dim = static_cast<long>(c) * c;
    if (method == FitMethod::ClosedFormLS && num_samples < dim)
        throw std::invalid_argument("fit_kernel: " + std::to_string(num_samples) +
                                    " samples underdetermine " + std::to_string(dim) +
                                    " weights");

    // design rows are outer products of the in/out kernel vectors
    RMatrix X(num_samples, dim);
    CVector target(num_samples);
    RVector wts(num_samples);
    for (int s = 0; s < num_samples; ++s) {
        AnglePair in = random_angle(rng), out = random_angle(rng);
        RVector fi = legendre_kernel_vector(degree, in.azimuth, in.elevation);
        RVector fo = legendre_kernel_vector(degree, out.azimuth, out.elevation);
        for (int ci = 0; ci < c; ++ci)
            for (int co = 0; co < c; ++co) X(s, ci * c + co) = fi[ci] * fo[co];
        target[s] = truth.eval(in, out, state);
        double mag = std::max(std::abs(target[s]), opts.weight_clip);
        wts[s] = 1.0 / (mag * mag);
    }

    CVector w_flat;
    if (method == FitMethod::ClosedFormLS) {
        // scale rows by sqrt(weight): weighted LS of P(B)
        CMatrix A(num_samples, dim);
        CVector y(num_samples);
        for (int s = 0; s < num_samples; ++s) {
            double sw = std::sqrt(wts[s]);
            A.row(s) = (sw * X.row(s)).cast<Complex>();
            y[s] = sw * target[s];
        }
        w_flat = ls_solve(A, y);
    } else {
        // Adam on the real/imag stack of w; loss is mean weighted |err|^2
        RVector params = RVector::Zero(2 * dim);
        AdamState adam = AdamState::create(2 * dim, opts.learning_rate);
        for (int it = 0; it < opts.iterations; ++it) {
            CVector wr(dim);
            for (long i = 0; i < dim; ++i) wr[i] = Complex(params[2 * i], params[2 * i + 1]);
            CVector pred = X.cast<Complex>() * wr;
            CVector err = pred - target;
            RVector grad(2 * dim);
            CVector werr = (2.0 / num_samples) * wts.asDiagonal() * err;
            CVector gc = X.transpose().cast<Complex>() * werr;
            for (long i = 0; i < dim; ++i) {
                grad[2 * i] = gc[i].real();
                grad[2 * i + 1] = gc[i].imag();
            }
            params = adam_step(params, grad, adam);
        }
        w_flat.resize(dim);
        for (long i = 0; i < dim; ++i) w_flat[i] = Complex(params[2 * i], params[2 * i + 1]);
    }

    KernelFitResult res;
    res.weights = CMatrix(c, c);
    for (int ci = 0; ci < c; ++ci)
        for (int co = 0; co < c; ++co) res.weights(ci, co) = w_flat[ci * c + co];

    // held-out NMSE on fresh samples
    double num = 0.0, den = 0.0;
    for (int s = 0; s < opts.holdout_samples; ++s) {
        AnglePair in = random_angle(rng), out = random_angle(rng);
        RVector fi = legendre_kernel_vector(degree, in.azimuth, in.elevation);
        RVector fo = legendre_kernel_vector(degree, out.azimuth, out.elevation);
        Complex pred =
            (fi.transpose().cast<Complex>() * res.weights * fo.cast<Complex>()).value();
        Complex tv = truth.eval(in, out, state);
        num += std::norm(pred - tv);
        den += std::norm(tv);
    }
    res.nmse = num / den;
    return res;
}

// ---------------------------------------------------------------------------
// model file IO

void save_response_model(const ResponseModel& model, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << model.to_json().dump();
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::unique_ptr<ResponseModel> response_model_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "synthetic-truth")
        return std::make_unique<SyntheticTruth>(SyntheticTruth::from_json(j));
    if (kind == "kernel") return std::make_unique<KernelModel>(KernelModel::from_json(j));
    if (kind == "neural") return std::make_unique<NeuralModel>(NeuralModel::from_json(j));
    throw std::runtime_error("unknown response model kind: " + kind);
}

std::unique_ptr<ResponseModel> load_response_model(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    f >> j;
    return response_model_from_json(j);
}

}  // namespace pixris
