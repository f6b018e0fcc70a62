#pragma once

#include <memory>
#include <string>
#include <vector>

#include "pixris/numerics.hpp"

#include <json.hpp>

namespace pixris {

// Azimuth/elevation of one propagation ray. Azimuth wraps into [-pi, pi);
// elevation must lie in [0, pi].
struct AnglePair {
    double azimuth = 0.0;
    double elevation = 0.0;

    AnglePair() = default;
    AnglePair(double az, double el);

    static AnglePair from_degrees(double az_deg, double el_deg);
    bool operator==(const AnglePair& o) const {
        return azimuth == o.azimuth && elevation == o.elevation;
    }
};

struct PreprocessedAngle {
    double cos_az = 1.0;
    double sin_az = 0.0;
    double cos_el = 0.0;
};

// (cos az, sin az, cos el) -- collapses the 2*pi azimuth period.
PreprocessedAngle preprocess(const AnglePair& phi);

// RIS configuration: one state per element, entries in 1..L.
class StateVector {
public:
    StateVector() = default;
    StateVector(std::vector<int> states, int num_states);

    int operator[](std::size_t n) const { return states_[n]; }
    int size() const { return static_cast<int>(states_.size()); }
    int num_states() const { return num_states_; }
    const std::vector<int>& raw() const { return states_; }

    static StateVector constant(int n, int state, int num_states);

private:
    std::vector<int> states_;
    int num_states_ = 0;
};

// Per-element response nu(phi_in, phi_out; state). States are 1-based.
class ResponseModel {
public:
    virtual ~ResponseModel() = default;
    virtual Complex eval(const AnglePair& in, const AnglePair& out, int state) const = 0;
    virtual int num_states() const = 0;
    virtual std::string kind() const = 0;
    virtual nlohmann::json to_json() const = 0;

    // All L states at one angle pair; overridden where feature reuse pays off.
    virtual CVector eval_all(const AnglePair& in, const AnglePair& out) const;
};

Complex eval_response(const ResponseModel& model, const AnglePair& in, const AnglePair& out,
                      int state);

// Models of the form nu_l = feat(in)^T W_l feat(out) over the Legendre kernel
// family expose their structure here so estimation scans can reuse per-side
// feature vectors.
class HarmonicProductModel {
public:
    virtual ~HarmonicProductModel() = default;
    virtual int hp_degree() const = 0;
    virtual const CMatrix& hp_weights(int state) const = 0;  // 1-based
};

CVector response_vector(const ResponseModel& model, const AnglePair& in, const AnglePair& out,
                        const StateVector& s);

// Seeded stand-in for the measured element response: per state, a finite
// product-harmonic expansion nu = sum_{ci,co} w[ci,co] Y_ci(in) Y_co(out)
// with coefficient variance decaying as 4^-(b_i+b_o), scaled so the mean
// element power over uniform angle pairs matches the configured loss.
// hard_mode adds a residual expansion two degrees higher carrying
// residual_power of the total, so finite-degree fits keep a nonzero floor.
class SyntheticTruth : public ResponseModel, public HarmonicProductModel {
public:
    struct Options {
        int num_states = 16;
        int degree = 3;
        bool hard_mode = false;
        double residual_power = 0.01;   // fraction of mean power in the residual term
        double mean_loss_db = 1.5;      // target: mean |nu|^2 = 10^(-mean_loss_db/10)
        int calibration_samples = 100000;
    };

    static SyntheticTruth make(std::uint64_t seed, const Options& opts);

    Complex eval(const AnglePair& in, const AnglePair& out, int state) const override;
    CVector eval_all(const AnglePair& in, const AnglePair& out) const override;
    int num_states() const override { return static_cast<int>(weights_.size()); }
    std::string kind() const override { return "synthetic-truth"; }
    nlohmann::json to_json() const override;
    static SyntheticTruth from_json(const nlohmann::json& j);

    int degree() const { return degree_; }            // including the hard-mode extension
    int base_degree() const { return base_degree_; }  // degree of the main expansion
    double amplitude_scale() const { return scale_; }
    double mean_power() const { return mean_power_; }
    std::uint64_t seed() const { return seed_; }
    // (B+1)^2 x (B+1)^2 coefficient matrix of one state, scale folded in
    const CMatrix& coefficients(int state) const { return weights_[state - 1]; }

    // nu for all states given precomputed kernel vectors (estimation hot path)
    CVector eval_features(const RVector& feat_in, const RVector& feat_out) const;

    int hp_degree() const override { return degree_; }
    const CMatrix& hp_weights(int state) const override { return weights_[state - 1]; }

private:
    std::vector<CMatrix> weights_;  // per state, indexed [c_in][c_out], scale applied
    int degree_ = 0, base_degree_ = 0;
    double scale_ = 1.0, mean_power_ = 0.0;
    std::uint64_t seed_ = 0;
};

// Product-Legendre-kernel approximation: nu_l = sum w_{l,ci,co} Y_ci Y_co.
class KernelModel : public ResponseModel, public HarmonicProductModel {
public:
    KernelModel() = default;
    KernelModel(int degree, std::vector<CMatrix> weights);

    Complex eval(const AnglePair& in, const AnglePair& out, int state) const override;
    CVector eval_all(const AnglePair& in, const AnglePair& out) const override;
    int num_states() const override { return static_cast<int>(weights_.size()); }
    std::string kind() const override { return "kernel"; }
    nlohmann::json to_json() const override;
    static KernelModel from_json(const nlohmann::json& j);

    int degree() const { return degree_; }
    const CMatrix& weights(int state) const { return weights_[state - 1]; }
    CMatrix& weights(int state) { return weights_[state - 1]; }
    // complex parameter count per state: (degree+1)^4
    long parameters_per_state() const;

    CVector eval_features(const RVector& feat_in, const RVector& feat_out) const;

    int hp_degree() const override { return degree_; }
    const CMatrix& hp_weights(int state) const override { return weights_[state - 1]; }

private:
    int degree_ = 0;
    std::vector<CMatrix> weights_;
};

enum class FitMethod { ClosedFormLS, Adam };

struct KernelFitOptions {
    double weight_clip = 1e-3;   // |nu| floor in the 1/|nu|^2 loss weight
    int holdout_samples = 4096;
    // Adam path
    double learning_rate = 1e-4;
    int iterations = 2000;
};

struct KernelFitResult {
    CMatrix weights;     // (B+1)^2 x (B+1)^2 for the fitted state
    double nmse = 0.0;   // held-out sum|err|^2 / sum|nu|^2
};

// Fit one state of the kernel model to a response by sampling num_samples
// uniform angle pairs. ClosedFormLS solves the weighted linear system of
// P(B); Adam minimizes the same loss iteratively.
KernelFitResult fit_kernel(const ResponseModel& truth, int state, int degree, int num_samples,
                           FitMethod method, RngStream& rng, const KernelFitOptions& opts = {});

// Model file IO: versioned JSON with a kind tag. Round-trips are bit-exact.
void save_response_model(const ResponseModel& model, const std::string& path);
std::unique_ptr<ResponseModel> load_response_model(const std::string& path);
std::unique_ptr<ResponseModel> response_model_from_json(const nlohmann::json& j);

// Uniform-on-sphere angle draw: azimuth uniform, elevation cos-uniform.
AnglePair random_angle(RngStream& rng);

}  // namespace pixris
