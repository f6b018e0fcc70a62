#pragma once

#include <cstdint>
#include <vector>

#include "pixris/numerics.hpp"
#include "pixris/response.hpp"

namespace pixris {

struct ArrayGeometry {
    int rows = 1;
    int cols = 1;
    double spacing = 0.5;  // wavelengths

    int size() const { return rows * cols; }
};

// UPA steering vector, elements in the x-y plane, phase reference at (0,0),
// row-major element order: entry (p,q) = exp(j 2*pi*spacing*(p sin(el)cos(az)
// + q sin(el)sin(az))).
CVector steering_vector(const ArrayGeometry& g, const AnglePair& phi);

// Scenario: geometry, cluster structure, powers and the calibrated SNR knob.
// Long-term draws (angles, cluster gains) are keyed by seed; block phases by
// (seed, t). Construction enforces the sounding feasibility bounds
// I < B_sound*K and J < B_sound*M.
struct ScenarioParams {
    ArrayGeometry bs{4, 1, 0.5};
    ArrayGeometry ris{8, 8, 0.5};
    int num_users = 2;          // K
    int bs_clusters = 2;        // I
    int ue_clusters = 2;        // J
    int rays_per_cluster = 3;   // D_i
    double angular_spread_deg = 2.0;
    double k_factor_db = 3.0;
    double target_snr_db = 0.0;
    double noise_ul = 1.0;      // sigma_u^2
    double noise_dl = 1.0;      // sigma_z^2
    double transmit_power = 1.0;
    int sounding_configs = 16;  // B_sound, for the feasibility guard
    std::uint64_t seed = 1;
    int snr_calibration_blocks = 200;
};

class Scenario;

// One (BS-RIS, RIS-UE) drop for a single time block: long-term rays plus the
// block's random phases. Gains are real; NLoS ray phases live in eps_*.
struct ChannelRealization {
    int block = 0;
    AnglePair phi_bs_los, phi_in_los;

    struct BsCluster {
        double gain = 0.0;                  // a^(i)
        std::vector<AnglePair> bs_angles;   // phi_BS^(i,d)
        std::vector<AnglePair> in_angles;   // phi_in^(i,d)
    };
    std::vector<BsCluster> bs_clusters;
    std::vector<std::vector<double>> eps_bs;  // [cluster][ray] phase in [0,2pi)

    struct UserLink {
        double los_gain = 1.0;              // b_k^(0), real
        AnglePair phi_out_los;
        struct Cluster {
            double gain = 0.0;              // b_k^(j)
            std::vector<AnglePair> out_angles;
        };
        std::vector<Cluster> clusters;
    };
    std::vector<UserLink> users;
    std::vector<std::vector<std::vector<double>>> eps_ue;  // [user][cluster][ray]

    int num_users() const { return static_cast<int>(users.size()); }

    // G_t as an explicit M x N matrix (test/diagnostic path)
    CMatrix bs_ris_matrix(const ArrayGeometry& bs, const ArrayGeometry& ris) const;
    // h_r,k,t as an explicit N vector
    CVector ris_ue_vector(const ArrayGeometry& ris, int user) const;
};

class Scenario {
public:
    static Scenario make(const ScenarioParams& params);

    const ScenarioParams& params() const { return params_; }
    double ue_gain_scale() const { return ue_gain_scale_; }

    // Deterministic per (seed, t); long-term parameters shared across blocks.
    ChannelRealization realization(int block) const;

private:
    ScenarioParams params_;
    double ue_gain_scale_ = 1.0;
    ChannelRealization longterm_;  // phases empty; template for all blocks
};

// alpha_RIS(in)^H diag(nu(in,out;s)) alpha_RIS(out) as one N-term sum.
Complex ris_quadratic_form(const ResponseModel& model, const ArrayGeometry& ris,
                           const AnglePair& in, const AnglePair& out, const StateVector& s);

// Exact cascaded channel h_{k,t}(s) of the double ray sum, length M.
CVector cascaded_channel(const ChannelRealization& real, const ArrayGeometry& bs,
                         const ArrayGeometry& ris, const ResponseModel& model,
                         const StateVector& s, int user);

// M x K matrix stacking all users' cascaded channels.
CMatrix cascaded_channel_matrix(const ChannelRealization& real, const ArrayGeometry& bs,
                                const ArrayGeometry& ris, const ResponseModel& model,
                                const StateVector& s);

// Unitary basis with first column alpha_BS(phi_bs_los)/sqrt(M):
// diag(alpha_BS) (DFT(M1) kron DFT(M2)) with unitary DFT factors.
CMatrix basis_matrix(const ArrayGeometry& bs, const AnglePair& phi_bs_los);

// Approximate-model channel V * (A F d): A is M x (I+1), F is the
// basis-coefficient matrix f_{i,j} at one state, d is (J+1).
CVector approx_model_channel(const CMatrix& V, const CMatrix& A, const CMatrix& F,
                             const CVector& d);

// Monte-Carlo estimate of E[ ||G_t||_F^2 ||h_r,k,t||^2 / (M N^2) ] in dB.
double snr_report(const Scenario& scenario, const std::vector<ChannelRealization>& blocks);

}  // namespace pixris
