#pragma once

#include <optional>
#include <string>
#include <vector>

#include "pixris/sounding.hpp"

#include <json.hpp>

namespace pixris {

// Grid-based candidate angle set D: azimuth cells cover [-pi, pi), elevation
// cells are centered on (0, pi). Index = az_index * num_el + el_index.
struct AngleGrid {
    double az_step = 0.0, el_step = 0.0;
    int num_az = 0, num_el = 0;

    static AngleGrid make(double az_step_rad, double el_step_rad);
    static AngleGrid make_degrees(double az_deg, double el_deg);

    int size() const { return num_az * num_el; }
    AnglePair at(int idx) const;
    int index_of(int az_i, int el_i) const { return az_i * num_el + el_i; }
    // 8-neighborhood; azimuth wraps, elevation clips at the poles
    std::vector<int> neighbors(int idx) const;
    // nearest grid index to an arbitrary angle
    int snap(const AnglePair& phi) const;
};

struct EstimationStats {
    long candidate_evals = 0;  // per-candidate closed-form evaluations (grid touches)
    long ls_solves = 0;
    long refits = 0;
};

struct EstimationOptions {
    int als_sweeps = 40;        // step 2-3 alternations; 1 = the literal single pass
    double als_tol = 1e-12;     // stop when the residual stops moving (relative)
    double ridge_scale = 1e-10; // ridge = scale * trace(A^H A) / cols
    bool literal_eq30 = false;  // step-2 regressors without the d_hat_{k,t,0} factor
};

// Instantaneous coefficients for one block.
struct BlockCoefficients {
    CMatrix a;               // M x |A_in|, a(0,0) = 1
    std::vector<CVector> d;  // per user, |A_out,k|
    double residual = 0.0;   // sum_{b,k} ||y - model||^2
};

// Everything needed to predict h_{k,t}(s) at any state: the angle sets, the
// BS-side basis anchor, and per-block coefficients.
struct EstimatedKnowledge {
    ArrayGeometry bs, ris;
    AnglePair phi_bs_los;
    std::vector<AnglePair> angles_in;               // [0] = known LoS incidence
    std::vector<std::vector<AnglePair>> angles_out; // per user, [0] = estimated LoS
    std::vector<BlockCoefficients> blocks;

    int num_blocks() const { return static_cast<int>(blocks.size()); }
    int num_users() const { return static_cast<int>(angles_out.size()); }

    nlohmann::json to_json() const;  // angles in degrees, coefficients as re/im
    static EstimatedKnowledge from_json(const nlohmann::json& j);
    void save(const std::string& path) const;
    static EstimatedKnowledge load(const std::string& path);
};

// Eq.-(27) basis coefficient; alias of the channel quadratic form.
Complex basis_f(const ResponseModel& model, const ArrayGeometry& ris, const AnglePair& phi_in,
                const AnglePair& phi_out, const StateVector& s);

// Algorithm-1 instantaneous estimation for one block, given the angle sets.
// Step 1 pins a_{t,1,0} = 1 and LS-fits the LoS pair; steps 2-3 alternate
// als_sweeps times (the first sweep is the literal paper pass).
BlockCoefficients estimate_instantaneous(const SoundingSet& sounding, int block,
                                         const std::vector<AnglePair>& angles_in,
                                         const std::vector<std::vector<AnglePair>>& angles_out,
                                         const ArrayGeometry& bs, const ArrayGeometry& ris,
                                         const ResponseModel& model, const AnglePair& phi_bs_los,
                                         const EstimationOptions& opts = {},
                                         EstimationStats* stats = nullptr);

struct AngleEstimationOptions {
    int max_in = 8;             // cap on |A_in| including the known LoS
    int max_out = 8;            // cap on |A_out,k| including the LoS pick
    double improve_frac = 0.01; // stop when the best candidate explains less than
                                // this fraction of the residual energy
    double energy_floor_rel = 1e-11;  // noiseless stop: residual below this
                                      // fraction of the observation energy
    bool polish = true;         // on-grid neighbor swaps after each append
    int polish_rounds = 3;
    int greedy_als_sweeps = 8;  // refit accuracy inside the greedy loop
    EstimationOptions final_fit{};
    int threads = 1;            // grid scans partition over this many workers
};

struct AngleEstimationResult {
    std::vector<AnglePair> angles_in;
    std::vector<std::vector<AnglePair>> angles_out;
    std::vector<int> grid_in;                 // grid indices of angles_in
    std::vector<std::vector<int>> grid_out;
    EstimatedKnowledge knowledge;             // coefficients from the final full fit
    double residual_energy = 0.0;             // mean over (t,b,k) after the final fit
    std::vector<double> residual_trace;       // total residual after each append+polish
    EstimationStats stats;
};

// Algorithm-2 long-term angle estimation: P(C-1) seeds each user's LoS
// reflection angle, then a greedy loop appends whichever P(C-2) incident or
// P(C-3) reflection candidate explains the most residual energy, refits all
// coefficients on the grown sets, and polishes every selected angle over its
// grid neighbors. Stops on the energy guard (mean residual <= M sigma_u^2,
// or the relative floor when noiseless), the set-size bounds, or when the
// best candidate stops explaining a meaningful fraction of the residual.
AngleEstimationResult estimate_angles(const SoundingSet& sounding, const ArrayGeometry& bs,
                                      const ArrayGeometry& ris, const ResponseModel& model,
                                      const AngleGrid& grid, const AnglePair& phi_in_los,
                                      const AnglePair& phi_bs_los,
                                      const AngleEstimationOptions& opts = {});

// Eq.-(25) prediction at an arbitrary state, all users: M x K.
CMatrix predict(const EstimatedKnowledge& knowledge, const ResponseModel& model,
                const StateVector& s, int block);
CVector predict_user(const EstimatedKnowledge& knowledge, const ResponseModel& model,
                     const StateVector& s, int user, int block);

// sum ||pred - truth||^2 / sum ||truth||^2
double nmse(const CMatrix& predicted, const CMatrix& truth);

// streaming accumulator for sweep-level NMSE
struct NmseAccumulator {
    double num = 0.0, den = 0.0;
    void add(const CMatrix& predicted, const CMatrix& truth);
    double value() const { return den > 0 ? num / den : 0.0; }
};

}  // namespace pixris
