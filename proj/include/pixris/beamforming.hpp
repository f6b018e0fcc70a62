#pragma once

#include <cstdint>
#include <vector>

#include "pixris/estimation.hpp"

namespace pixris {

// Relaxed selection state: logits S~ (L x N); the selection matrix is the
// squared column softmax, so sum_l sqrt(sbar_{n,l}) = 1 holds by construction.
struct RelaxedState {
    RMatrix logits;  // L x N

    RMatrix selection() const;  // sbar, L x N
};

RMatrix softmax_squared(const RMatrix& logits);

struct PrecoderMatrix {
    CMatrix w;                 // M x K
    double regularizer = 0.0;  // varsigma
    double power_scale = 0.0;  // gamma
};

// Eq. (9)/(50): W = sqrt(gamma) H* (H^T H* + varsigma I)^-1 with gamma set so
// (1/K) sum_k ||w_k||^2 = P_T exactly.
PrecoderMatrix rzf(const CMatrix& H, double varsigma, double transmit_power);

// Eq. (10). Natural log by default; bits toggles log2.
double sum_rate(const CMatrix& H, const CMatrix& W, double noise_dl, bool bits = false);
RVector per_user_rates(const CMatrix& H, const CMatrix& W, double noise_dl, bool bits = false);

// nu averaged over states with the relaxed selection weights of one element.
Complex relaxed_response(const ResponseModel& model, const AnglePair& in, const AnglePair& out,
                         const RVector& sbar_column);

// The cascaded channel is linear in the per-element selection weights; this
// captures that linear map once so optimization steps cost two small GEMVs.
// h_k = E_k vec(sbar) with vec ordered element-major: index n*L + (l-1).
// The same ray pass also fills the per-element map C_k (response identically
// one per element) used by the phased-array baseline: h_k = C_k z.
class RelaxedChannelMap {
public:
    static RelaxedChannelMap from_realization(const ChannelRealization& real,
                                              const ArrayGeometry& bs, const ArrayGeometry& ris,
                                              const ResponseModel& model);
    static RelaxedChannelMap from_knowledge(const EstimatedKnowledge& knowledge,
                                            const ResponseModel& model, int block);

    int num_users() const { return static_cast<int>(basis_.size()); }
    int num_bs() const { return num_bs_; }
    int num_elements() const { return num_elements_; }
    int num_states() const { return num_states_; }

    CMatrix channel(const RMatrix& sbar) const;
    CMatrix channel(const StateVector& s) const;
    // gradient wrt sbar (L x N) for a real objective with channel cotangent GH
    RMatrix adjoint_sbar(const CMatrix& GH) const;

    // phased-array path: per-element complex response z (length N)
    CMatrix element_channel(const CVector& z) const;
    CVector adjoint_element(const CMatrix& GH) const;

private:
    std::vector<CMatrix> basis_;    // per user, M x (N*L)
    std::vector<CMatrix> element_;  // per user, M x N
    int num_bs_ = 0, num_elements_ = 0, num_states_ = 0;
};

// Sum rate (nats) of the RZF-precoded channel at the relaxed state, and its
// gradient through softmax^2 -> channel -> RZF -> rate.
double relaxed_objective(const RelaxedChannelMap& map, const RMatrix& logits,
                         double transmit_power, double noise_dl, double regularizer,
                         RMatrix* grad_logits);

struct OptimizeOptions {
    int iterations = 500;
    double learning_rate = 0.1;
    int restarts = 3;
    double init_jitter = 0.01;
    int plateau_window = 50;
    double plateau_tol = 1e-5;
    double transmit_power = 1.0;
    double noise_dl = 1.0;
    double regularizer = 1e-3;  // varsigma; default 1e-3 * P_T
    std::uint64_t seed = 1;
};

struct OptimizeResult {
    RelaxedState best;
    double best_objective = 0.0;         // nats
    std::vector<double> trajectory;      // objective per iteration of the best restart
    int iterations_run = 0;
};

OptimizeResult optimize_relaxed(const RelaxedChannelMap& map, const OptimizeOptions& opts);

// argmax_l sbar_{n,l}; ties resolve to the lowest state index.
StateVector discretize(const RMatrix& sbar, int num_states);

enum class BaselineKind { Random, BestSounding, GroupOpt, PhasedArray };

struct BeamformContext {
    const RelaxedChannelMap* true_map = nullptr;  // perfect-CSI channel map
    const SoundingSet* sounding = nullptr;        // Best Sounding inputs
    int block = 0;
    double transmit_power = 1.0;
    double noise_dl = 1.0;
    double regularizer = 1e-3;
    double phased_gain = 0.59566;     // 3 dB below the pixel element's mean response
    double extra_ps_loss_db = 0.0;    // optional additional phase-shifter loss
    OptimizeOptions optimizer{};      // PhasedArray reuses the Adam machinery
    std::uint64_t seed = 1;
};

struct BaselineResult {
    StateVector state;           // empty for PhasedArray
    double sum_rate_nats = 0.0;  // realized on the context's true channels
    CVector phases;              // PhasedArray only
};

BaselineResult run_baseline(BaselineKind kind, const BeamformContext& ctx);

struct BruteForceResult {
    StateVector state;
    double sum_rate_nats = 0.0;
    long evaluated = 0;
};

// Exhaustive search over all L^N state vectors; refuses above the guard.
BruteForceResult brute_force(const RelaxedChannelMap& map, double transmit_power,
                             double noise_dl, double regularizer,
                             long max_candidates = 1000000);

}  // namespace pixris
