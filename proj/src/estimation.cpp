#include "pixris/estimation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <thread>

namespace pixris {

// ---------------------------------------------------------------------------
// AngleGrid

AngleGrid AngleGrid::make(double az_step_rad, double el_step_rad) {
    if (az_step_rad <= 0 || el_step_rad <= 0)
        throw std::invalid_argument("AngleGrid: steps must be positive");
    AngleGrid g;
    g.az_step = az_step_rad;
    g.el_step = el_step_rad;
    g.num_az = static_cast<int>(std::floor(2.0 * kPi / az_step_rad + 0.5));
    g.num_el = static_cast<int>(std::floor(kPi / el_step_rad + 0.5));
    if (g.num_az < 1 || g.num_el < 1) throw std::invalid_argument("AngleGrid: empty grid");
    return g;
}

AngleGrid AngleGrid::make_degrees(double az_deg, double el_deg) {
    return make(az_deg * kPi / 180.0, el_deg * kPi / 180.0);
}

AnglePair AngleGrid::at(int idx) const {
    int az_i = idx / num_el;
    int el_i = idx % num_el;
    double az = -kPi + az_i * (2.0 * kPi / num_az);
    double el = (el_i + 0.5) * (kPi / num_el);
    return AnglePair(az, el);
}

std::vector<int> AngleGrid::neighbors(int idx) const {
    int az_i = idx / num_el;
    int el_i = idx % num_el;
    std::vector<int> out;
    for (int da = -1; da <= 1; ++da)
        for (int de = -1; de <= 1; ++de) {
            if (da == 0 && de == 0) continue;
            int a = (az_i + da + num_az) % num_az;  // azimuth wraps
            int e = el_i + de;
            if (e < 0 || e >= num_el) continue;
            out.push_back(index_of(a, e));
        }
    return out;
}

int AngleGrid::snap(const AnglePair& phi) const {
    double az_span = 2.0 * kPi / num_az;
    int az_i = static_cast<int>(std::floor((phi.azimuth + kPi) / az_span + 0.5)) % num_az;
    int el_i = static_cast<int>(std::floor(phi.elevation / (kPi / num_el)));
    el_i = std::min(std::max(el_i, 0), num_el - 1);
    return index_of(az_i, el_i);
}

// ---------------------------------------------------------------------------
// fast response evaluation against a fixed angle on one side

namespace {

// One side of the pair fixed; evaluates nu(fixed, x; l) for all l. Uses the
// harmonic-product structure when the model exposes it, otherwise falls back
// to the generic per-state path.
class FixedSideEval {
public:
    FixedSideEval(const ResponseModel& model, const AnglePair& fixed, bool fixed_is_in)
        : model_(&model), fixed_(fixed), fixed_is_in_(fixed_is_in) {
        hp_ = dynamic_cast<const HarmonicProductModel*>(&model);
        if (hp_) {
            RVector f = legendre_kernel_vector(hp_->hp_degree(), fixed.azimuth, fixed.elevation);
            CVector fc = f.cast<Complex>();
            const int L = model.num_states();
            const auto C = f.size();
            u_.resize(L, C);
            for (int l = 1; l <= L; ++l) {
                if (fixed_is_in)
                    u_.row(l - 1) = fc.transpose() * hp_->hp_weights(l);
                else
                    u_.row(l - 1) = (hp_->hp_weights(l) * fc).transpose();
            }
        }
    }

    // all-states response against `other` whose kernel features are `feat`
    CVector eval(const AnglePair& other, const RVector& feat) const {
        if (hp_) return u_ * feat.cast<Complex>();
        return fixed_is_in_ ? model_->eval_all(fixed_, other) : model_->eval_all(other, fixed_);
    }

    bool wants_features() const { return hp_ != nullptr; }
    int feature_degree() const { return hp_ ? hp_->hp_degree() : 0; }

private:
    const ResponseModel* model_;
    AnglePair fixed_;
    bool fixed_is_in_;
    const HarmonicProductModel* hp_ = nullptr;
    CMatrix u_;  // L x C
};

struct GridCache {
    const AngleGrid* grid = nullptr;
    std::vector<CVector> steer;  // per grid point
    RMatrix feats;               // G x C, only for harmonic-product models
    int feat_degree = -1;

    void build(const AngleGrid& g, const ArrayGeometry& ris, int degree) {
        grid = &g;
        steer.resize(static_cast<std::size_t>(g.size()));
        for (int i = 0; i < g.size(); ++i)
            steer[static_cast<std::size_t>(i)] = steering_vector(ris, g.at(i));
        if (degree >= 0) {
            feat_degree = degree;
            feats.resize(g.size(), kernel_count(degree));
            for (int i = 0; i < g.size(); ++i) {
                AnglePair p = g.at(i);
                feats.row(i) = legendre_kernel_vector(degree, p.azimuth, p.elevation).transpose();
            }
        }
    }

    RVector feat(int idx) const {
        return feat_degree >= 0 ? RVector(feats.row(idx).transpose()) : RVector();
    }
};

// f_b over all plan configs for one (in, out) pair, given the element weights
// w_n = conj(alpha_in[n]) * alpha_out[n] and the per-state responses nu.
CVector quad_all_configs(const SoundingPlan& plan, const CVector& w, const CVector& nu) {
    const int B = plan.num_configs();
    CVector f(B);
    for (int b = 0; b < B; ++b) {
        const auto& s = plan.states[static_cast<std::size_t>(b)];
        Complex acc = 0.0;
        for (int n = 0; n < s.size(); ++n) acc += w[n] * nu[s[n] - 1];
        f[b] = acc;
    }
    return f;
}

// f tensors for explicit angle sets: per user, per config, (I+1) x (J_k+1)
struct FTensor {
    std::vector<std::vector<CMatrix>> f;  // [k][b]
};

FTensor build_ftensor(const ResponseModel& model, const ArrayGeometry& ris,
                      const SoundingPlan& plan, const std::vector<AnglePair>& angles_in,
                      const std::vector<std::vector<AnglePair>>& angles_out) {
    const int B = plan.num_configs();
    const int K = static_cast<int>(angles_out.size());
    const int nI = static_cast<int>(angles_in.size());
    std::vector<CVector> st_in(angles_in.size());
    for (std::size_t i = 0; i < angles_in.size(); ++i)
        st_in[i] = steering_vector(ris, angles_in[i]);

    FTensor t;
    t.f.resize(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
        const auto& outs = angles_out[static_cast<std::size_t>(k)];
        const int nJ = static_cast<int>(outs.size());
        t.f[static_cast<std::size_t>(k)].assign(static_cast<std::size_t>(B), CMatrix(nI, nJ));
        for (int j = 0; j < nJ; ++j) {
            CVector st_out = steering_vector(ris, outs[static_cast<std::size_t>(j)]);
            for (int i = 0; i < nI; ++i) {
                CVector w = st_in[static_cast<std::size_t>(i)].conjugate().cwiseProduct(st_out);
                CVector nu =
                    model.eval_all(angles_in[static_cast<std::size_t>(i)],
                                   outs[static_cast<std::size_t>(j)]);
                CVector fb = quad_all_configs(plan, w, nu);
                for (int b = 0; b < B; ++b)
                    t.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)](i, j) = fb[b];
            }
        }
    }
    return t;
}

// ridge-regularized LS with multiple right-hand sides; trace-scaled ridge
CMatrix ridge_solve(const CMatrix& A, const CMatrix& rhs, double ridge_scale,
                    EstimationStats* stats) {
    CMatrix normal = A.adjoint() * A;
    double tr = normal.trace().real();
    double ridge = ridge_scale * tr / double(A.cols());
    normal.diagonal().array() += std::max(ridge, 1e-300);
    Eigen::LDLT<CMatrix> ldlt(normal);
    if (ldlt.info() != Eigen::Success)
        throw std::runtime_error("estimation: LDLT failed on an LS system");
    if (stats) stats->ls_solves += 1;
    return ldlt.solve(A.adjoint() * rhs);
}

// Algorithm 1 core for one block, on prebuilt f tensors. warm_d, when given,
// replaces the step-1 LoS initialization (used by the greedy append loop so
// each refit starts at the previous optimum and the residual cannot rise).
BlockCoefficients alg1_fit(const std::vector<CMatrix>& Yt, const CMatrix& V, const FTensor& ft,
                           const EstimationOptions& opts, EstimationStats* stats,
                           const std::vector<CVector>* warm_d = nullptr) {
    const int B = static_cast<int>(Yt.size());
    const int M = static_cast<int>(Yt[0].rows());
    const int K = static_cast<int>(Yt[0].cols());
    const int nI = static_cast<int>(ft.f[0][0].rows());

    std::vector<CMatrix> Yv(static_cast<std::size_t>(B));
    for (int b = 0; b < B; ++b) Yv[static_cast<std::size_t>(b)] = V.adjoint() * Yt[static_cast<std::size_t>(b)];

    // Step 1: LoS response per user with a_{t,1,0} = 1
    BlockCoefficients out;
    out.d.resize(static_cast<std::size_t>(K));
    if (warm_d) {
        for (int k = 0; k < K; ++k) {
            const int nJ = static_cast<int>(ft.f[static_cast<std::size_t>(k)][0].cols());
            if ((*warm_d)[static_cast<std::size_t>(k)].size() != nJ)
                throw std::invalid_argument("alg1_fit: warm start has wrong d length");
            out.d[static_cast<std::size_t>(k)] = (*warm_d)[static_cast<std::size_t>(k)];
        }
    } else
    for (int k = 0; k < K; ++k) {
        Complex num = 0.0;
        double den = 0.0;
        for (int b = 0; b < B; ++b) {
            Complex f00 = ft.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)](0, 0);
            num += std::conj(f00) * Yv[static_cast<std::size_t>(b)](0, k);
            den += std::norm(f00);
        }
        if (den <= 0.0)
            throw std::runtime_error("estimate_instantaneous: step 1 has a zero LoS regressor");
        const int nJ = static_cast<int>(ft.f[static_cast<std::size_t>(k)][0].cols());
        out.d[static_cast<std::size_t>(k)] = CVector::Zero(nJ);
        out.d[static_cast<std::size_t>(k)][0] = num / den;
        if (stats) stats->ls_solves += 1;
    }

    auto residual = [&](const CMatrix& A) {
        double acc = 0.0;
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < K; ++k)
                acc += (Yt[static_cast<std::size_t>(b)].col(k) -
                        V * (A * (ft.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)] *
                                  out.d[static_cast<std::size_t>(k)])))
                           .squaredNorm();
        return acc;
    };

    double prev = std::numeric_limits<double>::infinity();
    for (int sweep = 0; sweep < std::max(1, opts.als_sweeps); ++sweep) {
        // Step 2: regressor X[(b,k), i] = sum_j d_k[j] f_k[b](i,j); the first
        // sweep carries only the step-1 LoS estimate, i.e. the literal pass
        CMatrix X(B * K, nI);
        CMatrix rhs(B * K, M);
        for (int b = 0; b < B; ++b)
            for (int k = 0; k < K; ++k) {
                const CMatrix& fkb =
                    ft.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
                CVector dk = out.d[static_cast<std::size_t>(k)];
                if (opts.literal_eq30 && sweep == 0) {
                    dk.setZero();
                    dk[0] = 1.0;
                }
                X.row(b * K + k) = (fkb * dk).transpose();
                rhs.row(b * K + k) = Yv[static_cast<std::size_t>(b)].col(k).transpose();
            }
        CMatrix At = ridge_solve(X, rhs, opts.ridge_scale, stats);  // nI x M
        CMatrix A = At.transpose();                                 // M x nI
        Complex a00 = A(0, 0);
        if (std::abs(a00) < 1e-14 * A.norm())
            throw std::runtime_error("estimate_instantaneous: step 2 produced a_{t,1,0} ~ 0; "
                                     "cannot renormalize");
        A /= a00;

        // Step 3: per user, stack b-blocks of V (A f_k[b](:,j)) and solve for d_k
        for (int k = 0; k < K; ++k) {
            const int nJ = static_cast<int>(ft.f[static_cast<std::size_t>(k)][0].cols());
            CMatrix G(B * M, nJ);
            CVector y(B * M);
            for (int b = 0; b < B; ++b) {
                const CMatrix& fkb =
                    ft.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
                G.middleRows(b * M, M) = V * (A * fkb);
                y.segment(b * M, M) = Yt[static_cast<std::size_t>(b)].col(k);
            }
            out.d[static_cast<std::size_t>(k)] = ridge_solve(G, y, opts.ridge_scale, stats);
        }

        out.a = A;
        double res = residual(A);
        out.residual = res;
        if (std::abs(prev - res) <= opts.als_tol * std::max(res, 1e-300)) break;
        prev = res;
    }
    return out;
}

}  // namespace

Complex basis_f(const ResponseModel& model, const ArrayGeometry& ris, const AnglePair& phi_in,
                const AnglePair& phi_out, const StateVector& s) {
    return ris_quadratic_form(model, ris, phi_in, phi_out, s);
}

BlockCoefficients estimate_instantaneous(const SoundingSet& sounding, int block,
                                         const std::vector<AnglePair>& angles_in,
                                         const std::vector<std::vector<AnglePair>>& angles_out,
                                         const ArrayGeometry& bs, const ArrayGeometry& ris,
                                         const ResponseModel& model, const AnglePair& phi_bs_los,
                                         const EstimationOptions& opts, EstimationStats* stats) {
    const int B = sounding.plan.num_configs();
    const int K = sounding.num_users;
    const int M = sounding.num_bs;
    if (static_cast<int>(angles_in.size()) > B * K)
        throw std::invalid_argument("estimate_instantaneous: |A_in| exceeds B_sound*K");
    for (const auto& ao : angles_out)
        if (static_cast<int>(ao.size()) > B * M)
            throw std::invalid_argument("estimate_instantaneous: |A_out,k| exceeds B_sound*M");
    CMatrix V = basis_matrix(bs, phi_bs_los);
    FTensor ft = build_ftensor(model, ris, sounding.plan, angles_in, angles_out);
    return alg1_fit(sounding.obs[static_cast<std::size_t>(block)], V, ft, opts, stats);
}

// ---------------------------------------------------------------------------
// Algorithm 2

namespace {

// run fn(g) for g in [0, G) split over workers; fn writes disjoint slots
template <typename Fn>
void parallel_over_grid(int G, int threads, Fn&& fn) {
    threads = std::max(1, threads);
    if (threads == 1) {
        for (int g = 0; g < G; ++g) fn(g);
        return;
    }
    std::vector<std::thread> pool;
    int chunk = (G + threads - 1) / threads;
    for (int w = 0; w < threads; ++w) {
        int lo = w * chunk, hi = std::min(G, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&fn, lo, hi]() {
            for (int g = lo; g < hi; ++g) fn(g);
        });
    }
    for (auto& th : pool) th.join();
}

struct GreedyState {
    std::vector<AnglePair> angles_in;
    std::vector<std::vector<AnglePair>> angles_out;
    std::vector<int> grid_in;                // -1 for off-grid entries (the known LoS)
    std::vector<std::vector<int>> grid_out;
    FTensor ft;                              // kept in sync with the angle sets
    std::vector<BlockCoefficients> blocks;   // per t
    std::vector<std::vector<CMatrix>> resid; // [t][b] M x K
    double total_residual = 0.0;             // sum over (t,b,k)
};

// incremental f-tensor maintenance: a single angle change touches one row
// (incident) or one column of one user (reflection)
void ftensor_fill_in_row(FTensor& ft, int row, const AnglePair& angle,
                         const std::vector<std::vector<AnglePair>>& angles_out,
                         const ResponseModel& model, const ArrayGeometry& ris,
                         const SoundingPlan& plan) {
    const int B = plan.num_configs();
    CVector st_in = steering_vector(ris, angle);
    for (std::size_t k = 0; k < angles_out.size(); ++k) {
        for (std::size_t j = 0; j < angles_out[k].size(); ++j) {
            CVector st_out = steering_vector(ris, angles_out[k][j]);
            CVector w = st_in.conjugate().cwiseProduct(st_out);
            CVector nu = model.eval_all(angle, angles_out[k][j]);
            CVector fb = quad_all_configs(plan, w, nu);
            for (int b = 0; b < B; ++b)
                ft.f[k][static_cast<std::size_t>(b)](row, static_cast<Eigen::Index>(j)) = fb[b];
        }
    }
}

void ftensor_fill_out_col(FTensor& ft, int user, int col, const AnglePair& angle,
                          const std::vector<AnglePair>& angles_in, const ResponseModel& model,
                          const ArrayGeometry& ris, const SoundingPlan& plan) {
    const int B = plan.num_configs();
    CVector st_out = steering_vector(ris, angle);
    for (std::size_t i = 0; i < angles_in.size(); ++i) {
        CVector st_in = steering_vector(ris, angles_in[i]);
        CVector w = st_in.conjugate().cwiseProduct(st_out);
        CVector nu = model.eval_all(angles_in[i], angle);
        CVector fb = quad_all_configs(plan, w, nu);
        for (int b = 0; b < B; ++b)
            ft.f[static_cast<std::size_t>(user)][static_cast<std::size_t>(b)](
                static_cast<Eigen::Index>(i), col) = fb[b];
    }
}

}  // namespace

AngleEstimationResult estimate_angles(const SoundingSet& sounding, const ArrayGeometry& bs,
                                      const ArrayGeometry& ris, const ResponseModel& model,
                                      const AngleGrid& grid, const AnglePair& phi_in_los,
                                      const AnglePair& phi_bs_los,
                                      const AngleEstimationOptions& opts) {
    if (grid.size() < 1) throw std::invalid_argument("estimate_angles: empty grid");
    const int G = grid.size();
    const int T = sounding.num_blocks;
    const int B = sounding.plan.num_configs();
    const int K = sounding.num_users;
    const int M = sounding.num_bs;
    const double sigma_u2 = sounding.noise_ul;

    EstimationStats stats;
    CMatrix V = basis_matrix(bs, phi_bs_los);

    const auto* hp = dynamic_cast<const HarmonicProductModel*>(&model);
    GridCache cache;
    cache.build(grid, ris, hp ? hp->hp_degree() : -1);

    double total_energy = 0.0;
    for (int t = 0; t < T; ++t)
        for (int b = 0; b < B; ++b) total_energy += sounding.at(t, b).squaredNorm();

    // ---- P(C-1): per-user LoS reflection angle ----
    CVector st_in_los = steering_vector(ris, phi_in_los);
    FixedSideEval in_los_eval(model, phi_in_los, /*fixed_is_in=*/true);
    std::vector<CMatrix> yv1(static_cast<std::size_t>(T));  // B x K of v_1^H y
    for (int t = 0; t < T; ++t) {
        CMatrix m(B, K);
        for (int b = 0; b < B; ++b) m.row(b) = (V.col(0).adjoint() * sounding.at(t, b));
        yv1[static_cast<std::size_t>(t)] = m;
    }

    std::vector<int> los_out(static_cast<std::size_t>(K), 0);
    {
        RMatrix scores = RMatrix::Zero(G, K);
        parallel_over_grid(G, opts.threads, [&](int g) {
            CVector nu = in_los_eval.eval(grid.at(g), cache.feat(g));
            CVector w =
                st_in_los.conjugate().cwiseProduct(cache.steer[static_cast<std::size_t>(g)]);
            CVector fb = quad_all_configs(sounding.plan, w, nu);
            double den = fb.squaredNorm();
            if (den < 1e-30) return;
            for (int k = 0; k < K; ++k) {
                double sc = 0.0;
                for (int t = 0; t < T; ++t)
                    sc += std::norm(fb.dot(yv1[static_cast<std::size_t>(t)].col(k)));
                scores(g, k) = sc / den;
            }
        });
        stats.candidate_evals += G;
        for (int k = 0; k < K; ++k) {
            int best = 0;
            for (int g = 1; g < G; ++g)
                if (scores(g, k) > scores(best, k)) best = g;  // ties keep the lowest index
            los_out[static_cast<std::size_t>(k)] = best;
        }
    }

    std::vector<double> residual_trace;
    GreedyState st;
    st.angles_in = {phi_in_los};
    st.grid_in = {grid.snap(phi_in_los)};
    for (int k = 0; k < K; ++k) {
        st.angles_out.push_back({grid.at(los_out[static_cast<std::size_t>(k)])});
        st.grid_out.push_back({los_out[static_cast<std::size_t>(k)]});
    }
    st.ft = build_ftensor(model, ris, sounding.plan, st.angles_in, st.angles_out);

    EstimationOptions greedy_fit;
    greedy_fit.als_sweeps = opts.greedy_als_sweeps;
    greedy_fit.als_tol = 1e-8;
    EstimationOptions trial_fit = greedy_fit;
    trial_fit.als_sweeps = std::max(3, opts.greedy_als_sweeps / 2);

    auto refit = [&](GreedyState& s, const EstimationOptions& fit_opts, bool warm) {
        std::vector<std::vector<CVector>> warm_d;
        if (warm && s.blocks.size() == static_cast<std::size_t>(T)) {
            warm_d.resize(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t)
                for (int k = 0; k < K; ++k) {
                    const int nJ =
                        static_cast<int>(s.angles_out[static_cast<std::size_t>(k)].size());
                    CVector d = CVector::Zero(nJ);
                    const CVector& old =
                        s.blocks[static_cast<std::size_t>(t)].d[static_cast<std::size_t>(k)];
                    d.head(std::min<Eigen::Index>(old.size(), nJ)) =
                        old.head(std::min<Eigen::Index>(old.size(), nJ));
                    warm_d[static_cast<std::size_t>(t)].push_back(std::move(d));
                }
        }
        s.blocks.resize(static_cast<std::size_t>(T));
        s.resid.assign(static_cast<std::size_t>(T),
                       std::vector<CMatrix>(static_cast<std::size_t>(B)));
        double acc = 0.0;
        for (int t = 0; t < T; ++t) {
            auto& bc = s.blocks[static_cast<std::size_t>(t)];
            bc = alg1_fit(sounding.obs[static_cast<std::size_t>(t)], V, s.ft, fit_opts, &stats,
                          warm_d.empty() ? nullptr : &warm_d[static_cast<std::size_t>(t)]);
            for (int b = 0; b < B; ++b) {
                CMatrix r(M, K);
                for (int k = 0; k < K; ++k)
                    r.col(k) = sounding.at(t, b).col(k) -
                               V * (bc.a *
                                    (s.ft.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)] *
                                     bc.d[static_cast<std::size_t>(k)]));
                acc += r.squaredNorm();
                s.resid[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)] = std::move(r);
            }
        }
        s.total_residual = acc;
        stats.refits += 1;
    };
    refit(st, greedy_fit, false);
    residual_trace.push_back(st.total_residual);

    const double stop_energy =
        std::max(double(M) * sigma_u2 * T * B * K, opts.energy_floor_rel * total_energy);
    // converge fully before trusting guard decisions in this band: limited
    // greedy sweeps leave ALS residue that masquerades as unexplained energy
    const double precision_trigger = std::max(2.0 * stop_energy, 1e-3 * total_energy);
    const int cap_in = std::min(opts.max_in, B * K);
    const int cap_out = std::min(opts.max_out, B * M);

    auto in_set_contains = [&](const GreedyState& s, int g) {
        return std::find(s.grid_in.begin(), s.grid_in.end(), g) != s.grid_in.end();
    };
    auto out_set_contains = [&](const GreedyState& s, int k, int g) {
        const auto& v = s.grid_out[static_cast<std::size_t>(k)];
        return std::find(v.begin(), v.end(), g) != v.end();
    };

    // swap one already-selected angle to a grid neighbor; keep on improvement
    auto try_swap = [&](int kind, int pos, int g) {
        if (kind < 0 ? in_set_contains(st, g) : out_set_contains(st, kind, g)) return false;
        GreedyState trial = st;
        if (kind < 0) {
            trial.grid_in[static_cast<std::size_t>(pos)] = g;
            trial.angles_in[static_cast<std::size_t>(pos)] = grid.at(g);
            ftensor_fill_in_row(trial.ft, pos, grid.at(g), trial.angles_out, model, ris,
                                sounding.plan);
        } else {
            trial.grid_out[static_cast<std::size_t>(kind)][static_cast<std::size_t>(pos)] = g;
            trial.angles_out[static_cast<std::size_t>(kind)][static_cast<std::size_t>(pos)] =
                grid.at(g);
            ftensor_fill_out_col(trial.ft, kind, pos, grid.at(g), trial.angles_in, model, ris,
                                 sounding.plan);
        }
        refit(trial, trial_fit, true);
        if (trial.total_residual < st.total_residual * (1.0 - 1e-9)) {
            st = std::move(trial);
            return true;
        }
        return false;
    };

    struct Slot {
        int kind;  // -1 = incident set, else user index
        int pos;
    };
    auto polish_slots = [&](const std::vector<Slot>& slots, int rounds) {
        for (int round = 0; round < rounds; ++round) {
            bool improved = false;
            for (const auto& slot : slots) {
                const auto& idx_vec = slot.kind < 0
                                          ? st.grid_in
                                          : st.grid_out[static_cast<std::size_t>(slot.kind)];
                if (slot.pos >= static_cast<int>(idx_vec.size())) continue;
                int cur = idx_vec[static_cast<std::size_t>(slot.pos)];
                if (cur < 0) continue;
                for (int nb : grid.neighbors(cur))
                    improved |= try_swap(slot.kind, slot.pos, nb);
            }
            if (!improved) break;
        }
    };
    auto all_slots = [&]() {
        std::vector<Slot> slots;
        for (int p = 1; p < static_cast<int>(st.grid_in.size()); ++p) slots.push_back({-1, p});
        for (int k = 0; k < K; ++k)
            for (int p = 0;
                 p < static_cast<int>(st.grid_out[static_cast<std::size_t>(k)].size()); ++p)
                slots.push_back({k, p});
        return slots;
    };

    // ---- merged greedy append loop ----
    bool precise = false;
    while (true) {
        if (!precise && st.total_residual < precision_trigger) {
            refit(st, opts.final_fit, true);
            if (!residual_trace.empty()) residual_trace.back() = st.total_residual;
            precise = true;
        }
        if (st.total_residual <= stop_energy) break;
        {
            int n_in = static_cast<int>(st.grid_in.size());
            bool in_full = n_in >= cap_in;
            bool out_full = true;
            for (const auto& v : st.grid_out)
                out_full &= static_cast<int>(v.size()) >= cap_out;
            if (in_full && out_full) break;
        }

        // C-2 scan: best new incident angle, paired with each user's LoS out
        double best_in_score = -1.0;
        int best_in_g = -1;
        if (static_cast<int>(st.grid_in.size()) < cap_in) {
            std::vector<CMatrix> rv(static_cast<std::size_t>(K), CMatrix(T * M, B));
            for (int t = 0; t < T; ++t)
                for (int b = 0; b < B; ++b) {
                    CMatrix x =
                        V.adjoint() *
                        st.resid[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)];
                    for (int k = 0; k < K; ++k)
                        rv[static_cast<std::size_t>(k)].block(t * M, b, M, 1) = x.col(k);
                }
            std::vector<CVector> st_out_los(static_cast<std::size_t>(K));
            std::vector<FixedSideEval> out_eval;
            out_eval.reserve(static_cast<std::size_t>(K));
            for (int k = 0; k < K; ++k) {
                st_out_los[static_cast<std::size_t>(k)] =
                    steering_vector(ris, st.angles_out[static_cast<std::size_t>(k)][0]);
                out_eval.emplace_back(model, st.angles_out[static_cast<std::size_t>(k)][0],
                                      /*fixed_is_in=*/false);
            }
            RVector scores = RVector::Constant(G, -1.0);
            parallel_over_grid(G, opts.threads, [&](int g) {
                if (in_set_contains(st, g)) return;
                CMatrix s_km(K, T * M);
                RVector qk_norm2(K);
                for (int k = 0; k < K; ++k) {
                    CVector nu =
                        out_eval[static_cast<std::size_t>(k)].eval(grid.at(g), cache.feat(g));
                    CVector w = cache.steer[static_cast<std::size_t>(g)].conjugate().cwiseProduct(
                        st_out_los[static_cast<std::size_t>(k)]);
                    CVector qb = quad_all_configs(sounding.plan, w, nu);
                    s_km.row(k) = (rv[static_cast<std::size_t>(k)] * qb.conjugate()).transpose();
                    qk_norm2[k] = qb.squaredNorm();
                }
                double sc = 0.0;
                for (int t = 0; t < T; ++t) {
                    double den = 0.0;
                    for (int k = 0; k < K; ++k)
                        den += std::norm(st.blocks[static_cast<std::size_t>(t)]
                                             .d[static_cast<std::size_t>(k)][0]) *
                               qk_norm2[k];
                    if (den < 1e-30) continue;
                    for (int m = 0; m < M; ++m) {
                        Complex acc = 0.0;
                        for (int k = 0; k < K; ++k)
                            acc += std::conj(st.blocks[static_cast<std::size_t>(t)]
                                                 .d[static_cast<std::size_t>(k)][0]) *
                                   s_km(k, t * M + m);
                        sc += std::norm(acc) / den;
                    }
                }
                scores[g] = sc;
            });
            stats.candidate_evals += G;
            for (int g = 0; g < G; ++g)
                if (scores[g] > best_in_score) {
                    best_in_score = scores[g];
                    best_in_g = g;
                }
        }

        // C-3 scans: best new reflection angle per user
        std::vector<double> best_out_score(static_cast<std::size_t>(K), -1.0);
        std::vector<int> best_out_g(static_cast<std::size_t>(K), -1);
        {
            const int nI = static_cast<int>(st.angles_in.size());
            std::vector<CVector> st_in(st.angles_in.size());
            std::vector<FixedSideEval> in_eval;
            in_eval.reserve(st.angles_in.size());
            for (std::size_t i = 0; i < st.angles_in.size(); ++i) {
                st_in[i] = steering_vector(ris, st.angles_in[i]);
                in_eval.emplace_back(model, st.angles_in[i], /*fixed_is_in=*/true);
            }
            std::vector<CMatrix> U(static_cast<std::size_t>(T)), W(static_cast<std::size_t>(T));
            for (int t = 0; t < T; ++t) {
                U[static_cast<std::size_t>(t)] = V * st.blocks[static_cast<std::size_t>(t)].a;
                W[static_cast<std::size_t>(t)] =
                    U[static_cast<std::size_t>(t)].adjoint() * U[static_cast<std::size_t>(t)];
            }
            for (int k = 0; k < K; ++k) {
                if (static_cast<int>(st.grid_out[static_cast<std::size_t>(k)].size()) >= cap_out)
                    continue;
                CMatrix p(T * nI, B);  // p[(t,i), b] = U_t(:,i)^H r_{t,b,k}
                for (int t = 0; t < T; ++t)
                    for (int b = 0; b < B; ++b)
                        p.block(t * nI, b, nI, 1) =
                            U[static_cast<std::size_t>(t)].adjoint() *
                            st.resid[static_cast<std::size_t>(t)][static_cast<std::size_t>(b)]
                                .col(k);
                RVector scores = RVector::Constant(G, -1.0);
                parallel_over_grid(G, opts.threads, [&](int g) {
                    if (out_set_contains(st, k, g)) return;
                    CMatrix q(nI, B);
                    for (int i = 0; i < nI; ++i) {
                        CVector nu = in_eval[static_cast<std::size_t>(i)].eval(grid.at(g),
                                                                               cache.feat(g));
                        CVector w = st_in[static_cast<std::size_t>(i)].conjugate().cwiseProduct(
                            cache.steer[static_cast<std::size_t>(g)]);
                        q.row(i) = quad_all_configs(sounding.plan, w, nu).transpose();
                    }
                    double sc = 0.0;
                    for (int t = 0; t < T; ++t) {
                        Complex num = 0.0;
                        double den = 0.0;
                        for (int b = 0; b < B; ++b) {
                            Complex nb = 0.0;
                            for (int i = 0; i < nI; ++i)
                                nb += std::conj(q(i, b)) * p(t * nI + i, b);
                            num += nb;
                            den += (q.col(b).adjoint() * W[static_cast<std::size_t>(t)] *
                                    q.col(b))(0, 0)
                                       .real();
                        }
                        if (den > 1e-30) sc += std::norm(num) / den;
                    }
                    scores[g] = sc;
                });
                stats.candidate_evals += G;
                for (int g = 0; g < G; ++g)
                    if (scores[g] > best_out_score[static_cast<std::size_t>(k)]) {
                        best_out_score[static_cast<std::size_t>(k)] = scores[g];
                        best_out_g[static_cast<std::size_t>(k)] = g;
                    }
            }
        }

        // pick the single best candidate
        double best = best_in_score;
        int kind = -1;
        int pick = best_in_g;
        for (int k = 0; k < K; ++k)
            if (best_out_score[static_cast<std::size_t>(k)] > best) {
                best = best_out_score[static_cast<std::size_t>(k)];
                kind = k;
                pick = best_out_g[static_cast<std::size_t>(k)];
            }
        if (pick < 0) break;
        if (best < opts.improve_frac * st.total_residual) break;

        int appended_pos;
        if (kind < 0) {
            appended_pos = static_cast<int>(st.grid_in.size());
            st.angles_in.push_back(grid.at(pick));
            st.grid_in.push_back(pick);
            const int nI = appended_pos + 1;
            for (int k = 0; k < K; ++k)
                for (int b = 0; b < B; ++b) {
                    auto& f =
                        st.ft.f[static_cast<std::size_t>(k)][static_cast<std::size_t>(b)];
                    f.conservativeResize(nI, Eigen::NoChange);
                }
            ftensor_fill_in_row(st.ft, appended_pos, grid.at(pick), st.angles_out, model, ris,
                                sounding.plan);
        } else {
            appended_pos =
                static_cast<int>(st.grid_out[static_cast<std::size_t>(kind)].size());
            st.angles_out[static_cast<std::size_t>(kind)].push_back(grid.at(pick));
            st.grid_out[static_cast<std::size_t>(kind)].push_back(pick);
            for (int b = 0; b < B; ++b) {
                auto& f = st.ft.f[static_cast<std::size_t>(kind)][static_cast<std::size_t>(b)];
                f.conservativeResize(Eigen::NoChange, appended_pos + 1);
            }
            ftensor_fill_out_col(st.ft, kind, appended_pos, grid.at(pick), st.angles_in, model,
                                 ris, sounding.plan);
        }
        refit(st, greedy_fit, true);
        precise = false;

        if (opts.polish) polish_slots(all_slots(), 1);
        residual_trace.push_back(st.total_residual);
    }

    // full polish pass over every selected angle, then the final fit
    if (opts.polish) {
        polish_slots(all_slots(), opts.polish_rounds);
        if (!residual_trace.empty()) residual_trace.back() = st.total_residual;
    }
    refit(st, opts.final_fit, true);

    AngleEstimationResult result;
    result.angles_in = st.angles_in;
    result.angles_out = st.angles_out;
    result.grid_in = st.grid_in;
    result.grid_out = st.grid_out;
    result.residual_energy = st.total_residual / (double(T) * B * K);
    result.knowledge.bs = bs;
    result.knowledge.ris = ris;
    result.knowledge.phi_bs_los = phi_bs_los;
    result.knowledge.angles_in = st.angles_in;
    result.knowledge.angles_out = st.angles_out;
    result.knowledge.blocks = std::move(st.blocks);
    result.residual_trace = std::move(residual_trace);
    result.stats = stats;
    return result;
}

// ---------------------------------------------------------------------------
// prediction and NMSE

CVector predict_user(const EstimatedKnowledge& knowledge, const ResponseModel& model,
                     const StateVector& s, int user, int block) {
    if (block < 0 || block >= knowledge.num_blocks())
        throw std::invalid_argument("predict: no coefficients for block " + std::to_string(block));
    const auto& bc = knowledge.blocks[static_cast<std::size_t>(block)];
    const auto& outs = knowledge.angles_out[static_cast<std::size_t>(user)];
    const int nI = static_cast<int>(knowledge.angles_in.size());
    const int nJ = static_cast<int>(outs.size());
    CMatrix F(nI, nJ);
    for (int i = 0; i < nI; ++i)
        for (int j = 0; j < nJ; ++j)
            F(i, j) = ris_quadratic_form(model, knowledge.ris, knowledge.angles_in[static_cast<std::size_t>(i)],
                                         outs[static_cast<std::size_t>(j)], s);
    CMatrix V = basis_matrix(knowledge.bs, knowledge.phi_bs_los);
    return approx_model_channel(V, bc.a, F, bc.d[static_cast<std::size_t>(user)]);
}

CMatrix predict(const EstimatedKnowledge& knowledge, const ResponseModel& model,
                const StateVector& s, int block) {
    const int K = knowledge.num_users();
    CMatrix H(knowledge.bs.size(), K);
    for (int k = 0; k < K; ++k) H.col(k) = predict_user(knowledge, model, s, k, block);
    return H;
}

double nmse(const CMatrix& predicted, const CMatrix& truth) {
    if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
        throw std::invalid_argument("nmse: shape mismatch");
    double den = truth.squaredNorm();
    if (den == 0.0) return predicted.squaredNorm() == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return (predicted - truth).squaredNorm() / den;
}

void NmseAccumulator::add(const CMatrix& predicted, const CMatrix& truth) {
    num += (predicted - truth).squaredNorm();
    den += truth.squaredNorm();
}

// ---------------------------------------------------------------------------
// EstimatedKnowledge serialization

namespace {

nlohmann::json angle_to_json(const AnglePair& a) {
    return {{"azimuth_deg", a.azimuth * 180.0 / kPi}, {"elevation_deg", a.elevation * 180.0 / kPi}};
}

AnglePair angle_from_json(const nlohmann::json& j) {
    return AnglePair::from_degrees(j.at("azimuth_deg").get<double>(),
                                   j.at("elevation_deg").get<double>());
}

nlohmann::json cplx_matrix_json(const CMatrix& m) {
    nlohmann::json out = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row.push_back({m(r, c).real(), m(r, c).imag()});
        out.push_back(std::move(row));
    }
    return out;
}

CMatrix cplx_matrix_from(const nlohmann::json& j) {
    auto rows = static_cast<Eigen::Index>(j.size());
    auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    CMatrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = Complex(j[r][c][0].get<double>(), j[r][c][1].get<double>());
    return m;
}

}  // namespace

nlohmann::json EstimatedKnowledge::to_json() const {
    nlohmann::json j;
    j["version"] = 1;
    j["bs"] = {{"rows", bs.rows}, {"cols", bs.cols}, {"spacing", bs.spacing}};
    j["ris"] = {{"rows", ris.rows}, {"cols", ris.cols}, {"spacing", ris.spacing}};
    j["phi_bs_los"] = angle_to_json(phi_bs_los);
    nlohmann::json ain = nlohmann::json::array();
    for (const auto& a : angles_in) ain.push_back(angle_to_json(a));
    j["angles_in"] = std::move(ain);
    nlohmann::json aout = nlohmann::json::array();
    for (const auto& user : angles_out) {
        nlohmann::json ua = nlohmann::json::array();
        for (const auto& a : user) ua.push_back(angle_to_json(a));
        aout.push_back(std::move(ua));
    }
    j["angles_out"] = std::move(aout);
    nlohmann::json jb = nlohmann::json::array();
    for (const auto& b : blocks) {
        nlohmann::json one;
        one["a"] = cplx_matrix_json(b.a);
        nlohmann::json d = nlohmann::json::array();
        for (const auto& dk : b.d) d.push_back(cplx_matrix_json(dk));
        one["d"] = std::move(d);
        one["residual"] = b.residual;
        jb.push_back(std::move(one));
    }
    j["blocks"] = std::move(jb);
    return j;
}

EstimatedKnowledge EstimatedKnowledge::from_json(const nlohmann::json& j) {
    EstimatedKnowledge k;
    k.bs = {j.at("bs").at("rows").get<int>(), j.at("bs").at("cols").get<int>(),
            j.at("bs").at("spacing").get<double>()};
    k.ris = {j.at("ris").at("rows").get<int>(), j.at("ris").at("cols").get<int>(),
             j.at("ris").at("spacing").get<double>()};
    k.phi_bs_los = angle_from_json(j.at("phi_bs_los"));
    for (const auto& a : j.at("angles_in")) k.angles_in.push_back(angle_from_json(a));
    for (const auto& user : j.at("angles_out")) {
        std::vector<AnglePair> ua;
        for (const auto& a : user) ua.push_back(angle_from_json(a));
        k.angles_out.push_back(std::move(ua));
    }
    for (const auto& jb : j.at("blocks")) {
        BlockCoefficients bc;
        bc.a = cplx_matrix_from(jb.at("a"));
        for (const auto& dk : jb.at("d")) bc.d.push_back(CVector(cplx_matrix_from(dk).col(0)));
        bc.residual = jb.at("residual").get<double>();
        k.blocks.push_back(std::move(bc));
    }
    return k;
}

void EstimatedKnowledge::save(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f << to_json().dump();
    if (!f) throw std::runtime_error("write failed: " + path);
}

EstimatedKnowledge EstimatedKnowledge::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    nlohmann::json j;
    f >> j;
    return from_json(j);
}

}  // namespace pixris
