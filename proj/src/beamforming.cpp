#include "pixris/beamforming.hpp"

#include <cmath>
#include <stdexcept>

namespace pixris {

RMatrix softmax_squared(const RMatrix& logits) {
    RMatrix sbar(logits.rows(), logits.cols());
    for (Eigen::Index n = 0; n < logits.cols(); ++n) {
        RVector col = logits.col(n);
        double mx = col.maxCoeff();
        RVector e = (col.array() - mx).exp();
        RVector sm = e / e.sum();
        sbar.col(n) = sm.array().square();
    }
    return sbar;
}

RMatrix RelaxedState::selection() const { return softmax_squared(logits); }

PrecoderMatrix rzf(const CMatrix& H, double varsigma, double transmit_power) {
    if (!H.allFinite()) throw std::invalid_argument("rzf: channel has non-finite entries");
    if (varsigma < 0.0) throw std::invalid_argument("rzf: varsigma must be >= 0");
    const auto K = H.cols();
    CMatrix A = H.transpose() * H.conjugate();
    A.diagonal().array() += varsigma;
    Eigen::FullPivLU<CMatrix> lu(A);
    if (!lu.isInvertible())
        throw std::runtime_error("rzf: H^T H* is singular; use varsigma > 0");
    CMatrix B = H.conjugate() * lu.inverse();
    double rho = B.squaredNorm();
    if (rho <= 0.0) throw std::runtime_error("rzf: zero-norm precoder");
    PrecoderMatrix out;
    out.regularizer = varsigma;
    out.power_scale = double(K) * transmit_power / rho;
    out.w = std::sqrt(out.power_scale) * B;
    return out;
}

RVector per_user_rates(const CMatrix& H, const CMatrix& W, double noise_dl, bool bits) {
    if (H.rows() != W.rows() || H.cols() != W.cols())
        throw std::invalid_argument("sum_rate: shape mismatch");
    const auto K = H.cols();
    CMatrix T = H.transpose() * W;  // T(k,i) = h_k^T w_i
    RVector rates(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        double sig = std::norm(T(k, k));
        double inter = noise_dl;
        for (Eigen::Index i = 0; i < K; ++i)
            if (i != k) inter += std::norm(T(k, i));
        rates[k] = std::log(1.0 + sig / inter);
        if (bits) rates[k] /= std::log(2.0);
    }
    return rates;
}

double sum_rate(const CMatrix& H, const CMatrix& W, double noise_dl, bool bits) {
    return per_user_rates(H, W, noise_dl, bits).sum();
}

Complex relaxed_response(const ResponseModel& model, const AnglePair& in, const AnglePair& out,
                         const RVector& sbar_column) {
    if (sbar_column.size() != model.num_states())
        throw std::invalid_argument("relaxed_response: weight length != L");
    CVector nu = model.eval_all(in, out);
    Complex acc = 0.0;
    for (Eigen::Index l = 0; l < sbar_column.size(); ++l) acc += sbar_column[l] * nu[l];
    return acc;
}

// ---------------------------------------------------------------------------
// RelaxedChannelMap

namespace {

// accumulate one (BS-side ray, UE-side ray) pair into the basis tensors:
// u is the M-dim BS-side vector already scaled by the pair coefficient,
// w_n = conj(alpha_in[n]) alpha_out[n], nu has the L per-state responses.
void add_pair(CMatrix& basis, CMatrix& element, const CVector& u, const CVector& w,
              const CVector& nu) {
    const auto N = w.size();
    const auto L = nu.size();
    for (Eigen::Index n = 0; n < N; ++n) {
        for (Eigen::Index l = 0; l < L; ++l) basis.col(n * L + l) += (w[n] * nu[l]) * u;
        element.col(n) += w[n] * u;
    }
}

}  // namespace

RelaxedChannelMap RelaxedChannelMap::from_realization(const ChannelRealization& real,
                                                      const ArrayGeometry& bs,
                                                      const ArrayGeometry& ris,
                                                      const ResponseModel& model) {
    RelaxedChannelMap map;
    map.num_bs_ = bs.size();
    map.num_elements_ = ris.size();
    map.num_states_ = model.num_states();
    const int M = map.num_bs_, N = map.num_elements_, L = map.num_states_;
    const int K = real.num_users();

    struct SideRay {
        Complex coef;
        AnglePair bs_angle;   // BS rays only
        AnglePair ris_angle;
    };
    std::vector<SideRay> bs_rays;
    bs_rays.push_back({Complex(1.0, 0.0), real.phi_bs_los, real.phi_in_los});
    for (std::size_t i = 0; i < real.bs_clusters.size(); ++i) {
        const auto& cl = real.bs_clusters[i];
        for (std::size_t d = 0; d < cl.bs_angles.size(); ++d)
            bs_rays.push_back(
                {std::polar(cl.gain, real.eps_bs[i][d]), cl.bs_angles[d], cl.in_angles[d]});
    }

    map.basis_.assign(static_cast<std::size_t>(K), CMatrix::Zero(M, N * L));
    map.element_.assign(static_cast<std::size_t>(K), CMatrix::Zero(M, N));

    std::vector<CVector> bs_steer, in_steer;
    for (const auto& r : bs_rays) {
        bs_steer.push_back(steering_vector(bs, r.bs_angle));
        in_steer.push_back(steering_vector(ris, r.ris_angle));
    }

    for (int k = 0; k < K; ++k) {
        const auto& u = real.users[static_cast<std::size_t>(k)];
        std::vector<SideRay> ue_rays;
        ue_rays.push_back({Complex(u.los_gain, 0.0), AnglePair{}, u.phi_out_los});
        for (std::size_t j = 0; j < u.clusters.size(); ++j) {
            const auto& cl = u.clusters[j];
            for (std::size_t d = 0; d < cl.out_angles.size(); ++d)
                ue_rays.push_back({std::polar(cl.gain, real.eps_ue[static_cast<std::size_t>(k)][j][d]),
                                   AnglePair{}, cl.out_angles[d]});
        }
        for (std::size_t br = 0; br < bs_rays.size(); ++br) {
            for (const auto& ur : ue_rays) {
                CVector out_steer = steering_vector(ris, ur.ris_angle);
                CVector w = in_steer[br].conjugate().cwiseProduct(out_steer);
                CVector nu = model.eval_all(bs_rays[br].ris_angle, ur.ris_angle);
                CVector u_vec = (bs_rays[br].coef * ur.coef) * bs_steer[br];
                add_pair(map.basis_[static_cast<std::size_t>(k)],
                         map.element_[static_cast<std::size_t>(k)], u_vec, w, nu);
            }
        }
    }
    return map;
}

RelaxedChannelMap RelaxedChannelMap::from_knowledge(const EstimatedKnowledge& knowledge,
                                                    const ResponseModel& model, int block) {
    if (block < 0 || block >= knowledge.num_blocks())
        throw std::invalid_argument("RelaxedChannelMap: no coefficients for block");
    RelaxedChannelMap map;
    map.num_bs_ = knowledge.bs.size();
    map.num_elements_ = knowledge.ris.size();
    map.num_states_ = model.num_states();
    const int M = map.num_bs_, N = map.num_elements_, L = map.num_states_;
    const int K = knowledge.num_users();
    const auto& bc = knowledge.blocks[static_cast<std::size_t>(block)];

    CMatrix V = basis_matrix(knowledge.bs, knowledge.phi_bs_los);
    CMatrix U = V * bc.a;  // M x |A_in|; column i multiplies the i-th incident set entry

    map.basis_.assign(static_cast<std::size_t>(K), CMatrix::Zero(M, N * L));
    map.element_.assign(static_cast<std::size_t>(K), CMatrix::Zero(M, N));

    std::vector<CVector> in_steer;
    for (const auto& a : knowledge.angles_in) in_steer.push_back(steering_vector(knowledge.ris, a));

    for (int k = 0; k < K; ++k) {
        const auto& outs = knowledge.angles_out[static_cast<std::size_t>(k)];
        for (std::size_t j = 0; j < outs.size(); ++j) {
            CVector out_steer = steering_vector(knowledge.ris, outs[j]);
            for (std::size_t i = 0; i < knowledge.angles_in.size(); ++i) {
                CVector w = in_steer[i].conjugate().cwiseProduct(out_steer);
                CVector nu = model.eval_all(knowledge.angles_in[i], outs[j]);
                CVector u_vec =
                    bc.d[static_cast<std::size_t>(k)][static_cast<Eigen::Index>(j)] *
                    U.col(static_cast<Eigen::Index>(i));
                add_pair(map.basis_[static_cast<std::size_t>(k)],
                         map.element_[static_cast<std::size_t>(k)], u_vec, w, nu);
            }
        }
    }
    return map;
}

CMatrix RelaxedChannelMap::channel(const RMatrix& sbar) const {
    if (sbar.rows() != num_states_ || sbar.cols() != num_elements_)
        throw std::invalid_argument("RelaxedChannelMap::channel: sbar must be L x N");
    CVector svec(num_elements_ * num_states_);
    for (int n = 0; n < num_elements_; ++n)
        for (int l = 0; l < num_states_; ++l) svec[n * num_states_ + l] = sbar(l, n);
    CMatrix H(num_bs_, num_users());
    for (int k = 0; k < num_users(); ++k) H.col(k) = basis_[static_cast<std::size_t>(k)] * svec;
    return H;
}

CMatrix RelaxedChannelMap::channel(const StateVector& s) const {
    if (s.size() != num_elements_)
        throw std::invalid_argument("RelaxedChannelMap::channel: state length != N");
    CMatrix H = CMatrix::Zero(num_bs_, num_users());
    for (int k = 0; k < num_users(); ++k)
        for (int n = 0; n < num_elements_; ++n)
            H.col(k) += basis_[static_cast<std::size_t>(k)].col(n * num_states_ + (s[static_cast<std::size_t>(n)] - 1));
    return H;
}

RMatrix RelaxedChannelMap::adjoint_sbar(const CMatrix& GH) const {
    CVector g = CVector::Zero(num_elements_ * num_states_);
    for (int k = 0; k < num_users(); ++k)
        g += basis_[static_cast<std::size_t>(k)].adjoint() * GH.col(k);
    RMatrix out(num_states_, num_elements_);
    for (int n = 0; n < num_elements_; ++n)
        for (int l = 0; l < num_states_; ++l) out(l, n) = g[n * num_states_ + l].real();
    return out;
}

CMatrix RelaxedChannelMap::element_channel(const CVector& z) const {
    CMatrix H(num_bs_, num_users());
    for (int k = 0; k < num_users(); ++k) H.col(k) = element_[static_cast<std::size_t>(k)] * z;
    return H;
}

CVector RelaxedChannelMap::adjoint_element(const CMatrix& GH) const {
    CVector g = CVector::Zero(num_elements_);
    for (int k = 0; k < num_users(); ++k)
        g += element_[static_cast<std::size_t>(k)].adjoint() * GH.col(k);
    return g;
}

// ---------------------------------------------------------------------------
// objective and gradient

namespace {

// rate (nats) and, when GH != nullptr, the channel cotangent: for the real
// objective f, df = Re tr(GH^H dH).
double rate_and_grad_h(const CMatrix& H, double transmit_power, double noise_dl,
                       double varsigma, CMatrix* GH) {
    const auto K = H.cols();
    CMatrix A = H.transpose() * H.conjugate();
    A.diagonal().array() += varsigma;
    CMatrix P = A.inverse();
    CMatrix B = H.conjugate() * P;
    double rho = B.squaredNorm();
    double gam = double(K) * transmit_power / rho;
    double sqg = std::sqrt(gam);
    CMatrix W = sqg * B;
    CMatrix T = H.transpose() * W;

    double rate = 0.0;
    std::vector<double> sig(static_cast<std::size_t>(K)), inter(static_cast<std::size_t>(K));
    for (Eigen::Index k = 0; k < K; ++k) {
        sig[static_cast<std::size_t>(k)] = std::norm(T(k, k));
        double d = noise_dl;
        for (Eigen::Index i = 0; i < K; ++i)
            if (i != k) d += std::norm(T(k, i));
        inter[static_cast<std::size_t>(k)] = d;
        rate += std::log(1.0 + sig[static_cast<std::size_t>(k)] / d);
    }
    if (!GH) return rate;

    CMatrix GT = CMatrix::Zero(K, K);
    for (Eigen::Index k = 0; k < K; ++k) {
        double Pk = sig[static_cast<std::size_t>(k)], Dk = inter[static_cast<std::size_t>(k)];
        double dP = 1.0 / (Dk + Pk);
        double dD = 1.0 / (Dk + Pk) - 1.0 / Dk;
        GT(k, k) += 2.0 * T(k, k) * dP;
        for (Eigen::Index i = 0; i < K; ++i)
            if (i != k) GT(k, i) += 2.0 * T(k, i) * dD;
    }
    // T = H^T W
    CMatrix G = W.conjugate() * GT.transpose();
    CMatrix GW = H.conjugate() * GT;
    // W = sqrt(gam) B with gam = K P_T / ||B||_F^2
    CMatrix GB = sqg * GW;
    double dgam = (GW.conjugate().cwiseProduct(B)).sum().real() / (2.0 * sqg);
    double drho = -dgam * gam / rho;
    GB += 2.0 * drho * B;
    // B = H* P
    G += GB.conjugate() * P.transpose();
    CMatrix GP = H.transpose() * GB;
    CMatrix GA = -(P.adjoint() * GP * P.adjoint());
    // A = H^T H* + varsigma I
    G += H * (GA.transpose() + GA.conjugate());
    *GH = std::move(G);
    return rate;
}

RMatrix softmax_squared_backward(const RMatrix& logits, const RMatrix& gsbar) {
    RMatrix out(logits.rows(), logits.cols());
    for (Eigen::Index n = 0; n < logits.cols(); ++n) {
        RVector col = logits.col(n);
        double mx = col.maxCoeff();
        RVector e = (col.array() - mx).exp();
        RVector sm = e / e.sum();
        RVector gsig = 2.0 * sm.cwiseProduct(gsbar.col(n));
        double dot = gsig.dot(sm);
        out.col(n) = sm.array() * (gsig.array() - dot);
    }
    return out;
}

}  // namespace

double relaxed_objective(const RelaxedChannelMap& map, const RMatrix& logits,
                         double transmit_power, double noise_dl, double regularizer,
                         RMatrix* grad_logits) {
    RMatrix sbar = softmax_squared(logits);
    CMatrix H = map.channel(sbar);
    if (!grad_logits) return rate_and_grad_h(H, transmit_power, noise_dl, regularizer, nullptr);
    CMatrix GH;
    double rate = rate_and_grad_h(H, transmit_power, noise_dl, regularizer, &GH);
    RMatrix gsbar = map.adjoint_sbar(GH);
    *grad_logits = softmax_squared_backward(logits, gsbar);
    return rate;
}

OptimizeResult optimize_relaxed(const RelaxedChannelMap& map, const OptimizeOptions& opts) {
    const int L = map.num_states(), N = map.num_elements();
    OptimizeResult result;
    result.best_objective = -std::numeric_limits<double>::infinity();

    for (int restart = 0; restart < opts.restarts; ++restart) {
        RngStream rng(opts.seed, 0xBF00 + static_cast<std::uint64_t>(restart));
        RMatrix logits(L, N);
        for (int n = 0; n < N; ++n)
            for (int l = 0; l < L; ++l) logits(l, n) = opts.init_jitter * rng.normal();

        RVector params = Eigen::Map<RVector>(logits.data(), logits.size());
        AdamState adam = AdamState::create(params.size(), opts.learning_rate);

        double run_best = -std::numeric_limits<double>::infinity();
        RMatrix run_best_logits = logits;
        std::vector<double> traj;
        int since_improve = 0;
        for (int it = 0; it < opts.iterations; ++it) {
            RMatrix cur = Eigen::Map<RMatrix>(params.data(), L, N);
            RMatrix grad;
            double rate = relaxed_objective(map, cur, opts.transmit_power, opts.noise_dl,
                                            opts.regularizer, &grad);
            if (!std::isfinite(rate))
                throw std::runtime_error("optimize_relaxed: non-finite objective at iteration " +
                                         std::to_string(it));
            traj.push_back(rate);
            if (rate > run_best + opts.plateau_tol * std::max(std::abs(run_best), 1e-12)) {
                since_improve = 0;
            } else {
                ++since_improve;
            }
            if (rate > run_best) {
                run_best = rate;
                run_best_logits = cur;
            }
            if (since_improve >= opts.plateau_window) break;
            RVector g = Eigen::Map<RVector>(grad.data(), grad.size());
            params = adam_step(params, RVector(-g), adam);  // ascent
        }
        if (run_best > result.best_objective) {
            result.best_objective = run_best;
            result.best.logits = run_best_logits;
            result.trajectory = std::move(traj);
            result.iterations_run = static_cast<int>(result.trajectory.size());
        }
    }
    return result;
}

StateVector discretize(const RMatrix& sbar, int num_states) {
    if (sbar.rows() != num_states)
        throw std::invalid_argument("discretize: sbar rows != L");
    std::vector<int> s(static_cast<std::size_t>(sbar.cols()));
    for (Eigen::Index n = 0; n < sbar.cols(); ++n) {
        int best = 0;
        for (int l = 1; l < num_states; ++l)
            if (sbar(l, n) > sbar(best, n)) best = l;  // strict: ties keep lowest
        s[static_cast<std::size_t>(n)] = best + 1;
    }
    return StateVector(std::move(s), num_states);
}

// ---------------------------------------------------------------------------
// baselines and brute force

namespace {

double realized_rate(const RelaxedChannelMap& map, const StateVector& s, double pt, double nz,
                     double reg) {
    CMatrix H = map.channel(s);
    return sum_rate(H, rzf(H, reg, pt).w, nz);
}

}  // namespace

BaselineResult run_baseline(BaselineKind kind, const BeamformContext& ctx) {
    if (!ctx.true_map) throw std::invalid_argument("run_baseline: context needs true_map");
    const auto& map = *ctx.true_map;
    const int N = map.num_elements(), L = map.num_states();
    BaselineResult out;
    switch (kind) {
        case BaselineKind::Random: {
            RngStream rng(ctx.seed, 0xBA5E01);
            std::vector<int> s(static_cast<std::size_t>(N));
            for (auto& e : s) e = rng.uniform_int(1, L);
            out.state = StateVector(std::move(s), L);
            out.sum_rate_nats =
                realized_rate(map, out.state, ctx.transmit_power, ctx.noise_dl, ctx.regularizer);
            return out;
        }
        case BaselineKind::BestSounding: {
            if (!ctx.sounding)
                throw std::invalid_argument("run_baseline: BestSounding needs sounding data");
            const auto& plan = ctx.sounding->plan;
            int best = 0;
            double best_rate = -std::numeric_limits<double>::infinity();
            for (int b = 0; b < plan.num_configs(); ++b) {
                // rate as seen at sounding time: the despread observation is the
                // channel estimate for configuration b
                const CMatrix& Hb = ctx.sounding->at(ctx.block, b);
                double r = sum_rate(Hb, rzf(Hb, ctx.regularizer, ctx.transmit_power).w,
                                    ctx.noise_dl);
                if (r > best_rate) {
                    best_rate = r;
                    best = b;
                }
            }
            out.state = plan.states[static_cast<std::size_t>(best)];
            out.sum_rate_nats =
                realized_rate(map, out.state, ctx.transmit_power, ctx.noise_dl, ctx.regularizer);
            return out;
        }
        case BaselineKind::GroupOpt: {
            double best_rate = -std::numeric_limits<double>::infinity();
            StateVector best_state;
            for (int l = 1; l <= L; ++l) {
                StateVector s = StateVector::constant(N, l, L);
                double r = realized_rate(map, s, ctx.transmit_power, ctx.noise_dl, ctx.regularizer);
                if (r > best_rate) {
                    best_rate = r;
                    best_state = s;
                }
            }
            out.state = best_state;
            out.sum_rate_nats = best_rate;
            return out;
        }
        case BaselineKind::PhasedArray: {
            const double gain =
                ctx.phased_gain * std::pow(10.0, -ctx.extra_ps_loss_db / 20.0);
            double best_rate = -std::numeric_limits<double>::infinity();
            CVector best_phases;
            for (int restart = 0; restart < ctx.optimizer.restarts; ++restart) {
                RngStream init(ctx.seed, 0xFA5E00 + static_cast<std::uint64_t>(restart));
                RVector theta(N);
                for (int n = 0; n < N; ++n) theta[n] = init.uniform(0.0, 2.0 * kPi);
                AdamState adam = AdamState::create(N, ctx.optimizer.learning_rate);
                double run_best = -std::numeric_limits<double>::infinity();
                RVector run_best_theta = theta;
                int since = 0;
                for (int it = 0; it < ctx.optimizer.iterations; ++it) {
                    CVector z(N);
                    for (int n = 0; n < N; ++n) z[n] = std::polar(gain, theta[n]);
                    CMatrix H = map.element_channel(z);
                    CMatrix GH;
                    double rate =
                        rate_and_grad_h(H, ctx.transmit_power, ctx.noise_dl, ctx.regularizer, &GH);
                    if (rate > run_best) {
                        run_best = rate;
                        run_best_theta = theta;
                        since = 0;
                    } else if (++since >= ctx.optimizer.plateau_window) {
                        break;
                    }
                    CVector gz = map.adjoint_element(GH);
                    RVector gtheta(N);
                    for (int n = 0; n < N; ++n)
                        gtheta[n] = (Complex(0, 1) * z[n] * std::conj(gz[n])).real();
                    theta = adam_step(theta, RVector(-gtheta), adam);
                }
                if (run_best > best_rate) {
                    best_rate = run_best;
                    best_phases = CVector(N);
                    for (int n = 0; n < N; ++n)
                        best_phases[n] = std::polar(gain, run_best_theta[n]);
                }
            }
            out.sum_rate_nats = best_rate;
            out.phases = best_phases;
            return out;
        }
    }
    throw std::invalid_argument("run_baseline: unknown baseline kind");
}

BruteForceResult brute_force(const RelaxedChannelMap& map, double transmit_power,
                             double noise_dl, double regularizer, long max_candidates) {
    const int N = map.num_elements(), L = map.num_states();
    double total = std::pow(double(L), double(N));
    if (total > double(max_candidates))
        throw std::invalid_argument("brute_force: L^N = " + std::to_string(total) +
                                    " exceeds the bound " + std::to_string(max_candidates));
    BruteForceResult out;
    out.sum_rate_nats = -std::numeric_limits<double>::infinity();
    std::vector<int> s(static_cast<std::size_t>(N), 1);
    while (true) {
        StateVector sv(s, L);
        double r = realized_rate(map, sv, transmit_power, noise_dl, regularizer);
        ++out.evaluated;
        if (r > out.sum_rate_nats) {
            out.sum_rate_nats = r;
            out.state = sv;
        }
        int pos = 0;
        while (pos < N && s[static_cast<std::size_t>(pos)] == L) {
            s[static_cast<std::size_t>(pos)] = 1;
            ++pos;
        }
        if (pos == N) break;
        s[static_cast<std::size_t>(pos)] += 1;
    }
    return out;
}

}  // namespace pixris
