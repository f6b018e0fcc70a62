#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pixris/beamforming.hpp"
#include "test_support.hpp"

using namespace pixris;

namespace {

struct SmallWorld {
    ArrayGeometry bs{4, 1, 0.5};
    ArrayGeometry ris{2, 2, 0.5};  // N = 4
    int K = 2, L = 3;
    SyntheticTruth truth;
    Scenario scenario;
    ChannelRealization real;
    RelaxedChannelMap map;

    explicit SmallWorld(std::uint64_t seed)
        : truth(SyntheticTruth::make(seed, [] {
              SyntheticTruth::Options o;
              o.num_states = 3;
              o.degree = 1;
              return o;
          }())),
          scenario(Scenario::make([&] {
              ScenarioParams p;
              p.bs = ArrayGeometry{4, 1, 0.5};
              p.ris = ArrayGeometry{2, 2, 0.5};
              p.num_users = 2;
              p.bs_clusters = 1;
              p.ue_clusters = 1;
              p.rays_per_cluster = 2;
              p.seed = seed;
              p.snr_calibration_blocks = 20;
              return p;
          }())),
          real(scenario.realization(0)),
          map(RelaxedChannelMap::from_realization(real, bs, ris, truth)) {}
};

RMatrix random_logits(int L, int N, RngStream& rng, double scale = 1.0) {
    RMatrix m(L, N);
    for (int n = 0; n < N; ++n)
        for (int l = 0; l < L; ++l) m(l, n) = scale * rng.normal();
    return m;
}

}  // namespace

TEST_CASE("softmax^2 satisfies the sqrt-simplex identity") {
    RngStream rng(1, 1);
    for (int trial = 0; trial < 100; ++trial) {
        RMatrix logits = random_logits(16, 8, rng, 3.0);
        RMatrix sbar = softmax_squared(logits);
        for (int n = 0; n < 8; ++n) {
            double acc = 0.0;
            for (int l = 0; l < 16; ++l) {
                CHECK(sbar(l, n) >= 0.0);
                CHECK(sbar(l, n) <= 1.0);
                acc += std::sqrt(sbar(l, n));
            }
            CHECK(std::abs(acc - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("rzf matched filter, power identity, and orthogonal users") {
    RngStream rng(2, 2);
    // K = 1 with no regularization reduces to the matched filter
    CMatrix h(4, 1);
    for (int m = 0; m < 4; ++m) h(m, 0) = rng.cnormal();
    double PT = 2.5;
    PrecoderMatrix p = rzf(h, 0.0, PT);
    CVector expect = std::sqrt(PT) * h.conjugate() / h.norm();
    CHECK((p.w.col(0) - expect).norm() < 1e-10 * expect.norm());
    CHECK(p.w.col(0).squaredNorm() == doctest::Approx(PT).epsilon(1e-10));

    // orthogonal user channels: H^T W is diagonal
    CMatrix H = CMatrix::Zero(4, 2);
    H(0, 0) = Complex(1, 1);
    H(2, 1) = Complex(0, -2);
    PrecoderMatrix q = rzf(H, 0.0, 1.0);
    CMatrix T = H.transpose() * q.w;
    CHECK(std::abs(T(0, 1)) <= 1e-10);
    CHECK(std::abs(T(1, 0)) <= 1e-10);

    // (1/K) sum ||w_k||^2 = P_T on random instances
    for (int trial = 0; trial < 100; ++trial) {
        CMatrix Hr(4, 2);
        for (int m = 0; m < 4; ++m)
            for (int k = 0; k < 2; ++k) Hr(m, k) = rng.cnormal();
        PrecoderMatrix pr = rzf(Hr, 1e-3, 3.0);
        CHECK(pr.w.squaredNorm() / 2.0 == doctest::Approx(3.0).epsilon(1e-10));
    }

    // singular with zero regularization: error advising varsigma > 0
    CMatrix sing(4, 2);
    for (int m = 0; m < 4; ++m) {
        sing(m, 0) = rng.cnormal();
        sing(m, 1) = sing(m, 0);
    }
    CHECK_THROWS_WITH_AS(rzf(sing, 0.0, 1.0), doctest::Contains("varsigma"),
                         std::runtime_error);
}

TEST_CASE("sum_rate closed forms and independent reimplementation") {
    RngStream rng(3, 3);
    CMatrix H(4, 2);
    for (int m = 0; m < 4; ++m)
        for (int k = 0; k < 2; ++k) H(m, k) = rng.cnormal();
    CHECK(sum_rate(H, CMatrix::Zero(4, 2), 1.0) == 0.0);

    // K = 1 matched filter: log(1 + P_T ||h||^2 / sigma^2)
    CMatrix h = H.leftCols(1);
    double PT = 1.7, sz2 = 0.6;
    PrecoderMatrix p = rzf(h, 0.0, PT);
    CHECK(sum_rate(h, p.w, sz2) ==
          doctest::Approx(std::log(1.0 + PT * h.squaredNorm() / sz2)).epsilon(1e-12));

    // scalar-by-scalar reimplementation
    CMatrix W(4, 2);
    for (int m = 0; m < 4; ++m)
        for (int k = 0; k < 2; ++k) W(m, k) = rng.cnormal();
    double manual = 0.0;
    for (int k = 0; k < 2; ++k) {
        Complex sig = 0.0;
        for (int m = 0; m < 4; ++m) sig += H(m, k) * W(m, k);
        double inter = sz2;
        for (int i = 0; i < 2; ++i) {
            if (i == k) continue;
            Complex c = 0.0;
            for (int m = 0; m < 4; ++m) c += H(m, k) * W(m, i);
            inter += std::norm(c);
        }
        manual += std::log(1.0 + std::norm(sig) / inter);
    }
    CHECK(sum_rate(H, W, sz2) == doctest::Approx(manual).epsilon(1e-12));
    CHECK(sum_rate(H, W, sz2, true) == doctest::Approx(manual / std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("relaxed_response combines per-state responses") {
    SyntheticTruth::Options o;
    o.num_states = 3;
    o.degree = 1;
    SyntheticTruth truth = SyntheticTruth::make(4, o);
    AnglePair in(0.2, 1.1), out(-0.9, 2.0);

    RVector onehot = RVector::Zero(3);
    onehot[1] = 1.0;
    CHECK(std::abs(relaxed_response(truth, in, out, onehot) - truth.eval(in, out, 2)) < 1e-15);
    CHECK(std::abs(relaxed_response(truth, in, out, RVector::Zero(3))) == 0.0);

    RVector uniform = RVector::Constant(3, 1.0 / 9.0);
    Complex want = 0.0;
    for (int l = 1; l <= 3; ++l) want += truth.eval(in, out, l) / 9.0;
    CHECK(std::abs(relaxed_response(truth, in, out, uniform) - want) < 1e-14);
}

TEST_CASE("channel map agrees with the exact cascaded channel") {
    SmallWorld w(11);
    RngStream rng(5, 5);
    for (int trial = 0; trial < 5; ++trial) {
        std::vector<int> sv(4);
        for (auto& e : sv) e = rng.uniform_int(1, 3);
        StateVector s(sv, 3);
        CMatrix via_map = w.map.channel(s);
        CMatrix direct = cascaded_channel_matrix(w.real, w.bs, w.ris, w.truth, s);
        CHECK((via_map - direct).norm() < 1e-12 * direct.norm());

        // vertex consistency: exact one-hot sbar equals the discrete channel
        RMatrix sbar = RMatrix::Zero(3, 4);
        for (int n = 0; n < 4; ++n) sbar(sv[static_cast<std::size_t>(n)] - 1, n) = 1.0;
        CHECK((w.map.channel(sbar) - via_map).norm() == 0.0);
    }
}

TEST_CASE("relaxed objective gradient matches finite differences") {
    // ten random small instances, rel L2 error below 1e-4
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        SmallWorld w(seed * 13);
        RngStream rng(seed, 6);
        RMatrix logits = random_logits(3, 4, rng, 0.5);
        RMatrix grad;
        relaxed_objective(w.map, logits, 1.0, 1.0, 1e-3, &grad);
        auto f = [&](const RVector& v) {
            RMatrix lg = Eigen::Map<const RMatrix>(v.data(), 3, 4);
            return relaxed_objective(w.map, lg, 1.0, 1.0, 1e-3, nullptr);
        };
        RVector x = Eigen::Map<RVector>(logits.data(), logits.size());
        RVector fd = finite_diff_grad(f, x, 1e-6);
        RVector ga = Eigen::Map<RVector>(grad.data(), grad.size());
        CHECK((ga - fd).norm() / fd.norm() < 1e-4);
    }
}

TEST_CASE("vertex consistency of the relaxed and discrete objectives") {
    SmallWorld w(21);
    RngStream rng(7, 7);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> sv(4);
        for (auto& e : sv) e = rng.uniform_int(1, 3);
        StateVector s(sv, 3);
        RMatrix sbar = RMatrix::Zero(3, 4);
        for (int n = 0; n < 4; ++n) sbar(sv[static_cast<std::size_t>(n)] - 1, n) = 1.0;
        CMatrix Hd = w.map.channel(s);
        CMatrix Hr = w.map.channel(sbar);
        double rd = sum_rate(Hd, rzf(Hd, 1e-3, 1.0).w, 1.0);
        double rr = sum_rate(Hr, rzf(Hr, 1e-3, 1.0).w, 1.0);
        CHECK(std::abs(rd - rr) <= 1e-10);
    }
}

TEST_CASE("optimize_relaxed improves on its initialization") {
    SmallWorld w(31);
    OptimizeOptions opts;
    opts.iterations = 120;
    opts.restarts = 2;
    opts.seed = 3;
    OptimizeResult r = optimize_relaxed(w.map, opts);
    REQUIRE(!r.trajectory.empty());
    CHECK(r.best_objective >= r.trajectory.front());
    double recomputed =
        relaxed_objective(w.map, r.best.logits, opts.transmit_power, opts.noise_dl,
                          opts.regularizer, nullptr);
    CHECK(recomputed == doctest::Approx(r.best_objective).epsilon(1e-12));
}

TEST_CASE("discretize rules") {
    RMatrix onehot = RMatrix::Zero(3, 2);
    onehot(2, 0) = 1.0;
    onehot(0, 1) = 1.0;
    StateVector s = discretize(onehot, 3);
    CHECK(s[0] == 3);
    CHECK(s[1] == 1);

    // uniform column resolves to state 1
    RMatrix uni = RMatrix::Constant(3, 1, 1.0 / 9.0);
    CHECK(discretize(uni, 3)[0] == 1);

    // per-column max-scan oracle + positive-scaling equivariance
    RngStream rng(8, 8);
    for (int trial = 0; trial < 50; ++trial) {
        RMatrix logits = random_logits(4, 6, rng);
        RMatrix sbar = softmax_squared(logits);
        StateVector got = discretize(sbar, 4);
        RMatrix scaled = sbar;
        for (int n = 0; n < 6; ++n) scaled.col(n) *= rng.uniform(0.1, 10.0);
        StateVector got2 = discretize(scaled, 4);
        for (int n = 0; n < 6; ++n) {
            int best = 0;
            for (int l = 1; l < 4; ++l)
                if (sbar(l, n) > sbar(best, n)) best = l;
            CHECK(got[n] == best + 1);
            CHECK(got2[n] == got[n]);
        }
    }
}

TEST_CASE("brute force enumerates exactly and bounds hold") {
    SmallWorld w(41);
    BruteForceResult bf = brute_force(w.map, 1.0, 1.0, 1e-3);
    CHECK(bf.evaluated == 81);  // 3^4

    // every random state is no better
    RngStream rng(9, 9);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<int> sv(4);
        for (auto& e : sv) e = rng.uniform_int(1, 3);
        CMatrix H = w.map.channel(StateVector(sv, 3));
        CHECK(sum_rate(H, rzf(H, 1e-3, 1.0).w, 1.0) <= bf.sum_rate_nats + 1e-12);
    }

    // N = 1: best of L single evaluations
    ScenarioParams p1;
    p1.bs = {2, 1, 0.5};
    p1.ris = {1, 1, 0.5};
    p1.num_users = 1;
    p1.bs_clusters = 0;
    p1.ue_clusters = 0;
    p1.seed = 5;
    p1.snr_calibration_blocks = 10;
    Scenario sc1 = Scenario::make(p1);
    RelaxedChannelMap m1 =
        RelaxedChannelMap::from_realization(sc1.realization(0), p1.bs, p1.ris, w.truth);
    BruteForceResult b1 = brute_force(m1, 1.0, 1.0, 1e-3);
    CHECK(b1.evaluated == 3);
    double best = -1;
    for (int l = 1; l <= 3; ++l) {
        CMatrix H = m1.channel(StateVector::constant(1, l, 3));
        best = std::max(best, sum_rate(H, rzf(H, 1e-3, 1.0).w, 1.0));
    }
    CHECK(b1.sum_rate_nats == doctest::Approx(best));

    CHECK_THROWS_AS(brute_force(w.map, 1.0, 1.0, 1e-3, 50), std::invalid_argument);
}

TEST_CASE("baselines") {
    SmallWorld w(51);
    BeamformContext ctx;
    ctx.true_map = &w.map;
    ctx.seed = 77;
    ctx.optimizer.iterations = 100;
    ctx.optimizer.restarts = 2;

    // Random is deterministic under a fixed seed
    BaselineResult r1 = run_baseline(BaselineKind::Random, ctx);
    BaselineResult r2 = run_baseline(BaselineKind::Random, ctx);
    CHECK(r1.state.raw() == r2.state.raw());

    // Group-Opt: exhaustive over the L constant vectors
    BaselineResult g = run_baseline(BaselineKind::GroupOpt, ctx);
    double best = -1;
    int arg = 0;
    for (int l = 1; l <= 3; ++l) {
        CMatrix H = w.map.channel(StateVector::constant(4, l, 3));
        double rate = sum_rate(H, rzf(H, ctx.regularizer, 1.0).w, 1.0);
        if (rate > best) {
            best = rate;
            arg = l;
        }
    }
    CHECK(g.sum_rate_nats == doctest::Approx(best));
    for (int n = 0; n < 4; ++n) CHECK(g.state[static_cast<std::size_t>(n)] == arg);

    // brute force dominates Group-Opt (containment)
    BruteForceResult bf = brute_force(w.map, 1.0, 1.0, ctx.regularizer);
    CHECK(bf.sum_rate_nats >= g.sum_rate_nats - 1e-12);

    // Best Sounding picks a plan configuration
    SoundingPlan plan;
    RngStream prng(3, 10);
    plan = make_plan(prng, 5, 4, 3, PlanPolicy::UniformRandom);
    SoundingSet set;
    set.num_bs = 4;
    set.num_users = 2;
    set.num_blocks = 1;
    set.noise_ul = 0.0;
    set.plan = plan;
    set.obs.resize(1);
    for (int b = 0; b < 5; ++b)
        set.obs[0].push_back(w.map.channel(plan.states[static_cast<std::size_t>(b)]));
    ctx.sounding = &set;
    BaselineResult bs = run_baseline(BaselineKind::BestSounding, ctx);
    bool found = false;
    for (const auto& s : plan.states) found |= (s.raw() == bs.state.raw());
    CHECK(found);
    // with noiseless sounding the pick is the true best of the plan
    double bestplan = -1;
    for (const auto& s : plan.states) {
        CMatrix H = w.map.channel(s);
        bestplan = std::max(bestplan, sum_rate(H, rzf(H, ctx.regularizer, 1.0).w, 1.0));
    }
    CHECK(bs.sum_rate_nats == doctest::Approx(bestplan));

    // Phased array: unit-modulus phases at the calibrated gain, finite rate
    ctx.phased_gain = std::sqrt(w.truth.mean_power() / std::pow(10.0, 0.3));
    BaselineResult pa = run_baseline(BaselineKind::PhasedArray, ctx);
    REQUIRE(pa.phases.size() == 4);
    for (int n = 0; n < 4; ++n)
        CHECK(std::abs(pa.phases[n]) == doctest::Approx(ctx.phased_gain));
    CHECK(std::isfinite(pa.sum_rate_nats));
    CHECK(pa.sum_rate_nats > 0.0);

    CHECK_THROWS_AS(run_baseline(BaselineKind::BestSounding,
                                 [&] {
                                     BeamformContext c = ctx;
                                     c.sounding = nullptr;
                                     return c;
                                 }()),
                    std::invalid_argument);
}
