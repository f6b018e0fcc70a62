#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "pixris/estimation.hpp"
#include "test_support.hpp"

using namespace pixris;
using pixris::testing::ConstantResponse;

namespace {

struct PlantedWorld {
    ArrayGeometry bs{4, 1, 0.5};
    ArrayGeometry ris{6, 6, 0.5};
    int K = 2, T = 8, B = 16, L = 8;
    AngleGrid grid = AngleGrid::make_degrees(6.0, 6.0);
    SyntheticTruth truth;
    EstimatedKnowledge plant;
    SoundingPlan plan;
    std::vector<int> in_idx;
    std::vector<std::vector<int>> out_idx;

    PlantedWorld(std::uint64_t seed, int num_in_clusters, int num_out_clusters,
                 double sigma_u, int blocks = 8)
        : truth(SyntheticTruth::make(91, [] {
              SyntheticTruth::Options o;
              o.num_states = 8;
              o.degree = 2;
              return o;
          }())) {
        T = blocks;
        RngStream rng(seed, 0x77);
        // well-separated on-grid angles (>= 3 cells apart by construction)
        auto pick = [&](std::vector<int>& used) {
            while (true) {
                int g = rng.uniform_int(0, grid.size() - 1);
                bool ok = grid.at(g).elevation > 0.15 && grid.at(g).elevation < kPi - 0.15;
                for (int u : used) {
                    int daz = std::abs(g / grid.num_el - u / grid.num_el);
                    daz = std::min(daz, grid.num_az - daz);
                    int del = std::abs(g % grid.num_el - u % grid.num_el);
                    if (daz <= 3 && del <= 3) ok = false;
                }
                if (ok) {
                    used.push_back(g);
                    return g;
                }
            }
        };
        std::vector<int> used;
        in_idx.push_back(pick(used));
        for (int i = 0; i < num_in_clusters; ++i) in_idx.push_back(pick(used));
        for (int k = 0; k < K; ++k) {
            std::vector<int> ou;
            std::vector<int> used_k = used;  // out sets may not collide with in set
            ou.push_back(pick(used_k));
            for (int j = 0; j < num_out_clusters; ++j) ou.push_back(pick(used_k));
            out_idx.push_back(ou);
        }

        plant.bs = bs;
        plant.ris = ris;
        plant.phi_bs_los = random_angle(rng);
        for (int g : in_idx) plant.angles_in.push_back(grid.at(g));
        for (const auto& ou : out_idx) {
            std::vector<AnglePair> a;
            for (int g : ou) a.push_back(grid.at(g));
            plant.angles_out.push_back(a);
        }
        const int M = bs.size();
        const int nI = static_cast<int>(plant.angles_in.size());
        for (int t = 0; t < T; ++t) {
            BlockCoefficients bc;
            bc.a = CMatrix(M, nI);
            double sa = nI > 1 ? std::sqrt(0.5 / (2.0 * M * (nI - 1))) : 0.0;
            for (int m = 0; m < M; ++m)
                for (int i = 0; i < nI; ++i) bc.a(m, i) = sa * rng.cnormal();
            bc.a(0, 0) = 1.0;
            for (int k = 0; k < K; ++k) {
                const int nJ = static_cast<int>(plant.angles_out[k].size());
                CVector d(nJ);
                double sd = nJ > 1 ? std::sqrt(0.5 / (2.0 * (nJ - 1))) : 0.0;
                for (int j = 0; j < nJ; ++j) d[j] = sd * rng.cnormal();
                d[0] = 1.0 + 0.1 * rng.normal();
                bc.d.push_back(d);
            }
            plant.blocks.push_back(std::move(bc));
        }

        RngStream prng(seed, 0x88);
        plan = make_plan(prng, B, ris.size(), L, PlanPolicy::UniformRandom);
    }

    SoundingSet sound(double sigma_u2, std::uint64_t seed) const {
        SoundingSet set;
        set.num_bs = bs.size();
        set.num_users = K;
        set.num_blocks = T;
        set.noise_ul = sigma_u2;
        set.plan = plan;
        RngStream noise(seed, 0x15E);
        set.obs.resize(static_cast<std::size_t>(T));
        for (int t = 0; t < T; ++t)
            for (int b = 0; b < B; ++b) {
                CMatrix y = predict(plant, truth, plan.states[b], t);
                if (sigma_u2 > 0)
                    for (Eigen::Index c = 0; c < y.cols(); ++c)
                        for (Eigen::Index r = 0; r < y.rows(); ++r)
                            y(r, c) += std::sqrt(sigma_u2) * noise.cnormal();
                set.obs[static_cast<std::size_t>(t)].push_back(std::move(y));
            }
        return set;
    }
};

}  // namespace

TEST_CASE("angle grid geometry") {
    AngleGrid g = AngleGrid::make_degrees(3.0, 3.0);
    CHECK(g.num_az == 120);
    CHECK(g.num_el == 60);
    CHECK(g.size() == 7200);
    AnglePair first = g.at(0);
    CHECK(first.azimuth == doctest::Approx(-kPi));
    CHECK(first.elevation == doctest::Approx(0.5 * 3.0 * kPi / 180.0));
    // snap is the inverse of at
    RngStream rng(1, 1);
    for (int i = 0; i < 50; ++i) {
        int idx = rng.uniform_int(0, g.size() - 1);
        CHECK(g.snap(g.at(idx)) == idx);
    }
    // neighbors wrap in azimuth, clip in elevation
    CHECK(g.neighbors(0).size() == 5);                      // bottom row
    CHECK(g.neighbors(g.index_of(0, 30)).size() == 8);      // interior
    CHECK_THROWS_AS(AngleGrid::make(0.0, 0.1), std::invalid_argument);
}

TEST_CASE("basis_f closed forms and oracle") {
    ArrayGeometry ris{4, 4, 0.5};
    const int N = 16;
    ConstantResponse one(Complex(1, 0), 4);
    AnglePair phi(0.3, 1.2);
    StateVector s = StateVector::constant(N, 2, 4);
    // nu = 1 and in == out: every term is |alpha_n|^2 = 1, sum = N
    Complex f = basis_f(one, ris, phi, phi, s);
    CHECK(f.real() == doctest::Approx(double(N)));
    CHECK(f.imag() == doctest::Approx(0.0));

    ConstantResponse zero(Complex(0, 0), 4);
    CHECK(std::abs(basis_f(zero, ris, phi, AnglePair(1.0, 0.4), s)) == 0.0);

    // dense diag-matrix oracle on random inputs
    SyntheticTruth::Options o;
    o.num_states = 4;
    o.degree = 1;
    SyntheticTruth truth = SyntheticTruth::make(17, o);
    RngStream rng(2, 2);
    for (int trial = 0; trial < 10; ++trial) {
        AnglePair in = random_angle(rng), out = random_angle(rng);
        std::vector<int> sv(N);
        for (auto& e : sv) e = rng.uniform_int(1, 4);
        StateVector ss(sv, 4);
        CMatrix D = CMatrix::Zero(N, N);
        for (int n = 0; n < N; ++n) D(n, n) = truth.eval(in, out, ss[n]);
        CVector ain = steering_vector(ris, in), aout = steering_vector(ris, out);
        Complex want = (ain.adjoint() * D * aout).value();
        Complex got = basis_f(truth, ris, in, out, ss);
        CHECK(std::abs(got - want) < 1e-12 * std::abs(want));
    }
}

TEST_CASE("nmse identities") {
    CMatrix a(2, 2);
    a << Complex(1, 2), Complex(0, 1), Complex(3, 0), Complex(-1, -1);
    CHECK(nmse(a, a) == 0.0);
    CHECK(nmse(CMatrix::Zero(2, 2), a) == doctest::Approx(1.0));
    CHECK(nmse(CMatrix(2.0 * a), a) == doctest::Approx(1.0));
    CHECK_THROWS_AS(nmse(CMatrix::Zero(1, 2), a), std::invalid_argument);
}

TEST_CASE("LoS-only planted model: step 1 alone is exact") {
    PlantedWorld w(5, 0, 0, 0.0);
    SoundingSet set = w.sound(0.0, 5);
    EstimationOptions opts;
    opts.als_sweeps = 1;
    EstimationStats stats;
    BlockCoefficients bc =
        estimate_instantaneous(set, 0, w.plant.angles_in, w.plant.angles_out, w.bs, w.ris,
                               w.truth, w.plant.phi_bs_los, opts, &stats);
    for (int k = 0; k < w.K; ++k)
        CHECK(std::abs(bc.d[k][0] - w.plant.blocks[0].d[k][0]) /
                  std::abs(w.plant.blocks[0].d[k][0]) <
              1e-10);
    // Algorithm 1 never touches the grid and stays within the LS budget
    CHECK(stats.candidate_evals == 0);
    CHECK(stats.ls_solves <= w.bs.size() + w.K + 1);
}

TEST_CASE("planted I=J=1: alternating sweeps reach machine-precision prediction") {
    PlantedWorld w(7, 1, 1, 0.0);
    SoundingSet set = w.sound(0.0, 7);
    EstimationOptions opts;
    opts.als_sweeps = 60;
    std::vector<BlockCoefficients> est;
    for (int t = 0; t < w.T; ++t)
        est.push_back(estimate_instantaneous(set, t, w.plant.angles_in, w.plant.angles_out,
                                             w.bs, w.ris, w.truth, w.plant.phi_bs_los, opts));
    EstimatedKnowledge know = w.plant;
    know.blocks = est;

    // literal single pass for contrast: strictly worse
    EstimationOptions literal;
    literal.als_sweeps = 1;
    BlockCoefficients one_pass =
        estimate_instantaneous(set, 0, w.plant.angles_in, w.plant.angles_out, w.bs, w.ris,
                               w.truth, w.plant.phi_bs_los, literal);
    EstimatedKnowledge know1 = w.plant;
    know1.blocks = {one_pass};

    RngStream rng(3, 3);
    NmseAccumulator acc, acc1;
    for (int e = 0; e < 40; ++e) {
        std::vector<int> sv(static_cast<std::size_t>(w.ris.size()));
        for (auto& v : sv) v = rng.uniform_int(1, w.L);
        StateVector s(sv, w.L);
        int t = e % w.T;
        CMatrix truth_h = predict(w.plant, w.truth, s, t);
        acc.add(predict(know, w.truth, s, t), truth_h);
        if (t == 0) acc1.add(predict(know1, w.truth, s, 0), truth_h);
    }
    CHECK(acc.value() < 1e-10);
    CHECK(acc1.value() > 1e-6);  // the literal pass leaves real bias

    // a_{t,1,0} normalization holds exactly
    for (const auto& bc : est) CHECK(bc.a(0, 0) == Complex(1.0, 0.0));
}

TEST_CASE("prediction NMSE degrades monotonically with noise") {
    PlantedWorld w(11, 1, 1, 0.0);
    EstimationOptions opts;
    opts.als_sweeps = 25;
    std::vector<double> levels = {1e-4, 1e-2, 1.0};
    std::vector<double> scores;
    for (double s2 : levels) {
        NmseAccumulator acc;
        for (int trial = 0; trial < 34; ++trial) {
            SoundingSet set = w.sound(s2, 100 + trial);
            BlockCoefficients bc = estimate_instantaneous(
                set, trial % w.T, w.plant.angles_in, w.plant.angles_out, w.bs, w.ris, w.truth,
                w.plant.phi_bs_los, opts);
            for (const auto& dk : bc.d) CHECK(dk.allFinite());
            EstimatedKnowledge know = w.plant;
            know.blocks.assign(static_cast<std::size_t>(w.T), bc);
            RngStream rng(trial, 4);
            std::vector<int> sv(static_cast<std::size_t>(w.ris.size()));
            for (auto& v : sv) v = rng.uniform_int(1, w.L);
            StateVector s(sv, w.L);
            acc.add(predict(know, w.truth, s, trial % w.T),
                    predict(w.plant, w.truth, s, trial % w.T));
        }
        scores.push_back(acc.value());
    }
    CHECK(scores[0] < scores[1]);
    CHECK(scores[1] < scores[2]);
}

TEST_CASE("planted recovery: LoS-only P(C-1) finds the exact grid point") {
    PlantedWorld w(13, 0, 0, 0.0);
    SoundingSet set = w.sound(0.0, 13);
    AngleEstimationResult res =
        estimate_angles(set, w.bs, w.ris, w.truth, w.grid, w.plant.angles_in[0],
                        w.plant.phi_bs_los, AngleEstimationOptions{});
    REQUIRE(res.grid_out.size() == 2);
    for (int k = 0; k < w.K; ++k) {
        REQUIRE(res.grid_out[k].size() >= 1);
        CHECK(res.grid_out[k][0] == w.out_idx[k][0]);
    }
    // noiseless LoS-only world: residual collapses to the numerical floor
    CHECK(res.residual_energy < 1e-12);
}

TEST_CASE("planted recovery: two clusters per side, exact set equality") {
    PlantedWorld w(17, 2, 2, 0.0);
    SoundingSet set = w.sound(0.0, 17);
    AngleEstimationOptions opts;
    AngleEstimationResult res = estimate_angles(set, w.bs, w.ris, w.truth, w.grid,
                                                w.plant.angles_in[0], w.plant.phi_bs_los, opts);
    auto sorted = [](std::vector<int> v) {
        std::sort(v.begin(), v.end());
        return v;
    };
    CHECK(sorted(res.grid_in) == sorted(w.in_idx));
    for (int k = 0; k < w.K; ++k) CHECK(sorted(res.grid_out[k]) == sorted(w.out_idx[k]));

    // residual trace is non-increasing (append-and-refit only explains more)
    for (std::size_t i = 1; i < res.residual_trace.size(); ++i)
        CHECK(res.residual_trace[i] <= res.residual_trace[i - 1] * (1.0 + 1e-9));

    // grid scans run O(|D|) per append; Algorithm 1 runs none
    CHECK(res.stats.candidate_evals >= w.grid.size());
    CHECK(res.stats.candidate_evals % w.grid.size() == 0);

    // final coefficients predict unseen states to machine precision
    RngStream rng(5, 5);
    NmseAccumulator acc;
    for (int e = 0; e < 30; ++e) {
        std::vector<int> sv(static_cast<std::size_t>(w.ris.size()));
        for (auto& v : sv) v = rng.uniform_int(1, w.L);
        StateVector s(sv, w.L);
        acc.add(predict(res.knowledge, w.truth, s, e % w.T),
                predict(w.plant, w.truth, s, e % w.T));
    }
    CHECK(acc.value() < 1e-8);
}

TEST_CASE("overwhelming noise terminates immediately with singleton sets") {
    PlantedWorld w(19, 2, 2, 0.0);
    double huge = 1e6;
    SoundingSet set = w.sound(huge, 19);
    AngleEstimationResult res =
        estimate_angles(set, w.bs, w.ris, w.truth, w.grid, w.plant.angles_in[0],
                        w.plant.phi_bs_los, AngleEstimationOptions{});
    CHECK(res.grid_in.size() == 1);
    for (const auto& ou : res.grid_out) CHECK(ou.size() == 1);
}

TEST_CASE("estimate_angles rejects an empty grid") {
    PlantedWorld w(23, 0, 0, 0.0);
    SoundingSet set = w.sound(0.0, 23);
    AngleGrid empty;
    CHECK_THROWS_AS(estimate_angles(set, w.bs, w.ris, w.truth, empty, w.plant.angles_in[0],
                                    w.plant.phi_bs_los, AngleEstimationOptions{}),
                    std::invalid_argument);
}

TEST_CASE("in-sample prediction matches the noiseless observations") {
    PlantedWorld w(29, 1, 1, 0.0);
    SoundingSet set = w.sound(0.0, 29);
    for (int b = 0; b < 4; ++b) {
        CMatrix pred = predict(w.plant, w.truth, w.plan.states[b], 2);
        CHECK((pred - set.at(2, b)).norm() <= 1e-10 * set.at(2, b).norm());
    }
    // zero coefficients produce the zero matrix
    EstimatedKnowledge zero = w.plant;
    for (auto& bc : zero.blocks) {
        bc.a.setZero();
        for (auto& d : bc.d) d.setZero();
    }
    CHECK(predict(zero, w.truth, w.plan.states[0], 0).norm() == 0.0);
    CHECK_THROWS_AS(predict(w.plant, w.truth, w.plan.states[0], 99), std::invalid_argument);
}

TEST_CASE("estimated knowledge serializes through JSON") {
    PlantedWorld w(31, 1, 1, 0.0);
    std::string path = "test_knowledge.json";
    w.plant.save(path);
    EstimatedKnowledge k = EstimatedKnowledge::load(path);
    CHECK(k.num_users() == w.plant.num_users());
    CHECK(k.num_blocks() == w.plant.num_blocks());
    RngStream rng(6, 6);
    std::vector<int> sv(static_cast<std::size_t>(w.ris.size()));
    for (auto& v : sv) v = rng.uniform_int(1, w.L);
    StateVector s(sv, w.L);
    CMatrix a = predict(w.plant, w.truth, s, 1);
    CMatrix b = predict(k, w.truth, s, 1);
    CHECK((a - b).norm() < 1e-12 * a.norm());
    std::remove(path.c_str());
}
