#include "pixris/channel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pixris {

namespace {

constexpr std::uint64_t kStreamLongTerm = 0xA001;
constexpr std::uint64_t kStreamSnrCalib = 0xA002;
constexpr std::uint64_t kStreamBlockPhases = 0xB0000000;

double clamp_elevation(double el) {
    const double eps = 1e-9;
    return std::min(std::max(el, eps), kPi - eps);
}

AnglePair jitter(const AnglePair& center, double spread_rad, RngStream& rng) {
    double az = center.azimuth + spread_rad * rng.normal();
    double el = clamp_elevation(center.elevation + spread_rad * rng.normal());
    return AnglePair(az, el);
}

}  // namespace

CVector steering_vector(const ArrayGeometry& g, const AnglePair& phi) {
    CVector v(g.size());
    double sx = std::sin(phi.elevation) * std::cos(phi.azimuth);
    double sy = std::sin(phi.elevation) * std::sin(phi.azimuth);
    int n = 0;
    for (int p = 0; p < g.rows; ++p)
        for (int q = 0; q < g.cols; ++q)
            v[n++] = std::polar(1.0, 2.0 * kPi * g.spacing * (p * sx + q * sy));
    return v;
}

Scenario Scenario::make(const ScenarioParams& params) {
    const int K = params.num_users;
    const int B = params.sounding_configs;
    const int M = params.bs.size();
    if (K < 1) throw std::invalid_argument("Scenario: need K >= 1");
    if (params.transmit_power <= 0.0) throw std::invalid_argument("Scenario: need P_T > 0");
    if (params.bs_clusters >= B * K)
        throw std::invalid_argument("Scenario: feasibility requires I < B_sound*K (I=" +
                                    std::to_string(params.bs_clusters) +
                                    ", B*K=" + std::to_string(B * K) + ")");
    if (params.ue_clusters >= B * M)
        throw std::invalid_argument("Scenario: feasibility requires J < B_sound*M (J=" +
                                    std::to_string(params.ue_clusters) +
                                    ", B*M=" + std::to_string(B * M) + ")");

    Scenario sc;
    sc.params_ = params;

    RngStream rng(params.seed, kStreamLongTerm);
    const double spread = params.angular_spread_deg * kPi / 180.0;
    const double kappa = std::pow(10.0, params.k_factor_db / 10.0);
    const int D = params.rays_per_cluster;

    ChannelRealization& lt = sc.longterm_;
    lt.phi_bs_los = random_angle(rng);
    lt.phi_in_los = random_angle(rng);

    // BS-RIS clusters: unit LoS gain, NLoS power split so that
    // sum_i a_i^2 D_i = 1/kappa (K-factor against the unit-gain LoS)
    std::vector<double> raw(params.bs_clusters);
    double raw_sum = 0.0;
    for (auto& r : raw) {
        r = std::exp(0.5 * rng.normal());
        raw_sum += r;
    }
    for (int i = 0; i < params.bs_clusters; ++i) {
        ChannelRealization::BsCluster cl;
        double cluster_power = raw[i] / raw_sum / kappa;
        cl.gain = std::sqrt(cluster_power / D);
        AnglePair bs_center = random_angle(rng);
        AnglePair in_center = random_angle(rng);
        for (int d = 0; d < D; ++d) {
            cl.bs_angles.push_back(jitter(bs_center, spread, rng));
            cl.in_angles.push_back(jitter(in_center, spread, rng));
        }
        lt.bs_clusters.push_back(std::move(cl));
    }

    for (int k = 0; k < K; ++k) {
        ChannelRealization::UserLink u;
        u.los_gain = 1.0;
        u.phi_out_los = random_angle(rng);
        std::vector<double> uraw(params.ue_clusters);
        double uraw_sum = 0.0;
        for (auto& r : uraw) {
            r = std::exp(0.5 * rng.normal());
            uraw_sum += r;
        }
        for (int j = 0; j < params.ue_clusters; ++j) {
            ChannelRealization::UserLink::Cluster cl;
            double cluster_power = uraw[j] / uraw_sum / kappa;
            cl.gain = std::sqrt(cluster_power / D);
            AnglePair out_center = random_angle(rng);
            for (int d = 0; d < D; ++d) cl.out_angles.push_back(jitter(out_center, spread, rng));
            u.clusters.push_back(std::move(cl));
        }
        lt.users.push_back(std::move(u));
    }

    // SNR at unit UE scale; the reported SNR scales exactly as scale^2, so a
    // plain bisection on the scale closes on the target
    double base = 0.0;
    {
        const int n_cal = params.snr_calibration_blocks;
        const int N = params.ris.size();
        for (int t = 0; t < n_cal; ++t) {
            ChannelRealization r = sc.realization(t);
            CMatrix G = r.bs_ris_matrix(params.bs, params.ris);
            double gf = G.squaredNorm();
            for (int k = 0; k < K; ++k) {
                CVector h = r.ris_ue_vector(params.ris, k);
                base += gf * h.squaredNorm() / (double(M) * double(N) * double(N));
            }
        }
        base /= double(params.snr_calibration_blocks) * K;
    }
    const double target = std::pow(10.0, params.target_snr_db / 10.0);
    double lo = 1e-9, hi = 1e9;
    for (int it = 0; it < 200; ++it) {
        double mid = std::sqrt(lo * hi);
        if (mid * mid * base < target)
            lo = mid;
        else
            hi = mid;
    }
    sc.ue_gain_scale_ = std::sqrt(lo * hi);
    return sc;
}

ChannelRealization Scenario::realization(int block) const {
    ChannelRealization r = longterm_;
    r.block = block;
    for (auto& u : r.users) {
        u.los_gain *= ue_gain_scale_;
        for (auto& cl : u.clusters) cl.gain *= ue_gain_scale_;
    }
    RngStream rng(params_.seed, kStreamBlockPhases + static_cast<std::uint64_t>(block));
    r.eps_bs.resize(r.bs_clusters.size());
    for (std::size_t i = 0; i < r.bs_clusters.size(); ++i) {
        r.eps_bs[i].resize(r.bs_clusters[i].bs_angles.size());
        for (auto& p : r.eps_bs[i]) p = rng.phase();
    }
    r.eps_ue.resize(r.users.size());
    for (std::size_t k = 0; k < r.users.size(); ++k) {
        r.eps_ue[k].resize(r.users[k].clusters.size());
        for (std::size_t j = 0; j < r.users[k].clusters.size(); ++j) {
            r.eps_ue[k][j].resize(r.users[k].clusters[j].out_angles.size());
            for (auto& p : r.eps_ue[k][j]) p = rng.phase();
        }
    }
    return r;
}

CMatrix ChannelRealization::bs_ris_matrix(const ArrayGeometry& bs,
                                          const ArrayGeometry& ris) const {
    CMatrix G = steering_vector(bs, phi_bs_los) * steering_vector(ris, phi_in_los).adjoint();
    for (std::size_t i = 0; i < bs_clusters.size(); ++i) {
        const auto& cl = bs_clusters[i];
        for (std::size_t d = 0; d < cl.bs_angles.size(); ++d) {
            Complex phase = std::polar(cl.gain, eps_bs[i][d]);
            G += phase * steering_vector(bs, cl.bs_angles[d]) *
                 steering_vector(ris, cl.in_angles[d]).adjoint();
        }
    }
    return G;
}

CVector ChannelRealization::ris_ue_vector(const ArrayGeometry& ris, int user) const {
    const auto& u = users[static_cast<std::size_t>(user)];
    CVector h = u.los_gain * steering_vector(ris, u.phi_out_los);
    for (std::size_t j = 0; j < u.clusters.size(); ++j) {
        const auto& cl = u.clusters[j];
        for (std::size_t d = 0; d < cl.out_angles.size(); ++d)
            h += std::polar(cl.gain, eps_ue[static_cast<std::size_t>(user)][j][d]) *
                 steering_vector(ris, cl.out_angles[d]);
    }
    return h;
}

Complex ris_quadratic_form(const ResponseModel& model, const ArrayGeometry& ris,
                           const AnglePair& in, const AnglePair& out, const StateVector& s) {
    CVector ain = steering_vector(ris, in);
    CVector aout = steering_vector(ris, out);
    CVector nu = model.eval_all(in, out);
    Complex acc = 0.0;
    for (int n = 0; n < s.size(); ++n)
        acc += std::conj(ain[n]) * nu[s[n] - 1] * aout[n];
    return acc;
}

namespace {

struct Ray {
    Complex coef;       // gain and block phase
    const AnglePair* a; // BS-side departure (BS rays) or unused
    const AnglePair* b; // RIS-side angle
};

}  // namespace

CVector cascaded_channel(const ChannelRealization& real, const ArrayGeometry& bs,
                         const ArrayGeometry& ris, const ResponseModel& model,
                         const StateVector& s, int user) {
    if (s.size() != ris.size())
        throw std::invalid_argument("cascaded_channel: state vector length != RIS size");
    const auto& u = real.users[static_cast<std::size_t>(user)];

    // flatten BS-side rays (LoS first) and UE-side rays
    std::vector<Ray> bs_rays;
    bs_rays.push_back({Complex(1.0, 0.0), &real.phi_bs_los, &real.phi_in_los});
    for (std::size_t i = 0; i < real.bs_clusters.size(); ++i) {
        const auto& cl = real.bs_clusters[i];
        for (std::size_t d = 0; d < cl.bs_angles.size(); ++d)
            bs_rays.push_back(
                {std::polar(cl.gain, real.eps_bs[i][d]), &cl.bs_angles[d], &cl.in_angles[d]});
    }
    std::vector<Ray> ue_rays;
    ue_rays.push_back({Complex(u.los_gain, 0.0), nullptr, &u.phi_out_los});
    for (std::size_t j = 0; j < u.clusters.size(); ++j) {
        const auto& cl = u.clusters[j];
        for (std::size_t d = 0; d < cl.out_angles.size(); ++d)
            ue_rays.push_back(
                {std::polar(cl.gain, real.eps_ue[static_cast<std::size_t>(user)][j][d]), nullptr,
                 &cl.out_angles[d]});
    }

    CVector h = CVector::Zero(bs.size());
    for (const auto& br : bs_rays) {
        CVector a_bs = steering_vector(bs, *br.a);
        for (const auto& ur : ue_rays) {
            Complex f = ris_quadratic_form(model, ris, *br.b, *ur.b, s);
            h += (br.coef * ur.coef * f) * a_bs;
        }
    }
    return h;
}

CMatrix cascaded_channel_matrix(const ChannelRealization& real, const ArrayGeometry& bs,
                                const ArrayGeometry& ris, const ResponseModel& model,
                                const StateVector& s) {
    CMatrix H(bs.size(), real.num_users());
    for (int k = 0; k < real.num_users(); ++k)
        H.col(k) = cascaded_channel(real, bs, ris, model, s, k);
    return H;
}

CMatrix basis_matrix(const ArrayGeometry& bs, const AnglePair& phi_bs_los) {
    const int M1 = bs.rows, M2 = bs.cols, M = M1 * M2;
    CVector a = steering_vector(bs, phi_bs_los);
    CMatrix V(M, M);
    const double norm = 1.0 / std::sqrt(double(M));
    for (int p = 0; p < M1; ++p)
        for (int q = 0; q < M2; ++q) {
            int row = p * M2 + q;
            for (int m1 = 0; m1 < M1; ++m1)
                for (int m2 = 0; m2 < M2; ++m2) {
                    int col = m1 * M2 + m2;
                    double ang = -2.0 * kPi * (double(p) * m1 / M1 + double(q) * m2 / M2);
                    V(row, col) = a[row] * std::polar(norm, ang);
                }
        }
    return V;
}

CVector approx_model_channel(const CMatrix& V, const CMatrix& A, const CMatrix& F,
                             const CVector& d) {
    if (A.cols() != F.rows() || F.cols() != d.size() || V.cols() != A.rows())
        throw std::invalid_argument("approx_model_channel: dimension mismatch");
    return V * (A * (F * d));
}

double snr_report(const Scenario& scenario, const std::vector<ChannelRealization>& blocks) {
    if (blocks.empty()) throw std::invalid_argument("snr_report: need >= 1 realization");
    const auto& p = scenario.params();
    const int M = p.bs.size(), N = p.ris.size();
    double acc = 0.0;
    long count = 0;
    for (const auto& r : blocks) {
        CMatrix G = r.bs_ris_matrix(p.bs, p.ris);
        double gf = G.squaredNorm();
        for (int k = 0; k < r.num_users(); ++k) {
            acc += gf * r.ris_ue_vector(p.ris, k).squaredNorm() /
                   (double(M) * double(N) * double(N));
            ++count;
        }
    }
    return 10.0 * std::log10(acc / double(count));
}

}  // namespace pixris
