#include "pixris/sounding.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pixris {

namespace {
constexpr std::uint64_t kStreamSoundingNoise = 0xC0000000;
constexpr char kMagic[8] = {'P', 'X', 'S', 'N', 'D', '0', '1', '\0'};
}  // namespace

SoundingPlan make_plan(RngStream& rng, int num_configs, int num_elements, int num_states,
                       PlanPolicy policy) {
    if (num_configs < 1) throw std::invalid_argument("make_plan: need B_sound >= 1");
    SoundingPlan plan;
    for (int b = 0; b < num_configs; ++b) {
        if (policy == PlanPolicy::StateSweep) {
            plan.states.push_back(
                StateVector::constant(num_elements, (b % num_states) + 1, num_states));
        } else {
            std::vector<int> s(static_cast<std::size_t>(num_elements));
            for (auto& e : s) e = rng.uniform_int(1, num_states);
            plan.states.emplace_back(std::move(s), num_states);
        }
    }
    return plan;
}

std::vector<CMatrix> sound_block(const ChannelRealization& real, const ArrayGeometry& bs,
                                 const ArrayGeometry& ris, const ResponseModel& model,
                                 const SoundingPlan& plan, double sigma_u2, RngStream& rng) {
    std::vector<CMatrix> out;
    out.reserve(plan.states.size());
    const double sd = std::sqrt(sigma_u2);
    for (const auto& s : plan.states) {
        CMatrix y = cascaded_channel_matrix(real, bs, ris, model, s);
        if (sigma_u2 > 0.0)
            for (Eigen::Index c = 0; c < y.cols(); ++c)
                for (Eigen::Index r = 0; r < y.rows(); ++r) y(r, c) += sd * rng.cnormal();
        out.push_back(std::move(y));
    }
    return out;
}

SoundingSet run_sounding(const Scenario& scenario, const ResponseModel& model,
                         const SoundingPlan& plan, int num_blocks) {
    const auto& p = scenario.params();
    SoundingSet set;
    set.num_bs = p.bs.size();
    set.num_users = p.num_users;
    set.num_blocks = num_blocks;
    set.noise_ul = p.noise_ul;
    set.plan = plan;
    set.obs.resize(static_cast<std::size_t>(num_blocks));
    for (int t = 0; t < num_blocks; ++t) {
        ChannelRealization real = scenario.realization(t);
        RngStream noise(p.seed, kStreamSoundingNoise + static_cast<std::uint64_t>(t));
        set.obs[static_cast<std::size_t>(t)] =
            sound_block(real, p.bs, p.ris, model, plan, p.noise_ul, noise);
    }
    return set;
}

void SoundingSet::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for write: " + path);
    f.write(kMagic, sizeof(kMagic));
    const int B = plan.num_configs();
    const int N = plan.states.empty() ? 0 : plan.states[0].size();
    const int L = plan.states.empty() ? 0 : plan.states[0].num_states();
    for (int v : {num_bs, num_users, num_blocks, B, N, L})
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    f.write(reinterpret_cast<const char*>(&noise_ul), sizeof(noise_ul));
    for (const auto& s : plan.states)
        for (int n = 0; n < N; ++n) {
            int e = s[static_cast<std::size_t>(n)];
            f.write(reinterpret_cast<const char*>(&e), sizeof(e));
        }
    for (const auto& block : obs)
        for (const auto& y : block)
            f.write(reinterpret_cast<const char*>(y.data()),
                    static_cast<std::streamsize>(sizeof(Complex) * y.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

SoundingSet SoundingSet::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("not a sounding archive: " + path);
    SoundingSet set;
    int B = 0, N = 0, L = 0;
    for (int* v : {&set.num_bs, &set.num_users, &set.num_blocks, &B, &N, &L})
        f.read(reinterpret_cast<char*>(v), sizeof(*v));
    f.read(reinterpret_cast<char*>(&set.noise_ul), sizeof(set.noise_ul));
    for (int b = 0; b < B; ++b) {
        std::vector<int> s(static_cast<std::size_t>(N));
        for (auto& e : s) f.read(reinterpret_cast<char*>(&e), sizeof(e));
        set.plan.states.emplace_back(std::move(s), L);
    }
    set.obs.assign(static_cast<std::size_t>(set.num_blocks),
                   std::vector<CMatrix>(static_cast<std::size_t>(B)));
    for (auto& block : set.obs)
        for (auto& y : block) {
            y.resize(set.num_bs, set.num_users);
            f.read(reinterpret_cast<char*>(y.data()),
                   static_cast<std::streamsize>(sizeof(Complex) * y.size()));
        }
    if (!f) throw std::runtime_error("truncated sounding archive: " + path);
    return set;
}

}  // namespace pixris
