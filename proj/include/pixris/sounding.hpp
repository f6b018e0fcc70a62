#pragma once

#include <string>
#include <vector>

#include "pixris/channel.hpp"

namespace pixris {

enum class PlanPolicy { UniformRandom, StateSweep };

// The B_sound RIS configurations used during the sounding phase; fixed
// across blocks.
struct SoundingPlan {
    std::vector<StateVector> states;

    int num_configs() const { return static_cast<int>(states.size()); }
};

SoundingPlan make_plan(RngStream& rng, int num_configs, int num_elements, int num_states,
                       PlanPolicy policy);

// Despread pilot observations Y_{u,t,b} = H_t(s_b) + Z, one M x K matrix per
// (block, configuration). The orthogonal-pilot stage is exact after
// despreading, so it is simulated at this level.
struct SoundingSet {
    int num_bs = 0;       // M
    int num_users = 0;    // K
    int num_blocks = 0;   // T
    double noise_ul = 0;  // sigma_u^2
    SoundingPlan plan;
    std::vector<std::vector<CMatrix>> obs;  // [t][b], M x K

    const CMatrix& at(int t, int b) const { return obs[t][b]; }

    void save(const std::string& path) const;
    static SoundingSet load(const std::string& path);
};

// Observations for one block; noise drawn from the given stream.
std::vector<CMatrix> sound_block(const ChannelRealization& real, const ArrayGeometry& bs,
                                 const ArrayGeometry& ris, const ResponseModel& model,
                                 const SoundingPlan& plan, double sigma_u2, RngStream& rng);

// Full sounding run over blocks 0..T-1 of a scenario. Noise streams are keyed
// by block, so any single block regenerates bit-exactly on its own.
SoundingSet run_sounding(const Scenario& scenario, const ResponseModel& model,
                         const SoundingPlan& plan, int num_blocks);

}  // namespace pixris
