#pragma once

#include "pixris/channel.hpp"

namespace pixris::testing {

// angle-independent response stub; every state returns the same constant
class ConstantResponse : public ResponseModel {
public:
    ConstantResponse(Complex value, int states) : value_(value), states_(states) {}
    Complex eval(const AnglePair&, const AnglePair&, int state) const override {
        if (state < 1 || state > states_) throw std::invalid_argument("state out of range");
        return value_;
    }
    int num_states() const override { return states_; }
    std::string kind() const override { return "constant"; }
    nlohmann::json to_json() const override { return {{"kind", "constant"}}; }

private:
    Complex value_;
    int states_;
};

// independent reimplementation of the cascaded double ray sum, raw loops
inline CVector cascaded_oracle(const ChannelRealization& real, const ArrayGeometry& bs,
                               const ArrayGeometry& ris, const ResponseModel& model,
                               const StateVector& s, int user) {
    struct Ray {
        Complex coef;
        AnglePair bs_angle, ris_angle;
    };
    std::vector<Ray> brs{{Complex(1, 0), real.phi_bs_los, real.phi_in_los}};
    for (std::size_t i = 0; i < real.bs_clusters.size(); ++i)
        for (std::size_t d = 0; d < real.bs_clusters[i].bs_angles.size(); ++d)
            brs.push_back({std::polar(real.bs_clusters[i].gain, real.eps_bs[i][d]),
                           real.bs_clusters[i].bs_angles[d], real.bs_clusters[i].in_angles[d]});
    const auto& u = real.users[static_cast<std::size_t>(user)];
    std::vector<Ray> urs{{Complex(u.los_gain, 0), AnglePair{}, u.phi_out_los}};
    for (std::size_t j = 0; j < u.clusters.size(); ++j)
        for (std::size_t d = 0; d < u.clusters[j].out_angles.size(); ++d)
            urs.push_back({std::polar(u.clusters[j].gain,
                                      real.eps_ue[static_cast<std::size_t>(user)][j][d]),
                           AnglePair{}, u.clusters[j].out_angles[d]});
    CVector h = CVector::Zero(bs.size());
    for (const auto& br : brs) {
        CVector abs_ = steering_vector(bs, br.bs_angle);
        CVector ain = steering_vector(ris, br.ris_angle);
        for (const auto& ur : urs) {
            CVector aout = steering_vector(ris, ur.ris_angle);
            Complex q = 0.0;
            for (int n = 0; n < s.size(); ++n)
                q += std::conj(ain[n]) *
                     model.eval(br.ris_angle, ur.ris_angle, s[static_cast<std::size_t>(n)]) *
                     aout[n];
            h += (br.coef * ur.coef * q) * abs_;
        }
    }
    return h;
}

}  // namespace pixris::testing
