#pragma once

#include <string>
#include <vector>

#include "pixris/numerics.hpp"
#include "pixris/response.hpp"

#include <json.hpp>

namespace pixris {

struct NnWidths {
    int feature = 8;                       // embedding output / product feature width
    int attention = 8;                     // attention projection output width
    std::vector<int> fitting_hidden = {16};  // complex fitting stack, input 4*attention, output 1
    int inner_blocks = 4;
    int outer_blocks = 4;
};

// Weights for one RIS state. Two-tier structure: outer_blocks parallel copies
// of (inner product-feature blocks + attention pooling), then a complex
// fully-connected fitting stack with CTanh (tanh on re and im separately).
class NeuralWeights {
public:
    struct InnerBlock {
        // q/k/v each from a product of separate in/out embeddings (3 -> feature)
        RMatrix wq_in, wq_out, wk_in, wk_out, wv_in, wv_out;
        RVector bq_in, bq_out, bk_in, bk_out, bv_in, bv_out;
    };
    struct OuterBlock {
        std::vector<InnerBlock> inner;
        RMatrix w_proj;  // attention x feature
        RVector b_proj;
    };
    struct FittingLayer {
        CMatrix w;
        CVector b;
    };

    NeuralWeights() = default;
    static NeuralWeights init(const NnWidths& widths, RngStream& rng);
    static NeuralWeights zeros(const NnWidths& widths);

    const NnWidths& widths() const { return widths_; }
    long parameter_count() const;  // real scalars; complex entries count twice

    RVector to_vector() const;
    static NeuralWeights from_vector(const NnWidths& widths, const RVector& v);

    nlohmann::json to_json() const;
    static NeuralWeights from_json(const nlohmann::json& j);

    std::vector<OuterBlock> outer;
    std::vector<FittingLayer> fitting;

private:
    NnWidths widths_;
};

Complex nn_forward(const NeuralWeights& w, const PreprocessedAngle& psi_in,
                   const PreprocessedAngle& psi_out);

// Batch of preprocessed angle pairs; psi matrices are 3 x n.
struct NnBatch {
    RMatrix psi_in;
    RMatrix psi_out;
    CVector target;
    RVector weight;  // per-sample 1/max(|nu|, clip)^2
};

// P(B) batch loss (mean weighted squared error) and, when grad != nullptr,
// its gradient in the to_vector() layout.
double nn_loss_grad(const NeuralWeights& w, const NnBatch& batch, RVector* grad);

// Forward pass on a batch; outputs one complex value per sample.
CVector nn_forward_batch(const NeuralWeights& w, const RMatrix& psi_in, const RMatrix& psi_out);

struct NnTrainConfig {
    int train_samples = 100000;
    int val_samples = 10000;
    int epochs = 200;
    int batch_size = 2048;
    double learning_rate = 1e-4;
    double weight_clip = 1e-3;
    int plateau_epochs = 30;      // stop after this many epochs without val improvement
    double plateau_tol = 1e-3;    // relative improvement that resets the plateau clock
    double target_nmse = 0.0;     // stop early once val NMSE falls below (0 = never)
    std::uint64_t seed = 1;
    bool verbose = false;
};

struct NnTrainResult {
    NeuralWeights weights;              // best-validation weights
    std::vector<double> val_nmse_curve;  // one entry per epoch
    double best_nmse = 0.0;
    int epochs_run = 0;
};

// Train one state against a response via Adam on P(B). Throws on divergence
// (non-finite loss) with the offending epoch in the message.
NnTrainResult nn_train(const ResponseModel& truth, int state, const NnWidths& widths,
                       const NnTrainConfig& cfg);

// Response model backed by one trained network per state.
class NeuralModel : public ResponseModel {
public:
    NeuralModel() = default;
    explicit NeuralModel(std::vector<NeuralWeights> per_state);

    Complex eval(const AnglePair& in, const AnglePair& out, int state) const override;
    int num_states() const override { return static_cast<int>(per_state_.size()); }
    std::string kind() const override { return "neural"; }
    nlohmann::json to_json() const override;
    static NeuralModel from_json(const nlohmann::json& j);

    const NeuralWeights& state_weights(int state) const { return per_state_[state - 1]; }
    void set_state(int state, NeuralWeights w);

private:
    std::vector<NeuralWeights> per_state_;
};

}  // namespace pixris
