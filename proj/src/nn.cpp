#include "pixris/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace pixris {

namespace {

RMatrix gauss_matrix(int rows, int cols, double sd, RngStream& rng) {
    RMatrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = sd * rng.normal();
    return m;
}

CMatrix cgauss_matrix(int rows, int cols, double sd, RngStream& rng) {
    CMatrix m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = sd * rng.cnormal();
    return m;
}

}  // namespace

NeuralWeights NeuralWeights::zeros(const NnWidths& widths) {
    NeuralWeights w;
    w.widths_ = widths;
    const int F = widths.feature;
    w.outer.resize(widths.outer_blocks);
    for (auto& ob : w.outer) {
        ob.inner.resize(widths.inner_blocks);
        for (auto& ib : ob.inner) {
            for (RMatrix* m : {&ib.wq_in, &ib.wq_out, &ib.wk_in, &ib.wk_out, &ib.wv_in,
                               &ib.wv_out})
                *m = RMatrix::Zero(F, 3);
            for (RVector* v : {&ib.bq_in, &ib.bq_out, &ib.bk_in, &ib.bk_out, &ib.bv_in,
                               &ib.bv_out})
                *v = RVector::Zero(F);
        }
        ob.w_proj = RMatrix::Zero(widths.attention, F);
        ob.b_proj = RVector::Zero(widths.attention);
    }
    int in_dim = widths.outer_blocks * widths.attention;
    for (std::size_t li = 0; li <= widths.fitting_hidden.size(); ++li) {
        int out_dim = li < widths.fitting_hidden.size() ? widths.fitting_hidden[li] : 1;
        FittingLayer layer;
        layer.w = CMatrix::Zero(out_dim, in_dim);
        layer.b = CVector::Zero(out_dim);
        w.fitting.push_back(std::move(layer));
        in_dim = out_dim;
    }
    return w;
}

NeuralWeights NeuralWeights::init(const NnWidths& widths, RngStream& rng) {
    NeuralWeights w;
    w.widths_ = widths;
    const int F = widths.feature;
    const double s_embed = 1.0 / std::sqrt(3.0);
    w.outer.resize(widths.outer_blocks);
    for (auto& ob : w.outer) {
        ob.inner.resize(widths.inner_blocks);
        for (auto& ib : ob.inner) {
            ib.wq_in = gauss_matrix(F, 3, s_embed, rng);
            ib.wq_out = gauss_matrix(F, 3, s_embed, rng);
            ib.wk_in = gauss_matrix(F, 3, s_embed, rng);
            ib.wk_out = gauss_matrix(F, 3, s_embed, rng);
            ib.wv_in = gauss_matrix(F, 3, s_embed, rng);
            ib.wv_out = gauss_matrix(F, 3, s_embed, rng);
            // out-side biases start at 1 so products begin near a pass-through
            ib.bq_in = RVector::Zero(F);
            ib.bq_out = RVector::Ones(F);
            ib.bk_in = RVector::Zero(F);
            ib.bk_out = RVector::Ones(F);
            ib.bv_in = RVector::Zero(F);
            ib.bv_out = RVector::Ones(F);
        }
        ob.w_proj = gauss_matrix(widths.attention, F, 1.0 / std::sqrt(double(F)), rng);
        ob.b_proj = RVector::Zero(widths.attention);
    }
    int in_dim = widths.outer_blocks * widths.attention;
    for (std::size_t li = 0; li <= widths.fitting_hidden.size(); ++li) {
        int out_dim = li < widths.fitting_hidden.size() ? widths.fitting_hidden[li] : 1;
        FittingLayer layer;
        layer.w = cgauss_matrix(out_dim, in_dim, 1.0 / std::sqrt(double(in_dim)), rng);
        layer.b = CVector::Zero(out_dim);
        w.fitting.push_back(std::move(layer));
        in_dim = out_dim;
    }
    return w;
}

long NeuralWeights::parameter_count() const {
    long n = 0;
    for (const auto& ob : outer) {
        for (const auto& ib : ob.inner)
            n += 6 * (ib.wq_in.size() + ib.bq_in.size());
        n += ob.w_proj.size() + ob.b_proj.size();
    }
    for (const auto& fl : fitting) n += 2 * (fl.w.size() + fl.b.size());
    return n;
}

namespace {

// flat layout: outer blocks (inner blocks: Wq_in,bq_in,Wq_out,bq_out,Wk...,Wv...;
// then w_proj,b_proj), then fitting layers (w re/im interleaved, b re/im)
template <typename Fn>
void visit_real(const NeuralWeights& w, Fn&& fn) {
    for (const auto& ob : w.outer) {
        for (const auto& ib : ob.inner) {
            for (const RMatrix* m : {&ib.wq_in, &ib.wq_out, &ib.wk_in, &ib.wk_out,
                                     &ib.wv_in, &ib.wv_out})
                fn(*m);
            for (const RVector* v : {&ib.bq_in, &ib.bq_out, &ib.bk_in, &ib.bk_out,
                                     &ib.bv_in, &ib.bv_out})
                fn(*v);
        }
        fn(ob.w_proj);
        fn(ob.b_proj);
    }
}

}  // namespace

RVector NeuralWeights::to_vector() const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(parameter_count()));
    visit_real(*this, [&](const auto& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(m(r, c));
    });
    for (const auto& fl : fitting) {
        for (Eigen::Index c = 0; c < fl.w.cols(); ++c)
            for (Eigen::Index r = 0; r < fl.w.rows(); ++r) {
                out.push_back(fl.w(r, c).real());
                out.push_back(fl.w(r, c).imag());
            }
        for (Eigen::Index r = 0; r < fl.b.size(); ++r) {
            out.push_back(fl.b[r].real());
            out.push_back(fl.b[r].imag());
        }
    }
    return Eigen::Map<const RVector>(out.data(), static_cast<Eigen::Index>(out.size()));
}

NeuralWeights NeuralWeights::from_vector(const NnWidths& widths, const RVector& v) {
    NeuralWeights w = zeros(widths);
    Eigen::Index p = 0;
    auto take_real = [&](auto& m) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = v[p++];
    };
    for (auto& ob : w.outer) {
        for (auto& ib : ob.inner) {
            take_real(ib.wq_in);
            take_real(ib.wq_out);
            take_real(ib.wk_in);
            take_real(ib.wk_out);
            take_real(ib.wv_in);
            take_real(ib.wv_out);
            take_real(ib.bq_in);
            take_real(ib.bq_out);
            take_real(ib.bk_in);
            take_real(ib.bk_out);
            take_real(ib.bv_in);
            take_real(ib.bv_out);
        }
        take_real(ob.w_proj);
        take_real(ob.b_proj);
    }
    for (auto& fl : w.fitting) {
        for (Eigen::Index c = 0; c < fl.w.cols(); ++c)
            for (Eigen::Index r = 0; r < fl.w.rows(); ++r) {
                fl.w(r, c) = Complex(v[p], v[p + 1]);
                p += 2;
            }
        for (Eigen::Index r = 0; r < fl.b.size(); ++r) {
            fl.b[r] = Complex(v[p], v[p + 1]);
            p += 2;
        }
    }
    if (p != v.size()) throw std::invalid_argument("NeuralWeights::from_vector: size mismatch");
    return w;
}

// ---------------------------------------------------------------------------
// forward / backward

namespace {

struct OuterCache {
    // per inner block, the six embeddings and the product features (F x n)
    std::vector<RMatrix> qi, qo, ki, ko, vi, vo, q, k, v;
    // per sample: attention weights (DI x DI) and attended rows (DI x F)
    std::vector<RMatrix> attn, attended;
    RMatrix pooled;  // F x n
};

struct ForwardCache {
    std::vector<OuterCache> outer;
    RMatrix stacked;             // (DO*attention) x n
    std::vector<CMatrix> pre;    // fitting pre-activations per layer
    std::vector<CMatrix> post;   // after ctanh (last layer has none)
};

CVector forward_impl(const NeuralWeights& w, const RMatrix& Pi, const RMatrix& Po,
                     ForwardCache* cache) {
    const auto& widths = w.widths();
    const int F = widths.feature;
    const int DI = widths.inner_blocks;
    const int DO = widths.outer_blocks;
    const int AT = widths.attention;
    const auto n = Pi.cols();
    const double inv_sqrt_f = 1.0 / std::sqrt(double(F));

    if (cache) cache->outer.resize(DO);
    RMatrix stacked(DO * AT, n);
    for (int d = 0; d < DO; ++d) {
        const auto& ob = w.outer[d];
        std::vector<RMatrix> q(DI), k(DI), v(DI);
        OuterCache* oc = cache ? &cache->outer[d] : nullptr;
        if (oc) {
            oc->qi.resize(DI);
            oc->qo.resize(DI);
            oc->ki.resize(DI);
            oc->ko.resize(DI);
            oc->vi.resize(DI);
            oc->vo.resize(DI);
        }
        for (int b = 0; b < DI; ++b) {
            const auto& ib = ob.inner[b];
            RMatrix qi = (ib.wq_in * Pi).colwise() + ib.bq_in;
            RMatrix qo = (ib.wq_out * Po).colwise() + ib.bq_out;
            RMatrix ki = (ib.wk_in * Pi).colwise() + ib.bk_in;
            RMatrix ko = (ib.wk_out * Po).colwise() + ib.bk_out;
            RMatrix vi = (ib.wv_in * Pi).colwise() + ib.bv_in;
            RMatrix vo = (ib.wv_out * Po).colwise() + ib.bv_out;
            q[b] = qi.cwiseProduct(qo);
            k[b] = ki.cwiseProduct(ko);
            v[b] = vi.cwiseProduct(vo);
            if (oc) {
                oc->qi[b] = std::move(qi);
                oc->qo[b] = std::move(qo);
                oc->ki[b] = std::move(ki);
                oc->ko[b] = std::move(ko);
                oc->vi[b] = std::move(vi);
                oc->vo[b] = std::move(vo);
            }
        }
        RMatrix pooled(F, n);
        if (oc) {
            oc->attn.resize(static_cast<std::size_t>(n));
            oc->attended.resize(static_cast<std::size_t>(n));
        }
        for (Eigen::Index s = 0; s < n; ++s) {
            RMatrix Q(DI, F), K(DI, F), Vm(DI, F);
            for (int b = 0; b < DI; ++b) {
                Q.row(b) = q[b].col(s).transpose();
                K.row(b) = k[b].col(s).transpose();
                Vm.row(b) = v[b].col(s).transpose();
            }
            RMatrix scores = inv_sqrt_f * (Q * K.transpose());
            RMatrix attn(DI, DI);
            for (int r = 0; r < DI; ++r) {
                RVector row = scores.row(r);
                double mx = row.maxCoeff();
                RVector e = (row.array() - mx).exp();
                attn.row(r) = (e / e.sum()).transpose();
            }
            RMatrix attended = attn * Vm;                       // DI x F
            pooled.col(s) = attended.colwise().mean().transpose();
            if (oc) {
                oc->attn[static_cast<std::size_t>(s)] = std::move(attn);
                oc->attended[static_cast<std::size_t>(s)] = std::move(attended);
            }
        }
        stacked.middleRows(d * AT, AT) = (ob.w_proj * pooled).colwise() + ob.b_proj;
        if (oc) {
            oc->q = std::move(q);
            oc->k = std::move(k);
            oc->v = std::move(v);
            oc->pooled = std::move(pooled);
        }
    }

    CMatrix act = stacked.cast<Complex>();
    if (cache) {
        cache->stacked = stacked;
        cache->pre.clear();
        cache->post.clear();
    }
    const auto layers = w.fitting.size();
    for (std::size_t li = 0; li < layers; ++li) {
        CMatrix z = (w.fitting[li].w * act).colwise() + w.fitting[li].b;
        if (cache) cache->pre.push_back(z);
        if (li + 1 < layers) {
            act = z.real().array().tanh().cast<Complex>() +
                  Complex(0, 1) * z.imag().array().tanh().cast<Complex>();
            if (cache) cache->post.push_back(act);
        } else {
            act = z;
        }
    }
    return act.row(0).transpose();
}

struct Gradients {
    NeuralWeights g;  // same shapes, holds gradient values
};

// gout: per-sample complex "real-pair" gradient dL/dRe + i*dL/dIm of the output
NeuralWeights backward_impl(const NeuralWeights& w, const RMatrix& Pi, const RMatrix& Po,
                            const ForwardCache& cache, const CVector& gout) {
    const auto& widths = w.widths();
    const int F = widths.feature;
    const int DI = widths.inner_blocks;
    const int DO = widths.outer_blocks;
    const int AT = widths.attention;
    const auto n = Pi.cols();
    const double inv_sqrt_f = 1.0 / std::sqrt(double(F));

    NeuralWeights g = NeuralWeights::zeros(widths);

    // fitting stack backward
    const auto layers = w.fitting.size();
    const CMatrix stacked_c = cache.stacked.cast<Complex>();
    CMatrix gz(1, n);
    gz.row(0) = gout.transpose();
    for (std::size_t li = layers; li-- > 0;) {
        const CMatrix& input = (li == 0) ? stacked_c : cache.post[li - 1];
        g.fitting[li].w += gz * input.adjoint();
        g.fitting[li].b += gz.rowwise().sum();
        CMatrix gin = w.fitting[li].w.adjoint() * gz;
        if (li == 0) {
            // real input: keep the real part of the pair gradient
            RMatrix gstacked = gin.real();
            // outer blocks backward
            for (int d = 0; d < DO; ++d) {
                const auto& ob = w.outer[d];
                const auto& oc = cache.outer[d];
                RMatrix ga = gstacked.middleRows(d * AT, AT);
                g.outer[d].w_proj += ga * oc.pooled.transpose();
                g.outer[d].b_proj += ga.rowwise().sum();
                RMatrix gpooled = ob.w_proj.transpose() * ga;  // F x n
                std::vector<RMatrix> gq(DI, RMatrix::Zero(F, n));
                std::vector<RMatrix> gk(DI, RMatrix::Zero(F, n));
                std::vector<RMatrix> gv(DI, RMatrix::Zero(F, n));
                for (Eigen::Index s = 0; s < n; ++s) {
                    const RMatrix& attn = oc.attn[static_cast<std::size_t>(s)];
                    RMatrix Q(DI, F), K(DI, F), Vm(DI, F);
                    for (int b = 0; b < DI; ++b) {
                        Q.row(b) = oc.q[b].col(s).transpose();
                        K.row(b) = oc.k[b].col(s).transpose();
                        Vm.row(b) = oc.v[b].col(s).transpose();
                    }
                    // pooled = mean of attended rows
                    RMatrix gattended =
                        (RVector::Ones(DI) / double(DI)) * gpooled.col(s).transpose();
                    RMatrix gattn = gattended * Vm.transpose();        // DI x DI
                    RMatrix gV = attn.transpose() * gattended;         // DI x F
                    RMatrix gscores(DI, DI);
                    for (int r = 0; r < DI; ++r) {
                        RVector a = attn.row(r).transpose();
                        RVector gr = gattn.row(r).transpose();
                        double dot = a.dot(gr);
                        gscores.row(r) = (a.array() * (gr.array() - dot)).transpose();
                    }
                    gscores *= inv_sqrt_f;
                    RMatrix gQ = gscores * K;
                    RMatrix gK = gscores.transpose() * Q;
                    for (int b = 0; b < DI; ++b) {
                        gq[b].col(s) = gQ.row(b).transpose();
                        gk[b].col(s) = gK.row(b).transpose();
                        gv[b].col(s) = gV.row(b).transpose();
                    }
                }
                for (int b = 0; b < DI; ++b) {
                    const auto& ibw = ob.inner[b];
                    auto& ibg = g.outer[d].inner[b];
                    RMatrix gqi = gq[b].cwiseProduct(oc.qo[b]);
                    RMatrix gqo = gq[b].cwiseProduct(oc.qi[b]);
                    RMatrix gki = gk[b].cwiseProduct(oc.ko[b]);
                    RMatrix gko = gk[b].cwiseProduct(oc.ki[b]);
                    RMatrix gvi = gv[b].cwiseProduct(oc.vo[b]);
                    RMatrix gvo = gv[b].cwiseProduct(oc.vi[b]);
                    (void)ibw;
                    ibg.wq_in += gqi * Pi.transpose();
                    ibg.bq_in += gqi.rowwise().sum();
                    ibg.wq_out += gqo * Po.transpose();
                    ibg.bq_out += gqo.rowwise().sum();
                    ibg.wk_in += gki * Pi.transpose();
                    ibg.bk_in += gki.rowwise().sum();
                    ibg.wk_out += gko * Po.transpose();
                    ibg.bk_out += gko.rowwise().sum();
                    ibg.wv_in += gvi * Pi.transpose();
                    ibg.bv_in += gvi.rowwise().sum();
                    ibg.wv_out += gvo * Po.transpose();
                    ibg.bv_out += gvo.rowwise().sum();
                }
            }
        } else {
            // through CTanh: tanh'(x) = 1 - tanh(x)^2, re and im independently
            const CMatrix& t = cache.post[li - 1];
            gz = (gin.real().array() * (1.0 - t.real().array().square())).cast<Complex>() +
                 Complex(0, 1) *
                     (gin.imag().array() * (1.0 - t.imag().array().square())).cast<Complex>();
        }
    }
    return g;
}

}  // namespace

Complex nn_forward(const NeuralWeights& w, const PreprocessedAngle& psi_in,
                   const PreprocessedAngle& psi_out) {
    RMatrix Pi(3, 1), Po(3, 1);
    Pi << psi_in.cos_az, psi_in.sin_az, psi_in.cos_el;
    Po << psi_out.cos_az, psi_out.sin_az, psi_out.cos_el;
    return forward_impl(w, Pi, Po, nullptr)[0];
}

CVector nn_forward_batch(const NeuralWeights& w, const RMatrix& psi_in, const RMatrix& psi_out) {
    return forward_impl(w, psi_in, psi_out, nullptr);
}

double nn_loss_grad(const NeuralWeights& w, const NnBatch& batch, RVector* grad) {
    const auto n = batch.psi_in.cols();
    if (batch.psi_out.cols() != n || batch.target.size() != n || batch.weight.size() != n)
        throw std::invalid_argument("nn_loss_grad: inconsistent batch sizes");
    ForwardCache cache;
    CVector out = forward_impl(w, batch.psi_in, batch.psi_out, grad ? &cache : nullptr);
    CVector err = out - batch.target;
    double loss = 0.0;
    for (Eigen::Index s = 0; s < n; ++s) loss += batch.weight[s] * std::norm(err[s]);
    loss /= double(n);
    if (grad) {
        CVector gout(n);
        for (Eigen::Index s = 0; s < n; ++s) gout[s] = 2.0 * batch.weight[s] * err[s] / double(n);
        NeuralWeights g = backward_impl(w, batch.psi_in, batch.psi_out, cache, gout);
        *grad = g.to_vector();
    }
    return loss;
}

// ---------------------------------------------------------------------------
// training

namespace {

void sample_dataset(const ResponseModel& truth, int state, int count, double clip,
                    RngStream& rng, NnBatch& out) {
    out.psi_in.resize(3, count);
    out.psi_out.resize(3, count);
    out.target.resize(count);
    out.weight.resize(count);
    for (int s = 0; s < count; ++s) {
        AnglePair in = random_angle(rng), outa = random_angle(rng);
        PreprocessedAngle pi = preprocess(in), po = preprocess(outa);
        out.psi_in.col(s) << pi.cos_az, pi.sin_az, pi.cos_el;
        out.psi_out.col(s) << po.cos_az, po.sin_az, po.cos_el;
        out.target[s] = truth.eval(in, outa, state);
        double mag = std::max(std::abs(out.target[s]), clip);
        out.weight[s] = 1.0 / (mag * mag);
    }
}

double val_nmse(const NeuralWeights& w, const NnBatch& val) {
    CVector pred = nn_forward_batch(w, val.psi_in, val.psi_out);
    double num = 0.0, den = 0.0;
    for (Eigen::Index s = 0; s < val.target.size(); ++s) {
        num += std::norm(pred[s] - val.target[s]);
        den += std::norm(val.target[s]);
    }
    return num / den;
}

}  // namespace

NnTrainResult nn_train(const ResponseModel& truth, int state, const NnWidths& widths,
                       const NnTrainConfig& cfg) {
    if (state < 1 || state > truth.num_states())
        throw std::invalid_argument("nn_train: state out of range");
    RngStream data_rng(cfg.seed, 0xDA7Au);
    RngStream init_rng(cfg.seed, 0x1217u);
    RngStream shuffle_rng(cfg.seed, 0x5F1Eu);

    NnBatch train, val;
    sample_dataset(truth, state, cfg.train_samples, cfg.weight_clip, data_rng, train);
    sample_dataset(truth, state, cfg.val_samples, cfg.weight_clip, data_rng, val);

    NeuralWeights w = NeuralWeights::init(widths, init_rng);
    RVector params = w.to_vector();
    AdamState adam = AdamState::create(params.size(), cfg.learning_rate);

    NnTrainResult result;
    result.best_nmse = std::numeric_limits<double>::infinity();
    int since_best = 0;
    std::vector<int> order(static_cast<std::size_t>(cfg.train_samples));
    std::iota(order.begin(), order.end(), 0);

    NnBatch mb;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the dedicated stream
        for (int i = cfg.train_samples - 1; i > 0; --i)
            std::swap(order[static_cast<std::size_t>(i)],
                      order[static_cast<std::size_t>(shuffle_rng.uniform_int(0, i))]);
        for (int start = 0; start < cfg.train_samples; start += cfg.batch_size) {
            int nb = std::min(cfg.batch_size, cfg.train_samples - start);
            mb.psi_in.resize(3, nb);
            mb.psi_out.resize(3, nb);
            mb.target.resize(nb);
            mb.weight.resize(nb);
            for (int i = 0; i < nb; ++i) {
                int src = order[static_cast<std::size_t>(start + i)];
                mb.psi_in.col(i) = train.psi_in.col(src);
                mb.psi_out.col(i) = train.psi_out.col(src);
                mb.target[i] = train.target[src];
                mb.weight[i] = train.weight[src];
            }
            RVector grad;
            double loss = nn_loss_grad(w, mb, &grad);
            if (!std::isfinite(loss))
                throw std::runtime_error("nn_train: loss diverged (non-finite) at epoch " +
                                         std::to_string(epoch + 1) + ", state " +
                                         std::to_string(state));
            params = adam_step(params, grad, adam);
            w = NeuralWeights::from_vector(widths, params);
        }
        double nm = val_nmse(w, val);
        result.val_nmse_curve.push_back(nm);
        result.epochs_run = epoch + 1;
        if (cfg.verbose)
            std::fprintf(stderr, "nn_train state %d epoch %d val nmse %.4e\n", state, epoch + 1,
                         nm);
        if (nm < result.best_nmse * (1.0 - cfg.plateau_tol)) {
            since_best = 0;
        } else {
            ++since_best;
        }
        if (nm < result.best_nmse) {
            result.best_nmse = nm;
            result.weights = w;
        }
        if (cfg.target_nmse > 0.0 && nm < cfg.target_nmse) break;
        if (since_best >= cfg.plateau_epochs) break;
    }
    return result;
}

// ---------------------------------------------------------------------------
// serialization

namespace {

nlohmann::json rmatrix_to_json(const RMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

RMatrix rmatrix_from_json(const nlohmann::json& j) {
    auto rows = static_cast<Eigen::Index>(j.size());
    auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    RMatrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = j[r][c].get<double>();
    return m;
}

nlohmann::json cmat_to_json(const CMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            row.push_back(m(r, c).real());
            row.push_back(m(r, c).imag());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

CMatrix cmat_from_json(const nlohmann::json& j) {
    auto rows = static_cast<Eigen::Index>(j.size());
    auto cols = rows ? static_cast<Eigen::Index>(j[0].size() / 2) : 0;
    CMatrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = Complex(j[r][2 * c].get<double>(), j[r][2 * c + 1].get<double>());
    return m;
}

}  // namespace

nlohmann::json NeuralWeights::to_json() const {
    nlohmann::json j;
    j["widths"] = {{"feature", widths_.feature},
                   {"attention", widths_.attention},
                   {"fitting_hidden", widths_.fitting_hidden},
                   {"inner_blocks", widths_.inner_blocks},
                   {"outer_blocks", widths_.outer_blocks}};
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& ob : outer) {
        nlohmann::json jb;
        nlohmann::json inner = nlohmann::json::array();
        for (const auto& ib : ob.inner)
            inner.push_back({{"wq_in", rmatrix_to_json(ib.wq_in)},
                             {"bq_in", rmatrix_to_json(ib.bq_in)},
                             {"wq_out", rmatrix_to_json(ib.wq_out)},
                             {"bq_out", rmatrix_to_json(ib.bq_out)},
                             {"wk_in", rmatrix_to_json(ib.wk_in)},
                             {"bk_in", rmatrix_to_json(ib.bk_in)},
                             {"wk_out", rmatrix_to_json(ib.wk_out)},
                             {"bk_out", rmatrix_to_json(ib.bk_out)},
                             {"wv_in", rmatrix_to_json(ib.wv_in)},
                             {"bv_in", rmatrix_to_json(ib.bv_in)},
                             {"wv_out", rmatrix_to_json(ib.wv_out)},
                             {"bv_out", rmatrix_to_json(ib.bv_out)}});
        jb["inner"] = std::move(inner);
        jb["w_proj"] = rmatrix_to_json(ob.w_proj);
        jb["b_proj"] = rmatrix_to_json(ob.b_proj);
        blocks.push_back(std::move(jb));
    }
    j["outer"] = std::move(blocks);
    nlohmann::json fit = nlohmann::json::array();
    for (const auto& fl : fitting)
        fit.push_back({{"w", cmat_to_json(fl.w)}, {"b", cmat_to_json(fl.b)}});
    j["fitting"] = std::move(fit);
    return j;
}

NeuralWeights NeuralWeights::from_json(const nlohmann::json& j) {
    NeuralWeights w;
    const auto& jw = j.at("widths");
    w.widths_.feature = jw.at("feature").get<int>();
    w.widths_.attention = jw.at("attention").get<int>();
    w.widths_.fitting_hidden = jw.at("fitting_hidden").get<std::vector<int>>();
    w.widths_.inner_blocks = jw.at("inner_blocks").get<int>();
    w.widths_.outer_blocks = jw.at("outer_blocks").get<int>();
    auto vec_from = [](const nlohmann::json& m) {
        RMatrix r = rmatrix_from_json(m);
        RVector v = r.col(0);
        return v;
    };
    for (const auto& jb : j.at("outer")) {
        NeuralWeights::OuterBlock ob;
        for (const auto& ji : jb.at("inner")) {
            NeuralWeights::InnerBlock ib;
            ib.wq_in = rmatrix_from_json(ji.at("wq_in"));
            ib.bq_in = vec_from(ji.at("bq_in"));
            ib.wq_out = rmatrix_from_json(ji.at("wq_out"));
            ib.bq_out = vec_from(ji.at("bq_out"));
            ib.wk_in = rmatrix_from_json(ji.at("wk_in"));
            ib.bk_in = vec_from(ji.at("bk_in"));
            ib.wk_out = rmatrix_from_json(ji.at("wk_out"));
            ib.bk_out = vec_from(ji.at("bk_out"));
            ib.wv_in = rmatrix_from_json(ji.at("wv_in"));
            ib.bv_in = vec_from(ji.at("bv_in"));
            ib.wv_out = rmatrix_from_json(ji.at("wv_out"));
            ib.bv_out = vec_from(ji.at("bv_out"));
            ob.inner.push_back(std::move(ib));
        }
        ob.w_proj = rmatrix_from_json(jb.at("w_proj"));
        ob.b_proj = vec_from(jb.at("b_proj"));
        w.outer.push_back(std::move(ob));
    }
    for (const auto& jf : j.at("fitting")) {
        NeuralWeights::FittingLayer fl;
        fl.w = cmat_from_json(jf.at("w"));
        CMatrix b = cmat_from_json(jf.at("b"));
        fl.b = b.col(0);
        w.fitting.push_back(std::move(fl));
    }
    return w;
}

NeuralModel::NeuralModel(std::vector<NeuralWeights> per_state)
    : per_state_(std::move(per_state)) {}

Complex NeuralModel::eval(const AnglePair& in, const AnglePair& out, int state) const {
    if (state < 1 || state > num_states())
        throw std::invalid_argument("NeuralModel::eval: state out of range");
    return nn_forward(per_state_[state - 1], preprocess(in), preprocess(out));
}

void NeuralModel::set_state(int state, NeuralWeights w) {
    if (state < 1) throw std::invalid_argument("NeuralModel::set_state: state must be >= 1");
    if (static_cast<std::size_t>(state) > per_state_.size())
        per_state_.resize(static_cast<std::size_t>(state));
    per_state_[state - 1] = std::move(w);
}

nlohmann::json NeuralModel::to_json() const {
    nlohmann::json j;
    j["kind"] = kind();
    j["version"] = 1;
    j["num_states"] = num_states();
    nlohmann::json states = nlohmann::json::array();
    for (const auto& w : per_state_) states.push_back(w.to_json());
    j["states"] = std::move(states);
    return j;
}

NeuralModel NeuralModel::from_json(const nlohmann::json& j) {
    std::vector<NeuralWeights> per_state;
    for (const auto& js : j.at("states")) per_state.push_back(NeuralWeights::from_json(js));
    return NeuralModel(std::move(per_state));
}

}  // namespace pixris
