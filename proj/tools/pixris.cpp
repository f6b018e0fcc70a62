#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "pixris/harness.hpp"

namespace fs = std::filesystem;
using namespace pixris;

namespace {

std::string default_outdir() {
    const char* env = std::getenv("PIXRIS_OUTDIR");
    return env && *env ? env : ".";
}

ExperimentConfig build_config(const std::string& config_path, int setup,
                              const std::vector<std::string>& overrides) {
    ExperimentConfig cfg =
        config_path.empty() ? ExperimentConfig::for_setup(setup) : load_config(config_path);
    for (const auto& ov : overrides) {
        auto eq = ov.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got: " + ov);
        apply_override(cfg, ov.substr(0, eq), ov.substr(eq + 1));
    }
    return cfg;
}

int write_results(const std::vector<ResultRow>& rows, const ExperimentConfig& cfg,
                  const std::string& out, const std::string& format) {
    fs::path dir = cfg.output_dir.empty() ? default_outdir() : cfg.output_dir;
    fs::create_directories(dir);
    fs::path path = fs::path(out).is_absolute() ? fs::path(out) : dir / out;
    emit(rows, path.string(), format);
    std::ofstream snap(dir / (path.stem().string() + ".config.ini"));
    snap << to_ini(cfg);
    int errors = 0;
    for (const auto& r : rows)
        if (!r.error.empty()) ++errors;
    std::cout << summarize(rows);
    std::cout << "wrote " << rows.size() << " rows to " << path.string() << " (" << errors
              << " errors)\n";
    return errors == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"pixel-RIS channel estimation and passive beamforming simulator"};
    app.require_subcommand(1);

    // gen-response
    auto* gen = app.add_subcommand("gen-response", "generate a synthetic ground-truth response");
    std::uint64_t gen_seed = 7;
    int gen_states = 16, gen_degree = 3;
    bool gen_hard = false;
    std::string gen_out = "truth.json";
    gen->add_option("--seed", gen_seed);
    gen->add_option("--states", gen_states);
    gen->add_option("--degree", gen_degree);
    gen->add_flag("--hard", gen_hard, "add a higher-degree residual term");
    gen->add_option("--out", gen_out);

    // fit-kernel
    auto* fit = app.add_subcommand("fit-kernel", "fit the product-Legendre-kernel model");
    std::string fit_model = "truth.json", fit_out = "kernel.json", fit_method = "ls";
    int fit_state = 0, fit_degree = 3, fit_samples = 4096;
    fit->add_option("--model", fit_model, "truth model file");
    fit->add_option("--state", fit_state, "state to fit (0 = all)");
    fit->add_option("--degree", fit_degree);
    fit->add_option("--samples", fit_samples);
    fit->add_option("--method", fit_method)->check(CLI::IsMember({"ls", "adam"}));
    fit->add_option("--out", fit_out);

    // train-nn
    auto* tnn = app.add_subcommand("train-nn", "train the neural response approximator");
    std::string tnn_model = "truth.json", tnn_out = "nn.json";
    int tnn_state = 1, tnn_epochs = 200, tnn_batch = 2048, tnn_samples = 100000;
    double tnn_lr = 1e-4;
    bool tnn_verbose = false;
    tnn->add_option("--model", tnn_model);
    tnn->add_option("--state", tnn_state, "state to train (0 = all)");
    tnn->add_option("--epochs", tnn_epochs);
    tnn->add_option("--batch", tnn_batch);
    tnn->add_option("--lr", tnn_lr);
    tnn->add_option("--samples", tnn_samples);
    tnn->add_flag("--verbose", tnn_verbose);
    tnn->add_option("--out", tnn_out);

    // eval-nmse
    auto* ev = app.add_subcommand("eval-nmse", "NMSE of an approximation against a truth model");
    std::string ev_model, ev_truth = "truth.json";
    int ev_samples = 20000;
    std::uint64_t ev_seed = 99;
    ev->add_option("--model", ev_model)->required();
    ev->add_option("--truth", ev_truth);
    ev->add_option("--samples", ev_samples);
    ev->add_option("--seed", ev_seed);

    // sweeps
    std::string cfg_path, sweep_out = "results.csv", sweep_format = "csv", methods_csv =
        "proposed,random,best-sounding,group-opt,phased-array";
    int cfg_setup = 1;
    std::vector<std::string> overrides;
    auto* nmse_cmd = app.add_subcommand("nmse-sweep", "prediction NMSE vs SNR");
    auto* rate_cmd = app.add_subcommand("rate-sweep", "achievable sum rate vs SNR per method");
    for (auto* c : {nmse_cmd, rate_cmd}) {
        c->add_option("--config", cfg_path, "INI config file");
        c->add_option("--setup", cfg_setup, "1 or 2 (ignored with --config)");
        c->add_option("--set", overrides, "override config entries, key=value")
            ->take_all();
        c->add_option("--out", sweep_out);
        c->add_option("--format", sweep_format)->check(CLI::IsMember({"csv", "jsonl"}));
    }
    rate_cmd->add_option("--methods", methods_csv, "comma-separated method list");

    // beamform
    auto* bf = app.add_subcommand("beamform", "choose a RIS state for one channel drop");
    std::string bf_method = "proposed";
    std::uint64_t bf_seed = 1;
    int bf_restarts = 3, bf_iters = 500;
    double bf_snr = 10.0;
    bf->add_option("--config", cfg_path);
    bf->add_option("--setup", cfg_setup);
    bf->add_option("--set", overrides, "override config entries")->take_all();
    bf->add_option("--method", bf_method)
        ->check(CLI::IsMember({"proposed", "random", "best-sounding", "group-opt",
                               "phased-array", "brute-force"}));
    bf->add_option("--seed", bf_seed);
    bf->add_option("--restarts", bf_restarts);
    bf->add_option("--iters", bf_iters);
    bf->add_option("--snr", bf_snr, "target SNR dB");

    // report
    auto* rep = app.add_subcommand("report", "aggregate a results CSV");
    std::string rep_in;
    rep->add_option("--in", rep_in)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            SyntheticTruth::Options o;
            o.num_states = gen_states;
            o.degree = gen_degree;
            o.hard_mode = gen_hard;
            SyntheticTruth t = SyntheticTruth::make(gen_seed, o);
            save_response_model(t, gen_out);
            std::cout << "wrote " << gen_out << " (L=" << t.num_states()
                      << ", degree=" << t.degree() << ", mean power=" << t.mean_power()
                      << ")\n";
            return 0;
        }
        if (*fit) {
            auto truth = load_response_model(fit_model);
            RngStream rng(2024, 0xF17);
            std::vector<CMatrix> weights;
            FitMethod method = fit_method == "adam" ? FitMethod::Adam : FitMethod::ClosedFormLS;
            int lo = fit_state == 0 ? 1 : fit_state;
            int hi = fit_state == 0 ? truth->num_states() : fit_state;
            std::vector<CMatrix> all(static_cast<std::size_t>(truth->num_states()),
                                     CMatrix::Zero(kernel_count(fit_degree), kernel_count(fit_degree)));
            for (int l = lo; l <= hi; ++l) {
                KernelFitResult r = fit_kernel(*truth, l, fit_degree, fit_samples, method, rng);
                std::cout << "state " << l << ": held-out NMSE " << r.nmse << "\n";
                all[static_cast<std::size_t>(l - 1)] = r.weights;
            }
            KernelModel km(fit_degree, std::move(all));
            save_response_model(km, fit_out);
            std::cout << "wrote " << fit_out << " (" << km.parameters_per_state()
                      << " complex parameters per state)\n";
            return 0;
        }
        if (*tnn) {
            auto truth = load_response_model(tnn_model);
            NnWidths widths;
            NnTrainConfig cfg;
            cfg.epochs = tnn_epochs;
            cfg.batch_size = tnn_batch;
            cfg.learning_rate = tnn_lr;
            cfg.train_samples = tnn_samples;
            cfg.val_samples = std::max(1000, tnn_samples / 10);
            cfg.verbose = tnn_verbose;
            NeuralModel nm;
            int lo = tnn_state == 0 ? 1 : tnn_state;
            int hi = tnn_state == 0 ? truth->num_states() : tnn_state;
            for (int l = 1; l <= truth->num_states(); ++l)
                nm.set_state(l, NeuralWeights::zeros(widths));
            for (int l = lo; l <= hi; ++l) {
                cfg.seed = 1000 + static_cast<std::uint64_t>(l);
                NnTrainResult r = nn_train(*truth, l, widths, cfg);
                std::cout << "state " << l << ": best val NMSE " << r.best_nmse << " after "
                          << r.epochs_run << " epochs\n";
                nm.set_state(l, r.weights);
            }
            save_response_model(nm, tnn_out);
            std::cout << "wrote " << tnn_out << "\n";
            return 0;
        }
        if (*ev) {
            auto model = load_response_model(ev_model);
            auto truth = load_response_model(ev_truth);
            RngStream rng(ev_seed, 0xE7);
            double num = 0, den = 0;
            for (int i = 0; i < ev_samples; ++i) {
                AnglePair in = random_angle(rng), out = random_angle(rng);
                int l = 1 + (i % truth->num_states());
                Complex p = model->eval(in, out, l);
                Complex t = truth->eval(in, out, l);
                num += std::norm(p - t);
                den += std::norm(t);
            }
            std::cout << "NMSE " << num / den << " over " << ev_samples << " samples\n";
            return 0;
        }
        if (*nmse_cmd) {
            ExperimentConfig cfg = build_config(cfg_path, cfg_setup, overrides);
            return write_results(run_nmse_sweep(cfg), cfg, sweep_out, sweep_format);
        }
        if (*rate_cmd) {
            ExperimentConfig cfg = build_config(cfg_path, cfg_setup, overrides);
            std::vector<std::string> methods;
            std::stringstream ss(methods_csv);
            std::string m;
            while (std::getline(ss, m, ',')) methods.push_back(m);
            return write_results(run_rate_sweep(cfg, methods), cfg, sweep_out, sweep_format);
        }
        if (*bf) {
            ExperimentConfig cfg = build_config(cfg_path, cfg_setup, overrides);
            cfg.beamform.restarts = bf_restarts;
            cfg.beamform.iterations = bf_iters;
            cfg.snr_db = {bf_snr};
            cfg.base_seed = bf_seed;

            SyntheticTruth::Options to;
            to.num_states = cfg.num_states;
            to.degree = cfg.truth_degree;
            to.hard_mode = cfg.truth_hard_mode;
            SyntheticTruth truth = SyntheticTruth::make(cfg.truth_seed, to);

            ScenarioParams sp = cfg.scenario;
            sp.target_snr_db = bf_snr;
            sp.seed = bf_seed;
            Scenario scenario = Scenario::make(sp);
            ChannelRealization real0 = scenario.realization(0);
            RelaxedChannelMap true_map =
                RelaxedChannelMap::from_realization(real0, sp.bs, sp.ris, truth);

            nlohmann::json out;
            out["method"] = bf_method;
            out["seed"] = bf_seed;
            double reg = cfg.beamform.regularizer * sp.transmit_power;

            auto finish = [&](const StateVector& s) {
                CMatrix H = true_map.channel(s);
                CMatrix W = rzf(H, reg, sp.transmit_power).w;
                RVector rates = per_user_rates(H, W, sp.noise_dl, true);
                out["state"] = s.raw();
                out["per_user_rate_bits"] = std::vector<double>(rates.data(),
                                                                rates.data() + rates.size());
                out["sum_rate_bits"] = rates.sum();
            };

            if (bf_method == "proposed") {
                RngStream plan_rng(sp.seed, 0x9A11);
                SoundingPlan plan = make_plan(plan_rng, sp.sounding_configs, sp.ris.size(),
                                              cfg.num_states, PlanPolicy::UniformRandom);
                SoundingSet sounding = run_sounding(scenario, truth, plan, cfg.blocks);
                AngleGrid grid = AngleGrid::make_degrees(cfg.grid_deg, cfg.grid_deg);
                AngleEstimationResult est =
                    estimate_angles(sounding, sp.bs, sp.ris, truth, grid, real0.phi_in_los,
                                    real0.phi_bs_los, cfg.estimation);
                RelaxedChannelMap pred =
                    RelaxedChannelMap::from_knowledge(est.knowledge, truth, 0);
                OptimizeOptions oo = cfg.beamform;
                oo.transmit_power = sp.transmit_power;
                oo.noise_dl = sp.noise_dl;
                oo.regularizer = reg;
                oo.seed = bf_seed;
                finish(discretize(optimize_relaxed(pred, oo).best.selection(), cfg.num_states));
            } else if (bf_method == "brute-force") {
                BruteForceResult r = brute_force(true_map, sp.transmit_power, sp.noise_dl, reg);
                out["evaluated"] = r.evaluated;
                finish(r.state);
            } else {
                BeamformContext ctx;
                ctx.true_map = &true_map;
                ctx.block = 0;
                ctx.transmit_power = sp.transmit_power;
                ctx.noise_dl = sp.noise_dl;
                ctx.regularizer = reg;
                ctx.phased_gain = std::sqrt(truth.mean_power() / std::pow(10.0, 0.3));
                ctx.optimizer = cfg.beamform;
                ctx.seed = bf_seed;
                SoundingSet sounding;
                if (bf_method == "best-sounding") {
                    RngStream plan_rng(sp.seed, 0x9A11);
                    SoundingPlan plan = make_plan(plan_rng, sp.sounding_configs, sp.ris.size(),
                                                  cfg.num_states, PlanPolicy::UniformRandom);
                    sounding = run_sounding(scenario, truth, plan, 1);
                    ctx.sounding = &sounding;
                }
                BaselineKind kind = bf_method == "random"      ? BaselineKind::Random
                                    : bf_method == "group-opt" ? BaselineKind::GroupOpt
                                    : bf_method == "best-sounding"
                                        ? BaselineKind::BestSounding
                                        : BaselineKind::PhasedArray;
                BaselineResult r = run_baseline(kind, ctx);
                if (bf_method == "phased-array") {
                    CMatrix H = true_map.element_channel(r.phases);
                    CMatrix W = rzf(H, reg, sp.transmit_power).w;
                    RVector rates = per_user_rates(H, W, sp.noise_dl, true);
                    out["per_user_rate_bits"] = std::vector<double>(rates.data(),
                                                                    rates.data() + rates.size());
                    out["sum_rate_bits"] = rates.sum();
                } else {
                    finish(r.state);
                }
            }
            std::cout << out.dump(2) << "\n";
            return 0;
        }
        if (*rep) {
            std::cout << summarize(read_rows_csv(rep_in));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
