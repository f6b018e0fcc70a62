#pragma once

#include <string>
#include <vector>

#include "pixris/beamforming.hpp"
#include "pixris/nn.hpp"

namespace pixris {

// One sweep configuration. Defaults mirror the evaluated setups: setup 1 is a
// 4x1 ULA serving K=2, setup 2 a 4x2 UPA serving K=4; N=64 RIS, L=16 states,
// T=20 blocks, B_sound=16. Desk scale trims the trial counts; --paper-scale
// restores them.
struct ExperimentConfig {
    int setup = 1;
    ScenarioParams scenario;  // geometry filled from `setup` unless overridden
    int num_states = 16;      // L
    int truth_degree = 3;
    bool truth_hard_mode = false;
    std::uint64_t truth_seed = 7;
    int blocks = 20;          // T
    std::vector<double> snr_db = {-10.0, 0.0, 10.0, 20.0};
    int snapshots = 20;
    int eval_states = 100;    // unseen random states per NMSE cell
    std::uint64_t base_seed = 1;
    std::string output_dir = ".";
    bool rates_in_bits = true;
    int workers = 2;
    double grid_deg = 3.0;
    AngleEstimationOptions estimation{};
    OptimizeOptions beamform{};

    static ExperimentConfig for_setup(int setup);
    ArrayGeometry bs_geometry() const;
    int num_users() const;
};

struct ResultRow {
    std::string experiment;
    int setup = 0;
    double snr_db = 0.0;
    std::string method;
    std::string metric;
    double value = 0.0;
    std::uint64_t seed = 0;
    double wall_ms = 0.0;
    std::string error;  // empty on success

    bool operator==(const ResultRow&) const = default;
};

// Sorted, deterministic emission. format: "csv" (RFC-4180) or "jsonl".
void emit(std::vector<ResultRow> rows, const std::string& path, const std::string& format);
std::vector<ResultRow> read_rows_csv(const std::string& path);

// Fig.-9 analogue: per (snapshot, SNR) cell, sound T blocks, estimate the
// long-term angles and per-block coefficients, and score prediction NMSE on
// fresh random states. Failures mark the row and the sweep continues.
std::vector<ResultRow> run_nmse_sweep(const ExperimentConfig& cfg,
                                      const ResponseModel* model_override = nullptr);

// Figs.-10/11 analogue: per (snapshot, SNR) cell, run each method end to end
// and record the realized sum rate on the true channel at block 0.
std::vector<ResultRow> run_rate_sweep(const ExperimentConfig& cfg,
                                      const std::vector<std::string>& methods,
                                      const ResponseModel* model_override = nullptr);

// INI-style config file with [experiment], [scenario], [estimation],
// [beamforming] sections; `key = value` pairs, lists comma-separated.
ExperimentConfig load_config(const std::string& path);
void apply_override(ExperimentConfig& cfg, const std::string& dotted_key,
                    const std::string& value);
std::string to_ini(const ExperimentConfig& cfg);

// mean value per (experiment, setup, snr, method, metric), sorted; plain text
std::string summarize(const std::vector<ResultRow>& rows);

}  // namespace pixris
