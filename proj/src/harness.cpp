#include "pixris/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace pixris {

namespace {

std::uint64_t mix_seed(std::uint64_t base, std::uint64_t salt) {
    std::uint64_t x = base + 0x9E3779B97F4A7C15ULL * (salt + 1);
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

double now_ms() {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void run_cells(int count, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, workers);
    if (workers == 1 || count <= 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    for (int w = 0; w < std::min(workers, count); ++w)
        pool.emplace_back([&]() {
            while (true) {
                int i = next.fetch_add(1);
                if (i >= count) break;
                fn(i);
            }
        });
    for (auto& t : pool) t.join();
}

}  // namespace

ExperimentConfig ExperimentConfig::for_setup(int setup) {
    ExperimentConfig cfg;
    cfg.setup = setup;
    cfg.scenario.ris = ArrayGeometry{8, 8, 0.5};
    if (setup == 2) {
        cfg.scenario.bs = ArrayGeometry{4, 2, 0.5};
        cfg.scenario.num_users = 4;
    } else {
        cfg.scenario.bs = ArrayGeometry{4, 1, 0.5};
        cfg.scenario.num_users = 2;
    }
    cfg.scenario.sounding_configs = 16;
    return cfg;
}

ArrayGeometry ExperimentConfig::bs_geometry() const { return scenario.bs; }
int ExperimentConfig::num_users() const { return scenario.num_users; }

// ---------------------------------------------------------------------------
// CSV / JSONL emission

namespace {

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void sort_rows(std::vector<ResultRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const ResultRow& a, const ResultRow& b) {
        if (a.experiment != b.experiment) return a.experiment < b.experiment;
        if (a.setup != b.setup) return a.setup < b.setup;
        if (a.snr_db != b.snr_db) return a.snr_db < b.snr_db;
        if (a.method != b.method) return a.method < b.method;
        if (a.metric != b.metric) return a.metric < b.metric;
        return a.seed < b.seed;
    });
}

}  // namespace

void emit(std::vector<ResultRow> rows, const std::string& path, const std::string& format) {
    sort_rows(rows);
    std::ofstream f(path);
    if (!f) throw std::runtime_error("emit: cannot open for write: " + path);
    if (format == "csv") {
        f << "experiment,setup,snr_db,method,metric,value,seed,wall_ms,error\n";
        for (const auto& r : rows) {
            f << csv_escape(r.experiment) << ',' << r.setup << ',' << fmt_double(r.snr_db) << ','
              << csv_escape(r.method) << ',' << csv_escape(r.metric) << ','
              << fmt_double(r.value) << ',' << r.seed << ',' << fmt_double(r.wall_ms) << ','
              << csv_escape(r.error) << '\n';
        }
    } else if (format == "jsonl") {
        for (const auto& r : rows) {
            nlohmann::json j = {{"experiment", r.experiment}, {"setup", r.setup},
                                {"snr_db", r.snr_db},         {"method", r.method},
                                {"metric", r.metric},         {"value", r.value},
                                {"seed", r.seed},             {"wall_ms", r.wall_ms},
                                {"error", r.error}};
            f << j.dump() << '\n';
        }
    } else {
        throw std::invalid_argument("emit: unknown format " + format);
    }
    if (!f) throw std::runtime_error("emit: write failed: " + path);
}

namespace {

// full RFC-4180 record parser: quoted fields may hold commas and newlines
std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    std::size_t i = 0;
    auto end_field = [&]() {
        fields.push_back(cur);
        cur.clear();
    };
    auto end_record = [&]() {
        end_field();
        if (!(fields.size() == 1 && fields[0].empty())) records.push_back(fields);
        fields.clear();
    };
    while (i < text.size()) {
        char c = text[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    cur += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            end_field();
        } else if (c == '\n') {
            end_record();
        } else if (c != '\r') {
            cur += c;
        }
        ++i;
    }
    if (!cur.empty() || !fields.empty()) end_record();
    return records;
}

}  // namespace

std::vector<ResultRow> read_rows_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_rows_csv: cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    auto records = parse_csv(text);
    std::vector<ResultRow> rows;
    for (std::size_t i = 1; i < records.size(); ++i) {  // skip the header
        const auto& parts = records[i];
        if (parts.size() != 9)
            throw std::runtime_error("read_rows_csv: malformed record in " + path);
        ResultRow r;
        r.experiment = parts[0];
        r.setup = std::stoi(parts[1]);
        r.snr_db = std::stod(parts[2]);
        r.method = parts[3];
        r.metric = parts[4];
        r.value = std::stod(parts[5]);
        r.seed = std::stoull(parts[6]);
        r.wall_ms = std::stod(parts[7]);
        r.error = parts[8];
        rows.push_back(std::move(r));
    }
    return rows;
}

// ---------------------------------------------------------------------------
// sweeps

namespace {

SyntheticTruth make_truth(const ExperimentConfig& cfg) {
    SyntheticTruth::Options o;
    o.num_states = cfg.num_states;
    o.degree = cfg.truth_degree;
    o.hard_mode = cfg.truth_hard_mode;
    return SyntheticTruth::make(cfg.truth_seed, o);
}

ScenarioParams cell_scenario(const ExperimentConfig& cfg, int snapshot, double snr) {
    ScenarioParams p = cfg.scenario;
    p.target_snr_db = snr;
    p.seed = mix_seed(cfg.base_seed, static_cast<std::uint64_t>(snapshot));
    return p;
}

}  // namespace

std::vector<ResultRow> run_nmse_sweep(const ExperimentConfig& cfg,
                                      const ResponseModel* model_override) {
    SyntheticTruth truth = make_truth(cfg);
    const ResponseModel& est_model = model_override ? *model_override : truth;
    AngleGrid grid = AngleGrid::make_degrees(cfg.grid_deg, cfg.grid_deg);

    struct Cell {
        int snapshot;
        double snr;
    };
    std::vector<Cell> cells;
    for (int s = 0; s < cfg.snapshots; ++s)
        for (double snr : cfg.snr_db) cells.push_back({s, snr});

    std::vector<ResultRow> rows(cells.size());
    run_cells(static_cast<int>(cells.size()), cfg.workers, [&](int ci) {
        const Cell& cell = cells[static_cast<std::size_t>(ci)];
        ResultRow row;
        row.experiment = "nmse-sweep";
        row.setup = cfg.setup;
        row.snr_db = cell.snr;
        row.method = "proposed";
        row.metric = "nmse";
        row.seed = mix_seed(cfg.base_seed, static_cast<std::uint64_t>(cell.snapshot));
        double t0 = now_ms();
        try {
            ScenarioParams sp = cell_scenario(cfg, cell.snapshot, cell.snr);
            Scenario scenario = Scenario::make(sp);
            RngStream plan_rng(sp.seed, 0x9A11);
            SoundingPlan plan = make_plan(plan_rng, sp.sounding_configs, sp.ris.size(),
                                          cfg.num_states, PlanPolicy::UniformRandom);
            SoundingSet sounding = run_sounding(scenario, truth, plan, cfg.blocks);
            ChannelRealization lt0 = scenario.realization(0);
            AngleEstimationResult est =
                estimate_angles(sounding, sp.bs, sp.ris, est_model, grid, lt0.phi_in_los,
                                lt0.phi_bs_los, cfg.estimation);
            RngStream eval_rng(sp.seed, 0xE7A1);
            NmseAccumulator acc;
            for (int e = 0; e < cfg.eval_states; ++e) {
                std::vector<int> s(static_cast<std::size_t>(sp.ris.size()));
                for (auto& v : s) v = eval_rng.uniform_int(1, cfg.num_states);
                StateVector sv(std::move(s), cfg.num_states);
                int t = e % cfg.blocks;
                ChannelRealization real = scenario.realization(t);
                CMatrix H_true = cascaded_channel_matrix(real, sp.bs, sp.ris, truth, sv);
                CMatrix H_pred = predict(est.knowledge, est_model, sv, t);
                acc.add(H_pred, H_true);
            }
            row.value = acc.value();
        } catch (const std::exception& e) {
            row.error = e.what();
        }
        row.wall_ms = now_ms() - t0;
        rows[static_cast<std::size_t>(ci)] = std::move(row);
    });
    return rows;
}

std::vector<ResultRow> run_rate_sweep(const ExperimentConfig& cfg,
                                      const std::vector<std::string>& methods,
                                      const ResponseModel* model_override) {
    SyntheticTruth truth = make_truth(cfg);
    const ResponseModel& est_model = model_override ? *model_override : truth;
    AngleGrid grid = AngleGrid::make_degrees(cfg.grid_deg, cfg.grid_deg);
    const bool bits = cfg.rates_in_bits;
    const std::string metric = bits ? "sum_rate_bits" : "sum_rate_nats";
    const double to_bits = 1.0 / std::log(2.0);

    bool needs_estimation = false, needs_sounding = false;
    for (const auto& m : methods) {
        if (m == "proposed") needs_estimation = needs_sounding = true;
        if (m == "best-sounding") needs_sounding = true;
    }

    struct Cell {
        int snapshot;
        double snr;
    };
    std::vector<Cell> cells;
    for (int s = 0; s < cfg.snapshots; ++s)
        for (double snr : cfg.snr_db) cells.push_back({s, snr});

    std::vector<std::vector<ResultRow>> cell_rows(cells.size());
    run_cells(static_cast<int>(cells.size()), cfg.workers, [&](int ci) {
        const Cell& cell = cells[static_cast<std::size_t>(ci)];
        std::uint64_t seed = mix_seed(cfg.base_seed, static_cast<std::uint64_t>(cell.snapshot));
        auto& out = cell_rows[static_cast<std::size_t>(ci)];
        ScenarioParams sp = cell_scenario(cfg, cell.snapshot, cell.snr);

        auto push_row = [&](const std::string& method, double value, double wall,
                            const std::string& err) {
            ResultRow r;
            r.experiment = "rate-sweep";
            r.setup = cfg.setup;
            r.snr_db = cell.snr;
            r.method = method;
            r.metric = metric;
            r.value = value;
            r.seed = seed;
            r.wall_ms = wall;
            r.error = err;
            out.push_back(std::move(r));
        };

        Scenario scenario;
        SoundingSet sounding;
        RelaxedChannelMap true_map;
        ChannelRealization real0;
        try {
            scenario = Scenario::make(sp);
            real0 = scenario.realization(0);
            true_map = RelaxedChannelMap::from_realization(real0, sp.bs, sp.ris, truth);
            if (needs_sounding) {
                RngStream plan_rng(sp.seed, 0x9A11);
                SoundingPlan plan = make_plan(plan_rng, sp.sounding_configs, sp.ris.size(),
                                              cfg.num_states, PlanPolicy::UniformRandom);
                sounding = run_sounding(scenario, truth, plan, cfg.blocks);
            }
        } catch (const std::exception& e) {
            for (const auto& m : methods) push_row(m, 0.0, 0.0, e.what());
            return;
        }

        BeamformContext ctx;
        ctx.true_map = &true_map;
        ctx.sounding = needs_sounding ? &sounding : nullptr;
        ctx.block = 0;
        ctx.transmit_power = sp.transmit_power;
        ctx.noise_dl = sp.noise_dl;
        ctx.regularizer = cfg.beamform.regularizer * sp.transmit_power;
        ctx.phased_gain = std::sqrt(truth.mean_power() / std::pow(10.0, 0.3));
        ctx.optimizer = cfg.beamform;
        ctx.seed = seed;

        auto realized = [&](const StateVector& s) {
            CMatrix H = true_map.channel(s);
            return sum_rate(H, rzf(H, ctx.regularizer, sp.transmit_power).w, sp.noise_dl);
        };

        for (const auto& m : methods) {
            double t0 = now_ms();
            try {
                double nats = 0.0;
                if (m == "proposed") {
                    AngleEstimationResult est =
                        estimate_angles(sounding, sp.bs, sp.ris, est_model, grid,
                                        real0.phi_in_los, real0.phi_bs_los, cfg.estimation);
                    RelaxedChannelMap pred_map =
                        RelaxedChannelMap::from_knowledge(est.knowledge, est_model, 0);
                    OptimizeOptions oo = cfg.beamform;
                    oo.transmit_power = sp.transmit_power;
                    oo.noise_dl = sp.noise_dl;
                    oo.regularizer = ctx.regularizer;
                    oo.seed = seed;
                    OptimizeResult opt = optimize_relaxed(pred_map, oo);
                    nats = realized(discretize(opt.best.selection(), cfg.num_states));
                } else if (m == "relaxed-true") {
                    OptimizeOptions oo = cfg.beamform;
                    oo.transmit_power = sp.transmit_power;
                    oo.noise_dl = sp.noise_dl;
                    oo.regularizer = ctx.regularizer;
                    oo.seed = seed;
                    OptimizeResult opt = optimize_relaxed(true_map, oo);
                    nats = realized(discretize(opt.best.selection(), cfg.num_states));
                } else if (m == "random") {
                    nats = run_baseline(BaselineKind::Random, ctx).sum_rate_nats;
                } else if (m == "best-sounding") {
                    nats = run_baseline(BaselineKind::BestSounding, ctx).sum_rate_nats;
                } else if (m == "group-opt") {
                    nats = run_baseline(BaselineKind::GroupOpt, ctx).sum_rate_nats;
                } else if (m == "phased-array") {
                    nats = run_baseline(BaselineKind::PhasedArray, ctx).sum_rate_nats;
                } else {
                    throw std::invalid_argument("unknown method: " + m);
                }
                push_row(m, bits ? nats * to_bits : nats, now_ms() - t0, "");
            } catch (const std::exception& e) {
                push_row(m, 0.0, now_ms() - t0, e.what());
            }
        }
    });

    std::vector<ResultRow> rows;
    for (auto& cr : cell_rows)
        for (auto& r : cr) rows.push_back(std::move(r));
    return rows;
}

// ---------------------------------------------------------------------------
// config file

namespace {

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    auto e = s.find_last_not_of(" \t\r\n");
    return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

std::vector<double> parse_list(const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

}  // namespace

void apply_override(ExperimentConfig& cfg, const std::string& dotted_key,
                    const std::string& value) {
    const std::string& k = dotted_key;
    auto as_int = [&]() { return std::stoi(value); };
    auto as_dbl = [&]() { return std::stod(value); };
    auto as_u64 = [&]() { return std::stoull(value); };
    auto as_bool = [&]() { return value == "true" || value == "1" || value == "yes"; };

    if (k == "experiment.setup") {
        ExperimentConfig fresh = ExperimentConfig::for_setup(as_int());
        cfg.setup = fresh.setup;
        cfg.scenario.bs = fresh.scenario.bs;
        cfg.scenario.num_users = fresh.scenario.num_users;
    } else if (k == "experiment.num_states") cfg.num_states = as_int();
    else if (k == "experiment.truth_degree") cfg.truth_degree = as_int();
    else if (k == "experiment.truth_hard_mode") cfg.truth_hard_mode = as_bool();
    else if (k == "experiment.truth_seed") cfg.truth_seed = as_u64();
    else if (k == "experiment.blocks") cfg.blocks = as_int();
    else if (k == "experiment.snr_db") cfg.snr_db = parse_list(value);
    else if (k == "experiment.snapshots") cfg.snapshots = as_int();
    else if (k == "experiment.eval_states") cfg.eval_states = as_int();
    else if (k == "experiment.base_seed") cfg.base_seed = as_u64();
    else if (k == "experiment.output_dir") cfg.output_dir = value;
    else if (k == "experiment.rates_in_bits") cfg.rates_in_bits = as_bool();
    else if (k == "experiment.workers") cfg.workers = as_int();
    else if (k == "experiment.grid_deg") cfg.grid_deg = as_dbl();
    else if (k == "experiment.paper_scale") {
        if (as_bool()) cfg.snapshots = 100;
    }
    else if (k == "scenario.bs_rows") cfg.scenario.bs.rows = as_int();
    else if (k == "scenario.bs_cols") cfg.scenario.bs.cols = as_int();
    else if (k == "scenario.ris_rows") cfg.scenario.ris.rows = as_int();
    else if (k == "scenario.ris_cols") cfg.scenario.ris.cols = as_int();
    else if (k == "scenario.spacing") {
        cfg.scenario.bs.spacing = cfg.scenario.ris.spacing = as_dbl();
    }
    else if (k == "scenario.num_users") cfg.scenario.num_users = as_int();
    else if (k == "scenario.bs_clusters") cfg.scenario.bs_clusters = as_int();
    else if (k == "scenario.ue_clusters") cfg.scenario.ue_clusters = as_int();
    else if (k == "scenario.rays_per_cluster") cfg.scenario.rays_per_cluster = as_int();
    else if (k == "scenario.angular_spread_deg") cfg.scenario.angular_spread_deg = as_dbl();
    else if (k == "scenario.k_factor_db") cfg.scenario.k_factor_db = as_dbl();
    else if (k == "scenario.noise_ul") cfg.scenario.noise_ul = as_dbl();
    else if (k == "scenario.noise_dl") cfg.scenario.noise_dl = as_dbl();
    else if (k == "scenario.transmit_power") cfg.scenario.transmit_power = as_dbl();
    else if (k == "scenario.sounding_configs") cfg.scenario.sounding_configs = as_int();
    else if (k == "estimation.max_in") cfg.estimation.max_in = as_int();
    else if (k == "estimation.max_out") cfg.estimation.max_out = as_int();
    else if (k == "estimation.improve_frac") cfg.estimation.improve_frac = as_dbl();
    else if (k == "estimation.polish") cfg.estimation.polish = as_bool();
    else if (k == "estimation.polish_rounds") cfg.estimation.polish_rounds = as_int();
    else if (k == "estimation.greedy_als_sweeps") cfg.estimation.greedy_als_sweeps = as_int();
    else if (k == "estimation.final_sweeps") cfg.estimation.final_fit.als_sweeps = as_int();
    else if (k == "estimation.threads") cfg.estimation.threads = as_int();
    else if (k == "beamforming.iterations") cfg.beamform.iterations = as_int();
    else if (k == "beamforming.learning_rate") cfg.beamform.learning_rate = as_dbl();
    else if (k == "beamforming.restarts") cfg.beamform.restarts = as_int();
    else if (k == "beamforming.regularizer") cfg.beamform.regularizer = as_dbl();
    else throw std::invalid_argument("unknown config key: " + dotted_key);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("load_config: cannot open: " + path);
    ExperimentConfig cfg = ExperimentConfig::for_setup(1);
    std::string line, section;
    // first pass applies experiment.setup before everything else so geometry
    // defaults land, then the rest in file order
    std::vector<std::pair<std::string, std::string>> pairs;
    while (std::getline(f, line)) {
        auto hash = line.find_first_of("#;");
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[' && line.back() == ']') {
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error("load_config: bad line: " + line);
        std::string key = section + "." + trim(line.substr(0, eq));
        pairs.emplace_back(key, trim(line.substr(eq + 1)));
    }
    for (const auto& [k, v] : pairs)
        if (k == "experiment.setup") apply_override(cfg, k, v);
    for (const auto& [k, v] : pairs)
        if (k != "experiment.setup") apply_override(cfg, k, v);
    return cfg;
}

std::string to_ini(const ExperimentConfig& c) {
    std::ostringstream o;
    o << "[experiment]\n";
    o << "setup = " << c.setup << "\n";
    o << "num_states = " << c.num_states << "\n";
    o << "truth_degree = " << c.truth_degree << "\n";
    o << "truth_hard_mode = " << (c.truth_hard_mode ? "true" : "false") << "\n";
    o << "truth_seed = " << c.truth_seed << "\n";
    o << "blocks = " << c.blocks << "\n";
    o << "snr_db = ";
    for (std::size_t i = 0; i < c.snr_db.size(); ++i)
        o << (i ? ", " : "") << fmt_double(c.snr_db[i]);
    o << "\n";
    o << "snapshots = " << c.snapshots << "\n";
    o << "eval_states = " << c.eval_states << "\n";
    o << "base_seed = " << c.base_seed << "\n";
    o << "output_dir = " << c.output_dir << "\n";
    o << "rates_in_bits = " << (c.rates_in_bits ? "true" : "false") << "\n";
    o << "workers = " << c.workers << "\n";
    o << "grid_deg = " << fmt_double(c.grid_deg) << "\n";
    o << "\n[scenario]\n";
    o << "bs_rows = " << c.scenario.bs.rows << "\nbs_cols = " << c.scenario.bs.cols << "\n";
    o << "ris_rows = " << c.scenario.ris.rows << "\nris_cols = " << c.scenario.ris.cols << "\n";
    o << "num_users = " << c.scenario.num_users << "\n";
    o << "bs_clusters = " << c.scenario.bs_clusters << "\n";
    o << "ue_clusters = " << c.scenario.ue_clusters << "\n";
    o << "rays_per_cluster = " << c.scenario.rays_per_cluster << "\n";
    o << "angular_spread_deg = " << fmt_double(c.scenario.angular_spread_deg) << "\n";
    o << "k_factor_db = " << fmt_double(c.scenario.k_factor_db) << "\n";
    o << "noise_ul = " << fmt_double(c.scenario.noise_ul) << "\n";
    o << "noise_dl = " << fmt_double(c.scenario.noise_dl) << "\n";
    o << "transmit_power = " << fmt_double(c.scenario.transmit_power) << "\n";
    o << "sounding_configs = " << c.scenario.sounding_configs << "\n";
    o << "\n[estimation]\n";
    o << "max_in = " << c.estimation.max_in << "\nmax_out = " << c.estimation.max_out << "\n";
    o << "improve_frac = " << fmt_double(c.estimation.improve_frac) << "\n";
    o << "polish = " << (c.estimation.polish ? "true" : "false") << "\n";
    o << "polish_rounds = " << c.estimation.polish_rounds << "\n";
    o << "greedy_als_sweeps = " << c.estimation.greedy_als_sweeps << "\n";
    o << "final_sweeps = " << c.estimation.final_fit.als_sweeps << "\n";
    o << "threads = " << c.estimation.threads << "\n";
    o << "\n[beamforming]\n";
    o << "iterations = " << c.beamform.iterations << "\n";
    o << "learning_rate = " << fmt_double(c.beamform.learning_rate) << "\n";
    o << "restarts = " << c.beamform.restarts << "\n";
    o << "regularizer = " << fmt_double(c.beamform.regularizer) << "\n";
    return o.str();
}

std::string summarize(const std::vector<ResultRow>& rows) {
    struct Key {
        std::string experiment;
        int setup;
        double snr;
        std::string method;
        std::string metric;
        bool operator<(const Key& o) const {
            return std::tie(experiment, setup, snr, method, metric) <
                   std::tie(o.experiment, o.setup, o.snr, o.method, o.metric);
        }
    };
    std::map<Key, std::pair<double, int>> agg;
    int errors = 0;
    for (const auto& r : rows) {
        if (!r.error.empty()) {
            ++errors;
            continue;
        }
        auto& a = agg[{r.experiment, r.setup, r.snr_db, r.method, r.metric}];
        a.first += r.value;
        a.second += 1;
    }
    std::ostringstream o;
    o << "experiment,setup,snr_db,method,metric,mean,count\n";
    for (const auto& [k, v] : agg)
        o << k.experiment << ',' << k.setup << ',' << fmt_double(k.snr) << ',' << k.method << ','
          << k.metric << ',' << fmt_double(v.first / v.second) << ',' << v.second << '\n';
    if (errors) o << "# error rows: " << errors << "\n";
    return o.str();
}

}  // namespace pixris
