#pragma once

/** @file
 * Experiment driver: model comparison on one dataset, replication studies
 * (selection-fraction tables) and information-criterion difference paths
 * for the SV / SVJ pair.
 *
 * Seeds: replication r uses derive_seed(master, r); inside a replication
 * stream 0 simulates the data and streams 1, 2 drive the SV and SVJ fits.
 * Output bytes depend only on the configuration, never on the worker count
 * or completion order.
 */

#include "criteria.hpp"
#include "csv.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "models.hpp"
#include "rng.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

namespace hmmic {

enum class ModelKind { lg, sv, svj };

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "lg") return ModelKind::lg;
    if (s == "sv") return ModelKind::sv;
    if (s == "svj") return ModelKind::svj;
    throw ConfigError("unknown model '" + s + "' (expected lg, sv or svj)");
}

/// Calls f(std::type_identity<Model>{}) for the runtime model kind.
template <class F>
decltype(auto) dispatch_model(ModelKind kind, F&& f) {
    switch (kind) {
        case ModelKind::lg: return f(std::type_identity<LinearGaussian>{});
        case ModelKind::sv: return f(std::type_identity<StochasticVolatility>{});
        case ModelKind::svj: return f(std::type_identity<StochasticVolatilityJumps>{});
    }
    throw ConfigError("unknown model kind");
}

/// Default starting point of the online fit (interior, uninformative).
template <class Model>
Theta<Model> default_initial_theta() {
    if constexpr (std::is_same_v<Model, StochasticVolatility>) {
        return Theta<Model>::from_natural({0.5, 1.0});
    } else if constexpr (std::is_same_v<Model, StochasticVolatilityJumps>) {
        return Theta<Model>::from_natural({0.5, 1.0, 1.0, 0.5});
    } else {
        return Theta<Model>::from_natural({0.5, 1.0, 1.0});
    }
}

/// Number of worker threads: HMMIC_WORKERS, else the hardware concurrency.
inline std::size_t default_workers() {
    if (const char* env = std::getenv("HMMIC_WORKERS")) {
        const long v = std::strtol(env, nullptr, 10);
        if (v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

enum class DataMode {
    per_replication,  // fresh data for every replication
    fixed             // one dataset, replications vary only the algorithm's seeds
};

struct ExperimentConfig {
    int scenario = 2;  // 1: SVJ generates the data, 2: SV does
    double phi = 0.9;
    double sigma_x = std::sqrt(0.3);
    double sigma_j = std::sqrt(0.6);
    double p = 0.6;
    std::vector<std::size_t> n_values{2500, 5000, 7500, 10000};
    std::size_t n_particles = 200;
    std::size_t replications = 200;
    std::uint64_t seed = 1;
    double schedule_c = 1.0;
    double schedule_a = 2.0 / 3.0;
    DataMode data_mode = DataMode::per_replication;
    std::string out_dir = ".";
    std::size_t workers = 1;

    void validate() const {
        if (scenario != 1 && scenario != 2) throw ConfigError("scenario must be 1 or 2");
        if (n_values.empty()) throw ConfigError("need at least one n");
        for (std::size_t i = 0; i < n_values.size(); ++i) {
            if (n_values[i] < 2) throw ConfigError("every n must be >= 2");
            if (i > 0 && n_values[i] <= n_values[i - 1]) throw ConfigError("n values must increase");
        }
        if (n_particles < 1) throw ConfigError("N must be >= 1");
        if (replications < 1) throw ConfigError("R must be >= 1");
        StepSchedule(schedule_c, schedule_a);
        if (scenario == 1) {
            check_closure<StochasticVolatilityJumps>({phi, sigma_x, sigma_j, p});
        } else {
            check_closure<StochasticVolatility>({phi, sigma_x});
        }
    }

    OnlineFitOptions fit_options() const {
        OnlineFitOptions o;
        o.n_particles = n_particles;
        o.schedule = StepSchedule(schedule_c, schedule_a);
        return o;
    }

    /// Canonical key=value text; used to refuse resuming a different study.
    /// R is left out: replication r depends only on r, so a study may be extended.
    std::string fingerprint() const {
        std::ostringstream os;
        os << "scenario=" << scenario << "\nphi=" << format_double(phi) << "\nsigma_x=" << format_double(sigma_x)
           << "\nsigma_j=" << format_double(sigma_j) << "\np=" << format_double(p) << "\nn=";
        for (std::size_t i = 0; i < n_values.size(); ++i) os << (i ? "," : "") << n_values[i];
        os << "\nN=" << n_particles << "\nseed=" << seed
           << "\nschedule_c=" << format_double(schedule_c) << "\nschedule_a=" << format_double(schedule_a)
           << "\ndata_mode=" << (data_mode == DataMode::fixed ? "fixed" : "per_replication") << '\n';
        return os.str();
    }
};

inline Trajectory simulate_scenario(const ExperimentConfig& cfg, std::size_t n, std::uint64_t seed) {
    if (cfg.scenario == 1)
        return simulate<StochasticVolatilityJumps>({cfg.phi, cfg.sigma_x, cfg.sigma_j, cfg.p}, n, seed);
    return simulate<StochasticVolatility>({cfg.phi, cfg.sigma_x}, n, seed);
}

// --- comparison on one dataset ---------------------------------------------

struct ModelFitSummary {
    std::string model;
    std::vector<double> theta_hat;
    IcResult ic;
};

struct ComparisonOptions {
    OnlineFitOptions fit{};
    bool with_evidence = false;
    LaplaceOptions laplace{};
};

/// Fits one model online and scores it; model m uses stream m + 1 of `seed`.
template <class Model>
ModelFitSummary fit_and_score(std::span<const double> y, std::uint64_t seed, const ComparisonOptions& opt) {
    const auto rep = fit_online<Model>(y, default_initial_theta<Model>(), opt.fit, seed);
    ModelFitSummary s;
    s.model = std::string(Model::name);
    s.theta_hat.assign(rep.theta_hat.natural().begin(), rep.theta_hat.natural().end());
    s.ic = make_ic_result(s.model, Model::dim, y.size(), rep.loglik_hat);
    if (opt.with_evidence) {
        const auto lap = laplace_log_evidence<Model>(rep.loglik_hat, rep.theta_hat, y,
                                                     standard_normal_log_prior<Model::dim>,
                                                     opt.fit.n_particles, derive_seed(seed, 2), opt.laplace);
        s.ic.log_evidence = lap.log_evidence;
    }
    return s;
}

inline std::vector<ModelFitSummary> compare_models(std::span<const double> y, const std::vector<ModelKind>& models,
                                                   std::uint64_t seed, const ComparisonOptions& opt) {
    std::vector<ModelFitSummary> out;
    for (std::size_t m = 0; m < models.size(); ++m) {
        out.push_back(dispatch_model(models[m], [&](auto tag) {
            using Model = typename decltype(tag)::type;
            return fit_and_score<Model>(y, derive_seed(seed, m + 1), opt);
        }));
    }
    return out;
}

// --- replication study -----------------------------------------------------

struct ModelOutcome {
    std::vector<double> theta_hat;
    double loglik = 0.0;
    double aic = 0.0;
    double bic = 0.0;
};

struct ReplicationRecord {
    int scenario = 0;
    std::size_t replication = 0;
    std::size_t n = 0;
    std::string status = "ok";
    ModelOutcome sv;
    ModelOutcome svj;
    std::string selected_aic;  // "sv" or "svj"
    std::string selected_bic;

    bool ok() const { return status == "ok"; }
};

inline std::string replication_csv_header() {
    return "scenario,replication,n,status,sv_phi,sv_sigma_x,sv_loglik,sv_aic,sv_bic,"
           "svj_phi,svj_sigma_x,svj_sigma_j,svj_p,svj_loglik,svj_aic,svj_bic,selected_aic,selected_bic";
}

inline std::string replication_csv_row(const ReplicationRecord& r) {
    std::ostringstream os;
    os << r.scenario << ',' << r.replication << ',' << r.n << ',' << r.status;
    auto put = [&](double v) { os << ',' << (r.ok() ? format_double(v) : std::string("NA")); };
    auto put_model = [&](const ModelOutcome& m, std::size_t d) {
        for (std::size_t k = 0; k < d; ++k) put(r.ok() ? m.theta_hat.at(k) : 0.0);
        put(m.loglik);
        put(m.aic);
        put(m.bic);
    };
    put_model(r.sv, 2);
    put_model(r.svj, 4);
    os << ',' << (r.ok() ? r.selected_aic : "NA") << ',' << (r.ok() ? r.selected_bic : "NA");
    return os.str();
}

inline ReplicationRecord parse_replication_row(const std::string& line) {
    const auto f = split(line);
    if (f.size() != 18) throw ConfigError("malformed replication row: " + line);
    ReplicationRecord r;
    r.scenario = std::stoi(f[0]);
    r.replication = std::stoul(f[1]);
    r.n = std::stoul(f[2]);
    r.status = f[3];
    if (r.ok()) {
        r.sv.theta_hat = {parse_double(f[4]), parse_double(f[5])};
        r.sv.loglik = parse_double(f[6]);
        r.sv.aic = parse_double(f[7]);
        r.sv.bic = parse_double(f[8]);
        r.svj.theta_hat = {parse_double(f[9]), parse_double(f[10]), parse_double(f[11]), parse_double(f[12])};
        r.svj.loglik = parse_double(f[13]);
        r.svj.aic = parse_double(f[14]);
        r.svj.bic = parse_double(f[15]);
        r.selected_aic = f[16];
        r.selected_bic = f[17];
    }
    return r;
}

inline std::uint64_t replication_data_seed(const ExperimentConfig& cfg, std::size_t r) {
    return cfg.data_mode == DataMode::fixed ? derive_seed(cfg.seed, 0xDA7A) : derive_seed(derive_seed(cfg.seed, r), 0);
}

/// One replication: simulate, fit SV and SVJ online with checkpoints at
/// every configured n, score each prefix. Failures yield status rows.
inline std::vector<ReplicationRecord> run_replication(const ExperimentConfig& cfg, std::size_t r) {
    const std::uint64_t rep_seed = derive_seed(cfg.seed, r);
    const std::size_t n_max = cfg.n_values.back();
    std::vector<ReplicationRecord> rows(cfg.n_values.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].scenario = cfg.scenario;
        rows[i].replication = r;
        rows[i].n = cfg.n_values[i];
    }
    try {
        const auto data = simulate_scenario(cfg, n_max, replication_data_seed(cfg, r));
        const auto opt = cfg.fit_options();
        const auto sv = fit_online<StochasticVolatility>(data.observations, default_initial_theta<StochasticVolatility>(),
                                                         opt, derive_seed(rep_seed, 1), cfg.n_values);
        const auto svj = fit_online<StochasticVolatilityJumps>(
            data.observations, default_initial_theta<StochasticVolatilityJumps>(), opt, derive_seed(rep_seed, 2),
            cfg.n_values);
        for (std::size_t i = 0; i < rows.size(); ++i) {
            auto fill = [&](ModelOutcome& out, const auto& cp, std::size_t d) {
                out.theta_hat.assign(cp.theta_hat.natural().begin(), cp.theta_hat.natural().end());
                out.loglik = cp.loglik_hat;
                out.aic = aic(cp.loglik_hat, d);
                out.bic = bic(cp.loglik_hat, d, static_cast<double>(cp.n));
            };
            fill(rows[i].sv, sv.checkpoints[i], 2);
            fill(rows[i].svj, svj.checkpoints[i], 4);
            const IcResult ics[2] = {make_ic_result("sv", 2, rows[i].n, rows[i].sv.loglik),
                                     make_ic_result("svj", 4, rows[i].n, rows[i].svj.loglik)};
            rows[i].selected_aic = ics[select(ics, Criterion::aic)].model;
            rows[i].selected_bic = ics[select(ics, Criterion::bic)].model;
        }
    } catch (const std::exception& e) {
        std::string what = e.what();
        std::replace(what.begin(), what.end(), ',', ';');
        std::replace(what.begin(), what.end(), '\n', ' ');
        for (auto& row : rows) row.status = "failed: " + what;
    }
    return rows;
}

struct FractionCell {
    std::string criterion;  // aic | bic
    std::string model;      // sv | svj
    std::size_t n = 0;
    std::size_t selected = 0;
    std::size_t valid = 0;
    std::size_t failures = 0;
};

/// Selection counts per (criterion, model, n); failures are excluded from `valid`.
inline std::vector<FractionCell> selection_fractions(const std::vector<ReplicationRecord>& records,
                                                     const std::vector<std::size_t>& n_values) {
    std::vector<FractionCell> cells;
    for (const char* crit : {"aic", "bic"}) {
        for (const char* model : {"sv", "svj"}) {
            for (std::size_t n : n_values) {
                FractionCell c{crit, model, n, 0, 0, 0};
                for (const auto& r : records) {
                    if (r.n != n) continue;
                    if (!r.ok()) {
                        ++c.failures;
                        continue;
                    }
                    ++c.valid;
                    const auto& sel = std::string(crit) == "aic" ? r.selected_aic : r.selected_bic;
                    if (sel == model) ++c.selected;
                }
                cells.push_back(c);
            }
        }
    }
    return cells;
}

inline std::string fractions_csv(const std::vector<FractionCell>& cells) {
    std::ostringstream os;
    os << "criterion,model,n,selected,valid,failures\n";
    for (const auto& c : cells)
        os << c.criterion << ',' << c.model << ',' << c.n << ',' << c.selected << ',' << c.valid << ',' << c.failures
           << '\n';
    return os.str();
}

/// Plain-text table: rows AIC(SV), AIC(SVJ), BIC(SV), BIC(SVJ); columns n.
inline std::string fractions_table(const std::vector<FractionCell>& cells, const std::vector<std::size_t>& n_values) {
    std::ostringstream os;
    os << "n";
    for (auto n : n_values) os << '\t' << n;
    os << '\n';
    for (const char* crit : {"aic", "bic"}) {
        for (const char* model : {"sv", "svj"}) {
            os << (std::string(crit) == "aic" ? "AIC(" : "BIC(") << (std::string(model) == "sv" ? "SV" : "SVJ") << ')';
            for (auto n : n_values) {
                for (const auto& c : cells)
                    if (c.criterion == crit && c.model == model && c.n == n)
                        os << '\t' << c.selected << '/' << c.valid;
            }
            os << '\n';
        }
    }
    return os.str();
}

inline std::string boxplot_script(const std::string& csv_name) {
    std::ostringstream os;
    os << "# gnuplot script: distribution of AIC and BIC per model and n\n"
       << "set datafile separator ','\n"
       << "set style data boxplot\n"
       << "set style boxplot outliers pointtype 7\n"
       << "set key off\n"
       << "set xlabel 'n'\n"
       << "set ylabel 'information criterion'\n"
       << "set xtics ('AIC(SV)' 1, 'AIC(SVJ)' 2, 'BIC(SV)' 3, 'BIC(SVJ)' 4)\n"
       << "set terminal pngcairo size 1200,600\n"
       << "set output 'ic_boxplot.png'\n"
       << "plot '" << csv_name << "' every ::1 using (1):8:(0.5):3 with boxplot, \\\n"
       << "     '' every ::1 using (2):15:(0.5):3 with boxplot, \\\n"
       << "     '' every ::1 using (3):9:(0.5):3 with boxplot, \\\n"
       << "     '' every ::1 using (4):16:(0.5):3 with boxplot\n";
    return os.str();
}

struct StudyResult {
    std::vector<ReplicationRecord> records;
    std::vector<FractionCell> fractions;
    std::size_t computed = 0;  // replications run now (rest resumed from disk)
};

/**
 * Runs (or resumes) a replication study. Writes into cfg.out_dir:
 * study.cfg, replications.csv (appended in replication order),
 * fractions.csv, table.txt and ic_boxplot.gp.
 */
inline StudyResult run_replication_study(const ExperimentConfig& cfg, std::ostream* progress = nullptr) {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path dir(cfg.out_dir);
    fs::create_directories(dir);
    const fs::path cfg_path = dir / "study.cfg";
    const fs::path csv_path = dir / "replications.csv";

    std::vector<ReplicationRecord> done;
    if (fs::exists(csv_path)) {
        std::ifstream prev_cfg(cfg_path);
        std::stringstream buf;
        buf << prev_cfg.rdbuf();
        if (buf.str() != cfg.fingerprint())
            throw ConfigError("existing " + csv_path.string() + " belongs to a different study configuration");
        std::ifstream in(csv_path);
        std::string line;
        std::getline(in, line);
        if (line != replication_csv_header()) throw ConfigError("unexpected header in " + csv_path.string());
        // A row cut short by an interrupted write ends the usable prefix.
        while (std::getline(in, line) && !line.empty()) {
            try {
                done.push_back(parse_replication_row(line));
            } catch (const ConfigError&) {
                break;
            }
        }
    }
    // Keep only fully written replications, in order from 0.
    const std::size_t per_rep = cfg.n_values.size();
    std::size_t resumed = 0;
    while ((resumed + 1) * per_rep <= done.size()) {
        bool complete = true;
        for (std::size_t i = 0; i < per_rep; ++i) {
            const auto& r = done[resumed * per_rep + i];
            complete = complete && r.replication == resumed && r.n == cfg.n_values[i];
        }
        if (!complete) break;
        ++resumed;
    }
    resumed = std::min(resumed, cfg.replications);
    done.resize(resumed * per_rep);

    {
        std::ofstream c(cfg_path, std::ios::trunc);
        c << cfg.fingerprint();
        std::ofstream out(csv_path, std::ios::trunc);
        out << replication_csv_header() << '\n';
        for (const auto& r : done) out << replication_csv_row(r) << '\n';
    }

    std::ofstream out(csv_path, std::ios::app);
    std::vector<std::optional<std::vector<ReplicationRecord>>> slots(cfg.replications);
    std::mutex mu;
    std::size_t cursor = resumed;
    std::atomic<std::size_t> next{resumed};

    auto worker = [&] {
        while (true) {
            const std::size_t r = next.fetch_add(1);
            if (r >= cfg.replications) return;
            const auto t0 = std::chrono::steady_clock::now();
            auto rows = run_replication(cfg, r);
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            std::lock_guard lock(mu);
            if (progress)
                *progress << "replication " << r << ": " << rows.front().status << " (" << secs << " s)\n";
            slots[r] = std::move(rows);
            while (cursor < cfg.replications && slots[cursor]) {
                for (const auto& row : *slots[cursor]) {
                    out << replication_csv_row(row) << '\n';
                    done.push_back(row);
                }
                out.flush();
                ++cursor;
            }
        }
    };
    const std::size_t n_workers = std::max<std::size_t>(1, std::min(cfg.workers, cfg.replications - resumed));
    if (resumed < cfg.replications) {
        std::vector<std::thread> pool;
        for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
        worker();
        for (auto& t : pool) t.join();
    }
    out.close();

    StudyResult res;
    res.records = std::move(done);
    res.fractions = selection_fractions(res.records, cfg.n_values);
    res.computed = cfg.replications - resumed;
    std::ofstream(dir / "fractions.csv") << fractions_csv(res.fractions);
    std::ofstream(dir / "table.txt") << fractions_table(res.fractions, cfg.n_values);
    std::ofstream(dir / "ic_boxplot.gp") << boxplot_script("replications.csv");
    return res;
}

// --- difference paths --------------------------------------------------------

struct PathPoint {
    std::size_t n;
    double aic_diff;  // AIC(SV) - AIC(SVJ)
    double bic_diff;  // BIC(SV) - BIC(SVJ)
};

inline std::string path_csv(const std::vector<PathPoint>& pts) {
    std::ostringstream os;
    os << "n,aic_diff,bic_diff\n";
    for (const auto& p : pts) os << p.n << ',' << format_double(p.aic_diff) << ',' << format_double(p.bic_diff) << '\n';
    return os.str();
}

inline std::string path_plot_script(const std::string& csv_name) {
    std::ostringstream os;
    os << "# gnuplot script: AIC(SV)-AIC(SVJ) and BIC(SV)-BIC(SVJ) against n\n"
       << "set datafile separator ','\n"
       << "set key top left\n"
       << "set xlabel 'n'\n"
       << "set ylabel 'IC(SV) - IC(SVJ)'\n"
       << "set terminal pngcairo size 1000,600\n"
       << "set output 'path.png'\n"
       << "plot '" << csv_name << "' every ::1 using 1:2 with lines lc rgb 'blue' title 'AIC difference', \\\n"
       << "     '' every ::1 using 1:3 with lines lc rgb 'red' title 'BIC difference', \\\n"
       << "     0 with lines lc rgb 'black' dt 2 notitle\n";
    return os.str();
}

/**
 * One data realization of cfg.n_values.back() observations under the
 * scenario's true model; both models are fitted on every checkpoint prefix
 * (one causal pass each). Writes path.csv and path.gp when `write` is set.
 */
inline std::vector<PathPoint> run_path_study(const ExperimentConfig& cfg, bool write = true) {
    cfg.validate();
    const auto data = simulate_scenario(cfg, cfg.n_values.back(), derive_seed(cfg.seed, 0));
    const auto opt = cfg.fit_options();
    const auto sv = fit_online<StochasticVolatility>(data.observations, default_initial_theta<StochasticVolatility>(),
                                                     opt, derive_seed(cfg.seed, 1), cfg.n_values);
    const auto svj = fit_online<StochasticVolatilityJumps>(
        data.observations, default_initial_theta<StochasticVolatilityJumps>(), opt, derive_seed(cfg.seed, 2),
        cfg.n_values);
    std::vector<PathPoint> pts;
    for (std::size_t i = 0; i < cfg.n_values.size(); ++i) {
        const double n = static_cast<double>(cfg.n_values[i]);
        const double l_sv = sv.checkpoints[i].loglik_hat, l_svj = svj.checkpoints[i].loglik_hat;
        pts.push_back({cfg.n_values[i], aic(l_sv, 2) - aic(l_svj, 4), bic(l_sv, 2, n) - bic(l_svj, 4, n)});
    }
    if (write) {
        namespace fs = std::filesystem;
        fs::create_directories(cfg.out_dir);
        std::ofstream(fs::path(cfg.out_dir) / "path.csv") << path_csv(pts);
        std::ofstream(fs::path(cfg.out_dir) / "path.gp") << path_plot_script("path.csv");
    }
    return pts;
}

}  // namespace hmmic
