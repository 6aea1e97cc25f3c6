#pragma once

/** @file
 * Command-line front end.
 *
 *   hmmic simulate | fit | oracle | compare | replicate | path  [--config FILE] [flags]
 *
 * Config files hold flat `key=value` lines (`#` starts a comment); keys are
 * the long flag names with underscores. Flags given on the command line
 * override file values. Exit status: 0 success, 2 configuration error,
 * 3 numerical failure.
 */

#include "hmmic.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace hmmic {

namespace cli_detail {

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    while (std::getline(is, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

// Flag <-> config-key bindings of one subcommand.
class Bindings {
public:
    explicit Bindings(CLI::App* app) : app_(app) {}

    template <class T>
    CLI::Option* option(const std::string& key, T& var, const std::string& desc) {
        // "R,--r" binds config key R to flags --R and --r.
        const std::string cfg_key = key.substr(0, key.find(','));
        std::string names = "--" + key;
        if (key.find('_') != std::string::npos) {
            std::string dashed = key;
            std::replace(dashed.begin(), dashed.end(), '_', '-');
            names += ",--" + dashed;
        }
        auto* opt = app_->add_option(names, var, desc);
        if constexpr (std::is_same_v<T, std::vector<std::size_t>> || std::is_same_v<T, std::vector<std::string>>)
            opt->delimiter(',');
        setters_[cfg_key] = {opt, [&var, cfg_key](const std::string& text) { assign(var, cfg_key, text); }};
        return opt;
    }

    CLI::Option* flag(const std::string& key, bool& var, const std::string& desc) {
        auto* opt = app_->add_flag("--" + key, var, desc);
        setters_[key] = {opt, [&var, key](const std::string& text) { assign(var, key, text); }};
        return opt;
    }

    /// Applies config values for keys whose flag was not given.
    void apply(const std::map<std::string, std::string>& kv) const {
        for (const auto& [key, value] : kv) {
            if (const auto it = setters_.find(key); it != setters_.end() && it->second.first->count() == 0)
                it->second.second(value);
        }
    }

private:
    template <class T>
    static void assign(T& var, const std::string& key, const std::string& text) {
        if constexpr (std::is_same_v<T, std::vector<std::size_t>>) {
            var.clear();
            for (const auto& part : split(text)) var.push_back(parse_count(key, part));
        } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
            var = split(text);
        } else if constexpr (std::is_same_v<T, bool>) {
            if (text == "true" || text == "1") {
                var = true;
            } else if (text == "false" || text == "0") {
                var = false;
            } else {
                throw ConfigError("config key " + key + ": expected true/false");
            }
        } else if constexpr (std::is_same_v<T, std::string>) {
            var = text;
        } else if constexpr (std::is_floating_point_v<T>) {
            var = parse_double(text);
        } else {
            var = static_cast<T>(parse_count(key, text));
        }
    }

    static unsigned long long parse_count(const std::string& key, const std::string& text) {
        try {
            std::size_t used = 0;
            const auto v = std::stoull(text, &used);
            if (used == text.size() && text.find('-') == std::string::npos) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError("config key " + key + ": expected a nonnegative integer, got '" + text + "'");
    }

    CLI::App* app_;
    std::map<std::string, std::pair<CLI::Option*, std::function<void(const std::string&)>>> setters_;
};

// Keys accepted in config files; a key may be meaningful to only some subcommands.
inline const std::set<std::string>& known_config_keys() {
    static const std::set<std::string> keys{
        "model", "models", "phi",  "sigma_x", "sigma_j",    "p",          "sigma_v", "n",        "N",
        "R",     "seed",   "data", "out",     "schedule_c", "schedule_a", "out_dir", "scenario", "trace",
        "evidence", "mle", "fixed_data"};
    return keys;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    return os;
}

}  // namespace cli_detail

/// Runs the CLI; `out`/`err` receive what would go to stdout/stderr.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    using cli_detail::Bindings;
    CLI::App app{"Particle-filter likelihood, online MLE and information-criterion model selection for HMMs",
                 "hmmic"};
    app.require_subcommand(1);
    std::string config_path;

    // Shared parameter storage; defaults follow the SV / SVJ experiments.
    std::string model = "sv";
    std::vector<std::string> models{"sv", "svj"};
    double phi = 0.9, sigma_x = std::sqrt(0.3), sigma_j = std::sqrt(0.6), p = 0.6, sigma_v = 1.0;
    std::size_t n = 1000;
    std::vector<std::size_t> n_list;
    std::size_t particles = 200, reps = 200;
    std::uint64_t seed = 1;
    double schedule_c = 1.0, schedule_a = 2.0 / 3.0;
    std::string data, out_path, out_dir = ".", trace;
    int scenario = 2;
    bool evidence = false, mle = false, fixed_data = false;

    auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "key=value configuration file"); };
    auto add_truth = [&](Bindings& b) {
        b.option("phi", phi, "autoregressive coefficient");
        b.option("sigma_x", sigma_x, "state noise scale");
        b.option("sigma_j", sigma_j, "jump scale (svj)");
        b.option("p", p, "jump probability (svj)");
    };
    auto add_schedule = [&](Bindings& b) {
        b.option("schedule_c", schedule_c, "step-size scale c in c*k^-a");
        b.option("schedule_a", schedule_a, "step-size exponent a in (0.5, 1]");
    };

    auto* sim = app.add_subcommand("simulate", "simulate a trajectory to CSV (t,x,y)");
    Bindings b_sim(sim);
    add_config(sim);
    b_sim.option("model", model, "lg | sv | svj");
    add_truth(b_sim);
    b_sim.option("sigma_v", sigma_v, "observation noise scale (lg)");
    b_sim.option("n", n, "number of observations");
    b_sim.option("seed", seed, "random seed");
    b_sim.option("out", out_path, "output CSV");

    auto* fit = app.add_subcommand("fit", "online gradient-ascent fit of one model");
    Bindings b_fit(fit);
    add_config(fit);
    b_fit.option("data", data, "trajectory CSV with a y column");
    b_fit.option("model", model, "lg | sv | svj");
    b_fit.option("N", particles, "number of particles");
    b_fit.option("seed", seed, "random seed");
    add_schedule(b_fit);
    b_fit.option("trace", trace, "write the iterate trace CSV here");
    b_fit.option("out", out_path, "write key,value results here (default stdout)");

    auto* oracle = app.add_subcommand("oracle", "exact Kalman log-likelihood and score (lg model)");
    Bindings b_or(oracle);
    add_config(oracle);
    b_or.option("data", data, "trajectory CSV with a y column");
    b_or.option("phi", phi, "autoregressive coefficient");
    b_or.option("sigma_x", sigma_x, "state noise scale");
    b_or.option("sigma_v", sigma_v, "observation noise scale");
    b_or.flag("mle", mle, "also report the exact MLE");
    b_or.option("out", out_path, "write key,value results here (default stdout)");

    auto* cmp = app.add_subcommand("compare", "fit several models and report AIC/BIC (and evidence)");
    Bindings b_cmp(cmp);
    add_config(cmp);
    b_cmp.option("data", data, "trajectory CSV with a y column");
    b_cmp.option("models", models, "comma-separated model list");
    b_cmp.option("N", particles, "number of particles");
    b_cmp.option("seed", seed, "random seed");
    add_schedule(b_cmp);
    b_cmp.flag("evidence", evidence, "add Laplace log-evidence");
    b_cmp.option("out", out_path, "write the IC table here (default stdout)");

    auto* rep = app.add_subcommand("replicate", "replication study of AIC/BIC selection");
    Bindings b_rep(rep);
    add_config(rep);
    b_rep.option("scenario", scenario, "1: SVJ true, 2: SV true");
    add_truth(b_rep);
    b_rep.option("R,--r", reps, "number of replications");
    b_rep.option("n", n_list, "comma-separated sample sizes");
    b_rep.option("N", particles, "number of particles");
    b_rep.option("seed", seed, "master seed");
    add_schedule(b_rep);
    b_rep.flag("fixed_data", fixed_data, "one dataset for all replications");
    b_rep.option("out_dir", out_dir, "output directory");

    auto* path = app.add_subcommand("path", "AIC/BIC difference path over growing n");
    Bindings b_path(path);
    add_config(path);
    b_path.option("scenario", scenario, "1: SVJ true, 2: SV true");
    add_truth(b_path);
    b_path.option("n", n_list, "comma-separated checkpoints");
    b_path.option("N", particles, "number of particles");
    b_path.option("seed", seed, "master seed");
    add_schedule(b_path);
    b_path.option("out_dir", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    const std::map<CLI::App*, const Bindings*> bindings{{sim, &b_sim},   {fit, &b_fit}, {oracle, &b_or},
                                                        {cmp, &b_cmp},   {rep, &b_rep}, {path, &b_path}};
    CLI::App* sub = app.get_subcommands().front();

    try {
        if (!config_path.empty()) {
            const auto kv = cli_detail::read_config_file(config_path);
            for (const auto& [key, value] : kv)
                if (!cli_detail::known_config_keys().count(key)) throw ConfigError("unknown config key: " + key);
            bindings.at(sub)->apply(kv);
        }
        if (n_list.empty()) {
            if (sub == path) {
                for (std::size_t k = 1000; k <= 10000; k += 1000) n_list.push_back(k);
            } else {
                n_list = {2500, 5000, 7500, 10000};
            }
        }
        auto require = [](const std::string& v, const char* what) {
            if (v.empty()) throw ConfigError(std::string("missing required setting: ") + what);
        };
        auto emit = [&](const std::string& text) {
            if (out_path.empty()) {
                out << text;
            } else {
                auto os = cli_detail::open_output(out_path);
                os << text;
            }
        };

        if (sub == sim) {
            require(out_path, "out");
            const auto traj = dispatch_model(parse_model_kind(model), [&](auto tag) {
                using M = typename decltype(tag)::type;
                typename M::Params params{};
                if constexpr (M::dim == 2) {
                    params = {phi, sigma_x};
                } else if constexpr (std::is_same_v<M, LinearGaussian>) {
                    params = {phi, sigma_x, sigma_v};
                } else {
                    params = {phi, sigma_x, sigma_j, p};
                }
                return simulate<M>(params, n, seed);
            });
            write_trajectory_csv(out_path, traj);
        } else if (sub == fit) {
            require(data, "data");
            const auto y = read_trajectory_csv(data).observations;
            OnlineFitOptions opt;
            opt.n_particles = particles;
            opt.schedule = StepSchedule(schedule_c, schedule_a);
            const std::string text = dispatch_model(parse_model_kind(model), [&](auto tag) {
                using M = typename decltype(tag)::type;
                std::ofstream trace_os;
                std::optional<TraceWriter<M>> writer;
                if (!trace.empty()) {
                    trace_os = cli_detail::open_output(trace);
                    writer.emplace(trace_os);
                }
                const auto rep_ = fit_online<M>(y, default_initial_theta<M>(), opt, seed, {},
                                                writer ? &*writer : nullptr);
                std::ostringstream os;
                os << "key,value\nmodel," << M::name << "\nn," << rep_.n << "\nN," << rep_.n_particles
                   << "\nseed," << rep_.seed << "\nloglik_seed," << rep_.loglik_seed;
                for (std::size_t k = 0; k < M::dim; ++k)
                    os << '\n' << M::param_names[k] << ',' << format_double(rep_.theta_hat[k]);
                os << "\nloglik," << format_double(rep_.loglik_hat) << '\n';
                return os.str();
            });
            emit(text);
        } else if (sub == oracle) {
            require(data, "data");
            const auto y = read_trajectory_csv(data).observations;
            const auto theta = Theta<LinearGaussian>::from_natural({phi, sigma_x, sigma_v});
            const auto r = kalman_filter(theta, y);
            std::ostringstream os;
            os << "key,value\nloglik," << format_double(r.loglik);
            for (std::size_t k = 0; k < 3; ++k)
                os << "\nscore_" << LinearGaussian::param_names[k] << ',' << format_double(r.score[k]);
            if (mle) {
                const auto f = kalman_mle(y, theta);
                for (std::size_t k = 0; k < 3; ++k)
                    os << "\nmle_" << LinearGaussian::param_names[k] << ',' << format_double(f.theta_hat[k]);
                os << "\nmle_loglik," << format_double(f.loglik_at_mle) << "\nmle_converged,"
                   << (f.converged ? "true" : "false");
            }
            os << '\n';
            emit(os.str());
        } else if (sub == cmp) {
            require(data, "data");
            const auto y = read_trajectory_csv(data).observations;
            std::vector<ModelKind> kinds;
            for (const auto& m : models) kinds.push_back(parse_model_kind(m));
            if (kinds.empty()) throw ConfigError("no models to compare");
            ComparisonOptions opt;
            opt.fit.n_particles = particles;
            opt.fit.schedule = StepSchedule(schedule_c, schedule_a);
            opt.with_evidence = evidence;
            const auto fits = compare_models(y, kinds, seed, opt);
            std::ostringstream os;
            os << ic_csv_header() << '\n';
            for (const auto& f : fits) os << ic_csv_row(f.ic) << '\n';
            emit(os.str());
        } else if (sub == rep || sub == path) {
            ExperimentConfig cfg;
            cfg.scenario = scenario;
            cfg.phi = phi;
            cfg.sigma_x = sigma_x;
            cfg.sigma_j = sigma_j;
            cfg.p = p;
            cfg.n_values = n_list;
            cfg.n_particles = particles;
            cfg.replications = reps;
            cfg.seed = seed;
            cfg.schedule_c = schedule_c;
            cfg.schedule_a = schedule_a;
            cfg.data_mode = fixed_data ? DataMode::fixed : DataMode::per_replication;
            cfg.out_dir = out_dir;
            cfg.workers = default_workers();
            if (sub == rep) {
                const auto res = run_replication_study(cfg, &err);
                out << fractions_table(res.fractions, cfg.n_values);
            } else {
                out << path_csv(run_path_study(cfg));
            }
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ParameterDomainError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const ClassificationError& e) {
        err << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "numerical failure: " << e.what() << '\n';
        return 3;
    }
    return 0;
}

}  // namespace hmmic
