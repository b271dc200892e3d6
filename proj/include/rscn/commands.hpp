#pragma once

// Command implementations behind the CLI. Each returns a process exit
// code: 0 success, 2 usage or config error, 3 integrity (hash) error,
// 1 verification or runtime failure. Kept apart from argv parsing so tests
// drive them directly.

#include <iomanip>
#include <iostream>
#include <sstream>

#include "rscn/config.hpp"
#include "rscn/gradcheck.hpp"
#include "rscn/trainer.hpp"

namespace rscn {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitIntegrity = 3;

namespace detail {

template <typename Fn>
int run_command(Fn&& fn) {
    try {
        fn();
        return kExitOk;
    } catch (const usage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const integrity_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitIntegrity;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

inline std::string pct(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(1) << 100.0 * v;
    return os.str();
}

inline void print_split_table(const DatasetManifest& m, std::ostream& os) {
    os << std::left << std::setw(14) << "split" << std::right << std::setw(8) << "scenes";
    for (uint16_t c = 0; c < m.spec.classes; ++c)
        os << std::setw(9) << ("class" + std::to_string(c));
    os << std::setw(9) << "objects" << "\n";
    for (Split s : {Split::source_train, Split::target_train, Split::target_val}) {
        const auto& st = m.split(s);
        uint64_t total = 0;
        os << std::left << std::setw(14) << split_name(s) << std::right << std::setw(8)
           << st.count;
        for (uint64_t c : st.object_counts) {
            os << std::setw(9) << c;
            total += c;
        }
        os << std::setw(9) << total << "\n";
    }
}

inline void print_eval_row(const EvalReport& r, const std::optional<double>& baseline_map,
                           uint16_t classes, std::ostream& os) {
    os << std::left << std::setw(14) << r.split;
    for (uint16_t c = 0; c < classes; ++c) {
        auto it = r.per_class_ap.find(c);
        os << std::right << std::setw(9) << (it == r.per_class_ap.end() ? "-" : pct(it->second));
    }
    os << std::right << std::setw(9) << pct(r.map50);
    if (baseline_map) {
        const double gain = 100.0 * (r.map50 - *baseline_map);
        std::ostringstream g;
        g << std::showpos << std::fixed << std::setprecision(1) << gain;
        os << std::setw(9) << g.str();
    }
    os << "\n";
}

inline LossWeights parse_weights_flag(const std::string& flag) {
    std::vector<double> vals;
    std::stringstream ss(flag);
    std::string part;
    while (std::getline(ss, part, ','))
        vals.push_back(parse_double(trim(part), "--weights"));
    if (vals.size() != 4)
        throw usage_error("--weights expects det,bpa,rsh,ssp (4 comma-separated values)");
    LossWeights w;
    w.det = vals[0];
    w.bpa = vals[1];
    w.rsh = vals[2];
    w.ssp = vals[3];
    return w;
}

}  // namespace detail

inline int cmd_gen_data(const std::string& config_path, const std::string& out_dir) {
    return detail::run_command([&] {
        RunConfig cfg = load_run_config(config_path);
        auto manifest = generate_dataset(cfg.data, cfg.sizes, cfg.seed, out_dir);
        write_file(std::filesystem::path(out_dir) / "config_echo.cfg", echo_config(cfg));
        std::cout << "dataset written to " << out_dir << "\n";
        detail::print_split_table(manifest, std::cout);
    });
}

inline int cmd_train(const std::string& mode, const std::string& config_path,
                     const std::string& dataset_dir, const std::string& cache_path,
                     const std::string& out_dir, const std::string& weights_flag = {}) {
    return detail::run_command([&] {
        if (mode != "source-only" && mode != "rscn")
            throw usage_error("train mode must be 'source-only' or 'rscn', got '" + mode + "'");
        RunConfig cfg = load_run_config(config_path);
        if (!weights_flag.empty()) {
            const double lambda = cfg.train.weights.grl_lambda;
            cfg.train.weights = detail::parse_weights_flag(weights_flag);
            cfg.train.weights.grl_lambda = lambda;
        }
        Dataset dataset = load_dataset(dataset_dir);
        std::filesystem::create_directories(out_dir);
        write_file(std::filesystem::path(out_dir) / "config_echo.cfg", echo_config(cfg));

        TrainResult result;
        if (mode == "source-only") {
            result = train_source_only(cfg.train, dataset, out_dir);
        } else {
            if (cache_path.empty())
                throw usage_error("train --mode rscn requires --cache <prototype cache>");
            PrototypeCache cache = load_prototype_cache(cache_path);
            result = train_rscn(cfg.train, dataset, cache, out_dir);
        }
        std::cout << "checkpoint " << result.checkpoint_path.string() << " (hash "
                  << to_hex(result.checkpoint_hash) << ")\n";
        if (result.final_eval)
            std::cout << "final target_val mAP@50: " << detail::pct(result.final_eval->map50)
                      << "\n";
    });
}

inline int cmd_cache_protos(const std::string& checkpoint_path, const std::string& dataset_dir,
                            const std::string& out_path, const std::string& config_path = {}) {
    return detail::run_command([&] {
        int n_bg = TrainConfig{}.n_bg;
        int jitter = TrainConfig{}.jitter;
        if (!config_path.empty()) {
            RunConfig cfg = load_run_config(config_path);
            n_bg = cfg.train.n_bg;
            jitter = cfg.train.jitter;
        }
        Dataset dataset = load_dataset(dataset_dir);
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        if (std::filesystem::exists(out_path)) {
            PrototypeCache existing = load_prototype_cache(out_path);
            if (existing.ref_hash != ck.content_hash)
                throw integrity_error("existing cache " + out_path +
                                      " was produced by a different checkpoint (hash " +
                                      to_hex(existing.ref_hash) + " vs " +
                                      to_hex(ck.content_hash) + ")");
        }
        auto cache =
            cache_reference_prototypes(checkpoint_path, dataset, out_path, n_bg, jitter);
        std::cout << "cached prototypes for " << cache.by_id.size() << " source images to "
                  << out_path << " (ref hash " << to_hex(cache.ref_hash) << ")\n";
    });
}

inline int cmd_eval(const std::string& checkpoint_path, const std::string& dataset_dir,
                    const std::string& split_str, const std::string& out_path,
                    const std::string& baseline_path = {},
                    const std::string& config_path = {}) {
    return detail::run_command([&] {
        const Split split = split_from_name(split_str);
        Dataset dataset = load_dataset(dataset_dir);
        const Checkpoint ck = load_checkpoint(checkpoint_path);
        DetectorParams detector = detector_from_checkpoint(ck, "g", false);

        EvalSettings settings;
        settings.seed = dataset.manifest.seed;
        if (!config_path.empty()) {
            RunConfig cfg = load_run_config(config_path);
            settings = cfg.train.eval_settings();
            settings.seed = dataset.manifest.seed;
        }
        EvalReport report = evaluate_detector(detector, dataset, split, settings);
        report.checkpoint_hash = to_hex(ck.content_hash);

        std::optional<double> baseline_map;
        if (!baseline_path.empty()) {
            if (!std::filesystem::exists(baseline_path))
                throw usage_error("baseline report not found: " + baseline_path);
            auto j = ordered_json::parse(read_file(baseline_path));
            baseline_map = j.at("map50").get<double>();
        }
        write_file(out_path, report_to_json(report).dump(2) + "\n");

        std::cout << std::left << std::setw(14) << "split";
        for (uint16_t c = 0; c < dataset.manifest.spec.classes; ++c)
            std::cout << std::right << std::setw(9) << ("ap" + std::to_string(c));
        std::cout << std::right << std::setw(9) << "mAP";
        if (baseline_map) std::cout << std::setw(9) << "gain";
        std::cout << "\n";
        detail::print_eval_row(report, baseline_map, dataset.manifest.spec.classes, std::cout);
    });
}

struct AblationRow {
    std::string name;
    LossWeights weights;
};

inline std::vector<AblationRow> ablation_rows() {
    return {{"source_only", {1, 0, 0, 0, 1}},
            {"bpa", {1, 1, 0, 0, 1}},
            {"bpa_rsh", {1, 1, 1, 0, 1}},
            {"bpa_ssp", {1, 1, 0, 1, 1}},
            {"full", {1, 1, 1, 1, 1}}};
}

inline int cmd_ablate(const std::string& config_path, const std::string& dataset_dir,
                      const std::string& cache_path, const std::string& out_dir) {
    return detail::run_command([&] {
        RunConfig cfg = load_run_config(config_path);
        Dataset dataset = load_dataset(dataset_dir);
        PrototypeCache cache = load_prototype_cache(cache_path);
        std::filesystem::create_directories(out_dir);
        write_file(std::filesystem::path(out_dir) / "config_echo.cfg", echo_config(cfg));

        struct Outcome {
            std::string name;
            EvalReport report;
        };
        std::vector<Outcome> outcomes;
        for (const auto& row : ablation_rows()) {
            TrainConfig tc = cfg.train;
            const double lambda = tc.weights.grl_lambda;
            tc.weights = row.weights;
            tc.weights.grl_lambda = lambda;
            auto run_dir = std::filesystem::path(out_dir) / ("row_" + row.name);
            TrainResult res = train_rscn(tc, dataset, cache, run_dir);
            if (!res.final_eval) throw std::runtime_error("ablation row produced no final eval");
            outcomes.push_back({row.name, *res.final_eval});
            std::cout << "row " << row.name << ": mAP " << detail::pct(res.final_eval->map50)
                      << "\n";
        }

        const double base = outcomes.front().report.map50;
        std::ostringstream md, csv;
        md << "| configuration | mAP@50 | gain |\n|---|---|---|\n";
        csv << "configuration,map50,gain\n";
        for (const auto& o : outcomes) {
            const double gain = 100.0 * (o.report.map50 - base);
            std::ostringstream g;
            g << std::showpos << std::fixed << std::setprecision(1) << gain;
            md << "| " << o.name << " | " << detail::pct(o.report.map50) << " | "
               << (o.name == "source_only" ? std::string("-") : g.str()) << " |\n";
            csv << o.name << "," << o.report.map50 << ","
                << (o.report.map50 - base) << "\n";
        }
        write_file(std::filesystem::path(out_dir) / "table.md", md.str());
        write_file(std::filesystem::path(out_dir) / "table.csv", csv.str());
        std::cout << "\n" << md.str();
    });
}

inline int cmd_gradcheck(uint64_t seed = 0) {
    GradcheckOptions opts;
    opts.seed = seed;
    try {
        GradcheckReport report = run_gradcheck(opts);
        print_gradcheck_report(report, std::cout);
        return report.all_pass ? kExitOk : kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
}

}  // namespace rscn
