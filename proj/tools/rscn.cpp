// Command-line front end: gen-data, train, cache-protos, eval, ablate,
// gradcheck. Every run is a pure function of its flags and input files; all
// randomness flows from the config seed.

#include <CLI11.hpp>

#include "rscn/commands.hpp"

int main(int argc, char** argv) {
    CLI::App app{"synthetic instance-free domain-adaptation detection lab"};
    app.require_subcommand(1);

    std::string config, out, data, cache, checkpoint, split, baseline, weights, mode;
    uint64_t seed = 0;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic benchmark");
    gen->add_option("--config", config, "run config file")->required();
    gen->add_option("--out", out, "output dataset directory")->required();

    auto* train = app.add_subcommand("train", "train a detector");
    train->add_option("--mode", mode, "source-only or rscn")->required();
    train->add_option("--config", config, "run config file")->required();
    train->add_option("--data", data, "dataset directory")->required();
    train->add_option("--cache", cache, "reference prototype cache (rscn mode)");
    train->add_option("--out", out, "run output directory")->required();
    train->add_option("--weights", weights, "override loss weights: det,bpa,rsh,ssp");

    auto* cp = app.add_subcommand("cache-protos", "precompute reference prototypes");
    cp->add_option("--checkpoint", checkpoint, "reference detector checkpoint")->required();
    cp->add_option("--data", data, "dataset directory")->required();
    cp->add_option("--out", out, "output cache file")->required();
    cp->add_option("--config", config, "run config file (proposal settings)");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    ev->add_option("--checkpoint", checkpoint, "detector checkpoint")->required();
    ev->add_option("--data", data, "dataset directory")->required();
    ev->add_option("--split", split, "source_train, target_train or target_val")->required();
    ev->add_option("--out", out, "output report path (JSON)")->required();
    ev->add_option("--baseline", baseline, "baseline report for the gain column");
    ev->add_option("--config", config, "run config file (eval thresholds)");

    auto* ab = app.add_subcommand("ablate", "run the constraint ablation grid");
    ab->add_option("--config", config, "run config file")->required();
    ab->add_option("--data", data, "dataset directory")->required();
    ab->add_option("--cache", cache, "reference prototype cache")->required();
    ab->add_option("--out", out, "output directory")->required();

    auto* gc = app.add_subcommand("gradcheck", "finite-difference verification suite");
    gc->add_option("--seed", seed, "suite seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return rscn::kExitUsage;
    }

    if (gen->parsed()) return rscn::cmd_gen_data(config, out);
    if (train->parsed()) return rscn::cmd_train(mode, config, data, cache, out, weights);
    if (cp->parsed()) return rscn::cmd_cache_protos(checkpoint, data, out, config);
    if (ev->parsed()) return rscn::cmd_eval(checkpoint, data, split, out, baseline, config);
    if (ab->parsed()) return rscn::cmd_ablate(config, data, cache, out);
    if (gc->parsed()) return rscn::cmd_gradcheck(seed);
    return rscn::kExitUsage;
}
