#include "tamcl/errors.hpp"
#include "tamcl/experiment.hpp"
#include "tamcl/gradcheck.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

namespace fs = std::filesystem;
using namespace tamcl;

struct RunFlags {
    std::string config;
    std::string manifest;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::vector<std::string> ablate;
    std::optional<std::size_t> hidden, heads, mlp_dim, depth, patch, frozen_layers;
    std::optional<std::size_t> epochs, batch, replay_every;
    std::optional<double> lr, weight_decay, replay_fraction, alpha, temperature;
    std::optional<std::string> div_mode;
    bool quiet = false;
};

fs::path output_root() {
    const char* root = std::getenv("TAMCL_OUTPUT_ROOT");
    return root && *root ? fs::path(root) : fs::path("runs");
}

RunConfig build_config(const RunFlags& f) {
    RunConfig c;
    if (!f.config.empty()) c = load_run_config(f.config);
    if (!f.manifest.empty()) {
        c.manifest = f.manifest;
        c.tasks = load_manifest(c.manifest);
    }
    if (c.tasks.empty()) throw ConfigError("run: give --manifest or a --config naming one");
    if (f.seed) c.seed = *f.seed;

    auto& m = c.model;
    if (f.hidden) m.hidden = *f.hidden;
    if (f.heads) m.heads = *f.heads;
    if (f.mlp_dim) m.mlp_dim = *f.mlp_dim;
    if (f.patch) m.patch = *f.patch;
    if (f.depth) {
        m.depth = *f.depth;
        m.frozen_layers = default_frozen_count(m.depth);
    }
    if (f.frozen_layers) m.frozen_layers = *f.frozen_layers;

    auto& t = c.trainer;
    if (f.epochs) t.epochs = *f.epochs;
    if (f.batch) t.batch_size = *f.batch;
    if (f.replay_every) t.replay_every = *f.replay_every;
    if (f.lr) t.lr = *f.lr;
    if (f.weight_decay) t.weight_decay = *f.weight_decay;
    if (f.replay_fraction) t.replay_fraction = *f.replay_fraction;
    if (f.alpha) t.alpha = *f.alpha;
    if (f.temperature) t.temperature = *f.temperature;
    if (f.div_mode) t.div_mode = parse_div_mode(*f.div_mode);
    for (const auto& a : f.ablate) {
        if (a == "no_tab") t.ablations.no_tab = true;
        else if (a == "no_ikd") t.ablations.no_ikd = true;
        else if (a == "no_replay") t.ablations.no_replay = true;
        else throw ConfigError("unknown ablation '" + a + "' (expected no_tab, no_ikd or no_replay)");
    }
    derive_model_inputs(c);

    if (!f.out.empty()) {
        c.output_dir = f.out;
    } else if (c.output_dir.empty()) {
        std::string name = (c.manifest.empty() ? std::string("run") : c.manifest.stem().string()) + "-seed" +
                           std::to_string(c.seed);
        if (t.ablations.no_tab) name += "-no_tab";
        if (t.ablations.no_ikd) name += "-no_ikd";
        if (t.ablations.no_replay) name += "-no_replay";
        c.output_dir = output_root() / name;
    }
    return c;
}

int cmd_run(const RunFlags& flags) {
    const auto config = build_config(flags);
    RunObserver observer;
    observer.on_task_end = [&](std::size_t i, const TamClModel&) {
        if (!flags.quiet) std::cerr << "finished task " << config.tasks[i].task_id << '\n';
    };
    const auto result = run_experiment(config, observer);
    if (!flags.quiet) std::cout << result.report.to_text();
    std::cout << "artifacts in " << config.output_dir.string() << '\n';
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Task-attentive continual learning experiments"};
    app.require_subcommand(1);

    RunFlags rf;
    auto* run = app.add_subcommand("run", "Train a task sequence and write report, metrics and checkpoints");
    run->add_option("--config", rf.config, "Run config YAML")->check(CLI::ExistingFile);
    run->add_option("--manifest", rf.manifest, "Task manifest YAML")->check(CLI::ExistingFile);
    run->add_option("--out", rf.out, "Output directory (default $TAMCL_OUTPUT_ROOT or runs/)");
    run->add_option("--seed", rf.seed, "Model, replay and shuffle seed");
    run->add_option("--ablate", rf.ablate, "no_tab, no_ikd or no_replay (repeatable)");
    run->add_option("--hidden", rf.hidden, "Hidden size G");
    run->add_option("--heads", rf.heads, "Attention heads h");
    run->add_option("--mlp-dim", rf.mlp_dim, "MLP inner width");
    run->add_option("--depth", rf.depth, "Encoder depth D");
    run->add_option("--patch", rf.patch, "Patch side P");
    run->add_option("--frozen-layers", rf.frozen_layers, "Leading encoder blocks kept frozen");
    run->add_option("--epochs", rf.epochs, "Epochs per task");
    run->add_option("--batch", rf.batch, "Batch size");
    run->add_option("--lr", rf.lr, "AdamW learning rate");
    run->add_option("--weight-decay", rf.weight_decay, "AdamW weight decay");
    run->add_option("--replay-fraction", rf.replay_fraction, "Fraction of each task stored for replay");
    run->add_option("--replay-every", rf.replay_every, "Replay cadence in steps");
    run->add_option("--alpha", rf.alpha, "Distillation weight");
    run->add_option("--temperature", rf.temperature, "Distillation temperature");
    run->add_option("--div-mode", rf.div_mode, "repel or literal");
    run->add_flag("-q,--quiet", rf.quiet, "Only print the artifact directory");

    std::string run_dir;
    auto* report = app.add_subcommand("report", "Render tables and traces of a finished run");
    report->add_option("run_dir", run_dir, "Run directory")->required();

    std::string gen_manifest, gen_out;
    auto* gen = app.add_subcommand("gen", "Materialise the datasets of a manifest");
    gen->add_option("--manifest", gen_manifest, "Task manifest YAML")->required()->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output directory")->required();

    std::uint64_t check_seed = 0;
    auto* check = app.add_subcommand("check", "Run the finite-difference and invariant checks");
    check->add_option("--seed", check_seed, "Seed of the toy problems");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(rf);
        if (*report) {
            std::cout << render_report(run_dir);
            return 0;
        }
        if (*gen) {
            const auto tasks = load_manifest(gen_manifest);
            materialize_datasets(tasks, gen_out);
            std::cout << "wrote " << tasks.size() * 2 << " datasets to " << gen_out << '\n';
            return 0;
        }
        if (*check) {
            bool ok = true;
            for (const auto& r : run_self_check(check_seed)) {
                std::cout << (r.passed ? "PASS " : "FAIL ") << r.name << ": " << r.detail << '\n';
                ok = ok && r.passed;
            }
            return ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
