#include "tamcl/experiment.hpp"

#include "tamcl/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

namespace tamcl {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::trunc | std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << text;
}

std::string exact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[noreturn]] void bad_key(const YAML::Node& key, const std::string& section) {
    throw ValidationError("run config line " + std::to_string(key.Mark().line + 1) + ": unknown key '" +
                          key.as<std::string>() + "'" + (section.empty() ? "" : " in '" + section + "'"));
}

template <typename T>
T value_of(const YAML::Node& node, const std::string& key) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ValidationError("run config line " + std::to_string(node.Mark().line + 1) + ": invalid value for '" +
                              key + "'");
    }
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const fs::path& base_dir) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ValidationError("run config line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    if (!root.IsMap()) throw ValidationError("run config: expected a mapping at top level");

    RunConfig c;
    std::optional<std::size_t> frozen;
    bool have_tasks = false;
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        const auto& v = kv.second;
        if (key == "manifest") {
            c.manifest = value_of<std::string>(v, key);
            if (c.manifest.is_relative() && !base_dir.empty()) c.manifest = base_dir / c.manifest;
        } else if (key == "tasks") {
            YAML::Emitter e;
            e << YAML::BeginMap << YAML::Key << "tasks" << YAML::Value << v << YAML::EndMap;
            c.tasks = parse_manifest(e.c_str());
            have_tasks = true;
        } else if (key == "seed") {
            c.seed = value_of<std::uint64_t>(v, key);
        } else if (key == "output") {
            c.output_dir = value_of<std::string>(v, key);
        } else if (key == "model") {
            for (const auto& m : v) {
                const auto k = m.first.as<std::string>();
                const auto& x = m.second;
                if (k == "hidden") c.model.hidden = value_of<std::size_t>(x, k);
                else if (k == "heads") c.model.heads = value_of<std::size_t>(x, k);
                else if (k == "mlp_dim") c.model.mlp_dim = value_of<std::size_t>(x, k);
                else if (k == "depth") c.model.depth = value_of<std::size_t>(x, k);
                else if (k == "patch") c.model.patch = value_of<std::size_t>(x, k);
                else if (k == "frozen_layers") frozen = value_of<std::size_t>(x, k);
                else bad_key(m.first, "model");
            }
        } else if (key == "trainer") {
            auto& t = c.trainer;
            for (const auto& m : v) {
                const auto k = m.first.as<std::string>();
                const auto& x = m.second;
                if (k == "lr") t.lr = value_of<double>(x, k);
                else if (k == "beta1") t.beta1 = value_of<double>(x, k);
                else if (k == "beta2") t.beta2 = value_of<double>(x, k);
                else if (k == "eps") t.eps = value_of<double>(x, k);
                else if (k == "weight_decay") t.weight_decay = value_of<double>(x, k);
                else if (k == "epochs") t.epochs = value_of<std::size_t>(x, k);
                else if (k == "batch_size") t.batch_size = value_of<std::size_t>(x, k);
                else if (k == "replay_fraction") t.replay_fraction = value_of<double>(x, k);
                else if (k == "replay_every") t.replay_every = value_of<std::size_t>(x, k);
                else if (k == "alpha") t.alpha = value_of<double>(x, k);
                else if (k == "task_alpha") t.task_alpha = value_of<std::map<int, double>>(x, k);
                else if (k == "temperature") t.temperature = value_of<double>(x, k);
                else if (k == "div_mode") t.div_mode = parse_div_mode(value_of<std::string>(x, k));
                else bad_key(m.first, "trainer");
            }
        } else if (key == "ablate") {
            for (const auto& a : v) {
                const auto name = value_of<std::string>(a, key);
                if (name == "no_tab") c.trainer.ablations.no_tab = true;
                else if (name == "no_ikd") c.trainer.ablations.no_ikd = true;
                else if (name == "no_replay") c.trainer.ablations.no_replay = true;
                else throw ValidationError("run config line " + std::to_string(a.Mark().line + 1) +
                                           ": unknown ablation '" + name + "'");
            }
        } else {
            bad_key(kv.first, "");
        }
    }
    c.model.frozen_layers = frozen.value_or(default_frozen_count(c.model.depth));
    if (!have_tasks && !c.manifest.empty()) c.tasks = load_manifest(c.manifest);
    if (c.tasks.empty()) throw ValidationError("run config: no manifest or tasks given");
    derive_model_inputs(c);
    return c;
}

RunConfig load_run_config(const fs::path& path) {
    return parse_run_config(read_text(path), path.parent_path());
}

void derive_model_inputs(RunConfig& c) {
    if (c.tasks.empty()) throw ConfigError("run: no tasks");
    const auto& first = c.tasks.front();
    c.model.image_height = first.image_height;
    c.model.image_width = first.image_width;
    c.model.channels = first.channels;
    c.model.max_text = 0;
    c.model.vocab = 0;
    for (const auto& t : c.tasks) {
        if (t.image_height != first.image_height || t.image_width != first.image_width ||
            t.channels != first.channels) {
            throw ConfigError("run: task " + std::to_string(t.task_id) + " image shape differs from task " +
                              std::to_string(first.task_id));
        }
        c.model.max_text = std::max(c.model.max_text, t.text_length);
        c.model.vocab = std::max(c.model.vocab, t.vocab);
    }
    c.model.use_tab = !c.trainer.ablations.no_tab;
}

std::string format_run_config(const RunConfig& c) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap;
    out << YAML::Key << "seed" << YAML::Value << c.seed;
    out << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "hidden" << YAML::Value << c.model.hidden;
    out << YAML::Key << "heads" << YAML::Value << c.model.heads;
    out << YAML::Key << "mlp_dim" << YAML::Value << c.model.mlp_dim;
    out << YAML::Key << "depth" << YAML::Value << c.model.depth;
    out << YAML::Key << "patch" << YAML::Value << c.model.patch;
    out << YAML::Key << "frozen_layers" << YAML::Value << c.model.frozen_layers;
    out << YAML::EndMap;
    const auto& t = c.trainer;
    out << YAML::Key << "trainer" << YAML::Value << YAML::BeginMap;
    out << YAML::Key << "lr" << YAML::Value << t.lr;
    out << YAML::Key << "beta1" << YAML::Value << t.beta1;
    out << YAML::Key << "beta2" << YAML::Value << t.beta2;
    out << YAML::Key << "eps" << YAML::Value << t.eps;
    out << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
    out << YAML::Key << "epochs" << YAML::Value << t.epochs;
    out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
    out << YAML::Key << "replay_fraction" << YAML::Value << t.replay_fraction;
    out << YAML::Key << "replay_every" << YAML::Value << t.replay_every;
    out << YAML::Key << "alpha" << YAML::Value << t.alpha;
    out << YAML::Key << "task_alpha" << YAML::Value << YAML::BeginMap;
    for (const auto& [id, a] : t.task_alpha) out << YAML::Key << id << YAML::Value << a;
    out << YAML::EndMap;
    out << YAML::Key << "temperature" << YAML::Value << t.temperature;
    out << YAML::Key << "div_mode" << YAML::Value << to_string(t.div_mode);
    out << YAML::EndMap;
    out << YAML::Key << "ablate" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    if (t.ablations.no_tab) out << "no_tab";
    if (t.ablations.no_ikd) out << "no_ikd";
    if (t.ablations.no_replay) out << "no_replay";
    out << YAML::EndSeq;
    out << YAML::EndMap;
    // Inline the task list so the file is a self-contained run config.
    return std::string(out.c_str()) + "\n" + format_manifest(c.tasks);
}

std::string config_hash(const RunConfig& config) {
    const std::string text = format_run_config(config);
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::string metrics_header() {
    return "current_task,batch_task,tasks_seen,epoch,step,replay,l_c,l_ikd,l_div,lambda,alpha,beta,total";
}

std::string metrics_row(const StepLog& l) {
    std::ostringstream os;
    os << l.current_task << ',' << l.batch_task << ',' << l.tasks_seen << ',' << l.epoch << ',' << l.step << ','
       << (l.replay ? 1 : 0) << ',' << exact(l.l_c) << ',' << exact(l.l_ikd) << ',' << exact(l.l_div) << ','
       << exact(l.lambda) << ',' << exact(l.alpha) << ',' << exact(l.beta) << ',' << exact(l.total);
    return os.str();
}

RunResult run_experiment(const RunConfig& config, const RunObserver& observer) {
    const bool write = !config.output_dir.empty();
    const fs::path out = config.output_dir;
    std::ofstream metrics;
    if (write) {
        fs::create_directories(out / "checkpoints");
        write_text(out / "config.yaml", format_run_config(config));
        metrics.open(out / "metrics.csv", std::ios::trunc | std::ios::binary);
        if (!metrics) throw IoError("cannot write " + (out / "metrics.csv").string());
        metrics << metrics_header() << '\n';
    }

    try {
        auto model = TamClModel::init(config.model, mix_seed(config.seed, 10));
        ReplayBuffer buffer(config.trainer.replay_fraction, mix_seed(config.seed, 11));
        Rng rng(mix_seed(config.seed, 12));

        std::vector<int> ids;
        std::vector<std::size_t> labels, n_train;
        for (const auto& t : config.tasks) {
            ids.push_back(t.task_id);
            labels.push_back(t.n_labels);
            n_train.push_back(t.n_train);
        }
        AccuracyMatrix matrix(ids, labels);
        std::vector<TaskData> data;
        data.reserve(config.tasks.size());

        RunResult result;
        const StepObserver step_hook = [&](const StepLog& log, const TamClModel& m, const TamClModel* teacher) {
            if (write) metrics << metrics_row(log) << '\n';
            if (observer.on_step) observer.on_step(log, m, teacher);
        };
        for (std::size_t i = 0; i < config.tasks.size(); ++i) {
            const auto& spec = config.tasks[i];
            data.push_back(generate_task(spec));
            result.tasks.push_back(train_task(model, spec.task_id, static_cast<Index>(spec.n_labels), data[i].train,
                                              buffer, config.trainer, rng, step_hook));
            for (std::size_t j = 0; j <= i; ++j) {
                matrix.set(j, i, evaluate(model, config.tasks[j].task_id, data[j].test));
            }
            if (write) {
                metrics.flush();
                model.save(out / "checkpoints" / ("after_task_" + std::to_string(spec.task_id) + ".ckpt"));
            }
            if (observer.on_task_end) observer.on_task_end(i, model);
        }

        result.report = build_report(matrix, n_train);
        result.report.seed = config.seed;
        result.report.config_hash = config_hash(config);
        if (write) {
            model.save(out / "final.ckpt");
            write_text(out / "report.json", result.report.to_json());
            write_text(out / "report.csv", result.report.to_csv());
            write_text(out / "report.txt", result.report.to_text());
        }
        return result;
    } catch (const std::exception& e) {
        if (write) {
            metrics.flush();
            write_text(out / "error.txt", std::string(e.what()) + "\n");
        }
        throw;
    }
}

std::string render_report(const fs::path& run_dir) {
    std::vector<std::string> missing;
    for (const char* name : {"report.json", "metrics.csv"}) {
        if (!fs::exists(run_dir / name)) missing.push_back(name);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
        throw IoError("run directory " + run_dir.string() + " is missing: " + list);
    }
    const auto stored = ForgettingReport::from_json(read_text(run_dir / "report.json"));
    // Recompute every derived number from the raw accuracy matrix.
    std::vector<std::size_t> n_train;
    for (const auto& t : stored.tasks) n_train.push_back(t.n_train);
    auto report = build_report(stored.accuracy, n_train);
    report.seed = stored.seed;
    report.config_hash = stored.config_hash;

    std::istringstream metrics(read_text(run_dir / "metrics.csv"));
    std::ostringstream traces;
    traces << "index,current_task,batch_task,replay,lambda,beta,l_c,l_ikd,l_div,total\n";
    std::string line;
    std::getline(metrics, line);
    if (line != metrics_header()) throw ValidationError("metrics.csv: unexpected header");
    std::size_t index = 0;
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 13) throw ValidationError("metrics.csv line " + std::to_string(index + 2) + ": expected 13 fields");
        traces << index++ << ',' << f[0] << ',' << f[1] << ',' << f[5] << ',' << f[9] << ',' << f[11] << ',' << f[6]
               << ',' << f[7] << ',' << f[8] << ',' << f[12] << '\n';
    }
    write_text(run_dir / "traces.csv", traces.str());

    std::ostringstream os;
    os << "seed " << report.seed << "  config " << report.config_hash << "\n\n" << report.to_text();
    return os.str();
}

void materialize_datasets(const std::vector<TaskSpec>& tasks, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    for (const auto& spec : tasks) {
        const auto data = generate_task(spec);
        const auto stem = "task_" + std::to_string(spec.task_id);
        write_dataset(out_dir / (stem + "_train.bin"), data.train);
        write_dataset(out_dir / (stem + "_test.bin"), data.test);
    }
}

}  // namespace tamcl
