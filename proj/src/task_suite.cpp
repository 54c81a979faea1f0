#include "tamcl/task_suite.hpp"

#include "tamcl/errors.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <array>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace tamcl {

void validate(const TaskSpec& s) {
    auto fail = [&](const std::string& what) {
        throw ConfigError("task " + std::to_string(s.task_id) + ": " + what);
    };
    if (s.n_train == 0 || s.n_test == 0) fail("n_train and n_test must be positive");
    if (s.n_labels < 2) fail("n_labels must be at least 2");
    if (!(s.margin > 0.0)) fail("margin must be positive");
    if (s.margin > 1.0) fail("margin must not exceed 1");
    if (s.noise < 0.0) fail("noise must be non-negative");
    if (s.channels == 0 || s.motif == 0) fail("channels and motif size must be positive");
    if (s.image_height % s.motif != 0 || s.image_width % s.motif != 0) {
        fail("image " + std::to_string(s.image_height) + "x" + std::to_string(s.image_width) +
             " not divisible by motif size " + std::to_string(s.motif));
    }
    if (s.text_length == 0) fail("text_length must be positive");
    if (s.vocab < s.n_labels + 2) fail("vocab too small for " + std::to_string(s.n_labels) + " motif tokens");
}

PlantedSignals planted_signals(const TaskSpec& spec) {
    validate(spec);
    Rng rng(mix_seed(spec.seed, 0));
    PlantedSignals sig;
    const std::size_t len = spec.motif * spec.motif * spec.channels;
    std::bernoulli_distribution coin(0.5);
    std::set<std::vector<double>> seen;
    while (sig.motifs.size() < spec.n_labels) {
        std::vector<double> m(len);
        for (auto& v : m) v = coin(rng) ? 1.0 : -1.0;
        if (seen.insert(m).second) sig.motifs.push_back(std::move(m));
    }
    std::vector<int> ids(spec.vocab - 1);
    std::iota(ids.begin(), ids.end(), 1);  // id 0 is reserved for padding
    std::shuffle(ids.begin(), ids.end(), rng);
    sig.motif_tokens.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(spec.n_labels));
    sig.filler_tokens.assign(ids.begin() + static_cast<std::ptrdiff_t>(spec.n_labels), ids.end());
    return sig;
}

int planted_label(const TaskSpec& spec, std::span<const int> image_classes, int text_class) {
    const int k = static_cast<int>(spec.n_labels);
    if (!spec.cross_modal) return text_class;
    int total = text_class;
    for (int a : image_classes) total += a;
    return total % k;
}

RawExample plant_example(const TaskSpec& spec, const PlantedSignals& signals, std::span<const int> image_classes,
                         int text_class, Rng& rng) {
    std::normal_distribution<double> noise(0.0, spec.noise);
    const std::size_t grid_h = spec.image_height / spec.motif;
    const std::size_t grid_w = spec.image_width / spec.motif;
    std::uniform_int_distribution<std::size_t> cell(0, grid_h * grid_w - 1);

    RawExample ex;
    ex.task_id = spec.task_id;
    for (int a : image_classes) {
        Image img{spec.image_height, spec.image_width, spec.channels,
                  std::vector<double>(spec.image_height * spec.image_width * spec.channels)};
        for (auto& px : img.pixels) px = std::clamp(0.5 + (spec.noise > 0 ? noise(rng) : 0.0), 0.0, 1.0);
        const std::size_t at = cell(rng);
        const std::size_t y0 = (at / grid_w) * spec.motif;
        const std::size_t x0 = (at % grid_w) * spec.motif;
        const auto& motif = signals.motifs.at(static_cast<std::size_t>(a));
        for (std::size_t dy = 0; dy < spec.motif; ++dy) {
            for (std::size_t dx = 0; dx < spec.motif; ++dx) {
                for (std::size_t c = 0; c < spec.channels; ++c) {
                    const double m = motif[(dy * spec.motif + dx) * spec.channels + c];
                    auto& px = img.pixels[((y0 + dy) * spec.image_width + x0 + dx) * spec.channels + c];
                    px = std::clamp(0.5 + 0.5 * spec.margin * m + (spec.noise > 0 ? noise(rng) : 0.0), 0.0, 1.0);
                }
            }
        }
        ex.images.push_back(std::move(img));
    }
    std::uniform_int_distribution<std::size_t> filler(0, signals.filler_tokens.size() - 1);
    std::uniform_int_distribution<std::size_t> slot(0, spec.text_length - 1);
    ex.tokens.resize(spec.text_length);
    for (auto& t : ex.tokens) t = signals.filler_tokens[filler(rng)];
    ex.tokens[slot(rng)] = signals.motif_tokens.at(static_cast<std::size_t>(text_class));
    ex.label = planted_label(spec, image_classes, text_class);
    return ex;
}

namespace {

std::vector<RawExample> generate_split(const TaskSpec& spec, const PlantedSignals& sig, std::size_t n, Rng& rng) {
    const int k = static_cast<int>(spec.n_labels);
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % spec.n_labels);
    std::shuffle(labels.begin(), labels.end(), rng);

    std::uniform_int_distribution<int> cls(0, k - 1);
    const std::size_t n_images = spec.dual_image ? 2 : 1;
    std::vector<RawExample> out;
    out.reserve(n);
    std::vector<int> image_classes(n_images);
    for (int y : labels) {
        int text_class = y;
        if (spec.cross_modal) {
            int sum = 0;
            for (auto& a : image_classes) sum += (a = cls(rng));
            text_class = ((y - sum) % k + k) % k;
        } else {
            std::fill(image_classes.begin(), image_classes.end(), y);
        }
        out.push_back(plant_example(spec, sig, image_classes, text_class, rng));
    }
    return out;
}

}  // namespace

TaskData generate_task(const TaskSpec& spec) {
    const auto sig = planted_signals(spec);
    Rng train_rng(mix_seed(spec.seed, 1));
    Rng test_rng(mix_seed(spec.seed, 2));
    TaskData data;
    data.train = generate_split(spec, sig, spec.n_train, train_rng);
    data.test = generate_split(spec, sig, spec.n_test, test_rng);
    return data;
}

// ---------------------------------------------------------------------------
// Manifest

namespace {

int line_of(const YAML::Node& n) { return n.Mark().line + 1; }

template <typename T>
T scalar_field(const YAML::Node& node, const std::string& key) {
    try {
        return node.as<T>();
    } catch (const YAML::Exception&) {
        throw ValidationError("manifest line " + std::to_string(line_of(node)) + ": field '" + key +
                              "' has an invalid value");
    }
}

TaskSpec parse_task(const YAML::Node& node) {
    if (!node.IsMap()) {
        throw ValidationError("manifest line " + std::to_string(line_of(node)) + ": task entry must be a mapping");
    }
    TaskSpec s;
    bool has_id = false;
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        const auto& v = kv.second;
        if (key == "id") {
            s.task_id = scalar_field<int>(v, key);
            has_id = true;
        } else if (key == "name") {
            s.name = scalar_field<std::string>(v, key);
        } else if (key == "n_train") {
            s.n_train = scalar_field<std::size_t>(v, key);
        } else if (key == "n_test") {
            s.n_test = scalar_field<std::size_t>(v, key);
        } else if (key == "n_labels") {
            s.n_labels = scalar_field<std::size_t>(v, key);
        } else if (key == "image") {
            if (!v.IsSequence() || v.size() != 3) {
                throw ValidationError("manifest line " + std::to_string(line_of(v)) +
                                      ": 'image' must be [height, width, channels]");
            }
            s.image_height = scalar_field<std::size_t>(v[0], key);
            s.image_width = scalar_field<std::size_t>(v[1], key);
            s.channels = scalar_field<std::size_t>(v[2], key);
        } else if (key == "text_length") {
            s.text_length = scalar_field<std::size_t>(v, key);
        } else if (key == "vocab") {
            s.vocab = scalar_field<std::size_t>(v, key);
        } else if (key == "motif") {
            s.motif = scalar_field<std::size_t>(v, key);
        } else if (key == "dual_image") {
            s.dual_image = scalar_field<bool>(v, key);
        } else if (key == "cross_modal") {
            s.cross_modal = scalar_field<bool>(v, key);
        } else if (key == "seed") {
            s.seed = scalar_field<std::uint64_t>(v, key);
        } else if (key == "margin") {
            s.margin = scalar_field<double>(v, key);
        } else if (key == "noise") {
            s.noise = scalar_field<double>(v, key);
        } else {
            throw ValidationError("manifest line " + std::to_string(line_of(kv.first)) + ": unknown field '" + key + "'");
        }
    }
    if (!has_id) throw ValidationError("manifest line " + std::to_string(line_of(node)) + ": task without 'id'");
    if (s.name.empty()) s.name = "task" + std::to_string(s.task_id);
    try {
        validate(s);
    } catch (const ConfigError& e) {
        throw ValidationError("manifest line " + std::to_string(line_of(node)) + ": " + e.what());
    }
    return s;
}

}  // namespace

std::vector<TaskSpec> parse_manifest(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::ParserException& e) {
        throw ValidationError("manifest line " + std::to_string(e.mark.line + 1) + ": " + e.msg);
    }
    const YAML::Node tasks = root.IsMap() ? root["tasks"] : YAML::Node();
    if (!tasks || tasks.IsNull() || (tasks.IsSequence() && tasks.size() == 0)) {
        throw ValidationError("manifest: no tasks");
    }
    if (!tasks.IsSequence()) {
        throw ValidationError("manifest line " + std::to_string(line_of(tasks)) + ": 'tasks' must be a list");
    }
    std::vector<TaskSpec> specs;
    std::set<int> ids;
    for (const auto& node : tasks) {
        auto spec = parse_task(node);
        if (!ids.insert(spec.task_id).second) {
            throw ValidationError("manifest line " + std::to_string(line_of(node)) + ": duplicate task id " +
                                  std::to_string(spec.task_id));
        }
        specs.push_back(std::move(spec));
    }
    return specs;
}

std::vector<TaskSpec> load_manifest(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open manifest " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_manifest(ss.str());
}

std::string format_manifest(std::span<const TaskSpec> specs) {
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    out << YAML::BeginMap << YAML::Key << "tasks" << YAML::Value << YAML::BeginSeq;
    for (const auto& s : specs) {
        out << YAML::BeginMap;
        out << YAML::Key << "id" << YAML::Value << s.task_id;
        out << YAML::Key << "name" << YAML::Value << s.name;
        out << YAML::Key << "n_train" << YAML::Value << s.n_train;
        out << YAML::Key << "n_test" << YAML::Value << s.n_test;
        out << YAML::Key << "n_labels" << YAML::Value << s.n_labels;
        out << YAML::Key << "image" << YAML::Value << YAML::Flow << YAML::BeginSeq << s.image_height << s.image_width
            << s.channels << YAML::EndSeq;
        out << YAML::Key << "text_length" << YAML::Value << s.text_length;
        out << YAML::Key << "vocab" << YAML::Value << s.vocab;
        out << YAML::Key << "motif" << YAML::Value << s.motif;
        out << YAML::Key << "dual_image" << YAML::Value << s.dual_image;
        out << YAML::Key << "cross_modal" << YAML::Value << s.cross_modal;
        out << YAML::Key << "seed" << YAML::Value << s.seed;
        out << YAML::Key << "margin" << YAML::Value << s.margin;
        out << YAML::Key << "noise" << YAML::Value << s.noise;
        out << YAML::EndMap;
    }
    out << YAML::EndSeq << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

void write_manifest(const std::filesystem::path& path, std::span<const TaskSpec> specs) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write manifest " + path.string());
    os << format_manifest(specs);
}

// ---------------------------------------------------------------------------
// Dataset cache

namespace {

constexpr std::array<char, 8> kDatasetMagic = {'T', 'A', 'M', 'C', 'L', 'D', 'S', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("dataset: unexpected end of file");
    return v;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, std::span<const RawExample> examples) {
    if (examples.empty()) throw ContractError("write_dataset: no examples");
    const auto& first = examples.front();
    const Image& img0 = first.images.at(0);
    for (const auto& ex : examples) {
        if (ex.task_id != first.task_id || ex.images.size() != first.images.size() ||
            ex.tokens.size() != first.tokens.size()) {
            throw ShapeError("write_dataset: examples must share task, image count and text length");
        }
        for (const auto& img : ex.images) {
            if (img.height != img0.height || img.width != img0.width || img.channels != img0.channels) {
                throw ShapeError("write_dataset: examples must share image shape");
            }
        }
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write dataset " + path.string());
    os.write(kDatasetMagic.data(), kDatasetMagic.size());
    put<std::uint32_t>(os, kDatasetVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(first.task_id));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(examples.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(img0.height));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(img0.width));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(img0.channels));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(first.images.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(first.tokens.size()));
    for (const auto& ex : examples) {
        put<std::int32_t>(os, ex.label);
        for (const auto& img : ex.images) {
            os.write(reinterpret_cast<const char*>(img.pixels.data()),
                     static_cast<std::streamsize>(img.pixels.size() * sizeof(double)));
        }
        for (int t : ex.tokens) put<std::int32_t>(os, t);
    }
    if (!os) throw IoError("failed writing dataset " + path.string());
}

std::vector<RawExample> read_dataset(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open dataset " + path.string());
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kDatasetMagic) {
        throw IoError(path.string() + " is not a dataset file");
    }
    if (auto v = take<std::uint32_t>(is); v != kDatasetVersion) {
        throw IoError("unsupported dataset version " + std::to_string(v));
    }
    const int task_id = static_cast<int>(take<std::uint32_t>(is));
    const auto count = take<std::uint32_t>(is);
    const auto h = take<std::uint32_t>(is), w = take<std::uint32_t>(is), c = take<std::uint32_t>(is);
    const auto n_images = take<std::uint32_t>(is);
    const auto text_len = take<std::uint32_t>(is);
    std::vector<RawExample> out(count);
    for (auto& ex : out) {
        ex.task_id = task_id;
        ex.label = take<std::int32_t>(is);
        for (std::uint32_t k = 0; k < n_images; ++k) {
            Image img{h, w, c, std::vector<double>(std::size_t(h) * w * c)};
            if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
                         static_cast<std::streamsize>(img.pixels.size() * sizeof(double)))) {
                throw IoError("dataset: truncated pixel data");
            }
            ex.images.push_back(std::move(img));
        }
        ex.tokens.resize(text_len);
        for (auto& t : ex.tokens) t = take<std::int32_t>(is);
    }
    return out;
}

}  // namespace tamcl
