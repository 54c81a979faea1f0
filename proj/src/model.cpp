#include "tamcl/model.hpp"

#include "tamcl/errors.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace tamcl {

namespace {

constexpr std::array<char, 8> kCheckpointMagic = {'T', 'A', 'M', 'C', 'L', 'C', 'K', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

void fnv(std::uint64_t& h, const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
}

template <typename T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("checkpoint: unexpected end of file");
    return v;
}

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"hidden", c.hidden},         {"heads", c.heads},
            {"mlp_dim", c.mlp_dim},       {"depth", c.depth},
            {"patch", c.patch},           {"image_height", c.image_height},
            {"image_width", c.image_width}, {"channels", c.channels},
            {"max_text", c.max_text},     {"vocab", c.vocab},
            {"frozen_layers", c.frozen_layers}, {"use_tab", c.use_tab}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.hidden = j.at("hidden");
    c.heads = j.at("heads");
    c.mlp_dim = j.at("mlp_dim");
    c.depth = j.at("depth");
    c.patch = j.at("patch");
    c.image_height = j.at("image_height");
    c.image_width = j.at("image_width");
    c.channels = j.at("channels");
    c.max_text = j.at("max_text");
    c.vocab = j.at("vocab");
    c.frozen_layers = j.at("frozen_layers");
    c.use_tab = j.at("use_tab");
    return c;
}

}  // namespace

std::uint64_t hash_parameters(const std::vector<NamedParameter>& params) {
    std::uint64_t h = 14695981039346656037ULL;
    for (const auto& p : params) {
        fnv(h, p.name.data(), p.name.size());
        const Index dims[2] = {p.tensor.rows(), p.tensor.cols()};
        fnv(h, dims, sizeof(dims));
        fnv(h, p.tensor.value().data(), sizeof(double) * std::size_t(p.tensor.value().size()));
    }
    return h;
}

TamClModel TamClModel::init(const ModelConfig& config, std::uint64_t seed) {
    if (config.hidden % config.heads != 0) {
        throw ConfigError("model: hidden width " + std::to_string(config.hidden) +
                          " not divisible by " + std::to_string(config.heads) + " heads");
    }
    TamClModel m;
    m.config_ = config;
    Rng rng(seed);
    m.embedding_ = EmbeddingParams::init(config.embedding(), rng);
    m.encoder_ = EncoderStack::init(config.encoder(), rng);
    set_frozen(m.encoder_, config.frozen_layers);
    m.tab_ = TaskAttentionBlock::init(config.hidden, config.heads, config.mlp_dim, rng);
    m.rng_ = Rng(mix_seed(seed, 1));
    return m;
}

void TamClModel::rebind_parameters(bool requires_grad) {
    // The visitors hand out const references to members of *this; every
    // handle is replaced by a fresh leaf holding a copy of its value.
    auto rebind = [requires_grad](const std::string&, const ad::Tensor& t) {
        auto fresh = requires_grad ? ad::Tensor::parameter(t.value()) : ad::Tensor::constant(t.value());
        const_cast<ad::Tensor&>(t) = std::move(fresh);
    };
    embedding_.for_each_parameter(rebind);
    encoder_.for_each_parameter(rebind);
    tab_.for_each_parameter(rebind);
    for (const auto& tok : tokens_.tokens()) rebind("", tok.tau);
    for (const auto& head : heads_.heads()) {
        rebind("", head.weight);
        rebind("", head.bias);
    }
}

TamClModel TamClModel::clone() const {
    TamClModel copy;
    copy.config_ = config_;
    copy.rng_ = rng_;
    copy.embedding_ = embedding_;
    copy.encoder_ = encoder_;
    copy.tab_ = tab_;
    copy.tokens_ = tokens_;
    copy.heads_ = heads_;
    copy.tasks_ = tasks_;
    copy.rebind_parameters(true);
    return copy;
}

TamClModel TamClModel::clone_frozen() const {
    TamClModel copy = clone();
    copy.freeze_all();
    return copy;
}

void TamClModel::register_task(int task_id, Index classes) {
    if (tokens_.contains(task_id)) {
        throw RegistryError("task " + std::to_string(task_id) + " already registered");
    }
    init_task_token(tokens_, task_id, config_.hidden, rng_);
    heads_.add(expand_classifier(heads_.latest(), task_id, classes, config_.hidden, rng_));
    tasks_.push_back({task_id, classes});
}

void TamClModel::set_training_task(int task_id, std::optional<int> batch_task) {
    if (!tokens_.contains(task_id)) throw RoutingError("no task " + std::to_string(task_id) + " registered");
    const bool own_batch = batch_task.value_or(task_id) == task_id;
    auto set = [](ad::Tensor t, bool flag) { t.set_requires_grad(flag); };
    embedding_.for_each_parameter([&](const std::string&, const ad::Tensor& t) { set(t, true); });
    for (std::size_t d = 0; d < encoder_.depth(); ++d) {
        encoder_.blocks[d].for_each_parameter("", [&](const std::string&, const ad::Tensor& t) {
            set(t, !encoder_.frozen[d]);
        });
    }
    tab_.for_each_parameter([&](const std::string&, const ad::Tensor& t) { set(t, config_.use_tab); });
    for (const auto& tok : tokens_.tokens()) set(tok.tau, config_.use_tab && tok.task_id == task_id);
    for (const auto& head : heads_.heads()) {
        set(head.weight, own_batch && head.task_id == task_id);
        set(head.bias, own_batch && head.task_id == task_id);
    }
}

void TamClModel::freeze_all() {
    for (auto& p : named_parameters()) p.tensor.set_requires_grad(false);
}

std::vector<ad::Tensor> TamClModel::encode_features(const RawExample& example) const {
    if (example.images.empty() || example.images.size() > 2) {
        throw ShapeError("model: expected 1 or 2 images, got " + std::to_string(example.images.size()));
    }
    auto text = embed_text(example.tokens, embedding_);
    std::vector<ad::Tensor> out;
    for (const auto& image : example.images) {
        auto fused = fuse(embed_image(image, embedding_), text, embedding_);
        out.push_back(encode(fused.s0, encoder_));
    }
    return out;
}

ModelOutput TamClModel::forward(const RawExample& example) const {
    ModelOutput out;
    out.features = encode_features(example);
    const auto& head = heads_.find(example.task_id);

    ad::Tensor sequence;
    if (out.features.size() == 2) {
        const ad::Tensor pooled[] = {ad::slice_rows(out.features[0], 0, 1), ad::slice_rows(out.features[1], 0, 1)};
        sequence = compress_dual(ad::concat_cols(pooled));
    } else {
        sequence = out.features[0];
    }
    if (config_.use_tab) {
        out.task_features = task_attend(sequence, tokens_.find(example.task_id), tab_);
    } else {
        out.task_features = ad::slice_rows(sequence, 0, 1);
    }
    out.logits = classify(out.task_features, head);
    out.owned = owned_logits(out.logits, head);
    return out;
}

std::vector<NamedParameter> TamClModel::named_parameters() const {
    std::vector<NamedParameter> out;
    auto collect = [&](const std::string& prefix) {
        return [&out, prefix](const std::string& name, const ad::Tensor& t) { out.push_back({prefix + name, t}); };
    };
    embedding_.for_each_parameter(collect("embedding."));
    encoder_.for_each_parameter(collect(""));
    tab_.for_each_parameter(collect(""));
    for (const auto& tok : tokens_.tokens()) out.push_back({"token." + std::to_string(tok.task_id), tok.tau});
    for (const auto& head : heads_.heads()) {
        out.push_back({"head." + std::to_string(head.task_id) + ".weight", head.weight});
        out.push_back({"head." + std::to_string(head.task_id) + ".bias", head.bias});
    }
    return out;
}

std::vector<NamedParameter> TamClModel::trainable_parameters() const {
    std::vector<NamedParameter> out;
    for (auto& p : named_parameters()) {
        if (p.tensor.requires_grad()) out.push_back(std::move(p));
    }
    return out;
}

void TamClModel::zero_grad() const {
    for (auto& p : named_parameters()) p.tensor.zero_grad();
}

// Layout (little-endian):
//   char[8]  magic "TAMCLCK1"
//   u32      version
//   u32      metadata byte length, followed by UTF-8 JSON metadata
//   u32      parameter count
//   per parameter: u32 name length, name bytes, u32 rows, u32 cols,
//                  rows*cols f64 values in row-major order
void TamClModel::save(const std::filesystem::path& path) const {
    nlohmann::json meta;
    meta["config"] = config_to_json(config_);
    meta["frozen"] = encoder_.frozen;
    meta["tasks"] = nlohmann::json::array();
    for (const auto& t : tasks_) meta["tasks"].push_back({{"task_id", t.task_id}, {"classes", t.classes}});
    std::ostringstream rng_state;
    rng_state << rng_;
    meta["rng"] = rng_state.str();
    const std::string meta_text = meta.dump();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint " + path.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    write_pod(os, kCheckpointVersion);
    write_pod(os, static_cast<std::uint32_t>(meta_text.size()));
    os.write(meta_text.data(), static_cast<std::streamsize>(meta_text.size()));
    const auto params = named_parameters();
    write_pod(os, static_cast<std::uint32_t>(params.size()));
    for (const auto& p : params) {
        write_pod(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(os, static_cast<std::uint32_t>(p.tensor.rows()));
        write_pod(os, static_cast<std::uint32_t>(p.tensor.cols()));
        os.write(reinterpret_cast<const char*>(p.tensor.value().data()),
                 static_cast<std::streamsize>(sizeof(double) * std::size_t(p.tensor.value().size())));
    }
    if (!os) throw IoError("failed writing checkpoint " + path.string());
}

TamClModel TamClModel::load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
        throw IoError(path.string() + " is not a checkpoint file");
    }
    if (auto v = read_pod<std::uint32_t>(is); v != kCheckpointVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(v));
    }
    std::string meta_text(read_pod<std::uint32_t>(is), '\0');
    if (!is.read(meta_text.data(), static_cast<std::streamsize>(meta_text.size()))) {
        throw IoError("checkpoint: truncated metadata");
    }
    const auto meta = nlohmann::json::parse(meta_text);

    TamClModel m = init(config_from_json(meta.at("config")), 0);
    m.encoder_.frozen = meta.at("frozen").get<std::vector<bool>>();
    for (const auto& t : meta.at("tasks")) m.register_task(t.at("task_id"), t.at("classes"));
    std::istringstream rng_state(meta.at("rng").get<std::string>());
    rng_state >> m.rng_;

    std::map<std::string, ad::Tensor> by_name;
    for (auto& p : m.named_parameters()) by_name.emplace(p.name, p.tensor);
    const auto count = read_pod<std::uint32_t>(is);
    if (count != by_name.size()) {
        throw IoError("checkpoint holds " + std::to_string(count) + " parameters, model expects " +
                      std::to_string(by_name.size()));
    }
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name(read_pod<std::uint32_t>(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rows = read_pod<std::uint32_t>(is);
        const auto cols = read_pod<std::uint32_t>(is);
        auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: unknown parameter '" + name + "'");
        Matrix& value = it->second.mutable_value();
        if (value.rows() != Index(rows) || value.cols() != Index(cols)) {
            throw IoError("checkpoint: shape mismatch for '" + name + "'");
        }
        if (!is.read(reinterpret_cast<char*>(value.data()), static_cast<std::streamsize>(sizeof(double) * rows * cols))) {
            throw IoError("checkpoint: truncated values for '" + name + "'");
        }
    }
    return m;
}

}  // namespace tamcl
