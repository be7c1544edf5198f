#include "paracolor/networks.hpp"

#include <bit>
#include <fstream>
#include <sstream>

#include "paracolor/error.hpp"
#include "paracolor/fusion.hpp"
#include "paracolor/util/random.hpp"

namespace paracolor::nets {

using nlohmann::json;

std::string to_string(NetworkKind kind) {
    switch (kind) {
        case NetworkKind::generator: return "generator";
        case NetworkKind::discriminator: return "discriminator";
        case NetworkKind::fusion: return "fusion";
    }
    return "generator";
}

std::string to_string(Variant variant) {
    switch (variant) {
        case Variant::v1: return "V1";
        case Variant::v2: return "V2";
        case Variant::v3: return "V3";
    }
    return "V3";
}

NetworkKind network_kind_from_string(const std::string& name) {
    if (name == "generator") return NetworkKind::generator;
    if (name == "discriminator") return NetworkKind::discriminator;
    if (name == "fusion") return NetworkKind::fusion;
    throw UsageError("unknown network kind '" + name + "'");
}

Variant variant_from_string(const std::string& name) {
    if (name == "V1" || name == "v1") return Variant::v1;
    if (name == "V2" || name == "v2") return Variant::v2;
    if (name == "V3" || name == "v3") return Variant::v3;
    throw UsageError("unknown generator variant '" + name + "' (expected V1, V2 or V3)");
}

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// Number of halvings from the input side down to the attention side.
int attention_level(const NetworkSpec& spec) {
    if (spec.attention_resolution < 1 || spec.resolution % spec.attention_resolution != 0) return -1;
    const int ratio = spec.resolution / spec.attention_resolution;
    if (!power_of_two(ratio)) return -1;
    return std::countr_zero(static_cast<unsigned>(ratio));
}

}  // namespace

void NetworkSpec::validate() const {
    auto fail = [](const std::string& msg) { throw UsageError("invalid network spec: " + msg); };
    if (base_channels < 1) fail("base_channels must be positive");
    if (resolution < 1) fail("resolution must be positive");
    switch (kind) {
        case NetworkKind::generator: {
            if (in_channels != 1) fail("generator in_channels must be 1 (L)");
            if (out_channels != 2) fail("generator out_channels must be 2 (a,b)");
            if (depth < 2 || depth > 6) fail("depth must be in [2,6]");
            if (resolution % (1 << depth) != 0) fail("resolution must be a multiple of 2^depth");
            if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0,1)");
            if (variant == Variant::v3) {
                const int level = attention_level(*this);
                if (level < 0 || level > depth)
                    fail("attention_resolution must divide resolution by a power of two no larger than 2^depth");
                const std::int64_t n = static_cast<std::int64_t>(attention_resolution) * attention_resolution;
                if (n * n > attention_budget)
                    fail("self-attention at side " + std::to_string(attention_resolution) +
                         " exceeds the attention memory budget; use a smaller attention_resolution (larger stride)");
            }
            break;
        }
        case NetworkKind::discriminator:
            if (in_channels != 3) fail("discriminator in_channels must be 3 (Lab)");
            if (out_channels != 1) fail("discriminator out_channels must be 1");
            if (disc_stride2_layers < 1 || disc_stride2_layers > 6) fail("disc_stride2_layers must be in [1,6]");
            break;
        case NetworkKind::fusion:
            if (in_channels != 3 || out_channels != 3) fail("fusion network maps 3 channels to 3 channels");
            if (stem_channels < 1 || dense_layers < 1 || growth < 1) fail("fusion widths must be positive");
            if (decoder_layers < 2) fail("decoder_layers must be at least 2");
            break;
    }
}

NetworkSpec generator_spec(Variant variant, int base_channels, int resolution) {
    NetworkSpec s;
    s.kind = NetworkKind::generator;
    s.variant = variant;
    s.base_channels = base_channels;
    s.resolution = resolution;
    s.attention_resolution = std::max(1, resolution / 8);
    return s;
}

NetworkSpec discriminator_spec(int base_channels, int resolution) {
    NetworkSpec s;
    s.kind = NetworkKind::discriminator;
    s.base_channels = base_channels;
    s.resolution = resolution;
    s.in_channels = 3;
    s.out_channels = 1;
    return s;
}

json to_json(const NetworkSpec& s) {
    return json{{"kind", to_string(s.kind)},
                {"variant", to_string(s.variant)},
                {"base_channels", s.base_channels},
                {"depth", s.depth},
                {"attention_resolution", s.attention_resolution},
                {"resolution", s.resolution},
                {"in_channels", s.in_channels},
                {"out_channels", s.out_channels},
                {"dropout", s.dropout},
                {"encoder_norm", nn::to_string(s.encoder_norm)},
                {"decoder_norm", nn::to_string(s.decoder_norm)},
                {"attention_budget", s.attention_budget},
                {"disc_stride2_layers", s.disc_stride2_layers},
                {"disc_norm", nn::to_string(s.disc_norm)},
                {"stem_channels", s.stem_channels},
                {"dense_layers", s.dense_layers},
                {"growth", s.growth},
                {"decoder_layers", s.decoder_layers}};
}

NetworkSpec spec_from_json(const json& j) {
    if (!j.is_object()) throw DataError("network spec must be an object");
    NetworkSpec s;
    if (j.contains("kind")) s.kind = network_kind_from_string(j.at("kind").get<std::string>());
    if (s.kind == NetworkKind::discriminator) s = discriminator_spec();
    if (s.kind == NetworkKind::fusion) {
        s.kind = NetworkKind::fusion;
        s.in_channels = 3;
        s.out_channels = 3;
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "kind") continue;
        else if (key == "variant") s.variant = variant_from_string(value.get<std::string>());
        else if (key == "base_channels") s.base_channels = value.get<int>();
        else if (key == "depth") s.depth = value.get<int>();
        else if (key == "attention_resolution") s.attention_resolution = value.get<int>();
        else if (key == "resolution") s.resolution = value.get<int>();
        else if (key == "in_channels") s.in_channels = value.get<int>();
        else if (key == "out_channels") s.out_channels = value.get<int>();
        else if (key == "dropout") s.dropout = value.get<double>();
        else if (key == "encoder_norm") s.encoder_norm = nn::norm_kind_from_string(value.get<std::string>());
        else if (key == "decoder_norm") s.decoder_norm = nn::norm_kind_from_string(value.get<std::string>());
        else if (key == "attention_budget") s.attention_budget = value.get<std::int64_t>();
        else if (key == "disc_stride2_layers") s.disc_stride2_layers = value.get<int>();
        else if (key == "disc_norm") s.disc_norm = nn::norm_kind_from_string(value.get<std::string>());
        else if (key == "stem_channels") s.stem_channels = value.get<int>();
        else if (key == "dense_layers") s.dense_layers = value.get<int>();
        else if (key == "growth") s.growth = value.get<int>();
        else if (key == "decoder_layers") s.decoder_layers = value.get<int>();
        else throw DataError("unknown network spec field '" + key + "'");
    }
    return s;
}

std::string describe_mismatch(const NetworkSpec& expected, const NetworkSpec& actual) {
    const json a = to_json(expected), b = to_json(actual);
    std::string out;
    for (const auto& [key, value] : a.items()) {
        if (b.at(key) == value) continue;
        if (!out.empty()) out += ", ";
        out += key + " " + value.dump() + " vs " + b.at(key).dump();
    }
    return out;
}

// Self-attention

SelfAttention::SelfAttention(nn::ParameterRegistry& registry, const std::string& prefix, int channels,
                             std::int64_t budget, std::mt19937_64& rng)
    : query_(registry, prefix + ".query", channels, key_channels(channels), 1, 1, 0, true, rng),
      key_(registry, prefix + ".key", channels, key_channels(channels), 1, 1, 0, true, rng),
      value_(registry, prefix + ".value", channels, channels, 1, 1, 0, true, rng),
      gamma_(registry.add_parameter(prefix + ".gamma", nn::Tensor(nn::Shape{1}, 0.0))),
      budget_(budget) {}

std::int64_t SelfAttention::parameter_count(int channels) {
    const int ck = key_channels(channels);
    return 2 * nn::Conv2d::parameter_count(channels, ck, 1, true) +
           nn::Conv2d::parameter_count(channels, channels, 1, true) + 1;
}

void SelfAttention::check_budget(const nn::Var& x) const {
    const std::int64_t n = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
    if (n * n > budget_)
        throw NumericalError("self-attention over " + std::to_string(x.dim(2)) + "x" + std::to_string(x.dim(3)) +
                             " positions exceeds the memory budget; place attention at a coarser feature map");
}

nn::Var SelfAttention::attention_weights(const nn::Var& x) const {
    check_budget(x);
    const int n = x.dim(0), hw = x.dim(2) * x.dim(3), ck = query_.out_channels();
    const nn::Var q = nn::reshape(query_(x), {n, ck, hw});
    const nn::Var k = nn::reshape(key_(x), {n, ck, hw});
    return nn::softmax_axis1(nn::bmm(k, q, true, false));
}

nn::Var SelfAttention::operator()(const nn::Var& x) const {
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const nn::Var attn = attention_weights(x);
    const nn::Var v = nn::reshape(value_(x), {n, c, h * w});
    const nn::Var mixed = nn::reshape(nn::bmm(v, attn, false, false), {n, c, h, w});
    return nn::add(nn::gate(gamma_, mixed), x);
}

// Generator

namespace {

int stage_channels(const NetworkSpec& spec, int stage) { return spec.base_channels << stage; }

// Channels of the skip tensor consumed by decoder stage j (innermost first).
int skip_channels(const NetworkSpec& spec, int j) {
    const int source = spec.depth - 2 - j;
    return source >= 0 ? stage_channels(spec, source) : spec.base_channels;
}

int attention_site(const NetworkSpec& spec) {
    if (spec.variant != Variant::v3) return -1;
    const int level = attention_level(spec);
    return level == spec.depth ? 0 : spec.depth - level;
}

bool conv_bias(nn::NormKind norm) { return norm == nn::NormKind::none; }

}  // namespace

int Generator::attention_channels(const NetworkSpec& spec) {
    const int site = attention_site(spec);
    if (site < 0) return 0;
    return site == 0 ? stage_channels(spec, spec.depth - 1) : skip_channels(spec, site - 1);
}

Generator::Generator(NetworkSpec spec, std::uint64_t seed) : Network(std::move(spec)) {
    spec_.validate();
    if (spec_.kind != NetworkKind::generator) throw UsageError("build_generator needs a generator spec");
    std::mt19937_64 rng(derive_seed(seed, 0x6e6e));
    const int b = spec_.base_channels;
    const auto enc = spec_.encoder_norm, dec = spec_.decoder_norm;

    stem_conv_ = nn::Conv2d(registry_, "stem.conv", spec_.in_channels, b, 3, 1, 1, conv_bias(enc), rng);
    stem_norm_ = nn::Norm2d(registry_, "stem.norm", b, enc);

    const bool residual = spec_.variant != Variant::v1;
    int channels = b;
    for (int s = 0; s < spec_.depth; ++s) {
        const int out = stage_channels(spec_, s);
        std::vector<Block> stage(2);
        for (int i = 0; i < 2; ++i) {
            const std::string p = "encoder." + std::to_string(s) + "." + std::to_string(i);
            const int stride = i == 0 ? 2 : 1;
            Block& blk = stage[i];
            blk.residual = residual;
            blk.conv1 = nn::Conv2d(registry_, p + ".conv1", channels, out, 3, stride, 1, conv_bias(enc), rng);
            blk.norm1 = nn::Norm2d(registry_, p + ".norm1", out, enc);
            blk.conv2 = nn::Conv2d(registry_, p + ".conv2", out, out, 3, 1, 1, conv_bias(enc), rng);
            blk.norm2 = nn::Norm2d(registry_, p + ".norm2", out, enc);
            if (residual && (stride != 1 || channels != out)) {
                blk.has_shortcut = true;
                blk.shortcut = nn::Conv2d(registry_, p + ".shortcut", channels, out, 1, stride, 0, conv_bias(enc), rng);
                blk.shortcut_norm = nn::Norm2d(registry_, p + ".shortcut_norm", out, enc);
            }
            channels = out;
        }
        encoder_.push_back(std::move(stage));
    }

    attention_site_ = attention_site(spec_);
    auto make_attention = [&] {
        attention_ = std::make_unique<SelfAttention>(registry_, "attention", attention_channels(spec_),
                                                     spec_.attention_budget, rng);
    };
    if (attention_site_ == 0) make_attention();
    for (int j = 0; j < spec_.depth; ++j) {
        const std::string p = "decoder." + std::to_string(j);
        const int out = skip_channels(spec_, j);
        DecoderStage st;
        st.conv1 = nn::Conv2d(registry_, p + ".conv1", channels + out, out, 3, 1, 1, conv_bias(dec), rng);
        st.norm1 = nn::Norm2d(registry_, p + ".norm1", out, dec);
        st.conv2 = nn::Conv2d(registry_, p + ".conv2", out, out, 3, 1, 1, conv_bias(dec), rng);
        st.norm2 = nn::Norm2d(registry_, p + ".norm2", out, dec);
        decoder_.push_back(std::move(st));
        channels = out;
        if (attention_site_ == j + 1) make_attention();
    }
    head_ = nn::Conv2d(registry_, "head", channels, spec_.out_channels, 1, 1, 0, true, rng);
}

nn::Var Generator::run_block(Block& blk, const nn::Var& x, bool training) {
    nn::Var h = nn::relu(blk.norm1(blk.conv1(x), training));
    h = blk.norm2(blk.conv2(h), training);
    if (!blk.residual) return nn::relu(h);
    const nn::Var shortcut = blk.has_shortcut ? blk.shortcut_norm(blk.shortcut(x), training) : x;
    return nn::relu(nn::add(h, shortcut));
}

nn::Var Generator::forward(const nn::Var& x, bool training) {
    const int multiple = 1 << spec_.depth;
    if (x.value().rank() != 4 || x.dim(1) != spec_.in_channels)
        throw UsageError("generator expects N x " + std::to_string(spec_.in_channels) + " x H x W input, got " +
                         nn::shape_string(x.shape()));
    if (x.dim(2) % multiple != 0 || x.dim(3) % multiple != 0)
        throw UsageError("generator input sides must be multiples of " + std::to_string(multiple));

    std::vector<nn::Var> skips;
    nn::Var h = nn::relu(stem_norm_(stem_conv_(x), training));
    skips.push_back(h);
    for (auto& stage : encoder_) {
        for (auto& blk : stage) h = run_block(blk, h, training);
        skips.push_back(h);
    }
    if (attention_site_ == 0) h = (*attention_)(h);
    for (int j = 0; j < spec_.depth; ++j) {
        DecoderStage& st = decoder_[j];
        h = nn::concat_channels({nn::upsample_nearest2x(h), skips[spec_.depth - 1 - j]});
        h = nn::relu(st.norm1(st.conv1(h), training));
        h = nn::relu(st.norm2(st.conv2(h), training));
        if (training && j < 2 && spec_.dropout > 0.0) h = nn::dropout(h, spec_.dropout, noise_);
        if (attention_site_ == j + 1) h = (*attention_)(h);
    }
    return nn::tanh(head_(h));
}

// Discriminator

std::vector<Discriminator::Layer> Discriminator::layers(const NetworkSpec& spec) {
    std::vector<Layer> out;
    const int b = spec.base_channels;
    int channels = spec.in_channels;
    for (int i = 0; i < spec.disc_stride2_layers; ++i) {
        const int width = b * std::min(1 << i, 8);
        out.push_back({channels, width, 2, i > 0});
        channels = width;
    }
    const int width = b * std::min(1 << spec.disc_stride2_layers, 8);
    out.push_back({channels, width, 1, true});
    out.push_back({width, spec.out_channels, 1, false});
    return out;
}

int Discriminator::output_side(const NetworkSpec& spec, int input_side) {
    int side = input_side;
    for (const auto& l : layers(spec)) side = (side + 2 - 4) / l.stride + 1;
    return side;
}

int Discriminator::receptive_field(const NetworkSpec& spec) {
    const auto ls = layers(spec);
    int field = 1;
    for (auto it = ls.rbegin(); it != ls.rend(); ++it) field = (field - 1) * it->stride + 4;
    return field;
}

Discriminator::Discriminator(NetworkSpec spec, std::uint64_t seed) : Network(std::move(spec)) {
    spec_.validate();
    if (spec_.kind != NetworkKind::discriminator) throw UsageError("build_discriminator needs a discriminator spec");
    std::mt19937_64 rng(derive_seed(seed, 0xd15c));
    const auto ls = layers(spec_);
    for (std::size_t i = 0; i < ls.size(); ++i) {
        const std::string p = "layer." + std::to_string(i);
        const auto norm = ls[i].norm ? spec_.disc_norm : nn::NormKind::none;
        convs_.emplace_back(registry_, p + ".conv", ls[i].in_channels, ls[i].out_channels, 4, ls[i].stride, 1,
                            conv_bias(norm), rng);
        norms_.emplace_back(registry_, p + ".norm", ls[i].out_channels, norm);
    }
}

nn::Var Discriminator::forward(const nn::Var& x, bool training) {
    if (x.value().rank() != 4 || x.dim(1) != spec_.in_channels)
        throw UsageError("discriminator expects N x 3 x H x W input, got " + nn::shape_string(x.shape()));
    if (output_side(spec_, x.dim(2)) < 1 || output_side(spec_, x.dim(3)) < 1)
        throw UsageError("discriminator input " + nn::shape_string(x.shape()) + " is too small");
    nn::Var h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        h = norms_[i](convs_[i](h), training);
        if (i + 1 < convs_.size()) h = nn::leaky_relu(h, 0.2);
    }
    return h;
}

std::unique_ptr<Generator> build_generator(const NetworkSpec& spec, std::uint64_t seed) {
    return std::make_unique<Generator>(spec, seed);
}

std::unique_ptr<Discriminator> build_discriminator(const NetworkSpec& spec, std::uint64_t seed) {
    return std::make_unique<Discriminator>(spec, seed);
}

std::unique_ptr<Network> build_network(const NetworkSpec& spec, std::uint64_t seed) {
    switch (spec.kind) {
        case NetworkKind::generator: return build_generator(spec, seed);
        case NetworkKind::discriminator: return build_discriminator(spec, seed);
        case NetworkKind::fusion: return fusion::build_fusion_net(spec, seed);
    }
    throw UsageError("unknown network kind");
}

// Checkpoints

static_assert(std::endian::native == std::endian::little, "checkpoint layout assumes a little-endian host");

namespace {

std::vector<NamedTensor> snapshot(const std::vector<nn::NamedVar>& vars) {
    std::vector<NamedTensor> out;
    out.reserve(vars.size());
    for (const auto& v : vars) out.push_back({v.name, v.var.value()});
    return out;
}

json layout(const std::vector<NamedTensor>& items) {
    json arr = json::array();
    for (const auto& t : items) arr.push_back({{"name", t.name}, {"shape", t.value.shape()}});
    return arr;
}

void write_values(std::ostream& out, const nn::Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

nn::Tensor read_values(std::istream& in, nn::Shape shape, const std::filesystem::path& path) {
    nn::Tensor t(std::move(shape));
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw DataError("checkpoint " + path.string() + " is truncated");
    return t;
}

std::vector<NamedTensor> read_group(std::istream& in, const json& entries, const std::filesystem::path& path) {
    std::vector<NamedTensor> out;
    for (const auto& e : entries)
        out.push_back({e.at("name").get<std::string>(), read_values(in, e.at("shape").get<nn::Shape>(), path)});
    return out;
}

void copy_group(const std::vector<NamedTensor>& source, const std::vector<nn::NamedVar>& target,
                const std::string& what) {
    if (source.size() != target.size())
        throw DataError("checkpoint has " + std::to_string(source.size()) + " " + what + ", network expects " +
                        std::to_string(target.size()));
    for (std::size_t i = 0; i < source.size(); ++i) {
        const auto& s = source[i];
        const auto& t = target[i];
        if (s.name != t.name || s.value.shape() != t.var.value().shape())
            throw DataError("checkpoint " + what + " '" + s.name + "' " + nn::shape_string(s.value.shape()) +
                            " does not match '" + t.name + "' " + nn::shape_string(t.var.value().shape()));
    }
    for (std::size_t i = 0; i < source.size(); ++i) {
        nn::Var v = target[i].var;
        v.mutable_value() = source[i].value;
    }
}

}  // namespace

Checkpoint capture(const Network& network, std::string stage, std::int64_t step, const nn::Adam* optimizer) {
    Checkpoint c;
    c.spec = network.spec();
    c.stage = std::move(stage);
    c.step = step;
    c.parameters = snapshot(network.registry().parameters());
    c.buffers = snapshot(network.registry().buffers());
    if (optimizer) c.optimizer = optimizer->state();
    return c;
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    json head{{"spec", to_json(c.spec)},
              {"stage", c.stage},
              {"step", c.step},
              {"parameters", layout(c.parameters)},
              {"buffers", layout(c.buffers)},
              {"metadata", c.metadata}};
    if (c.optimizer) {
        if (c.optimizer->first_moment.size() != c.parameters.size() ||
            c.optimizer->second_moment.size() != c.parameters.size())
            throw UsageError("optimizer state does not match the parameter list");
        head["optimizer"] = {{"kind", "adam"}, {"step", c.optimizer->step}};
    } else {
        head["optimizer"] = nullptr;
    }
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError("cannot write checkpoint " + path.string());
        out << kCheckpointHeader << '\n' << head.dump() << '\n';
        for (const auto& t : c.parameters) write_values(out, t.value);
        for (const auto& t : c.buffers) write_values(out, t.value);
        if (c.optimizer) {
            for (const auto& t : c.optimizer->first_moment) write_values(out, t);
            for (const auto& t : c.optimizer->second_moment) write_values(out, t);
        }
        if (!out) throw DataError("failed writing checkpoint " + path.string());
    }
    std::filesystem::rename(tmp, path);
}

void save_checkpoint(const Network& network, const std::filesystem::path& path, std::string stage, std::int64_t step,
                     const nn::Adam* optimizer) {
    save_checkpoint(capture(network, std::move(stage), step, optimizer), path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open checkpoint " + path.string());
    std::string header, meta;
    std::getline(in, header);
    if (header != kCheckpointHeader) {
        if (header.rfind("PARACOLOR-CHECKPOINT", 0) == 0)
            throw DataError("checkpoint " + path.string() + " has unsupported version '" + header + "', expected '" +
                            kCheckpointHeader + "'");
        throw DataError(path.string() + " is not a checkpoint");
    }
    std::getline(in, meta);
    json head;
    try {
        head = json::parse(meta);
    } catch (const json::parse_error& e) {
        throw DataError("checkpoint " + path.string() + " has a corrupt header: " + e.what());
    }
    Checkpoint c;
    c.spec = spec_from_json(head.at("spec"));
    c.stage = head.at("stage").get<std::string>();
    c.step = head.at("step").get<std::int64_t>();
    c.metadata = head.value("metadata", json::object());
    c.parameters = read_group(in, head.at("parameters"), path);
    c.buffers = read_group(in, head.at("buffers"), path);
    if (!head.at("optimizer").is_null()) {
        nn::AdamState st;
        st.step = head.at("optimizer").at("step").get<std::int64_t>();
        for (const auto& p : c.parameters) st.first_moment.push_back(read_values(in, p.value.shape(), path));
        for (const auto& p : c.parameters) st.second_moment.push_back(read_values(in, p.value.shape(), path));
        c.optimizer = std::move(st);
    }
    if (in.peek() != std::char_traits<char>::eof()) throw DataError("checkpoint " + path.string() + " has trailing data");
    return c;
}

void restore(const Checkpoint& c, Network& network) {
    if (!(c.spec == network.spec()))
        throw DataError("checkpoint spec mismatch: " + describe_mismatch(network.spec(), c.spec));
    copy_group(c.parameters, network.registry().parameters(), "parameters");
    copy_group(c.buffers, network.registry().buffers(), "buffers");
}

std::unique_ptr<Network> load_checkpoint(const std::filesystem::path& path) {
    const Checkpoint c = read_checkpoint(path);
    auto net = build_network(c.spec);
    restore(c, *net);
    return net;
}

Checkpoint load_checkpoint_into(const std::filesystem::path& path, Network& network) {
    Checkpoint c = read_checkpoint(path);
    try {
        restore(c, network);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
    return c;
}

std::size_t import_parameters(const Checkpoint& source, Network& network, const std::string& prefix) {
    std::size_t copied = 0;
    for (const auto& target : network.registry().parameters()) {
        if (target.name.rfind(prefix, 0) != 0) continue;
        for (const auto& s : source.parameters) {
            if (s.name != target.name || s.value.shape() != target.var.value().shape()) continue;
            nn::Var v = target.var;
            v.mutable_value() = s.value;
            ++copied;
        }
    }
    return copied;
}

}  // namespace paracolor::nets
