#include "msshare/model_zoo.hpp"

#include <array>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace msshare {

std::string_view to_string(Family f) { return f == Family::alexnet ? "alexnet" : "resnet"; }

std::string_view to_string(Variant v) {
    switch (v) {
        case Variant::vanilla: return "vanilla";
        case Variant::unshared: return "unshared";
        case Variant::shared: return "shared";
    }
    return "?";
}

Family parse_family(std::string_view s) {
    if (s == "alexnet") return Family::alexnet;
    if (s == "resnet") return Family::resnet;
    throw std::invalid_argument("unknown family '" + std::string(s) + "' (expected alexnet or resnet)");
}

Variant parse_variant(std::string_view s) {
    if (s == "vanilla") return Variant::vanilla;
    if (s == "unshared") return Variant::unshared;
    if (s == "shared") return Variant::shared;
    throw std::invalid_argument("unknown variant '" + std::string(s) + "' (expected vanilla, unshared or shared)");
}

namespace {

struct ResNetLayout {
    bool bottleneck;
    std::array<int, 4> blocks;
};

ResNetLayout resnet_layout(int depth) {
    switch (depth) {
        case 10: return {false, {1, 1, 1, 1}};
        case 18: return {false, {2, 2, 2, 2}};
        case 34: return {false, {3, 4, 6, 3}};
        case 50: return {true, {3, 4, 6, 3}};
        case 101: return {true, {3, 4, 23, 3}};
        case 152: return {true, {3, 8, 36, 3}};
        default: throw std::invalid_argument("unrecognized resnet depth " + std::to_string(depth));
    }
}

}  // namespace

void ArchSpec::validate() const {
    if (family == Family::resnet) {
        resnet_layout(depth);
        if (width < 2 || width % 2 != 0) throw std::invalid_argument("resnet width must be a positive even number");
    } else if (depth != 8 && depth != 0) {
        throw std::invalid_argument("alexnet has no depth option (use depth=8 or omit it)");
    }
    if (variant == Variant::vanilla && n != 1) throw std::invalid_argument("vanilla variant requires rates=1");
    if (variant != Variant::vanilla && n < 1) throw std::invalid_argument("rates must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("classes must be positive");
    if (input_size < 1) throw std::invalid_argument("input_size must be positive");
}

ArchSpec ArchSpec::from_config(const KeyValueConfig& cfg) {
    ArchSpec s;
    s.family = parse_family(cfg.require_string("family"));
    s.depth = static_cast<int>(cfg.get_int("depth", s.family == Family::alexnet ? 8 : 50));
    s.variant = parse_variant(cfg.get_string("variant", "vanilla"));
    s.n = static_cast<int>(cfg.get_int("rates", s.variant == Variant::vanilla ? 1 : 2));
    s.num_classes = static_cast<int>(cfg.get_int("classes", 1000));
    s.input_size = static_cast<int>(cfg.get_int("input_size", 224));
    s.width = static_cast<int>(cfg.get_int("width", 64));
    s.validate();
    return s;
}

std::string ArchSpec::to_config_text() const {
    std::ostringstream os;
    os << "family=" << to_string(family) << '\n'
       << "depth=" << depth << '\n'
       << "variant=" << to_string(variant) << '\n'
       << "rates=" << n << '\n'
       << "classes=" << num_classes << '\n'
       << "input_size=" << input_size << '\n'
       << "width=" << width << '\n';
    return os.str();
}

ArchSpec ArchSpec::with_variant(Variant v) const {
    ArchSpec s = *this;
    s.variant = v;
    s.n = v == Variant::vanilla ? 1 : (n > 1 ? n : 2);
    return s;
}

std::string ArchSpec::display_name() const {
    std::string name = family == Family::alexnet ? "AlexNet" : "ResNet" + std::to_string(depth);
    return name + "-" + std::string(to_string(variant));
}

namespace {

/// Adds a 3x3-style convolution, split into rate branches when the variant asks for it.
void add_conv(Sequential& seq, const ArchSpec& spec, bool multiscale, std::string name, std::size_t in,
              std::size_t out, std::size_t kernel, std::size_t stride, std::size_t padding, bool bias) {
    if (multiscale && spec.variant != Variant::vanilla) {
        SharedMultiScaleConvSpec ms = SharedMultiScaleConvSpec::make(in, out, kernel, static_cast<std::size_t>(spec.n),
                                                                     stride);
        ms.padding = padding;
        seq.emplace<MultiScaleConv2d>(std::move(name), std::move(ms), spec.variant == Variant::shared, bias);
    } else {
        seq.emplace<Conv2d>(std::move(name), in, out, kernel, ConvParams{stride, padding, 1}, bias);
    }
}

std::unique_ptr<Layer> basic_block(const ArchSpec& spec, const std::string& name, std::size_t in, std::size_t width,
                                   std::size_t stride) {
    auto body = std::make_unique<Sequential>(name + ".body");
    add_conv(*body, spec, false, name + ".conv1", in, width, 3, stride, 1, false);
    body->emplace<BatchNorm2d>(name + ".bn1", width);
    body->emplace<ReLU>(name + ".relu1");
    add_conv(*body, spec, true, name + ".conv2", width, width, 3, 1, 1, false);
    body->emplace<BatchNorm2d>(name + ".bn2", width);
    auto shortcut = std::make_unique<Sequential>(name + ".downsample");
    if (stride != 1 || in != width) {
        shortcut->emplace<Conv2d>(name + ".downsample.0", in, width, 1, ConvParams{stride, 0, 1}, false);
        shortcut->emplace<BatchNorm2d>(name + ".downsample.1", width);
    }
    return std::make_unique<ResidualBlock>(name, std::move(body), std::move(shortcut));
}

std::unique_ptr<Layer> bottleneck_block(const ArchSpec& spec, const std::string& name, std::size_t in,
                                        std::size_t width, std::size_t stride) {
    const std::size_t out = width * 4;
    auto body = std::make_unique<Sequential>(name + ".body");
    add_conv(*body, spec, false, name + ".conv1", in, width, 1, 1, 0, false);
    body->emplace<BatchNorm2d>(name + ".bn1", width);
    body->emplace<ReLU>(name + ".relu1");
    add_conv(*body, spec, true, name + ".conv2", width, width, 3, stride, 1, false);
    body->emplace<BatchNorm2d>(name + ".bn2", width);
    body->emplace<ReLU>(name + ".relu2");
    add_conv(*body, spec, false, name + ".conv3", width, out, 1, 1, 0, false);
    body->emplace<BatchNorm2d>(name + ".bn3", out);
    auto shortcut = std::make_unique<Sequential>(name + ".downsample");
    if (stride != 1 || in != out) {
        shortcut->emplace<Conv2d>(name + ".downsample.0", in, out, 1, ConvParams{stride, 0, 1}, false);
        shortcut->emplace<BatchNorm2d>(name + ".downsample.1", out);
    }
    return std::make_unique<ResidualBlock>(name, std::move(body), std::move(shortcut));
}

Model build_resnet(const ArchSpec& spec) {
    const ResNetLayout layout = resnet_layout(spec.depth);
    const auto base = static_cast<std::size_t>(spec.width);
    auto features = std::make_unique<Sequential>("features");
    features->emplace<Conv2d>("conv1", 3, base, 7, ConvParams{2, 3, 1}, false);
    features->emplace<BatchNorm2d>("bn1", base);
    features->emplace<ReLU>("relu");
    features->emplace<MaxPool2d>("maxpool", PoolParams{3, 2, 1});

    std::size_t in = base;
    for (std::size_t stage = 0; stage < 4; ++stage) {
        const std::size_t width = base << stage;
        auto& seq = static_cast<Sequential&>(features->add(std::make_unique<Sequential>("layer" + std::to_string(stage + 1))));
        for (int b = 0; b < layout.blocks[stage]; ++b) {
            const std::size_t stride = (stage > 0 && b == 0) ? 2 : 1;
            const std::string name = seq.name() + "." + std::to_string(b);
            if (layout.bottleneck) {
                seq.add(bottleneck_block(spec, name, in, width, stride));
                in = width * 4;
            } else {
                seq.add(basic_block(spec, name, in, width, stride));
                in = width;
            }
        }
    }
    features->emplace<GlobalAvgPool>("avgpool");
    auto fc = std::make_unique<Linear>("fc", in, static_cast<std::size_t>(spec.num_classes));
    return Model(spec, std::move(features), std::move(fc));
}

Model build_alexnet(const ArchSpec& spec) {
    auto features = std::make_unique<Sequential>("features");
    add_conv(*features, spec, true, "conv1", 3, 64, 11, 4, 2, true);
    features->emplace<ReLU>("relu1");
    features->emplace<MaxPool2d>("pool1", PoolParams{3, 2, 0});
    add_conv(*features, spec, true, "conv2", 64, 192, 5, 1, 2, true);
    features->emplace<ReLU>("relu2");
    features->emplace<MaxPool2d>("pool2", PoolParams{3, 2, 0});
    add_conv(*features, spec, true, "conv3", 192, 384, 3, 1, 1, true);
    features->emplace<ReLU>("relu3");
    add_conv(*features, spec, true, "conv4", 384, 256, 3, 1, 1, true);
    features->emplace<ReLU>("relu4");
    add_conv(*features, spec, true, "conv5", 256, 256, 3, 1, 1, true);
    features->emplace<ReLU>("relu5");
    features->emplace<MaxPool2d>("pool5", PoolParams{3, 2, 0});

    const auto size = static_cast<std::size_t>(spec.input_size);
    const Shape pooled = features->output_shape(Shape{1, 3, size, size});
    features->emplace<Linear>("fc6", pooled.c * pooled.h * pooled.w, 4096);
    features->emplace<ReLU>("relu6");
    features->emplace<Linear>("fc7", 4096, 4096);
    features->emplace<ReLU>("relu7");
    auto fc = std::make_unique<Linear>("fc8", 4096, static_cast<std::size_t>(spec.num_classes));
    return Model(spec, std::move(features), std::move(fc));
}

void init_entries(std::vector<StateEntry>& entries, std::mt19937_64& rng) {
    for (StateEntry& e : entries) {
        Tensor& t = *e.value;
        switch (e.role) {
            case StateRole::weight: {
                std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(e.fan_in)));
                for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(dist(rng));
                break;
            }
            case StateRole::bn_scale:
            case StateRole::running_var: t.fill(1.0f); break;
            case StateRole::bias:
            case StateRole::bn_shift:
            case StateRole::running_mean: t.fill(0.0f); break;
        }
    }
}

}  // namespace

Model build_topology(const ArchSpec& spec) {
    spec.validate();
    return spec.family == Family::resnet ? build_resnet(spec) : build_alexnet(spec);
}

Model build_model(const ArchSpec& spec, std::uint64_t seed) {
    Model m = build_topology(spec);
    he_init(m, seed);
    return m;
}

void he_init(Model& model, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<StateEntry> entries = model.state();
    init_entries(entries, rng);
}

std::unique_ptr<Linear> make_classifier(std::string name, std::size_t in_features, std::size_t classes,
                                        std::uint64_t seed) {
    auto fc = std::make_unique<Linear>(std::move(name), in_features, classes);
    std::vector<StateEntry> entries;
    fc->collect_state(entries);
    std::mt19937_64 rng(seed);
    init_entries(entries, rng);
    return fc;
}

std::uint64_t count_params(Model& model, bool include_classifier) {
    std::uint64_t total = 0;
    for (const StateEntry& e : model.parameters(include_classifier)) total += e.value->size();
    return total;
}

std::uint64_t flop_count(const Model& model, std::size_t input_size) {
    return model.macs(Shape{1, 3, input_size, input_size});
}

std::vector<std::string> multiscale_layer_names(const ArchSpec& spec) {
    Model m = build_topology(spec);
    std::vector<std::string> names;
    m.features().visit([&](Layer& l) {
        if (l.kind() == "shared_msconv" || l.kind() == "unshared_msconv") names.push_back(l.name());
    });
    return names;
}

}  // namespace msshare
