// msshare: train, evaluate and inspect vanilla / unshared / shared multi-scale networks.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "msshare/checkpoint.hpp"
#include "msshare/grad_check.hpp"
#include "msshare/kernel_viz.hpp"
#include "msshare/model_zoo.hpp"
#include "msshare/toy_data.hpp"
#include "msshare/train.hpp"

namespace fs = std::filesystem;
using namespace msshare;

namespace {

struct Options {
    std::string config;
    std::uint64_t seed = 0;
    bool seed_given = false;
    std::string data;
    std::string checkpoint;
    std::string layer;
    std::size_t count = 256;
    bool freeze = false;
    std::string out = ".";
    std::string sizes = "1,2,6,6";
    std::size_t out_channels = 4;
    bool corrupt = false;
    bool l2 = false;
    bool timing = false;
};

KeyValueConfig load_config(const Options& o) {
    if (o.config.empty()) return {};
    return KeyValueConfig::load(o.config);
}

std::uint64_t resolve_seed(const Options& o, const KeyValueConfig& cfg) {
    if (o.seed_given) return o.seed;
    return static_cast<std::uint64_t>(cfg.get_int("seed", 0));
}

std::string resolve_data(const Options& o, const KeyValueConfig& cfg) {
    std::string root = o.data.empty() ? cfg.get_string("data", "") : o.data;
    if (root.empty()) throw std::invalid_argument("no dataset: pass --data or set data= in the config");
    if (o.data.empty() && !o.config.empty() && fs::path(root).is_relative()) {
        root = (fs::path(o.config).parent_path() / root).string();
    }
    return root;
}

/// Crop follows the model's input size; resize keeps the 256/224 ratio unless configured.
PreprocessConfig preprocess_for(const ArchSpec& spec, const KeyValueConfig& cfg) {
    KeyValueConfig c = cfg;
    if (!c.has("crop")) c.set("crop", std::to_string(spec.input_size));
    if (!c.has("resize")) c.set("resize", std::to_string(std::lround(spec.input_size * 256.0 / 224.0)));
    PreprocessConfig prep = PreprocessConfig::from_config(c);
    if (prep.crop != static_cast<std::size_t>(spec.input_size)) {
        throw std::invalid_argument("crop " + std::to_string(prep.crop) + " differs from the model input size " +
                                    std::to_string(spec.input_size));
    }
    return prep;
}

std::string fixed2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

Shape parse_sizes(const std::string& text) {
    std::vector<std::size_t> v;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::size_t pos = 0;
        const unsigned long x = std::stoul(item, &pos);
        if (pos != item.size() || x == 0) throw std::invalid_argument("--sizes: bad extent '" + item + "'");
        v.push_back(x);
    }
    if (v.size() != 4) throw std::invalid_argument("--sizes expects N,C,H,W");
    return {v[0], v[1], v[2], v[3]};
}

int cmd_count_params(const Options& o) {
    const ArchSpec base = ArchSpec::from_config(load_config(o));
    std::printf("%s, classifier excluded\n", base.display_name().c_str());
    std::printf("%-9s %12s %8s %16s\n", "variant", "params", "x1e6", "MACs@input");
    for (Variant v : {Variant::vanilla, Variant::unshared, Variant::shared}) {
        const ArchSpec spec = base.with_variant(v);
        Model m = build_topology(spec);
        const std::uint64_t params = count_params(m);
        const std::uint64_t macs = flop_count(m, static_cast<std::size_t>(spec.input_size));
        std::printf("%-9s %12llu %8s %16llu\n", std::string(to_string(v)).c_str(),
                    static_cast<unsigned long long>(params), fixed2(static_cast<double>(params) / 1e6).c_str(),
                    static_cast<unsigned long long>(macs));
    }
    return 0;
}

int cmd_grad_check(const Options& o) {
    GradCheckOptions opts;
    opts.input = parse_sizes(o.sizes);
    opts.out_channels = o.out_channels;
    opts.seed = o.seed_given ? o.seed : 1;
    opts.corrupt_backward = o.corrupt;
    std::vector<GradCheckLayer> layers;
    if (o.layer.empty() || o.layer == "all") {
        layers = all_grad_check_layers();
    } else {
        layers.push_back(parse_grad_check_layer(o.layer));
    }
    bool ok = true;
    for (GradCheckLayer l : layers) {
        const GradCheckReport r = run_grad_check(l, opts);
        for (const GradCheckQuantity& q : r.quantities) {
            std::printf("  %-8s %-20s n=%-6zu max_rel_error=%.3e\n", r.layer.c_str(), q.name.c_str(), q.checked,
                        q.max_rel_error);
        }
        std::printf("%s %s max_rel_error=%.3e (tolerance %.0e)\n", r.passed ? "PASS" : "FAIL", r.layer.c_str(),
                    r.max_rel_error, opts.tolerance);
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

/// Shared epoch loop of train and finetune. Writes metrics.csv, last.ckpt, best.ckpt.
void run_epochs(Model& model, const Dataset& train, const Dataset& val, const PreprocessConfig& prep,
                const SgdConfig& sgd, std::uint64_t seed, const Options& o, bool finetune) {
    fs::create_directories(o.out);
    std::ofstream csv_file(fs::path(o.out) / "metrics.csv", std::ios::trunc);
    if (!csv_file) throw std::runtime_error("cannot write " + (fs::path(o.out) / "metrics.csv").string());
    std::vector<std::string> extra;
    if (finetune) extra = {"feature_param_norm", "classifier_param_norm"};
    MetricsCsv csv(csv_file, extra);

    const bool top5 = model.spec().num_classes >= 5;
    OptimState optim = OptimState::for_model(model);
    std::optional<double> best;
    for (int epoch = 0; epoch < sgd.epochs; ++epoch) {
        const auto start = std::chrono::steady_clock::now();
        const EpochMetrics m = train_epoch(model, train, prep, sgd, optim, epoch, seed);
        const Evaluation ev = evaluate(model, val, prep, top5);
        const double wall =
            o.timing ? std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() : 0.0;
        std::vector<double> norms;
        if (finetune) {
            const std::vector<StateEntry> all = model.parameters(true);
            const auto split = all.begin() + static_cast<std::ptrdiff_t>(model.parameters(false).size());
            norms = {parameter_norm({all.begin(), split}), parameter_norm({split, all.end()})};
        }
        csv.row(m, ev, wall, norms);
        std::printf("epoch %3d  lr %-8.6g loss %.4f  train_top1 %6.2f  val_top1 %6.2f\n", epoch, m.lr, m.train_loss,
                    m.train_top1, ev.top1_error);
        std::fflush(stdout);
        save_checkpoint(model, &optim, fs::path(o.out) / "last.ckpt");
        if (!best || ev.top1_error < *best) {
            best = ev.top1_error;
            save_checkpoint(model, &optim, fs::path(o.out) / "best.ckpt");
        }
    }
}

int cmd_train(const Options& o) {
    const KeyValueConfig cfg = load_config(o);
    const ArchSpec spec = ArchSpec::from_config(cfg);
    const SgdConfig sgd = SgdConfig::from_config(cfg);
    const PreprocessConfig prep = preprocess_for(spec, cfg);
    const std::uint64_t seed = resolve_seed(o, cfg);
    const std::string root = resolve_data(o, cfg);
    const Dataset train = load_dataset(root, Split::train);
    const Dataset val = load_dataset(root, Split::eval);
    if (train.num_classes() != static_cast<std::size_t>(spec.num_classes)) {
        throw std::invalid_argument("config declares " + std::to_string(spec.num_classes) + " classes, dataset has " +
                                    std::to_string(train.num_classes()));
    }
    Model model = build_model(spec, seed);
    std::printf("%s: %zu train / %zu val images, seed %llu\n", spec.display_name().c_str(), train.samples.size(),
                val.samples.size(), static_cast<unsigned long long>(seed));
    run_epochs(model, train, val, prep, sgd, seed, o, false);
    return 0;
}

int cmd_eval(const Options& o) {
    if (o.checkpoint.empty()) throw std::invalid_argument("eval needs --checkpoint");
    const KeyValueConfig cfg = load_config(o);
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    const PreprocessConfig prep = preprocess_for(loaded.model.spec(), cfg);
    const Dataset val = load_dataset(resolve_data(o, cfg), Split::eval);
    const bool top5 = loaded.model.spec().num_classes >= 5;
    const Evaluation ev = evaluate(loaded.model, val, prep, top5);
    std::printf("Top-1: %s  Top-5: %s\n", fixed2(ev.top1_error).c_str(),
                ev.top5_error ? fixed2(*ev.top5_error).c_str() : "n/a");
    return 0;
}

int cmd_finetune(const Options& o) {
    if (o.checkpoint.empty()) throw std::invalid_argument("finetune needs --checkpoint");
    const KeyValueConfig cfg = load_config(o);
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    Model& model = loaded.model;
    const SgdConfig sgd = SgdConfig::from_config(cfg);
    const PreprocessConfig prep = preprocess_for(model.spec(), cfg);
    const std::uint64_t seed = resolve_seed(o, cfg);
    const std::string root = resolve_data(o, cfg);
    const Dataset train = load_dataset(root, Split::train);
    const Dataset val = load_dataset(root, Split::eval);
    finetune_prepare(model, static_cast<int>(train.num_classes()), o.freeze, seed);
    std::printf("finetune %s -> %zu classes (%s)\n", model.spec().display_name().c_str(), train.num_classes(),
                o.freeze ? "classifier only" : "all layers");
    run_epochs(model, train, val, prep, sgd, seed, o, true);
    return 0;
}

int cmd_viz_kernels(const Options& o) {
    if (o.checkpoint.empty()) throw std::invalid_argument("viz-kernels needs --checkpoint");
    LoadedCheckpoint loaded = load_checkpoint(o.checkpoint);
    const std::string layer = o.layer.empty() ? default_viz_layer(loaded.model) : o.layer;
    const Tensor& kernels = find_kernels(loaded.model, layer);
    const Aggregate agg = o.l2 ? Aggregate::l2 : Aggregate::l1;
    const KernelRanking ranking = rank_kernels(kernels, layer, o.count, agg);
    if (kernels.shape().n < o.count) {
        std::fprintf(stderr, "warning: %s has %zu kernels, fewer than the requested %zu; showing all\n",
                     layer.c_str(), kernels.shape().n, o.count);
    }
    fs::create_directories(o.out);
    const GrayImage grid = render_kernel_grid(kernels, ranking);
    const fs::path image_path = fs::path(o.out) / "kernels.pgm";
    write_pgm(grid, image_path,
              {"layer " + layer, "aggregate " + std::string(to_string(agg)) + " norm over k_i*f*f weights",
               "tiles channel-summed, min-max normalized per tile"});
    const fs::path csv_path = fs::path(o.out) / "ranking.csv";
    std::ofstream csv(csv_path, std::ios::trunc);
    write_ranking_csv(ranking, csv);
    if (!csv) throw std::runtime_error("cannot write " + csv_path.string());
    std::printf("%s: %zu kernels ranked by %s norm -> %s, %s\n", layer.c_str(), ranking.entries.size(),
                std::string(to_string(agg)).c_str(), image_path.string().c_str(), csv_path.string().c_str());
    return 0;
}

int cmd_make_toy_data(const Options& o) {
    ToyDataOptions opts;
    if (o.seed_given) opts.seed = o.seed;
    const std::size_t n = generate_toy_dataset(o.out, opts);
    std::printf("wrote %zu images under %s\n", n, o.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Vanilla, unshared and shared multi-scale convolutional networks"};
    app.require_subcommand(1);
    Options o;

    auto add_seed = [&](CLI::App* sub) {
        sub->add_option("--seed", o.seed, "Random seed")->each([&](const std::string&) { o.seed_given = true; });
    };

    auto* count = app.add_subcommand("count-params", "Print parameter and MAC counts for every variant");
    count->add_option("--config", o.config, "Architecture config")->required()->check(CLI::ExistingFile);

    auto* grad = app.add_subcommand("grad-check", "Compare analytic gradients with finite differences");
    grad->add_option("--layer", o.layer, "conv, conv-r2, smsc, smsc-n1, unshared, bn, linear, xent, relu, maxpool, gap or all");
    grad->add_option("--sizes", o.sizes, "Input extents N,C,H,W")->capture_default_str();
    grad->add_option("--out-channels", o.out_channels, "Output channels / classes")->capture_default_str();
    grad->add_flag("--corrupt", o.corrupt, "Perturb one analytic gradient entry (negative control)");
    add_seed(grad);

    auto* train = app.add_subcommand("train", "Train from scratch");
    train->add_option("--config", o.config, "Run config")->required()->check(CLI::ExistingFile);
    train->add_option("--data", o.data, "Dataset root");
    train->add_option("--out", o.out, "Output directory")->capture_default_str();
    train->add_flag("--timing", o.timing, "Record wall-clock seconds in the metrics CSV");
    add_seed(train);

    auto* eval = app.add_subcommand("eval", "Top-1/Top-5 error of a checkpoint");
    eval->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    eval->add_option("--data", o.data, "Dataset root");
    eval->add_option("--config", o.config, "Optional preprocessing config")->check(CLI::ExistingFile);

    auto* finetune = app.add_subcommand("finetune", "Replace the classifier and continue training");
    finetune->add_option("--checkpoint", o.checkpoint, "Pretrained checkpoint")->required()->check(CLI::ExistingFile);
    finetune->add_option("--config", o.config, "Run config")->required()->check(CLI::ExistingFile);
    finetune->add_option("--data", o.data, "Dataset root");
    finetune->add_option("--out", o.out, "Output directory")->capture_default_str();
    finetune->add_flag("--freeze", o.freeze, "Train only the new classifier");
    finetune->add_flag("--timing", o.timing, "Record wall-clock seconds in the metrics CSV");
    add_seed(finetune);

    auto* viz = app.add_subcommand("viz-kernels", "Render the highest-magnitude kernels of a layer");
    viz->add_option("--checkpoint", o.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
    viz->add_option("--layer", o.layer, "Layer or weight name (default: last spatial kernel)");
    viz->add_option("--count", o.count, "Kernels to show")->capture_default_str()->check(CLI::PositiveNumber);
    viz->add_option("--out", o.out, "Output directory")->capture_default_str();
    viz->add_flag("--l2", o.l2, "Rank by L2 instead of L1 norm");

    auto* toy = app.add_subcommand("make-toy-data", "Write the 3-class pattern dataset");
    toy->add_option("--out", o.out, "Output root")->required();
    add_seed(toy);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*count) return cmd_count_params(o);
        if (*grad) return cmd_grad_check(o);
        if (*train) return cmd_train(o);
        if (*eval) return cmd_eval(o);
        if (*finetune) return cmd_finetune(o);
        if (*viz) return cmd_viz_kernels(o);
        if (*toy) return cmd_make_toy_data(o);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 1;
}
