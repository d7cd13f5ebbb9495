// Acceptance runner: one PASS/FAIL line per criterion, tolerances printed with
// each line. `msshare_acceptance [criterion...]` runs the listed ones (default all).
// Exit status is nonzero when any selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "msshare/checkpoint.hpp"
#include "msshare/grad_check.hpp"
#include "msshare/image.hpp"
#include "msshare/model_zoo.hpp"
#include "msshare/shared_msconv.hpp"
#include "msshare/train.hpp"
#include "oracles.hpp"
#include "run_command.hpp"
#include "scratch_dir.hpp"

using namespace msshare;
namespace fs = std::filesystem;

namespace {

const std::string kBin = MSSHARE_BIN;
const fs::path kSource = MSSHARE_SOURCE_DIR;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

struct Outcome {
    bool pass = false;
    std::string summary;
};

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CommandResult cli(const std::string& args) { return run_command(quoted(kBin) + " " + args); }

// 1. count-params output, rounded to two decimals, against the published table.
Outcome parameter_counts() {
    struct Row {
        const char* config;
        const char* vanilla;
        const char* shared;
    };
    const Row rows[] = {{"alexnet", "57.00", "55.77"},  {"resnet18", "11.17", "8.04"},
                        {"resnet34", "21.29", "15.63"}, {"resnet50", "23.51", "17.85"},
                        {"resnet101", "42.50", "31.83"}, {"resnet152", "58.14", "43.34"}};
    const auto start = Clock::now();
    int matched = 0;
    bool unshared_ok = true;
    for (const Row& row : rows) {
        const CommandResult r = cli("count-params --config " + quoted((kSource / "configs" / (std::string(row.config) + ".cfg")).string()));
        std::map<std::string, std::pair<unsigned long long, std::string>> got;
        std::istringstream is(r.output);
        std::string line;
        std::getline(is, line);
        std::getline(is, line);
        while (std::getline(is, line)) {
            std::istringstream ls(line);
            std::string name, scaled;
            unsigned long long params = 0;
            ls >> name >> params >> scaled;
            got[name] = {params, scaled};
        }
        const bool v = got["vanilla"].second == row.vanilla;
        const bool s = got["shared"].second == row.shared;
        const bool u = got["unshared"].first == got["vanilla"].first && r.exit_code == 0;
        matched += v + s;
        unshared_ok = unshared_ok && u;
        std::printf("    %-9s vanilla %s (want %s)%s  shared %s (want %s)%s  unshared==vanilla %s\n", row.config,
                    got["vanilla"].second.c_str(), row.vanilla, v ? "" : " MISMATCH", got["shared"].second.c_str(),
                    row.shared, s ? "" : " MISMATCH", u ? "yes" : "NO");
    }
    const double t = seconds_since(start);
    return {matched == 12 && unshared_ok && t < 5.0,
            std::to_string(matched) + "/12 values match at 2 decimals (exact), unshared==vanilla " +
                (unshared_ok ? "in all families" : "VIOLATED") + ", " + fmt("%.2f", t) + " s (limit 5 s)"};
}

// 2. Adjoints against 64-bit central differences.
Outcome gradient_checks() {
    const auto start = Clock::now();
    const GradCheckLayer layers[] = {GradCheckLayer::conv,    GradCheckLayer::conv_dilated, GradCheckLayer::smsc,
                                     GradCheckLayer::smsc_n1, GradCheckLayer::batchnorm,   GradCheckLayer::linear,
                                     GradCheckLayer::softmax_xent};
    const Shape sizes[] = {{1, 2, 6, 6}, {2, 3, 8, 7}};
    bool ok = true;
    double worst = 0;
    for (const Shape& s : sizes) {
        for (GradCheckLayer l : layers) {
            GradCheckOptions o;
            o.input = s;
            o.out_channels = 4;
            o.seed = 11 + s.n;
            o.tolerance = 1e-5;
            const GradCheckReport r = run_grad_check(l, o);
            std::printf("    %-8s input %-12s max_rel_error %.3e %s\n", r.layer.c_str(), s.str().c_str(),
                        r.max_rel_error, r.passed ? "ok" : "FAIL");
            ok = ok && r.passed;
            worst = std::max(worst, r.max_rel_error);
        }
    }
    const double t = seconds_since(start);
    return {ok && t < 30.0, "worst max_rel_error " + fmt("%.3e", worst) + " (tolerance 1e-5, floor 1e-3), " +
                                fmt("%.2f", t) + " s (limit 30 s)"};
}

// 3. Shared layer vs independent convolutions sharing one weight tensor.
Outcome oracle_equivalence() {
    bool concat_ok = true, n1_ok = true, mean_ok = true;
    std::uint64_t seed = 300;
    for (std::size_t f : {1, 3, 5}) {
        for (std::size_t stride : {1, 2}) {
            const auto spec = SharedMultiScaleConvSpec::make(3, 8, f, 2, stride);
            const TensorD x = oracle::random_tensor<double>({2, 3, 8, 8}, ++seed);
            ConvWeights<double> w{oracle::random_tensor<double>({4, 3, f, f}, ++seed),
                                  oracle::random_tensor<double>({4, 1, 1, 1}, ++seed)};
            const TensorD y = smsc_forward(x, w, spec);
            TensorD ref(y.shape());
            for (std::size_t k = 0; k < 2; ++k) {
                const std::size_t r = spec.rates[k];
                const TensorD branch = oracle::direct_conv<double>(x, w.kernels, &w.bias, stride, spec.padding_for_rate(r), r);
                for (std::size_t n = 0; n < 2; ++n)
                    for (std::size_t c = 0; c < 4; ++c)
                        for (std::size_t i = 0; i < branch.shape().h * branch.shape().w; ++i) {
                            ref[ref.offset(n, 4 * k + c, 0, 0) + i] = branch[branch.offset(n, c, 0, 0) + i];
                        }
            }
            concat_ok = concat_ok && y == ref;

            const auto spec1 = SharedMultiScaleConvSpec::make(3, 4, f, 1, stride);
            n1_ok = n1_ok && smsc_forward(x, w, spec1) == conv2d_forward(x, w, ConvParams{stride, (f - 1) / 2, 1});

            const TensorD go = oracle::random_tensor<double>(y.shape(), ++seed);
            const SharedBackward<double> b = smsc_backward(x, w, go, spec);
            TensorD mean(w.kernels.shape());
            TensorD mean_bias(w.bias.shape());
            for (std::size_t i = 0; i < mean.size(); ++i) {
                mean[i] = (b.grads.per_rate[0][i] + b.grads.per_rate[1][i]) / 2.0;
            }
            for (std::size_t i = 0; i < mean_bias.size(); ++i) {
                mean_bias[i] = (b.grads.per_rate_bias[0][i] + b.grads.per_rate_bias[1][i]) / 2.0;
            }
            mean_ok = mean_ok && b.grads.expected == mean && b.grads.expected_bias == mean_bias;
        }
    }
    std::printf("    n=2 concat %s, n=1 vs conv2d %s, expected == mean %s (f in {1,3,5}, stride in {1,2})\n",
                concat_ok ? "equal" : "DIFFER", n1_ok ? "equal" : "DIFFER", mean_ok ? "equal" : "DIFFER");
    return {concat_ok && n1_ok && mean_ok, "bitwise equality in 64-bit (tolerance 0)"};
}

// 4. MACs of the three ResNet101 variants at 224.
Outcome complexity_parity() {
    ArchSpec s;
    s.depth = 101;
    std::uint64_t macs[3];
    int i = 0;
    for (Variant v : {Variant::vanilla, Variant::unshared, Variant::shared}) {
        Model m = build_topology(s.with_variant(v));
        macs[i++] = flop_count(m, 224);
    }
    std::printf("    vanilla %llu  unshared %llu  shared %llu\n", static_cast<unsigned long long>(macs[0]),
                static_cast<unsigned long long>(macs[1]), static_cast<unsigned long long>(macs[2]));
    return {macs[0] == macs[1] && macs[1] == macs[2], "ResNet101 MACs at 224x224 equal (exact)"};
}

struct ToyResult {
    double train_acc = 0;
    double val_acc = 0;
};

ToyResult train_toy(const char* config) {
    const fs::path cfg_path = kSource / "configs" / config;
    KeyValueConfig cfg = KeyValueConfig::load(cfg_path);
    const ArchSpec spec = ArchSpec::from_config(cfg);
    const SgdConfig sgd = SgdConfig::from_config(cfg);
    cfg.set("crop", std::to_string(spec.input_size));
    const PreprocessConfig prep = PreprocessConfig::from_config(cfg);
    const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed", 0));
    const fs::path root = cfg_path.parent_path() / cfg.require_string("data");
    const Dataset train = load_dataset(root, Split::train);
    const Dataset val = load_dataset(root, Split::eval);
    Model m = build_model(spec, seed);
    OptimState st = OptimState::for_model(m);
    for (int e = 0; e < sgd.epochs; ++e) train_epoch(m, train, prep, sgd, st, e, seed);
    ToyResult r;
    r.train_acc = 100.0 - evaluate(m, train, prep, false).top1_error;
    r.val_acc = 100.0 - evaluate(m, val, prep, false).top1_error;
    std::printf("    %-7s %zu train / %zu val images, %d epochs, batch %d: train acc %.2f%%, val acc %.2f%%\n",
                std::string(to_string(spec.variant)).c_str(), train.samples.size(), val.samples.size(), sgd.epochs,
                sgd.batch_size, r.train_acc, r.val_acc);
    std::fflush(stdout);
    return r;
}

// 5. Desk-scale learning on the bundled toy set.
Outcome desk_learning() {
    const auto start = Clock::now();
    const ToyResult shared = train_toy("toy_shared.cfg");
    const ToyResult vanilla = train_toy("toy_vanilla.cfg");
    const double t = seconds_since(start);
    const double gap = std::abs(shared.val_acc - vanilla.val_acc);
    const bool ok = shared.train_acc >= 99.0 && vanilla.train_acc >= 99.0 && shared.val_acc >= 80.0 &&
                    vanilla.val_acc >= 80.0 && gap <= 5.0 && t < 900.0;
    return {ok, "train acc >= 99% (both), val acc >= 80% (both), val gap " + fmt("%.2f", gap) +
                    " pts (limit 5), " + fmt("%.0f", t) + " s (limit 900 s)"};
}

// 6. Repeat runs, checkpoint round trip, CRC.
Outcome determinism(const ScratchDir& dir) {
    const std::string cfg = read_text(kSource / "configs/toy_shared.cfg");
    std::ostringstream small;
    std::istringstream is(cfg);
    for (std::string line; std::getline(is, line);) {
        if (line.starts_with("epochs") || line.starts_with("data")) continue;
        small << line << '\n';
    }
    small << "epochs=2\ndata=" << (kSource / "data/toy").string() << '\n';
    std::ofstream(dir / "det.cfg") << small.str();

    bool runs_ok = true;
    for (const char* out : {"run1", "run2"}) {
        const CommandResult r = cli("train --config " + quoted((dir / "det.cfg").string()) + " --out " + quoted((dir / out).string()));
        runs_ok = runs_ok && r.exit_code == 0;
    }
    const bool csv_same = runs_ok && read_text(dir / "run1/metrics.csv") == read_text(dir / "run2/metrics.csv");

    LoadedCheckpoint loaded = load_checkpoint(dir / "run1/last.ckpt");
    save_checkpoint(loaded.model, loaded.optim ? &*loaded.optim : nullptr, dir / "resaved.ckpt");
    const bool round_trip = read_text(dir / "run1/last.ckpt") == read_text(dir / "resaved.ckpt");

    std::string bytes = read_text(dir / "resaved.ckpt");
    bytes[bytes.size() / 3] = static_cast<char>(bytes[bytes.size() / 3] ^ 0x10);
    std::ofstream(dir / "corrupt.ckpt", std::ios::binary) << bytes;
    bool crc_error = false;
    try {
        load_checkpoint(dir / "corrupt.ckpt");
    } catch (const CheckpointError& e) {
        crc_error = std::string(e.what()).find("CRC mismatch") != std::string::npos;
    }
    const CommandResult ev = cli("eval --checkpoint " + quoted((dir / "corrupt.ckpt").string()) + " --data " +
                                 quoted((kSource / "data/toy").string()));
    crc_error = crc_error && ev.exit_code != 0 && ev.output.find("CRC mismatch") != std::string::npos;

    std::printf("    metrics.csv identical %s, save->load->save identical %s, corrupted byte -> CRC error %s\n",
                csv_same ? "yes" : "NO", round_trip ? "yes" : "NO", crc_error ? "yes" : "NO");
    return {csv_same && round_trip && crc_error, "byte equality (exact)"};
}

// 7. Learning-rate schedule with the full-scale protocol.
Outcome schedule() {
    const SgdConfig c = SgdConfig::full_scale();
    const int epochs[] = {0, 30, 60, 90};
    const double want[] = {0.1, 0.01, 0.001, 0.0001};
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
        const double lr = lr_at_epoch(epochs[i], c);
        std::printf("    epoch %2d lr %.17g\n", epochs[i], lr);
        ok = ok && lr == want[i];
    }
    return {ok, "0.1/0.01/0.001/0.0001 at epochs 0/30/60/90 (exact double equality)"};
}

// 8. viz-kernels on the trained checkpoint from criterion 6 (or a fresh one).
Outcome visualization(const ScratchDir& dir) {
    if (!fs::exists(dir / "run1/last.ckpt")) determinism(dir);
    const fs::path ckpt = dir / "run1/last.ckpt";
    const CommandResult r = cli("viz-kernels --checkpoint " + quoted(ckpt.string()) + " --out " + quoted((dir / "viz").string()));
    if (r.exit_code != 0) return {false, "viz-kernels failed: " + r.output};
    const GrayImage grid = read_pgm(dir / "viz/kernels.pgm");

    // Recompute L1 norms straight from the checkpoint payload.
    std::ifstream in(ckpt, std::ios::binary);
    const std::vector<std::uint8_t> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    const CheckpointContents contents = decode_checkpoint(raw, ckpt.string());
    std::string layer;
    const std::string header = read_text(dir / "viz/kernels.pgm");
    const std::size_t at = header.find("# layer ");
    if (at != std::string::npos) layer = header.substr(at + 8, header.find('\n', at) - at - 8);
    const CheckpointEntry* entry = nullptr;
    for (const CheckpointEntry& e : contents.entries) {
        if (e.name == layer) entry = &e;
    }
    if (!entry) return {false, "layer '" + layer + "' not found in checkpoint"};
    const std::size_t per = entry->shape.c * entry->shape.h * entry->shape.w;
    std::vector<double> l1(entry->shape.n, 0.0);
    for (std::size_t k = 0; k < entry->shape.n; ++k)
        for (std::size_t j = 0; j < per; ++j) l1[k] += std::abs(static_cast<double>(entry->values[k * per + j]));

    std::istringstream csv(read_text(dir / "viz/ranking.csv"));
    std::string line;
    std::getline(csv, line);
    double worst = 0;
    std::size_t rows = 0;
    while (std::getline(csv, line)) {
        std::size_t rank, index;
        double magnitude;
        if (std::sscanf(line.c_str(), "%zu,%zu,%lf", &rank, &index, &magnitude) != 3 || index >= l1.size()) {
            return {false, "malformed ranking row '" + line + "'"};
        }
        worst = std::max(worst, std::abs(magnitude - l1[index]) / std::max(l1[index], 1e-30));
        ++rows;
    }
    const std::size_t side = 16 * entry->shape.h + 15;
    const bool grid_ok = grid.width == side && grid.height == side;
    std::printf("    layer %s (%zu kernels): grid %zux%zu px = 16x16 tiles %s, %zu ranking rows, worst rel diff %.3e\n",
                layer.c_str(), entry->shape.n, grid.width, grid.height, grid_ok ? "yes" : "NO", rows, worst);
    const bool ok = grid_ok && rows == std::min<std::size_t>(256, entry->shape.n) && worst <= 1e-6;
    return {ok, "16x16 grid, ranking magnitudes vs recomputed L1 (tolerance 1e-6 relative)"};
}

}  // namespace

int main(int argc, char** argv) {
    std::vector<int> which;
    for (int i = 1; i < argc; ++i) which.push_back(std::atoi(argv[i]));
    if (which.empty()) which = {1, 2, 3, 4, 5, 6, 7, 8};

    ScratchDir scratch("acceptance");
    const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria{
        {1, {"parameter counts", parameter_counts}},
        {2, {"gradient checks", gradient_checks}},
        {3, {"oracle equivalence", oracle_equivalence}},
        {4, {"complexity parity", complexity_parity}},
        {5, {"desk-scale learning", desk_learning}},
        {6, {"determinism and persistence", [&] { return determinism(scratch); }}},
        {7, {"schedule", schedule}},
        {8, {"visualization", [&] { return visualization(scratch); }}},
    };
    bool all = true;
    for (int c : which) {
        const auto it = criteria.find(c);
        if (it == criteria.end()) {
            std::fprintf(stderr, "unknown criterion %d\n", c);
            return 2;
        }
        std::printf("criterion %d: %s\n", c, it->second.first);
        std::fflush(stdout);
        Outcome o;
        try {
            o = it->second.second();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c, it->second.first, o.summary.c_str());
        std::fflush(stdout);
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
