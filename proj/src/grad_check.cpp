#include "msshare/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>

#include "msshare/conv_ops.hpp"
#include "msshare/shared_msconv.hpp"

namespace msshare {

namespace {

struct LayerName {
    GradCheckLayer layer;
    std::string_view name;
};

constexpr LayerName kLayerNames[] = {
    {GradCheckLayer::conv, "conv"},          {GradCheckLayer::conv_dilated, "conv-r2"},
    {GradCheckLayer::smsc, "smsc"},          {GradCheckLayer::smsc_n1, "smsc-n1"},
    {GradCheckLayer::unshared, "unshared"},  {GradCheckLayer::batchnorm, "bn"},
    {GradCheckLayer::linear, "linear"},      {GradCheckLayer::softmax_xent, "xent"},
    {GradCheckLayer::relu, "relu"},          {GradCheckLayer::maxpool, "maxpool"},
    {GradCheckLayer::gap, "gap"},
};

using LossFn = std::function<double()>;

class Checker {
public:
    Checker(const GradCheckOptions& opts) : opts_(opts), rng_(opts.seed) {}

    TensorD random(Shape shape) {
        TensorD t(shape);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (double& v : t.values()) v = dist(rng_);
        return t;
    }
    std::mt19937_64& rng() { return rng_; }

    /// Central differences of `loss` w.r.t. every element of `wrt`, compared to `analytic`.
    void compare(std::string name, TensorD& wrt, TensorD analytic, const LossFn& loss) {
        if (analytic.shape() != wrt.shape()) throw std::logic_error("grad check: analytic shape mismatch for " + name);
        if (opts_.corrupt_backward && quantities_.empty() && !analytic.empty()) {
            analytic[0] += 0.1 * std::max(1.0, std::abs(analytic[0]));
        }
        GradCheckQuantity q{std::move(name), wrt.size(), 0.0};
        const double h = opts_.step;
        for (std::size_t i = 0; i < wrt.size(); ++i) {
            const double saved = wrt[i];
            wrt[i] = saved + h;
            const double plus = loss();
            wrt[i] = saved - h;
            const double minus = loss();
            wrt[i] = saved;
            const double numeric = (plus - minus) / (2 * h);
            q.max_rel_error = std::max(q.max_rel_error, relative_error(analytic[i], numeric));
        }
        quantities_.push_back(std::move(q));
    }

    GradCheckReport report(GradCheckLayer layer) const {
        GradCheckReport r;
        r.layer = std::string(to_string(layer));
        r.quantities = quantities_;
        for (const GradCheckQuantity& q : quantities_) r.max_rel_error = std::max(r.max_rel_error, q.max_rel_error);
        r.passed = r.max_rel_error <= opts_.tolerance;
        return r;
    }

private:
    const GradCheckOptions& opts_;
    std::mt19937_64 rng_;
    std::vector<GradCheckQuantity> quantities_;
};

double project(const TensorD& out, const TensorD& proj) {
    if (out.shape() != proj.shape()) throw std::logic_error("grad check: projection shape mismatch");
    double sum = 0;
    for (std::size_t i = 0; i < out.size(); ++i) sum += out[i] * proj[i];
    return sum;
}

TensorD scaled(TensorD t, double factor) {
    for (double& v : t.values()) v *= factor;
    return t;
}

void check_conv(Checker& c, const GradCheckOptions& o, std::size_t dilation) {
    TensorD x = c.random(o.input);
    ConvWeights<double> w{c.random(Shape{o.out_channels, o.input.c, 3, 3}), c.random(Shape{o.out_channels, 1, 1, 1})};
    const ConvParams p{1, dilation, dilation};
    const TensorD proj = c.random(conv2d_forward(x, w, p).shape());
    const LossFn loss = [&] { return project(conv2d_forward(x, w, p), proj); };
    ConvGrads<double> g = conv2d_backward(x, w, proj, p);
    c.compare("input", x, std::move(g.input), loss);
    c.compare("weight", w.kernels, std::move(g.kernels), loss);
    c.compare("bias", w.bias, std::move(g.bias), loss);
}

void check_smsc(Checker& c, const GradCheckOptions& o, std::size_t n) {
    const SharedMultiScaleConvSpec spec = SharedMultiScaleConvSpec::make(o.input.c, o.out_channels, 3, n);
    TensorD x = c.random(o.input);
    ConvWeights<double> w{c.random(Shape{spec.branch_channels(), o.input.c, 3, 3}),
                          c.random(Shape{spec.branch_channels(), 1, 1, 1})};
    const TensorD proj = c.random(smsc_forward(x, w, spec).shape());
    const LossFn loss = [&] { return project(smsc_forward(x, w, spec), proj); };
    SharedBackward<double> g = smsc_backward(x, w, proj, spec);
    // The expectation rescales the tied-weight gradient by 1/n.
    const auto rates = static_cast<double>(n);
    c.compare("input", x, std::move(g.grad_input), loss);
    c.compare("n*expected_weight", w.kernels, scaled(std::move(g.grads.expected), rates), loss);
    c.compare("n*expected_bias", w.bias, scaled(std::move(g.grads.expected_bias), rates), loss);
}

void check_unshared(Checker& c, const GradCheckOptions& o) {
    const SharedMultiScaleConvSpec spec = SharedMultiScaleConvSpec::make(o.input.c, o.out_channels, 3, 2);
    TensorD x = c.random(o.input);
    std::vector<ConvWeights<double>> w;
    for (std::size_t k = 0; k < spec.n(); ++k) {
        w.push_back({c.random(Shape{spec.branch_channels(), o.input.c, 3, 3}), TensorD()});
    }
    const std::span<const ConvWeights<double>> ws(w);
    const TensorD proj = c.random(unshared_msconv_forward(x, ws, spec).shape());
    const LossFn loss = [&] { return project(unshared_msconv_forward(x, ws, spec), proj); };
    UnsharedBackward<double> g = unshared_msconv_backward(x, ws, proj, spec);
    c.compare("input", x, std::move(g.grad_input), loss);
    for (std::size_t k = 0; k < spec.n(); ++k) {
        c.compare("rate" + std::to_string(spec.rates[k]) + ".weight", w[k].kernels, std::move(g.per_rate[k].kernels),
                  loss);
    }
}

void check_batchnorm(Checker& c, const GradCheckOptions& o) {
    TensorD x = c.random(o.input);
    BatchNormState<double> state = BatchNormState<double>::identity(o.input.c);
    state.scale = c.random(state.scale.shape());
    state.shift = c.random(state.shift.shape());
    const TensorD proj = c.random(o.input);
    const LossFn loss = [&] {
        BatchNormState<double> scratch = state;
        return project(batchnorm_forward(x, scratch, true), proj);
    };
    BatchNormState<double> scratch = state;
    BatchNormCache<double> cache;
    batchnorm_forward(x, scratch, true, &cache);
    BatchNormGrads<double> g = batchnorm_backward(proj, state, cache);
    c.compare("input", x, std::move(g.input), loss);
    c.compare("scale", state.scale, std::move(g.scale), loss);
    c.compare("shift", state.shift, std::move(g.shift), loss);
}

void check_linear(Checker& c, const GradCheckOptions& o) {
    TensorD x = c.random(o.input);
    const std::size_t in = o.input.c * o.input.h * o.input.w;
    TensorD w = c.random(Shape{o.out_channels, in, 1, 1});
    TensorD b = c.random(Shape{o.out_channels, 1, 1, 1});
    const TensorD proj = c.random(Shape{o.input.n, o.out_channels, 1, 1});
    const LossFn loss = [&] { return project(linear_forward(x, w, b), proj); };
    LinearGrads<double> g = linear_backward(x, w, proj);
    c.compare("input", x, std::move(g.input), loss);
    c.compare("weight", w, std::move(g.weight), loss);
    c.compare("bias", b, std::move(g.bias), loss);
}

void check_xent(Checker& c, const GradCheckOptions& o) {
    const std::size_t classes = std::max<std::size_t>(o.out_channels, 2);
    TensorD logits = c.random(Shape{o.input.n, classes, 1, 1});
    std::vector<std::int32_t> labels(o.input.n);
    for (auto& l : labels) l = static_cast<std::int32_t>(c.rng()() % classes);
    const std::span<const std::int32_t> ls(labels);
    const LossFn loss = [&] { return softmax_xent(logits, ls).loss; };
    c.compare("logits", logits, softmax_xent(logits, ls).grad_logits, loss);
}

void check_relu(Checker& c, const GradCheckOptions& o) {
    TensorD x = c.random(o.input);
    const TensorD proj = c.random(o.input);
    const LossFn loss = [&] { return project(relu_forward(x), proj); };
    c.compare("input", x, relu_backward(x, proj), loss);
}

void check_maxpool(Checker& c, const GradCheckOptions& o) {
    TensorD x = c.random(o.input);
    const PoolParams p{3, 2, 1};
    const MaxPoolResult<double> r = maxpool_forward(x, p);
    const TensorD proj = c.random(r.output.shape());
    const LossFn loss = [&] { return project(maxpool_forward(x, p).output, proj); };
    c.compare("input", x, maxpool_backward(proj, std::span<const std::size_t>(r.argmax), x.shape()), loss);
}

void check_gap(Checker& c, const GradCheckOptions& o) {
    TensorD x = c.random(o.input);
    const TensorD proj = c.random(Shape{o.input.n, o.input.c, 1, 1});
    const LossFn loss = [&] { return project(global_avg_pool_forward(x), proj); };
    c.compare("input", x, global_avg_pool_backward(proj, x.shape()), loss);
}

}  // namespace

GradCheckLayer parse_grad_check_layer(std::string_view name) {
    for (const LayerName& l : kLayerNames) {
        if (l.name == name) return l.layer;
    }
    std::string known;
    for (const LayerName& l : kLayerNames) known += (known.empty() ? "" : ", ") + std::string(l.name);
    throw std::invalid_argument("unknown layer '" + std::string(name) + "' (known: " + known + ")");
}

std::string_view to_string(GradCheckLayer layer) {
    for (const LayerName& l : kLayerNames) {
        if (l.layer == layer) return l.name;
    }
    return "?";
}

std::vector<GradCheckLayer> all_grad_check_layers() {
    std::vector<GradCheckLayer> out;
    for (const LayerName& l : kLayerNames) out.push_back(l.layer);
    return out;
}

double relative_error(double analytic, double numeric) {
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    return std::abs(analytic - numeric) / scale;
}

GradCheckReport run_grad_check(GradCheckLayer layer, const GradCheckOptions& opts) {
    if (opts.input.count() == 0 || opts.out_channels == 0) throw std::invalid_argument("grad check: empty sizes");
    Checker c(opts);
    switch (layer) {
        case GradCheckLayer::conv: check_conv(c, opts, 1); break;
        case GradCheckLayer::conv_dilated: check_conv(c, opts, 2); break;
        case GradCheckLayer::smsc: check_smsc(c, opts, 2); break;
        case GradCheckLayer::smsc_n1: check_smsc(c, opts, 1); break;
        case GradCheckLayer::unshared: check_unshared(c, opts); break;
        case GradCheckLayer::batchnorm: check_batchnorm(c, opts); break;
        case GradCheckLayer::linear: check_linear(c, opts); break;
        case GradCheckLayer::softmax_xent: check_xent(c, opts); break;
        case GradCheckLayer::relu: check_relu(c, opts); break;
        case GradCheckLayer::maxpool: check_maxpool(c, opts); break;
        case GradCheckLayer::gap: check_gap(c, opts); break;
    }
    return c.report(layer);
}

}  // namespace msshare
