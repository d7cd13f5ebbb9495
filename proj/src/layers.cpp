#include "msshare/layers.hpp"

#include <stdexcept>

namespace msshare {

Conv2d::Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel,
               ConvParams params, bool bias)
    : Layer(std::move(name)), params_(params) {
    if (kernel % 2 == 0) throw std::invalid_argument(this->name() + ": kernel size must be odd");
    weights_.kernels = Tensor(Shape{out_channels, in_channels, kernel, kernel});
    grad_kernels_ = Tensor(weights_.kernels.shape());
    if (bias) {
        weights_.bias = Tensor(Shape{out_channels, 1, 1, 1});
        grad_bias_ = Tensor(weights_.bias.shape());
    }
}

Shape Conv2d::output_shape(const Shape& input) const {
    const Shape& k = weights_.kernels.shape();
    if (input.c != k.c) throw std::invalid_argument(name() + ": channel mismatch, got " + input.str());
    const ConvGeometry g{k.h, k.w, params_.stride, params_.padding, params_.dilation};
    return {input.n, k.n, g.out_h(input.h), g.out_w(input.w)};
}

std::uint64_t Conv2d::macs(const Shape& input) const {
    const Shape out = output_shape(input);
    return std::uint64_t{weights_.kernels.size()} * out.h * out.w * out.n;
}

Tensor Conv2d::forward(const Tensor& input, bool /*training*/) {
    input_ = input;
    return conv2d_forward(input, weights_, params_);
}

Tensor Conv2d::backward(const Tensor& grad_out) {
    ConvGrads<float> g = conv2d_backward(input_, weights_, grad_out, params_);
    grad_kernels_ = std::move(g.kernels);
    if (weights_.has_bias()) grad_bias_ = std::move(g.bias);
    return std::move(g.input);
}

void Conv2d::collect_state(std::vector<StateEntry>& out) {
    const Shape& k = weights_.kernels.shape();
    out.push_back({name() + ".weight", StateRole::weight, &weights_.kernels, &grad_kernels_, k.c * k.h * k.w});
    if (weights_.has_bias()) out.push_back({name() + ".bias", StateRole::bias, &weights_.bias, &grad_bias_, 0});
}

MultiScaleConv2d::MultiScaleConv2d(std::string name, SharedMultiScaleConvSpec spec, bool shared, bool bias)
    : Layer(std::move(name)), spec_(std::move(spec)), shared_(shared) {
    spec_.validate();
    const std::size_t sets = shared_ ? 1 : spec_.n();
    const Shape kshape{spec_.branch_channels(), spec_.in_channels, spec_.kernel_size, spec_.kernel_size};
    for (std::size_t k = 0; k < sets; ++k) {
        ConvWeights<float> w;
        w.kernels = Tensor(kshape);
        if (bias) w.bias = Tensor(Shape{spec_.branch_channels(), 1, 1, 1});
        grad_kernels_.emplace_back(kshape);
        grad_bias_.push_back(bias ? Tensor(Shape{spec_.branch_channels(), 1, 1, 1}) : Tensor());
        weights_.push_back(std::move(w));
    }
}

Shape MultiScaleConv2d::output_shape(const Shape& input) const { return spec_.output_shape(input); }

std::uint64_t MultiScaleConv2d::macs(const Shape& input) const { return msconv_macs(spec_, input) * input.n; }

Tensor MultiScaleConv2d::forward(const Tensor& input, bool /*training*/) {
    input_ = input;
    if (shared_) return smsc_forward(input, weights_.front(), spec_);
    return unshared_msconv_forward(input, std::span<const ConvWeights<float>>(weights_), spec_);
}

Tensor MultiScaleConv2d::backward(const Tensor& grad_out) {
    if (shared_) {
        SharedBackward<float> r = smsc_backward(input_, weights_.front(), grad_out, spec_);
        grad_kernels_.front() = r.grads.expected;
        if (weights_.front().has_bias()) grad_bias_.front() = r.grads.expected_bias;
        last_gradient_ = std::move(r.grads);
        return std::move(r.grad_input);
    }
    UnsharedBackward<float> r =
        unshared_msconv_backward(input_, std::span<const ConvWeights<float>>(weights_), grad_out, spec_);
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        grad_kernels_[k] = std::move(r.per_rate[k].kernels);
        if (weights_[k].has_bias()) grad_bias_[k] = std::move(r.per_rate[k].bias);
    }
    return std::move(r.grad_input);
}

void MultiScaleConv2d::collect_state(std::vector<StateEntry>& out) {
    const std::size_t fan_in = spec_.in_channels * spec_.kernel_size * spec_.kernel_size;
    for (std::size_t k = 0; k < weights_.size(); ++k) {
        const std::string prefix = shared_ ? name() : name() + ".rate" + std::to_string(spec_.rates[k]);
        out.push_back({prefix + ".weight", StateRole::weight, &weights_[k].kernels, &grad_kernels_[k], fan_in});
        if (weights_[k].has_bias()) {
            out.push_back({prefix + ".bias", StateRole::bias, &weights_[k].bias, &grad_bias_[k], 0});
        }
    }
}

BatchNorm2d::BatchNorm2d(std::string name, std::size_t channels)
    : Layer(std::move(name)),
      state_(BatchNormState<float>::identity(channels)),
      grad_scale_(Shape{channels, 1, 1, 1}),
      grad_shift_(Shape{channels, 1, 1, 1}) {}

Tensor BatchNorm2d::forward(const Tensor& input, bool training) {
    return batchnorm_forward(input, state_, training, &cache_);
}

Tensor BatchNorm2d::backward(const Tensor& grad_out) {
    BatchNormGrads<float> g = batchnorm_backward(grad_out, state_, cache_);
    grad_scale_ = std::move(g.scale);
    grad_shift_ = std::move(g.shift);
    return std::move(g.input);
}

void BatchNorm2d::collect_state(std::vector<StateEntry>& out) {
    out.push_back({name() + ".weight", StateRole::bn_scale, &state_.scale, &grad_scale_, 0});
    out.push_back({name() + ".bias", StateRole::bn_shift, &state_.shift, &grad_shift_, 0});
    out.push_back({name() + ".running_mean", StateRole::running_mean, &state_.running_mean, nullptr, 0});
    out.push_back({name() + ".running_var", StateRole::running_var, &state_.running_var, nullptr, 0});
}

Tensor ReLU::forward(const Tensor& input, bool /*training*/) {
    input_ = input;
    return relu_forward(input);
}

Tensor ReLU::backward(const Tensor& grad_out) { return relu_backward(input_, grad_out); }

Shape MaxPool2d::output_shape(const Shape& input) const {
    const ConvGeometry g{params_.kernel, params_.kernel, params_.stride, params_.padding, 1};
    return {input.n, input.c, g.out_h(input.h), g.out_w(input.w)};
}

Tensor MaxPool2d::forward(const Tensor& input, bool /*training*/) {
    input_shape_ = input.shape();
    MaxPoolResult<float> r = maxpool_forward(input, params_);
    argmax_ = std::move(r.argmax);
    return std::move(r.output);
}

Tensor MaxPool2d::backward(const Tensor& grad_out) { return maxpool_backward(grad_out, argmax_, input_shape_); }

Tensor GlobalAvgPool::forward(const Tensor& input, bool /*training*/) {
    input_shape_ = input.shape();
    return global_avg_pool_forward(input);
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) { return global_avg_pool_backward(grad_out, input_shape_); }

Linear::Linear(std::string name, std::size_t in_features, std::size_t out_features)
    : Layer(std::move(name)),
      weight_(Shape{out_features, in_features, 1, 1}),
      bias_(Shape{out_features, 1, 1, 1}),
      grad_weight_(weight_.shape()),
      grad_bias_(bias_.shape()) {}

Shape Linear::output_shape(const Shape& input) const {
    if (input.c * input.h * input.w != in_features()) {
        throw std::invalid_argument(name() + ": expects " + std::to_string(in_features()) + " features, got " +
                                    input.str());
    }
    return {input.n, out_features(), 1, 1};
}

std::uint64_t Linear::macs(const Shape& input) const {
    return std::uint64_t{weight_.size()} * output_shape(input).n;
}

Tensor Linear::forward(const Tensor& input, bool /*training*/) {
    input_ = input;
    return linear_forward(input, weight_, bias_);
}

Tensor Linear::backward(const Tensor& grad_out) {
    LinearGrads<float> g = linear_backward(input_, weight_, grad_out);
    grad_weight_ = std::move(g.weight);
    grad_bias_ = std::move(g.bias);
    return std::move(g.input);
}

void Linear::collect_state(std::vector<StateEntry>& out) {
    out.push_back({name() + ".weight", StateRole::weight, &weight_, &grad_weight_, in_features()});
    out.push_back({name() + ".bias", StateRole::bias, &bias_, &grad_bias_, 0});
}

Layer& Sequential::add(std::unique_ptr<Layer> layer) {
    layers_.push_back(std::move(layer));
    return *layers_.back();
}

Shape Sequential::output_shape(const Shape& input) const {
    Shape s = input;
    for (const auto& l : layers_) s = l->output_shape(s);
    return s;
}

std::uint64_t Sequential::macs(const Shape& input) const {
    std::uint64_t total = 0;
    Shape s = input;
    for (const auto& l : layers_) {
        total += l->macs(s);
        s = l->output_shape(s);
    }
    return total;
}

Tensor Sequential::forward(const Tensor& input, bool training) {
    Tensor x = input;
    for (auto& l : layers_) x = l->forward(x, training);
    return x;
}

Tensor Sequential::backward(const Tensor& grad_out) {
    Tensor g = grad_out;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void Sequential::collect_state(std::vector<StateEntry>& out) {
    for (auto& l : layers_) l->collect_state(out);
}

void Sequential::visit(const std::function<void(Layer&)>& fn) {
    fn(*this);
    for (auto& l : layers_) l->visit(fn);
}

ResidualBlock::ResidualBlock(std::string name, std::unique_ptr<Sequential> body, std::unique_ptr<Sequential> shortcut)
    : Layer(std::move(name)), body_(std::move(body)), shortcut_(std::move(shortcut)) {
    if (!shortcut_) shortcut_ = std::make_unique<Sequential>(this->name() + ".downsample");
}

Shape ResidualBlock::output_shape(const Shape& input) const {
    const Shape a = body_->output_shape(input);
    const Shape b = shortcut_->output_shape(input);
    if (a != b) throw std::invalid_argument(name() + ": residual addends differ, " + a.str() + " vs " + b.str());
    return a;
}

std::uint64_t ResidualBlock::macs(const Shape& input) const { return body_->macs(input) + shortcut_->macs(input); }

Tensor ResidualBlock::forward(const Tensor& input, bool training) {
    Tensor a = body_->forward(input, training);
    const Tensor b = shortcut_->forward(input, training);
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(name() + ": residual addends differ, " + a.shape().str() + " vs " + b.shape().str());
    }
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    sum_ = a;
    return relu_forward(a);
}

Tensor ResidualBlock::backward(const Tensor& grad_out) {
    const Tensor g = relu_backward(sum_, grad_out);
    Tensor gx = body_->backward(g);
    const Tensor gs = shortcut_->backward(g);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gs[i];
    return gx;
}

void ResidualBlock::collect_state(std::vector<StateEntry>& out) {
    body_->collect_state(out);
    shortcut_->collect_state(out);
}

void ResidualBlock::visit(const std::function<void(Layer&)>& fn) {
    fn(*this);
    body_->visit(fn);
    shortcut_->visit(fn);
}

Model::Model(ArchSpec spec, std::unique_ptr<Sequential> features, std::unique_ptr<Linear> classifier)
    : spec_(std::move(spec)), features_(std::move(features)), classifier_(std::move(classifier)) {}

Tensor Model::forward(const Tensor& input, bool training) {
    const Tensor f = features_->forward(input, training && !features_frozen_);
    return classifier_->forward(f, training);
}

void Model::backward(const Tensor& grad_logits) {
    const Tensor g = classifier_->backward(grad_logits);
    if (!features_frozen_) features_->backward(g);
}

std::vector<StateEntry> Model::state() {
    std::vector<StateEntry> out;
    features_->collect_state(out);
    classifier_->collect_state(out);
    return out;
}

std::vector<StateEntry> Model::parameters(bool include_classifier) {
    std::vector<StateEntry> all;
    features_->collect_state(all);
    if (include_classifier) classifier_->collect_state(all);
    std::erase_if(all, [](const StateEntry& e) { return !e.learned(); });
    return all;
}

std::vector<StateEntry> Model::trainable_parameters() {
    std::vector<StateEntry> out;
    if (!features_frozen_) features_->collect_state(out);
    classifier_->collect_state(out);
    std::erase_if(out, [](const StateEntry& e) { return !e.learned(); });
    return out;
}

void Model::replace_classifier(std::unique_ptr<Linear> classifier) {
    if (!classifier) throw std::invalid_argument("replace_classifier: null classifier");
    if (classifier->in_features() != classifier_->in_features()) {
        throw std::invalid_argument("replace_classifier: feature dimension mismatch");
    }
    classifier_ = std::move(classifier);
    spec_.num_classes = static_cast<int>(classifier_->out_features());
}

Shape Model::output_shape(const Shape& input) const {
    return classifier_->output_shape(features_->output_shape(input));
}

std::uint64_t Model::macs(const Shape& input) const {
    return features_->macs(input) + classifier_->macs(features_->output_shape(input));
}

Layer* Model::find_layer(std::string_view name) {
    Layer* found = nullptr;
    auto match = [&](Layer& l) {
        if (!found && l.name() == name) found = &l;
    };
    features_->visit(match);
    classifier_->visit(match);
    return found;
}

}  // namespace msshare
