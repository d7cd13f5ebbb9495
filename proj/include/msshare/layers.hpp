#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "msshare/arch_spec.hpp"
#include "msshare/conv_ops.hpp"
#include "msshare/shared_msconv.hpp"

namespace msshare {

enum class StateRole { weight, bias, bn_scale, bn_shift, running_mean, running_var };

/// A named tensor owned by a layer. Learned entries carry a gradient slot;
/// running statistics do not.
struct StateEntry {
    std::string name;
    StateRole role = StateRole::weight;
    Tensor* value = nullptr;
    Tensor* grad = nullptr;
    std::size_t fan_in = 0;  // weights only

    bool learned() const { return grad != nullptr; }
};

class Layer {
public:
    explicit Layer(std::string name) : name_(std::move(name)) {}
    virtual ~Layer() = default;
    Layer(const Layer&) = delete;
    Layer& operator=(const Layer&) = delete;

    const std::string& name() const { return name_; }
    virtual std::string_view kind() const = 0;

    virtual Shape output_shape(const Shape& input) const = 0;
    /// Multiply-accumulates of one forward pass for `input`.
    virtual std::uint64_t macs(const Shape& /*input*/) const { return 0; }

    /// Caches what backward needs. `training` selects batch-statistics normalization.
    virtual Tensor forward(const Tensor& input, bool training) = 0;
    /// Overwrites the gradient slots of this layer's learned entries.
    virtual Tensor backward(const Tensor& grad_out) = 0;

    /// Appends owned tensors in canonical order.
    virtual void collect_state(std::vector<StateEntry>& /*out*/) {}
    /// Calls `fn` on this layer and, for containers, every nested layer in order.
    virtual void visit(const std::function<void(Layer&)>& fn) { fn(*this); }

private:
    std::string name_;
};

class Conv2d final : public Layer {
public:
    Conv2d(std::string name, std::size_t in_channels, std::size_t out_channels, std::size_t kernel, ConvParams params,
           bool bias);
    std::string_view kind() const override { return "conv"; }
    Shape output_shape(const Shape& input) const override;
    std::uint64_t macs(const Shape& input) const override;
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_state(std::vector<StateEntry>& out) override;

    ConvWeights<float>& weights() { return weights_; }
    const ConvParams& params() const { return params_; }

private:
    ConvWeights<float> weights_;
    ConvParams params_;
    Tensor grad_kernels_;
    Tensor grad_bias_;
    Tensor input_;
};

/// Multi-scale convolution. Shared mode holds one (k_o/n, k_i, f, f) kernel tensor
/// trained with the expected per-rate gradient; unshared mode holds n independent ones.
class MultiScaleConv2d final : public Layer {
public:
    MultiScaleConv2d(std::string name, SharedMultiScaleConvSpec spec, bool shared, bool bias);
    std::string_view kind() const override { return shared_ ? "shared_msconv" : "unshared_msconv"; }
    Shape output_shape(const Shape& input) const override;
    std::uint64_t macs(const Shape& input) const override;
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_state(std::vector<StateEntry>& out) override;

    bool shared() const { return shared_; }
    const SharedMultiScaleConvSpec& spec() const { return spec_; }
    /// One entry in shared mode, n in unshared mode.
    std::vector<ConvWeights<float>>& branch_weights() { return weights_; }
    /// Per-rate gradients of the last shared backward pass.
    const SharedGradient<float>& last_shared_gradient() const { return last_gradient_; }

private:
    SharedMultiScaleConvSpec spec_;
    bool shared_;
    std::vector<ConvWeights<float>> weights_;
    std::vector<Tensor> grad_kernels_;
    std::vector<Tensor> grad_bias_;
    SharedGradient<float> last_gradient_;
    Tensor input_;
};

class BatchNorm2d final : public Layer {
public:
    BatchNorm2d(std::string name, std::size_t channels);
    std::string_view kind() const override { return "bn"; }
    Shape output_shape(const Shape& input) const override { return input; }
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_state(std::vector<StateEntry>& out) override;

    BatchNormState<float>& state() { return state_; }

private:
    BatchNormState<float> state_;
    BatchNormCache<float> cache_;
    Tensor grad_scale_;
    Tensor grad_shift_;
};

class ReLU final : public Layer {
public:
    explicit ReLU(std::string name) : Layer(std::move(name)) {}
    std::string_view kind() const override { return "relu"; }
    Shape output_shape(const Shape& input) const override { return input; }
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Tensor input_;
};

class MaxPool2d final : public Layer {
public:
    MaxPool2d(std::string name, PoolParams params) : Layer(std::move(name)), params_(params) {}
    std::string_view kind() const override { return "maxpool"; }
    Shape output_shape(const Shape& input) const override;
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    PoolParams params_;
    Shape input_shape_;
    std::vector<std::size_t> argmax_;
};

class GlobalAvgPool final : public Layer {
public:
    explicit GlobalAvgPool(std::string name) : Layer(std::move(name)) {}
    std::string_view kind() const override { return "gap"; }
    Shape output_shape(const Shape& input) const override { return {input.n, input.c, 1, 1}; }
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;

private:
    Shape input_shape_;
};

class Linear final : public Layer {
public:
    Linear(std::string name, std::size_t in_features, std::size_t out_features);
    std::string_view kind() const override { return "linear"; }
    Shape output_shape(const Shape& input) const override;
    std::uint64_t macs(const Shape& input) const override;
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_state(std::vector<StateEntry>& out) override;

    std::size_t in_features() const { return weight_.shape().c; }
    std::size_t out_features() const { return weight_.shape().n; }
    Tensor& weight() { return weight_; }
    Tensor& bias() { return bias_; }

private:
    Tensor weight_;  // (out, in, 1, 1)
    Tensor bias_;    // (out, 1, 1, 1)
    Tensor grad_weight_;
    Tensor grad_bias_;
    Tensor input_;
};

class Sequential : public Layer {
public:
    explicit Sequential(std::string name) : Layer(std::move(name)) {}
    std::string_view kind() const override { return "sequential"; }

    Layer& add(std::unique_ptr<Layer> layer);
    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        return static_cast<L&>(add(std::make_unique<L>(std::forward<Args>(args)...)));
    }
    bool empty() const { return layers_.empty(); }
    std::size_t size() const { return layers_.size(); }

    Shape output_shape(const Shape& input) const override;
    std::uint64_t macs(const Shape& input) const override;
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_state(std::vector<StateEntry>& out) override;
    void visit(const std::function<void(Layer&)>& fn) override;

private:
    std::vector<std::unique_ptr<Layer>> layers_;
};

/// relu(body(x) + shortcut(x)); an empty shortcut is the identity.
class ResidualBlock final : public Layer {
public:
    ResidualBlock(std::string name, std::unique_ptr<Sequential> body, std::unique_ptr<Sequential> shortcut);
    std::string_view kind() const override { return "residual"; }
    Shape output_shape(const Shape& input) const override;
    std::uint64_t macs(const Shape& input) const override;
    Tensor forward(const Tensor& input, bool training) override;
    Tensor backward(const Tensor& grad_out) override;
    void collect_state(std::vector<StateEntry>& out) override;
    void visit(const std::function<void(Layer&)>& fn) override;

private:
    std::unique_ptr<Sequential> body_;
    std::unique_ptr<Sequential> shortcut_;
    Tensor sum_;
};

/// Feature extractor followed by the final linear classifier.
class Model {
public:
    Model(ArchSpec spec, std::unique_ptr<Sequential> features, std::unique_ptr<Linear> classifier);

    const ArchSpec& spec() const { return spec_; }
    Sequential& features() { return *features_; }
    Linear& classifier() { return *classifier_; }

    /// Logits (N, classes, 1, 1). Frozen features always run in eval mode.
    Tensor forward(const Tensor& input, bool training);
    /// Back-propagates d loss / d logits. Stops after the classifier when features are frozen.
    void backward(const Tensor& grad_logits);

    /// Every owned tensor in canonical order, classifier last.
    std::vector<StateEntry> state();
    /// Learned entries that the optimizer updates (frozen features excluded).
    std::vector<StateEntry> trainable_parameters();
    /// Learned entries, optionally without the classifier.
    std::vector<StateEntry> parameters(bool include_classifier);

    void replace_classifier(std::unique_ptr<Linear> classifier);
    void set_features_frozen(bool frozen) { features_frozen_ = frozen; }
    bool features_frozen() const { return features_frozen_; }

    Shape output_shape(const Shape& input) const;
    std::uint64_t macs(const Shape& input) const;

    /// Layer by name, searched through nested containers; nullptr if absent.
    Layer* find_layer(std::string_view name);

private:
    ArchSpec spec_;
    std::unique_ptr<Sequential> features_;
    std::unique_ptr<Linear> classifier_;
    bool features_frozen_ = false;
};

}  // namespace msshare
