#include "msshare/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "msshare/model_zoo.hpp"

namespace msshare {

SgdConfig SgdConfig::full_scale() {
    SgdConfig c;
    c.step_epochs = 30;
    c.epochs = 100;
    c.batch_size = 256;
    return c;
}

SgdConfig SgdConfig::from_config(const KeyValueConfig& cfg) {
    SgdConfig c = desk();
    c.base_lr = cfg.get_double("base_lr", c.base_lr);
    c.momentum = cfg.get_double("momentum", c.momentum);
    c.weight_decay = cfg.get_double("weight_decay", c.weight_decay);
    c.step_epochs = static_cast<int>(cfg.get_int("step_epochs", c.step_epochs));
    c.gamma = cfg.get_double("gamma", c.gamma);
    c.epochs = static_cast<int>(cfg.get_int("epochs", c.epochs));
    c.batch_size = static_cast<int>(cfg.get_int("batch_size", c.batch_size));
    c.validate();
    return c;
}

void SgdConfig::validate() const {
    if (!(base_lr > 0) || momentum < 0 || weight_decay < 0 || step_epochs < 1 || epochs < 1 || batch_size < 1) {
        throw std::invalid_argument("sgd config: lr, step_epochs, epochs and batch_size must be positive");
    }
    if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("sgd config: gamma must lie in (0,1)");
}

double lr_at_epoch(int epoch, const SgdConfig& cfg) {
    if (epoch < 0) throw std::invalid_argument("lr_at_epoch: negative epoch");
    const int decays = epoch / cfg.step_epochs;
    const double inverse = 1.0 / cfg.gamma;
    const double rounded = std::round(inverse);
    if (std::abs(inverse - rounded) < 1e-9 * rounded) {
        double divisor = 1.0;
        for (int i = 0; i < decays; ++i) divisor *= rounded;
        return cfg.base_lr / divisor;
    }
    return cfg.base_lr * std::pow(cfg.gamma, decays);
}

OptimState OptimState::for_model(Model& model) {
    OptimState s;
    for (const StateEntry& e : model.trainable_parameters()) s.velocity.emplace_back(e.value->shape());
    return s;
}

void sgd_step(std::vector<StateEntry>& params, OptimState& state, double lr, const SgdConfig& cfg) {
    if (state.velocity.size() != params.size()) {
        throw std::invalid_argument("sgd_step: optimizer state tracks " + std::to_string(state.velocity.size()) +
                                    " parameters, model has " + std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const StateEntry& p = params[i];
        if (p.grad->shape() != p.value->shape() || state.velocity[i].shape() != p.value->shape()) {
            throw std::invalid_argument("sgd_step: shape mismatch for " + p.name);
        }
        p.grad->require_finite("gradient of " + p.name);
    }
    const auto momentum = static_cast<float>(cfg.momentum);
    const auto decay = static_cast<float>(cfg.weight_decay);
    const auto rate = static_cast<float>(lr);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& w = *params[i].value;
        const Tensor& g = *params[i].grad;
        Tensor& v = state.velocity[i];
        for (std::size_t j = 0; j < w.size(); ++j) {
            v[j] = momentum * v[j] + g[j] + decay * w[j];
            w[j] -= rate * v[j];
        }
    }
    ++state.step;
}

void sgd_step(Model& model, OptimState& state, double lr, const SgdConfig& cfg) {
    std::vector<StateEntry> params = model.trainable_parameters();
    sgd_step(params, state, lr, cfg);
}

namespace {

std::size_t argmax_row(const float* row, std::size_t k) {
    return static_cast<std::size_t>(std::max_element(row, row + k) - row);
}

}  // namespace

EpochMetrics train_epoch(Model& model, const Dataset& data, const PreprocessConfig& prep, const SgdConfig& cfg,
                         OptimState& state, int epoch, std::uint64_t seed) {
    if (data.samples.empty()) throw std::invalid_argument("train_epoch: empty dataset");
    EpochMetrics m;
    m.epoch = epoch;
    m.lr = lr_at_epoch(epoch, cfg);

    std::vector<std::size_t> order(data.samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 shuffle_rng = sample_rng(seed, static_cast<std::uint64_t>(epoch), ~std::uint64_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
    double loss_sum = 0;
    std::size_t wrong = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
        const std::size_t count = std::min(batch_size, order.size() - begin);
        Tensor batch(Shape{count, 3, prep.crop, prep.crop});
        std::vector<std::int32_t> labels(count);
        for (std::size_t i = 0; i < count; ++i) {
            const std::size_t idx = order[begin + i];
            std::mt19937_64 rng = sample_rng(seed, static_cast<std::uint64_t>(epoch), idx);
            preprocess_into(data.samples[idx].image, Split::train, prep, rng, batch, i);
            labels[i] = data.samples[idx].label;
        }
        const Tensor logits = model.forward(batch, true);
        const SoftmaxXentResult<float> loss = softmax_xent(logits, std::span<const std::int32_t>(labels));
        if (!std::isfinite(loss.loss)) throw std::domain_error("train_epoch: non-finite loss");
        const std::size_t classes = logits.shape().c;
        for (std::size_t i = 0; i < count; ++i) {
            if (argmax_row(logits.data() + i * classes, classes) != static_cast<std::size_t>(labels[i])) ++wrong;
        }
        model.backward(loss.grad_logits);
        sgd_step(model, state, m.lr, cfg);
        m.step_losses.push_back(loss.loss);
        loss_sum += static_cast<double>(loss.loss) * static_cast<double>(count);
    }
    m.train_loss = loss_sum / static_cast<double>(order.size());
    m.train_top1 = 100.0 * static_cast<double>(wrong) / static_cast<double>(order.size());
    return m;
}

std::vector<std::vector<float>> predict(Model& model, const Dataset& data, const PreprocessConfig& prep,
                                        std::size_t batch_size) {
    std::vector<std::vector<float>> out;
    out.reserve(data.samples.size());
    std::mt19937_64 unused(0);
    for (std::size_t begin = 0; begin < data.samples.size(); begin += batch_size) {
        const std::size_t count = std::min(batch_size, data.samples.size() - begin);
        Tensor batch(Shape{count, 3, prep.crop, prep.crop});
        for (std::size_t i = 0; i < count; ++i) {
            preprocess_into(data.samples[begin + i].image, Split::eval, prep, unused, batch, i);
        }
        const Tensor logits = model.forward(batch, false);
        const std::size_t classes = logits.shape().c;
        for (std::size_t i = 0; i < count; ++i) {
            out.emplace_back(logits.data() + i * classes, logits.data() + (i + 1) * classes);
        }
    }
    return out;
}

double topk_error(const std::vector<std::vector<float>>& logits, const std::vector<std::int32_t>& labels,
                  std::size_t k) {
    if (logits.size() != labels.size()) throw std::invalid_argument("topk_error: one label per row required");
    if (logits.empty()) throw std::invalid_argument("topk_error: no samples");
    std::size_t misses = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const std::vector<float>& row = logits[i];
        if (k > row.size()) {
            throw std::invalid_argument("top-" + std::to_string(k) + " error needs at least " + std::to_string(k) +
                                        " classes, have " + std::to_string(row.size()));
        }
        const auto label = static_cast<std::size_t>(labels[i]);
        if (label >= row.size()) throw std::out_of_range("topk_error: label outside class range");
        std::size_t rank = 0;
        for (std::size_t j = 0; j < row.size(); ++j) {
            if (row[j] > row[label] || (row[j] == row[label] && j < label)) ++rank;
        }
        if (rank >= k) ++misses;
    }
    return 100.0 * static_cast<double>(misses) / static_cast<double>(logits.size());
}

Evaluation evaluate(Model& model, const Dataset& data, const PreprocessConfig& prep, bool with_top5) {
    if (with_top5 && model.spec().num_classes < 5) {
        throw std::invalid_argument("top-5 error requested for a model with " +
                                    std::to_string(model.spec().num_classes) + " classes");
    }
    const std::vector<std::vector<float>> logits = predict(model, data, prep);
    const std::vector<std::int32_t> labels = data.labels();
    Evaluation e;
    e.top1_error = topk_error(logits, labels, 1);
    if (with_top5) e.top5_error = topk_error(logits, labels, 5);
    return e;
}

void finetune_prepare(Model& model, int new_num_classes, bool freeze_features, std::uint64_t seed) {
    if (new_num_classes < 2) throw std::invalid_argument("finetune: need at least 2 classes");
    Linear& old = model.classifier();
    model.replace_classifier(
        make_classifier(old.name(), old.in_features(), static_cast<std::size_t>(new_num_classes), seed));
    model.set_features_frozen(freeze_features);
}

double parameter_norm(const std::vector<StateEntry>& params) {
    double sum = 0;
    for (const StateEntry& e : params) {
        for (float v : e.value->values()) sum += static_cast<double>(v) * static_cast<double>(v);
    }
    return std::sqrt(sum);
}

MetricsCsv::MetricsCsv(std::ostream& out, std::vector<std::string> extra_columns)
    : out_(out), extra_(extra_columns.size()) {
    out_ << "epoch,lr,train_loss,train_top1,val_top1,val_top5,wall_seconds";
    for (const std::string& c : extra_columns) out_ << ',' << c;
    out_ << '\n';
}

void MetricsCsv::row(const EpochMetrics& m, std::optional<Evaluation> val, double wall_seconds,
                     const std::vector<double>& extra) {
    if (extra.size() != extra_) throw std::invalid_argument("MetricsCsv: extra column count mismatch");
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.10g,%.6f,%.4f,", m.epoch, m.lr, m.train_loss, m.train_top1);
    out_ << buf;
    if (val) {
        std::snprintf(buf, sizeof buf, "%.4f,", val->top1_error);
        out_ << buf;
        if (val->top5_error) {
            std::snprintf(buf, sizeof buf, "%.4f", *val->top5_error);
            out_ << buf;
        }
    } else {
        out_ << ',';
    }
    std::snprintf(buf, sizeof buf, ",%.3f", wall_seconds);
    out_ << buf;
    for (double v : extra) {
        std::snprintf(buf, sizeof buf, ",%.9g", v);
        out_ << buf;
    }
    out_ << '\n';
    out_.flush();
}

}  // namespace msshare
