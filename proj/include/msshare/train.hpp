#pragma once

#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "msshare/config.hpp"
#include "msshare/dataset.hpp"
#include "msshare/layers.hpp"

namespace msshare {

struct SgdConfig {
    double base_lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 0.0001;
    int step_epochs = 10;
    double gamma = 0.1;
    int epochs = 30;
    int batch_size = 32;

    /// ImageNet-scale protocol: 100 epochs, batch 256, decay every 30 epochs.
    static SgdConfig full_scale();
    /// Desk-scale defaults: 30 epochs, batch 32, decay every 10 epochs.
    static SgdConfig desk() { return {}; }
    /// Overrides desk defaults with base_lr, momentum, weight_decay, step_epochs, gamma, epochs, batch_size.
    static SgdConfig from_config(const KeyValueConfig& cfg);

    void validate() const;
};

/// base_lr * gamma^floor(epoch / step_epochs). When 1/gamma is an integer the
/// power is applied as an exact division so 0.1 decays to exactly 0.01, 0.001, ...
double lr_at_epoch(int epoch, const SgdConfig& cfg);

/// Velocity per trainable parameter, aligned with Model::trainable_parameters().
struct OptimState {
    std::vector<Tensor> velocity;
    std::uint64_t step = 0;

    static OptimState for_model(Model& model);
};

/// v <- momentum*v + grad + weight_decay*w ; w <- w - lr*v, for every entry in
/// `params`. Throws std::domain_error naming the parameter on a non-finite gradient.
void sgd_step(std::vector<StateEntry>& params, OptimState& state, double lr, const SgdConfig& cfg);
/// Applies sgd_step to model.trainable_parameters().
void sgd_step(Model& model, OptimState& state, double lr, const SgdConfig& cfg);

struct EpochMetrics {
    int epoch = 0;
    double lr = 0;
    double train_loss = 0;
    double train_top1 = 0;  // error, percent, measured on the augmented training batches
    std::vector<double> step_losses;
};

struct Evaluation {
    double top1_error = 0;                 // percent
    std::optional<double> top5_error;      // percent; absent with fewer than 5 classes
};

/// One shuffled pass with per-sample augmentation. Deterministic in (seed, epoch).
EpochMetrics train_epoch(Model& model, const Dataset& data, const PreprocessConfig& prep, const SgdConfig& cfg,
                         OptimState& state, int epoch, std::uint64_t seed);

/// Logits of every sample (eval-mode preprocessing and BN), in dataset order.
std::vector<std::vector<float>> predict(Model& model, const Dataset& data, const PreprocessConfig& prep,
                                        std::size_t batch_size = 64);

/// Percentage of rows whose label is not among the k largest logits; equal logits
/// rank the lower class index first.
double topk_error(const std::vector<std::vector<float>>& logits, const std::vector<std::int32_t>& labels,
                  std::size_t k);

/// Top-1 and, when `with_top5`, top-5 error. Throws std::invalid_argument when
/// top-5 is requested for fewer than 5 classes.
Evaluation evaluate(Model& model, const Dataset& data, const PreprocessConfig& prep, bool with_top5);

/// Swaps in a freshly initialized classifier with `new_num_classes` outputs.
/// `freeze_features` leaves only the classifier trainable.
void finetune_prepare(Model& model, int new_num_classes, bool freeze_features, std::uint64_t seed);

/// L2 norm over the given parameters' values.
double parameter_norm(const std::vector<StateEntry>& params);

/// Writes the header `epoch,lr,train_loss,train_top1,val_top1,val_top5,wall_seconds`
/// followed by `extra` column names.
class MetricsCsv {
public:
    MetricsCsv(std::ostream& out, std::vector<std::string> extra_columns = {});
    void row(const EpochMetrics& m, std::optional<Evaluation> val, double wall_seconds,
             const std::vector<double>& extra = {});

private:
    std::ostream& out_;
    std::size_t extra_;
};

}  // namespace msshare
