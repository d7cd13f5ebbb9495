#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "msshare/tensor.hpp"

namespace msshare {

enum class GradCheckLayer { conv, conv_dilated, smsc, smsc_n1, unshared, batchnorm, linear, softmax_xent, relu, maxpool, gap };

/// Accepts conv, conv-r2, smsc, smsc-n1, unshared, bn, linear, xent, relu, maxpool, gap.
GradCheckLayer parse_grad_check_layer(std::string_view name);
std::string_view to_string(GradCheckLayer layer);
std::vector<GradCheckLayer> all_grad_check_layers();

struct GradCheckOptions {
    Shape input{1, 2, 6, 6};
    std::size_t out_channels = 4;
    std::uint64_t seed = 1;
    double step = 1e-5;
    double tolerance = 1e-5;
    /// Negative control: perturbs one analytic gradient entry before comparison.
    bool corrupt_backward = false;
};

struct GradCheckQuantity {
    std::string name;
    std::size_t checked = 0;
    double max_rel_error = 0;
};

struct GradCheckReport {
    std::string layer;
    std::vector<GradCheckQuantity> quantities;
    double max_rel_error = 0;
    bool passed = false;
};

/// |a - n| / max(|a|, |n|, 1e-3). The floor keeps round-off in entries whose true
/// gradient is zero from dominating; above it the measure is purely relative.
double relative_error(double analytic, double numeric);

/// Compares 64-bit analytic gradients of a scalar loss (a random projection of the
/// layer output, or the loss itself for softmax-xent) against central differences.
GradCheckReport run_grad_check(GradCheckLayer layer, const GradCheckOptions& opts);

}  // namespace msshare
