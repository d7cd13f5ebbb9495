#pragma once

#include <cstdint>
#include <vector>

#include "msshare/arch_spec.hpp"
#include "msshare/layers.hpp"

namespace msshare {

/// Topology only; every tensor zero except BN scale (1) and running variance (1).
Model build_topology(const ArchSpec& spec);

/// build_topology followed by he_init(seed).
Model build_model(const ArchSpec& spec, std::uint64_t seed);

/// Conv and linear weights ~ N(0, 2/fan_in) drawn from one generator in canonical
/// state order, biases 0, BN scale 1 / shift 0, running statistics reset.
void he_init(Model& model, std::uint64_t seed);

/// Fresh He-initialized linear layer.
std::unique_ptr<Linear> make_classifier(std::string name, std::size_t in_features, std::size_t classes, std::uint64_t seed);

/// Weights, biases and BN scale/shift. Running statistics are never counted.
std::uint64_t count_params(Model& model, bool include_classifier = false);

/// Multiply-accumulates of one forward pass on a 1x3xSxS input.
std::uint64_t flop_count(const Model& model, std::size_t input_size);

/// Names of the convolutions that the shared/unshared variants split into rate
/// branches, in build order.
std::vector<std::string> multiscale_layer_names(const ArchSpec& spec);

}  // namespace msshare
