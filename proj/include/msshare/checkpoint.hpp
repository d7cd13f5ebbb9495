#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "msshare/layers.hpp"
#include "msshare/train.hpp"

namespace msshare {

// Layout (all integers little-endian):
//   "MSSHARE\0"                       8 bytes
//   version                           u32
//   arch text length, arch text       u32, UTF-8 key=value lines
//   entry count                       u32
//   per entry: name length, name, shape (4 x u32), payload (f32 x shape product)
//   CRC-32 of every preceding byte    u32
//
// Model entries follow Model::state() order. Optimizer state, when present, is
// appended as "optim.velocity.<param>" entries and a one-element "optim.step".

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointEntry {
    std::string name;
    Shape shape;
    std::vector<float> values;
};

struct CheckpointContents {
    std::uint32_t version = kCheckpointVersion;
    std::string arch_text;
    std::vector<CheckpointEntry> entries;
};

std::vector<std::uint8_t> encode_checkpoint(const CheckpointContents& contents);
/// Validates magic, CRC and version. `source` names the input in error messages.
CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source);

CheckpointContents snapshot(Model& model, const OptimState* optim);

void save_checkpoint(Model& model, const OptimState* optim, const std::filesystem::path& path);

struct LoadedCheckpoint {
    Model model;
    std::optional<OptimState> optim;
};

/// Rebuilds the topology from the stored architecture text, then loads payloads.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

/// Loads payloads into an already-built model. Throws CheckpointError naming the
/// first entry whose name or shape disagrees with the model.
void load_checkpoint_into(const std::filesystem::path& path, Model& model, OptimState* optim = nullptr);

}  // namespace msshare
