#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "tricov/losses.hpp"
#include "tricov/nn.hpp"

namespace tricov {

// Network weights plus everything needed to resume training bit-exactly.
// Layout is described in docs/formats.md.
template <typename T>
struct Checkpoint {
  Network<T> network;
  OptimizerState<T> optimizer;
  LossConfig loss;
  std::uint32_t epoch = 0;          // epoch the next step belongs to
  std::uint64_t step_in_epoch = 0;  // steps already taken within `epoch`
  std::uint64_t global_step = 0;
  std::uint32_t total_epochs = 0;
  std::uint32_t batch_size = 0;
  std::uint64_t tuple_count = 0;
  std::uint64_t seed = 0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Checkpoint<T>& checkpoint);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// FNV-1a 64 of the file contents, hex encoded.
std::string file_hash(const std::filesystem::path& path);
std::string fnv1a_hex(std::string_view bytes);

}  // namespace tricov
