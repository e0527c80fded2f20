#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "tricov/checkpoint.hpp"
#include "tricov/dataset.hpp"
#include "tricov/losses.hpp"

namespace tricov {

struct TrainConfig {
  std::uint32_t epochs = 10;
  std::uint32_t batch_size = 128;
  LossConfig loss;
  double learning_rate = 0.1;
  double momentum = 0.9;
  double decay_rate = 0.96;
  double clip_norm = 0.0;  // rescale the batch gradient to at most this L2 norm, 0 = off
  std::uint64_t seed = 0;
  std::uint64_t checkpoint_interval = 0;  // in steps, 0 = only the final one
  std::filesystem::path checkpoint_path;  // empty: nothing written
  std::filesystem::path log_path;         // JSON lines, empty: not written
  std::uint64_t stop_after_steps = 0;     // stop once global_step reaches this, 0 = never
  std::size_t micro_batch = 16;           // patches per forward/backward call
  std::size_t threads = 1;
};

struct TrainLogRecord {
  std::uint32_t epoch = 0;
  std::uint64_t step = 0;  // within the epoch
  std::uint64_t global_step = 0;
  double learning_rate = 0.0;
  double total = 0.0;
  LossComponents components;  // batch means
  double wall_clock = 0.0;    // seconds since the run (or resume) started
};

struct TrainResult {
  Checkpoint<float> checkpoint;
  std::vector<TrainLogRecord> log;
  bool completed = false;
};

using TrainCallback = std::function<void(const TrainLogRecord&)>;

// Fresh run from a seeded initialization.
TrainResult train(const TupleSource& tuples, const TrainConfig& config,
                  const TrainCallback& on_step = {});

// Continues `start`. Batch size, tuple count, seed and loss variant must
// match the checkpoint.
TrainResult resume(const Checkpoint<float>& start, const TupleSource& tuples,
                   const TrainConfig& config, const TrainCallback& on_step = {});

// Tuple order of one epoch.
std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed,
                                           std::uint32_t epoch);

std::string to_json(const TrainLogRecord& record);
TrainLogRecord parse_log_record(const std::string& line);
std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path);

}  // namespace tricov
