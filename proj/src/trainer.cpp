#include "tricov/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tricov/errors.hpp"
#include "tricov/parallel.hpp"

namespace tricov {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5eed0000ULL;
constexpr std::uint64_t kInitStream = 0x1417ULL;

struct MicroBatch {
  std::size_t first = 0;  // index into the flat patch list
  std::size_t count = 0;
  ForwardCache<float> cache;
  ParamGrads<float> grads;
};

bool all_finite(const Network<float>& net) {
  for (const auto& layer : net.layers()) {
    for (float v : layer.weights.data)
      if (!std::isfinite(v)) return false;
    for (float v : layer.bias.data)
      if (!std::isfinite(v)) return false;
  }
  return true;
}

void clip_gradients(Network<float>& net, double max_norm) {
  double sq = 0.0;
  for (const auto& layer : net.layers()) {
    for (float g : layer.weights.grad) sq += double(g) * g;
    for (float g : layer.bias.grad) sq += double(g) * g;
  }
  const double norm = std::sqrt(sq);
  if (!(norm > max_norm)) return;
  const float s = static_cast<float>(max_norm / norm);
  for (auto& layer : net.layers()) {
    for (float& g : layer.weights.grad) g *= s;
    for (float& g : layer.bias.grad) g *= s;
  }
}

class Run {
 public:
  Run(Checkpoint<float> state, const TupleSource& tuples, const TrainConfig& config,
      const TrainCallback& on_step)
      : ck_(std::move(state)), tuples_(tuples), config_(config), on_step_(on_step) {
    if (!config_.log_path.empty()) {
      const bool append = ck_.global_step > 0;
      log_.open(config_.log_path, append ? std::ios::app : std::ios::trunc);
      if (!log_) throw IoError("cannot write training log " + config_.log_path.string());
    }
  }

  TrainResult run() {
    const std::size_t steps_per_epoch = tuples_.size() / config_.batch_size;
    const auto start = std::chrono::steady_clock::now();
    TrainResult result;
    std::vector<std::size_t> order;
    std::uint32_t order_epoch = ~0u;
    while (ck_.epoch < config_.epochs) {
      if (config_.stop_after_steps != 0 && ck_.global_step >= config_.stop_after_steps) {
        break;
      }
      if (order_epoch != ck_.epoch) {
        order = epoch_permutation(tuples_.size(), config_.seed, ck_.epoch);
        order_epoch = ck_.epoch;
      }
      const std::size_t offset = ck_.step_in_epoch * config_.batch_size;
      std::span<const std::size_t> batch(order.data() + offset, config_.batch_size);

      const Checkpoint<float> last_good = ck_;
      TrainLogRecord record = step(batch);
      record.wall_clock =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      if (!std::isfinite(record.total) || !all_finite(ck_.network)) {
        abort_numeric(last_good, record);
      }

      ++ck_.step_in_epoch;
      ++ck_.global_step;
      if (ck_.step_in_epoch == steps_per_epoch) {
        lr_decay(ck_.optimizer);
        ++ck_.epoch;
        ck_.step_in_epoch = 0;
      }
      emit(record);
      result.log.push_back(record);
      if (config_.checkpoint_interval != 0 &&
          ck_.global_step % config_.checkpoint_interval == 0 &&
          !config_.checkpoint_path.empty()) {
        save_checkpoint(config_.checkpoint_path, ck_);
      }
    }
    result.completed = ck_.epoch >= config_.epochs;
    if (!config_.checkpoint_path.empty()) save_checkpoint(config_.checkpoint_path, ck_);
    result.checkpoint = std::move(ck_);
    return result;
  }

 private:
  TrainLogRecord step(std::span<const std::size_t> batch) {
    const int epoch = static_cast<int>(ck_.epoch);
    const auto needed = required_patches(config_.loss, epoch);

    // Flatten the needed patches of all tuples.
    std::vector<PatchTuple> tuples;
    tuples.reserve(batch.size());
    std::vector<std::array<std::size_t, 5>> slot(batch.size());
    std::vector<const Patch*> patches;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      tuples.push_back(tuples_.get(batch[b]));
    }
    for (std::size_t b = 0; b < batch.size(); ++b) {
      for (std::size_t r = 0; r < 5; ++r) {
        slot[b][r] = patches.size();
        if (needed[r]) patches.push_back(&tuples[b].patches[r]);
      }
    }

    const std::size_t mb_size = std::max<std::size_t>(1, config_.micro_batch);
    std::vector<MicroBatch> micro((patches.size() + mb_size - 1) / mb_size);
    for (std::size_t m = 0; m < micro.size(); ++m) {
      micro[m].first = m * mb_size;
      micro[m].count = std::min(mb_size, patches.size() - micro[m].first);
    }

    std::vector<Vec2> phi(patches.size(), Vec2::Zero());
    const auto& net = ck_.network;
    parallel_for(micro.size(), config_.threads, [&](std::size_t m) {
      auto& mb = micro[m];
      Tensor<float> input({1, mb.count, kPatchSize, kPatchSize});
      for (std::size_t i = 0; i < mb.count; ++i) {
        const auto& px = patches[mb.first + i]->pixels;
        std::copy(px.begin(), px.end(), input.data.begin() + i * kPatchValues);
      }
      const Tensor<float> out = net.forward(input, &mb.cache);
      for (std::size_t i = 0; i < mb.count; ++i) {
        phi[mb.first + i] = Vec2(out.data[i], out.data[mb.count + i]);
      }
    });

    TrainLogRecord record;
    record.epoch = ck_.epoch;
    record.step = ck_.step_in_epoch;
    record.global_step = ck_.global_step;
    record.learning_rate = ck_.optimizer.learning_rate;

    std::vector<Vec2> d_phi(patches.size(), Vec2::Zero());
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
      TupleOutputs outputs;
      outputs.fill(Vec2::Zero());
      for (std::size_t r = 0; r < 5; ++r) {
        if (needed[r]) outputs[r] = phi[slot[b][r]];
      }
      TupleGeometry geometry;
      geometry.translations = tuples[b].translations;
      geometry.affine = tuples[b].affine.linear;
      const LossOutput loss = loss_total(outputs, geometry, config_.loss, epoch);
      record.total += loss.total * scale;
      record.components.cov_tran += loss.components.cov_tran * scale;
      record.components.cov_aff += loss.components.cov_aff * scale;
      record.components.identity += loss.components.identity * scale;
      record.components.pairwise_cov += loss.components.pairwise_cov * scale;
      for (std::size_t r = 0; r < 5; ++r) {
        if (needed[r]) d_phi[slot[b][r]] = loss.gradients[r] * scale;
      }
    }
    if (!std::isfinite(record.total)) return record;

    parallel_for(micro.size(), config_.threads, [&](std::size_t m) {
      auto& mb = micro[m];
      Tensor<float> dout({2, mb.count, 1, 1});
      for (std::size_t i = 0; i < mb.count; ++i) {
        dout.data[i] = static_cast<float>(d_phi[mb.first + i].x());
        dout.data[mb.count + i] = static_cast<float>(d_phi[mb.first + i].y());
      }
      mb.grads = net.make_grads();
      net.backward(mb.cache, dout, mb.grads);
      mb.cache = {};
    });

    // Reduction in micro-batch order keeps the sum independent of threads.
    ck_.network.zero_grad();
    for (const auto& mb : micro) ck_.network.add_grads(mb.grads);
    if (config_.clip_norm > 0.0) clip_gradients(ck_.network, config_.clip_norm);
    sgd_step(ck_.network, ck_.optimizer);
    return record;
  }

  [[noreturn]] void abort_numeric(const Checkpoint<float>& last_good,
                                  const TrainLogRecord& record) {
    std::ostringstream msg;
    msg << "non-finite " << (std::isfinite(record.total) ? "weights" : "loss")
        << " at epoch " << record.epoch << " step " << record.step << " (global step "
        << record.global_step << ", lr " << record.learning_rate
        << ", cov_tran " << record.components.cov_tran << ", cov_aff "
        << record.components.cov_aff << ")";
    if (!config_.checkpoint_path.empty()) {
      const std::filesystem::path path = config_.checkpoint_path.string() + ".last-good";
      save_checkpoint(path, last_good);
      msg << "; last good state written to " << path.string();
    }
    throw NumericError(msg.str());
  }

  void emit(const TrainLogRecord& record) {
    if (log_.is_open()) {
      log_ << to_json(record) << '\n';
      log_.flush();
    }
    if (on_step_) on_step_(record);
  }

  Checkpoint<float> ck_;
  const TupleSource& tuples_;
  const TrainConfig& config_;
  const TrainCallback& on_step_;
  std::ofstream log_;
};

void check_config(const TupleSource& tuples, const TrainConfig& config) {
  config.loss.validate();
  if (config.batch_size == 0) throw InputError("batch size must be positive");
  if (tuples.size() < config.batch_size) {
    throw InputError("batch size " + std::to_string(config.batch_size) + " exceeds the " +
                     std::to_string(tuples.size()) + " available tuples");
  }
}

}  // namespace

std::vector<std::size_t> epoch_permutation(std::size_t count, std::uint64_t seed,
                                           std::uint32_t epoch) {
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed, kShuffleStream + epoch);
  for (std::size_t i = count; i > 1; --i) {
    std::swap(order[i - 1], order[rng.below(i)]);
  }
  return order;
}

TrainResult train(const TupleSource& tuples, const TrainConfig& config,
                  const TrainCallback& on_step) {
  check_config(tuples, config);
  Checkpoint<float> ck;
  ck.network = Network<float>::initialized(stream_seed(config.seed, kInitStream));
  ck.optimizer.momentum = config.momentum;
  ck.optimizer.base_learning_rate = config.learning_rate;
  ck.optimizer.learning_rate = config.learning_rate;
  ck.optimizer.decay_rate = config.decay_rate;
  ck.loss = config.loss;
  ck.total_epochs = config.epochs;
  ck.batch_size = config.batch_size;
  ck.tuple_count = tuples.size();
  ck.seed = config.seed;
  return Run(std::move(ck), tuples, config, on_step).run();
}

TrainResult resume(const Checkpoint<float>& start, const TupleSource& tuples,
                   const TrainConfig& config, const TrainCallback& on_step) {
  check_config(tuples, config);
  if (start.batch_size != config.batch_size) {
    throw InputError("checkpoint was trained with batch size " +
                     std::to_string(start.batch_size) + ", resume asked for " +
                     std::to_string(config.batch_size));
  }
  if (start.tuple_count != tuples.size()) {
    throw InputError("checkpoint was trained on " + std::to_string(start.tuple_count) +
                     " tuples, the archive has " + std::to_string(tuples.size()));
  }
  if (start.seed != config.seed) {
    throw InputError("checkpoint seed " + std::to_string(start.seed) +
                     " differs from the requested seed " + std::to_string(config.seed));
  }
  if (start.loss.variant != config.loss.variant) {
    throw InputError("checkpoint loss " + std::string(to_string(start.loss.variant)) +
                     " differs from the requested loss " +
                     std::string(to_string(config.loss.variant)));
  }
  Checkpoint<float> ck = start;
  ck.total_epochs = config.epochs;
  return Run(std::move(ck), tuples, config, on_step).run();
}

std::string to_json(const TrainLogRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["global_step"] = r.global_step;
  j["lr"] = r.learning_rate;
  j["loss"] = r.total;
  j["cov_tran"] = r.components.cov_tran;
  j["cov_aff"] = r.components.cov_aff;
  j["identity"] = r.components.identity;
  j["pairwise_cov"] = r.components.pairwise_cov;
  j["wall_clock"] = r.wall_clock;
  return j.dump();
}

TrainLogRecord parse_log_record(const std::string& line) {
  try {
    const auto j = nlohmann::json::parse(line);
    TrainLogRecord r;
    r.epoch = j.at("epoch").get<std::uint32_t>();
    r.step = j.at("step").get<std::uint64_t>();
    r.global_step = j.at("global_step").get<std::uint64_t>();
    r.learning_rate = j.at("lr").get<double>();
    r.total = j.at("loss").get<double>();
    r.components.cov_tran = j.at("cov_tran").get<double>();
    r.components.cov_aff = j.at("cov_aff").get<double>();
    r.components.identity = j.at("identity").get<double>();
    r.components.pairwise_cov = j.at("pairwise_cov").get<double>();
    r.wall_clock = j.at("wall_clock").get<double>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("bad training log record: ") + e.what());
  }
}

std::vector<TrainLogRecord> read_train_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open training log " + path.string());
  std::vector<TrainLogRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) records.push_back(parse_log_record(line));
  }
  return records;
}

}  // namespace tricov
