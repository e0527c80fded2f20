#include "tricov/gradcheck.hpp"

#include <chrono>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "tricov/dataset.hpp"
#include "tricov/errors.hpp"
#include "tricov/losses.hpp"
#include "tricov/nn.hpp"
#include "tricov/random.hpp"

namespace tricov {

bool GradcheckReport::pass() const {
  if (entries.empty()) return false;
  for (const auto& e : entries)
    if (!e.pass) return false;
  return true;
}

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(std::abs(analytic) + std::abs(numeric), 1e-8);
}

namespace {

void record(GradcheckEntry& e, double analytic, double numeric, const std::string& where) {
  ++e.checked;
  if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
    if (e.finite) e.worst = where;
    e.finite = false;
    return;
  }
  const double err = relative_error(analytic, numeric);
  if (err >= e.max_relative_error && e.finite) {
    e.max_relative_error = err;
    e.worst = where;
  }
}

Mat2 random_affinity(Rng& rng) {
  AugmentationConfig aug;
  return sample_affinity(aug, rng);
}

// Random outputs/geometry near a realistic operating point.
void random_tuple(Rng& rng, TupleOutputs& phi, TupleGeometry& geo) {
  for (auto& p : phi) p = Vec2(rng.uniform(-4, 4), rng.uniform(-4, 4));
  for (auto& t : geo.translations) t = Vec2(rng.uniform(-6, 6), rng.uniform(-6, 6));
  geo.affine = random_affinity(rng);
}

void check_losses(const GradcheckConfig& config, Rng& rng, std::vector<GradcheckEntry>& out) {
  const double h = config.step;
  const std::size_t trials = 20;
  for (auto variant : {LossVariant::kTripAff, LossVariant::kTrip, LossVariant::kCovAff,
                       LossVariant::kCovdet, LossVariant::kDdet}) {
    GradcheckEntry e;
    e.name = "loss " + std::string(to_string(variant));
    LossConfig lc;
    lc.variant = variant;
    for (std::size_t trial = 0; trial < trials; ++trial) {
      TupleOutputs phi;
      TupleGeometry geo;
      random_tuple(rng, phi, geo);
      const int epoch = lc.affine_enabled_epoch + static_cast<int>(trial % 2);
      const LossOutput base = loss_total(phi, geo, lc, epoch);
      for (std::size_t r = 0; r < 5; ++r) {
        for (int c = 0; c < 2; ++c) {
          TupleOutputs plus = phi, minus = phi;
          plus[r](c) += h;
          minus[r](c) -= h;
          const double num = (loss_total(plus, geo, lc, epoch).total -
                              loss_total(minus, geo, lc, epoch).total) / (2 * h);
          record(e, base.gradients[r](c), num,
                 "trial " + std::to_string(trial) + " patch " + std::to_string(r) + " axis " +
                     std::to_string(c));
        }
      }
    }
    out.push_back(e);
  }

  // The two covariance terms on their own.
  GradcheckEntry tran, aff;
  tran.name = "loss cov_tran term";
  aff.name = "loss cov_aff term";
  for (std::size_t trial = 0; trial < trials; ++trial) {
    TupleOutputs phi;
    TupleGeometry geo;
    random_tuple(rng, phi, geo);
    const auto& t = geo.translations;
    auto tran_value = [&](const TupleOutputs& p) {
      return loss_cov_tran(p[0], p[1], p[2], p[3], t[0], t[1], t[2], 2.0, 1.0).value;
    };
    const CovTranLoss base = loss_cov_tran(phi[0], phi[1], phi[2], phi[3], t[0], t[1], t[2], 2.0, 1.0);
    const PairLoss pair = loss_cov_aff(phi[0], phi[4], geo.affine);
    for (std::size_t r = 0; r < 5; ++r) {
      for (int c = 0; c < 2; ++c) {
        TupleOutputs plus = phi, minus = phi;
        plus[r](c) += h;
        minus[r](c) -= h;
        const std::string where = "trial " + std::to_string(trial) + " patch " +
                                  std::to_string(r) + " axis " + std::to_string(c);
        if (r < 4) {
          record(tran, base.gradients[r](c), (tran_value(plus) - tran_value(minus)) / (2 * h),
                 where);
        }
        if (r == 0 || r == 4) {
          const double num = (loss_cov_aff(plus[0], plus[4], geo.affine).value -
                              loss_cov_aff(minus[0], minus[4], geo.affine).value) / (2 * h);
          record(aff, r == 0 ? pair.d_first(c) : pair.d_second(c), num, where);
        }
      }
    }
  }
  out.push_back(tran);
  out.push_back(aff);
}

struct NetworkProbe {
  Network<double> net;
  Tensor<double> input;  // (1, 5, 32, 32)
  TupleGeometry geometry;
  LossConfig loss;

  double value(ForwardCache<double>* cache = nullptr) const {
    const Tensor<double> out = net.forward(input, cache);
    TupleOutputs phi;
    for (std::size_t i = 0; i < 5; ++i) phi[i] = Vec2(out.data[i], out.data[5 + i]);
    return loss_total(phi, geometry, loss, loss.affine_enabled_epoch).total;
  }
};

// Same ReLU pattern and pooling switches.
bool same_pattern(const ForwardCache<double>& a, const ForwardCache<double>& b) {
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    if (a.pool_argmax[l] != b.pool_argmax[l]) return false;
    const auto& x = a.outputs[l].data;
    const auto& y = b.outputs[l].data;
    for (std::size_t i = 0; i < x.size(); ++i) {
      if ((x[i] > 0.0) != (y[i] > 0.0)) return false;
    }
  }
  return true;
}

void check_network(const GradcheckConfig& config, Rng& rng, std::vector<GradcheckEntry>& out) {
  NetworkProbe probe;
  probe.net = Network<double>::initialized(stream_seed(config.seed, 0x9c));
  // Nonzero biases so bias gradients see both ReLU states.
  for (auto& layer : probe.net.layers())
    for (double& b : layer.bias.data) b = rng.uniform(-0.05, 0.05);
  probe.input = Tensor<double>({1, 5, kPatchSize, kPatchSize});
  for (double& v : probe.input.data) v = rng.normal();
  for (auto& t : probe.geometry.translations) t = Vec2(rng.uniform(-6, 6), rng.uniform(-6, 6));
  probe.geometry.affine = random_affinity(rng);

  ForwardCache<double> base_cache;
  const Tensor<double> out_base = probe.net.forward(probe.input, &base_cache);
  TupleOutputs phi;
  for (std::size_t i = 0; i < 5; ++i) phi[i] = Vec2(out_base.data[i], out_base.data[5 + i]);
  const LossOutput loss = loss_total(phi, probe.geometry, probe.loss, probe.loss.affine_enabled_epoch);
  Tensor<double> dout({2, 5, 1, 1});
  for (std::size_t i = 0; i < 5; ++i) {
    dout.data[i] = loss.gradients[i].x();
    dout.data[5 + i] = loss.gradients[i].y();
  }
  ParamGrads<double> grads = probe.net.make_grads();
  probe.net.backward(base_cache, dout, grads);

  const double h = config.step;
  for (std::size_t l = 0; l < kNumLayers; ++l) {
    if (config.layer != 0 && static_cast<std::size_t>(config.layer) != l + 1) continue;
    auto& layer = probe.net.layers()[l];
    GradcheckEntry e;
    e.name = "layer " + layer.name;
    const std::size_t nw = layer.weights.size();
    const std::size_t total = nw + layer.bias.size();
    const std::size_t want = std::min(config.coordinates_per_layer, total);
    std::size_t attempts = 0;
    while (e.checked < want && attempts < 20 * want) {
      ++attempts;
      // Biases get a fair share of the probes.
      const bool bias = (attempts % 8 == 0) || nw == 0;
      const std::size_t idx = bias ? nw + rng.below(layer.bias.size()) : rng.below(nw);
      double& param = idx < nw ? layer.weights.data[idx] : layer.bias.data[idx - nw];
      const double analytic = idx < nw ? grads[l].weights[idx] : grads[l].bias[idx - nw];
      const double old = param;
      // Largest step that keeps every ReLU and pooling switch in place.
      double lp = 0.0, lm = 0.0, used = 0.0;
      for (double step = h; step >= h * 1e-3; step *= 0.1) {
        ForwardCache<double> cp, cm;
        param = old + step;
        lp = probe.value(&cp);
        param = old - step;
        lm = probe.value(&cm);
        param = old;
        if (same_pattern(cp, base_cache) && same_pattern(cm, base_cache)) {
          used = step;
          break;
        }
      }
      if (used == 0.0) {
        ++e.kinks_skipped;
        continue;
      }
      record(e, analytic, (lp - lm) / (2 * used),
             (idx < nw ? "weight " + std::to_string(idx) : "bias " + std::to_string(idx - nw)));
    }
    out.push_back(e);
  }
}

}  // namespace

GradcheckReport run_gradcheck(const GradcheckConfig& config) {
  const auto start = std::chrono::steady_clock::now();
  if (config.layer < 0 || config.layer > static_cast<int>(kNumLayers)) {
    throw InputError("layer must be between 1 and 5");
  }
  GradcheckReport report;
  Rng rng(config.seed, 0x67c4ULL);
  if (config.check_network) check_network(config, rng, report.entries);
  if (config.check_losses) check_losses(config, rng, report.entries);
  for (auto& e : report.entries) {
    e.pass = e.finite && e.checked > 0 && e.max_relative_error < config.tolerance;
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::string format_gradcheck(const GradcheckReport& report, double tolerance) {
  std::ostringstream out;
  for (const auto& e : report.entries) {
    out << (e.pass ? "PASS " : "FAIL ") << std::left << std::setw(24) << e.name
        << " checked " << std::setw(4) << e.checked;
    if (e.kinks_skipped) out << " (" << e.kinks_skipped << " kink probes skipped)";
    if (!e.finite) {
      out << " non-finite gradient at " << e.worst;
    } else {
      out << " max rel error " << std::scientific << std::setprecision(3)
          << e.max_relative_error << std::defaultfloat << " at " << e.worst;
    }
    out << '\n';
  }
  out << (report.pass() ? "gradcheck passed" : "gradcheck FAILED") << " (tolerance "
      << tolerance << ", " << std::fixed << std::setprecision(1) << report.seconds << " s)\n";
  return out.str();
}

}  // namespace tricov
