#include "tricov/losses.hpp"

#include "tricov/dataset.hpp"
#include "tricov/errors.hpp"

namespace tricov {

std::string_view to_string(LossVariant variant) {
  switch (variant) {
    case LossVariant::kTripAff: return "trip-aff";
    case LossVariant::kTrip: return "trip";
    case LossVariant::kCovAff: return "cov-aff";
    case LossVariant::kCovdet: return "covdet";
    case LossVariant::kDdet: return "ddet";
  }
  return "unknown";
}

LossVariant parse_loss_variant(std::string_view name) {
  for (auto v : {LossVariant::kTripAff, LossVariant::kTrip, LossVariant::kCovAff,
                 LossVariant::kCovdet, LossVariant::kDdet}) {
    if (to_string(v) == name) return v;
  }
  throw InputError("unknown loss variant '" + std::string(name) +
                   "' (expected trip-aff, trip, cov-aff, covdet or ddet)");
}

void LossConfig::validate() const {
  const bool triplet = variant == LossVariant::kTripAff || variant == LossVariant::kTrip;
  if (triplet && alpha == beta) {
    throw InputError("triplet losses need alpha != beta");
  }
  if (affine_enabled_epoch < 0) {
    throw InputError("affine_enabled_epoch must be non-negative");
  }
}

Vec2 t_ij(const Vec2& ti, const Vec2& tj, double alpha, double beta) {
  return alpha * ti - beta * tj;
}

CovTranLoss loss_cov_tran(const Vec2& phi_x, const Vec2& phi_x1, const Vec2& phi_x2,
                          const Vec2& phi_x3, const Vec2& t1, const Vec2& t2,
                          const Vec2& t3, double alpha, double beta) {
  const std::array<const Vec2*, 3> phi{&phi_x1, &phi_x2, &phi_x3};
  const std::array<const Vec2*, 3> t{&t1, &t2, &t3};
  CovTranLoss out;
  out.gradients.fill(Vec2::Zero());
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t j = (i + 1) % 3;
    const Vec2 r = alpha * *phi[i] - beta * *phi[j] - (alpha - beta) * phi_x -
                   t_ij(*t[i], *t[j], alpha, beta);
    out.value += r.squaredNorm();
    out.gradients[0] += -2.0 * (alpha - beta) * r;
    out.gradients[1 + i] += 2.0 * alpha * r;
    out.gradients[1 + j] += -2.0 * beta * r;
  }
  return out;
}

PairLoss loss_cov_aff(const Vec2& phi_x, const Vec2& phi_xa, const Mat2& affine) {
  const Vec2 r = phi_xa - affine * phi_x;
  return {r.squaredNorm(), -2.0 * affine.transpose() * r, 2.0 * r};
}

PairLoss loss_ddet_baseline(const Vec2& phi_x, const Vec2& phi_gx, const Vec2& translation) {
  const Vec2 r = phi_gx - (phi_x + translation);
  return {r.squaredNorm(), -2.0 * r, 2.0 * r};
}

PairLoss loss_covdet_baseline(const Vec2& phi_x, const Vec2& phi_gx, const Vec2& translation,
                              double identity_weight) {
  PairLoss out = loss_ddet_baseline(phi_x, phi_gx, translation);
  out.value += identity_weight * phi_x.squaredNorm();
  out.d_first += 2.0 * identity_weight * phi_x;
  return out;
}

std::array<bool, 5> required_patches(const LossConfig& config, int epoch) {
  const bool affine_on = epoch >= config.affine_enabled_epoch;
  switch (config.variant) {
    case LossVariant::kTripAff: return {true, true, true, true, affine_on};
    case LossVariant::kTrip: return {true, true, true, true, false};
    case LossVariant::kCovAff: return {true, true, false, false, affine_on};
    case LossVariant::kCovdet:
    case LossVariant::kDdet: return {true, true, false, false, false};
  }
  return {};
}

LossOutput loss_total(const TupleOutputs& phi, const TupleGeometry& geometry,
                      const LossConfig& config, int epoch) {
  LossOutput out;
  auto& g = out.gradients;
  const bool affine_on = epoch >= config.affine_enabled_epoch;
  const auto& t = geometry.translations;

  const bool triplet =
      config.variant == LossVariant::kTripAff || config.variant == LossVariant::kTrip;
  if (triplet) {
    const CovTranLoss tran = loss_cov_tran(phi[kReference], phi[kShift1], phi[kShift2],
                                           phi[kShift3], t[0], t[1], t[2], config.alpha,
                                           config.beta);
    out.components.cov_tran = tran.value;
    for (std::size_t i = 0; i < 4; ++i) g[i] += tran.gradients[i];
  } else {
    const PairLoss pair = loss_ddet_baseline(phi[kReference], phi[kShift1], t[0]);
    out.components.pairwise_cov = pair.value;
    g[kReference] += pair.d_first;
    g[kShift1] += pair.d_second;
  }

  if (config.variant == LossVariant::kCovdet) {
    out.components.identity = config.identity_weight * phi[kReference].squaredNorm();
    g[kReference] += 2.0 * config.identity_weight * phi[kReference];
  }

  const bool uses_affine =
      config.variant == LossVariant::kTripAff || config.variant == LossVariant::kCovAff;
  if (uses_affine && affine_on) {
    const PairLoss aff = loss_cov_aff(phi[kReference], phi[kAffine], geometry.affine);
    out.components.cov_aff = aff.value;
    g[kReference] += aff.d_first;
    g[kAffine] += aff.d_second;
  }

  const auto& c = out.components;
  out.total = c.cov_tran + c.cov_aff + c.identity + c.pairwise_cov;
  return out;
}

}  // namespace tricov
