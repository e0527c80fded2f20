#pragma once

#include <array>
#include <string>
#include <string_view>

#include "tricov/geometry.hpp"

namespace tricov {

// Loss configurations of the ablation.
//   TripAff: triplet translation covariance + affine covariance (proposed)
//   Trip:    triplet translation covariance only
//   CovAff:  one pairwise translation term + affine covariance
//   Covdet:  pairwise translation term + identity term
//   Ddet:    pairwise translation term
enum class LossVariant { kTripAff, kTrip, kCovAff, kCovdet, kDdet };

std::string_view to_string(LossVariant variant);
// Accepts "trip-aff", "trip", "cov-aff", "covdet", "ddet".
LossVariant parse_loss_variant(std::string_view name);

struct LossConfig {
  LossVariant variant = LossVariant::kTripAff;
  double alpha = 2.0;
  double beta = 1.0;
  double identity_weight = 1.0;  // weight of the identity term (Covdet)
  int affine_enabled_epoch = 5;  // affine term is zero for epochs below this

  // Throws InputError when alpha == beta for a triplet variant.
  void validate() const;
};

// Network outputs for the five tuple members, indexed by PatchRole.
using TupleOutputs = std::array<Vec2, 5>;

struct TupleGeometry {
  std::array<Vec2, 3> translations{Vec2::Zero(), Vec2::Zero(), Vec2::Zero()};
  Mat2 affine = Mat2::Identity();  // linear part of A
};

struct LossComponents {
  double cov_tran = 0.0;
  double cov_aff = 0.0;
  double identity = 0.0;
  double pairwise_cov = 0.0;
};

struct LossOutput {
  double total = 0.0;
  LossComponents components;
  TupleOutputs gradients{Vec2::Zero(), Vec2::Zero(), Vec2::Zero(), Vec2::Zero(),
                         Vec2::Zero()};
};

// alpha * ti - beta * tj
Vec2 t_ij(const Vec2& ti, const Vec2& tj, double alpha, double beta);

struct CovTranLoss {
  double value = 0.0;
  std::array<Vec2, 4> gradients;  // d/d phi(x), phi(x1), phi(x2), phi(x3)
};

// Sum over the cyclic pairs (1,2), (2,3), (3,1) of
//   |alpha phi(xi) - beta phi(xj) - (alpha - beta) phi(x) - t_ij|^2
CovTranLoss loss_cov_tran(const Vec2& phi_x, const Vec2& phi_x1, const Vec2& phi_x2,
                          const Vec2& phi_x3, const Vec2& t1, const Vec2& t2,
                          const Vec2& t3, double alpha, double beta);

struct PairLoss {
  double value = 0.0;
  Vec2 d_first = Vec2::Zero();   // w.r.t. the reference prediction
  Vec2 d_second = Vec2::Zero();  // w.r.t. the transformed prediction
};

// |phi(xA) - A phi(x)|^2, A acting through its linear part only.
PairLoss loss_cov_aff(const Vec2& phi_x, const Vec2& phi_xa, const Mat2& affine);

// |phi(x + t) - (phi(x) + t)|^2
PairLoss loss_ddet_baseline(const Vec2& phi_x, const Vec2& phi_gx, const Vec2& translation);

// Pairwise term plus identity_weight * |phi(x)|^2.
PairLoss loss_covdet_baseline(const Vec2& phi_x, const Vec2& phi_gx, const Vec2& translation,
                              double identity_weight);

// Which tuple members a variant reads at a given epoch.
std::array<bool, 5> required_patches(const LossConfig& config, int epoch);

// Per-tuple loss of the configured variant. The affine term is gated off
// while epoch < affine_enabled_epoch.
LossOutput loss_total(const TupleOutputs& outputs, const TupleGeometry& geometry,
                      const LossConfig& config, int epoch);

}  // namespace tricov
