#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "surfreg/dataset.hpp"
#include "surfreg/model.hpp"
#include "surfreg/train.hpp"

namespace surfreg {

struct PairResult {
  std::string id;
  double re_deg = 0.0;
  double te_cm = 0.0;
  bool success = false;
  double precision = 1.0, recall = 1.0, f1 = 1.0;
};

inline constexpr double kSuccessRotDeg = 5.0;
inline constexpr double kSuccessTransM = 0.6;
inline constexpr double kInlierTau = 0.6;

/// RE/TE, success (RE <= 5 deg and TE <= 0.6 m) and correspondence F1:
/// each source point is paired with its nearest target point under gt; a
/// pair is a ground-truth inlier when its residual under gt is <= tau and a
/// predicted inlier when its residual under pred is <= tau.
PairResult evaluate_pair(const RigidTransform& pred, const RigidTransform& gt, const SurfelCloud& src,
                         const SurfelCloud& tgt, double tau = kInlierTau);

/// Model prediction for one pair (source -> target).
RigidTransform predict(const RegistrationModel<double>& model, const SurfelCloud& src,
                       const SurfelCloud& tgt);

/// Predict and evaluate every pair (ground truth required), in order.
std::vector<PairResult> evaluate_dataset(const RegistrationModel<double>& model,
                                         const std::vector<ScanPair>& pairs, double tau = kInlierTau);

struct Summary {
  double mean_re = 0.0, mean_te = 0.0;      // degrees, centimeters
  double median_re = 0.0, median_te = 0.0;
  double rr = 0.0;                          // fraction of successes
  double mean_f1 = 0.0;
  std::size_t count = 0;
};

Summary summarize(const std::vector<PairResult>& results);

struct SweepTier {
  double max_rot_deg = 0.0;
  double max_trans_cm = 0.0;
};

struct SweepSpec {
  std::vector<SweepTier> tiers = {{5, 10}, {25, 50}, {50, 100}, {75, 150}, {100, 200}};
  int trials = 1;  // perturbations per pair per tier
  std::uint64_t seed = 11;

  void validate() const;
};

struct SweepRow {
  SweepTier tier;
  double mean_re = 0.0, mean_te = 0.0, rr = 0.0;
};

/// Perturbs each source frame by P (angle <= tier rot, |t| <= tier trans):
/// source' = P source, gt' = gt P^-1; reports tier means.
std::vector<SweepRow> robustness_sweep(const RegistrationModel<double>& model,
                                       const std::vector<ScanPair>& base_pairs, const SweepSpec& spec);

struct AblationRow {
  std::string variant;
  bool implemented = true;
  double re = 0.0, te = 0.0, rr = 0.0;  // means; RR as a fraction
};

/// Table rows in the order of the ablation table: no-uncertainty,
/// point-only, the two external-encoder placeholders, no-attention, l1, l2,
/// full. `model_for` returns nullptr for a missing variant, which is
/// skipped with a warning on `warn`.
std::vector<AblationRow> ablation_suite(
    const std::vector<ScanPair>& test_set,
    const std::function<const RegistrationModel<double>*(Variant)>& model_for,
    std::ostream* warn = nullptr);

void write_eval_csv(std::ostream& os, const std::vector<PairResult>& rows);
void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);
void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& rows);

/// Fixed-format number for CSV output.
std::string fmt(double v, int digits = 6);

}  // namespace surfreg
