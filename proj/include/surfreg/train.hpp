#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "surfreg/dataset.hpp"
#include "surfreg/loss.hpp"
#include "surfreg/model.hpp"

namespace surfreg {

enum class CorrespondenceMode {
  predicted,     // nearest target point under the current prediction, every step
  ground_truth,  // nearest target point under the ground truth, fixed per pair
};

enum class Variant { full, no_uncertainty, point_only, no_attention, l1, l2 };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);
const std::vector<Variant>& all_variants();

struct TrainConfig {
  double delta = 0.6;
  double lr = 1e-3;
  int steps = 2000;
  int batch = 2;
  std::uint64_t seed = 1;
  LossKind loss = LossKind::huber;
  CorrespondenceMode correspondences = CorrespondenceMode::ground_truth;
  int eval_interval = 100;
  double val_fraction = 0.1;  // tail of the dataset held out for checkpointing
  // Re-pose each sampled target with a fresh ground truth drawn from the
  // same caps as the data.
  bool augment = true;
  double aug_max_rot_deg = 30.0;
  double aug_max_trans_m = 2.0;

  void validate() const;
};

/// Adjust configs for an ablation variant.
void apply_variant(Variant v, ModelConfig& model, TrainConfig& train);

struct CurvePoint {
  int step = 0;
  double loss = 0.0;    // mean training loss since the previous point
  double re_deg = 0.0;  // validation means
  double te_cm = 0.0;
};

struct TrainResult {
  std::unique_ptr<RegistrationModel<double>> model;  // best by validation TE
  std::vector<CurvePoint> curve;
  int best_step = 0;
  double best_val_te_cm = std::numeric_limits<double>::infinity();
  bool diverged = false;
  std::string message;
};

using TrainLog = std::function<void(const CurvePoint&)>;

/// Trains on `train_set`, checkpointing on `val_set` (when empty, on the
/// training pairs themselves). Every pair needs a ground truth.
TrainResult train(const std::vector<ScanPair>& train_set, const std::vector<ScanPair>& val_set,
                  const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainLog& log = {});

/// Splits off the last val_fraction of `data` for validation.
TrainResult train(const std::vector<ScanPair>& data, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainLog& log = {});

/// Loss of one pair under the current weights, as a graph node.
ad::Tensor<double> pair_loss(const RegistrationModel<double>& model, const CloudGeometry& src,
                             const CloudGeometry& tgt, const SurfelCloud& source,
                             const SurfelCloud& target, const std::vector<int>* fixed_match,
                             const TrainConfig& cfg);

}  // namespace surfreg
