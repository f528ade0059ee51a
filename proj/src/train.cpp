#include "surfreg/train.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "surfreg/eval.hpp"
#include "surfreg/optim.hpp"

namespace surfreg {

const char* to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::no_uncertainty: return "no-uncertainty";
    case Variant::point_only: return "point-only";
    case Variant::no_attention: return "no-attention";
    case Variant::l1: return "l1";
    case Variant::l2: return "l2";
  }
  return "full";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : all_variants())
    if (s == to_string(v)) return v;
  throw std::invalid_argument("unknown variant '" + s + "'");
}

const std::vector<Variant>& all_variants() {
  static const std::vector<Variant> v = {Variant::full, Variant::no_uncertainty, Variant::point_only,
                                         Variant::no_attention, Variant::l1, Variant::l2};
  return v;
}

void TrainConfig::validate() const {
  if (!(delta > 0.0)) throw std::invalid_argument("delta must be > 0");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
  if (steps < 0) throw std::invalid_argument("steps must be >= 0");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (eval_interval < 1) throw std::invalid_argument("eval_interval must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("val_fraction must be in [0, 1)");
}

void apply_variant(Variant v, ModelConfig& model, TrainConfig& train) {
  switch (v) {
    case Variant::full: break;
    case Variant::no_uncertainty: model.encoder.radius_weighting = false; break;
    case Variant::point_only: model.encoder.use_normals = false; break;
    case Variant::no_attention: model.fusion = Fusion::mean; break;
    case Variant::l1: train.loss = LossKind::l1; break;
    case Variant::l2: train.loss = LossKind::l2; break;
  }
}

ad::Tensor<double> pair_loss(const RegistrationModel<double>& model, const CloudGeometry& src,
                             const CloudGeometry& tgt, const SurfelCloud& source,
                             const SurfelCloud& target, const std::vector<int>* fixed_match,
                             const TrainConfig& cfg) {
  const auto out = model.forward(src, tgt);
  const std::vector<Vec3> xs = source.positions();
  const std::vector<Vec3> ys_all = target.positions();
  std::vector<int> match;
  if (fixed_match) {
    match = *fixed_match;
  } else {
    std::vector<Vec3> moved(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) moved[i] = out.transform.apply(xs[i]);
    const auto corr = nearest_correspondences(moved, ys_all);
    match.reserve(corr.pairs.size());
    for (const auto& p : corr.pairs) match.push_back(p.second);
  }
  std::vector<Vec3> ys(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = ys_all[static_cast<std::size_t>(match[i])];
  return transform_loss(out.rotation, out.translation, xs, ys, cfg.loss, cfg.delta);
}

namespace {

struct Prepared {
  const ScanPair* pair;
  CloudGeometry src;
  CloudGeometry tgt;
  std::vector<int> gt_match;  // nearest target index of gt * x_i
};

std::vector<int> gt_matches(const ScanPair& p) {
  const auto xs = p.source.positions();
  std::vector<Vec3> moved(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) moved[i] = p.gt->apply(xs[i]);
  const auto corr = nearest_correspondences(moved, p.target.positions());
  std::vector<int> out;
  for (const auto& c : corr.pairs) out.push_back(c.second);
  return out;
}

bool all_finite(const ParamSet<double>& ps) {
  for (const auto& e : ps.entries())
    for (double g : e.value.grad())
      if (!std::isfinite(g)) return false;
  return true;
}

}  // namespace

TrainResult train(const std::vector<ScanPair>& train_set, const std::vector<ScanPair>& val_set,
                  const ModelConfig& model_cfg, const TrainConfig& cfg, const TrainLog& log) {
  cfg.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  for (const auto* set : {&train_set, &val_set})
    for (const auto& p : *set)
      if (!p.gt) throw std::invalid_argument("train: pair " + p.id + " has no ground truth");

  auto model = std::make_unique<RegistrationModel<double>>(model_cfg);
  const EncoderConfig& ecfg = model_cfg.encoder;

  std::vector<Prepared> prep;
  prep.reserve(train_set.size());
  for (const auto& p : train_set)
    prep.push_back({&p, prepare_geometry(p.source, ecfg), prepare_geometry(p.target, ecfg), gt_matches(p)});
  const std::vector<ScanPair>& val = val_set.empty() ? train_set : val_set;

  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, prep.size() - 1);
  auto params = model->params().tensors();
  ad::AdamState adam;
  ad::AdamOptions opt;
  opt.lr = cfg.lr;

  TrainResult res;
  res.model = model->clone();
  double loss_acc = 0.0;
  int loss_n = 0;

  auto validate = [&](int step) {
    const auto s = summarize(evaluate_dataset(*model, val));
    CurvePoint cp{step, loss_n ? loss_acc / loss_n : 0.0, s.mean_re, s.mean_te};
    res.curve.push_back(cp);
    if (log) log(cp);
    loss_acc = 0.0;
    loss_n = 0;
    if (s.mean_te < res.best_val_te_cm) {
      res.best_val_te_cm = s.mean_te;
      res.best_step = step;
      res.model = model->clone();
    }
  };

  for (int step = 1; step <= cfg.steps; ++step) {
    model->params().zero_grad();
    double step_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const Prepared& p = prep[pick(rng)];
      const SurfelCloud* target = &p.pair->target;
      const CloudGeometry* tgt_geo = &p.tgt;
      SurfelCloud moved;
      CloudGeometry moved_geo;
      if (cfg.augment) {
        const RigidTransform fresh{random_rotation_capped(rng, cfg.aug_max_rot_deg),
                                   random_translation_capped(rng, cfg.aug_max_trans_m)};
        moved = transformed(p.pair->target, compose(fresh, inverse(*p.pair->gt)));
        moved_geo = prepare_geometry(moved, ecfg);
        target = &moved;
        tgt_geo = &moved_geo;
      }
      const std::vector<int>* fixed =
          cfg.correspondences == CorrespondenceMode::ground_truth ? &p.gt_match : nullptr;
      auto loss = pair_loss(*model, p.src, *tgt_geo, p.pair->source, *target, fixed, cfg);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        res.diverged = true;
        res.message = "non-finite loss at step " + std::to_string(step);
        break;
      }
      step_loss += lv / cfg.batch;
      ad::scale(loss, 1.0 / cfg.batch).backward();
    }
    if (!res.diverged && !all_finite(model->params())) {
      res.diverged = true;
      res.message = "non-finite gradient at step " + std::to_string(step);
    }
    if (res.diverged) break;
    std::vector<std::span<const double>> grads;
    for (const auto& t : params) grads.push_back(t.grad());
    ad::adam_step(params, grads, adam, opt);
    loss_acc += step_loss;
    ++loss_n;
    if (step % cfg.eval_interval == 0 || step == cfg.steps) validate(step);
  }
  if (cfg.steps == 0) validate(0);
  return res;
}

TrainResult train(const std::vector<ScanPair>& data, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainLog& log) {
  cfg.validate();
  const std::size_t n_val = static_cast<std::size_t>(std::floor(cfg.val_fraction * static_cast<double>(data.size())));
  if (n_val >= data.size()) throw std::invalid_argument("train: validation split leaves no training pairs");
  std::vector<ScanPair> tr(data.begin(), data.end() - static_cast<long>(n_val));
  std::vector<ScanPair> va(data.end() - static_cast<long>(n_val), data.end());
  return train(tr, va, model_cfg, cfg, log);
}

}  // namespace surfreg
