#include "surfreg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>
#include <stdexcept>

#include "surfreg/loss.hpp"

namespace surfreg {

PairResult evaluate_pair(const RigidTransform& pred, const RigidTransform& gt, const SurfelCloud& src,
                         const SurfelCloud& tgt, double tau) {
  PairResult r;
  r.re_deg = rotation_geodesic_deg(pred.rotation_matrix(), gt.rotation_matrix());
  r.te_cm = 100.0 * (pred.translation - gt.translation).norm();
  r.success = r.re_deg <= kSuccessRotDeg && r.te_cm <= 100.0 * kSuccessTransM;
  if (src.empty() || tgt.empty()) return r;

  const auto xs = src.positions();
  const auto ys = tgt.positions();
  std::vector<Vec3> moved(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) moved[i] = gt.apply(xs[i]);
  const auto corr = nearest_correspondences(moved, ys);
  std::size_t n_gt = 0, n_pred = 0, n_both = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Vec3& y = ys[static_cast<std::size_t>(corr.pairs[i].second)];
    const bool in_gt = corr.residuals[i] <= tau;
    const bool in_pred = (pred.apply(xs[i]) - y).norm() <= tau;
    n_gt += in_gt;
    n_pred += in_pred;
    n_both += in_gt && in_pred;
  }
  // No inliers on either side counts as full agreement.
  r.precision = n_pred ? static_cast<double>(n_both) / static_cast<double>(n_pred) : (n_gt ? 0.0 : 1.0);
  r.recall = n_gt ? static_cast<double>(n_both) / static_cast<double>(n_gt) : (n_pred ? 0.0 : 1.0);
  r.f1 = r.precision + r.recall > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall) : 0.0;
  return r;
}

RigidTransform predict(const RegistrationModel<double>& model, const SurfelCloud& src,
                       const SurfelCloud& tgt) {
  const auto& ecfg = model.config().encoder;
  return model.forward(prepare_geometry(src, ecfg), prepare_geometry(tgt, ecfg)).transform;
}

std::vector<PairResult> evaluate_dataset(const RegistrationModel<double>& model,
                                         const std::vector<ScanPair>& pairs, double tau) {
  std::vector<PairResult> out;
  out.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (!p.gt) throw std::invalid_argument("evaluate_dataset: pair " + p.id + " has no ground truth");
    PairResult r = evaluate_pair(predict(model, p.source, p.target), *p.gt, p.source, p.target, tau);
    r.id = p.id;
    out.push_back(r);
  }
  return out;
}

namespace {

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

Summary summarize(const std::vector<PairResult>& results) {
  Summary s;
  s.count = results.size();
  if (results.empty()) return s;
  std::vector<double> re, te;
  std::size_t ok = 0;
  for (const auto& r : results) {
    re.push_back(r.re_deg);
    te.push_back(r.te_cm);
    s.mean_re += r.re_deg;
    s.mean_te += r.te_cm;
    s.mean_f1 += r.f1;
    ok += r.success;
  }
  const double n = static_cast<double>(results.size());
  s.mean_re /= n;
  s.mean_te /= n;
  s.mean_f1 /= n;
  s.rr = static_cast<double>(ok) / n;
  s.median_re = median(re);
  s.median_te = median(te);
  return s;
}

void SweepSpec::validate() const {
  if (tiers.empty()) throw std::invalid_argument("sweep needs at least one tier");
  if (trials < 1) throw std::invalid_argument("sweep trials must be >= 1");
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    if (tiers[i].max_rot_deg < 0 || tiers[i].max_trans_cm < 0)
      throw std::invalid_argument("sweep tiers must be non-negative");
    if (i > 0 && !(tiers[i].max_rot_deg > tiers[i - 1].max_rot_deg &&
                   tiers[i].max_trans_cm > tiers[i - 1].max_trans_cm))
      throw std::invalid_argument("sweep tiers must be strictly increasing");
  }
}

std::vector<SweepRow> robustness_sweep(const RegistrationModel<double>& model,
                                       const std::vector<ScanPair>& base_pairs, const SweepSpec& spec) {
  spec.validate();
  std::vector<SweepRow> rows;
  for (std::size_t t = 0; t < spec.tiers.size(); ++t) {
    const SweepTier& tier = spec.tiers[t];
    // One stream per tier so tiers are independent of each other.
    std::seed_seq seq{static_cast<std::uint32_t>(spec.seed), static_cast<std::uint32_t>(spec.seed >> 32),
                      static_cast<std::uint32_t>(t)};
    std::mt19937_64 rng(seq);
    std::vector<PairResult> results;
    for (const auto& p : base_pairs) {
      if (!p.gt) throw std::invalid_argument("robustness_sweep: pair " + p.id + " has no ground truth");
      for (int k = 0; k < spec.trials; ++k) {
        const RigidTransform pert{random_rotation_capped(rng, tier.max_rot_deg),
                                  random_translation_capped(rng, tier.max_trans_cm / 100.0)};
        const SurfelCloud src = transformed(p.source, pert);
        const RigidTransform gt = compose(*p.gt, inverse(pert));
        results.push_back(evaluate_pair(predict(model, src, p.target), gt, src, p.target));
      }
    }
    const Summary s = summarize(results);
    rows.push_back({tier, s.mean_re, s.mean_te, s.rr});
  }
  return rows;
}

std::vector<AblationRow> ablation_suite(
    const std::vector<ScanPair>& test_set,
    const std::function<const RegistrationModel<double>*(Variant)>& model_for, std::ostream* warn) {
  std::vector<AblationRow> rows;
  auto run = [&](Variant v) {
    const RegistrationModel<double>* m = model_for(v);
    if (!m) {
      if (warn) *warn << "warning: no checkpoint for variant " << to_string(v) << ", skipped\n";
      return;
    }
    const Summary s = summarize(evaluate_dataset(*m, test_set));
    rows.push_back({to_string(v), true, s.mean_re, s.mean_te, s.rr});
  };
  run(Variant::no_uncertainty);
  run(Variant::point_only);
  rows.push_back({"external-encoder-a", false, 0, 0, 0});
  rows.push_back({"external-encoder-b", false, 0, 0, 0});
  run(Variant::no_attention);
  run(Variant::l1);
  run(Variant::l2);
  run(Variant::full);
  return rows;
}

std::string fmt(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

void write_eval_csv(std::ostream& os, const std::vector<PairResult>& rows) {
  os << "pair_id,re_deg,te_cm,success,f1\n";
  for (const auto& r : rows)
    os << r.id << ',' << fmt(r.re_deg) << ',' << fmt(r.te_cm) << ',' << (r.success ? 1 : 0) << ','
       << fmt(r.f1) << '\n';
}

void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "tier_rot_deg,tier_trans_cm,mean_re,mean_te,rr\n";
  for (const auto& r : rows)
    os << fmt(r.tier.max_rot_deg, 1) << ',' << fmt(r.tier.max_trans_cm, 1) << ',' << fmt(r.mean_re) << ','
       << fmt(r.mean_te) << ',' << fmt(r.rr) << '\n';
}

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "variant,re,te,rr\n";
  for (const auto& r : rows) {
    if (!r.implemented)
      os << r.variant << ",not-implemented,not-implemented,not-implemented\n";
    else
      os << r.variant << ',' << fmt(r.re) << ',' << fmt(r.te) << ',' << fmt(r.rr) << '\n';
  }
}

void write_curve_csv(std::ostream& os, const std::vector<CurvePoint>& rows) {
  os << "step,loss,RE_deg,TE_cm\n";
  for (const auto& r : rows)
    os << r.step << ',' << fmt(r.loss, 8) << ',' << fmt(r.re_deg) << ',' << fmt(r.te_cm) << '\n';
}

}  // namespace surfreg
