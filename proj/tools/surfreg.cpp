// Command-line front end. Exit codes: 0 ok, 1 other failure, 2 parse,
// 3 io, 4 numeric failure, 5 invariant failure.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>

#include "surfreg/eval.hpp"
#include "surfreg/icosa.hpp"
#include "surfreg/io.hpp"
#include "surfreg/runtime.hpp"
#include "surfreg/train.hpp"

namespace fs = std::filesystem;
using namespace surfreg;

namespace {

enum Exit { kOk = 0, kOther = 1, kParse = 2, kIo = 3, kNumeric = 4, kInvariant = 5 };

struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

bool has_ext(const std::string& path, const char* ext) { return fs::path(path).extension() == ext; }

template <typename Fn>
std::string to_csv(Fn&& write) {
  std::ostringstream os;
  write(os);
  return os.str();
}

// ---------------------------------------------------------------------------

struct SurfelsArgs {
  std::string in, out, meta;
  std::size_t n = 2048;
};

int cmd_surfels(const SurfelsArgs& a) {
  SurfelCloud cloud;
  if (has_ext(a.in, ".pgm")) {
    const std::string meta_path = a.meta.empty() ? fs::path(a.in).replace_extension(".meta").string() : a.meta;
    // Header first so the sidecar can be checked against the image size.
    const std::string bytes = read_file(a.in);
    DepthImage img = parse_pgm_depth(bytes, 1.0);
    const DepthMeta meta = parse_depth_meta(read_file(meta_path), img.width, img.height);
    for (auto& d : img.depth_m) d *= meta.depth_scale;
    cloud = surfels_from_depth(img, meta.camera);
  } else {
    const PlyCloud ply = read_ply(a.in);
    if (ply.is_surfel() && ply.intensity) {
      cloud = read_surfel_ply(a.in);
      if (cloud.size() == a.n) {
        write_file_atomic(a.out, read_file(a.in));
        std::cout << "pass-through: " << cloud.size() << " surfels\n";
        return kOk;
      }
    } else {
      // Bare points in the sensor frame.
      std::optional<std::span<const double>> intensity;
      if (ply.intensity) intensity = std::span<const double>(*ply.intensity);
      cloud = surfels_from_points(ply.points, intensity, VirtualCamera::lidar_default());
    }
  }
  const auto ds = voxel_downsample(cloud, a.n);
  write_surfel_ply(a.out, ds.cloud);
  std::cout << ds.cloud.size() << " surfels (from " << cloud.size() << ", voxel edge " << fmt(ds.voxel_edge, 4)
            << " m" << (ds.padded ? ", padded" : "") << ")\n";
  return kOk;
}

int cmd_synth(const std::string& spec_path, const std::string& out) {
  const SynthSpec spec = synth_spec_from(read_key_values(spec_path));
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(spec_path + ": " + e.what(), 0);
  }
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create directory " + out);
  const auto pairs = synthesize(spec);
  for (const auto& p : pairs) write_pair(out, p);
  std::cout << "wrote " << pairs.size() << " pairs to " << out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, config, out, curve, variant = "full";
};

int cmd_train(const TrainArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : run_config_from(read_key_values(a.config));
  Variant v;
  try {
    v = variant_from_string(a.variant);
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), 0);
  }
  apply_variant(v, rc.model, rc.train);
  // Fail before training rather than after it.
  for (const std::string& f : {a.out, a.curve})
    if (!f.empty() && !fs::is_directory(fs::absolute(f).parent_path()))
      throw IoError("output directory does not exist: " + fs::absolute(f).parent_path().string());
  const auto data = read_dataset(a.data);
  if (data.empty()) throw IoError("no pairs found in " + a.data);

  const auto log = [](const CurvePoint& c) {
    std::cerr << "step " << c.step << "  loss " << fmt(c.loss, 5) << "  val RE " << fmt(c.re_deg, 2)
              << " deg  TE " << fmt(c.te_cm, 1) << " cm\n";
  };
  const TrainResult res = train(data, rc.model, rc.train, log);

  KeyValues meta = to_key_values(rc);
  meta["variant"] = to_string(v);
  meta["best_step"] = std::to_string(res.best_step);
  meta["best_val_te_cm"] = fmt(res.best_val_te_cm);
  meta["pairs"] = std::to_string(data.size());
  const std::string curve = a.curve.empty() ? a.out + ".curve.csv" : a.curve;
  write_file_atomic(curve, to_csv([&](std::ostream& os) { write_curve_csv(os, res.curve); }));

  if (res.diverged) {
    const std::string ckpt = a.out + ".checkpoint";
    meta["diverged"] = res.message;
    save_model(ckpt, *res.model, meta);
    throw NumericFailure(res.message + "; last good checkpoint: " + ckpt);
  }
  save_model(a.out, *res.model, meta);
  std::cout << "saved " << a.out << " (best step " << res.best_step << ", val TE " << fmt(res.best_val_te_cm, 2)
            << " cm); curve " << curve << "\n";
  return kOk;
}

int cmd_register(const std::string& model_path, const std::string& src, const std::string& tgt,
                 const std::string& out, const std::string& gt_path) {
  const ModelFile mf = load_model(model_path);
  const SurfelCloud s = read_surfel_ply(src);
  const SurfelCloud t = read_surfel_ply(tgt);
  const RigidTransform pred = predict(*mf.model, s, t);
  write_transform(out, pred, true);
  std::cout << format_transform(pred, true);
  if (!gt_path.empty()) {
    const RigidTransform gt = read_transform(gt_path);
    const PairResult r = evaluate_pair(pred, gt, s, t);
    std::cout << "RE " << fmt(r.re_deg, 4) << " deg  TE " << fmt(r.te_cm, 3) << " cm  "
              << (r.success ? "success" : "failure") << "  F1 " << fmt(r.f1, 4) << "\n";
  }
  return kOk;
}

void print_summary(const Summary& s) {
  std::cout << "pairs " << s.count << "  mean RE " << fmt(s.mean_re, 3) << " deg  mean TE " << fmt(s.mean_te, 2)
            << " cm  median RE " << fmt(s.median_re, 3) << " deg  median TE " << fmt(s.median_te, 2)
            << " cm  RR " << fmt(100.0 * s.rr, 2) << "%  F1 " << fmt(100.0 * s.mean_f1, 2) << "%\n";
}

int cmd_eval(const std::string& model_path, const std::string& data, const std::string& out) {
  const ModelFile mf = load_model(model_path);
  const auto pairs = read_dataset(data);
  const auto rows = evaluate_dataset(*mf.model, pairs);
  write_file_atomic(out, to_csv([&](std::ostream& os) { write_eval_csv(os, rows); }));
  print_summary(summarize(rows));
  return kOk;
}

int cmd_sweep(const std::string& model_path, const std::string& data, const std::string& out, int trials,
              std::uint64_t seed) {
  const ModelFile mf = load_model(model_path);
  const auto pairs = read_dataset(data);
  SweepSpec spec;
  spec.trials = trials;
  spec.seed = seed;
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ParseError(e.what(), 0);
  }
  const auto rows = robustness_sweep(*mf.model, pairs, spec);
  const std::string csv = to_csv([&](std::ostream& os) { write_sweep_csv(os, rows); });
  write_file_atomic(out, csv);
  std::cout << csv;
  return kOk;
}

int cmd_ablate(const std::string& data, const std::string& models_dir, const std::string& out) {
  const auto pairs = read_dataset(data);
  std::map<Variant, ModelFile> loaded;
  for (Variant v : all_variants()) {
    const fs::path p = fs::path(models_dir) / (std::string(to_string(v)) + ".model");
    if (fs::exists(p)) loaded.emplace(v, load_model(p.string()));
  }
  const auto rows = ablation_suite(
      pairs,
      [&](Variant v) -> const RegistrationModel<double>* {
        const auto it = loaded.find(v);
        return it == loaded.end() ? nullptr : it->second.model.get();
      },
      &std::cerr);
  const std::string csv = to_csv([&](std::ostream& os) { write_ablation_csv(os, rows); });
  write_file_atomic(out, csv);
  std::cout << csv;
  return kOk;
}

int cmd_group_check() {
  bool ok = true;
  for (const auto& line : check_group(IcosaGroup::instance())) {
    std::cout << (line.ok ? "PASS " : "FAIL ") << line.name;
    if (!line.detail.empty()) std::cout << "  (" << line.detail << ")";
    std::cout << "\n";
    ok = ok && line.ok;
  }
  return ok ? kOk : kInvariant;
}

// Worker cap for the k-NN, correspondence and surfel loops (read by
// worker_count()). Rejected here so a typo fails loudly instead of
// silently falling back to all cores.
void check_thread_env() {
  const char* s = std::getenv("SURFREG_THREADS");
  if (!s || !*s) return;
  char* end = nullptr;
  const long n = std::strtol(s, &end, 10);
  if (*end != '\0' || n < 1) throw ParseError(std::string("SURFREG_THREADS must be a positive integer, got '") + s + "'", 0);
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Surfel-based rigid registration with an icosahedral equivariant encoder"};
  app.require_subcommand(1);

  SurfelsArgs sa;
  auto* surfels = app.add_subcommand("surfels", "Initialize surfels from a PLY or PGM depth image and downsample");
  surfels->add_option("--in", sa.in, "Input .ply (points or surfels) or .pgm depth image")->required();
  surfels->add_option("--out", sa.out, "Output surfel PLY")->required();
  surfels->add_option("--n", sa.n, "Number of surfels to keep")->check(CLI::PositiveNumber);
  surfels->add_option("--meta", sa.meta, "Intrinsics sidecar for .pgm input (default: <in>.meta)");

  std::string spec_path, synth_out;
  auto* synth = app.add_subcommand("synth", "Generate synthetic scan pairs");
  synth->add_option("--spec", spec_path, "key=value synthesis spec")->required();
  synth->add_option("--out", synth_out, "Output directory")->required();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--data", ta.data, "Dataset directory")->required();
  trn->add_option("--config", ta.config, "key=value training config");
  trn->add_option("--out", ta.out, "Output model file")->required();
  trn->add_option("--curve", ta.curve, "Loss-curve CSV (default: <out>.curve.csv)");
  trn->add_option("--variant", ta.variant, "full | no-uncertainty | point-only | no-attention | l1 | l2");

  std::string model, src, tgt, out, gt, data;
  auto* reg = app.add_subcommand("register", "Predict the transform of one pair");
  reg->add_option("--model", model)->required();
  reg->add_option("--src", src)->required();
  reg->add_option("--tgt", tgt)->required();
  reg->add_option("--out", out)->required();
  reg->add_option("--gt", gt, "Ground-truth file; prints RE/TE when given");

  auto* ev = app.add_subcommand("eval", "Per-pair metrics over a dataset");
  ev->add_option("--model", model)->required();
  ev->add_option("--data", data)->required();
  ev->add_option("--out", out)->required();

  int trials = 1;
  std::uint64_t sweep_seed = 11;
  auto* sw = app.add_subcommand("sweep", "Robustness sweep over perturbation tiers");
  sw->add_option("--model", model)->required();
  sw->add_option("--data", data)->required();
  sw->add_option("--out", out)->required();
  sw->add_option("--trials", trials, "Perturbations per pair per tier")->check(CLI::PositiveNumber);
  sw->add_option("--seed", sweep_seed);

  std::string models_dir;
  auto* ab = app.add_subcommand("ablate", "Ablation table from <variant>.model files");
  ab->add_option("--data", data)->required();
  ab->add_option("--models", models_dir, "Directory holding <variant>.model files")->required();
  ab->add_option("--out", out)->required();

  auto* gc = app.add_subcommand("group-check", "Verify the icosahedral group invariants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kParse;
  }

  try {
    check_thread_env();
    if (*surfels) return cmd_surfels(sa);
    if (*synth) return cmd_synth(spec_path, synth_out);
    if (*trn) return cmd_train(ta);
    if (*reg) return cmd_register(model, src, tgt, out, gt);
    if (*ev) return cmd_eval(model, data, out);
    if (*sw) return cmd_sweep(model, data, out, trials, sweep_seed);
    if (*ab) return cmd_ablate(data, models_dir, out);
    if (*gc) return cmd_group_check();
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kParse;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kIo;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const InvariantError& e) {
    std::cerr << "invariant failure: " << e.what() << "\n";
    return kInvariant;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
