// romoseg: motion segmentation from precomputed flow/features, plus the
// synthetic-scene generator and the mask/trajectory evaluation commands.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "romoseg/bundle_io.hpp"
#include "romoseg/config.hpp"
#include "romoseg/metrics.hpp"
#include "romoseg/pipeline.hpp"
#include "romoseg/synthgen.hpp"
#include "romoseg/tensor.hpp"
#include "romoseg/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace romoseg;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitInput = 2;
constexpr int kExitCompute = 3;

std::string frame_file(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06d.%s", prefix, index, ext);
  return buf;
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%FT%TZ", std::gmtime(&t));
  return buf;
}

struct SegmentArgs {
  std::string in_dir;
  std::string out_dir;
  std::string config_path;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int jobs = -1;
  std::string refine;
  bool png = false;
};

RunConfig resolve_config(const SegmentArgs& args) {
  RunConfig cfg = args.config_path.empty() ? RunConfig{} : load_config(args.config_path);
  cfg = apply_overrides(cfg, args.overrides);
  if (args.seed_given) cfg.seed = args.seed;
  if (args.jobs >= 0) cfg.jobs = args.jobs;
  if (!args.refine.empty()) {
    if (args.refine == "none") {
      cfg.refinement.mode = RefineMode::kNone;
    } else if (args.refine == "morph" || args.refine == "morphological") {
      cfg.refinement.mode = RefineMode::kMorphological;
    } else if (args.refine.rfind("external:", 0) == 0) {
      cfg.refinement.mode = RefineMode::kExternal;
      cfg.refinement.command = args.refine.substr(9);
    } else {
      throw FormatError("--refine must be none|morph|external:<cmd>, got '" + args.refine +
                        "'");
    }
  }
  cfg.validate();
  return cfg;
}

json diagnostics_json(const PipelineResult& result) {
  json iters = json::array();
  for (const IterationRecord& record : result.iterations) {
    json it;
    it["iteration"] = record.iteration;
    json fits = json::array();
    for (std::size_t p = 0; p < record.pair_reports.size(); ++p) {
      const RobustFitReport& r = record.pair_reports[p];
      fits.push_back({{"pair", p},
                      {"median_residual", r.median_residual},
                      {"trials", r.trials},
                      {"degenerate", r.degenerate},
                      {"refit_inliers", r.refit_inliers}});
    }
    it["fits"] = std::move(fits);
    json frames = json::array();
    for (std::size_t t = 0; t < record.labels.size(); ++t) {
      frames.push_back({{"frame", t},
                        {"reliable", record.reliable[t] != 0},
                        {"inlier_fraction", record.labels[t].inlier_fraction},
                        {"defined_pixels", record.labels[t].defined_pixels}});
    }
    it["frames"] = std::move(frames);
    iters.push_back(std::move(it));
  }
  json root;
  root["iterations"] = std::move(iters);
  root["refinement_fallback"] = result.refinement_fallback;
  return root;
}

void write_manifest(const fs::path& path, const std::string& command, const RunConfig& cfg,
                    const fs::path& in_dir, int frames) {
  json manifest;
  manifest["command"] = command;
  manifest["version"] = kVersion;
  manifest["timestamp"] = iso_timestamp();
  manifest["seed"] = cfg.seed;
  manifest["config"] = json::parse(config_to_json(cfg));
  manifest["config_hash"] = fnv1a_hex(config_to_json(cfg));
  manifest["frames"] = frames;
  manifest["inputs"] = hash_bundle_inputs(in_dir, frames);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write manifest " + path.string());
  out << manifest.dump(2) << "\n";
}

int cmd_segment(const SegmentArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const SequenceBundle bundle = load_bundle(args.in_dir);
  const PipelineResult result = run(bundle, cfg);

  fs::create_directories(args.out_dir);
  for (int t = 0; t < bundle.frames; ++t) {
    const MaskImage& mask = result.final_masks[static_cast<std::size_t>(t)];
    write_mask(mask, fs::path(args.out_dir) / frame_file("mask_", t, "pgm"));
    if (args.png) write_mask_png(mask, fs::path(args.out_dir) / frame_file("mask_", t, "png"));
  }
  std::ofstream diag(fs::path(args.out_dir) / "diagnostics.json", std::ios::trunc);
  diag << diagnostics_json(result).dump(2) << "\n";
  write_manifest(fs::path(args.out_dir) / "manifest.json", "segment", cfg, args.in_dir,
                 bundle.frames);
  std::cout << "segment: wrote " << bundle.frames << " masks to " << args.out_dir << "\n";
  return 0;
}

int cmd_dump_labels(const SegmentArgs& args) {
  const RunConfig cfg = resolve_config(args);
  const SequenceBundle bundle = load_bundle(args.in_dir);
  RunOptions options;
  options.keep_score_maps = true;
  const PipelineResult result = run(bundle, cfg, options);

  for (const IterationRecord& record : result.iterations) {
    const fs::path iter_dir =
        fs::path(args.out_dir) / ("iter_" + std::to_string(record.iteration));
    fs::create_directories(iter_dir);
    for (int t = 0; t < bundle.frames; ++t) {
      const EpipolarLabels& labels = record.labels[static_cast<std::size_t>(t)];
      MaskImage l_mask = make_mask(labels.width, labels.height);
      MaskImage u_mask = make_mask(labels.width, labels.height);
      for (std::size_t i = 0; i < l_mask.values.size(); ++i) {
        l_mask.values[i] = labels.likely_static[i] ? 255 : 0;
        u_mask.values[i] = labels.likely_dynamic[i] ? 255 : 0;
      }
      write_mask(l_mask, iter_dir / frame_file("L_", t, "pgm"));
      write_mask(u_mask, iter_dir / frame_file("U_", t, "pgm"));
      write_mask(record.masks[static_cast<std::size_t>(t)],
                 iter_dir / frame_file("mask_", t, "pgm"));

      for (const auto& [maps, prefix] :
           {std::pair{&record.score_fwd, "sampson_fwd_"},
            std::pair{&record.score_bwd, "sampson_bwd_"}}) {
        const ScoreMap& map = (*maps)[static_cast<std::size_t>(t)];
        if (map.scores.empty()) continue;
        TensorFile tensor = make_tensor_f32({static_cast<std::size_t>(map.height),
                                             static_cast<std::size_t>(map.width)});
        for (std::size_t i = 0; i < map.scores.size(); ++i)
          tensor.set_f32(i, static_cast<float>(map.scores[i]));
        write_tensor(tensor, iter_dir / frame_file(prefix, t, "npy"));
      }

      const FeatureMap& feat = bundle.features[static_cast<std::size_t>(t)];
      write_tensor(probabilities_to_tensor(forward(record.train_state.params, feat), feat.hf,
                                           feat.wf),
                   iter_dir / frame_file("prob_", t, "npy"));
    }
    save_checkpoint(record.train_state.params, iter_dir / "checkpoint");
    std::ofstream fits(iter_dir / "fits.json", std::ios::trunc);
    json fit_list = json::array();
    for (std::size_t p = 0; p < record.pair_reports.size(); ++p) {
      const RobustFitReport& r = record.pair_reports[p];
      fit_list.push_back({{"pair", p},
                          {"median_residual", r.median_residual},
                          {"trials", r.trials},
                          {"degenerate", r.degenerate}});
    }
    fits << fit_list.dump(2) << "\n";
  }
  write_manifest(fs::path(args.out_dir) / "manifest.json", "dump-labels", cfg, args.in_dir,
                 bundle.frames);
  std::cout << "dump-labels: wrote " << result.iterations.size() << " iterations to "
            << args.out_dir << "\n";
  return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::uint64_t seed) {
  std::ifstream in(spec_path);
  if (!in) throw IoError("cannot open scene spec " + spec_path);
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  const SceneSpec spec = parse_scene_spec(text, spec_path);
  const auto [scene, truth] = generate(spec, seed);
  fs::create_directories(out_dir);
  export_scene(scene, truth, out_dir);
  std::cout << "synth: wrote " << spec.frames << " frames to " << out_dir
            << (scene.degenerate ? " (degenerate rotation-only path)" : "") << "\n";
  return 0;
}

int cmd_eval_masks(const std::string& pred_dir, const std::string& gt_dir,
                   const std::string& csv_path) {
  int frames = 0;
  while (fs::exists(fs::path(pred_dir) / frame_file("mask_", frames, "pgm"))) ++frames;
  if (frames == 0) throw FormatError("no mask_000000.pgm in " + pred_dir);

  std::vector<double> per_frame;
  for (int t = 0; t < frames; ++t) {
    const fs::path gt_path = fs::path(gt_dir) / frame_file("mask_", t, "pgm");
    if (!fs::exists(gt_path))
      throw FormatError("frame index mismatch: missing " + gt_path.string());
    const MaskImage pred = read_mask(fs::path(pred_dir) / frame_file("mask_", t, "pgm"));
    // Multiple annotated objects merge into a single foreground mask.
    const MaskImage gt = read_mask_merged(gt_path);
    per_frame.push_back(iou(pred, gt));
  }
  if (fs::exists(fs::path(gt_dir) / frame_file("mask_", frames, "pgm")))
    throw FormatError("frame index mismatch: " + gt_dir + " has more masks than " + pred_dir);

  std::ostringstream csv;
  csv << "frame,iou\n";
  for (int t = 0; t < frames; ++t) csv << t << "," << per_frame[static_cast<std::size_t>(t)] << "\n";
  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::trunc);
    out << csv.str();
  }
  std::cout << csv.str();
  const double mean =
      pairwise_sum(per_frame) / static_cast<double>(per_frame.size());
  std::printf("mean_iou %.6f\n", mean);
  return 0;
}

int cmd_eval_traj(const std::string& est_path, const std::string& ref_path, bool with_scale,
                  int delta, const std::string& out_path) {
  const Trajectory est = read_trajectory(est_path);
  const Trajectory ref = read_trajectory(ref_path);
  const PoseMetrics metrics = evaluate_trajectory(est, ref, with_scale, delta);
  json report;
  report["ate"] = metrics.ate;
  report["rpe_t"] = metrics.rpe_t;
  report["rpe_r"] = metrics.rpe_r;
  report["n_poses"] = metrics.associated_poses;
  report["delta"] = delta;
  report["alignment"] = {{"type", with_scale ? "sim3" : "rigid"},
                         {"scale", with_scale}};
  const std::string text = report.dump(2);
  if (!out_path.empty()) {
    std::ofstream out(out_path, std::ios::trunc);
    out << text << "\n";
  }
  std::cout << text << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RoMo motion segmentation pipeline"};
  app.require_subcommand(1);

  SegmentArgs seg;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", seg.config_path, "run config JSON");
    cmd->add_option("--set", seg.overrides, "config override key=value (repeatable)");
    cmd->add_option("--seed", seg.seed, "RNG seed override")
        ->each([&](const std::string&) { seg.seed_given = true; });
    cmd->add_option("--jobs", seg.jobs, "worker cap (0 = hardware)");
  };

  CLI::App* segment = app.add_subcommand("segment", "produce motion masks for a sequence");
  segment->add_option("--in", seg.in_dir, "input directory (flow + features)")->required();
  segment->add_option("--out", seg.out_dir, "output directory")->required();
  add_common(segment);
  segment->add_option("--refine", seg.refine, "none|morph|external:<cmd>");
  segment->add_flag("--png", seg.png, "also export masks as PNG");

  CLI::App* dump = app.add_subcommand("dump-labels", "dump per-iteration L/U masks and scores");
  dump->add_option("--in", seg.in_dir, "input directory")->required();
  dump->add_option("--out", seg.out_dir, "output directory")->required();
  add_common(dump);

  std::string spec_path, synth_out;
  std::uint64_t synth_seed = 0;
  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene bundle");
  synth->add_option("--spec", spec_path, "scene spec JSON")->required();
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", synth_seed, "generation seed");

  std::string pred_dir, gt_dir, csv_path;
  CLI::App* eval_masks = app.add_subcommand("eval-masks", "score predicted masks against gt");
  eval_masks->add_option("--pred", pred_dir, "predicted mask directory")->required();
  eval_masks->add_option("--gt", gt_dir, "ground-truth mask directory")->required();
  eval_masks->add_option("--out", csv_path, "also write the per-frame CSV here");

  std::string est_path, ref_path, traj_out;
  bool with_scale = false;
  int delta = 1;
  CLI::App* eval_traj = app.add_subcommand("eval-traj", "trajectory metrics (ATE, RPE)");
  eval_traj->add_option("--est", est_path, "estimated trajectory (TUM)")->required();
  eval_traj->add_option("--ref", ref_path, "reference trajectory (TUM)")->required();
  eval_traj->add_flag("--scale", with_scale, "similarity (Sim3) alignment instead of rigid");
  eval_traj->add_option("--delta", delta, "RPE frame step");
  eval_traj->add_option("--out", traj_out, "also write the JSON report here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : kExitInput;
  }

  try {
    if (segment->parsed()) return cmd_segment(seg);
    if (dump->parsed()) return cmd_dump_labels(seg);
    if (synth->parsed()) return cmd_synth(spec_path, synth_out, synth_seed);
    if (eval_masks->parsed()) return cmd_eval_masks(pred_dir, gt_dir, csv_path);
    if (eval_traj->parsed()) return cmd_eval_traj(est_path, ref_path, with_scale, delta, traj_out);
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitCompute;
  }
  return 0;
}
