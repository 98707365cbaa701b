#include "romoseg/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <thread>

namespace romoseg {

namespace {

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> workers;
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(jobs), count);
  std::vector<std::exception_ptr> errors(n_workers);
  for (std::size_t w = 0; w < n_workers; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (std::thread& t : workers) t.join();
  for (const std::exception_ptr& e : errors)
    if (e) std::rethrow_exception(e);
}

// Drops entries whose source pixel lies inside the mask of the source frame.
CorrespondenceSet filter_by_mask(const CorrespondenceSet& corrs, const MaskImage& mask) {
  CorrespondenceSet out;
  out.frame_src = corrs.frame_src;
  out.frame_dst = corrs.frame_dst;
  out.width = corrs.width;
  out.height = corrs.height;
  out.valid_mask.assign(corrs.valid_mask.size(), 0);
  for (const CorrEntry& e : corrs.entries) {
    if (mask.values[static_cast<std::size_t>(e.pixel)] != 0) continue;
    out.entries.push_back(e);
    out.valid_mask[static_cast<std::size_t>(e.pixel)] = 1;
  }
  return out;
}

std::vector<PointPair> to_point_pairs(const CorrespondenceSet& corrs) {
  std::vector<PointPair> pairs;
  pairs.reserve(corrs.entries.size());
  for (const CorrEntry& e : corrs.entries) pairs.push_back({e.src, e.dst});
  return pairs;
}

// Binary 3x3 dilation/erosion with background outside the frame.
MaskImage morph(const MaskImage& in, bool dilate) {
  MaskImage out = make_mask(in.width, in.height);
  for (int y = 0; y < in.height; ++y) {
    for (int x = 0; x < in.width; ++x) {
      // dilate: set iff any neighbor is set; erode: set iff all are.
      bool hit = false;
      for (int dy = -1; dy <= 1 && !hit; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          const bool v = (nx >= 0 && nx < in.width && ny >= 0 && ny < in.height)
                             ? in.at(nx, ny)
                             : false;
          if (v == dilate) {
            hit = true;
            break;
          }
        }
      }
      out.set(x, y, dilate ? hit : !hit);
    }
  }
  return out;
}

// Removes 8-connected components smaller than min_area.
void drop_small_components(MaskImage& mask, std::size_t min_area) {
  std::vector<std::uint8_t> seen(mask.values.size(), 0);
  std::vector<std::size_t> stack;
  std::vector<std::size_t> component;
  for (std::size_t start = 0; start < mask.values.size(); ++start) {
    if (mask.values[start] == 0 || seen[start]) continue;
    stack.assign(1, start);
    component.clear();
    seen[start] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      component.push_back(p);
      const int y = static_cast<int>(p) / mask.width;
      const int x = static_cast<int>(p) % mask.width;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const int nx = x + dx;
          const int ny = y + dy;
          if (nx < 0 || nx >= mask.width || ny < 0 || ny >= mask.height) continue;
          const std::size_t q = static_cast<std::size_t>(ny) * mask.width + nx;
          if (mask.values[q] != 0 && !seen[q]) {
            seen[q] = 1;
            stack.push_back(q);
          }
        }
      }
    }
    if (component.size() < min_area)
      for (const std::size_t p : component) mask.values[p] = 0;
  }
}

MaskImage morphological_refine(const MaskImage& in) {
  MaskImage m = morph(morph(in, true), false);   // closing
  m = morph(morph(m, false), true);              // opening
  const double min_area = 0.0005 * in.width * in.height;
  drop_small_components(m, static_cast<std::size_t>(std::ceil(min_area)));
  return m;
}

RefineResult external_refine(const std::vector<MaskImage>& masks, const std::string& command) {
  namespace fs = std::filesystem;
  static std::atomic<std::uint64_t> handoff_counter{0};
  const fs::path dir = fs::temp_directory_path() /
                       ("romoseg_refine_" + fnv1a_hex(command) + "_" +
                        std::to_string(handoff_counter.fetch_add(1)));
  fs::create_directories(dir);
  char name[64];
  for (std::size_t t = 0; t < masks.size(); ++t) {
    std::snprintf(name, sizeof(name), "coarse_%06zu.pgm", t);
    write_mask(masks[t], dir / name);
  }
  const std::string cmdline = command + " " + dir.string();
  const int status = std::system(cmdline.c_str());
  RefineResult result;
  if (status != 0) {
    log_warn("external refiner exited with status " + std::to_string(status) +
             "; keeping coarse masks");
    result.masks = masks;
    result.fallback = true;
    return result;
  }
  for (std::size_t t = 0; t < masks.size(); ++t) {
    std::snprintf(name, sizeof(name), "refined_%06zu.pgm", t);
    if (!fs::exists(dir / name)) {
      log_warn("external refiner did not produce " + std::string(name) +
               "; keeping coarse masks");
      result.masks = masks;
      result.fallback = true;
      return result;
    }
    result.masks.push_back(read_mask(dir / name));
  }
  fs::remove_all(dir);
  return result;
}

}  // namespace

void SequenceBundle::validate() const {
  if (frames < 2) throw PipelineError("sequence needs at least 2 frames (adjacent flow)");
  if (static_cast<int>(features.size()) != frames ||
      static_cast<int>(flow_fwd.size()) != frames ||
      static_cast<int>(flow_bwd.size()) != frames)
    throw ContractError("bundle arrays do not match the frame count");
  for (int t = 0; t < frames; ++t) {
    if ((t < frames - 1) != flow_fwd[static_cast<std::size_t>(t)].has_value())
      throw ContractError("frame " + std::to_string(t) + ": unexpected forward flow layout");
    if ((t > 0) != flow_bwd[static_cast<std::size_t>(t)].has_value())
      throw ContractError("frame " + std::to_string(t) + ": unexpected backward flow layout");
    const FeatureMap& f = features[static_cast<std::size_t>(t)];
    if (f.hf != features[0].hf || f.wf != features[0].wf || f.channels != features[0].channels)
      throw ContractError("frame " + std::to_string(t) + ": feature grid size differs");
    for (const auto& flow : {flow_fwd[static_cast<std::size_t>(t)],
                             flow_bwd[static_cast<std::size_t>(t)]}) {
      if (flow.has_value() && (flow->width != width || flow->height != height))
        throw ContractError("frame " + std::to_string(t) + ": flow size differs from frame");
    }
  }
}

RefineResult refine_masks(const std::vector<MaskImage>& masks, const RefinementConfig& cfg) {
  for (const MaskImage& m : masks) validate_mask(m);
  RefineResult result;
  switch (cfg.mode) {
    case RefineMode::kNone:
      result.masks = masks;
      return result;
    case RefineMode::kMorphological:
      result.masks.reserve(masks.size());
      for (const MaskImage& m : masks) result.masks.push_back(morphological_refine(m));
      return result;
    case RefineMode::kExternal:
      return external_refine(masks, cfg.command);
  }
  result.masks = masks;
  return result;
}

PipelineResult run(const SequenceBundle& bundle, const RunConfig& cfg,
                   const RunOptions& options) {
  bundle.validate();
  cfg.validate();
  const int pairs = bundle.frames - 1;
  const std::size_t n_pairs = static_cast<std::size_t>(pairs);
  const std::size_t n_frames = static_cast<std::size_t>(bundle.frames);

  // Cycle filtering is independent of the iteration; compute once.
  std::vector<CorrespondenceSet> base_fwd(n_pairs);  // sourced at frame t
  std::vector<CorrespondenceSet> base_bwd(n_pairs);  // sourced at frame t+1
  parallel_for(n_pairs, cfg.jobs, [&](std::size_t p) {
    const int t = static_cast<int>(p);
    const FlowField& fwd = *bundle.flow_fwd[p];
    const FlowField& bwd = *bundle.flow_bwd[p + 1];
    base_fwd[p] = cycle_filter(fwd, bwd, cfg.cycle_tolerance);
    base_fwd[p].frame_src = t;
    base_fwd[p].frame_dst = t + 1;
    base_bwd[p] = cycle_filter(bwd, fwd, cfg.cycle_tolerance);
    base_bwd[p].frame_src = t + 1;
    base_bwd[p].frame_dst = t;
  });

  // v_t from the forward flow, or the backward flow for the last frame.
  std::vector<FlowStats> stats(n_frames);
  for (std::size_t t = 0; t < n_frames; ++t)
    stats[t] = mean_flow_norm(bundle.flow_fwd[t].has_value() ? *bundle.flow_fwd[t]
                                                             : *bundle.flow_bwd[t]);

  PipelineResult result;
  std::vector<RobustFitReport> prev_reports(n_pairs);
  std::vector<std::uint8_t> prev_report_valid(n_pairs, 0);
  TrainState train_state;
  bool train_state_ready = false;

  for (int k = 1; k <= cfg.iterations; ++k) {
    IterationRecord record;
    record.iteration = k;
    record.pair_reports.resize(n_pairs);
    std::vector<ScoreMap> score_fwd(n_frames);
    std::vector<ScoreMap> score_bwd(n_frames);
    std::vector<std::uint8_t> pair_degenerate(n_pairs, 0);

    const std::vector<MaskImage>* prev_masks =
        result.iterations.empty() ? nullptr : &result.iterations.back().masks;

    parallel_for(n_pairs, cfg.jobs, [&](std::size_t p) {
      const int t = static_cast<int>(p);
      // The classifier mask prunes the correspondences feeding the fit;
      // labeling afterwards scores the full cycle-consistent set under the
      // refreshed model.
      CorrespondenceSet fit_set = base_fwd[p];
      if (prev_masks != nullptr) fit_set = filter_by_mask(fit_set, (*prev_masks)[p]);
      RobustFitReport report;
      bool fit_ok = false;
      try {
        report = lmeds_fit(to_point_pairs(fit_set), cfg.lmeds_trials,
                           derive_seed(cfg.seed, static_cast<std::uint64_t>(t)),
                           cfg.classical_sampson);
        fit_ok = !report.degenerate;
      } catch (const InsufficientDataError&) {
      } catch (const DegeneracyError&) {
      }
      if (!fit_ok && prev_report_valid[p]) {
        // A refit that went degenerate must not degrade the previous model.
        report = prev_reports[p];
        fit_ok = true;
      }
      record.pair_reports[p] = report;
      if (!fit_ok) {
        pair_degenerate[p] = 1;
        return;
      }
      score_fwd[p] = score_correspondences(report.model, base_fwd[p], cfg.classical_sampson);
      score_bwd[p + 1] =
          score_correspondences(report.model.transposed(), base_bwd[p], cfg.classical_sampson);
    });

    for (std::size_t p = 0; p < n_pairs; ++p) {
      if (!pair_degenerate[p]) {
        prev_reports[p] = record.pair_reports[p];
        prev_report_valid[p] = 1;
      }
    }

    record.labels.resize(n_frames);
    record.reliable.assign(n_frames, 0);
    parallel_for(n_frames, cfg.jobs, [&](std::size_t t) {
      const ScoreMap* fwd = score_fwd[t].scores.empty() ? nullptr : &score_fwd[t];
      const ScoreMap* bwd = score_bwd[t].scores.empty() ? nullptr : &score_bwd[t];
      if (fwd == nullptr && bwd == nullptr) {
        EpipolarLabels empty;
        empty.width = bundle.width;
        empty.height = bundle.height;
        const std::size_t n = static_cast<std::size_t>(bundle.width) * bundle.height;
        empty.likely_static.assign(n, 0);
        empty.likely_dynamic.assign(n, 0);
        record.labels[t] = std::move(empty);
        return;
      }
      record.labels[t] = label_masks(fwd, bwd, stats[t], cfg);
      record.reliable[t] =
          frame_reliable(record.labels[t], cfg.inlier_drop_threshold) ? 1 : 0;
    });

    std::vector<const FeatureMap*> train_features;
    std::vector<GridLabels> train_labels;
    for (std::size_t t = 0; t < n_frames; ++t) {
      if (!record.reliable[t]) continue;
      train_features.push_back(&bundle.features[t]);
      train_labels.push_back(
          downsample_labels(record.labels[t], bundle.features[t].hf, bundle.features[t].wf));
    }
    if (train_features.empty()) {
      if (k == 1) throw PipelineError("no static anchor: every frame is unreliable");
      log_warn("iteration " + std::to_string(k) +
               ": no reliable frames, keeping previous classifier");
    } else {
      if (!train_state_ready) {
        train_state = init_train_state(bundle.features[0].channels, cfg);
        train_state_ready = true;
      } else {
        // Fine-tune from the previous iteration with fresh Adam moments.
        reset_optimizer(train_state);
      }
      train(train_state, train_features, train_labels, cfg);
    }
    record.train_state = train_state;

    record.masks.resize(n_frames);
    parallel_for(n_frames, cfg.jobs, [&](std::size_t t) {
      record.masks[t] =
          predict_mask(train_state.params, bundle.features[t], bundle.width, bundle.height);
    });

    if (options.keep_score_maps) {
      record.score_fwd = std::move(score_fwd);
      record.score_bwd = std::move(score_bwd);
    }
    result.iterations.push_back(std::move(record));
  }

  RefineResult refined = refine_masks(result.iterations.back().masks, cfg.refinement);
  result.final_masks = std::move(refined.masks);
  result.refinement_fallback = refined.fallback;
  return result;
}

}  // namespace romoseg
