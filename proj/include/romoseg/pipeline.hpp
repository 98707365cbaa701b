#pragma once

#include <optional>
#include <vector>

#include "romoseg/classifier.hpp"
#include "romoseg/common.hpp"
#include "romoseg/config.hpp"
#include "romoseg/epipolar.hpp"
#include "romoseg/flow.hpp"
#include "romoseg/image.hpp"

namespace romoseg {

// Everything the pipeline consumes for one video sequence. Frame t has a
// forward flow (t -> t+1) except the last frame, and a backward flow
// (t -> t-1) except the first.
struct SequenceBundle {
  int frames = 0;
  int width = 0;
  int height = 0;
  std::vector<std::optional<FlowField>> flow_fwd;  // per frame
  std::vector<std::optional<FlowField>> flow_bwd;  // per frame
  std::vector<FeatureMap> features;                // per frame

  void validate() const;
};

struct IterationRecord {
  int iteration = 0;  // 1-based
  std::vector<EpipolarLabels> labels;           // per frame
  std::vector<std::uint8_t> reliable;           // per frame
  std::vector<RobustFitReport> pair_reports;    // per adjacent pair (t, t+1)
  TrainState train_state;
  std::vector<MaskImage> masks;                 // per frame, classifier output
  std::vector<ScoreMap> score_fwd;              // retained when cfg asks for dumps
  std::vector<ScoreMap> score_bwd;
};

struct PipelineResult {
  std::vector<IterationRecord> iterations;
  std::vector<MaskImage> final_masks;
  bool refinement_fallback = false;  // external refiner failed, coarse masks kept
};

struct RunOptions {
  bool keep_score_maps = false;
};

// The full iterative loop: cycle-filtered correspondences -> robust F fits ->
// Sampson pseudo-labels -> classifier training -> masks, repeated
// cfg.iterations times with mask-filtered refits, then mask refinement.
PipelineResult run(const SequenceBundle& bundle, const RunConfig& cfg,
                   const RunOptions& options = {});

struct RefineResult {
  std::vector<MaskImage> masks;
  bool fallback = false;  // external refinement failed, inputs returned
};

// mode none: identity. morphological: 3x3 closing then opening, then drops
// connected components below 0.05% of the frame area. external: hands
// coarse_%06d.pgm to `command <dir>` and reads back refined_%06d.pgm.
RefineResult refine_masks(const std::vector<MaskImage>& masks, const RefinementConfig& cfg);

}  // namespace romoseg
