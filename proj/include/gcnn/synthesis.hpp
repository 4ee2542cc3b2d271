#pragma once

#include <cstdint>
#include <string>

#include "gcnn/guided.hpp"
#include "gcnn/mask.hpp"
#include "gcnn/rng.hpp"

namespace gcnn {

struct SynthesisConfig {
  double p = 0.4;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("synthesis p must lie in [0, 1]");
  }
};

/// Background-aware block-wise random synthesis: every false cell turns true
/// independently with probability p. True cells are never cleared.
inline GuidanceMask extend_mask_random(const GuidanceMask& mask, const SynthesisConfig& cfg) {
  cfg.validate();
  GuidanceMask out = mask;
  for (std::size_t i = 0; i < out.cells.size(); ++i)
    if (!out.cells[i] && counter_uniform(cfg.seed, i) < cfg.p) out.cells[i] = 1;
  return out;
}

/// Test-time dropout scaling: true cells unchanged, background times p.
template <typename T>
Tensor<T> scale_background(const Tensor<T>& features, const MaskView& view, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ValueError("scale_background p must lie in [0, 1]");
  return guided_pointwise(PointwiseOp::kScale, features, view, static_cast<T>(p));
}

enum class Mode { kDense, kGuided, kGuidedPlus };
enum class Phase { kTrain, kTest };

inline Mode parse_mode(const std::string& s) {
  if (s == "dense") return Mode::kDense;
  if (s == "guided") return Mode::kGuided;
  if (s == "guided_plus") return Mode::kGuidedPlus;
  throw ValueError("invalid mode '" + s + "' (expected dense, guided or guided_plus)");
}

inline std::string to_string(Mode m) {
  switch (m) {
    case Mode::kDense: return "dense";
    case Mode::kGuided: return "guided";
    case Mode::kGuidedPlus: return "guided_plus";
  }
  return "?";
}

enum class MaskSource { kNone, kGroundTruth, kPredicted };
enum class Background { kCompute, kZero, kScale };

/// How the detector's layers are wired for one mode and phase.
struct LayerPolicy {
  MaskSource mask_source = MaskSource::kNone;
  bool extend_with_synthesis = false;
  Background background = Background::kCompute;
  double background_scale = 1.0;

  bool uses_mask() const { return mask_source != MaskSource::kNone; }
};

/// Training always runs guided layers on the ground-truth mask extended by
/// synthesis; at test time the predicted mask is used unextended, either
/// hard-zeroing the background (guided) or scaling it by p (guided plus).
inline LayerPolicy pipeline_mode_select(Mode mode, Phase phase, double p = 0.0) {
  LayerPolicy pol;
  if (mode == Mode::kDense) return pol;
  if (phase == Phase::kTrain) {
    pol.mask_source = MaskSource::kGroundTruth;
    pol.extend_with_synthesis = true;
    pol.background = Background::kZero;
    return pol;
  }
  pol.mask_source = MaskSource::kPredicted;
  if (mode == Mode::kGuided) {
    pol.background = Background::kZero;
  } else {
    if (!(p >= 0.0 && p <= 1.0)) throw ValueError("guided_plus p must lie in [0, 1]");
    pol.background = Background::kScale;
    pol.background_scale = p;
  }
  return pol;
}

}  // namespace gcnn
