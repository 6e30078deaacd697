#pragma once

#include <functional>

#include "yoho/annotation.hpp"
#include "yoho/eunet.hpp"

namespace yoho::train {

struct InferOptions {
  double threshold = 0.5;
  /// Zero the map outside the sketched lesion (reverse: inside the sketch).
  bool roi_gating = true;

  friend bool operator==(const InferOptions&, const InferOptions&) = default;
};

enum class Gating { None, InsideRoi, OutsideRoi };

struct SegmentationResult {
  ProbMap raw_map;   // native resolution, after reverse inversion, before gating
  ProbMap prob_map;  // raw_map with gating applied
  BinaryMask binary_mask;  // prob_map >= threshold
  double threshold = 0.5;
  Gating gating = Gating::None;
};

/// Maps the working-resolution image to s_hat at the same resolution.
using Predictor = std::function<ProbMap(const Image& working)>;

Predictor network_predictor(nn::EUNet& net);

SegmentationResult infer(const anno::AnnotatedImage& a, const Predictor& predict, Size2 working_size,
                         const InferOptions& opts = {});
SegmentationResult infer(const anno::AnnotatedImage& a, nn::EUNet& net, Size2 working_size,
                         const InferOptions& opts = {});

}  // namespace yoho::train
