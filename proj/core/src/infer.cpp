#include "yoho/infer.hpp"

#include <opencv2/imgproc.hpp>

#include "yoho/error.hpp"

namespace yoho::train {

Predictor network_predictor(nn::EUNet& net) {
  return [&net](const Image& working) {
    const nn::Tensor x = nn::make_input_batch(std::span(&working, 1));
    const nn::ModelOutputs out = net.forward(x, false);
    ProbMap s(working.rows, working.cols, CV_32FC1);
    std::copy(out.s_hat.image(0, 0), out.s_hat.image(0, 0) + out.s_hat.image_plane(), s.ptr<float>());
    return s;
  };
}

SegmentationResult infer(const anno::AnnotatedImage& a, const Predictor& predict, Size2 working_size,
                         const InferOptions& opts) {
  if (a.image.empty()) throw Error(ErrorCode::MissingImage, "annotation has no decoded image");
  const Image working = resize_image(a.image, working_size);
  ProbMap s = predict(working);
  if (s.type() != CV_32FC1 || size_of(s) != working_size) throw Error(ErrorCode::ShapeError, "predictor output has the wrong shape");
  if (a.reverse) s = 1.0f - s;

  SegmentationResult r;
  r.threshold = opts.threshold;
  cv::resize(s, r.raw_map, a.image.size(), 0, 0, cv::INTER_LINEAR);
  cv::min(cv::max(r.raw_map, 0.0f), 1.0f, r.raw_map);

  r.prob_map = r.raw_map.clone();
  if (opts.roi_gating) {
    const BinaryMask roi = anno::rasterize_roi(a, size_of(a.image));
    r.gating = a.reverse ? Gating::OutsideRoi : Gating::InsideRoi;
    // Reverse mode sketches healthy tissue: the lesion may only lie outside it.
    const BinaryMask keep = a.reverse ? (roi == 0) : (roi != 0);
    r.prob_map.setTo(0.0f, keep == 0);
  }
  r.binary_mask = BinaryMask(r.prob_map.size(), CV_8UC1);
  for (int y = 0; y < r.prob_map.rows; ++y) {
    const float* p = r.prob_map.ptr<float>(y);
    auto* m = r.binary_mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < r.prob_map.cols; ++x) m[x] = p[x] >= opts.threshold ? 1 : 0;
  }
  return r;
}

SegmentationResult infer(const anno::AnnotatedImage& a, nn::EUNet& net, Size2 working_size, const InferOptions& opts) {
  return infer(a, network_predictor(net), working_size, opts);
}

}  // namespace yoho::train
