#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <opencv2/core.hpp>

namespace yoho {

// Rasters are plain OpenCV matrices with fixed element types:
//   Image      CV_8UC3, channel order as decoded (BGR)
//   BinaryMask CV_8UC1 holding 0/1
//   ProbMap    CV_32FC1 in [0,1]
using Image = cv::Mat;
using BinaryMask = cv::Mat;
using ProbMap = cv::Mat;

struct Size2 {
  int height = 0;
  int width = 0;

  friend bool operator==(const Size2&, const Size2&) = default;
  cv::Size cv() const { return {width, height}; }
};

inline Size2 size_of(const cv::Mat& m) { return {m.rows, m.cols}; }

/// Decodes any format OpenCV understands into an 8-bit, 3-channel image.
/// Throws Error(MissingImage) when the file is absent or undecodable.
Image read_color_image(const std::filesystem::path& path);

/// Reads an 8-bit mask; foreground is every value >= 128.
BinaryMask read_binary_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const cv::Mat& m);

/// Writes bytes to `path` via a sibling temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const cv::Mat& m);

/// 0/1 mask -> 0/255 mask suitable for PNG output.
cv::Mat mask_to_u8(const BinaryMask& mask);

/// Area interpolation when shrinking, bilinear otherwise.
Image resize_image(const Image& img, Size2 size);

std::size_t popcount(const BinaryMask& mask);

}  // namespace yoho
