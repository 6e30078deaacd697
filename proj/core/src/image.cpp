#include "yoho/image.hpp"

#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "yoho/error.hpp"

namespace yoho {

namespace fs = std::filesystem;

Image read_color_image(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingImage, "image not found: " + path.string());
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (img.empty()) throw Error(ErrorCode::MissingImage, "cannot decode image: " + path.string());
  return img;
}

BinaryMask read_binary_mask(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::IoFailure, "mask not found: " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (raw.empty()) throw Error(ErrorCode::IoFailure, "cannot decode mask: " + path.string());
  BinaryMask mask(raw.size(), CV_8UC1);
  for (int y = 0; y < raw.rows; ++y) {
    const auto* src = raw.ptr<std::uint8_t>(y);
    auto* dst = mask.ptr<std::uint8_t>(y);
    for (int x = 0; x < raw.cols; ++x) dst[x] = src[x] >= 128 ? 1 : 0;
  }
  return mask;
}

std::vector<std::uint8_t> encode_png(const cv::Mat& m) {
  std::vector<std::uint8_t> buf;
  // Fixed compression keeps the byte stream reproducible across runs.
  const std::vector<int> params{cv::IMWRITE_PNG_COMPRESSION, 6};
  if (!cv::imencode(".png", m, buf, params)) throw Error(ErrorCode::IoFailure, "PNG encoding failed");
  return buf;
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::IoFailure, "short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot rename " + tmp.string() + ": " + ec.message());
}

void write_png(const fs::path& path, const cv::Mat& m) { write_file_atomic(path, encode_png(m)); }

cv::Mat mask_to_u8(const BinaryMask& mask) {
  cv::Mat out;
  mask.convertTo(out, CV_8UC1, 255.0);
  return out;
}

Image resize_image(const Image& img, Size2 size) {
  if (size_of(img) == size) return img.clone();
  const bool shrinking = size.width <= img.cols && size.height <= img.rows;
  Image out;
  cv::resize(img, out, size.cv(), 0, 0, shrinking ? cv::INTER_AREA : cv::INTER_LINEAR);
  return out;
}

std::size_t popcount(const BinaryMask& mask) { return static_cast<std::size_t>(cv::countNonZero(mask)); }

}  // namespace yoho
