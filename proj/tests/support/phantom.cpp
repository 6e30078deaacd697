#include "phantom.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace yoho::testing {

namespace fs = std::filesystem;

namespace {

struct Blob {
  double cx, cy, r0;
  double a1, p1, a2, p2;

  double radius(double theta) const { return r0 * (1.0 + a1 * std::sin(3.0 * theta + p1) + a2 * std::cos(5.0 * theta + p2)); }

  bool contains(double x, double y) const {
    const double dx = x - cx;
    const double dy = y - cy;
    return std::hypot(dx, dy) <= radius(std::atan2(dy, dx));
  }
};

}  // namespace

Phantom make_phantom(std::uint64_t seed, Size2 size) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double w = size.width;
  const double h = size.height;
  const double scale = std::min(w, h) / 256.0;
  const Blob blob{w * (0.46 + 0.08 * u(rng)), h * (0.46 + 0.08 * u(rng)), 62.0 * scale,
                  0.12 + 0.06 * u(rng), 2 * std::numbers::pi * u(rng), 0.06 + 0.04 * u(rng), 2 * std::numbers::pi * u(rng)};

  Phantom p;
  p.image = Image(size.height, size.width, CV_8UC3);
  p.gt = BinaryMask(size.height, size.width, CV_8UC1, cv::Scalar(0));
  const double phase = 2 * std::numbers::pi * u(rng);
  for (int y = 0; y < size.height; ++y) {
    for (int x = 0; x < size.width; ++x) {
      const bool in = blob.contains(x + 0.5, y + 0.5);
      double b, g, r;
      if (in) {
        const double stripes = 28.0 * std::sin(0.55 * x + 0.35 * y + phase) * std::sin(0.21 * x - 0.47 * y);
        b = 70 + stripes + 14 * noise(rng);
        g = 78 + 0.6 * stripes + 14 * noise(rng);
        r = 165 - 0.5 * stripes + 14 * noise(rng);
      } else {
        const double slow = 12.0 * std::sin(x / (40.0 * scale) + phase) + 10.0 * std::cos(y / (55.0 * scale));
        b = 165 + slow + 5 * noise(rng);
        g = 182 + slow + 5 * noise(rng);
        r = 214 + 0.5 * slow + 5 * noise(rng);
      }
      p.image.at<cv::Vec3b>(y, x) = cv::Vec3b(cv::saturate_cast<std::uint8_t>(b), cv::saturate_cast<std::uint8_t>(g),
                                              cv::saturate_cast<std::uint8_t>(r));
      p.gt.at<std::uint8_t>(y, x) = in ? 1 : 0;
    }
  }

  anno::AnnotatedImage& a = p.annotation;
  a.image = p.image;
  a.image_id = "phantom";
  a.image_path = "phantom.png";
  anno::Polygon poly;
  constexpr int kVertices = 28;
  for (int k = 0; k < kVertices; ++k) {
    const double t = 2 * std::numbers::pi * k / kVertices;
    const double r = blob.radius(t) * 1.12 + 3.0 * scale;
    const double x = std::clamp(blob.cx + r * std::cos(t), 0.0, w - 1.0);
    const double y = std::clamp(blob.cy + r * std::sin(t), 0.0, h - 1.0);
    poly.vertices.push_back({x, y});
  }
  a.rois.push_back(poly);
  const double sr = 18.0 * scale;
  for (int k = 0; k < 4; ++k) {
    const double t = std::numbers::pi / 4 + k * std::numbers::pi / 2;
    const double d = 0.38 * blob.r0;
    a.samples.push_back({blob.cx + d * std::cos(t), blob.cy + d * std::sin(t), sr});
  }
  return p;
}

fs::path write_phantom(const Phantom& p, const fs::path& dir) {
  fs::create_directories(dir);
  write_png(dir / "phantom.png", p.image);
  write_png(dir / "gt.png", mask_to_u8(p.gt));
  const std::string doc = anno::serialize_annotation(p.annotation);
  write_file_atomic(dir / "annotation.json", std::span(reinterpret_cast<const std::uint8_t*>(doc.data()), doc.size()));
  return dir / "annotation.json";
}

}  // namespace yoho::testing
