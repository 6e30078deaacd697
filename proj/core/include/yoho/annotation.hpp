#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "yoho/error.hpp"
#include "yoho/image.hpp"

namespace yoho::anno {

struct Point {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point&, const Point&) = default;
};

/// Closed implicitly: the last vertex connects back to the first.
struct Polygon {
  std::vector<Point> vertices;

  friend bool operator==(const Polygon&, const Polygon&) = default;
};

struct SampleCircle {
  double cx = 0.0;
  double cy = 0.0;
  double r = 0.0;

  friend bool operator==(const SampleCircle&, const SampleCircle&) = default;
};

/// The single input image together with the clinician sketch. In reverse mode
/// the polygons outline healthy tissue and the samples are healthy texture.
struct AnnotatedImage {
  Image image;
  std::vector<Polygon> rois;
  bool reverse = false;
  std::vector<SampleCircle> samples;
  std::string image_id;
  /// Path exactly as written in the annotation document.
  std::string image_path;

  int width() const { return image.cols; }
  int height() const { return image.rows; }
};

struct AnnotationLimits {
  double r_min = 8.0;
  int min_recommended_samples = 2;
  int max_recommended_samples = 10;
  /// Polygons smaller than this fraction of the image area draw a warning.
  double min_polygon_area_fraction = 0.001;
};

struct Finding {
  std::string entity;  // e.g. "rois[0]", "samples[3]"
  std::string message;

  friend bool operator==(const Finding&, const Finding&) = default;
};

struct ValidationReport {
  std::vector<Finding> errors;
  std::vector<Finding> warnings;

  bool ok() const { return errors.empty(); }
  std::string to_json() const;
};

/// InvariantViolation carrying the full report.
class ValidationFailure : public Error {
 public:
  explicit ValidationFailure(ValidationReport report)
      : Error(ErrorCode::InvariantViolation, describe(report)), report_(std::move(report)) {}

  const ValidationReport& report() const { return report_; }

 private:
  static std::string describe(const ValidationReport& r) {
    return r.errors.empty() ? "validation failed" : r.errors.front().entity + ": " + r.errors.front().message;
  }
  ValidationReport report_;
};

/// Parses the annotation document. Relative image paths resolve against
/// `base_dir`. Throws MalformedAnnotation, MissingImage or ValidationFailure.
AnnotatedImage parse_annotation(std::string_view text, const std::filesystem::path& base_dir,
                                const AnnotationLimits& limits = {});

/// Variant used when the image has already been decoded (e.g. an upload).
AnnotatedImage parse_annotation(std::string_view text, Image image, std::string image_id,
                                const AnnotationLimits& limits = {});

AnnotatedImage load_annotation(const std::filesystem::path& path, const AnnotationLimits& limits = {});

std::string serialize_annotation(const AnnotatedImage& a);

ValidationReport validate(const AnnotatedImage& a, const AnnotationLimits& limits = {});

/// Pixel (x, y) is set iff its center lies inside the union of the polygons
/// (even-odd rule per polygon), after scaling the native-resolution vertices
/// to `out_size`. The sketched region is returned in reverse mode as well.
/// Throws DegeneratePolygon when nothing is covered.
BinaryMask rasterize_roi(const AnnotatedImage& a, Size2 out_size);
BinaryMask rasterize_polygons(const std::vector<Polygon>& polys, Size2 out_size, double sx = 1.0, double sy = 1.0);

// Geometry helpers shared with the renderer and tests.
bool point_in_polygon(const Polygon& poly, Point p);
bool point_in_union(const std::vector<Polygon>& polys, Point p);
bool is_simple(const Polygon& poly);
double polygon_area(const Polygon& poly);

}  // namespace yoho::anno
