#include "yoho/annotation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "yoho/error.hpp"

namespace yoho::anno {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double cross(Point o, Point a, Point b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

bool on_segment(Point p, Point a, Point b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= p.y &&
         p.y <= std::max(a.y, b.y);
}

int sign(double v) { return (v > 0) - (v < 0); }

bool segments_intersect(Point p1, Point p2, Point q1, Point q2) {
  const int d1 = sign(cross(q1, q2, p1));
  const int d2 = sign(cross(q1, q2, p2));
  const int d3 = sign(cross(p1, p2, q1));
  const int d4 = sign(cross(p1, p2, q2));
  if (d1 != d2 && d3 != d4 && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0) return true;
  if (d1 == 0 && on_segment(p1, q1, q2)) return true;
  if (d2 == 0 && on_segment(p2, q1, q2)) return true;
  if (d3 == 0 && on_segment(q1, p1, p2)) return true;
  if (d4 == 0 && on_segment(q2, p1, p2)) return true;
  return false;
}

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedAnnotation, what); }

double number_at(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number()) malformed(where + "." + key + " must be a number");
  return it->get<double>();
}

struct Document {
  std::string image_path;
  bool reverse = false;
  std::vector<Polygon> rois;
  std::vector<SampleCircle> samples;
};

Document parse_document(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) malformed("document must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (key != "image" && key != "reverse" && key != "rois" && key != "samples") malformed("unknown key '" + key + "'");
  }

  Document doc;
  if (!j.contains("image") || !j["image"].is_string()) malformed("'image' must be a string path");
  doc.image_path = j["image"].get<std::string>();
  if (j.contains("reverse")) {
    if (!j["reverse"].is_boolean()) malformed("'reverse' must be a boolean");
    doc.reverse = j["reverse"].get<bool>();
  }

  if (!j.contains("rois") || !j["rois"].is_array()) malformed("'rois' must be an array of polygons");
  for (std::size_t i = 0; i < j["rois"].size(); ++i) {
    const auto& jp = j["rois"][i];
    const std::string where = "rois[" + std::to_string(i) + "]";
    if (!jp.is_array()) malformed(where + " must be an array of [x,y] pairs");
    Polygon poly;
    for (const auto& v : jp) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        malformed(where + " vertex must be [x,y]");
      }
      poly.vertices.push_back({v[0].get<double>(), v[1].get<double>()});
    }
    doc.rois.push_back(std::move(poly));
  }

  if (!j.contains("samples") || !j["samples"].is_array()) malformed("'samples' must be an array");
  for (std::size_t i = 0; i < j["samples"].size(); ++i) {
    const auto& js = j["samples"][i];
    const std::string where = "samples[" + std::to_string(i) + "]";
    if (!js.is_object()) malformed(where + " must be an object");
    for (const auto& [key, _] : js.items()) {
      if (key != "cx" && key != "cy" && key != "r") malformed(where + ": unknown key '" + key + "'");
    }
    doc.samples.push_back({number_at(js, "cx", where), number_at(js, "cy", where), number_at(js, "r", where)});
  }
  return doc;
}

AnnotatedImage assemble(Document doc, Image image, std::string image_id, const AnnotationLimits& limits) {
  AnnotatedImage a;
  a.image = std::move(image);
  a.rois = std::move(doc.rois);
  a.reverse = doc.reverse;
  a.samples = std::move(doc.samples);
  a.image_id = std::move(image_id);
  a.image_path = std::move(doc.image_path);

  ValidationReport report = validate(a, limits);
  if (!report.ok()) throw ValidationFailure(std::move(report));
  return a;
}

}  // namespace

bool point_in_polygon(const Polygon& poly, Point p) {
  // Even-odd crossing test on a horizontal ray towards +x.
  bool inside = false;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    const Point a = v[j];
    const Point b = v[i];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
      if (p.x < x_cross) inside = !inside;
    }
  }
  return inside;
}

bool point_in_union(const std::vector<Polygon>& polys, Point p) {
  return std::any_of(polys.begin(), polys.end(), [&](const Polygon& poly) { return point_in_polygon(poly, p); });
}

bool is_simple(const Polygon& poly) {
  const auto& v = poly.vertices;
  const std::size_t n = v.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    const Point a1 = v[i];
    const Point a2 = v[(i + 1) % n];
    if (a1 == a2) return false;
    for (std::size_t k = i + 1; k < n; ++k) {
      const Point b1 = v[k];
      const Point b2 = v[(k + 1) % n];
      const bool adjacent = k == i + 1 || (i == 0 && k == n - 1);
      if (adjacent) {
        // Neighbouring edges share one vertex; they may only overlap if collinear and folding back.
        const Point shared = (k == i + 1) ? a2 : a1;
        const Point other_a = (k == i + 1) ? a1 : a2;
        const Point other_b = (k == i + 1) ? b2 : b1;
        if (sign(cross(shared, other_a, other_b)) == 0) {
          const double dot = (other_a.x - shared.x) * (other_b.x - shared.x) + (other_a.y - shared.y) * (other_b.y - shared.y);
          if (dot > 0) return false;
        }
        continue;
      }
      if (segments_intersect(a1, a2, b1, b2)) return false;
    }
  }
  return true;
}

double polygon_area(const Polygon& poly) {
  double twice = 0.0;
  const auto& v = poly.vertices;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) twice += v[j].x * v[i].y - v[i].x * v[j].y;
  return std::abs(twice) / 2.0;
}

std::string ValidationReport::to_json() const {
  auto list = [](const std::vector<Finding>& fs) {
    json arr = json::array();
    for (const auto& f : fs) arr.push_back({{"entity", f.entity}, {"message", f.message}});
    return arr;
  };
  return json{{"errors", list(errors)}, {"warnings", list(warnings)}}.dump();
}

ValidationReport validate(const AnnotatedImage& a, const AnnotationLimits& limits) {
  ValidationReport report;
  const double w = a.width();
  const double h = a.height();
  auto error = [&](std::string entity, std::string msg) { report.errors.push_back({std::move(entity), std::move(msg)}); };
  auto warn = [&](std::string entity, std::string msg) { report.warnings.push_back({std::move(entity), std::move(msg)}); };

  if (a.image.empty()) error("image", "image is empty");
  if (a.rois.empty()) error("rois", "at least one polygon is required");

  for (std::size_t i = 0; i < a.rois.size(); ++i) {
    const std::string entity = "rois[" + std::to_string(i) + "]";
    const Polygon& poly = a.rois[i];
    if (poly.vertices.size() < 3) {
      error(entity, "polygon needs at least 3 vertices");
      continue;
    }
    bool in_bounds = true;
    for (const Point& p : poly.vertices) {
      if (!(p.x >= 0 && p.x < w && p.y >= 0 && p.y < h)) in_bounds = false;
    }
    if (!in_bounds) error(entity, "vertex outside image bounds [0,W)x[0,H)");
    if (!is_simple(poly)) error(entity, "polygon is self-intersecting");
    if (w > 0 && h > 0 && polygon_area(poly) < limits.min_polygon_area_fraction * w * h) {
      warn(entity, "polygon area below 0.1% of the image");
    }
  }

  if (a.samples.empty()) error("samples", "at least one sample circle is required");
  const int n = static_cast<int>(a.samples.size());
  if (n >= 1 && (n < limits.min_recommended_samples || n > limits.max_recommended_samples)) {
    warn("samples", n < limits.min_recommended_samples ? "sample count below recommended range 2-10"
                                                       : "sample count above recommended range 2-10");
  }

  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const std::string entity = "samples[" + std::to_string(i) + "]";
    const SampleCircle& c = a.samples[i];
    if (!(c.r > 0)) {
      error(entity, "radius must be positive");
      continue;
    }
    if (c.r < limits.r_min) error(entity, "radius below minimum sample radius");
    if (!(c.cx - c.r >= 0 && c.cx + c.r <= w && c.cy - c.r >= 0 && c.cy + c.r <= h)) {
      error(entity, "circle extends outside image bounds");
    }
    const bool inside = point_in_union(a.rois, {c.cx, c.cy});
    if (!a.reverse && !inside) error(entity, "sample center lies outside the sketched ROI");
    if (a.reverse && inside) error(entity, "reverse mode: sample center lies inside the sketched healthy region");
  }
  return report;
}

AnnotatedImage parse_annotation(std::string_view text, const fs::path& base_dir, const AnnotationLimits& limits) {
  Document doc = parse_document(text);
  fs::path image_path(doc.image_path);
  if (image_path.is_relative()) image_path = base_dir / image_path;
  Image image = read_color_image(image_path);
  std::string id = fs::path(doc.image_path).stem().string();
  return assemble(std::move(doc), std::move(image), std::move(id), limits);
}

AnnotatedImage parse_annotation(std::string_view text, Image image, std::string image_id, const AnnotationLimits& limits) {
  if (image.empty()) throw Error(ErrorCode::MissingImage, "supplied image is empty");
  return assemble(parse_document(text), std::move(image), std::move(image_id), limits);
}

AnnotatedImage load_annotation(const fs::path& path, const AnnotationLimits& limits) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open annotation " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_annotation(ss.str(), path.parent_path(), limits);
}

std::string serialize_annotation(const AnnotatedImage& a) {
  json rois = json::array();
  for (const auto& poly : a.rois) {
    json jp = json::array();
    for (const auto& p : poly.vertices) jp.push_back({p.x, p.y});
    rois.push_back(std::move(jp));
  }
  json samples = json::array();
  for (const auto& c : a.samples) samples.push_back({{"cx", c.cx}, {"cy", c.cy}, {"r", c.r}});
  return json{{"image", a.image_path}, {"reverse", a.reverse}, {"rois", rois}, {"samples", samples}}.dump(2);
}

BinaryMask rasterize_polygons(const std::vector<Polygon>& polys, Size2 out_size, double sx, double sy) {
  BinaryMask mask = BinaryMask::zeros(out_size.height, out_size.width, CV_8UC1);
  std::vector<double> crossings;
  for (const Polygon& poly : polys) {
    const auto& v = poly.vertices;
    if (v.size() < 3) continue;
    for (int y = 0; y < out_size.height; ++y) {
      const double yc = y + 0.5;
      crossings.clear();
      for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
        const Point a{v[j].x * sx, v[j].y * sy};
        const Point b{v[i].x * sx, v[i].y * sy};
        if ((a.y > yc) != (b.y > yc)) crossings.push_back(a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y));
      }
      std::sort(crossings.begin(), crossings.end());
      auto* row = mask.ptr<std::uint8_t>(y);
      // Pixel x is inside iff an odd number of crossings lie strictly right of
      // its center, i.e. c[2k] <= x + 0.5 < c[2k+1].
      for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
        const double lo = std::ceil(crossings[k] - 0.5);
        const double hi = std::ceil(crossings[k + 1] - 0.5);
        const int x0 = static_cast<int>(std::clamp(lo, 0.0, static_cast<double>(out_size.width)));
        const int x1 = static_cast<int>(std::clamp(hi, 0.0, static_cast<double>(out_size.width)));
        for (int x = x0; x < x1; ++x) row[x] = 1;
      }
    }
  }
  return mask;
}

BinaryMask rasterize_roi(const AnnotatedImage& a, Size2 out_size) {
  if (out_size.height <= 0 || out_size.width <= 0) throw Error(ErrorCode::ShapeError, "output size must be positive");
  const double sx = static_cast<double>(out_size.width) / a.width();
  const double sy = static_cast<double>(out_size.height) / a.height();
  BinaryMask mask = rasterize_polygons(a.rois, out_size, sx, sy);
  if (popcount(mask) == 0) throw Error(ErrorCode::DegeneratePolygon, "ROI covers no pixel centers at the requested size");
  return mask;
}

}  // namespace yoho::anno
