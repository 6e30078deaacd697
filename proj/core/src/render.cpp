#include "yoho/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include <opencv2/imgproc.hpp>

#include "json_io.hpp"
#include "yoho/config.hpp"
#include "yoho/error.hpp"
#include "yoho/hash.hpp"

namespace yoho::render {

namespace fs = std::filesystem;
using detail::json;

namespace {

constexpr std::size_t kMinSeedArea = 9;

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

bool inside_triangle(const std::array<cv::Point2d, 3>& t, double px, double py) {
  // Inclusive half-plane test; the vertex order is counter-clockwise in image coordinates.
  for (int i = 0; i < 3; ++i) {
    const cv::Point2d a = t[i];
    const cv::Point2d b = t[(i + 1) % 3];
    if ((b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x) < 0) return false;
  }
  return true;
}

std::array<cv::Point2d, 3> triangle_vertices(const SeedShape& s, double cx, double cy) {
  std::array<cv::Point2d, 3> v;
  for (int k = 0; k < 3; ++k) {
    const double a = s.orientation + 2.0 * std::numbers::pi * k / 3.0;
    v[k] = {cx + s.radius * std::cos(a), cy + s.radius * std::sin(a)};
  }
  return v;
}

/// Crops `m` to the bounding box of its nonzero pixels, shifting `origin`.
BinaryMask crop_tight(const BinaryMask& m, cv::Point& origin) {
  const cv::Rect box = cv::boundingRect(m);
  if (box.area() == 0) return BinaryMask();
  origin += box.tl();
  return m(box).clone();
}

json placements_to_json(const std::vector<Placement>& ps) {
  json arr = json::array();
  for (const auto& p : ps) arr.push_back({{"seed", p.seed_index}, {"x", p.x}, {"y", p.y}});
  return arr;
}

std::string kind_name(ShapeKind k) { return k == ShapeKind::Circle ? "circle" : "triangle"; }

std::string frame_name(int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d.png", k);
  return buf;
}

}  // namespace

anno::AnnotatedImage scale_annotation(const anno::AnnotatedImage& a, Size2 size) {
  anno::AnnotatedImage out;
  const double sx = static_cast<double>(size.width) / a.width();
  const double sy = static_cast<double>(size.height) / a.height();
  out.image = resize_image(a.image, size);
  out.reverse = a.reverse;
  out.image_id = a.image_id;
  out.image_path = a.image_path;
  for (const auto& poly : a.rois) {
    anno::Polygon p;
    for (const auto& v : poly.vertices) p.vertices.push_back({v.x * sx, v.y * sy});
    out.rois.push_back(std::move(p));
  }
  const double sr = std::min(sx, sy);
  for (const auto& c : a.samples) out.samples.push_back({c.cx * sx, c.cy * sy, c.r * sr});
  return out;
}

BinaryMask rasterize_shape(const SeedShape& shape, double cx, double cy, cv::Point& origin) {
  const double reach = shape.radius;
  const int x0 = static_cast<int>(std::floor(cx - reach)) - 1;
  const int y0 = static_cast<int>(std::floor(cy - reach)) - 1;
  const int x1 = static_cast<int>(std::ceil(cx + reach)) + 1;
  const int y1 = static_cast<int>(std::ceil(cy + reach)) + 1;
  BinaryMask m = BinaryMask::zeros(y1 - y0, x1 - x0, CV_8UC1);
  const auto tri = triangle_vertices(shape, cx, cy);
  const double r2 = shape.radius * shape.radius;
  for (int y = y0; y < y1; ++y) {
    auto* row = m.ptr<std::uint8_t>(y - y0);
    const double py = y + 0.5;
    for (int x = x0; x < x1; ++x) {
      const double px = x + 0.5;
      bool in = false;
      if (shape.kind == ShapeKind::Circle) {
        in = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r2;
      } else {
        in = inside_triangle(tri, px, py);
      }
      row[x - x0] = in ? 1 : 0;
    }
  }
  origin = {x0, y0};
  return crop_tight(m, origin);
}

SeedSet extract_seeds(const anno::AnnotatedImage& a, const RenderConfig& cfg, Rng& rng) {
  if (cfg.seeds_per_sample < 1) throw Error(ErrorCode::InvalidConfig, "seeds_per_sample must be >= 1");
  if (!(cfg.seed_scale_lo > 0 && cfg.seed_scale_lo <= cfg.seed_scale_hi && cfg.seed_scale_hi <= 1.0)) {
    throw Error(ErrorCode::InvalidConfig, "seed_scale_range must satisfy 0 < lo <= hi <= 1");
  }
  SeedSet seeds;
  seeds.reserve(a.samples.size() * static_cast<std::size_t>(cfg.seeds_per_sample));
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    const anno::SampleCircle& src = a.samples[i];
    if (src.r < 2.0) {
      throw Error(ErrorCode::SourceTooSmall,
                  "samples[" + std::to_string(i) + "] radius " + std::to_string(src.r) + " px at working resolution");
    }
    for (int j = 0; j < cfg.seeds_per_sample; ++j) {
      const std::size_t global = seeds.size();
      LesionSeed seed;
      seed.source_index = static_cast<int>(i);
      seed.shape.kind = global % 2 == 0 ? ShapeKind::Circle : ShapeKind::Triangle;
      // Both shapes are drawn by their circumscribed radius so any
      // orientation stays inside the source disc.
      seed.shape.radius = uniform(rng, cfg.seed_scale_lo, cfg.seed_scale_hi) * src.r;
      if (seed.shape.kind == ShapeKind::Triangle) {
        seed.shape.side = std::sqrt(3.0) * seed.shape.radius;
        seed.shape.orientation = uniform(rng, 0.0, 2.0 * std::numbers::pi);
      }
      double ox = 0.0;
      double oy = 0.0;
      if (cfg.random_seed_offset) {
        const double slack = std::max(0.0, src.r - seed.shape.radius);
        const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
        const double dist = slack * std::sqrt(uniform(rng, 0.0, 1.0));
        ox = dist * std::cos(angle);
        oy = dist * std::sin(angle);
      }
      seed.cut_cx = src.cx + ox;
      seed.cut_cy = src.cy + oy;

      cv::Point origin;
      seed.mask = rasterize_shape(seed.shape, seed.cut_cx, seed.cut_cy, origin);
      seed.area = seed.mask.empty() ? 0 : popcount(seed.mask);
      if (seed.area < kMinSeedArea) {
        throw Error(ErrorCode::SeedTooSmall, "seed " + std::to_string(global) + " from samples[" + std::to_string(i) +
                                                 "] covers " + std::to_string(seed.area) + " px");
      }
      const cv::Rect box(origin, seed.mask.size());
      if ((box & cv::Rect(0, 0, a.width(), a.height())) != box) {
        throw Error(ErrorCode::SourceTooSmall, "seed footprint leaves the image for samples[" + std::to_string(i) + "]");
      }
      seed.texture = Image::zeros(seed.mask.size(), CV_8UC3);
      a.image(box).copyTo(seed.texture, seed.mask);
      seeds.push_back(std::move(seed));
    }
  }
  return seeds;
}

BinaryMask derive_edge_map(const BinaryMask& mask, int thickness) {
  CV_Assert(mask.type() == CV_8UC1);
  BinaryMask boundary = BinaryMask::zeros(mask.size(), CV_8UC1);
  const int h = mask.rows;
  const int w = mask.cols;
  for (int y = 0; y < h; ++y) {
    const auto* row = mask.ptr<std::uint8_t>(y);
    const auto* up = y > 0 ? mask.ptr<std::uint8_t>(y - 1) : nullptr;
    const auto* down = y + 1 < h ? mask.ptr<std::uint8_t>(y + 1) : nullptr;
    auto* out = boundary.ptr<std::uint8_t>(y);
    for (int x = 0; x < w; ++x) {
      if (!row[x]) continue;
      const bool crosses = x == 0 || !row[x - 1] || x + 1 == w || !row[x + 1] || !up || !up[x] || !down || !down[x];
      out[x] = crosses ? 1 : 0;
    }
  }
  const int r = std::max(0, (thickness - 1) / 2);
  if (r == 0) return boundary;
  BinaryMask edge;
  const cv::Mat kernel = cv::getStructuringElement(cv::MORPH_RECT, {2 * r + 1, 2 * r + 1});
  cv::dilate(boundary, edge, kernel, {-1, -1}, 1, cv::BORDER_CONSTANT, cv::Scalar(0));
  return edge;
}

TrainingSample paste_seeds(const Image& base, const SeedSet& seeds, const RenderConfig& cfg, Rng& rng) {
  if (seeds.empty()) throw Error(ErrorCode::InvalidConfig, "seed set is empty");
  if (size_of(base) != cfg.out_size) throw Error(ErrorCode::ShapeError, "base image must already be at out_size");
  if (cfg.pastes_lo < 1 || cfg.pastes_hi < cfg.pastes_lo) throw Error(ErrorCode::InvalidConfig, "bad pastes_per_image_range");

  TrainingSample sample;
  sample.image = base.clone();
  sample.mask = BinaryMask::zeros(base.size(), CV_8UC1);
  const int pastes = uniform_int(rng, cfg.pastes_lo, cfg.pastes_hi);
  const int max_seed = static_cast<int>(seeds.size()) - 1;

  for (int p = 0; p < pastes; ++p) {
    const int idx = uniform_int(rng, 0, max_seed);
    const LesionSeed& seed = seeds[static_cast<std::size_t>(idx)];
    const int free_x = base.cols - seed.mask.cols;
    const int free_y = base.rows - seed.mask.rows;
    bool placed = false;
    for (int attempt = 0; attempt < cfg.max_paste_attempts && free_x >= 0 && free_y >= 0; ++attempt) {
      const int x = uniform_int(rng, 0, free_x);
      const int y = uniform_int(rng, 0, free_y);
      const cv::Rect box(x, y, seed.mask.cols, seed.mask.rows);
      const cv::Mat occupied = sample.mask(box);
      bool overlap = false;
      for (int r = 0; r < box.height && !overlap; ++r) {
        const auto* o = occupied.ptr<std::uint8_t>(r);
        const auto* m = seed.mask.ptr<std::uint8_t>(r);
        for (int c = 0; c < box.width; ++c) {
          if (o[c] && m[c]) {
            overlap = true;
            break;
          }
        }
      }
      if (overlap) continue;
      seed.texture.copyTo(sample.image(box), seed.mask);
      sample.mask(box).setTo(1, seed.mask);
      sample.placements.push_back({idx, x, y});
      placed = true;
      break;
    }
    if (!placed) ++sample.skipped;
  }
  if (sample.placements.empty()) {
    throw Error(ErrorCode::NoPlacementPossible, "no seed could be placed after " + std::to_string(pastes) + " draws");
  }
  sample.edge = derive_edge_map(sample.mask, cfg.edge_thickness);
  return sample;
}

BinaryMask union_of_placements(const SeedSet& seeds, const std::vector<Placement>& placements, Size2 size) {
  BinaryMask out = BinaryMask::zeros(size.height, size.width, CV_8UC1);
  for (const auto& p : placements) {
    const LesionSeed& seed = seeds.at(static_cast<std::size_t>(p.seed_index));
    out(cv::Rect(p.x, p.y, seed.mask.cols, seed.mask.rows)).setTo(1, seed.mask);
  }
  return out;
}

GeneratedDataset generate_in_memory(const anno::AnnotatedImage& a, const RenderConfig& cfg) {
  if (cfg.K < 1) throw Error(ErrorCode::InvalidConfig, "K must be positive");
  if (cfg.out_size.height <= 0 || cfg.out_size.width <= 0) throw Error(ErrorCode::InvalidConfig, "out_size must be positive");
  const anno::AnnotatedImage working = scale_annotation(a, cfg.out_size);

  GeneratedDataset ds;
  ds.n_samples = static_cast<int>(a.samples.size());
  Rng seed_rng(split_seed(cfg.rng_seed, kSeedStreamTag));
  ds.seeds = extract_seeds(working, cfg, seed_rng);

  const auto n = static_cast<std::size_t>(ds.n_samples);
  const std::size_t m = ds.seeds.size();
  const auto k = static_cast<std::size_t>(cfg.K);
  if (!(n < m && m < k)) {
    throw Error(ErrorCode::InvalidConfig, "need N < M < K, got N=" + std::to_string(n) + " M=" + std::to_string(m) +
                                              " K=" + std::to_string(k));
  }
  if (cfg.ignore_roi) ds.ignore = anno::rasterize_roi(a, cfg.out_size);

  ds.samples.resize(k);
  std::vector<std::string> failures(k);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < cfg.K; ++i) {
    try {
      Rng rng(split_seed(cfg.rng_seed, static_cast<std::uint64_t>(i)));
      ds.samples[static_cast<std::size_t>(i)] = paste_seeds(working.image, ds.seeds, cfg, rng);
    } catch (const Error& e) {
      failures[static_cast<std::size_t>(i)] = e.what();
    }
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (!failures[i].empty()) throw Error(ErrorCode::NoPlacementPossible, "sample " + std::to_string(i) + ": " + failures[i]);
  }
  return ds;
}

namespace {

/// Fingerprint of every input that determines the dataset bytes.
std::string input_fingerprint(const anno::AnnotatedImage& a, const RenderConfig& cfg) {
  const std::vector<std::uint8_t> img = encode_png(a.image);
  return sha256_hex(sha256_hex(img) + serialize_annotation(a) + to_json(cfg));
}

}  // namespace

DatasetManifest generate_dataset(const anno::AnnotatedImage& a, const RenderConfig& cfg, const fs::path& out_dir,
                                 bool force) {
  const std::string fingerprint = input_fingerprint(a, cfg);
  const fs::path manifest_path = out_dir / "manifest.json";
  if (fs::exists(manifest_path) && !force) {
    try {
      std::ifstream in(manifest_path);
      const json existing = json::parse(in);
      if (existing.value("input_fingerprint", "") == fingerprint) return load_manifest(manifest_path);
    } catch (const json::exception&) {
    }
    throw Error(ErrorCode::IoFailure, out_dir.string() + " holds a different dataset; rerun with --force");
  }

  GeneratedDataset ds = generate_in_memory(a, cfg);

  fs::path staging = out_dir;
  staging += ".staging";
  std::error_code ec;
  fs::remove_all(staging, ec);
  for (const char* sub : {"images", "masks", "edges"}) {
    fs::create_directories(staging / sub, ec);
    if (ec) throw Error(ErrorCode::IoFailure, "cannot create " + (staging / sub).string() + ": " + ec.message());
  }

  DatasetManifest manifest;
  manifest.root = out_dir;
  manifest.config = cfg;
  manifest.image_id = a.image_id;
  manifest.n_samples = ds.n_samples;
  manifest.n_seeds = static_cast<int>(ds.seeds.size());
  manifest.samples.resize(ds.samples.size());

  std::vector<std::string> failures(ds.samples.size());
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < static_cast<int>(ds.samples.size()); ++i) {
    const auto& s = ds.samples[static_cast<std::size_t>(i)];
    SampleEntry& e = manifest.samples[static_cast<std::size_t>(i)];
    e.index = i;
    e.image = "images/" + frame_name(i);
    e.mask = "masks/" + frame_name(i);
    e.edge = "edges/" + frame_name(i);
    e.placements = s.placements;
    e.skipped = s.skipped;
    try {
      const auto img = encode_png(s.image);
      const auto msk = encode_png(mask_to_u8(s.mask));
      const auto edg = encode_png(mask_to_u8(s.edge));
      e.image_sha256 = sha256_hex(img);
      e.mask_sha256 = sha256_hex(msk);
      e.edge_sha256 = sha256_hex(edg);
      write_file_atomic(staging / e.image, img);
      write_file_atomic(staging / e.mask, msk);
      write_file_atomic(staging / e.edge, edg);
    } catch (const Error& err) {
      failures[static_cast<std::size_t>(i)] = err.what();
    }
  }
  for (std::size_t i = 0; i < failures.size(); ++i) {
    if (!failures[i].empty()) throw Error(ErrorCode::IoFailure, "sample " + std::to_string(i) + ": " + failures[i]);
  }

  if (!ds.ignore.empty()) {
    const auto bytes = encode_png(mask_to_u8(ds.ignore));
    manifest.ignore = "ignore.png";
    manifest.ignore_sha256 = sha256_hex(bytes);
    write_file_atomic(staging / "ignore.png", bytes);
  }

  json seeds = json::array();
  for (const auto& s : ds.seeds) {
    seeds.push_back({{"source", s.source_index},
                     {"shape", kind_name(s.shape.kind)},
                     {"radius", s.shape.radius},
                     {"side", s.shape.side},
                     {"orientation", s.shape.orientation},
                     {"cx", s.cut_cx},
                     {"cy", s.cut_cy},
                     {"width", s.mask.cols},
                     {"height", s.mask.rows},
                     {"area", s.area}});
  }
  json samples = json::array();
  for (const auto& e : manifest.samples) {
    samples.push_back({{"index", e.index},
                       {"image", e.image},
                       {"mask", e.mask},
                       {"edge", e.edge},
                       {"placements", placements_to_json(e.placements)},
                       {"skipped", e.skipped},
                       {"sha256", {{"image", e.image_sha256}, {"mask", e.mask_sha256}, {"edge", e.edge_sha256}}}});
  }
  const json doc{{"format", "yoho-dataset/1"},
                 {"image_id", a.image_id},
                 {"annotation", json::parse(serialize_annotation(a))},
                 {"input_fingerprint", fingerprint},
                 {"config", json::parse(to_json(cfg))},
                 {"rng_seed", cfg.rng_seed},
                 {"N", manifest.n_samples},
                 {"M", manifest.n_seeds},
                 {"K", manifest.K()},
                 {"ignore", manifest.ignore ? json(*manifest.ignore) : json(nullptr)},
                 {"ignore_sha256", manifest.ignore_sha256},
                 {"seeds", seeds},
                 {"samples", samples}};
  const std::string text = doc.dump(1);
  manifest.manifest_sha256 = sha256_hex(text);
  write_file_atomic(staging / "manifest.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));

  fs::remove_all(out_dir, ec);
  if (out_dir.has_parent_path()) fs::create_directories(out_dir.parent_path(), ec);
  fs::rename(staging, out_dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot move dataset into " + out_dir.string() + ": " + ec.message());
  return manifest;
}

DatasetManifest load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open manifest " + manifest_path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  DatasetManifest m;
  try {
    const json doc = json::parse(text);
    m.root = manifest_path.parent_path();
    m.config = render_config_from_json(doc.at("config").dump());
    m.image_id = doc.at("image_id").get<std::string>();
    m.n_samples = doc.at("N").get<int>();
    m.n_seeds = doc.at("M").get<int>();
    if (!doc.at("ignore").is_null()) m.ignore = doc.at("ignore").get<std::string>();
    m.ignore_sha256 = doc.value("ignore_sha256", "");
    for (const auto& js : doc.at("samples")) {
      SampleEntry e;
      e.index = js.at("index").get<int>();
      e.image = js.at("image").get<std::string>();
      e.mask = js.at("mask").get<std::string>();
      e.edge = js.at("edge").get<std::string>();
      e.skipped = js.at("skipped").get<int>();
      for (const auto& p : js.at("placements")) {
        e.placements.push_back({p.at("seed").get<int>(), p.at("x").get<int>(), p.at("y").get<int>()});
      }
      e.image_sha256 = js.at("sha256").at("image").get<std::string>();
      e.mask_sha256 = js.at("sha256").at("mask").get<std::string>();
      e.edge_sha256 = js.at("sha256").at("edge").get<std::string>();
      m.samples.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::IoFailure, "malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  m.manifest_sha256 = sha256_hex(text);
  return m;
}

}  // namespace yoho::render
