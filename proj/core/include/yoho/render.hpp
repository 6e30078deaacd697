#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "yoho/annotation.hpp"
#include "yoho/image.hpp"

namespace yoho::render {

using Rng = std::mt19937_64;

/// Generation hyper-parameters. Defaults produce the 1600-image, 256x256
/// training set; the remaining values are ours.
struct RenderConfig {
  int K = 1600;
  int seeds_per_sample = 16;
  double seed_scale_lo = 0.4;  // fraction of the source radius
  double seed_scale_hi = 1.0;
  int pastes_lo = 2;
  int pastes_hi = 6;
  int edge_thickness = 3;
  Size2 out_size{256, 256};
  int max_paste_attempts = 50;
  std::uint64_t rng_seed = 20230501;
  /// Off pins every seed at its source circle's center (used by tests).
  bool random_seed_offset = true;
  /// Exclude the sketched region (minus pasted seeds) from the losses.
  bool ignore_roi = true;

  friend bool operator==(const RenderConfig&, const RenderConfig&) = default;
};

enum class ShapeKind { Circle, Triangle };

struct SeedShape {
  ShapeKind kind = ShapeKind::Circle;
  double radius = 0.0;       // circle radius, or triangle circumradius
  double side = 0.0;         // triangles only
  double orientation = 0.0;  // triangles only, radians in [0, 2pi)
};

/// A circle or equilateral triangle of texture cut from one sample circle.
/// `texture` and `mask` share the patch size; texture is zero off-mask.
struct LesionSeed {
  SeedShape shape;
  Image texture;
  BinaryMask mask;
  int source_index = 0;
  double cut_cx = 0.0;  // shape center in the working image
  double cut_cy = 0.0;
  std::size_t area = 0;
};

using SeedSet = std::vector<LesionSeed>;

/// Top-left corner of a pasted seed patch.
struct Placement {
  int seed_index = 0;
  int x = 0;
  int y = 0;

  friend bool operator==(const Placement&, const Placement&) = default;
};

struct TrainingSample {
  Image image;
  BinaryMask mask;
  BinaryMask edge;
  std::vector<Placement> placements;
  int skipped = 0;
};

/// Scales the annotation and its image to the working resolution. Circle
/// radii scale by min(sx, sy) so each scaled disc stays inside its source.
anno::AnnotatedImage scale_annotation(const anno::AnnotatedImage& a, Size2 size);

/// Cuts seeds_per_sample seeds from every sample circle of `a`, alternating
/// circle/triangle by global seed index. `a` is used at its own resolution.
SeedSet extract_seeds(const anno::AnnotatedImage& a, const RenderConfig& cfg, Rng& rng);

/// Rasterizes one shape centered at (cx, cy) into a tight patch; returns the
/// patch origin through `origin`.
BinaryMask rasterize_shape(const SeedShape& shape, double cx, double cy, cv::Point& origin);

TrainingSample paste_seeds(const Image& base, const SeedSet& seeds, const RenderConfig& cfg, Rng& rng);

/// Boundary pixels are foreground pixels with a 4-neighbour that is background
/// or outside the frame; the band is dilated by (thickness-1)/2 (Chebyshev).
BinaryMask derive_edge_map(const BinaryMask& mask, int thickness);

/// Rebuilds a sample mask from its placement log.
BinaryMask union_of_placements(const SeedSet& seeds, const std::vector<Placement>& placements, Size2 size);

struct SampleEntry {
  int index = 0;
  std::string image;  // paths relative to the dataset root
  std::string mask;
  std::string edge;
  std::vector<Placement> placements;
  int skipped = 0;
  std::string image_sha256;
  std::string mask_sha256;
  std::string edge_sha256;
};

struct DatasetManifest {
  std::filesystem::path root;
  RenderConfig config;
  std::string image_id;
  int n_samples = 0;  // N
  int n_seeds = 0;    // M
  std::vector<SampleEntry> samples;
  std::optional<std::string> ignore;  // relative path of ignore.png
  std::string ignore_sha256;
  /// SHA-256 over the manifest document as written.
  std::string manifest_sha256;

  int K() const { return static_cast<int>(samples.size()); }
};

/// In-memory generation: the seed set plus K samples, no I/O.
struct GeneratedDataset {
  SeedSet seeds;
  std::vector<TrainingSample> samples;
  BinaryMask ignore;  // empty when ignore_roi is off
  int n_samples = 0;
};

GeneratedDataset generate_in_memory(const anno::AnnotatedImage& a, const RenderConfig& cfg);

/// Writes images/, masks/, edges/, ignore.png and manifest.json under
/// `out_dir`. An existing dataset with identical inputs is reused; a
/// different one is only replaced when `force` is set.
DatasetManifest generate_dataset(const anno::AnnotatedImage& a, const RenderConfig& cfg,
                                 const std::filesystem::path& out_dir, bool force = false);

DatasetManifest load_manifest(const std::filesystem::path& manifest_path);

/// Stream tag used to derive the seed-extraction RNG from the master seed.
inline constexpr std::uint64_t kSeedStreamTag = 0xffffffffffffffffULL;

}  // namespace yoho::render
