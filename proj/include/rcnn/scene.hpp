#pragma once

#include "rcnn/random.hpp"
#include "rcnn/tensor.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rcnn {

using Image = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Grayscale sprites grouped by class, plus the order they were read in.
struct SpriteSet {
  std::string source;
  Index width = 0;
  Index height = 0;
  std::vector<Image> images;               // file order
  std::vector<int> labels;                 // file order
  std::vector<std::vector<int>> by_class;  // indices into images

  std::size_t size() const { return images.size(); }
  int classes() const { return static_cast<int>(by_class.size()); }
  const Image& at(int label, int index) const;

  void add(const Image& image, int label);
  /// First `n` sprites in file order.
  SpriteSet head(std::size_t n) const;
  void validate() const;
};

/// Reads an IDX image/label pair (magics 2051 and 2049).
SpriteSet load_idx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path);

/// Lengths in centimetres. Eyes sit at (-interocular/2, 0, 0) and
/// (+interocular/2, 0, 0) looking along +Z, y up.
struct CameraRig {
  double interocular = 6.8;
  double target_depth = 50;
  double depth_step = 10;
  double eye_height_above_plane = 5;
  double object_height = 20;
  double focal_px = 60;
  Index width = 32;
  Index height = 32;

  void validate(int occluders = 0) const;
  double depth_of(int layer) const { return target_depth - layer * depth_step; }
  /// Height of the object centre relative to the eye line.
  double centre_height() const { return object_height / 2 - eye_height_above_plane; }
};

enum class Eye { Left, Right };

struct PixelPoint {
  double u = 0;
  double v = 0;
};

/// Pinhole projection with per-eye vergence so the target centre
/// (0, centre_height, target_depth) lands on the canvas centre in both eyes.
PixelPoint project(const CameraRig& rig, Eye eye, double x, double y, double z);

struct SpriteRef {
  int label = 0;
  int index = 0;  // position within the class
};

struct Occluder {
  SpriteRef sprite;
  double world_x = 0;
};

struct SceneSpec {
  SpriteRef target;
  std::vector<Occluder> occluders;  // far to near
  std::uint64_t seed = 0;

  void validate(const SpriteSet& sprites) const;
  SceneSpec mirrored() const;
};

struct StereoSample {
  Image left;
  Image right;
  int label = 0;
  float occlusion_pct = 0;
  std::uint64_t seed = 0;

  const Image& eye(Eye e) const { return e == Eye::Left ? left : right; }
};

/// One eye's composite with the per-object masks used for occlusion counting.
struct EyeRender {
  Image image;
  std::vector<Image> masks;  // 0/1 per object, target first
};

EyeRender render_eye(const CameraRig& rig, Eye eye, const SceneSpec& spec, const SpriteSet& sprites);

/// Fraction of target mask pixels covered by any nearer mask (0 if the
/// target is not visible on the canvas at all).
double occluded_fraction(const EyeRender& render);

StereoSample render_scene(const CameraRig& rig, const SceneSpec& spec, const SpriteSet& sprites);

/// Admissible occluder x at depth z: sprite centre inside the canvas
/// horizontally for the cyclopean eye.
double occluder_x_limit(const CameraRig& rig, double z);

/// Draws occluder classes (distinct, different from the target), sprite
/// instances and positions from `seed`.
SceneSpec draw_scene(const CameraRig& rig, const SpriteSet& sprites, SpriteRef target,
                     std::uint64_t seed, int occluders = 2);

struct GenerateOptions {
  int combos_per_digit = 10;
  int occluders = 2;
  std::uint64_t master_seed = 0;
};

/// Renders combos_per_digit scenes per sprite (digit-major order) and hands
/// each to `sink`. Scene k of digit d uses scene_seed(master, d, k).
void generate_dataset(const CameraRig& rig, const SpriteSet& sprites, const GenerateOptions& options,
                      const std::function<void(const StereoSample&)>& sink);

std::vector<StereoSample> generate_dataset(const CameraRig& rig, const SpriteSet& sprites,
                                           const GenerateOptions& options);

inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr Index kDatasetChannels = 2;

struct DatasetHeader {
  std::uint16_t version = kDatasetVersion;
  std::uint64_t count = 0;
  Index width = 0;
  Index height = 0;
  Index channels = kDatasetChannels;
};

/// Writes "OSMN" files: header {magic, version u16, count u64, width u16,
/// height u16, channels u16}, then per record {seed u64, label u16,
/// occlusion f32, left bytes, right bytes, crc32 u32}, little-endian. The
/// record CRC covers the record bytes before it.
void write_dataset(const std::filesystem::path& path, const std::vector<StereoSample>& samples,
                   Index width = 32, Index height = 32);

DatasetHeader read_dataset_header(const std::filesystem::path& path);
std::vector<StereoSample> read_dataset(const std::filesystem::path& path);

/// Sidecar "<path>.manifest" with rig parameters and seed.
std::filesystem::path manifest_path(const std::filesystem::path& dataset);
void write_dataset_manifest(const std::filesystem::path& dataset, const CameraRig& rig,
                            const GenerateOptions& options, const std::string& source,
                            std::uint64_t count);

}  // namespace rcnn
