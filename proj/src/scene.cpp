#include "rcnn/scene.hpp"

#include "rcnn/io.hpp"

#include <algorithm>
#include <cmath>

namespace rcnn {

namespace {

std::uint32_t read_be32(const std::string& bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    v = (v << 8) | static_cast<unsigned char>(bytes[offset + i]);
  }
  return v;
}

constexpr std::uint32_t kImageMagic = 2051;
constexpr std::uint32_t kLabelMagic = 2049;

// Horizontal and vertical offsets from the canvas centre, in pixels. Kept
// sign-symmetric so that mirrored scenes render as exact mirror images.
double offset_u(const CameraRig& rig, Eye eye, double x, double z) {
  const double ex = eye == Eye::Left ? -rig.interocular / 2 : rig.interocular / 2;
  return rig.focal_px * ((x - ex) / z + ex / rig.target_depth);
}

double offset_v(const CameraRig& rig, double y, double z) {
  return rig.focal_px * (rig.centre_height() / rig.target_depth - y / z);
}

struct AxisSample {
  Index i0 = 0;
  Index i1 = 0;
  double frac = 0;
};

// Bilinear tap along one axis for position p measured from the sprite
// centre in sprite pixels. Negative positions are evaluated as the mirror
// of |p| so the result does not depend on the sign convention.
AxisSample axis_sample(double p, Index n) {
  double x = std::abs(p) + (0.5 * double(n) - 0.5);
  x = std::min(x, double(n - 1));
  AxisSample s;
  s.i0 = static_cast<Index>(std::floor(x));
  s.frac = x - double(s.i0);
  s.i1 = std::min(s.i0 + 1, n - 1);
  if (p < 0) {
    s.i0 = n - 1 - s.i0;
    s.i1 = n - 1 - s.i1;
  }
  return s;
}

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::round(v), 0.0, 255.0));
}

}  // namespace

const Image& SpriteSet::at(int label, int index) const {
  if (label < 0 || label >= classes() || index < 0 ||
      index >= static_cast<int>(by_class[std::size_t(label)].size())) {
    throw std::out_of_range("sprite index out of range: class " + std::to_string(label) +
                            " index " + std::to_string(index));
  }
  return images[std::size_t(by_class[std::size_t(label)][std::size_t(index)])];
}

void SpriteSet::add(const Image& image, int label) {
  if (label < 0) throw std::invalid_argument("negative sprite label");
  if (images.empty()) {
    width = image.cols();
    height = image.rows();
  } else if (image.cols() != width || image.rows() != height) {
    throw ShapeError("sprite size mismatch");
  }
  if (by_class.size() <= std::size_t(label)) by_class.resize(std::size_t(label) + 1);
  by_class[std::size_t(label)].push_back(static_cast<int>(images.size()));
  images.push_back(image);
  labels.push_back(label);
}

SpriteSet SpriteSet::head(std::size_t n) const {
  SpriteSet out;
  out.source = source;
  for (std::size_t i = 0; i < std::min(n, size()); ++i) out.add(images[i], labels[i]);
  out.by_class.resize(std::max(out.by_class.size(), by_class.size()));
  return out;
}

void SpriteSet::validate() const {
  if (images.empty()) throw DataError("sprite set is empty");
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    if (by_class[c].empty()) throw DataError("sprite set has no sprites of class " + std::to_string(c));
  }
}

SpriteSet load_idx(const std::filesystem::path& images_path,
                   const std::filesystem::path& labels_path) {
  const std::string img = read_file(images_path);
  const std::string lab = read_file(labels_path);

  if (img.size() < 16) throw DataError(images_path.string() + ": truncated header");
  if (read_be32(img, 0) != kImageMagic) throw DataError(images_path.string() + ": bad magic");
  if (lab.size() < 8) throw DataError(labels_path.string() + ": truncated header");
  if (read_be32(lab, 0) != kLabelMagic) throw DataError(labels_path.string() + ": bad magic");

  const std::size_t count = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  const std::size_t label_count = read_be32(lab, 4);
  if (count != label_count) {
    throw DataError("count mismatch: " + std::to_string(count) + " images vs " +
                    std::to_string(label_count) + " labels");
  }
  if (img.size() < 16 + count * rows * cols) throw DataError(images_path.string() + ": truncated payload");
  if (lab.size() < 8 + count) throw DataError(labels_path.string() + ": truncated payload");

  SpriteSet set;
  set.source = images_path.filename().string();
  const auto* pixels = reinterpret_cast<const std::uint8_t*>(img.data() + 16);
  for (std::size_t i = 0; i < count; ++i) {
    Image sprite = Eigen::Map<const Image>(pixels + i * rows * cols, Index(rows), Index(cols));
    set.add(sprite, static_cast<unsigned char>(lab[8 + i]));
  }
  return set;
}

void CameraRig::validate(int occluders) const {
  if (!(interocular >= 0)) throw std::invalid_argument("interocular distance must be >= 0");
  if (!(focal_px > 0)) throw std::invalid_argument("focal_px must be > 0");
  if (!(object_height > 0)) throw std::invalid_argument("object_height must be > 0");
  if (!(target_depth > occluders * depth_step) || !(depth_step >= 0)) {
    throw std::invalid_argument("target_depth must exceed occluders * depth_step");
  }
  if (width <= 0 || height <= 0) throw std::invalid_argument("canvas must be non-empty");
}

PixelPoint project(const CameraRig& rig, Eye eye, double x, double y, double z) {
  if (!(z > 0)) throw std::invalid_argument("project: depth must be > 0");
  return {0.5 * double(rig.width) + offset_u(rig, eye, x, z),
          0.5 * double(rig.height) + offset_v(rig, y, z)};
}

void SceneSpec::validate(const SpriteSet& sprites) const {
  sprites.at(target.label, target.index);
  std::vector<int> seen{target.label};
  for (const Occluder& o : occluders) {
    sprites.at(o.sprite.label, o.sprite.index);
    if (std::find(seen.begin(), seen.end(), o.sprite.label) != seen.end()) {
      throw std::invalid_argument("scene repeats class " + std::to_string(o.sprite.label));
    }
    seen.push_back(o.sprite.label);
  }
}

SceneSpec SceneSpec::mirrored() const {
  SceneSpec m = *this;
  for (Occluder& o : m.occluders) o.world_x = -o.world_x;
  return m;
}

EyeRender render_eye(const CameraRig& rig, Eye eye, const SceneSpec& spec, const SpriteSet& sprites) {
  EyeRender r;
  r.image = Image::Zero(rig.height, rig.width);

  auto paint = [&](const Image& sprite, double world_x, double z) {
    Image mask = Image::Zero(rig.height, rig.width);
    const double half_w = 0.5 * rig.object_height * double(sprite.cols()) / double(sprite.rows());
    const double y_bottom = -rig.eye_height_above_plane;
    const double y_top = y_bottom + rig.object_height;
    const double a0 = offset_u(rig, eye, world_x - half_w, z);
    const double a1 = offset_u(rig, eye, world_x + half_w, z);
    const double ac = offset_u(rig, eye, world_x, z);
    const double b0 = offset_v(rig, y_top, z);
    const double b1 = offset_v(rig, y_bottom, z);
    const double bc = offset_v(rig, 0.5 * (y_top + y_bottom), z);

    for (Index i = 0; i < rig.height; ++i) {
      const double cy = double(i) + 0.5 - 0.5 * double(rig.height);
      if (cy < b0 || cy > b1) continue;
      const AxisSample sy = axis_sample((cy - bc) / (b1 - b0) * double(sprite.rows()), sprite.rows());
      for (Index j = 0; j < rig.width; ++j) {
        const double cx = double(j) + 0.5 - 0.5 * double(rig.width);
        if (cx < a0 || cx > a1) continue;
        const AxisSample sx = axis_sample((cx - ac) / (a1 - a0) * double(sprite.cols()), sprite.cols());
        const double top = (1 - sx.frac) * sprite(sy.i0, sx.i0) + sx.frac * sprite(sy.i0, sx.i1);
        const double bottom = (1 - sx.frac) * sprite(sy.i1, sx.i0) + sx.frac * sprite(sy.i1, sx.i1);
        const std::uint8_t v = to_byte((1 - sy.frac) * top + sy.frac * bottom);
        if (v > 0) {
          r.image(i, j) = v;
          mask(i, j) = 1;
        }
      }
    }
    r.masks.push_back(std::move(mask));
  };

  paint(sprites.at(spec.target.label, spec.target.index), 0.0, rig.target_depth);
  for (std::size_t k = 0; k < spec.occluders.size(); ++k) {
    const Occluder& o = spec.occluders[k];
    paint(sprites.at(o.sprite.label, o.sprite.index), o.world_x, rig.depth_of(int(k) + 1));
  }
  return r;
}

double occluded_fraction(const EyeRender& render) {
  const Image& target = render.masks.front();
  std::int64_t total = 0;
  std::int64_t covered = 0;
  for (Index i = 0; i < target.rows(); ++i) {
    for (Index j = 0; j < target.cols(); ++j) {
      if (!target(i, j)) continue;
      ++total;
      for (std::size_t k = 1; k < render.masks.size(); ++k) {
        if (render.masks[k](i, j)) {
          ++covered;
          break;
        }
      }
    }
  }
  return total == 0 ? 0.0 : double(covered) / double(total);
}

StereoSample render_scene(const CameraRig& rig, const SceneSpec& spec, const SpriteSet& sprites) {
  rig.validate(static_cast<int>(spec.occluders.size()));
  spec.validate(sprites);
  EyeRender left = render_eye(rig, Eye::Left, spec, sprites);
  EyeRender right = render_eye(rig, Eye::Right, spec, sprites);
  StereoSample s;
  s.label = spec.target.label;
  s.seed = spec.seed;
  s.occlusion_pct = static_cast<float>(0.5 * (occluded_fraction(left) + occluded_fraction(right)));
  s.left = std::move(left.image);
  s.right = std::move(right.image);
  return s;
}

double occluder_x_limit(const CameraRig& rig, double z) {
  return 0.5 * double(rig.width) * z / rig.focal_px;
}

SceneSpec draw_scene(const CameraRig& rig, const SpriteSet& sprites, SpriteRef target,
                     std::uint64_t seed, int occluders) {
  std::vector<int> pool;
  for (int c = 0; c < sprites.classes(); ++c) {
    if (c != target.label && !sprites.by_class[std::size_t(c)].empty()) pool.push_back(c);
  }
  if (occluders < 0 || std::size_t(occluders) > pool.size()) {
    throw std::invalid_argument("not enough distinct classes for " + std::to_string(occluders) +
                                " occluders");
  }
  Rng rng(seed);
  SceneSpec spec;
  spec.target = target;
  spec.seed = seed;
  for (int k = 0; k < occluders; ++k) {
    const std::size_t pick = rng.below(pool.size());
    const int label = pool[pick];
    pool.erase(pool.begin() + std::ptrdiff_t(pick));
    const auto n = sprites.by_class[std::size_t(label)].size();
    const int index = static_cast<int>(rng.below(n));
    const double limit = occluder_x_limit(rig, rig.depth_of(k + 1));
    spec.occluders.push_back({{label, index}, rng.uniform(-limit, limit)});
  }
  return spec;
}

void generate_dataset(const CameraRig& rig, const SpriteSet& sprites, const GenerateOptions& options,
                      const std::function<void(const StereoSample&)>& sink) {
  sprites.validate();
  rig.validate(options.occluders);
  if (options.combos_per_digit < 0) throw std::invalid_argument("combos_per_digit must be >= 0");
  std::vector<int> rank(sprites.by_class.size(), 0);
  for (std::size_t d = 0; d < sprites.size(); ++d) {
    const int label = sprites.labels[d];
    const SpriteRef target{label, rank[std::size_t(label)]++};
    for (int k = 0; k < options.combos_per_digit; ++k) {
      const std::uint64_t seed = scene_seed(options.master_seed, d, std::uint64_t(k));
      sink(render_scene(rig, draw_scene(rig, sprites, target, seed, options.occluders), sprites));
    }
  }
}

std::vector<StereoSample> generate_dataset(const CameraRig& rig, const SpriteSet& sprites,
                                           const GenerateOptions& options) {
  std::vector<StereoSample> out;
  out.reserve(sprites.size() * std::size_t(std::max(options.combos_per_digit, 0)));
  generate_dataset(rig, sprites, options, [&](const StereoSample& s) { out.push_back(s); });
  return out;
}

void write_dataset(const std::filesystem::path& path, const std::vector<StereoSample>& samples,
                   Index width, Index height) {
  if (width <= 0 || height <= 0 || width > 0xFFFF || height > 0xFFFF) {
    throw std::invalid_argument("write_dataset: bad canvas size");
  }
  atomic_write(path, [&](std::ostream& out) {
    ByteWriter w;
    w.put_bytes("OSMN", 4);
    w.put(kDatasetVersion);
    w.put(static_cast<std::uint64_t>(samples.size()));
    w.put(static_cast<std::uint16_t>(width));
    w.put(static_cast<std::uint16_t>(height));
    w.put(static_cast<std::uint16_t>(kDatasetChannels));
    out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    for (const StereoSample& s : samples) {
      if (s.left.rows() != height || s.left.cols() != width || s.right.rows() != height ||
          s.right.cols() != width) {
        throw ShapeError("write_dataset: sample image size differs from header");
      }
      w.clear();
      w.put(s.seed);
      w.put(static_cast<std::uint16_t>(s.label));
      w.put_f32(s.occlusion_pct);
      w.put_bytes(s.left.data(), std::size_t(s.left.size()));
      w.put_bytes(s.right.data(), std::size_t(s.right.size()));
      w.put(crc32(w.bytes().data(), w.bytes().size()));
      out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
    }
  });
}

namespace {

DatasetHeader parse_header(ByteReader& r) {
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "OSMN") throw DataError("dataset: bad magic");
  DatasetHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kDatasetVersion) {
    throw DataError("dataset: version mismatch (file " + std::to_string(h.version) + ", expected " +
                    std::to_string(kDatasetVersion) + ")");
  }
  h.count = r.get<std::uint64_t>();
  h.width = r.get<std::uint16_t>();
  h.height = r.get<std::uint16_t>();
  h.channels = r.get<std::uint16_t>();
  if (h.channels != kDatasetChannels) throw DataError("dataset: unsupported channel count");
  return h;
}

}  // namespace

DatasetHeader read_dataset_header(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  char buf[20];
  in.read(buf, sizeof buf);
  ByteReader r(buf, std::size_t(in.gcount()), "dataset header");
  return parse_header(r);
}

std::vector<StereoSample> read_dataset(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  ByteReader r(bytes.data(), bytes.size(), "dataset " + path.filename().string());
  const DatasetHeader h = parse_header(r);
  const std::size_t plane = std::size_t(h.width * h.height);
  const std::size_t record = 8 + 2 + 4 + 2 * plane;
  if (r.remaining() / (record + 4) < h.count) {
    throw DataError("dataset: truncated (header says " + std::to_string(h.count) + " records, file holds " +
                    std::to_string(r.remaining() / (record + 4)) + ")");
  }
  std::vector<StereoSample> out;
  out.reserve(h.count);
  for (std::uint64_t k = 0; k < h.count; ++k) {
    const char* start = bytes.data() + r.position();
    StereoSample s;
    s.seed = r.get<std::uint64_t>();
    s.label = r.get<std::uint16_t>();
    s.occlusion_pct = r.get_f32();
    s.left.resize(h.height, h.width);
    s.right.resize(h.height, h.width);
    r.get_bytes(s.left.data(), plane);
    r.get_bytes(s.right.data(), plane);
    if (r.get<std::uint32_t>() != crc32(start, record)) {
      throw DataError("dataset: checksum failure at record " + std::to_string(k));
    }
    out.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw DataError("dataset: trailing bytes after last record");
  return out;
}

std::filesystem::path manifest_path(const std::filesystem::path& dataset) {
  return dataset.string() + ".manifest";
}

void write_dataset_manifest(const std::filesystem::path& dataset, const CameraRig& rig,
                            const GenerateOptions& options, const std::string& source,
                            std::uint64_t count) {
  KeyValues kv;
  kv["format"] = "OSMN";
  kv["version"] = std::to_string(kDatasetVersion);
  kv["records"] = std::to_string(count);
  kv["source"] = source;
  kv["master_seed"] = std::to_string(options.master_seed);
  kv["combos_per_digit"] = std::to_string(options.combos_per_digit);
  kv["occluders"] = std::to_string(options.occluders);
  kv["interocular_cm"] = format_number(rig.interocular);
  kv["target_depth_cm"] = format_number(rig.target_depth);
  kv["depth_step_cm"] = format_number(rig.depth_step);
  kv["eye_height_above_plane_cm"] = format_number(rig.eye_height_above_plane);
  kv["object_height_cm"] = format_number(rig.object_height);
  kv["focal_px"] = format_number(rig.focal_px);
  kv["canvas"] = std::to_string(rig.width) + "x" + std::to_string(rig.height);
  kv["seed_rule"] = "mix64(mix64(master ^ mix64(digit)) ^ combo), mix64 = SplitMix64 finalizer";
  kv["adler32"] = std::to_string(file_adler32(dataset));
  write_key_values(manifest_path(dataset), kv);
}

}  // namespace rcnn
