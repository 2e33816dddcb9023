#include "rcnn/checkpoint.hpp"

#include "rcnn/io.hpp"

namespace rcnn {

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params) {
  const ArchitectureSpec& s = params.spec;
  ByteWriter w;
  w.put_bytes("RCNN", 4);
  w.put(kCheckpointVersion);
  w.put_string(s.name);
  w.put(static_cast<std::uint8_t>(s.lateral));
  w.put(static_cast<std::uint8_t>(s.topdown));
  for (int v : {s.kernel, s.features, s.time_steps, s.in_channels, s.classes}) {
    w.put(static_cast<std::uint16_t>(v));
  }
  for_each_trainable(params, [&](const std::string&, const Tensor& t, ParamRole) {
    for (Index i = 0; i < t.size(); ++i) w.put_f32(t[i]);
  });
  for (const auto& layer : params.layers) {
    for (const auto& r : layer.running) {
      w.put(static_cast<std::uint8_t>(r.initialized));
      for (Index k = 0; k < s.features; ++k) w.put_f32(r.initialized ? r.mean[k] : 0.0f);
      for (Index k = 0; k < s.features; ++k) w.put_f32(r.initialized ? r.var[k] : 0.0f);
    }
  }
  w.put(crc32(w.bytes().data(), w.bytes().size()));
  atomic_write(path, [&](std::ostream& out) {
    out.write(w.bytes().data(), std::streamsize(w.bytes().size()));
  });
}

ModelParams<float> load_checkpoint(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 10) throw DataError("checkpoint " + path.string() + ": truncated");
  ByteReader tail(bytes.data() + bytes.size() - 4, 4, "checkpoint");
  if (tail.get<std::uint32_t>() != crc32(bytes.data(), bytes.size() - 4)) {
    throw DataError("checkpoint " + path.string() + ": checksum failure");
  }
  ByteReader r(bytes.data(), bytes.size() - 4, "checkpoint " + path.string());
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::string(magic, 4) != "RCNN") throw DataError("checkpoint: bad magic");
  if (r.get<std::uint16_t>() != kCheckpointVersion) throw DataError("checkpoint: version mismatch");

  ArchitectureSpec s;
  s.name = r.get_string();
  s.lateral = r.get<std::uint8_t>() != 0;
  s.topdown = r.get<std::uint8_t>() != 0;
  s.kernel = r.get<std::uint16_t>();
  s.features = r.get<std::uint16_t>();
  s.time_steps = r.get<std::uint16_t>();
  s.in_channels = r.get<std::uint16_t>();
  s.classes = r.get<std::uint16_t>();
  try {
    s.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(std::string("checkpoint: invalid architecture: ") + e.what());
  }

  ModelParams<float> p = build<float>(s, 0);
  for_each_trainable(p, [&](const std::string&, Tensor& t, ParamRole) {
    for (Index i = 0; i < t.size(); ++i) t[i] = r.get_f32();
  });
  for (auto& layer : p.layers) {
    for (auto& rs : layer.running) {
      rs.initialized = r.get<std::uint8_t>() != 0;
      rs.mean.resize(s.features);
      rs.var.resize(s.features);
      for (Index k = 0; k < s.features; ++k) rs.mean[k] = r.get_f32();
      for (Index k = 0; k < s.features; ++k) rs.var[k] = r.get_f32();
      if (!rs.initialized) {
        rs.mean.resize(0);
        rs.var.resize(0);
      }
    }
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return p;
}

}  // namespace rcnn
