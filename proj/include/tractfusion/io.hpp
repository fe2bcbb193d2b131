#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "tractfusion/common.hpp"
#include "tractfusion/nn.hpp"
#include "tractfusion/streamline.hpp"
#include "tractfusion/voxel_grid.hpp"

namespace tractfusion {
namespace io {

using nlohmann::json;

static_assert(sizeof(double) == 8 && sizeof(float) == 4, "unexpected float sizes");

namespace detail {

template <typename T>
inline T byteswap_if_big(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    T out;
    auto* src = reinterpret_cast<const unsigned char*>(&v);
    auto* dst = reinterpret_cast<unsigned char*>(&out);
    for (size_t i = 0; i < sizeof(T); ++i) dst[i] = src[sizeof(T) - 1 - i];
    return out;
  }
}

inline std::ifstream open_in(const std::string& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream f(path, mode);
  if (!f) throw DataError("cannot open for reading: " + path);
  return f;
}

inline std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream f(path, mode);
  if (!f) throw DataError("cannot open for writing: " + path);
  return f;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Streamline dataset: JSON Lines, one object per line
//   {"id": int, "points": [[x,y,z],...], "label": int|null}
// ---------------------------------------------------------------------------

inline void write_streamlines_jsonl(const std::string& path, const std::vector<Streamline>& bundle) {
  auto f = detail::open_out(path);
  for (const auto& s : bundle) {
    json pts = json::array();
    for (const auto& p : s.points) pts.push_back({p.x, p.y, p.z});
    json line = {{"id", s.id}, {"points", std::move(pts)}, {"label", nullptr}};
    if (s.label) line["label"] = *s.label;
    f << line.dump() << "\n";
  }
  if (!f) throw DataError("write failed: " + path);
}

inline std::vector<Streamline> read_streamlines_jsonl(const std::string& path) {
  auto f = detail::open_in(path);
  std::vector<Streamline> bundle;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": invalid JSON: " + e.what());
    }
    Streamline s;
    if (!j.contains("id") || !j["id"].is_number_integer()) throw DataError(path + ":" + std::to_string(lineno) + ": missing integer id");
    s.id = j["id"].get<int64_t>();
    if (!j.contains("points") || !j["points"].is_array() || j["points"].size() < 2)
      throw DataError(path + ":" + std::to_string(lineno) + ": points must be an array of at least 2 coordinates");
    for (const auto& p : j["points"]) {
      if (!p.is_array() || p.size() != 3 || !p[0].is_number() || !p[1].is_number() || !p[2].is_number())
        throw DataError(path + ":" + std::to_string(lineno) + ": each point must be [x,y,z]");
      Vec3 v{p[0].get<double>(), p[1].get<double>(), p[2].get<double>()};
      if (!v.finite()) throw DataError(path + ":" + std::to_string(lineno) + ": non-finite coordinate");
      s.points.push_back(v);
    }
    if (j.contains("label") && !j["label"].is_null()) {
      if (!j["label"].is_number_integer()) throw DataError(path + ":" + std::to_string(lineno) + ": label must be an integer or null");
      const int lab = j["label"].get<int>();
      if (lab < 0 || lab >= kNumClasses) throw DataError(path + ":" + std::to_string(lineno) + ": label out of range");
      s.label = lab;
    }
    bundle.push_back(std::move(s));
  }
  return bundle;
}

// ---------------------------------------------------------------------------
// Voxel grid: JSON header plus sibling little-endian f32 raw file,
// frame-major, within a frame linear index = x + nx*(y + ny*z).
// The raw path is the header path with its extension replaced by ".raw".
// ---------------------------------------------------------------------------

inline std::string raw_sibling(const std::string& header_path) {
  std::filesystem::path p(header_path);
  p.replace_extension(".raw");
  return p.string();
}

inline void write_grid(const std::string& header_path, const VoxelGridSeries& g, const json& provenance = {}) {
  g.validate();
  json hdr = {{"dims", {g.dims[0], g.dims[1], g.dims[2]}},
              {"voxel_size_mm", {g.voxel_size.x, g.voxel_size.y, g.voxel_size.z}},
              {"origin_mm", {g.origin.x, g.origin.y, g.origin.z}},
              {"tr_s", g.tr},
              {"frames", g.frames}};
  if (!provenance.is_null() && !provenance.empty()) hdr["provenance"] = provenance;
  detail::open_out(header_path) << hdr.dump(2) << "\n";

  auto raw = detail::open_out(raw_sibling(header_path), std::ios::binary);
  std::vector<float> buf(g.data.size());
  for (size_t i = 0; i < g.data.size(); ++i) buf[i] = detail::byteswap_if_big(static_cast<float>(g.data[i]));
  raw.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
  if (!raw) throw DataError("write failed: " + raw_sibling(header_path));
}

inline VoxelGridSeries read_grid(const std::string& header_path) {
  json hdr;
  try {
    detail::open_in(header_path) >> hdr;
  } catch (const json::exception& e) {
    throw DataError(header_path + ": invalid JSON header: " + std::string(e.what()));
  }
  VoxelGridSeries g;
  try {
    for (int a = 0; a < 3; ++a) g.dims[static_cast<size_t>(a)] = hdr.at("dims").at(static_cast<size_t>(a)).get<int64_t>();
    g.voxel_size = {hdr.at("voxel_size_mm").at(0).get<double>(), hdr.at("voxel_size_mm").at(1).get<double>(),
                    hdr.at("voxel_size_mm").at(2).get<double>()};
    g.origin = {hdr.at("origin_mm").at(0).get<double>(), hdr.at("origin_mm").at(1).get<double>(), hdr.at("origin_mm").at(2).get<double>()};
    g.tr = hdr.at("tr_s").get<double>();
    g.frames = hdr.at("frames").get<int64_t>();
  } catch (const json::exception& e) {
    throw DataError(header_path + ": bad grid header: " + std::string(e.what()));
  }
  auto raw = detail::open_in(raw_sibling(header_path), std::ios::binary);
  const size_t n = static_cast<size_t>(g.frames * g.voxels());
  std::vector<float> buf(n);
  raw.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(float)));
  if (static_cast<size_t>(raw.gcount()) != n * sizeof(float)) throw DataError(raw_sibling(header_path) + ": raw file shorter than header promises");
  g.data.resize(n);
  for (size_t i = 0; i < n; ++i) g.data[i] = static_cast<double>(detail::byteswap_if_big(buf[i]));
  g.validate();
  return g;
}

inline void write_mask(const std::string& header_path, const CorticalMask& m) {
  m.validate();
  json hdr = {{"dims", {m.dims[0], m.dims[1], m.dims[2]}}};
  detail::open_out(header_path) << hdr.dump(2) << "\n";
  auto raw = detail::open_out(raw_sibling(header_path), std::ios::binary);
  raw.write(reinterpret_cast<const char*>(m.values.data()), static_cast<std::streamsize>(m.values.size()));
  if (!raw) throw DataError("write failed: " + raw_sibling(header_path));
}

inline CorticalMask read_mask(const std::string& header_path) {
  json hdr;
  try {
    detail::open_in(header_path) >> hdr;
  } catch (const json::exception& e) {
    throw DataError(header_path + ": invalid JSON header: " + std::string(e.what()));
  }
  CorticalMask m;
  try {
    for (int a = 0; a < 3; ++a) m.dims[static_cast<size_t>(a)] = hdr.at("dims").at(static_cast<size_t>(a)).get<int64_t>();
  } catch (const json::exception& e) {
    throw DataError(header_path + ": bad mask header: " + std::string(e.what()));
  }
  auto raw = detail::open_in(raw_sibling(header_path), std::ios::binary);
  const size_t n = static_cast<size_t>(m.voxels());
  m.values.resize(n);
  raw.read(reinterpret_cast<char*>(m.values.data()), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(raw.gcount()) != n) throw DataError(raw_sibling(header_path) + ": raw file shorter than header promises");
  for (auto v : m.values)
    if (v > 1) throw DataError(header_path + ": mask values must be 0 or 1");
  m.validate();
  return m;
}

// ---------------------------------------------------------------------------
// Checkpoints: JSON manifest plus sibling raw little-endian f64 blob. Groups
// are serialized in manifest order: first every group's parameter values,
// then every group's Adam first moments, then second moments.
// ---------------------------------------------------------------------------

inline void write_checkpoint(const std::string& manifest_path, const nn::ParamStore& store, const std::string& model_kind,
                             const json& extra = {}) {
  json groups = json::array();
  for (const auto& g : store.groups) groups.push_back({{"name", g.name}, {"shape", g.shape}, {"frozen", g.frozen}});
  json manifest = {{"format", "tractfusion-checkpoint-v1"},
                   {"model_kind", model_kind},
                   {"adam_step", store.adam_step},
                   {"groups", std::move(groups)}};
  if (!extra.is_null() && !extra.empty()) manifest["extra"] = extra;
  detail::open_out(manifest_path) << manifest.dump(2) << "\n";

  auto raw = detail::open_out(raw_sibling(manifest_path), std::ios::binary);
  auto write_series = [&raw](const std::vector<double>& v) {
    if constexpr (std::endian::native == std::endian::little) {
      raw.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    } else {
      for (double x : v) {
        double s = detail::byteswap_if_big(x);
        raw.write(reinterpret_cast<const char*>(&s), sizeof(double));
      }
    }
  };
  for (const auto& g : store.groups) write_series(g.values);
  for (const auto& g : store.groups) write_series(g.m);
  for (const auto& g : store.groups) write_series(g.v);
  if (!raw) throw DataError("write failed: " + raw_sibling(manifest_path));
}

struct Checkpoint {
  nn::ParamStore store;
  std::string model_kind;
  json extra;
};

inline Checkpoint read_checkpoint(const std::string& manifest_path) {
  json manifest;
  try {
    detail::open_in(manifest_path) >> manifest;
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": invalid JSON manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "tractfusion-checkpoint-v1") throw DataError(manifest_path + ": not a checkpoint manifest");
  Checkpoint ck;
  ck.model_kind = manifest.value("model_kind", "");
  ck.extra = manifest.value("extra", json::object());
  ck.store.adam_step = manifest.value("adam_step", int64_t{0});
  try {
    for (const auto& jg : manifest.at("groups")) {
      std::vector<int64_t> shape = jg.at("shape").get<std::vector<int64_t>>();
      auto& g = ck.store.add(jg.at("name").get<std::string>(), shape, jg.value("frozen", false));
      (void)g;
    }
  } catch (const json::exception& e) {
    throw DataError(manifest_path + ": bad group manifest: " + std::string(e.what()));
  }
  auto raw = detail::open_in(raw_sibling(manifest_path), std::ios::binary);
  auto read_series = [&raw, &manifest_path](std::vector<double>& v) {
    raw.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
    if (static_cast<size_t>(raw.gcount()) != v.size() * sizeof(double))
      throw DataError(raw_sibling(manifest_path) + ": raw blob shorter than manifest promises");
    if constexpr (std::endian::native != std::endian::little)
      for (auto& x : v) x = detail::byteswap_if_big(x);
  };
  for (auto& g : ck.store.groups) read_series(g.values);
  for (auto& g : ck.store.groups) read_series(g.m);
  for (auto& g : ck.store.groups) read_series(g.v);
  return ck;
}

// FNV-1a over the raw bytes of the dataset files; stable across runs and
// platforms, used to stamp reports.
inline uint64_t hash_file(const std::string& path, uint64_t h = 0xcbf29ce484222325ull) {
  auto f = detail::open_in(path, std::ios::binary);
  char buf[65536];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a64(buf, static_cast<size_t>(f.gcount()), h);
  }
  return h;
}

}  // namespace io
}  // namespace tractfusion
