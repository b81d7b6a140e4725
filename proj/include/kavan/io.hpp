#pragma once

// JSON formats: tensors, parameter sets, JSON-lines datasets, taxonomies and
// PGM image dumps. Doubles are written with 17 significant digits so files
// round-trip bit-exactly.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kavan/data.hpp"
#include "kavan/error.hpp"
#include "kavan/heatmap.hpp"
#include "kavan/model.hpp"
#include "kavan/tensor.hpp"

namespace kavan {

using json = nlohmann::json;

inline constexpr int kDatasetFormat = 1;

// ---------------------------------------------------------------------------
// Tensors and parameters

inline json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.to_vector()}}; }

inline Tensor tensor_from_json(const json& j, bool requires_grad = false) {
  try {
    return Tensor::from(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>(), requires_grad);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed tensor JSON: ") + e.what());
  }
}

inline json params_to_json(const KavanParams& p) {
  json j = json::object();
  for (auto& [name, t] : p.named()) j[name] = tensor_to_json(t);
  return j;
}

// Overwrites the values of `into` (which fixes the expected layout).
inline void load_params(const json& j, KavanParams& into) {
  for (auto& [name, t] : into.named()) {
    if (!j.contains(name)) throw ConfigError("parameter file lacks '" + name + "'");
    Tensor loaded = tensor_from_json(j.at(name));
    if (loaded.shape() != t.shape())
      throw ConfigError("parameter '" + name + "' has shape " + shape_str(loaded.shape()) + ", expected " +
                        shape_str(t.shape()));
    Tensor target = t;
    auto dst = target.mutable_data();
    auto src = loaded.data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
}

// ---------------------------------------------------------------------------
// Text files

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

inline json read_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

// ---------------------------------------------------------------------------
// Taxonomy

inline json taxonomy_to_json(const EmotionTaxonomy& t) {
  json emotions = json::array();
  for (std::size_t i = 0; i < t.size(); ++i)
    emotions.push_back({{"name", t.names[i]}, {"quadrant", kQuadrantNames[static_cast<std::size_t>(t.quadrant[i])]}});
  return {{"emotions", emotions}};
}

inline EmotionTaxonomy taxonomy_from_json(const json& j) {
  EmotionTaxonomy t;
  try {
    for (auto& e : j.at("emotions")) {
      t.names.push_back(e.at("name").get<std::string>());
      t.quadrant.push_back(parse_quadrant(e.at("quadrant").get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed taxonomy: ") + e.what());
  }
  t.validate();
  return t;
}

// ---------------------------------------------------------------------------
// Dataset (JSON lines, one sample per line)
//
// {"format": 1, "id": "...", "intensities": [17 reals],
//  "images": {"side": 64, "frames": [[side*side reals], ...]}     -- or --
//  "features": {"dim": D, "frames": [[49*D reals], ...]},
//  "keypoints": [[{"x":..,"y":..,"conf":..,"group":"lips"|"other"}, ...], ...]}

inline json sample_to_json(const GifSample& s) {
  json j = {{"format", kDatasetFormat}, {"id", s.id}, {"intensities", s.intensities}};
  if (s.precomputed()) {
    j["features"] = {{"dim", s.feature_dim}, {"frames", s.features}};
  } else {
    json frames = json::array();
    for (auto& im : s.images) frames.push_back(im.pixels);
    j["images"] = {{"side", s.images.empty() ? 0 : s.images.front().side}, {"frames", frames}};
  }
  json kps = json::array();
  for (auto& f : s.keypoints) {
    json pts = json::array();
    for (auto& k : f.points)
      pts.push_back({{"x", k.x}, {"y", k.y}, {"conf", k.conf}, {"group", k.group == KeypointGroup::lips ? "lips" : "other"}});
    kps.push_back(pts);
  }
  j["keypoints"] = kps;
  return j;
}

inline GifSample sample_from_json(const json& j) {
  GifSample s;
  try {
    if (j.at("format").get<int>() != kDatasetFormat)
      throw ConfigError("unsupported dataset format " + j.at("format").dump());
    s.id = j.at("id").get<std::string>();
    s.intensities = j.at("intensities").get<std::vector<double>>();
    if (j.contains("features")) {
      s.feature_dim = j["features"].at("dim").get<std::size_t>();
      s.features = j["features"].at("frames").get<std::vector<std::vector<double>>>();
    } else {
      auto side = j.at("images").at("side").get<std::size_t>();
      for (auto& f : j["images"].at("frames")) s.images.push_back({side, f.get<std::vector<double>>()});
    }
    for (auto& f : j.at("keypoints")) {
      KeypointFrame kf;
      for (auto& p : f) {
        auto group = p.value("group", std::string("other"));
        if (group != "lips" && group != "other") throw ConfigError("unknown keypoint group '" + group + "'");
        kf.points.push_back({p.at("x").get<double>(), p.at("y").get<double>(), p.at("conf").get<double>(),
                             group == "lips" ? KeypointGroup::lips : KeypointGroup::other});
      }
      s.keypoints.push_back(std::move(kf));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed sample: ") + e.what());
  }
  s.validate();
  return s;
}

inline void write_dataset(const std::filesystem::path& path, const std::vector<GifSample>& samples) {
  std::ostringstream os;
  for (auto& s : samples) os << sample_to_json(s).dump() << '\n';
  write_text(path, os.str());
}

inline std::vector<GifSample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open dataset " + path.string());
  std::vector<GifSample> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (out.empty()) throw ConfigError("dataset " + path.string() + " is empty");
  return out;
}

// ---------------------------------------------------------------------------
// PGM dumps (binary P5, 8-bit, each grid scaled to its own maximum)

inline std::string grids_to_pgm(const std::vector<std::span<const double>>& grids, std::size_t side,
                                std::size_t pixel_scale = 16) {
  const std::size_t gap = pixel_scale;
  const std::size_t w = grids.size() * side * pixel_scale + (grids.size() - 1) * gap;
  const std::size_t h = side * pixel_scale;
  std::vector<unsigned char> img(w * h, 0);
  for (std::size_t g = 0; g < grids.size(); ++g) {
    double mx = 0.0;
    for (double v : grids[g]) mx = std::max(mx, v);
    const std::size_t x0 = g * (side * pixel_scale + gap);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < side * pixel_scale; ++x) {
        double v = grids[g][(y / pixel_scale) * side + x / pixel_scale];
        img[y * w + x0 + x] = static_cast<unsigned char>(mx > 0 ? std::lround(255.0 * v / mx) : 0);
      }
  }
  std::ostringstream os;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.data()), static_cast<std::streamsize>(img.size()));
  return os.str();
}

inline void write_binary(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << bytes;
}

}  // namespace kavan
