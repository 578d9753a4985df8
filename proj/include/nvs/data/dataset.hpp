#pragma once

#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "nvs/data/image_io.hpp"
#include "nvs/data/scene.hpp"
#include "nvs/geometry/camera_io.hpp"

// On-disk layout of one scene:
//   <dir>/meta            JSON: format version, scene id, reference view, splits
//   <dir>/cameras.txt     camera file (geometry format), one record per view
//   <dir>/images/<v>.png  8-bit image per view
//   <dir>/images/<v>.f32  optional lossless float copy (preferred on load)
//   <dir>/depth/<v>.f32   camera-space depth, 0 where nothing is hit

namespace nvs::data {

namespace fs = std::filesystem;

inline constexpr int kDatasetVersion = 1;

inline void save_dataset(const SceneDataset& ds, const std::string& dir, bool lossless = true) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "depth");
  nlohmann::json meta = {{"version", kDatasetVersion}, {"scene_id", ds.scene_id}, {"reference", ds.reference}};
  std::vector<geo::NamedCamera> cams;
  for (const auto& v : ds.views) {
    cams.push_back({v.name, v.cam});
    meta["views"].push_back({{"name", v.name}, {"split", v.split}});
    write_png((fs::path(dir) / "images" / (v.name + ".png")).string(), v.image);
    if (lossless) write_f32((fs::path(dir) / "images" / (v.name + ".f32")).string(), v.image, kRgbMagic);
    if (v.depth.numel()) write_f32((fs::path(dir) / "depth" / (v.name + ".f32")).string(), v.depth, kDepthMagic);
  }
  geo::write_cameras((fs::path(dir) / "cameras.txt").string(), cams);
  std::ofstream os(fs::path(dir) / "meta");
  os << meta.dump(2) << "\n";
  if (!os) throw DataError("cannot write dataset meta in " + dir);
}

inline SceneDataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw DataError("dataset directory not found: " + dir, DataFault::kMissingFile);
  nlohmann::json meta;
  {
    std::ifstream is(root / "meta");
    if (!is) throw DataError("dataset meta missing in " + dir, DataFault::kMissingFile);
    try {
      is >> meta;
    } catch (const nlohmann::json::exception& e) {
      throw DataError(std::string("dataset meta unreadable: ") + e.what(), DataFault::kParse);
    }
  }
  if (!meta.contains("version") || meta["version"] != kDatasetVersion)
    throw DataError("dataset version mismatch in " + dir, DataFault::kVersion);
  const auto cams = geo::read_cameras((root / "cameras.txt").string());

  std::set<std::string> pngs;
  if (fs::is_directory(root / "images"))
    for (const auto& e : fs::directory_iterator(root / "images"))
      if (e.path().extension() == ".png") pngs.insert(e.path().stem().string());
  if (pngs.size() != cams.size())
    throw DataError(fmt::format("dataset {} has {} images but {} cameras", dir, pngs.size(), cams.size()),
                    DataFault::kCountMismatch);

  SceneDataset ds;
  ds.scene_id = meta.value("scene_id", std::string("scene"));
  ds.reference = meta.value("reference", 0);
  std::map<std::string, std::string> split;
  if (meta.contains("views"))
    for (const auto& v : meta["views"]) split[v.at("name").get<std::string>()] = v.value("split", "train");
  for (const auto& nc : cams) {
    if (!pngs.count(nc.name))
      throw DataError("no image for camera '" + nc.name + "'", DataFault::kCountMismatch);
    View v;
    v.name = nc.name;
    v.cam = nc.cam;
    const fs::path f32 = root / "images" / (nc.name + ".f32");
    v.image = fs::exists(f32) ? read_f32(f32.string(), kRgbMagic)
                              : read_png((root / "images" / (nc.name + ".png")).string());
    if (v.image.dim(0) != v.cam.height || v.image.dim(1) != v.cam.width)
      throw DataError("image size of view '" + nc.name + "' disagrees with its camera", DataFault::kParse);
    const fs::path dp = root / "depth" / (nc.name + ".f32");
    if (fs::exists(dp)) v.depth = read_f32(dp.string(), kDepthMagic);
    v.split = split.count(nc.name) ? split[nc.name] : "train";
    ds.views.push_back(std::move(v));
  }
  if (ds.reference < 0 || ds.reference >= static_cast<int>(ds.views.size()))
    throw DataError("reference view index out of range", DataFault::kParse);
  return ds;
}

}  // namespace nvs::data
