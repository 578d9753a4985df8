#pragma once

#include <fmt/format.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "nvs/geometry/camera.hpp"

// Camera file: plain text, one view per line.
//   # nvs-cameras 1
//   <name> fx fy cx cy height width near far p00 p01 ... p33
// Reals are written with 17 significant digits so a round trip is exact.

namespace nvs::geo {

inline constexpr int kCameraFileVersion = 1;

struct NamedCamera {
  std::string name;
  Camera cam;
};

inline std::string format_camera_line(const std::string& name, const Camera& c) {
  std::string s = fmt::format("{} {:.17g} {:.17g} {:.17g} {:.17g} {} {} {:.17g} {:.17g}", name, c.K.fx, c.K.fy,
                              c.K.cx, c.K.cy, c.height, c.width, c.near, c.far);
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) s += fmt::format(" {:.17g}", c.pose(r, k));
  return s;
}

inline void write_cameras(const std::string& path, const std::vector<NamedCamera>& cams) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write camera file " + path);
  os << "# nvs-cameras " << kCameraFileVersion << "\n";
  for (const auto& nc : cams) os << format_camera_line(nc.name, nc.cam) << "\n";
  if (!os) throw DataError("failed writing camera file " + path);
}

// Parses one record; errors name the view (or the line number when the name
// itself is unreadable).
inline NamedCamera parse_camera_line(const std::string& line, int line_no) {
  std::istringstream is(line);
  NamedCamera nc;
  if (!(is >> nc.name)) throw DataError(fmt::format("camera file line {}: missing view name", line_no), DataFault::kParse);
  Camera& c = nc.cam;
  is >> c.K.fx >> c.K.fy >> c.K.cx >> c.K.cy >> c.height >> c.width >> c.near >> c.far;
  for (int r = 0; r < 4; ++r)
    for (int k = 0; k < 4; ++k) is >> c.pose(r, k);
  std::string extra;
  if (!is || (is >> extra)) throw DataError("corrupt camera record for view '" + nc.name + "'", DataFault::kParse);
  try {
    c.validate("view '" + nc.name + "'");
  } catch (const ConfigError& e) {
    throw DataError(std::string("invalid camera record: ") + e.what(), DataFault::kParse);
  }
  return nc;
}

inline std::vector<NamedCamera> read_cameras(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing camera file " + path, DataFault::kMissingCameras);
  std::vector<NamedCamera> out;
  std::string line;
  int line_no = 0;
  bool saw_header = false;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream hs(line.substr(1));
      std::string tag;
      int version = -1;
      if (hs >> tag >> version && tag == "nvs-cameras") {
        if (version != kCameraFileVersion)
          throw DataError(fmt::format("camera file {} has version {}, expected {}", path, version,
                                      kCameraFileVersion),
                          DataFault::kVersion);
        saw_header = true;
      }
      continue;
    }
    out.push_back(parse_camera_line(line, line_no));
  }
  if (!saw_header) throw DataError("camera file " + path + " lacks a version header", DataFault::kVersion);
  return out;
}

}  // namespace nvs::geo
