#pragma once

#include <openssl/evp.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "nvs/config.hpp"
#include "nvs/data/scene.hpp"
#include "nvs/enhance/diff3de.hpp"
#include "nvs/opp/train.hpp"

namespace nvs::app {

using nlohmann::json;
namespace fs = std::filesystem;

// Every knob the command line can reach, with its default. Keys not listed
// here are rejected wherever they come from.
inline json default_config() {
  return {
      {"run", {{"seed", 0}}},
      {"data",
       {{"scene_seed", 0},
        {"primitives", 3},
        {"views", 28},
        {"test_views", 8},
        {"height", defaults::kImageSize},
        {"width", defaults::kImageSize},
        {"radius", 3.0},
        {"fov_deg", 32.0}}},
      {"model",
       {{"encoder_channels", {16, 16, 32}},
        {"trunk_width", 64},
        {"trunk_layers", 3},
        {"hidden_dim", defaults::kHiddenColorDim},
        {"pe_x", 6},
        {"pe_d", 2},
        {"corf_width", 64},
        {"sigma_r_frac", 0.1},
        {"grid_h", defaults::kGridH},
        {"grid_w", defaults::kGridW},
        {"upsampler_width", 64},
        {"disc_channels", {32, 64, 128}},
        {"refiner_width", 32}}},
      {"train",
       {{"pipeline", "one_stage_parallel"},
        {"lambda_gan", defaults::kLambdaGan},
        {"lambda_per", defaults::kLambdaPer},
        {"r1_gamma", defaults::kR1Gamma},
        {"lr", defaults::kLearningRate},
        {"lr_final_scale", 1.0},
        {"steps", 2000},
        {"tandem_b_steps", 500},
        {"finetune_steps", 300},
        {"finetune_lr", 1e-3},
        {"rays", 512},
        {"patch", defaults::kPatchSize},
        {"n_coarse", defaults::kCoarseSamples},
        {"n_fine", defaults::kFineSamples},
        {"early_stop_window", 500},
        {"early_stop_rel", 0.01},
        {"log_every", 100}}},
      {"render",
       {{"n_coarse", defaults::kCoarseSamples},
        {"n_fine", defaults::kFineSamples},
        {"orbit_frames", 24},
        {"orbit_elevation_deg", 30.0}}},
      {"enhance",
       {{"backend", "toy"},
        {"keyframes", defaults::kKeyframes},
        {"steps", defaults::kDenoiseSteps},
        {"guidance", defaults::kGuidanceScale},
        {"working_res", 32},
        {"fixed_point_iters", 30},
        {"denoiser_steps", 400},
        {"denoiser_channels", 16},
        {"denoiser_lr", 1e-3}}},
      {"sweep",
       {{"lambda_gan", {1e-4, 1e-3, 1e-2}},
        {"lambda_per", {1e-3, 1e-2, 1e-1}},
        {"steps", 300},
        {"finetune_steps", 100},
        {"orbit_frames", 8}}},
  };
}

namespace detail {

inline bool same_kind(const json& def, const json& v) {
  if (def.is_number_integer()) return v.is_number_integer();
  if (def.is_number()) return v.is_number();
  if (def.is_string()) return v.is_string();
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_array()) {
    if (!v.is_array()) return false;
    for (const auto& e : v)
      if (!e.is_number()) return false;
    return true;
  }
  return def.type() == v.type();
}

// Overlays `src` onto `dst` (both section -> key -> value); `where` names the source.
inline void overlay(json& dst, const json& src, const std::string& where) {
  if (!src.is_object()) throw ConfigError(where + ": configuration must be a JSON object");
  for (const auto& [section, body] : src.items()) {
    if (!dst.contains(section)) throw ConfigError(where + ": unknown section '" + section + "'");
    if (!body.is_object()) throw ConfigError(where + ": section '" + section + "' must be an object");
    for (const auto& [key, v] : body.items()) {
      if (!dst[section].contains(key)) throw ConfigError(where + ": unknown key '" + section + "." + key + "'");
      if (!same_kind(dst[section][key], v))
        throw ConfigError(where + ": wrong type for '" + section + "." + key + "'");
      dst[section][key] = v;
    }
  }
}

}  // namespace detail

// Resolved configuration document: defaults, then the file, then --set flags.
class RunConfig {
 public:
  RunConfig() : doc_(default_config()) {}

  // A manifest is accepted too: its "config" member holds the resolved document.
  void merge_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw ConfigError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (j.is_object() && j.contains("config") && j.contains("config_hash")) j = j["config"];
    detail::overlay(doc_, j, path);
  }

  // "section.key=value"; the value is parsed as JSON, falling back to a string.
  void apply_set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq)
      throw ConfigError("--set expects section.key=value, got '" + assignment + "'");
    const std::string section = assignment.substr(0, dot), key = assignment.substr(dot + 1, eq - dot - 1);
    const std::string raw = assignment.substr(eq + 1);
    json v;
    try {
      v = json::parse(raw);
    } catch (const json::exception&) {
      v = raw;
    }
    detail::overlay(doc_, json{{section, {{key, v}}}}, "--set");
  }

  const json& doc() const { return doc_; }
  const json& at(const std::string& section) const { return doc_.at(section); }
  template <class V>
  V get(const std::string& section, const std::string& key) const {
    return doc_.at(section).at(key).get<V>();
  }

  std::uint64_t seed() const { return get<std::uint64_t>("run", "seed"); }

  std::string hash() const { return fmt::format("{:016x}", fnv1a(doc_.dump())); }

  data::ViewSetConfig view_set() const {
    data::ViewSetConfig v;
    v.n_views = get<int>("data", "views");
    v.n_test = get<int>("data", "test_views");
    v.height = get<int>("data", "height");
    v.width = get<int>("data", "width");
    v.radius = get<double>("data", "radius");
    v.fov_deg = get<double>("data", "fov_deg");
    if (v.n_test < 0 || v.n_test >= v.n_views) throw ConfigError("data.test_views must leave training views");
    return v;
  }

  opp::ModelConfig model() const {
    opp::ModelConfig m;
    m.encoder.channels = get<std::vector<int>>("model", "encoder_channels");
    m.field.trunk_width = get<int>("model", "trunk_width");
    m.field.trunk_layers = get<int>("model", "trunk_layers");
    m.field.hidden_dim = get<int>("model", "hidden_dim");
    m.field.pe_x = get<int>("model", "pe_x");
    m.field.pe_d = get<int>("model", "pe_d");
    m.field.corf_width = get<int>("model", "corf_width");
    m.field.sigma_r_frac = get<double>("model", "sigma_r_frac");
    m.image_h = get<int>("data", "height");
    m.image_w = get<int>("data", "width");
    m.grid_h = get<int>("model", "grid_h");
    m.grid_w = get<int>("model", "grid_w");
    m.upsampler_width = get<int>("model", "upsampler_width");
    m.disc_channels = get<std::vector<int>>("model", "disc_channels");
    m.refiner_width = get<int>("model", "refiner_width");
    m.seed = seed();
    if (m.encoder.channels.size() != 3) throw ConfigError("model.encoder_channels needs three entries");
    m.validate();
    return m;
  }

  opp::TrainConfig train() const {
    opp::TrainConfig t;
    t.pipeline = opp::parse_pipeline(get<std::string>("train", "pipeline"));
    t.weights.lambda_gan = get<double>("train", "lambda_gan");
    t.weights.lambda_per = get<double>("train", "lambda_per");
    t.weights.r1_gamma = get<double>("train", "r1_gamma");
    t.lr = get<double>("train", "lr");
    t.lr_final_scale = get<double>("train", "lr_final_scale");
    t.steps = get<int>("train", "steps");
    t.tandem_b_steps = get<int>("train", "tandem_b_steps");
    t.finetune_steps = get<int>("train", "finetune_steps");
    t.finetune_lr = get<double>("train", "finetune_lr");
    t.rays = get<int>("train", "rays");
    t.patch = get<int>("train", "patch");
    t.n_coarse = get<int>("train", "n_coarse");
    t.n_fine = get<int>("train", "n_fine");
    t.early_stop_window = get<int>("train", "early_stop_window");
    t.early_stop_rel = get<double>("train", "early_stop_rel");
    t.log_every = get<int>("train", "log_every");
    t.seed = seed();
    t.validate();
    return t;
  }

  render::RenderOptions render_samples() const {
    render::RenderOptions o;
    o.n_coarse = get<int>("render", "n_coarse");
    o.n_fine = get<int>("render", "n_fine");
    if (o.n_coarse < 1 || o.n_fine < 0) throw ConfigError("render sample counts");
    return o;
  }

  diff::EnhanceConfig enhance() const {
    diff::EnhanceConfig e;
    e.keyframes = get<int>("enhance", "keyframes");
    e.steps = get<int>("enhance", "steps");
    e.guidance = get<double>("enhance", "guidance");
    e.working_res = get<int>("enhance", "working_res");
    e.fixed_point_iters = get<int>("enhance", "fixed_point_iters");
    e.validate();
    const auto b = get<std::string>("enhance", "backend");
    if (b != "toy" && b != "identity") throw ConfigError("enhance.backend must be 'toy' or 'identity'");
    return e;
  }

 private:
  json doc_;
};

// Git-style blob id: SHA-256 over "blob <size>\0<content>".
inline std::string content_hash(const std::string& bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + std::string(1, '\0');
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, header.data(), header.size()) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 || EVP_DigestFinal_ex(ctx, md, &len) != 1) {
    EVP_MD_CTX_free(ctx);
    throw DataError("SHA-256 computation failed");
  }
  EVP_MD_CTX_free(ctx);
  std::string hex;
  for (unsigned int i = 0; i < len; ++i) hex += fmt::format("{:02x}", md[i]);
  return hex;
}

inline std::string file_hash(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot read " + p.string() + " for hashing", DataFault::kMissingFile);
  std::ostringstream ss;
  ss << is.rdbuf();
  return content_hash(ss.str());
}

// manifest.json next to a command's outputs: the resolved config and its
// hash, the seed, the invocation, and a content hash per output file.
inline void write_manifest(const fs::path& dir, const std::string& command, const std::vector<std::string>& argv,
                           const RunConfig& cfg, const std::vector<fs::path>& outputs, const json& extra = {}) {
  json files = json::object();
  for (const auto& p : outputs) files[fs::relative(p, dir).generic_string()] = file_hash(p);
  json m = {{"command", command}, {"argv", argv},     {"config", cfg.doc()},
            {"config_hash", cfg.hash()}, {"seed", cfg.seed()}, {"outputs", files}};
  if (!extra.is_null()) m["extra"] = extra;
  std::ofstream os(dir / "manifest.json");
  os << m.dump(2) << "\n";
  if (!os) throw DataError("cannot write manifest in " + dir.string());
}

}  // namespace nvs::app
