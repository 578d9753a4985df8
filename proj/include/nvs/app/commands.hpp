#pragma once

#include <spdlog/spdlog.h>

#include <chrono>
#include <filesystem>
#include <fstream>

#include "nvs/app/run_config.hpp"
#include "nvs/data/dataset.hpp"
#include "nvs/data/image_io.hpp"
#include "nvs/enhance/toy_unet.hpp"
#include "nvs/geometry/camera_io.hpp"
#include "nvs/metrics/metrics.hpp"
#include "nvs/opp/render.hpp"

// The work behind each CLI subcommand. Every command writes its outputs plus
// manifest.json into its output directory and returns a JSON summary.

namespace nvs::app {

using ad::Tensor;
using Model = opp::OppModel<float>;

// ---- scene spec persistence ------------------------------------------------

inline json vec_json(const geo::Vec3& v) { return {v.x(), v.y(), v.z()}; }
inline geo::Vec3 json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

inline json scene_spec_json(const data::ToySceneSpec& s) {
  json prims = json::array();
  for (const auto& p : s.primitives)
    prims.push_back({{"kind", p.kind == data::Primitive::Kind::kSphere ? "sphere" : "box"},
                     {"center", vec_json(p.center)},
                     {"size", vec_json(p.size)},
                     {"albedo", vec_json(p.albedo)}});
  return {{"primitives", prims}, {"light_dir", vec_json(s.light_dir)}, {"ambient", s.ambient},
          {"background", vec_json(s.background)}, {"seed", s.seed}};
}

inline data::ToySceneSpec scene_spec_from_json(const json& j) {
  data::ToySceneSpec s;
  try {
    for (const auto& p : j.at("primitives")) {
      data::Primitive q;
      q.kind = p.at("kind") == "sphere" ? data::Primitive::Kind::kSphere : data::Primitive::Kind::kBox;
      q.center = json_vec(p.at("center"));
      q.size = json_vec(p.at("size"));
      q.albedo = json_vec(p.at("albedo"));
      s.primitives.push_back(q);
    }
    s.light_dir = json_vec(j.at("light_dir"));
    s.ambient = j.at("ambient");
    s.background = json_vec(j.at("background"));
    s.seed = j.at("seed");
  } catch (const json::exception& e) {
    throw DataError(std::string("scene spec unreadable: ") + e.what(), DataFault::kParse);
  }
  s.validate();
  return s;
}

inline std::optional<data::ToySceneSpec> load_scene_spec(const fs::path& dataset_dir) {
  const fs::path p = dataset_dir / "scene_spec.json";
  if (!fs::exists(p)) return std::nullopt;
  std::ifstream is(p);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw DataError("scene_spec.json unreadable: " + std::string(e.what()), DataFault::kParse);
  }
  return scene_spec_from_json(j);
}

// ---- small helpers ---------------------------------------------------------

inline std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file() && e.path().filename() != "manifest.json") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

inline Tensor<float> conf_to_rgb(const Tensor<float>& conf) {
  Tensor<float> out({conf.dim(0), conf.dim(1), 3});
  for (std::int64_t p = 0; p < conf.dim(0) * conf.dim(1); ++p)
    for (int c = 0; c < 3; ++c) out[p * 3 + c] = conf[p];
  return out;
}

// Cameras circling the origin at the reference camera's distance. `span_deg`
// of 360 closes the loop; smaller spans give a short arc starting at the
// reference azimuth.
inline std::vector<geo::Camera> orbit_cameras(const geo::Camera& ref, int n, double elevation_deg, double span_deg) {
  if (n < 1) throw ConfigError("orbit needs at least one frame");
  const geo::Vec3 c = ref.center();
  const double radius = c.norm();
  const double az0 = std::atan2(c.y(), c.x());
  const double el = elevation_deg * M_PI / 180.0;
  const double step = (span_deg >= 360.0 ? span_deg / n : (n > 1 ? span_deg / (n - 1) : 0.0)) * M_PI / 180.0;
  std::vector<geo::Camera> out;
  for (int i = 0; i < n; ++i) {
    const double az = az0 + i * step;
    geo::Camera cam = ref;
    cam.pose = geo::look_at(radius * geo::Vec3(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)),
                            geo::Vec3::Zero());
    out.push_back(cam);
  }
  return out;
}

struct ModelBundle {
  std::unique_ptr<Model> model;
  data::SceneDataset ds;
};

inline ModelBundle load_bundle(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint) {
  ModelBundle b;
  b.ds = data::load_dataset(data_dir);
  b.model = std::make_unique<Model>(cfg.model());
  if (!checkpoint.empty()) opp::load_checkpoint(*b.model, checkpoint);
  return b;
}

inline std::unique_ptr<opp::OppRenderer<float>> make_renderer(ModelBundle& b, const RunConfig& cfg) {
  const auto& ref = b.ds.views.at(b.ds.reference);
  return std::make_unique<opp::OppRenderer<float>>(*b.model, ref.image, ref.cam, cfg.render_samples(),
                                                   cfg.train().pipeline);
}

// ---- make-dataset ----------------------------------------------------------

inline json cmd_make_dataset(const RunConfig& cfg, const fs::path& out, const std::vector<std::string>& argv) {
  const auto spec = data::random_scene_spec(cfg.get<std::uint64_t>("data", "scene_seed"), cfg.get<int>("data", "primitives"));
  const auto vs = cfg.view_set();
  const auto ds = data::generate_scene(spec, data::view_set(vs), vs.n_test, fmt::format("toy_{}", spec.seed));
  data::save_dataset(ds, out.string());
  std::ofstream(out / "scene_spec.json") << scene_spec_json(spec).dump(2) << "\n";
  write_manifest(out, "make-dataset", argv, cfg, files_under(out));
  return {{"views", ds.views.size()}, {"train", ds.indices("train").size()}, {"test", ds.indices("test").size()}};
}

// ---- train-opp / finetune-corf ---------------------------------------------

inline json summary_json(const opp::TrainSummary& s) {
  return {{"steps_run", s.steps_run},     {"early_stopped", s.early_stopped}, {"seconds", s.seconds},
          {"first_window_loss", s.first_window_loss}, {"final_window_loss", s.final_window_loss}};
}

inline json cmd_train(const RunConfig& cfg, const std::string& data_dir, const fs::path& out, const std::string& resume,
                      const std::vector<std::string>& argv) {
  fs::create_directories(out);
  ModelBundle b = load_bundle(cfg, data_dir, "");
  opp::Trainer<float> tr(*b.model, b.ds, cfg.train());
  if (!resume.empty()) tr.set_step(opp::load_checkpoint(*b.model, resume, tr.optimizers()));
  std::ofstream log(out / "train_log.jsonl");
  const auto s = tr.train([&](const opp::LossReport& r) { log << r.to_json().dump() << "\n"; });
  log.close();
  const fs::path ck = out / "opp.ckpt";
  opp::save_checkpoint(*b.model, ck.string(), tr.step(), tr.optimizers(),
                       {{"phase", "train"}, {"config_hash", cfg.hash()}});
  json sum = summary_json(s);
  write_manifest(out, "train-opp", argv, cfg, files_under(out), sum);
  return sum;
}

inline json cmd_finetune(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint,
                         const fs::path& out, const std::vector<std::string>& argv) {
  fs::create_directories(out);
  ModelBundle b = load_bundle(cfg, data_dir, "");
  opp::Trainer<float> tr(*b.model, b.ds, cfg.train());
  tr.set_step(opp::load_checkpoint(*b.model, checkpoint, tr.optimizers()));
  std::ofstream log(out / "finetune_log.jsonl");
  const auto s = tr.finetune_corf([&](const opp::LossReport& r) { log << r.to_json().dump() << "\n"; });
  log.close();
  b.model->set_all_trainable(true);
  opp::save_checkpoint(*b.model, (out / "opp_finetuned.ckpt").string(), tr.step(), tr.optimizers(),
                       {{"phase", "finetune"}, {"config_hash", cfg.hash()}});
  json sum = summary_json(s);
  write_manifest(out, "finetune-corf", argv, cfg, files_under(out), sum);
  return sum;
}

// ---- render ----------------------------------------------------------------

struct RenderTargets {
  std::vector<std::string> names;
  std::vector<geo::Camera> cams;
};

inline RenderTargets pick_targets(const data::SceneDataset& ds, const RunConfig& cfg, int pose_index, bool orbit,
                                  const std::string& split) {
  RenderTargets t;
  if (pose_index >= 0) {
    if (pose_index >= static_cast<int>(ds.views.size()))
      throw DataError(fmt::format("pose index {} out of range ({} views)", pose_index, ds.views.size()),
                      DataFault::kCountMismatch);
    t.names.push_back(ds.views[pose_index].name);
    t.cams.push_back(ds.views[pose_index].cam);
  } else if (orbit) {
    t.cams = orbit_cameras(ds.views.at(ds.reference).cam, cfg.get<int>("render", "orbit_frames"),
                           cfg.get<double>("render", "orbit_elevation_deg"), 360.0);
    for (std::size_t i = 0; i < t.cams.size(); ++i) t.names.push_back(fmt::format("orbit_{:03d}", i));
  } else {
    for (int v : ds.indices(split)) {
      t.names.push_back(ds.views[v].name);
      t.cams.push_back(ds.views[v].cam);
    }
    if (t.names.empty()) throw DataError("dataset has no '" + split + "' views", DataFault::kCountMismatch);
  }
  return t;
}

// Writes nerf/, gan/, conf/, dpf/ PNGs, NeRF depth maps and cameras.txt.
inline json render_to(ModelBundle& b, const RunConfig& cfg, const RenderTargets& t, const fs::path& out) {
  auto r = make_renderer(b, cfg);
  for (const char* d : {"nerf", "gan", "conf", "dpf", "depth"}) fs::create_directories(out / d);
  std::vector<geo::NamedCamera> named;
  json frames = json::array();
  for (std::size_t i = 0; i < t.cams.size(); ++i) {
    const auto& n = t.names[i];
    const auto bi = r->render_all(t.cams[i]);
    data::write_png((out / "nerf" / (n + ".png")).string(), bi.nerf);
    data::write_png((out / "gan" / (n + ".png")).string(), bi.gan);
    data::write_png((out / "conf" / (n + ".png")).string(), conf_to_rgb(bi.conf));
    data::write_png((out / "dpf" / (n + ".png")).string(), bi.fused);
    data::write_f32((out / "depth" / (n + ".f32")).string(), bi.depth, data::kDepthMagic);
    named.push_back({n, t.cams[i]});
    double cmin = 1, cmax = 0;
    for (float v : bi.conf.storage()) cmin = std::min<double>(cmin, v), cmax = std::max<double>(cmax, v);
    frames.push_back({{"name", n}, {"conf_min", cmin}, {"conf_max", cmax}});
  }
  geo::write_cameras((out / "cameras.txt").string(), named);
  return {{"frames", frames}};
}

inline json cmd_render(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint,
                       const fs::path& out, int pose_index, bool orbit, const std::string& split,
                       const std::vector<std::string>& argv) {
  fs::create_directories(out);
  ModelBundle b = load_bundle(cfg, data_dir, checkpoint);
  const auto t = pick_targets(b.ds, cfg, pose_index, orbit, split);
  json res = render_to(b, cfg, t, out);
  write_manifest(out, "render", argv, cfg, files_under(out));
  return res;
}

// ---- enhance ---------------------------------------------------------------

struct OrbitFrames {
  std::vector<std::string> names;
  std::vector<geo::Camera> cams;
  std::vector<Tensor<float>> images;
  std::vector<Tensor<float>> depths;  // empty when the orbit has no depth
};

// A render output directory: cameras.txt, <branch>/<name>.png, depth/<name>.f32.
inline OrbitFrames read_orbit(const fs::path& dir, const std::string& branch) {
  OrbitFrames o;
  const auto cams = geo::read_cameras((dir / "cameras.txt").string());
  for (const auto& nc : cams) {
    const fs::path img = dir / branch / (nc.name + ".png");
    if (!fs::exists(img)) throw DataError("orbit frame missing: " + img.string(), DataFault::kCountMismatch);
    o.names.push_back(nc.name);
    o.cams.push_back(nc.cam);
    o.images.push_back(data::read_png(img.string()));
    const fs::path d = dir / "depth" / (nc.name + ".f32");
    if (fs::exists(d)) o.depths.push_back(data::read_f32(d.string(), data::kDepthMagic));
  }
  if (!o.depths.empty() && o.depths.size() != o.names.size()) o.depths.clear();
  return o;
}

inline std::unique_ptr<diff::DenoiserBackend> make_backend(const RunConfig& cfg, const data::SceneDataset& ds,
                                                           const std::string& denoiser_path, const fs::path& out) {
  const auto kind = cfg.get<std::string>("enhance", "backend");
  if (kind == "identity") return std::make_unique<diff::IdentityBackend>();
  if (!denoiser_path.empty() && fs::exists(denoiser_path))
    return std::make_unique<diff::ToyDenoiser>(diff::ToyDenoiser::load(denoiser_path));
  diff::ToyUNetConfig uc;
  uc.base_channels = cfg.get<int>("enhance", "denoiser_channels");
  uc.seed = cfg.seed();
  auto d = std::make_unique<diff::ToyDenoiser>(uc);
  const int R = cfg.get<int>("enhance", "working_res");
  std::vector<Tensor<double>> corpus;
  for (const auto& v : ds.views)
    if (v.split == "train") corpus.push_back(diff::encode_image(diff::resize_image(v.image, R)));
  diff::DenoiserTrainConfig tc;
  tc.steps = cfg.get<int>("enhance", "denoiser_steps");
  tc.lr = cfg.get<double>("enhance", "denoiser_lr");
  tc.seed = cfg.seed();
  const double loss = diff::train_toy_denoiser(*d, corpus, tc);
  spdlog::info("toy denoiser trained: final loss {:.4f}", loss);
  d->save((out / "denoiser.nvsa").string(), {{"final_loss", loss}});
  return d;
}

inline geo::DomeLayout keyframe_dome(const geo::Camera& ref, int n) {
  return geo::make_dome(n, ref.center().norm(), geo::Vec3::Zero(), ref.K, ref.height, ref.width, ref.near, ref.far);
}

inline json cmd_enhance(const RunConfig& cfg, const std::string& data_dir, const std::string& checkpoint,
                        const std::string& orbit_dir, const fs::path& out, std::string cache_path, bool rebuild,
                        const std::string& denoiser_path, const std::vector<std::string>& argv) {
  const auto ecfg = cfg.enhance();
  fs::create_directories(out / "enhanced");
  ModelBundle b = load_bundle(cfg, data_dir, checkpoint);
  const auto orbit = read_orbit(orbit_dir, "dpf");
  const auto backend = make_backend(cfg, b.ds, denoiser_path, out);
  const auto dome = keyframe_dome(b.ds.views.at(b.ds.reference).cam, ecfg.keyframes);
  if (cache_path.empty()) cache_path = (out / "keyframes.nvsa").string();

  diff::KeyframeSet set;
  bool reused = false;
  if (!rebuild && fs::exists(cache_path)) {
    set = diff::load_keyframe_cache(cache_path, dome);
    if (set.backend != backend->name() || set.cfg.to_json() != ecfg.to_json())
      throw CheckpointError("keyframe cache " + cache_path + " was built with other settings; pass --rebuild-cache");
    reused = true;
  } else {
    auto r = make_renderer(b, cfg);
    std::vector<Tensor<float>> frames;
    for (const auto& cam : dome.cameras) frames.push_back(r->render_all(cam).fused);
    set = diff::build_keyframes(frames, dome, *backend, ecfg);
    diff::save_keyframe_cache(set, cache_path);
  }

  std::vector<geo::NamedCamera> named;
  for (std::size_t i = 0; i < orbit.names.size(); ++i) {
    const auto res = diff::enhance_view(orbit.images[i], orbit.cams[i], set, *backend);
    data::write_png((out / "enhanced" / (orbit.names[i] + ".png")).string(), res.image);
    named.push_back({orbit.names[i], orbit.cams[i]});
  }
  geo::write_cameras((out / "cameras.txt").string(), named);
  if (!orbit.depths.empty()) {
    fs::create_directories(out / "depth");
    for (std::size_t i = 0; i < orbit.names.size(); ++i)
      data::write_f32((out / "depth" / (orbit.names[i] + ".f32")).string(), orbit.depths[i], data::kDepthMagic);
  }
  std::vector<fs::path> outs = files_under(out);
  // The cache may live outside the output directory.
  outs.erase(std::remove_if(outs.begin(), outs.end(), [](const fs::path& p) { return p.extension() == ".nvsa"; }),
             outs.end());
  json res = {{"frames", orbit.names.size()},
              {"backend", backend->name()},
              {"cache", cache_path},
              {"cache_reused", reused},
              {"cache_entries", set.cache_entries()}};
  write_manifest(out, "enhance", argv, cfg, outs, res);
  return res;
}

// ---- eval ------------------------------------------------------------------

struct ImageScores {
  double psnr = 0, ssim = 0, sharpness = 0;
  int count = 0;
};

inline ImageScores score_pairs(const std::vector<Tensor<float>>& pred, const std::vector<Tensor<float>>& gt) {
  ImageScores s;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.psnr += metrics::psnr(pred[i], gt[i]);
    s.ssim += metrics::ssim(pred[i], gt[i]);
    s.sharpness += metrics::sharpness(pred[i]);
  }
  s.count = static_cast<int>(pred.size());
  if (s.count) s.psnr /= s.count, s.ssim /= s.count, s.sharpness /= s.count;
  return s;
}

// Compares same-named PNGs of two directories; adds Pixel-MSE over the
// predicted frames when cameras and depth maps are supplied.
inline json cmd_eval_images(const fs::path& pred_dir, const fs::path& gt_dir, const std::string& cameras,
                            const std::string& depth_dir) {
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.path().extension() == ".png" && fs::exists(gt_dir / e.path().filename()))
      names.push_back(e.path().stem().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no matching PNG names between " + pred_dir.string() + " and " + gt_dir.string(),
                                     DataFault::kCountMismatch);
  std::vector<Tensor<float>> pred, gt;
  json per = json::array();
  for (const auto& n : names) {
    pred.push_back(data::read_png((pred_dir / (n + ".png")).string()));
    gt.push_back(data::read_png((gt_dir / (n + ".png")).string()));
    if (pred.back().shape() != gt.back().shape()) throw DataError("image size mismatch for " + n);
    per.push_back({{"name", n},
                   {"psnr", metrics::psnr(pred.back(), gt.back())},
                   {"ssim", metrics::ssim(pred.back(), gt.back())},
                   {"sharpness", metrics::sharpness(pred.back())}});
  }
  const auto s = score_pairs(pred, gt);
  json res = {{"images", names.size()}, {"psnr", s.psnr}, {"ssim", s.ssim}, {"sharpness", s.sharpness}, {"per_image", per}};
  if (!cameras.empty() && !depth_dir.empty()) {
    std::map<std::string, geo::Camera> cm;
    for (const auto& nc : geo::read_cameras(cameras)) cm[nc.name] = nc.cam;
    std::vector<geo::Camera> cams;
    std::vector<Tensor<float>> depths;
    for (const auto& n : names) {
      if (!cm.count(n)) throw DataError("no camera for " + n, DataFault::kMissingCameras);
      cams.push_back(cm[n]);
      depths.push_back(data::read_f32((fs::path(depth_dir) / (n + ".f32")).string(), data::kDepthMagic));
    }
    const auto c = metrics::pixel_mse_consistency(pred, cams, depths);
    res["pixel_mse"] = c.mean_mse;
    res["pixel_mse_valid_fraction"] = c.valid_fraction;
    res["pixel_mse_skipped_pairs"] = c.skipped;
  }
  return res;
}

inline json overhead_json(Model& m) {
  const auto r = m.overhead();
  json g = json::object();
  for (const auto& [k, v] : r.groups) g[k] = v;
  return {{"groups", g},
          {"fc", r.fc},
          {"corf", r.corf},
          {"upsampler", r.upsampler},
          {"hidden_head_delta", r.hidden_head_delta},
          {"fc_corf_upsampler", r.fc + r.corf + r.upsampler},
          {"baseline_total", r.baseline_total},
          {"opp_total", r.opp_total},
          {"overhead", r.overhead()}};
}

// Wall-clock of the grid GAN path plus confidence against a full NeRF render
// for the configured model, with exact field-query counts.
inline json timing_report(Model& m, const Tensor<float>& ref_image, const geo::Camera& ref_cam,
                          const render::RenderOptions& samples, int runs) {
  opp::OppRenderer<float> r(m, ref_image, ref_cam, samples);
  const auto full = metrics::time_task([&] { return r.render_nerf(ref_cam, false).queries; }, runs);
  const auto fast = metrics::time_task(
      [&] {
        std::int64_t q = 0;
        r.render_gan_with_conf(ref_cam, &q);
        return q;
      },
      runs);
  return {{"full_queries", full.queries},
          {"grid_queries", fast.queries},
          {"query_ratio", static_cast<double>(full.queries) / static_cast<double>(fast.queries)},
          {"full_seconds", full.median_seconds},
          {"grid_seconds", fast.median_seconds},
          {"full_fps", full.fps()},
          {"grid_fps", fast.fps()},
          {"speedup", full.median_seconds / fast.median_seconds}};
}

// ---- sweep -----------------------------------------------------------------

struct SweepRow {
  double lambda_gan = 0, lambda_per = 0;
  double psnr = 0, ssim = 0, sharpness = 0, pixel_mse = 0;
  double seconds = 0;
};

// Trains, finetunes and scores one model for a (lambda_gan, lambda_per) pair:
// DPF fidelity on the held-out views, Pixel-MSE along a short orbit arc.
inline SweepRow sweep_row(const RunConfig& base, const data::SceneDataset& ds,
                          const std::optional<data::ToySceneSpec>& spec, double lg, double lp) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = base;
  cfg.apply_set(fmt::format("train.lambda_gan={}", lg));
  cfg.apply_set(fmt::format("train.lambda_per={}", lp));
  cfg.apply_set(fmt::format("train.steps={}", base.get<int>("sweep", "steps")));
  cfg.apply_set(fmt::format("train.finetune_steps={}", base.get<int>("sweep", "finetune_steps")));
  Model m(cfg.model());
  opp::Trainer<float> tr(m, ds, cfg.train());
  tr.train();
  tr.finetune_corf();
  const auto& ref = ds.views.at(ds.reference);
  opp::OppRenderer<float> r(m, ref.image, ref.cam, cfg.render_samples(), cfg.train().pipeline);
  std::vector<Tensor<float>> pred, gt;
  for (int v : ds.indices("test")) {
    pred.push_back(r.render_all(ds.views[v].cam).fused);
    gt.push_back(ds.views[v].image);
  }
  const auto s = score_pairs(pred, gt);
  const auto cams = orbit_cameras(ref.cam, base.get<int>("sweep", "orbit_frames"), 30.0, 35.0);
  std::vector<Tensor<float>> frames, depths;
  for (const auto& c : cams) {
    auto bi = r.render_all(c);
    frames.push_back(bi.fused);
    depths.push_back(spec ? data::render_view(*spec, c).depth : bi.depth);
  }
  SweepRow row;
  row.lambda_gan = lg;
  row.lambda_per = lp;
  row.psnr = s.psnr;
  row.ssim = s.ssim;
  row.sharpness = s.sharpness;
  row.pixel_mse = metrics::pixel_mse_consistency(frames, cams, depths).mean_mse;
  row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

inline json cmd_sweep(const RunConfig& cfg, const std::string& data_dir, const fs::path& out,
                      const std::vector<std::string>& argv) {
  fs::create_directories(out);
  const auto ds = data::load_dataset(data_dir);
  const auto spec = load_scene_spec(data_dir);
  const auto lgs = cfg.get<std::vector<double>>("sweep", "lambda_gan");
  const auto lps = cfg.get<std::vector<double>>("sweep", "lambda_per");
  const double lg_fixed = cfg.get<double>("train", "lambda_gan"), lp_fixed = cfg.get<double>("train", "lambda_per");
  std::vector<SweepRow> rows;
  // lambda_per held at its configured value while lambda_gan varies, then the reverse.
  for (double lg : lgs) rows.push_back(sweep_row(cfg, ds, spec, lg, lp_fixed));
  for (double lp : lps) rows.push_back(sweep_row(cfg, ds, spec, lg_fixed, lp));
  std::ofstream os(out / "sweep.tsv");
  os << "lambda_gan\tlambda_per\tpsnr\tssim\tsharpness\tpixel_mse\n";
  json table = json::array();
  for (const auto& r : rows) {
    os << fmt::format("{:g}\t{:g}\t{:.4f}\t{:.4f}\t{:.6f}\t{:.6g}\n", r.lambda_gan, r.lambda_per, r.psnr, r.ssim,
                      r.sharpness, r.pixel_mse);
    table.push_back({{"lambda_gan", r.lambda_gan}, {"lambda_per", r.lambda_per}, {"psnr", r.psnr}, {"ssim", r.ssim},
                     {"sharpness", r.sharpness}, {"pixel_mse", r.pixel_mse}, {"seconds", r.seconds}});
  }
  os.close();
  json res = {{"rows", table}};
  write_manifest(out, "sweep", argv, cfg, files_under(out), res);
  return res;
}

}  // namespace nvs::app
