#include <CLI11.hpp>
#include <iostream>

#include "nvs/app/commands.hpp"

using namespace nvs;
using nvs::ad::Tensor;
using nvs::app::json;
namespace fs = std::filesystem;

namespace {

// One line on stderr: error code=<name> exit=<n> message="<escaped>".
int fail(const char* code, int exit_code, const std::string& message) {
  std::cerr << "error code=" << code << " exit=" << exit_code << " message=" << json(message).dump() << std::endl;
  return exit_code;
}

void print_report(const json& j, const std::string& prefix = "") {
  for (const auto& [k, v] : j.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (v.is_object()) print_report(v, key);
    else std::cout << key << ": " << v.dump() << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"nvsgen: one-shot novel view synthesis toolkit"};
  app.require_subcommand(1);
  std::string config_file, log_level = "info";
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "JSON config file (or a manifest.json to re-run)");
  app.add_option("--set", sets, "Override: section.key=value (repeatable)")->take_all();
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  std::string data_dir, out_dir, checkpoint, resume, orbit_dir, cache, denoiser, split = "test";
  std::string pred_dir, gt_dir, cameras, depth_dir;
  int pose_index = -1, timing_runs = 5;
  bool orbit = false, rebuild = false, params = false, timing = false;

  auto* mk = app.add_subcommand("make-dataset", "Render a procedural toy scene into a dataset directory");
  mk->add_option("--out", out_dir, "Dataset directory")->required();

  auto* tr = app.add_subcommand("train-opp", "Train the OPP model on a dataset");
  tr->add_option("--data", data_dir)->required();
  tr->add_option("--out", out_dir)->required();
  tr->add_option("--resume", resume, "Checkpoint to continue from");

  auto* ft = app.add_subcommand("finetune-corf", "Finetune the confidence net with everything else frozen");
  ft->add_option("--data", data_dir)->required();
  ft->add_option("--checkpoint", checkpoint)->required();
  ft->add_option("--out", out_dir)->required();

  auto* rd = app.add_subcommand("render", "Render NeRF, GAN, confidence and fused images");
  rd->add_option("--data", data_dir)->required();
  rd->add_option("--checkpoint", checkpoint)->required();
  rd->add_option("--out", out_dir)->required();
  auto* pi = rd->add_option("--pose-index", pose_index, "Render one dataset view");
  auto* ob = rd->add_flag("--orbit", orbit, "Render an orbit around the object");
  rd->add_option("--split", split, "Dataset split to render (default test)");
  pi->excludes(ob);

  auto* en = app.add_subcommand("enhance", "Enhance a rendered orbit with keyframe-guided diffusion");
  en->add_option("--data", data_dir)->required();
  en->add_option("--checkpoint", checkpoint)->required();
  en->add_option("--orbit", orbit_dir, "A render output directory")->required();
  en->add_option("--out", out_dir)->required();
  en->add_option("--cache", cache, "Keyframe cache archive (built when missing)");
  en->add_flag("--rebuild-cache", rebuild, "Rebuild the keyframe cache even if it exists");
  en->add_option("--denoiser", denoiser, "Trained toy denoiser archive to reuse");

  auto* ev = app.add_subcommand("eval", "Score images, itemize parameters, or time the render paths");
  ev->add_option("--pred", pred_dir, "Directory of predicted PNGs");
  ev->add_option("--gt", gt_dir, "Directory of reference PNGs with the same names");
  ev->add_option("--cameras", cameras, "cameras.txt for Pixel-MSE");
  ev->add_option("--depth", depth_dir, "Depth maps (<name>.f32) for Pixel-MSE");
  ev->add_flag("--params", params, "Itemize parameter groups and the OPP overhead");
  ev->add_flag("--timing", timing, "Time the grid GAN+confidence path against a full NeRF render");
  ev->add_option("--timing-runs", timing_runs, "Repetitions per timed path (>= 5)");
  ev->add_option("--data", data_dir, "Dataset for the timing reference view");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint for --params/--timing");
  ev->add_option("--out", out_dir, "Write eval.json here");

  auto* sw = app.add_subcommand("sweep", "Train over a grid of generative loss weights");
  sw->add_option("--data", data_dir)->required();
  sw->add_option("--out", out_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("config_error", 2, e.what());
  }

  try {
    spdlog::set_level(spdlog::level::from_str(log_level));
    app::RunConfig cfg;
    if (!config_file.empty()) cfg.merge_file(config_file);
    for (const auto& s : sets) cfg.apply_set(s);

    json res;
    if (mk->parsed()) {
      res = app::cmd_make_dataset(cfg, out_dir, args);
    } else if (tr->parsed()) {
      res = app::cmd_train(cfg, data_dir, out_dir, resume, args);
    } else if (ft->parsed()) {
      res = app::cmd_finetune(cfg, data_dir, checkpoint, out_dir, args);
    } else if (rd->parsed()) {
      res = app::cmd_render(cfg, data_dir, checkpoint, out_dir, pose_index, orbit, split, args);
    } else if (en->parsed()) {
      res = app::cmd_enhance(cfg, data_dir, checkpoint, orbit_dir, out_dir, cache, rebuild, denoiser, args);
    } else if (ev->parsed()) {
      if (pred_dir.empty() != gt_dir.empty()) throw ConfigError("eval needs both --pred and --gt");
      if (pred_dir.empty() && !params && !timing) throw ConfigError("eval needs --pred/--gt, --params or --timing");
      if (!pred_dir.empty()) res["images"] = app::cmd_eval_images(pred_dir, gt_dir, cameras, depth_dir);
      if (params || timing) {
        app::Model m(cfg.model());
        if (!checkpoint.empty()) opp::load_checkpoint(m, checkpoint);
        if (params) res["params"] = app::overhead_json(m);
        if (timing) {
          Tensor<float> ref_img;
          geo::Camera ref_cam;
          if (!data_dir.empty()) {
            const auto ds = data::load_dataset(data_dir);
            ref_img = ds.views.at(ds.reference).image;
            ref_cam = ds.views.at(ds.reference).cam;
          } else {
            // No dataset: a synthetic scene at the model's resolution.
            auto vs = cfg.view_set();
            vs.n_views = 1;
            ref_cam = data::view_set(vs).front();
            ref_img = data::render_view(data::random_scene_spec(cfg.seed()), ref_cam).image;
          }
          if (ref_cam.height != m.cfg.image_h || ref_cam.width != m.cfg.image_w)
            throw ConfigError("timing reference view does not match the model resolution");
          res["timing"] = app::timing_report(m, ref_img, ref_cam, cfg.render_samples(), timing_runs);
        }
      }
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream(fs::path(out_dir) / "eval.json") << res.dump(2) << "\n";
        app::write_manifest(out_dir, "eval", args, cfg, {fs::path(out_dir) / "eval.json"});
      }
    } else if (sw->parsed()) {
      res = app::cmd_sweep(cfg, data_dir, out_dir, args);
      std::cout << "lambda_gan\tlambda_per\tpsnr\tssim\tsharpness\tpixel_mse\n";
      for (const auto& r : res["rows"])
        std::cout << fmt::format("{:g}\t{:g}\t{:.4f}\t{:.4f}\t{:.6f}\t{:.6g}\n", r["lambda_gan"].get<double>(),
                                 r["lambda_per"].get<double>(), r["psnr"].get<double>(), r["ssim"].get<double>(),
                                 r["sharpness"].get<double>(), r["pixel_mse"].get<double>());
      return 0;
    }
    print_report(res);
    return 0;
  } catch (const DataError& e) {
    return fail(fmt::format("data_error.{}", data_fault_name(e.fault)).c_str(), 3, e.what());
  } catch (const Error& e) {
    return fail(error_code_name(e.code()), static_cast<int>(e.code()), e.what());
  } catch (const ContractError& e) {
    return fail("internal_error", 1, e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", 1, e.what());
  }
}
