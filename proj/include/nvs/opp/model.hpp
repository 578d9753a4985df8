#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nvs/field/encoder.hpp"
#include "nvs/field/field.hpp"
#include "nvs/opp/gan.hpp"
#include "nvs/substrate/archive.hpp"
#include "nvs/substrate/optim.hpp"

namespace nvs::opp {

enum class PipelineMode { kTwoStageTandem, kOneStageTandem, kOneStageParallel };

inline std::string to_string(PipelineMode m) {
  switch (m) {
    case PipelineMode::kTwoStageTandem: return "two_stage_tandem";
    case PipelineMode::kOneStageTandem: return "one_stage_tandem";
    case PipelineMode::kOneStageParallel: return "one_stage_parallel";
  }
  return "?";
}

inline PipelineMode parse_pipeline(const std::string& s) {
  if (s == "two_stage_tandem" || s == "two_stage") return PipelineMode::kTwoStageTandem;
  if (s == "one_stage_tandem" || s == "one_stage") return PipelineMode::kOneStageTandem;
  if (s == "one_stage_parallel" || s == "opp") return PipelineMode::kOneStageParallel;
  throw ConfigError("unknown pipeline mode '" + s + "'");
}

struct LossWeights {
  double lambda_gan = defaults::kLambdaGan;
  double lambda_per = defaults::kLambdaPer;
  double r1_gamma = defaults::kR1Gamma;

  void validate() const {
    if (!(lambda_gan >= 0 && lambda_per >= 0 && r1_gamma >= 0)) throw ConfigError("loss weights must be >= 0");
  }
};

struct ModelConfig {
  field::EncoderConfig encoder;
  field::FieldConfig field;
  int image_h = defaults::kImageSize, image_w = defaults::kImageSize;
  int grid_h = defaults::kGridH, grid_w = defaults::kGridW;
  int upsampler_width = 64;
  std::vector<int> disc_channels{32, 64, 128};
  int refiner_width = 32;
  std::uint64_t seed = 0;

  int factor() const { return image_h / grid_h; }

  void validate() const {
    if (grid_h < 1 || grid_w < 1 || image_h % grid_h || image_w % grid_w)
      throw ConfigError("grid size must divide the image size");
    if (image_h / grid_h != image_w / grid_w) throw ConfigError("grid must scale both axes by the same factor");
    const int f = factor();
    if (f & (f - 1)) throw ConfigError("image/grid factor must be a power of two");
    if (image_h % 8 || image_w % 8) throw ConfigError("image size must be divisible by 8");
    if (field.hidden_dim < 1 || field.trunk_width < 1 || field.trunk_layers < 1) throw ConfigError("field widths");
  }

  nlohmann::json to_json() const {
    return {{"encoder_channels", encoder.channels},
            {"trunk_width", field.trunk_width},
            {"trunk_layers", field.trunk_layers},
            {"hidden_dim", field.hidden_dim},
            {"pe_x", field.pe_x},
            {"pe_d", field.pe_d},
            {"corf_width", field.corf_width},
            {"sigma_r_frac", field.sigma_r_frac},
            {"image_h", image_h},
            {"image_w", image_w},
            {"grid_h", grid_h},
            {"grid_w", grid_w},
            {"upsampler_width", upsampler_width},
            {"disc_channels", disc_channels},
            {"refiner_width", refiner_width}};
  }
};

// Image-to-image generator of the two-stage pipeline: a residual conv stack
// refining a finished NeRF render. The last conv starts near zero so training
// begins from the identity.
template <class T>
class ImageRefiner {
 public:
  ParamSet<T> params;

  ImageRefiner() = default;
  ImageRefiner(int width, Rng& rng) {
    c0_ = ad::Conv2d<T>(params, "refiner.conv0", 3, width, 3, rng);
    c1_ = ad::Conv2d<T>(params, "refiner.conv1", width, width, 3, rng);
    c2_ = ad::Conv2d<T>(params, "refiner.conv2", width, 3, 3, rng, 1, 0.1);
  }

  Var<T> operator()(const Var<T>& img) const {
    Var<T> h = ad::leaky_relu(c0_(img));
    h = ad::leaky_relu(c1_(h));
    Var<T> out = ad::add(img, c2_(h));
    if (!out.value().all_finite()) throw DivergenceError("non-finite refiner output");
    return out;
  }

 private:
  ad::Conv2d<T> c0_, c1_, c2_;
};

struct OverheadReport {
  std::map<std::string, std::int64_t> groups;  // exact count per parameter group
  std::int64_t hidden_head_delta = 0;  // hidden colour head minus the plain W->3 head it replaces
  std::int64_t fc = 0, corf = 0, upsampler = 0;
  std::int64_t baseline_total = 0;  // encoder + field with a plain RGB head
  std::int64_t opp_total = 0;       // encoder + field + fc + corf + upsampler
  std::int64_t overhead() const { return opp_total - baseline_total; }
};

// Every network of the three pipelines, split into named parameter groups.
template <class T>
class OppModel {
 public:
  ModelConfig cfg;
  ParamSet<T> encoder_params;
  field::Encoder<T> encoder;
  field::DualHeadField<T> field;
  field::CorfNet<T> corf;
  Upsampler<T> upsampler;
  ImageRefiner<T> refiner;
  Discriminator<T> disc;

  explicit OppModel(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    // One stream per network so widening one leaves the others' init intact.
    SeedTree seeds(cfg.seed);
    Rng r_enc = seeds.stream("encoder"), r_field = seeds.stream("field"), r_corf = seeds.stream("corf"),
        r_up = seeds.stream("upsampler"), r_ref = seeds.stream("refiner"), r_disc = seeds.stream("disc");
    encoder = field::Encoder<T>(encoder_params, cfg.encoder, r_enc);
    const int fd = cfg.encoder.feature_dim();
    field = field::DualHeadField<T>(cfg.field, fd, r_field);
    corf = field::CorfNet<T>(cfg.field, fd, r_corf);
    upsampler = Upsampler<T>(cfg.field.hidden_dim, cfg.factor(), r_up, cfg.upsampler_width);
    refiner = ImageRefiner<T>(cfg.refiner_width, r_ref);
    disc = Discriminator<T>(cfg.image_h, cfg.image_w, r_disc, cfg.disc_channels);
  }

  OppModel(const OppModel&) = delete;
  OppModel& operator=(const OppModel&) = delete;

  std::vector<std::pair<std::string, ParamSet<T>*>> groups() {
    return {{"encoder", &encoder_params}, {"field", &field.trunk_params}, {"fc", &field.fc_params},
            {"corf", &corf.params},       {"upsampler", &upsampler.params}, {"refiner", &refiner.params},
            {"discriminator", &disc.params}};
  }

  ParamSet<T>& group(const std::string& name) {
    for (auto& [n, ps] : groups())
      if (n == name) return *ps;
    throw ConfigError("unknown parameter group '" + name + "'");
  }

  ParamSet<T> collect(const std::vector<std::string>& names) {
    ParamSet<T> out;
    for (const auto& n : names) out.append(group(n));
    return out;
  }

  void set_all_trainable(bool on) {
    for (auto& [n, ps] : groups()) ps->set_trainable(on);
  }

  OverheadReport overhead() {
    OverheadReport r;
    for (auto& [n, ps] : groups()) r.groups[n] = ps->count();
    const std::int64_t W = cfg.field.trunk_width, h = cfg.field.hidden_dim;
    r.hidden_head_delta = (W * h + h) - (W * 3 + 3);
    r.fc = r.groups["fc"];
    r.corf = r.groups["corf"];
    r.upsampler = r.groups["upsampler"];
    const std::int64_t trunk_wo_hidden = r.groups["field"] - (W * h + h);
    r.baseline_total = r.groups["encoder"] + trunk_wo_hidden + (W * 3 + 3);
    r.opp_total = r.groups["encoder"] + r.groups["field"] + r.fc + r.corf + r.upsampler;
    return r;
  }

  std::string config_hash() const {
    // Layout identity only; seeds and training knobs do not enter.
    return fmt::format("{:016x}", fnv1a(cfg.to_json().dump()));
  }
};

// Optimizer state saved next to the weights, keyed by the optimizer's name.
template <class T>
struct NamedOptimizer {
  std::string name;
  ad::Adam<T>* opt = nullptr;
};

template <class T>
void save_checkpoint(OppModel<T>& m, const std::string& path, std::int64_t step,
                     const std::vector<NamedOptimizer<T>>& opts = {}, const nlohmann::json& extra = {}) {
  ad::ArchiveWriter w;
  for (auto& [g, ps] : m.groups())
    for (const auto& e : ps->entries()) w.add("param/" + e.name, e.var.value());
  for (const auto& no : opts) {
    const auto& st = no.opt->state();
    const auto& ps = no.opt->params();
    for (std::size_t i = 0; i < ps.size(); ++i) {
      w.add("optim/" + no.name + "/m/" + ps[i].name(), st.first_moment[i]);
      w.add("optim/" + no.name + "/v/" + ps[i].name(), st.second_moment[i]);
    }
    w.set_meta("optim_step/" + no.name, st.step);
  }
  w.set_meta("step", step);
  w.set_meta("config_hash", m.config_hash());
  w.set_meta("model", m.cfg.to_json());
  if (!extra.is_null()) w.set_meta("extra", extra);
  w.write(path);
}

// Restores weights (and any optimizer moments present). A file written for a
// different model layout is rejected before anything is modified.
template <class T>
std::int64_t load_checkpoint(OppModel<T>& m, const std::string& path, const std::vector<NamedOptimizer<T>>& opts = {},
                             nlohmann::json* extra = nullptr) {
  ad::ArchiveReader r(path);
  if (!r.meta().contains("config_hash") || r.meta()["config_hash"] != m.config_hash())
    throw CheckpointError("checkpoint " + path + " was written for a different model configuration");
  std::vector<std::pair<Var<T>, Tensor<T>>> staged;
  for (auto& [g, ps] : m.groups())
    for (const auto& e : ps->entries()) {
      Tensor<T> t = r.get<T>("param/" + e.name);
      if (t.shape() != e.var.shape()) throw CheckpointError("shape mismatch for parameter " + e.name);
      staged.emplace_back(e.var, std::move(t));
    }
  for (auto& [v, t] : staged) {
    Var<T> var = v;
    var.mutable_value() = std::move(t);
  }
  for (const auto& no : opts) {
    auto& st = no.opt->state();
    const auto& ps = no.opt->params();
    const std::string key = "optim_step/" + no.name;
    if (!r.meta().contains(key)) continue;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      st.first_moment[i] = r.get<T>("optim/" + no.name + "/m/" + ps[i].name());
      st.second_moment[i] = r.get<T>("optim/" + no.name + "/v/" + ps[i].name());
    }
    st.step = r.meta()[key].template get<std::int64_t>();
  }
  if (extra && r.meta().contains("extra")) *extra = r.meta()["extra"];
  return r.meta().value("step", std::int64_t{0});
}

}  // namespace nvs::opp
