#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dis/metrics.hpp"
#include "dis/png.hpp"
#include "dis/stages.hpp"

namespace dis {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Experiment configuration: strict JSON (unknown keys rejected by name).
// The published schema lives in docs/config_schema.json.
// ---------------------------------------------------------------------------

struct SceneConfig {
  std::string recipe = "sphere_boxes";
  std::string path;  // nonempty: load a saved dataset instead of synthesizing
  SynthConfig synth;
};

struct ModelConfig {
  std::string brdf = "literal";  // literal | microfacet
  FieldResolutions res;
  int probe_lat = 16, probe_lon = 32;
  double init_albedo = 0.5;          // albedo/color field starting value
  double init_probe_radiance = 0.1;  // probe radiance starting value
};

struct EvalConfig {
  int cd_samples = 20000;
  bool relight = true;
};

struct ExperimentConfig {
  uint64_t seed = 1;
  std::string output_dir = "out";
  SceneConfig scene;
  ModelConfig model;
  LossWeights weights;
  std::vector<std::string> stages = {"stage1", "stage2", "stage3"};
  StageConfig stage1, stage2, stage3;
  EvalConfig eval;

  ExperimentConfig() {
    stage1.epochs = 60;
    stage2.epochs = 60;
    stage3.epochs = 30;
    stage1.prior.kind = NormalPriorKind::kGtNoisy;
    stage1.prior.noise_sigma_deg = 5.0;
  }
};

namespace cfg_detail {

inline void check_keys(const json& j, const std::string& path, const std::set<std::string>& allowed) {
  if (!j.is_object())
    throw ConfigurationError("config: " + (path.empty() ? std::string("root") : path) +
                             " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key()))
      throw ConfigurationError("config: unknown key " +
                               (path.empty() ? it.key() : path + "." + it.key()));
}

template <typename T>
inline void read(const json& j, const std::string& path, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigurationError("config: bad value type for " +
                             (path.empty() ? std::string(key) : path + "." + key));
  }
}

inline NormalPriorKind parse_prior_kind(const std::string& s) {
  if (s == "identity") return NormalPriorKind::kIdentity;
  if (s == "gt_noisy") return NormalPriorKind::kGtNoisy;
  if (s == "external") return NormalPriorKind::kExternal;
  throw ConfigurationError("config: unknown prior kind " + s);
}

inline const char* prior_kind_name(NormalPriorKind k) {
  switch (k) {
    case NormalPriorKind::kIdentity: return "identity";
    case NormalPriorKind::kGtNoisy: return "gt_noisy";
    case NormalPriorKind::kExternal: return "external";
  }
  return "identity";
}

inline void parse_stage(const json& j, const std::string& path, StageConfig& s) {
  check_keys(j, path,
             {"epochs", "lr_fields", "lr_offsets", "warmup_epochs", "prior_refresh", "prior_kind",
              "prior_sigma_deg", "prior_seed", "prior_dir", "k_vis", "deshade_kind", "deshade_dir",
              "shading_floor"});
  read(j, path, "epochs", s.epochs);
  read(j, path, "lr_fields", s.lr_fields);
  read(j, path, "lr_offsets", s.lr_offsets);
  read(j, path, "warmup_epochs", s.warmup_epochs);
  read(j, path, "prior_refresh", s.prior_refresh);
  if (j.contains("prior_kind")) {
    std::string kind;
    read(j, path, "prior_kind", kind);
    s.prior.kind = parse_prior_kind(kind);
  }
  read(j, path, "prior_sigma_deg", s.prior.noise_sigma_deg);
  read(j, path, "prior_seed", s.prior.seed);
  read(j, path, "prior_dir", s.prior.external_directory);
  read(j, path, "k_vis", s.k_vis);
  read(j, path, "deshade_kind", s.deshade_kind);
  read(j, path, "deshade_dir", s.deshade_directory);
  read(j, path, "shading_floor", s.shading_floor);
  if (s.epochs < 0) throw ConfigurationError("config: " + path + ".epochs must be >= 0");
}

}  // namespace cfg_detail

inline ExperimentConfig parse_experiment_config(const json& j) {
  using namespace cfg_detail;
  ExperimentConfig c;
  check_keys(j, "",
             {"seed", "output_dir", "scene", "model", "weights", "stages", "stage1", "stage2",
              "stage3", "ablation", "eval"});
  read(j, "", "seed", c.seed);
  read(j, "", "output_dir", c.output_dir);
  read(j, "", "stages", c.stages);
  for (const auto& name : c.stages)
    if (name != "stage1" && name != "stage2" && name != "stage3")
      throw ConfigurationError("config: unknown stage name " + name);

  if (j.contains("scene")) {
    const json& s = j.at("scene");
    check_keys(s, "scene",
               {"recipe", "path", "width", "height", "views", "frames", "n_lights", "probe_lat",
                "probe_lon", "mismatch", "displacement", "offset_res"});
    read(s, "scene", "recipe", c.scene.recipe);
    read(s, "scene", "path", c.scene.path);
    read(s, "scene", "width", c.scene.synth.width);
    read(s, "scene", "height", c.scene.synth.height);
    read(s, "scene", "views", c.scene.synth.views);
    read(s, "scene", "frames", c.scene.synth.frames);
    read(s, "scene", "n_lights", c.scene.synth.n_lights);
    read(s, "scene", "probe_lat", c.scene.synth.probe_lat);
    read(s, "scene", "probe_lon", c.scene.synth.probe_lon);
    read(s, "scene", "mismatch", c.scene.synth.mismatch);
    read(s, "scene", "displacement", c.scene.synth.displacement);
    read(s, "scene", "offset_res", c.scene.synth.offset_res);
  }
  if (j.contains("model")) {
    const json& m = j.at("model");
    check_keys(m, "model",
               {"brdf", "offset_res", "color_res", "albedo_res", "roughness_res", "probe_lat",
                "probe_lon", "init_albedo", "init_probe_radiance"});
    read(m, "model", "brdf", c.model.brdf);
    if (c.model.brdf != "literal" && c.model.brdf != "microfacet")
      throw ConfigurationError("config: unknown brdf mode " + c.model.brdf);
    read(m, "model", "offset_res", c.model.res.offset);
    read(m, "model", "color_res", c.model.res.color);
    read(m, "model", "albedo_res", c.model.res.albedo);
    read(m, "model", "roughness_res", c.model.res.roughness);
    read(m, "model", "probe_lat", c.model.probe_lat);
    read(m, "model", "probe_lon", c.model.probe_lon);
    read(m, "model", "init_albedo", c.model.init_albedo);
    read(m, "model", "init_probe_radiance", c.model.init_probe_radiance);
    if (c.model.init_albedo < 0.0 || c.model.init_albedo > 1.0 ||
        c.model.init_probe_radiance < 0.0)
      throw ConfigurationError("config: model init values out of range");
  }
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_keys(w, "weights",
               {"w_mse", "w_ssim", "w_edge", "w_normal", "w_laplacian", "w_albedo_prior"});
    read(w, "weights", "w_mse", c.weights.w_mse);
    read(w, "weights", "w_ssim", c.weights.w_ssim);
    read(w, "weights", "w_edge", c.weights.w_edge);
    read(w, "weights", "w_normal", c.weights.w_normal);
    read(w, "weights", "w_laplacian", c.weights.w_laplacian);
    read(w, "weights", "w_albedo_prior", c.weights.w_albedo_prior);
    c.weights.validate();
  }
  if (j.contains("stage1")) cfg_detail::parse_stage(j.at("stage1"), "stage1", c.stage1);
  if (j.contains("stage2")) cfg_detail::parse_stage(j.at("stage2"), "stage2", c.stage2);
  if (j.contains("stage3")) cfg_detail::parse_stage(j.at("stage3"), "stage3", c.stage3);
  if (j.contains("ablation")) {
    const json& a = j.at("ablation");
    check_keys(a, "ablation", {"use_o2n", "train_vertex_offsets"});
    bool use_o2n = true, train_voff = true;
    read(a, "ablation", "use_o2n", use_o2n);
    read(a, "ablation", "train_vertex_offsets", train_voff);
    for (StageConfig* s : {&c.stage1, &c.stage2, &c.stage3}) {
      s->use_o2n = use_o2n;
      s->train_vertex_offsets = train_voff;
    }
  }
  if (j.contains("eval")) {
    const json& e = j.at("eval");
    check_keys(e, "eval", {"cd_samples", "relight"});
    read(e, "eval", "cd_samples", c.eval.cd_samples);
    read(e, "eval", "relight", c.eval.relight);
  }
  // stage weights mirror the top-level weights block
  c.stage1.weights = c.weights;
  c.stage2.weights = c.weights;
  c.stage3.weights = c.weights;
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_experiment_config: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigurationError("config: " + path + ": " + e.what());
  }
  return parse_experiment_config(j);
}

// Canonical echo of a config (nlohmann keeps keys sorted, so dumps are
// deterministic) — used for hashing and for the report.
inline json config_to_json(const ExperimentConfig& c) {
  using cfg_detail::prior_kind_name;
  auto stage_json = [](const StageConfig& s) {
    return json{{"epochs", s.epochs},
                {"lr_fields", s.lr_fields},
                {"lr_offsets", s.lr_offsets},
                {"warmup_epochs", s.warmup_epochs},
                {"prior_refresh", s.prior_refresh},
                {"prior_kind", prior_kind_name(s.prior.kind)},
                {"prior_sigma_deg", s.prior.noise_sigma_deg},
                {"prior_seed", s.prior.seed},
                {"prior_dir", s.prior.external_directory},
                {"k_vis", s.k_vis},
                {"deshade_kind", s.deshade_kind},
                {"deshade_dir", s.deshade_directory},
                {"shading_floor", s.shading_floor}};
  };
  return json{
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"scene",
       {{"recipe", c.scene.recipe},
        {"path", c.scene.path},
        {"width", c.scene.synth.width},
        {"height", c.scene.synth.height},
        {"views", c.scene.synth.views},
        {"frames", c.scene.synth.frames},
        {"n_lights", c.scene.synth.n_lights},
        {"probe_lat", c.scene.synth.probe_lat},
        {"probe_lon", c.scene.synth.probe_lon},
        {"mismatch", c.scene.synth.mismatch},
        {"displacement", c.scene.synth.displacement},
        {"offset_res", c.scene.synth.offset_res}}},
      {"model",
       {{"brdf", c.model.brdf},
        {"offset_res", c.model.res.offset},
        {"color_res", c.model.res.color},
        {"albedo_res", c.model.res.albedo},
        {"roughness_res", c.model.res.roughness},
        {"probe_lat", c.model.probe_lat},
        {"probe_lon", c.model.probe_lon},
        {"init_albedo", c.model.init_albedo},
        {"init_probe_radiance", c.model.init_probe_radiance}}},
      {"weights",
       {{"w_mse", c.weights.w_mse},
        {"w_ssim", c.weights.w_ssim},
        {"w_edge", c.weights.w_edge},
        {"w_normal", c.weights.w_normal},
        {"w_laplacian", c.weights.w_laplacian},
        {"w_albedo_prior", c.weights.w_albedo_prior}}},
      {"stages", c.stages},
      {"stage1", stage_json(c.stage1)},
      {"stage2", stage_json(c.stage2)},
      {"stage3", stage_json(c.stage3)},
      {"ablation",
       {{"use_o2n", c.stage1.use_o2n}, {"train_vertex_offsets", c.stage1.train_vertex_offsets}}},
      {"eval", {{"cd_samples", c.eval.cd_samples}, {"relight", c.eval.relight}}}};
}

inline std::string config_hash(const ExperimentConfig& c) {
  std::string s = config_to_json(c).dump();
  uint64_t h = 1469598103934665603ULL;  // FNV-1a
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Dataset on-disk archive: meta.json + OBJ + PFM images + containers.
// ---------------------------------------------------------------------------

namespace ds_detail {

inline json transform_json(const RigidTransform& t) {
  json r = json::array();
  for (double v : t.rotation.m) r.push_back(v);
  return json{{"rotation", r}, {"translation", {t.translation.x, t.translation.y, t.translation.z}}};
}

inline RigidTransform transform_from_json(const json& j) {
  RigidTransform t;
  for (int i = 0; i < 9; ++i) t.rotation.m[i] = j.at("rotation").at(i).get<double>();
  t.translation = {j.at("translation").at(0).get<double>(), j.at("translation").at(1).get<double>(),
                   j.at("translation").at(2).get<double>()};
  return t;
}

inline void save_corr(const std::string& path, const std::vector<int>& corr) {
  std::ofstream f(path);
  if (!f) throw IoError("save_dataset: cannot open " + path);
  f << corr.size() << "\n";
  for (int v : corr) f << v << "\n";
}

inline std::vector<int> load_corr(const std::string& path, size_t expected) {
  std::ifstream f(path);
  if (!f) throw IoError("load_dataset: cannot open " + path);
  size_t n = 0;
  f >> n;
  if (n != expected) throw IoError("load_dataset: " + path + ": correspondence count mismatch");
  std::vector<int> corr(n);
  for (size_t i = 0; i < n; ++i)
    if (!(f >> corr[i])) throw IoError("load_dataset: " + path + ": truncated");
  return corr;
}

inline Image mask_to_image(const Mask& m) {
  Image img(m.width, m.height, 1);
  for (size_t i = 0; i < m.bits.size(); ++i) img.data[i] = m.bits[i] ? 1.0 : 0.0;
  return img;
}

inline Mask image_to_mask(const Image& img) {
  Mask m(img.width, img.height);
  for (size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.data[i] > 0.5 ? 1 : 0;
  return m;
}

}  // namespace ds_detail

inline void save_dataset(const SceneDataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  using namespace ds_detail;
  fs::create_directories(fs::path(dir) / "previews");

  json meta{{"format", "dis-dataset-v1"},
            {"recipe", ds.recipe},
            {"seed", ds.seed},
            {"width", ds.width},
            {"height", ds.height},
            {"views", ds.view_count()},
            {"frames", ds.frame_count()},
            {"mismatch", ds.mismatch},
            {"probe_lat", ds.gt_probes.n_lat},
            {"probe_lon", ds.gt_probes.n_lon},
            {"skinned", ds.mesh.bone_count > 0}};
  json cams = json::array();
  for (const Camera& c : ds.cameras)
    cams.push_back(json{{"fx", c.fx},
                        {"fy", c.fy},
                        {"cx", c.cx},
                        {"cy", c.cy},
                        {"width", c.width},
                        {"height", c.height},
                        {"world_to_camera", transform_json(c.world_to_camera)}});
  meta["cameras"] = cams;
  json poses = json::array();
  for (const Pose& p : ds.poses) {
    json bones = json::array();
    for (const auto& t : p.bone_transforms) bones.push_back(transform_json(t));
    poses.push_back(json{{"frame_index", p.frame_index}, {"bones", bones}});
  }
  meta["poses"] = poses;
  std::ofstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw IoError("save_dataset: cannot open meta.json in " + dir);
  mf << meta.dump(2) << "\n";

  save_obj((fs::path(dir) / "mesh.obj").string(), ds.mesh);
  if (ds.mesh.bone_count > 0)
    save_skinning_weights((fs::path(dir) / "skinning.txt").string(), ds.mesh);
  save_field((fs::path(dir) / "gt_offset.fld").string(), ds.gt_offset);
  save_pfm((fs::path(dir) / "gt_probes.pfm").string(), probes_to_image(ds.gt_probes));

  for (int v = 0; v < ds.view_count(); ++v) {
    for (int f = 0; f < ds.frame_count(); ++f) {
      const FrameData& fd = ds.at(v, f);
      auto p = [&](const std::string& kind) {
        return (fs::path(dir) / frame_image_name(v, f, kind)).string();
      };
      save_pfm(p("rgb"), fd.rgb);
      save_pfm(p("normal"), fd.normal);
      save_pfm(p("albedo"), fd.albedo);
      save_pfm(p("shading"), fd.shading);
      save_pfm(p("mask"), mask_to_image(fd.mask));
      save_corr((fs::path(dir) / (frame_image_name(v, f, "corr") + ".txt")).string(), fd.corr);
      char buf[64];
      std::snprintf(buf, sizeof(buf), "v%02d_f%06d", v, f);
      save_png((fs::path(dir) / "previews" / (std::string(buf) + "_rgb.png")).string(), fd.rgb);
      save_png((fs::path(dir) / "previews" / (std::string(buf) + "_normal.png")).string(),
               encode_normal_map(fd.normal), 1.0);
    }
  }
}

inline SceneDataset load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  using namespace ds_detail;
  std::ifstream mf(fs::path(dir) / "meta.json");
  if (!mf) throw IoError("load_dataset: cannot open meta.json in " + dir);
  json meta;
  try {
    mf >> meta;
  } catch (const json::exception& e) {
    throw IoError("load_dataset: " + dir + "/meta.json: " + e.what());
  }
  if (meta.value("format", "") != "dis-dataset-v1")
    throw IoError("load_dataset: " + dir + ": unknown dataset format");

  SceneDataset ds;
  ds.recipe = meta.at("recipe").get<std::string>();
  ds.seed = meta.at("seed").get<uint64_t>();
  ds.width = meta.at("width").get<int>();
  ds.height = meta.at("height").get<int>();
  ds.mismatch = meta.at("mismatch").get<bool>();
  for (const json& cj : meta.at("cameras")) {
    Camera c;
    c.fx = cj.at("fx").get<double>();
    c.fy = cj.at("fy").get<double>();
    c.cx = cj.at("cx").get<double>();
    c.cy = cj.at("cy").get<double>();
    c.width = cj.at("width").get<int>();
    c.height = cj.at("height").get<int>();
    c.world_to_camera = transform_from_json(cj.at("world_to_camera"));
    ds.cameras.push_back(c);
  }
  for (const json& pj : meta.at("poses")) {
    Pose p;
    p.frame_index = pj.at("frame_index").get<int>();
    for (const json& bj : pj.at("bones")) p.bone_transforms.push_back(transform_from_json(bj));
    ds.poses.push_back(p);
  }

  ds.mesh = load_obj((fs::path(dir) / "mesh.obj").string());
  if (meta.at("skinned").get<bool>())
    load_skinning_weights((fs::path(dir) / "skinning.txt").string(), ds.mesh);
  if (ds.mesh.vertex_normals.size() != ds.mesh.vertex_count()) update_vertex_normals(ds.mesh);
  ds.gt_offset = load_field((fs::path(dir) / "gt_offset.fld").string());
  ds.gt_probes =
      probe_sphere(meta.at("probe_lat").get<int>(), meta.at("probe_lon").get<int>());
  probes_from_image(ds.gt_probes, load_pfm((fs::path(dir) / "gt_probes.pfm").string()));

  int views = meta.at("views").get<int>(), frames = meta.at("frames").get<int>();
  size_t np = static_cast<size_t>(ds.width) * ds.height;
  ds.frames_by_view.assign(views, std::vector<FrameData>(frames));
  for (int v = 0; v < views; ++v) {
    for (int f = 0; f < frames; ++f) {
      FrameData& fd = ds.frames_by_view[v][f];
      auto p = [&](const std::string& kind) {
        return (fs::path(dir) / frame_image_name(v, f, kind)).string();
      };
      fd.rgb = load_pfm(p("rgb"));
      fd.normal = load_pfm(p("normal"));
      fd.albedo = load_pfm(p("albedo"));
      fd.shading = load_pfm(p("shading"));
      fd.mask = image_to_mask(load_pfm(p("mask")));
      fd.corr = load_corr((fs::path(dir) / (frame_image_name(v, f, "corr") + ".txt")).string(), np);
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Checkpoints: field containers + probe image + vertex-offset text + manifest.
// ---------------------------------------------------------------------------

inline void save_checkpoint(const SceneState& s, const std::string& dir, const std::string& stage,
                            int64_t step, const std::string& cfg_hash) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  save_field((fs::path(dir) / "offset.fld").string(), s.offset_field);
  save_field((fs::path(dir) / "color.fld").string(), s.color_field);
  save_field((fs::path(dir) / "albedo.fld").string(), s.albedo_field);
  save_field((fs::path(dir) / "roughness.fld").string(), s.roughness_field);
  save_pfm((fs::path(dir) / "probes.pfm").string(), probes_to_image(s.probes));
  std::ofstream vf(fs::path(dir) / "vertex_offsets.txt");
  if (!vf) throw IoError("save_checkpoint: cannot open vertex_offsets.txt in " + dir);
  vf << s.vertex_offsets.values.size() << "\n";
  vf.precision(17);
  for (double v : s.vertex_offsets.values) vf << v << "\n";
  json manifest{{"format", "dis-checkpoint-v1"},
                {"stage", stage},
                {"step", step},
                {"config_hash", cfg_hash},
                {"brdf", s.mode == BrdfMode::kLiteral ? "literal" : "microfacet"},
                {"probe_lat", s.probes.n_lat},
                {"probe_lon", s.probes.n_lon},
                {"vertex_count", s.base_mesh.vertex_count()}};
  std::ofstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("save_checkpoint: cannot open manifest.json in " + dir);
  mf << manifest.dump(2) << "\n";
}

// Restores learnable values into a compatibly initialized state (Adam
// moments reset; a checkpoint stores the model, not the optimizer).
inline json load_checkpoint(SceneState& s, const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream mf(fs::path(dir) / "manifest.json");
  if (!mf) throw IoError("load_checkpoint: cannot open manifest.json in " + dir);
  json manifest;
  try {
    mf >> manifest;
  } catch (const json::exception& e) {
    throw IoError("load_checkpoint: " + dir + "/manifest.json: " + e.what());
  }
  if (manifest.value("format", "") != "dis-checkpoint-v1")
    throw IoError("load_checkpoint: " + dir + ": unknown checkpoint format");
  if (manifest.at("vertex_count").get<size_t>() != s.base_mesh.vertex_count())
    throw IoError("load_checkpoint: " + dir + ": vertex count mismatch");

  auto load_into = [&](const char* name, UVField& f) {
    UVField loaded = load_field((fs::path(dir) / name).string());
    if (loaded.width != f.width || loaded.height != f.height || loaded.channels != f.channels)
      throw IoError("load_checkpoint: " + dir + "/" + name + ": field shape mismatch");
    loaded.range_clamp = f.range_clamp;
    f = std::move(loaded);
  };
  load_into("offset.fld", s.offset_field);
  load_into("color.fld", s.color_field);
  load_into("albedo.fld", s.albedo_field);
  load_into("roughness.fld", s.roughness_field);
  Image probe_img = load_pfm((fs::path(dir) / "probes.pfm").string());
  probes_from_image(s.probes, probe_img);

  std::ifstream vf(fs::path(dir) / "vertex_offsets.txt");
  if (!vf) throw IoError("load_checkpoint: cannot open vertex_offsets.txt in " + dir);
  size_t n = 0;
  vf >> n;
  if (n != s.base_mesh.vertex_count())
    throw IoError("load_checkpoint: " + dir + ": vertex offset count mismatch");
  s.vertex_offsets.values.resize(n);
  for (size_t i = 0; i < n; ++i)
    if (!(vf >> s.vertex_offsets.values[i]))
      throw IoError("load_checkpoint: " + dir + "/vertex_offsets.txt: truncated");
  return manifest;
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

// Deterministic held-out environment: a warm key light, cool sky band, and a
// dim floor, sampled from a continuous function so any grid resolution sees
// the same radiance field.
inline Image holdout_envmap(int n_lat, int n_lon) {
  Image img(n_lon, n_lat, 3);
  for (int i = 0; i < n_lat; ++i) {
    double theta = kPi * (i + 0.5) / n_lat;
    for (int j = 0; j < n_lon; ++j) {
      double phi = 2.0 * kPi * (j + 0.5) / n_lon;
      double key = std::exp(-8.0 * (std::pow(theta - 0.9, 2) + std::pow(phi - 1.2, 2)));
      double sky = std::max(0.0, std::cos(theta));
      double floor_glow = std::max(0.0, -std::cos(theta));
      img.set_rgb(j, i,
                  {0.05 + 1.5 * key + 0.25 * sky, 0.05 + 1.3 * key + 0.3 * sky,
                   0.05 + 1.0 * key + 0.4 * sky + 0.1 * floor_glow});
    }
  }
  return img;
}

// Fitted (or GT) surface mesh: vertices displaced along their normals by the
// offset field sampled at the vertex uv — the vertex-level view of the
// per-pixel displacement x_surf = x + n*l,
// used for Chamfer/P2S.
inline TriangleMesh displaced_surface_mesh(const TriangleMesh& mesh, const UVField& offset_field) {
  TriangleMesh out = mesh;
  if (out.vertex_normals.size() != out.vertex_count()) update_vertex_normals(out);
  for (size_t v = 0; v < out.vertex_count(); ++v) {
    double l = field_query(offset_field, mesh.vertex_uvs[v])[0];
    out.vertex_positions[v] = out.vertex_positions[v] + out.vertex_normals[v] * l;
  }
  update_vertex_normals(out);
  return out;
}

struct EvalResult {
  double psnr = 0;
  double ssim = 0;
  double albedo_psnr = 0;  // scale-aligned, channel-wise
  double normal_degree = 0;
  double chamfer = 0;
  double p2s = 0;
  double relight_psnr = 0;       // scale-aligned (inherits the albedo gauge)
  double temporal_l1 = -1;       // -1 when < 2 frames
  double mask_coverage = 0;
};

inline EvalResult evaluate_state(const SceneState& s, const SceneDataset& ds,
                                 const EvalConfig& ec) {
  using namespace stage_detail;
  EvalResult r;
  int n_views = ds.view_count(), n_frames = ds.frame_count();
  int n = n_views * n_frames;
  double bbox_diag = mesh_bbox_diagonal(s.base_mesh);

  TriangleMesh deformed = apply_vertex_offsets(s.base_mesh, s.vertex_offsets);
  Image envmap = holdout_envmap(ds.gt_probes.n_lat, ds.gt_probes.n_lon);
  LightProbeSphere fit_env = s.probes;
  probes_from_envmap(fit_env, envmap);
  LightProbeSphere gt_env = ds.gt_probes;
  probes_from_envmap(gt_env, envmap);

  double coverage = 0;
  std::vector<std::vector<Image>> normal_maps(n_views);
  std::vector<std::vector<Mask>> eval_masks(n_views);

  for (int f = 0; f < n_frames; ++f) {
    TriangleMesh posed = pose_mesh(deformed, ds.poses[f]);
    Bvh bvh(posed);
    TriangleMesh gt_posed = pose_mesh(ds.mesh, ds.poses[f]);
    Bvh gt_bvh(gt_posed);
    for (int v = 0; v < n_views; ++v) {
      const FrameData& fd = ds.at(v, f);
      GeomForward fwd = forward_geometry(s, posed, ds.cameras[v], true);
      VisibilityBuffer vis = visibility(fwd.gb.position, fwd.gb.mask, bvh, s.probes,
                                        kDefaultVisibilityEps, bbox_diag);
      Mask mask = mask_and(fwd.gb.mask, fd.mask);
      Image n_img = normals_to_image(fwd.maps.n_surf, fwd.gb.mask);
      normal_maps[v].push_back(n_img);
      eval_masks[v].push_back(mask);

      Image albedo_img = sample_field_image(s.albedo_field, fwd.gb);
      Image rough_img = sample_field_image(s.roughness_field, fwd.gb);
      RenderInputs in;
      in.gbuffer = &fwd.gb;
      in.x_surf = &fwd.x_surf;
      in.n_surf = &fwd.maps.n_surf;
      in.albedo = &albedo_img;
      in.roughness = &rough_img;
      in.probes = &s.probes;
      in.vis = &vis;
      in.camera_position = ds.cameras[v].position();
      in.mode = s.mode;
      Image rendered = clamp01(render_pbr(in));
      Image target = clamp01(fd.rgb);

      r.psnr += metric_psnr(rendered, target, mask) / n;
      r.ssim += (1.0 - loss_ssim(rendered, target, mask).value) / n;
      r.albedo_psnr += metric_scale_aligned(albedo_img, fd.albedo, mask).psnr / n;
      r.normal_degree += metric_normal_degree(n_img, fd.normal, mask) / n;
      size_t on = 0;
      for (uint8_t b : mask.bits) on += b;
      coverage += static_cast<double>(on) / mask.bits.size() / n;

      if (ec.relight) {
        // fitted relight under the held-out envmap vs the GT Lambertian
        // relight rendered by the same pipeline with GT geometry/materials
        in.probes = &fit_env;
        VisibilityBuffer vis_env = visibility(fwd.gb.position, fwd.gb.mask, bvh, fit_env,
                                              kDefaultVisibilityEps, bbox_diag);
        in.vis = &vis_env;
        Image relit = clamp01(render_pbr(in));

        GBuffer gt_gb = rasterize(gt_posed, ds.cameras[v]);
        std::vector<Vec3> gt_x = surface_points(gt_gb, ds.gt_offset, -1);
        SurfaceMaps gt_maps = offsets_to_normals(gt_x, gt_gb);
        VisibilityBuffer gt_vis = visibility(gt_gb.position, gt_gb.mask, gt_bvh, gt_env,
                                             kDefaultVisibilityEps, bbox_diag);
        Image gt_shading = shading_image(gt_gb, gt_x, gt_maps.n_surf, gt_env, gt_vis);
        Image gt_relit(ds.width, ds.height, 3);
        for (size_t i = 0; i < gt_relit.data.size(); ++i)
          gt_relit.data[i] = fd.albedo.data[i] * gt_shading.data[i];
        r.relight_psnr += metric_scale_aligned(relit, clamp01(gt_relit), mask).psnr / n;
      }
    }
  }
  r.mask_coverage = coverage;

  MeshDistanceResult md =
      chamfer_and_p2s(displaced_surface_mesh(deformed, s.offset_field),
                      displaced_surface_mesh(ds.mesh, ds.gt_offset), ec.cd_samples, 1234);
  r.chamfer = md.chamfer;
  r.p2s = md.p2s;

  if (n_frames >= 2) {
    double t = 0;
    for (int v = 0; v < n_views; ++v) {
      std::vector<std::vector<int>> corr;
      for (int f = 0; f < n_frames; ++f) corr.push_back(ds.at(v, f).corr);
      t += temporal_consistency(normal_maps[v], eval_masks[v], corr) / n_views;
    }
    r.temporal_l1 = t;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Experiment runner.
// ---------------------------------------------------------------------------

inline json eval_to_json(const EvalResult& r) {
  json m{{"psnr", r.psnr},
         {"ssim", r.ssim},
         {"albedo_psnr_scale_aligned", r.albedo_psnr},
         {"normal_degree", r.normal_degree},
         {"chamfer", r.chamfer},
         {"p2s", r.p2s},
         {"relight_psnr", r.relight_psnr},
         {"mask_coverage", r.mask_coverage}};
  if (r.temporal_l1 >= 0) m["temporal_l1"] = r.temporal_l1;
  return m;
}

inline SceneState init_state_for(const ExperimentConfig& cfg, const SceneDataset& ds) {
  return init_scene_state(ds.mesh, cfg.model.res, cfg.model.probe_lat, cfg.model.probe_lon,
                          cfg.model.brdf == "literal" ? BrdfMode::kLiteral
                                                      : BrdfMode::kMicrofacet,
                          cfg.model.init_albedo, cfg.model.init_probe_radiance);
}

// Resolve the dataset: load from scene.path, or synthesize + archive under
// <output_dir>/dataset and read it back so fitting always consumes the
// disk-authoritative float32 data.
inline SceneDataset resolve_dataset(const ExperimentConfig& cfg) {
  if (!cfg.scene.path.empty()) return load_dataset(cfg.scene.path);
  SceneDataset ds = synthesize_scene(cfg.scene.recipe, cfg.scene.synth, cfg.seed);
  std::string dir = (std::filesystem::path(cfg.output_dir) / "dataset").string();
  save_dataset(ds, dir);
  return load_dataset(dir);
}

// Executes the requested stages, writes report.json + metrics.jsonl +
// per-stage checkpoints under cfg.output_dir, and returns the report.
// `state` optionally exposes the final state to the caller (for tests).
inline json run_experiment(const ExperimentConfig& cfg, SceneState* state_out = nullptr) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  std::string hash = config_hash(cfg);

  SceneDataset ds = resolve_dataset(cfg);
  json report{{"config", config_to_json(cfg)},
              {"config_hash", hash},
              {"dataset",
               {{"recipe", ds.recipe},
                {"seed", ds.seed},
                {"width", ds.width},
                {"height", ds.height},
                {"views", ds.view_count()},
                {"frames", ds.frame_count()},
                {"vertices", ds.mesh.vertex_count()},
                {"faces", ds.mesh.face_count()}}}};

  std::vector<std::string> log_lines;
  StageLogger logger = [&](const std::string& line) { log_lines.push_back(line); };

  if (!cfg.stages.empty()) {
    SceneState state = init_state_for(cfg, ds);
    json stage_report = json::array();
    for (const std::string& name : cfg.stages) {
      auto t0 = std::chrono::steady_clock::now();
      if (name == "stage1")
        stage1(state, ds, cfg.stage1, logger);
      else if (name == "stage2")
        stage2(state, ds, cfg.stage2, logger);
      else if (name == "stage3")
        stage3(state, ds, cfg.stage3, logger);
      else
        throw ConfigurationError("run_experiment: unknown stage " + name);
      double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      const StageConfig& sc = name == "stage1" ? cfg.stage1
                              : name == "stage2" ? cfg.stage2
                                                 : cfg.stage3;
      stage_report.push_back(json{{"name", name}, {"epochs", sc.epochs}, {"wall_clock_sec", secs}});
      save_checkpoint(state, (fs::path(cfg.output_dir) / "checkpoints" / name).string(), name,
                      sc.epochs, hash);
    }
    report["stages"] = stage_report;
    report["metrics"] = eval_to_json(evaluate_state(state, ds, cfg.eval));
    if (state_out) *state_out = std::move(state);
  }

  std::ofstream lf(fs::path(cfg.output_dir) / "metrics.jsonl");
  if (!lf) throw IoError("run_experiment: cannot open metrics.jsonl in " + cfg.output_dir);
  for (const auto& line : log_lines) lf << line << "\n";
  std::ofstream rf(fs::path(cfg.output_dir) / "report.json");
  if (!rf) throw IoError("run_experiment: cannot open report.json in " + cfg.output_dir);
  rf << report.dump(2) << "\n";
  return report;
}

inline json load_report(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_report: cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw IoError("load_report: " + path + ": " + e.what());
  }
  for (const char* key : {"config", "config_hash", "dataset"})
    if (!j.contains(key)) throw IoError("load_report: " + path + ": missing key " + key);
  return j;
}

// Acceptance thresholds for `report --check`; returns the list of failures.
inline std::vector<std::string> report_check(const json& report) {
  std::vector<std::string> failures;
  if (!report.contains("metrics")) {
    failures.push_back("report has no metrics (no stages were run)");
    return failures;
  }
  const json& m = report.at("metrics");
  auto check = [&](const char* key, double threshold, bool at_least) {
    double v = m.value(key, at_least ? -1e30 : 1e30);
    bool ok = at_least ? v >= threshold : v <= threshold;
    if (!ok) {
      char buf[128];
      std::snprintf(buf, sizeof(buf), "%s = %.4f violates %s %.4f", key, v,
                    at_least ? ">=" : "<=", threshold);
      failures.push_back(buf);
    }
  };
  check("albedo_psnr_scale_aligned", 30.0, true);
  check("relight_psnr", 30.0, true);
  check("normal_degree", 5.0, false);
  return failures;
}

}  // namespace dis
