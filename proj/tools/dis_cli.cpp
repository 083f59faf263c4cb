// dis — differentiable inverse-rendering CLI.
//
// Subcommands: synth, fit, render, relight, metrics, gradcheck, report.
// Exit codes: 0 ok, 2 config error, 3 I/O error, 4 acceptance-threshold
// failure (report --check, gradcheck).

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dis/gradcheck.hpp"
#include "dis/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitCheck = 4;

// Apply a `--set key.path=value` override onto raw config JSON. Values parse
// as JSON literals when possible, else as strings.
void apply_override(dis::json& j, const std::string& kv) {
  auto eq = kv.find('=');
  if (eq == std::string::npos)
    throw dis::ConfigurationError("--set expects key=value, got " + kv);
  std::string path = kv.substr(0, eq), value = kv.substr(eq + 1);
  dis::json parsed = dis::json::parse(value, nullptr, false);
  if (parsed.is_discarded()) parsed = value;

  dis::json* node = &j;
  size_t start = 0;
  while (true) {
    size_t dot = path.find('.', start);
    std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
    if (key.empty()) throw dis::ConfigurationError("--set: empty key segment in " + path);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      break;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

dis::ExperimentConfig make_config(const std::string& config_path,
                                  const std::vector<std::string>& overrides) {
  dis::json j = dis::json::object();
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw dis::IoError("cannot open config " + config_path);
    try {
      f >> j;
    } catch (const dis::json::exception& e) {
      throw dis::ConfigurationError(config_path + std::string(": ") + e.what());
    }
  }
  for (const auto& kv : overrides) apply_override(j, kv);
  return dis::parse_experiment_config(j);
}

void print_metrics(const dis::json& report) {
  if (report.contains("metrics"))
    std::cout << report.at("metrics").dump(2) << "\n";
  else
    std::cout << "(no metrics: no stages were run)\n";
}

// Rebuild state from a dataset + checkpoint, render one (view, frame).
struct RenderSetup {
  dis::SceneDataset ds;
  dis::SceneState state;
};

RenderSetup load_render_setup(const dis::ExperimentConfig& cfg, const std::string& dataset_dir,
                              const std::string& checkpoint_dir) {
  RenderSetup r{dis::load_dataset(dataset_dir), {}};
  r.state = dis::init_state_for(cfg, r.ds);
  dis::load_checkpoint(r.state, checkpoint_dir);
  return r;
}

dis::Image render_view(const RenderSetup& r, int view, int frame, const dis::Image* envmap) {
  using namespace dis;
  using namespace dis::stage_detail;
  if (view < 0 || view >= r.ds.view_count() || frame < 0 || frame >= r.ds.frame_count())
    throw ConfigurationError("render: view/frame out of range");
  TriangleMesh deformed = apply_vertex_offsets(r.state.base_mesh, r.state.vertex_offsets);
  TriangleMesh posed = pose_mesh(deformed, r.ds.poses[frame]);
  Bvh bvh(posed);
  GeomForward fwd = forward_geometry(r.state, posed, r.ds.cameras[view], true);
  const LightProbeSphere* probes = &r.state.probes;
  LightProbeSphere env_probes;
  if (envmap) {
    env_probes = r.state.probes;
    probes_from_envmap(env_probes, *envmap);
    probes = &env_probes;
  }
  VisibilityBuffer vis = visibility(fwd.gb.position, fwd.gb.mask, bvh, *probes,
                                    kDefaultVisibilityEps, mesh_bbox_diagonal(r.state.base_mesh));
  Image albedo_img = sample_field_image(r.state.albedo_field, fwd.gb);
  Image rough_img = sample_field_image(r.state.roughness_field, fwd.gb);
  RenderInputs in;
  in.gbuffer = &fwd.gb;
  in.x_surf = &fwd.x_surf;
  in.n_surf = &fwd.maps.n_surf;
  in.albedo = &albedo_img;
  in.roughness = &rough_img;
  in.probes = probes;
  in.vis = &vis;
  in.camera_position = r.ds.cameras[view].position();
  in.mode = r.state.mode;
  return render_pbr(in);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dis: differentiable surface-based inverse rendering"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "experiment config JSON")->capture_default_str();
  app.add_option("--set", overrides, "override config keys, e.g. --set stage1.epochs=5");

  auto* synth = app.add_subcommand("synth", "generate a synthetic GT dataset");
  std::string synth_out = "dataset";
  synth->add_option("--out", synth_out, "output directory")->capture_default_str();

  auto* fit = app.add_subcommand("fit", "run the configured stages and write a report");

  auto* render = app.add_subcommand("render", "render a view/frame from a checkpoint");
  auto* relight = app.add_subcommand("relight", "render under a replacement environment map");
  std::string rr_dataset, rr_checkpoint, rr_out = "render.pfm", rr_envmap;
  int rr_view = 0, rr_frame = 0;
  for (CLI::App* sc : {render, relight}) {
    sc->add_option("--dataset", rr_dataset, "dataset directory")->required();
    sc->add_option("--checkpoint", rr_checkpoint, "checkpoint directory")->required();
    sc->add_option("--view", rr_view, "view index")->capture_default_str();
    sc->add_option("--frame", rr_frame, "frame index")->capture_default_str();
    sc->add_option("--out", rr_out, "output PFM path (PNG preview written alongside)")
        ->capture_default_str();
  }
  relight->add_option("--envmap", rr_envmap,
                      "equirectangular PFM environment map (default: built-in held-out map)");

  auto* metrics = app.add_subcommand("metrics", "PSNR/SSIM between two images");
  std::string m_pred, m_target, m_mask;
  metrics->add_option("--pred", m_pred, "predicted image (PFM)")->required();
  metrics->add_option("--target", m_target, "target image (PFM)")->required();
  metrics->add_option("--mask", m_mask, "optional mask image (PFM, >0.5 = on)");

  auto* gradcheck_cmd = app.add_subcommand("gradcheck", "finite-difference adjoint checks");
  std::string gc_op;
  int gc_seeds = 5;
  gradcheck_cmd->add_option("--op", gc_op, "single op name (default: all registered ops)");
  gradcheck_cmd->add_option("--seeds", gc_seeds, "seeds per op")->capture_default_str();

  auto* report_cmd = app.add_subcommand("report", "inspect a report.json");
  std::string rp_path = "report.json";
  bool rp_check = false;
  report_cmd->add_option("--report", rp_path, "report path")->capture_default_str();
  report_cmd->add_flag("--check", rp_check, "exit 4 if acceptance thresholds are violated");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      dis::ExperimentConfig cfg = make_config(config_path, overrides);
      dis::SceneDataset ds = dis::synthesize_scene(cfg.scene.recipe, cfg.scene.synth, cfg.seed);
      dis::save_dataset(ds, synth_out);
      std::cout << "wrote dataset (" << ds.view_count() << " views x " << ds.frame_count()
                << " frames) to " << synth_out << "\n";
    } else if (fit->parsed()) {
      dis::ExperimentConfig cfg = make_config(config_path, overrides);
      dis::json report = dis::run_experiment(cfg);
      print_metrics(report);
      std::cout << "report written to " << cfg.output_dir << "/report.json\n";
    } else if (render->parsed() || relight->parsed()) {
      dis::ExperimentConfig cfg = make_config(config_path, overrides);
      RenderSetup setup = load_render_setup(cfg, rr_dataset, rr_checkpoint);
      dis::Image env;
      const dis::Image* env_ptr = nullptr;
      if (relight->parsed()) {
        env = rr_envmap.empty()
                  ? dis::holdout_envmap(setup.state.probes.n_lat, setup.state.probes.n_lon)
                  : dis::load_pfm(rr_envmap);
        env_ptr = &env;
      }
      dis::Image img = render_view(setup, rr_view, rr_frame, env_ptr);
      dis::save_pfm(rr_out, img);
      dis::save_png(rr_out + ".png", img);
      std::cout << "wrote " << rr_out << "\n";
    } else if (metrics->parsed()) {
      dis::Image pred = dis::load_pfm(m_pred);
      dis::Image target = dis::load_pfm(m_target);
      dis::Mask mask(pred.width, pred.height, true);
      if (!m_mask.empty()) {
        dis::Image mi = dis::load_pfm(m_mask);
        for (size_t i = 0; i < mask.bits.size(); ++i) mask.bits[i] = mi.data[i] > 0.5 ? 1 : 0;
      }
      dis::json out{{"psnr", dis::metric_psnr(pred, target, mask)},
                    {"ssim", 1.0 - dis::loss_ssim(pred, target, mask).value}};
      std::cout << out.dump(2) << "\n";
    } else if (gradcheck_cmd->parsed()) {
      bool all_pass = true;
      auto run_op = [&](const std::string& name) {
        double worst = 0;
        bool pass = true;
        for (int s = 0; s < gc_seeds; ++s) {
          auto rep = dis::gradcheck(name, static_cast<uint64_t>(s) * 7919 + 1);
          worst = std::max(worst, rep.max_rel_err);
          pass = pass && rep.pass;
        }
        std::printf("%-28s %s  max_rel_err=%.3e\n", name.c_str(), pass ? "PASS" : "FAIL", worst);
        all_pass = all_pass && pass;
      };
      if (!gc_op.empty())
        run_op(gc_op);
      else
        for (const auto& [name, op] : dis::gradcheck_registry()) run_op(name);
      if (!all_pass) return kExitCheck;
    } else if (report_cmd->parsed()) {
      dis::json report = dis::load_report(rp_path);
      print_metrics(report);
      if (rp_check) {
        auto failures = dis::report_check(report);
        for (const auto& msg : failures) std::cerr << "check failed: " << msg << "\n";
        if (!failures.empty()) return kExitCheck;
        std::cout << "all acceptance thresholds satisfied\n";
      }
    }
  } catch (const dis::ConfigurationError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dis::ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const dis::IoError& e) {
    std::cerr << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
