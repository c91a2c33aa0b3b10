// epiray command-line driver: layouts, renders, epipolar sample maps,
// invariant checks, gradient verification, the training demo, and sampling.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epiray/camera.hpp"
#include "epiray/check_suites.hpp"
#include "epiray/diffusion.hpp"
#include "epiray/scene.hpp"
#include "epiray/tensor_io.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace epiray;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

// Exit codes: 0 success, 1 usage error, 2 check/verification failure.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitCheckFailed = 2;

void write_run_json(const fs::path& out_dir, const std::string& command, const json& flags) {
  fs::create_directories(out_dir);
  json doc = {{"command", command}, {"flags", flags}};
  std::ofstream f(out_dir / "run.json");
  if (!f) throw std::runtime_error("cannot write run.json in " + out_dir.string());
  f << doc.dump(2) << "\n";
}

std::vector<double> parse_elevations(const std::string& csv) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string item = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!item.empty()) out.push_back(std::stod(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw CLI::ValidationError("--elevations", "needs at least one value");
  return out;
}

std::string view_file(const std::string& prefix, std::size_t index, const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03zu.%s", prefix.c_str(), index, ext);
  return buf;
}

SyntheticScene make_scene(const std::string& kind, std::uint64_t seed) {
  if (kind == "sphere") return make_sphere_scene();
  if (kind == "voxel") return make_voxel_scene(seed);
  throw CLI::ValidationError("--scene", "must be sphere or voxel");
}

json report_to_json(const SuiteReport& rep) {
  json checks = json::array();
  for (const CheckResult& c : rep.checks) {
    checks.push_back(
        {{"name", c.name}, {"value", c.value}, {"threshold", c.threshold}, {"pass", c.pass}});
  }
  return {{"suite", rep.suite}, {"pass", rep.pass}, {"checks", checks}};
}

void print_report(const SuiteReport& rep) {
  for (const CheckResult& c : rep.checks) {
    std::printf("  [%s] %-36s %12.4e < %g\n", c.pass ? "ok" : "FAIL", c.name.c_str(), c.value,
                c.threshold);
  }
  std::printf("suite %-12s %s\n", rep.suite.c_str(), rep.pass ? "PASS" : "FAIL");
}

// ---------------------------------------------------------------------------

int cmd_layout(const std::string& elevations_csv, int azimuths, double radius, double fov_deg,
               int res, const std::string& out) {
  const std::vector<double> elevations = parse_elevations(elevations_csv);
  if (azimuths < 1) throw CLI::ValidationError("--azimuths", "must be >= 1");
  if (radius <= 0) throw CLI::ValidationError("--radius", "must be > 0");

  const CameraIntrinsics intr(res, res, fov_deg * kDegToRad);
  const ViewLayout layout = generate_layout(elevations, azimuths, radius, intr);

  fs::create_directories(out);
  write_layout_json(layout, (fs::path(out) / "cameras.json").string());
  write_run_json(out, "layout",
                 {{"elevations", elevations},
                  {"azimuths", azimuths},
                  {"radius", radius},
                  {"fov_y_deg", fov_deg},
                  {"resolution", res},
                  {"views", layout.size()}});
  std::printf("wrote %zu views to %s/cameras.json\n", layout.size(), out.c_str());
  return kExitOk;
}

int cmd_render(const std::string& scene_kind, const std::string& layout_path, int res,
               std::uint64_t seed, bool ppm, const std::string& out) {
  const ViewLayout layout = read_layout_json(layout_path);
  const SyntheticScene scene = make_scene(scene_kind, seed);

  fs::create_directories(out);
  const MultiviewRenderSet set = make_dataset(scene, layout, res, res);
  for (std::size_t i = 0; i < set.views.size(); ++i) {
    tensor_write(set.views[i].rgb, (fs::path(out) / view_file("rgb_", i, "etz")).string());
    tensor_write(set.views[i].depth, (fs::path(out) / view_file("depth_", i, "etz")).string());
    if (ppm) write_ppm(set.views[i].rgb, (fs::path(out) / view_file("rgb_", i, "ppm")).string());
  }
  write_run_json(out, "render",
                 {{"scene", scene_kind},
                  {"layout", layout_path},
                  {"resolution", res},
                  {"seed", seed},
                  {"ppm", ppm},
                  {"views", set.views.size()}});
  std::printf("rendered %zu views at %dx%d to %s\n", set.views.size(), res, res, out.c_str());
  return kExitOk;
}

int cmd_sample_map(const std::string& cameras_path, const std::string& features_dir,
                   const std::string& prefix, int target, int k_views, int s_samples, double near,
                   double far, const std::string& out) {
  const ViewLayout layout = read_layout_json(cameras_path);
  if (target < 0 || target >= static_cast<int>(layout.size())) {
    throw CLI::ValidationError("--target", "view index out of range");
  }

  std::vector<Tensor> maps;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const fs::path p = fs::path(features_dir) / view_file(prefix, i, "etz");
    if (!fs::exists(p)) throw std::runtime_error("missing feature map " + p.string());
    Tensor m = tensor_read(p.string());
    if (m.rank() == 2) m = m.reshaped({m.dim(0), m.dim(1), 1});
    maps.push_back(std::move(m));
  }

  if (near <= 0.0 || far <= 0.0) default_near_far(layout, target, &near, &far);
  const EpipolarSampleMap vol =
      build_sample_volume(target, layout, maps, k_views, s_samples, near, far);

  fs::create_directories(out);
  tensor_write(vol.features, (fs::path(out) / "features.etz").string());
  tensor_write(vol.valid, (fs::path(out) / "valid.etz").string());
  tensor_write(vol.depths, (fs::path(out) / "depths.etz").string());
  tensor_write(vol.uv, (fs::path(out) / "uv.etz").string());

  json sidecar = {{"view_indices", vol.view_indices}, {"near", vol.near}, {"far", vol.far},
                  {"k", k_views},                      {"s", s_samples},  {"target", target}};
  std::ofstream side(fs::path(out) / "sample_map.json");
  side << sidecar.dump(2) << "\n";

  write_run_json(out, "sample-map",
                 {{"cameras", cameras_path},
                  {"features_dir", features_dir},
                  {"prefix", prefix},
                  {"target", target},
                  {"k", k_views},
                  {"s", s_samples},
                  {"near", near},
                  {"far", far}});
  std::printf("sample map %s: features %s\n", out.c_str(), shape_to_string(vol.features.shape()).c_str());
  return kExitOk;
}

int cmd_check(const std::string& suite, std::uint64_t seed, bool fault, const std::string& out) {
  std::vector<SuiteReport> reports;
  const bool all = suite == "all";
  if (all || suite == "geometry") reports.push_back(run_geometry_suite(seed, fault));
  if (all || suite == "encoding") reports.push_back(run_encoding_suite(seed, fault));
  if (all || suite == "attention") reports.push_back(run_attention_suite(seed, fault));
  if (all || suite == "diffusion") reports.push_back(run_diffusion_suite(seed, fault));
  if (all || suite == "oracle") reports.push_back(run_oracle_suite(seed, fault));
  if (reports.empty()) throw CLI::ValidationError("--suite", "unknown suite " + suite);

  bool pass = true;
  json doc = json::array();
  for (const SuiteReport& rep : reports) {
    print_report(rep);
    doc.push_back(report_to_json(rep));
    pass = pass && rep.pass;
  }
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream f(fs::path(out) / "report.json");
    f << doc.dump(2) << "\n";
    write_run_json(out, "check", {{"suite", suite}, {"seed", seed}, {"fault", fault}});
  }
  return pass ? kExitOk : kExitCheckFailed;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& size, bool corrupt,
                  const std::string& out) {
  if (size != "micro" && size != "small") {
    throw CLI::ValidationError("--size", "must be micro or small");
  }
  const SuiteReport rep = run_gradcheck(seed, size == "small", corrupt);
  print_report(rep);
  if (!out.empty()) {
    fs::create_directories(out);
    std::ofstream f(fs::path(out) / "report.json");
    f << json::array({report_to_json(rep)}).dump(2) << "\n";
    write_run_json(out, "gradcheck", {{"seed", seed}, {"size", size}, {"corrupt", corrupt}});
  }
  return rep.pass ? kExitOk : kExitCheckFailed;
}

struct TrainDemoFlags {
  int steps = 500;
  double lr = 0.01;
  double momentum = 0.9;
  std::uint64_t seed = 0;
  int res = 8;
  int hidden = 16;
  int views = 16;
  int t_steps = 100;
  int k_views = 4;
  int s_samples = 16;
  std::string out;
};

std::vector<std::vector<Tensor>> demo_scenes(const ViewLayout& layout, int res,
                                             std::uint64_t seed) {
  // Two fixed scenes; latents are renders mapped to [-1, 1].
  std::vector<std::vector<Tensor>> scenes;
  for (const SyntheticScene& scene : {make_sphere_scene(), make_voxel_scene(seed)}) {
    const MultiviewRenderSet set = make_dataset(scene, layout, res, res);
    std::vector<Tensor> z0;
    for (const RenderedView& v : set.views) {
      Tensor z = scale(v.rgb, 2.0);
      for (std::size_t i = 0; i < z.size(); ++i) z[i] -= 1.0;
      z0.push_back(std::move(z));
    }
    scenes.push_back(std::move(z0));
  }
  return scenes;
}

DenoiserConfig demo_config(const TrainDemoFlags& f, const ViewLayout& layout) {
  DenoiserConfig cfg;
  cfg.latent_channels = 3;
  cfg.hidden = f.hidden;
  cfg.height = f.res;
  cfg.width = f.res;
  cfg.t_steps = f.t_steps;
  cfg.eca.k_views = f.k_views;
  cfg.eca.s_samples = f.s_samples;
  cfg.eca.channels = f.hidden;
  default_near_far(layout, 0, &cfg.eca.near, &cfg.eca.far);
  return cfg;
}

int cmd_train_demo(const TrainDemoFlags& f) {
  const CameraIntrinsics intr(64, 64, 40.0 * kDegToRad);
  const ViewLayout layout = generate_layout({30}, f.views, 1.8, intr);
  const DenoiserConfig cfg = demo_config(f, layout);
  const std::vector<std::vector<Tensor>> scenes = demo_scenes(layout, f.res, f.seed);

  DeterministicRng rng(f.seed);
  ToyDenoiser den = make_toy_denoiser(cfg, layout, rng);
  const NoiseSchedule sched = linear_beta_schedule(f.t_steps, 1e-4, 2e-2);
  TrainerState state = make_trainer_state(den);
  state.momentum = f.momentum;

  json curve = json::array();
  double first = 0.0, last = 0.0;
  for (int step = 0; step < f.steps; ++step) {
    const double loss = train_step(den, scenes, sched, 0, f.lr, rng, state);
    if (step == 0) first = loss;
    last = loss;
    curve.push_back({{"step", step + 1}, {"loss", loss}});
    if ((step + 1) % 50 == 0 || step == 0) {
      std::printf("step %4d loss %.6f\n", step + 1, loss);
    }
  }

  fs::create_directories(f.out);
  std::ofstream lc(fs::path(f.out) / "loss_curve.json");
  lc << curve.dump(2) << "\n";
  save_denoiser(den, (fs::path(f.out) / "checkpoint").string());
  write_run_json(f.out, "train-demo",
                 {{"steps", f.steps},
                  {"lr", f.lr},
                  {"momentum", f.momentum},
                  {"seed", f.seed},
                  {"res", f.res},
                  {"hidden", f.hidden},
                  {"views", f.views},
                  {"t_steps", f.t_steps},
                  {"k", f.k_views},
                  {"s", f.s_samples},
                  {"first_loss", first},
                  {"final_loss", last}});
  std::printf("final loss %.6f (step-1 loss %.6f, ratio %.4f)\n", last, first, last / first);
  return kExitOk;
}

int cmd_sample(const std::string& checkpoint, std::uint64_t seed, const std::string& input_path,
               int input_view, const std::string& out) {
  ToyDenoiser den = load_denoiser(checkpoint);
  if (input_view < 0 || input_view >= static_cast<int>(den.layout.size())) {
    throw CLI::ValidationError("--input-view", "view index out of range");
  }

  Tensor y;
  if (!input_path.empty()) {
    y = tensor_read(input_path);
  } else {
    // Default conditioning: the sphere scene rendered from the input view.
    const RenderedView rv =
        raycast_render(make_sphere_scene(), den.layout.intrinsics[input_view],
                       den.layout.poses[input_view], den.cfg.height, den.cfg.width);
    y = scale(rv.rgb, 2.0);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] -= 1.0;
  }

  const NoiseSchedule sched = linear_beta_schedule(den.cfg.t_steps, 1e-4, 2e-2);
  DeterministicRng rng(seed);
  const std::vector<Tensor> samples = sample_multiview(den, sched, input_view, y, rng);

  fs::create_directories(out);
  json files = json::array();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string name = view_file("sample_", i, "etz");
    tensor_write(samples[i], (fs::path(out) / name).string());
    files.push_back(name);
  }
  json manifest = {{"views", samples.size()}, {"files", files}, {"input_view", input_view}};
  std::ofstream mf(fs::path(out) / "samples.json");
  mf << manifest.dump(2) << "\n";
  write_run_json(out, "sample",
                 {{"checkpoint", checkpoint},
                  {"seed", seed},
                  {"input", input_path},
                  {"input_view", input_view},
                  {"views", samples.size()}});
  std::printf("wrote %zu sampled views to %s\n", samples.size(), out.c_str());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"epiray: epipolar multiview attention toolkit"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "global RNG seed")->capture_default_str();

  // layout
  auto* layout_cmd = app.add_subcommand("layout", "write a spherical camera layout");
  std::string elevations = "-10,0,10,20,30,40";
  int azimuths = 16, res = 256;
  double radius = 1.8, fov_deg = 40.0;
  std::string layout_out;
  layout_cmd->add_option("--elevations", elevations, "comma-separated degrees")->capture_default_str();
  layout_cmd->add_option("--azimuths", azimuths, "cameras per ring")->capture_default_str();
  layout_cmd->add_option("--radius", radius, "camera distance")->capture_default_str();
  layout_cmd->add_option("--fov-deg", fov_deg, "vertical field of view")->capture_default_str();
  layout_cmd->add_option("--res", res, "image resolution")->capture_default_str();
  layout_cmd->add_option("--out", layout_out, "output directory")->required();

  // render
  auto* render_cmd = app.add_subcommand("render", "raycast a synthetic scene");
  std::string scene_kind = "sphere", render_layout, render_out;
  int render_res = 64;
  bool ppm = false;
  render_cmd->add_option("--scene", scene_kind, "sphere|voxel")->capture_default_str();
  render_cmd->add_option("--layout", render_layout, "cameras.json")->required();
  render_cmd->add_option("--res", render_res, "render resolution")->capture_default_str();
  render_cmd->add_flag("--ppm", ppm, "also write 8-bit PPM previews");
  render_cmd->add_option("--out", render_out, "output directory")->required();

  // sample-map
  auto* map_cmd = app.add_subcommand("sample-map", "build an epipolar sample volume");
  std::string map_cameras, map_features, map_prefix = "feat_", map_out;
  int map_target = 0, map_k = 4, map_s = 16;
  double map_near = 0.0, map_far = 0.0;
  map_cmd->add_option("--cameras", map_cameras, "cameras.json")->required();
  map_cmd->add_option("--features-dir", map_features, "directory of per-view .etz maps")->required();
  map_cmd->add_option("--prefix", map_prefix, "feature file prefix")->capture_default_str();
  map_cmd->add_option("--target", map_target, "target view index")->capture_default_str();
  map_cmd->add_option("-K,--k-views", map_k, "nearby view count")->capture_default_str();
  map_cmd->add_option("-S,--s-samples", map_s, "samples per ray")->capture_default_str();
  map_cmd->add_option("--near", map_near, "near plane (0 = derive from layout)");
  map_cmd->add_option("--far", map_far, "far plane (0 = derive from layout)");
  map_cmd->add_option("--out", map_out, "output directory")->required();

  // check
  auto* check_cmd = app.add_subcommand("check", "run invariant suites");
  std::string check_suite = "all", check_out;
  bool check_fault = false;
  check_cmd->add_option("--suite", check_suite, "geometry|encoding|attention|diffusion|oracle|all")
      ->capture_default_str();
  check_cmd->add_flag("--fault", check_fault,
                      "inject a documented fault so the suite must fail (self-test)");
  check_cmd->add_option("--out", check_out, "directory for report.json");

  // gradcheck
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string grad_size = "micro", grad_out;
  bool grad_corrupt = false;
  grad_cmd->add_option("--size", grad_size, "micro|small")->capture_default_str();
  grad_cmd->add_flag("--corrupt", grad_corrupt,
                     "corrupt one analytic gradient so the check must fail (self-test)");
  grad_cmd->add_option("--out", grad_out, "directory for report.json");

  // train-demo
  auto* train_cmd = app.add_subcommand("train-demo", "train the attention blocks on two scenes");
  TrainDemoFlags tf;
  train_cmd->add_option("--steps", tf.steps)->capture_default_str();
  train_cmd->add_option("--lr", tf.lr)->capture_default_str();
  train_cmd->add_option("--momentum", tf.momentum)->capture_default_str();
  train_cmd->add_option("--res", tf.res, "latent resolution")->capture_default_str();
  train_cmd->add_option("--hidden", tf.hidden, "feature width")->capture_default_str();
  train_cmd->add_option("--views", tf.views, "cameras on the ring")->capture_default_str();
  train_cmd->add_option("--t-steps", tf.t_steps, "diffusion steps")->capture_default_str();
  train_cmd->add_option("-K,--k-views", tf.k_views)->capture_default_str();
  train_cmd->add_option("-S,--s-samples", tf.s_samples)->capture_default_str();
  train_cmd->add_option("--out", tf.out, "output directory")->required();

  // sample
  auto* sample_cmd = app.add_subcommand("sample", "ancestral sampling from a checkpoint");
  std::string sample_ckpt, sample_input, sample_out;
  int sample_input_view = 0;
  sample_cmd->add_option("--checkpoint", sample_ckpt, "checkpoint directory")->required();
  sample_cmd->add_option("--input", sample_input, "input-view latent .etz (default: sphere render)");
  sample_cmd->add_option("--input-view", sample_input_view)->capture_default_str();
  sample_cmd->add_option("--out", sample_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (layout_cmd->parsed()) {
      return cmd_layout(elevations, azimuths, radius, fov_deg, res, layout_out);
    }
    if (render_cmd->parsed()) {
      return cmd_render(scene_kind, render_layout, render_res, seed, ppm, render_out);
    }
    if (map_cmd->parsed()) {
      return cmd_sample_map(map_cameras, map_features, map_prefix, map_target, map_k, map_s,
                            map_near, map_far, map_out);
    }
    if (check_cmd->parsed()) return cmd_check(check_suite, seed, check_fault, check_out);
    if (grad_cmd->parsed()) return cmd_gradcheck(seed, grad_size, grad_corrupt, grad_out);
    if (train_cmd->parsed()) {
      tf.seed = seed;
      return cmd_train_demo(tf);
    }
    if (sample_cmd->parsed()) {
      return cmd_sample(sample_ckpt, seed, sample_input, sample_input_view, sample_out);
    }
  } catch (const CLI::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
