#include "tfk/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tfk/config.hpp"
#include "tfk/error.hpp"
#include "tfk/flowmatch.hpp"
#include "tfk/growth.hpp"
#include "tfk/io.hpp"
#include "tfk/longitudinal.hpp"
#include "tfk/metrics.hpp"
#include "tfk/parallel.hpp"
#include "tfk/phantom.hpp"
#include "tfk/rng.hpp"

namespace tfk {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// FNV-1a, enough to tell files apart in a manifest.
std::string file_digest(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  return "fnv1a64:" + hex64(h);
}

std::string days_tag(double t) { return "t" + format_double(t); }

std::string opt_number(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw Error(ErrorCode::Io, "cannot create directory " + dir.string());
  const fs::path probe = dir / ".tfk_write_probe";
  {
    std::ofstream out(probe);
    if (!out) throw Error(ErrorCode::Io, "directory is not writable: " + dir.string());
  }
  fs::remove(probe, ec);
}

// The manifest deliberately leaves out wall-clock time and the worker count,
// so two runs of the same command produce identical trees. Duration goes to
// stderr instead.
class Manifest {
 public:
  Manifest(std::string command, std::vector<std::string> argv) : command_(std::move(command)) {
    for (std::size_t i = 0; i < argv.size(); ++i) {
      if (argv[i] == "--threads") {
        ++i;
        continue;
      }
      if (argv[i].rfind("--threads=", 0) == 0) continue;
      argv_.push_back(argv[i]);
    }
    start_ = std::chrono::steady_clock::now();
  }

  json config = json::object();
  json seeds = json::object();
  json results = json::object();

  void input(const std::string& path) { inputs_.push_back({path, file_digest(path)}); }

  void write(const fs::path& path, const fs::path& output_root, const std::vector<fs::path>& outputs) const {
    json outs = json::array();
    std::vector<fs::path> sorted = outputs;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& o : sorted) {
      outs.push_back({{"path", fs::relative(o, output_root).generic_string()}, {"digest", file_digest(o)}});
    }
    json ins = json::array();
    for (const auto& [p, d] : inputs_) ins.push_back({{"path", p}, {"digest", d}});
    const json m = {{"schema_version", 1}, {"tool", "tfk"},     {"version", kToolVersion},
                    {"command", command_}, {"argv", argv_},     {"config", config},
                    {"seeds", seeds},      {"inputs", ins},     {"outputs", outs},
                    {"results", results}};
    write_json(path, m);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::cerr << "tfk " << command_ << ": done in " << format_double(std::round(secs * 100.0) / 100.0) << " s\n";
  }

 private:
  std::string command_;
  std::vector<std::string> argv_;
  std::vector<std::pair<std::string, std::string>> inputs_;
  std::chrono::steady_clock::time_point start_;
};

// Every file under dir, for manifest listings.
std::vector<fs::path> files_under(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

TissueMap load_tissue(const fs::path& p) {
  if (p.extension() == ".nii") {
    const NiftiVolume nv = read_nifti_subset(p);
    for (const auto& w : nv.warnings) std::cerr << "warning: " << w << "\n";
    std::vector<TissueLabel> labels(nv.field.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const double c = nv.field[i];
      if (!(c >= 0.0 && c <= 3.0) || c != std::floor(c)) {
        throw Error(ErrorCode::InvalidConfig, p.string() + " does not hold tissue labels 0..3");
      }
      labels[i] = static_cast<TissueLabel>(static_cast<int>(c));
    }
    return TissueMap(nv.field.spec(), std::move(labels));
  }
  return read_tissue(p);
}

ScalarField3D load_field(const fs::path& p) {
  if (p.extension() == ".nii") {
    NiftiVolume nv = read_nifti_subset(p);
    for (const auto& w : nv.warnings) std::cerr << "warning: " << w << "\n";
    return std::move(nv.field);
  }
  return read_field(p);
}

LabelMask load_target(const fs::path& p) {
  if (p.extension() != ".nii") {
    Volume v = read_volume(p);
    if (auto* m = std::get_if<LabelMask>(&v)) return std::move(*m);
    if (auto* f = std::get_if<ScalarField3D>(&v)) {
      const VolumeHeader h = read_volume_header(p);
      if (h.intent == VolumeIntent::Concentration) return concentration_to_mask(*f);
    }
    return read_mask(p);
  }
  const ScalarField3D f = load_field(p);
  std::vector<MaskLabel> labels(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) {
    labels[i] = f[i] >= 2.0 ? MaskLabel::Enhancing : f[i] >= 1.0 ? MaskLabel::Edema : MaskLabel::Background;
  }
  return LabelMask(f.spec(), std::move(labels));
}

json read_json_input(const fs::path& p) { return read_config(p); }

// ---------------------------------------------------------------------------
// Bundle and table writers shared by generate and demo.

std::vector<fs::path> write_bundle(const TrajectoryBundle& b, const fs::path& dir) {
  ensure_dir(dir);
  std::vector<fs::path> written;
  auto add = [&](const fs::path& payload) {
    written.push_back(payload);
    written.push_back(sidecar_path(payload));
  };
  for (std::size_t t = 0; t < b.times.size(); ++t) {
    const std::string tag = days_tag(b.times[t]);
    const fs::path conc = dir / ("conc_" + tag + ".f32");
    write_field(conc, b.concentrations[t], VolumeIntent::Concentration);
    add(conc);
    for (std::size_t m = 0; m < b.modalities.size(); ++m) {
      const auto& e = b.entry(t, m);
      const std::string name = tag + "_" + std::string(modality_name(e.modality));
      const fs::path vol = dir / (name + ".f32");
      write_field(vol, e.volume, VolumeIntent::Image);
      add(vol);
      const fs::path mask = dir / ("mask_" + name + ".u8");
      write_mask(mask, e.derived_mask);
      add(mask);
    }
  }
  return written;
}

void write_trajectory_metrics(const TrajectoryBundle& b, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& e : b.entries) {
    rows.push_back({format_double(e.t_days), std::string(modality_name(e.modality)),
                    format_double(e.dice_vs_conditioning), opt_number(e.psnr_nontumor_vs_previous)});
  }
  write_csv(path, {"t_days", "modality", "dice", "psnr"}, rows);
}

void write_sweep(const std::vector<SweepRow>& rows, const fs::path& path) {
  std::vector<std::vector<std::string>> out;
  for (const auto& r : rows) {
    out.push_back({format_double(r.tau_tilde), format_double(r.mean_dice),
                   std::isnan(r.mean_psnr) ? std::string() : format_double(r.mean_psnr)});
  }
  write_csv(path, {"tau_tilde", "mean_dice", "mean_psnr"}, out);
}

// ---------------------------------------------------------------------------
// evaluate

struct VolumeKey {
  double t_days;
  Modality modality;
  bool operator<(const VolumeKey& o) const {
    if (t_days != o.t_days) return t_days < o.t_days;
    return modality < o.modality;
  }
};

std::map<VolumeKey, std::string> list_volumes(const fs::path& dir) {
  static const std::regex pattern(R"(^t([0-9eE+\-.]+)_([A-Za-z0-9]+)\.f32$)");
  std::map<VolumeKey, std::string> out;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::Io, dir.string() + " is not a directory");
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string name = e.path().filename().string();
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) continue;
    const auto mod = parse_modality(m[2].str());
    if (!mod) continue;
    out[{std::stod(m[1].str()), *mod}] = name;
  }
  return out;
}

std::vector<MetricRecord> evaluate_dirs(const fs::path& pred, const fs::path& ref) {
  const auto pv = list_volumes(pred);
  const auto rv = list_volumes(ref);
  std::optional<TissueMap> tissue;
  if (fs::exists(ref / "tissue.u8")) tissue = read_tissue(ref / "tissue.u8");

  std::vector<MetricRecord> out;
  for (const auto& [key, name] : pv) {
    auto it = rv.find(key);
    if (it == rv.end()) continue;
    const ScalarField3D a = read_field(pred / name);
    const ScalarField3D b = read_field(ref / it->second);
    require_same_grid(a.spec(), b.spec(), "evaluate");
    const VoxelRegion region = tissue ? brain_region(*tissue) : full_region(a.spec());
    out.push_back({"psnr", psnr(a, b, region), region.count(), key.t_days, key.modality});
    MsSsimOptions opt;
    opt.levels = feasible_ms_ssim_levels(a.spec(), opt.window);
    if (opt.levels > 0) out.push_back({"ms_ssim", ms_ssim(a, b, opt), a.size(), key.t_days, key.modality});
    const fs::path pm = pred / ("mask_" + name.substr(0, name.size() - 4) + ".u8");
    const fs::path rm = ref / ("mask_" + name.substr(0, name.size() - 4) + ".u8");
    if (fs::exists(pm) && fs::exists(rm)) {
      const LabelMask ma = read_mask(pm), mb = read_mask(rm);
      out.push_back({"dice", dice(ma, mb), mb.whole_tumor().count(), key.t_days, key.modality});
    }
  }
  if (out.empty()) throw Error(ErrorCode::Io, "no matching volumes between " + pred.string() + " and " + ref.string());
  return out;
}

void write_metric_records(const std::vector<MetricRecord>& recs, const fs::path& path) {
  std::vector<std::vector<std::string>> rows;
  for (const auto& r : recs) {
    rows.push_back({r.name, format_double(r.value), std::to_string(r.mask_voxels), opt_number(r.t_days),
                    r.modality ? std::string(modality_name(*r.modality)) : std::string()});
  }
  write_csv(path, {"metric", "value", "mask_voxels", "t_days", "modality"}, rows);
}

// ---------------------------------------------------------------------------
// Dataset directories for train.

struct LoadedDataset {
  std::vector<TrainingPair> pairs;
  std::vector<std::string> files;
};

LoadedDataset load_dataset(const fs::path& dir) {
  const json doc = read_config(dir / "dataset.json");
  if (!doc.contains("pairs") || !doc.at("pairs").is_array()) {
    throw Error(ErrorCode::InvalidConfig, "dataset.json needs a 'pairs' array");
  }
  LoadedDataset ds;
  ds.files.push_back((dir / "dataset.json").string());
  std::map<std::string, TissueMap> tissues;
  for (const auto& p : doc.at("pairs")) {
    const std::string img = p.at("image").get<std::string>();
    const std::string tis = p.at("tissue").get<std::string>();
    const std::string conc = p.at("concentration").get<std::string>();
    const auto mod = parse_modality(p.at("modality").get<std::string>());
    if (!mod) throw Error(ErrorCode::InvalidConfig, "dataset.json: unknown modality " + p.at("modality").dump());
    if (!tissues.count(tis)) {
      tissues.emplace(tis, read_tissue(dir / tis));
      ds.files.push_back((dir / tis).string());
    }
    const ScalarField3D image = read_field(dir / img);
    const ScalarField3D c = read_field(dir / conc);
    ds.files.push_back((dir / img).string());
    ds.files.push_back((dir / conc).string());
    ds.pairs.push_back({FieldStack::from_field(image), assemble(tissues.at(tis), c, *mod)});
  }
  if (ds.pairs.empty()) throw Error(ErrorCode::EmptyDataset, "dataset.json lists no pairs");
  return ds;
}

std::vector<fs::path> write_dataset(const std::vector<PhantomCase>& cases, const fs::path& dir) {
  ensure_dir(dir);
  std::vector<fs::path> written;
  json pairs = json::array();
  std::vector<const TissueMap*> seen;
  std::vector<std::string> seen_names;
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    std::string tname;
    for (std::size_t k = 0; k < seen.size(); ++k) {
      if (seen[k]->labels == c.tissue.labels) tname = seen_names[k];
    }
    if (tname.empty()) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "tissue_%04zu.u8", seen.size());
      tname = buf;
      write_tissue(dir / tname, c.tissue);
      written.push_back(dir / tname);
      written.push_back(sidecar_path(dir / tname));
      seen.push_back(&c.tissue);
      seen_names.push_back(tname);
    }
    char img[32], conc[32];
    std::snprintf(img, sizeof img, "image_%04zu.f32", i);
    std::snprintf(conc, sizeof conc, "conc_%04zu.f32", i);
    write_field(dir / img, c.image, VolumeIntent::Image);
    write_field(dir / conc, c.concentration, VolumeIntent::Concentration);
    for (const char* n : {img, conc}) {
      written.push_back(dir / n);
      written.push_back(sidecar_path(dir / n));
    }
    pairs.push_back({{"image", img}, {"tissue", tname}, {"concentration", conc},
                     {"modality", std::string(modality_name(c.modality))}});
  }
  write_json(dir / "dataset.json", {{"schema_version", 1}, {"pairs", pairs}});
  written.push_back(dir / "dataset.json");
  return written;
}

std::array<double, 3> parse_point(const std::string& s) {
  std::array<double, 3> p{};
  std::stringstream ss(s);
  std::string item;
  std::size_t k = 0;
  while (std::getline(ss, item, ',')) {
    if (k == 3) throw Error(ErrorCode::InvalidParams, "expected x,y,z but got " + s);
    try {
      p[k++] = std::stod(item);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidParams, "expected x,y,z but got " + s);
    }
  }
  if (k != 3) throw Error(ErrorCode::InvalidParams, "expected x,y,z but got " + s);
  return p;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidParams, "expected a comma-separated list of numbers but got " + s);
    }
  }
  return out;
}

fs::path manifest_beside(const fs::path& out_file) {
  return out_file.parent_path() / (out_file.stem().string() + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Demo defaults. The training budget is smaller than the acceptance
// configuration so a demo run stays around a minute on one core; pass
// --train-pairs 500 --train-steps 2000 for the full one.

struct DemoOptions {
  std::string out;
  std::uint64_t seed = 7;
  std::size_t grid = 16;
  std::size_t train_pairs = 200;
  std::size_t train_steps = 300;
  bool write_dataset = false;
};

// White-matter voxel closest to a point a little off the phantom centre.
std::array<double, 3> demo_seed_center(const TissueMap& tissue) {
  const auto& s = tissue.spec;
  const std::array<double, 3> target{0.6 * static_cast<double>(s.nx - 1), 0.5 * static_cast<double>(s.ny - 1),
                                     0.55 * static_cast<double>(s.nz - 1)};
  double best = std::numeric_limits<double>::infinity();
  std::array<double, 3> out = target;
  for (std::size_t i = 0; i < tissue.labels.size(); ++i) {
    if (tissue.labels[i] != TissueLabel::WhiteMatter) continue;
    const auto [x, y, z] = s.coords(i);
    const double d = std::pow(x - target[0], 2) + std::pow(y - target[1], 2) + std::pow(z - target[2], 2);
    if (d < best) {
      best = d;
      out = {static_cast<double>(x), static_cast<double>(y), static_cast<double>(z)};
    }
  }
  if (!std::isfinite(best)) throw Error(ErrorCode::SeedOutsideBrain, "phantom has no white matter");
  return out;
}

int cmd_demo(const DemoOptions& o, const std::vector<std::string>& argv) {
  Manifest manifest("demo", argv);
  const fs::path out = o.out;
  ensure_dir(out);
  if (fs::exists(out / "manifest.json")) fs::remove(out / "manifest.json");
  std::vector<fs::path> written;
  auto note = [&](const fs::path& p) { written.push_back(p); };
  auto note_volume = [&](const fs::path& p) {
    note(p);
    note(sidecar_path(p));
  };

  const GridSpec spec = GridSpec::cube(o.grid);
  std::cerr << "demo: building phantom and " << o.train_pairs << " training pairs\n";
  const TissueMap tissue = make_phantom(spec, o.seed, 0.0);
  write_tissue(out / "tissue.u8", tissue);
  note_volume(out / "tissue.u8");

  ToyDatasetOptions dopt;
  dopt.cases = o.train_pairs;
  dopt.modalities = {Modality::FLAIR};
  const auto cases = make_toy_cases(spec, rng::bits(o.seed, 0xda7a, 0), dopt);
  if (o.write_dataset) {
    for (const auto& p : write_dataset(cases, out / "dataset")) note(p);
  }

  const TrainSetup setup = toy_train_setup(o.seed, o.train_steps);
  write_json(out / "train.json", to_json(setup));
  note(out / "train.json");
  std::cerr << "demo: training " << o.train_steps << " steps\n";
  const auto pairs = to_training_pairs(cases);
  const TrainResult trained = train(VelocityModel(setup.model), pairs, setup.train);
  save_checkpoint(out / "model.tfm", trained.model, trained.ema);
  note(out / "model.tfm");
  // Generate from the checkpoint as written, so the demo exercises the same
  // f32 weights a later `generate` run would load.
  const Checkpoint ck = load_checkpoint(out / "model.tfm");

  GrowthParams growth;
  growth.rho = 0.03;
  growth.d_white = 0.28;
  growth.seed_center = demo_seed_center(tissue);
  growth.seed_sigma = 2.0;
  growth.seed_amplitude = 0.9;
  write_json(out / "growth.json", to_json(growth));
  note(out / "growth.json");

  LongitudinalPlan plan;
  plan.time_points = {0.0, 10.0, 20.0, 30.0, 40.0};
  plan.tau_tilde = 0.15;
  plan.integrator_steps = 50;
  plan.modalities = {Modality::FLAIR};
  write_json(out / "plan.json", to_json(plan));
  note(out / "plan.json");

  std::cerr << "demo: generating trajectory\n";
  const TrajectoryBundle bundle = generate_trajectory(ck.ema, tissue, growth, plan, std::nullopt, o.seed);
  for (const auto& p : write_bundle(bundle, out / "trajectory")) note(p);
  write_trajectory_metrics(bundle, out / "metrics.csv");
  note(out / "metrics.csv");

  // Reference images from the toy rule on the same concentrations.
  const fs::path ref = out / "reference";
  ensure_dir(ref);
  write_tissue(ref / "tissue.u8", tissue);
  note_volume(ref / "tissue.u8");
  const ScalarField3D texture = texture_field(tissue, o.seed);
  for (std::size_t t = 0; t < bundle.times.size(); ++t) {
    for (Modality m : plan.modalities) {
      const std::string name = days_tag(bundle.times[t]) + "_" + std::string(modality_name(m));
      write_field(ref / (name + ".f32"), synthesize_image(tissue, bundle.concentrations[t], m, texture),
                  VolumeIntent::Image);
      note_volume(ref / (name + ".f32"));
      write_mask(ref / ("mask_" + name + ".u8"), concentration_to_mask(bundle.concentrations[t]));
      note_volume(ref / ("mask_" + name + ".u8"));
    }
  }
  write_metric_records(evaluate_dirs(out / "trajectory", ref), out / "evaluation.csv");
  note(out / "evaluation.csv");

  std::cerr << "demo: corruption sweep\n";
  const auto sweep = corruption_sweep(ck.ema, tissue, growth, plan, {0.05, 0.15, 0.5, 0.9}, o.seed);
  write_sweep(sweep, out / "sweep.csv");
  note(out / "sweep.csv");

  manifest.config = {{"grid", o.grid},
                     {"train_pairs", o.train_pairs},
                     {"train_steps", o.train_steps},
                     {"write_dataset", o.write_dataset},
                     {"train", to_json(setup)},
                     {"growth", to_json(growth)},
                     {"plan", to_json(plan)}};
  manifest.seeds = {{"seed", o.seed}};
  manifest.results = {{"final_loss", trained.loss_curve.empty() ? 0.0 : trained.loss_curve.back()}};
  manifest.write(out / "manifest.json", out, written);
  return 0;
}

int resolve_threads(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("TFK_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring invalid TFK_THREADS=" << env << "\n";
  }
  return 1;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + std::min(argc, 1), argv + argc);

  CLI::App app{"Tumor growth simulation and longitudinal flow-matching synthesis"};
  app.set_version_flag("--version", std::string(kToolVersion));
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: $TFK_THREADS, else 1)")->check(CLI::PositiveNumber);

  auto add_sub = [&](const char* name, const char* help) {
    CLI::App* s = app.add_subcommand(name, help);
    s->fallthrough();
    return s;
  };

  // simulate
  std::string sim_tissue, sim_out, sim_seed;
  GrowthParams sim_params;
  SimClock sim_clock;
  sim_clock.t_end = 100.0;
  sim_clock.snapshot_every = 10.0;
  CLI::App* sim = add_sub("simulate", "Run the growth model and write concentration snapshots");
  sim->add_option("--tissue", sim_tissue, "Tissue label volume (.u8 with sidecar, or .nii)")->required();
  sim->add_option("--rho", sim_params.rho, "Proliferation rate (1/day)")->capture_default_str();
  sim->add_option("--d", sim_params.d_white, "White matter diffusivity (mm^2/day)")->capture_default_str();
  sim->add_option("--gray-ratio", sim_params.gray_ratio, "Gray/white diffusivity ratio")->capture_default_str();
  sim->add_option("--seed", sim_seed, "Seed centre in voxel coordinates, x,y,z")->required();
  sim->add_option("--sigma", sim_params.seed_sigma, "Seed width (mm)")->capture_default_str();
  sim->add_option("--amplitude", sim_params.seed_amplitude, "Seed peak concentration")->capture_default_str();
  sim->add_option("--dt", sim_clock.dt, "Time step (days)")->capture_default_str();
  sim->add_option("--t-end", sim_clock.t_end, "End time (days)")->capture_default_str();
  sim->add_option("--snapshot-every", sim_clock.snapshot_every, "Snapshot interval (days)")->capture_default_str();
  sim->add_option("--out", sim_out, "Output directory")->required();

  // fit
  std::string fit_target, fit_tissue, fit_grid, fit_out;
  CLI::App* fit = add_sub("fit", "Calibrate growth parameters against a tumor mask");
  fit->add_option("--target", fit_target, "Target mask (u8 labels) or concentration volume")->required();
  fit->add_option("--tissue", fit_tissue, "Tissue label volume")->required();
  fit->add_option("--grid", fit_grid, "Search grid JSON")->required();
  fit->add_option("--out", fit_out, "Output params JSON")->required();

  // train
  std::string tr_data, tr_cfg, tr_out;
  CLI::App* trn = add_sub("train", "Train the velocity model on a dataset directory");
  trn->add_option("--data", tr_data, "Directory with dataset.json")->required();
  trn->add_option("--cfg", tr_cfg, "Training config JSON")->required();
  trn->add_option("--out", tr_out, "Output checkpoint (.tfm)")->required();

  // generate
  std::string gen_model, gen_tissue, gen_growth, gen_plan, gen_out;
  std::vector<std::string> gen_initial;
  std::uint64_t gen_seed = 0;
  CLI::App* gen = add_sub("generate", "Generate a longitudinal sequence");
  gen->add_option("--model", gen_model, "Model checkpoint (.tfm)")->required();
  gen->add_option("--tissue", gen_tissue, "Tissue label volume")->required();
  gen->add_option("--growth", gen_growth, "Growth params JSON")->required();
  gen->add_option("--plan", gen_plan, "Plan JSON")->required();
  gen->add_option("--seed", gen_seed, "Noise seed")->required();
  gen->add_option("--initial", gen_initial, "Starting volume per plan modality, in plan order");
  gen->add_option("--out", gen_out, "Output directory")->required();

  // sweep
  std::string sw_model, sw_tissue, sw_growth, sw_plan, sw_out, sw_taus = "0.05,0.15,0.5,0.9";
  std::uint64_t sw_seed = 0;
  CLI::App* swp = add_sub("sweep", "Mean Dice and non-tumor PSNR across corruption levels");
  swp->add_option("--model", sw_model, "Model checkpoint (.tfm)")->required();
  swp->add_option("--tissue", sw_tissue, "Tissue label volume")->required();
  swp->add_option("--growth", sw_growth, "Growth params JSON")->required();
  swp->add_option("--plan", sw_plan, "Plan JSON")->required();
  swp->add_option("--taus", sw_taus, "Comma-separated corruption levels")->capture_default_str();
  swp->add_option("--seed", sw_seed, "Noise seed")->required();
  swp->add_option("--out", sw_out, "Output CSV")->required();

  // evaluate
  std::string ev_pred, ev_ref, ev_out;
  CLI::App* ev = add_sub("evaluate", "Compare generated volumes against references");
  ev->add_option("--pred", ev_pred, "Directory of generated volumes")->required();
  ev->add_option("--ref", ev_ref, "Directory of reference volumes")->required();
  ev->add_option("--out", ev_out, "Output CSV")->required();

  // demo
  DemoOptions demo;
  CLI::App* dm = add_sub("demo", "End-to-end run on a synthetic phantom");
  dm->add_option("--out", demo.out, "Output directory")->required();
  dm->add_option("--seed", demo.seed, "Master seed")->capture_default_str();
  dm->add_option("--grid", demo.grid, "Grid edge length (voxels)")->capture_default_str()->check(CLI::Range(8, 128));
  dm->add_option("--train-pairs", demo.train_pairs, "Synthetic training pairs")->capture_default_str();
  dm->add_option("--train-steps", demo.train_steps, "Training steps")->capture_default_str();
  dm->add_flag("--write-dataset", demo.write_dataset, "Also write the training pairs to <out>/dataset");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "run with --help for usage\n";
    return 2;
  }

  try {
    set_num_threads(resolve_threads(threads));

    if (sim->parsed()) {
      Manifest manifest("simulate", args);
      sim_params.seed_center = parse_point(sim_seed);
      const TissueMap tissue = load_tissue(sim_tissue);
      manifest.input(sim_tissue);
      ensure_dir(sim_out);
      std::vector<fs::path> written;
      for (const auto& snap : simulate(tissue, sim_params, sim_clock)) {
        const fs::path p = fs::path(sim_out) / ("conc_" + days_tag(snap.t_days) + ".f32");
        write_field(p, snap.concentration, VolumeIntent::Concentration);
        written.push_back(p);
        written.push_back(sidecar_path(p));
      }
      manifest.config = {{"growth", to_json(sim_params)},
                         {"dt", sim_clock.dt},
                         {"t_end", sim_clock.t_end},
                         {"snapshot_every", sim_clock.snapshot_every}};
      manifest.write(fs::path(sim_out) / "manifest.json", sim_out, written);
      return 0;
    }

    if (fit->parsed()) {
      Manifest manifest("fit", args);
      const LabelMask target = load_target(fit_target);
      const TissueMap tissue = load_tissue(fit_tissue);
      const FitSetup setup = fit_setup_from_json(read_json_input(fit_grid));
      for (const auto& p : {fit_target, fit_tissue, fit_grid}) manifest.input(p);
      const FitResult r = fit_growth_params(target, tissue, setup.grid, setup.clock);
      json params = to_json(r.params);
      params["fit_dice"] = r.fit_dice;
      const fs::path out = fit_out;
      if (out.has_parent_path()) ensure_dir(out.parent_path());
      write_json(out, params);
      manifest.config = to_json(setup);
      manifest.results = {{"fit_dice", r.fit_dice}, {"grid_dice", r.grid_dice}, {"evaluations", r.evaluations}};
      const fs::path root = out.has_parent_path() ? out.parent_path() : fs::path(".");
      manifest.write(manifest_beside(out), root, {out});
      return 0;
    }

    if (trn->parsed()) {
      Manifest manifest("train", args);
      const TrainSetup setup = train_setup_from_json(read_json_input(tr_cfg));
      const LoadedDataset ds = load_dataset(tr_data);
      manifest.input(tr_cfg);
      for (const auto& f : ds.files) manifest.input(f);
      const TrainResult r = train(VelocityModel(setup.model), ds.pairs, setup.train);
      const fs::path out = tr_out;
      if (out.has_parent_path()) ensure_dir(out.parent_path());
      save_checkpoint(out, r.model, r.ema);
      manifest.config = to_json(setup);
      manifest.seeds = {{"rng_seed", setup.train.rng_seed}, {"init_seed", setup.model.init_seed}};
      manifest.results = {{"pairs", ds.pairs.size()},
                          {"initial_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.front()},
                          {"final_loss", r.loss_curve.empty() ? 0.0 : r.loss_curve.back()}};
      const fs::path root = out.has_parent_path() ? out.parent_path() : fs::path(".");
      manifest.write(manifest_beside(out), root, {out});
      return 0;
    }

    if (gen->parsed() || swp->parsed()) {
      const bool is_gen = gen->parsed();
      Manifest manifest(is_gen ? "generate" : "sweep", args);
      const std::string& model_path = is_gen ? gen_model : sw_model;
      const std::string& tissue_path = is_gen ? gen_tissue : sw_tissue;
      const std::string& growth_path = is_gen ? gen_growth : sw_growth;
      const std::string& plan_path = is_gen ? gen_plan : sw_plan;
      const Checkpoint ck = load_checkpoint(model_path);
      const TissueMap tissue = load_tissue(tissue_path);
      const GrowthParams growth = growth_params_from_json(read_json_input(growth_path));
      const LongitudinalPlan plan = plan_from_json(read_json_input(plan_path));
      for (const auto& p : {model_path, tissue_path, growth_path, plan_path}) manifest.input(p);
      manifest.config = {{"growth", to_json(growth)}, {"plan", to_json(plan)}};

      if (is_gen) {
        InitialVolumes initial;
        if (!gen_initial.empty()) {
          initial.emplace();
          for (const auto& p : gen_initial) {
            initial->push_back(load_field(p));
            manifest.input(p);
          }
        }
        const TrajectoryBundle b = generate_trajectory(ck.ema, tissue, growth, plan, initial, gen_seed);
        std::vector<fs::path> written = write_bundle(b, gen_out);
        write_trajectory_metrics(b, fs::path(gen_out) / "metrics.csv");
        written.push_back(fs::path(gen_out) / "metrics.csv");
        manifest.seeds = {{"seed", gen_seed}};
        manifest.write(fs::path(gen_out) / "manifest.json", gen_out, written);
      } else {
        const auto taus = parse_list(sw_taus);
        const auto rows = corruption_sweep(ck.ema, tissue, growth, plan, taus, sw_seed);
        const fs::path out = sw_out;
        if (out.has_parent_path()) ensure_dir(out.parent_path());
        write_sweep(rows, out);
        manifest.seeds = {{"seed", sw_seed}};
        manifest.config["taus"] = taus;
        const fs::path root = out.has_parent_path() ? out.parent_path() : fs::path(".");
        manifest.write(manifest_beside(out), root, {out});
      }
      return 0;
    }

    if (ev->parsed()) {
      Manifest manifest("evaluate", args);
      const auto recs = evaluate_dirs(ev_pred, ev_ref);
      const fs::path out = ev_out;
      if (out.has_parent_path()) ensure_dir(out.parent_path());
      write_metric_records(recs, out);
      for (const auto& p : files_under(ev_pred)) manifest.input(p.string());
      for (const auto& p : files_under(ev_ref)) manifest.input(p.string());
      const fs::path root = out.has_parent_path() ? out.parent_path() : fs::path(".");
      manifest.write(manifest_beside(out), root, {out});
      return 0;
    }

    if (dm->parsed()) return cmd_demo(demo, args);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace tfk
