#include "cyclestain/cli/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <future>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "cyclestain/cli/toy_dataset.hpp"
#include "cyclestain/core/error.hpp"
#include "cyclestain/evaluation/agreement.hpp"
#include "cyclestain/evaluation/perceptual.hpp"
#include "cyclestain/evaluation/report.hpp"
#include "cyclestain/imaging/image_io.hpp"
#include "cyclestain/inference/inference.hpp"
#include "cyclestain/pipeline/pipeline.hpp"
#include "cyclestain/survey/server.hpp"
#include "cyclestain/survey/survey.hpp"
#include "cyclestain/trainer/trainer.hpp"

#ifndef CYCLESTAIN_BUILD_ID
#define CYCLESTAIN_BUILD_ID "unknown"
#endif

namespace cyclestain {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<fs::path> list_images(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && is_supported_image(e.path())) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

int worker_count(int requested) {
  return requested > 0 ? requested : static_cast<int>(std::max(1U, std::thread::hardware_concurrency()));
}

ImageSet load_manifest_images(const fs::path& manifest_path, Domain expected) {
  const Manifest m = read_manifest(manifest_path);
  if (m.records.empty()) throw DataError(manifest_path.string() + ": manifest has no patches");
  ImageSet set;
  for (const PatchRecord& r : m.records) {
    if (r.domain != expected)
      throw DataError(manifest_path.string() + ": record for " + r.slide_id + " is " +
                      std::string(to_string(r.domain)) + ", expected " + std::string(to_string(expected)));
    set.add_file(resolve_patch(manifest_path, r));
  }
  return set;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

struct RatingsCsv {
  std::vector<Rating> ratings;
  std::vector<std::string> domains;  // empty strings when the column is absent
  bool has_domain = false;
};

RatingsCsv read_ratings_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open ratings " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + ": empty ratings file");
  const auto header = split(trim(line), ',');
  auto column = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return static_cast<int>(i);
    return -1;
  };
  const int cs = column("subject_id");
  const int cr = column("rater_id");
  const int cc = column("category");
  const int cd = column("domain");
  if (cs < 0 || cr < 0 || cc < 0)
    throw DataError(path.string() + ": header must name subject_id, rater_id and category");
  RatingsCsv out;
  out.has_domain = cd >= 0;
  long lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split(trim(line), ',');
    const int need = std::max({cs, cr, cc, cd}) + 1;
    if (static_cast<int>(cells.size()) < need)
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(need) + " columns");
    out.ratings.push_back({trim(cells[cs]), trim(cells[cr]), trim(cells[cc])});
    out.domains.push_back(cd >= 0 ? trim(cells[cd]) : std::string());
  }
  return out;
}

std::pair<int, int> parse_region(const std::string& s) {
  const auto x = s.find_first_of("xX");
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("region must look like 2000x2000, got '" + s + "'");
  }
}

// Shared run bookkeeping for every subcommand.
struct Run {
  RunRecord rec;
  fs::path record_path;

  void write() const {
    if (record_path.empty()) return;
    write_json(record_path, rec);
  }
};

class Dispatcher {
 public:
  Dispatcher() : app_("cyclestain: frozen-to-paraffin stain translation and evaluation tools") {
    app_.require_subcommand(1);
    app_.set_help_all_flag("--help-all", "Show help for every subcommand");
    add_toy();
    add_extract();
    add_train();
    add_translate();
    add_bench();
    add_eval_lpips();
    add_eval_kappa();
    add_survey();
  }

  int run(std::vector<std::string> args) {
    std::reverse(args.begin(), args.end());
    try {
      app_.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app_.exit(e);
      return code == 0 ? kExitOk : kExitUsage;
    }
    for (auto& [sub, action] : actions_) {
      if (!sub->parsed()) continue;
      return execute(sub, action);
    }
    std::cerr << app_.help();
    return kExitUsage;
  }

 private:
  using Action = std::function<void(Run&)>;

  int execute(CLI::App* sub, const Action& action) {
    Run run;
    run.rec.subcommand = sub->get_parent() && sub->get_parent() != &app_
                             ? sub->get_parent()->get_name() + " " + sub->get_name()
                             : sub->get_name();
    run.rec.seed = seed_;
    run.rec.started = iso_utc_now();
    run.rec.build_id = build_id();
    if (!record_.empty()) run.record_path = record_;
    int code = kExitOk;
    try {
      action(run);
    } catch (const ConfigError& e) {
      std::cerr << "error: " << e.what() << '\n';
      run.rec.error = e.what();
      code = kExitUsage;
    } catch (const ContractError& e) {
      std::cerr << "error: " << e.what() << '\n';
      run.rec.error = e.what();
      code = kExitUsage;
    } catch (const NumericError& e) {
      std::cerr << "numeric failure: " << e.what() << '\n';
      run.rec.error = e.what();
      code = kExitNumeric;
    } catch (const std::exception& e) {
      std::cerr << "data error: " << e.what() << '\n';
      run.rec.error = e.what();
      code = kExitData;
    }
    run.rec.exit_code = code;
    run.rec.finished = iso_utc_now();
    try {
      run.write();
    } catch (const std::exception& e) {
      std::cerr << "warning: could not write run record: " << e.what() << '\n';
    }
    return code;
  }

  void common(CLI::App* sub, bool with_seed = true) {
    if (with_seed) sub->add_option("--seed", seed_, "Master seed for every stochastic component");
    sub->add_option("--threads", threads_, "Worker threads (0 = machine parallelism)")->check(CLI::NonNegativeNumber);
    sub->add_option("--record", record_, "Run record path (defaults next to the primary output)");
  }

  void default_record(Run& run, const fs::path& p) {
    if (run.record_path.empty()) run.record_path = p;
  }

  void add_toy() {
    auto* sub = app_.add_subcommand("toy-dataset", "Render the synthetic two-domain toy set");
    auto o = std::make_shared<std::tuple<std::string, int, int>>("", 100, 512);
    sub->add_option("--out", std::get<0>(*o), "Output directory")->required();
    sub->add_option("--n", std::get<1>(*o), "Images per domain")->check(CLI::PositiveNumber);
    sub->add_option("--size", std::get<2>(*o), "Image side in pixels")->check(CLI::Range(16, 8192));
    common(sub);
    actions_.emplace_back(sub, [this, o](Run& run) {
      const auto& [out, n, size] = *o;
      default_record(run, fs::path(out) / "run_toy-dataset.json");
      run.rec.config = {{"n_per_domain", n}, {"size", size}};
      const ToyDataset ds = toy_dataset(out, seed_, n, size);
      run.rec.artifacts = {{"domain_a", (fs::path(out) / "A").string()}, {"domain_b", (fs::path(out) / "B").string()},
                           {"count", ds.domain_a.size() + ds.domain_b.size()}};
      std::cout << "wrote " << ds.domain_a.size() << " + " << ds.domain_b.size() << " images to " << out << '\n';
    });
  }

  void add_extract() {
    auto* sub = app_.add_subcommand("extract", "Cut tissue patches from slide rasters and write a manifest");
    struct Opts {
      std::string slides, domain, out, magnification = "20x";
      ExtractOptions ex;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--slides", o->slides, "Directory of slide images")->required();
    sub->add_option("--domain", o->domain, "FF or FFPE")->required();
    sub->add_option("--patch", o->ex.patch, "Patch side")->capture_default_str();
    sub->add_option("--stride", o->ex.stride, "Grid stride")->capture_default_str();
    sub->add_option("--threshold", o->ex.tissue_threshold, "Minimum tissue fraction")->capture_default_str();
    sub->add_option("--background-cutoff", o->ex.background_cutoff, "Luma below which a pixel is tissue");
    sub->add_option("--magnification", o->magnification, "Magnification tag stored per record");
    sub->add_option("--out", o->out, "Output directory")->required();
    common(sub);
    actions_.emplace_back(sub, [this, o](Run& run) {
      const fs::path out(o->out);
      default_record(run, out / "run_extract.json");
      const Domain domain = parse_domain(o->domain);
      o->ex.validate();
      run.rec.config = {{"domain", to_string(domain)},
                        {"patch", o->ex.patch},
                        {"stride", o->ex.stride},
                        {"tissue_threshold", o->ex.tissue_threshold},
                        {"background_cutoff", o->ex.background_cutoff},
                        {"magnification", o->magnification}};
      run.rec.inputs = {{"slides", o->slides}};
      const auto slides = list_images(o->slides);
      if (slides.empty()) throw DataError("no slide images in " + o->slides);
      fs::create_directories(out / "patches");

      // Slides are processed concurrently; records are merged in slide order.
      std::vector<std::vector<PatchRecord>> per_slide(slides.size());
      std::atomic<std::size_t> next{0};
      std::mutex err_mutex;
      std::exception_ptr failure;
      auto work = [&] {
        for (std::size_t i = next++; i < slides.size(); i = next++) {
          try {
            const Image slide = read_image(slides[i]);
            const std::string id = slides[i].stem().string();
            for (const ExtractedPatch& p : extract_patches(slide, o->ex)) {
              const std::string name = id + "_y" + std::to_string(p.origin.y) + "_x" + std::to_string(p.origin.x) + ".png";
              write_image(out / "patches" / name, p.image);
              per_slide[i].push_back(
                  {id, p.origin, slide.height(), slide.width(), domain, "patches/" + name, o->magnification});
            }
          } catch (...) {
            std::lock_guard lock(err_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      };
      {
        std::vector<std::jthread> pool;
        const int n = std::min<int>(worker_count(threads_), static_cast<int>(slides.size()));
        for (int k = 1; k < n; ++k) pool.emplace_back(work);
        work();
      }
      if (failure) std::rethrow_exception(failure);
      Manifest m;
      m.patch_size = o->ex.patch;
      m.seed = seed_;
      m.tissue_threshold = o->ex.tissue_threshold;
      m.background_cutoff = o->ex.background_cutoff;
      for (auto& v : per_slide) m.records.insert(m.records.end(), v.begin(), v.end());
      write_manifest(out / "manifest.jsonl", m);
      run.rec.artifacts = {{"manifest", (out / "manifest.jsonl").string()}, {"patches", m.records.size()}};
      std::cout << "extracted " << m.records.size() << " patches from " << slides.size() << " slides\n";
    });
  }

  void add_train() {
    auto* sub = app_.add_subcommand("train", "Train both generators and discriminators");
    struct Opts {
      std::string ff, ffpe, out, resume, config;
      long iters = 0, checkpoint_interval = 0, decay_interval = 0;
      double lr = 0, gamma1 = 0, decay_factor = 0;
      int batch = 1, crop = 0, depth = 3, base = 32, res_blocks = 4, disc_layers = 4, disc_base = 64, prefetch = 2;
      bool no_augment = false, history = false;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--ff-manifest", o->ff, "Manifest of FF patches")->required();
    sub->add_option("--ffpe-manifest", o->ffpe, "Manifest of FFPE patches")->required();
    sub->add_option("--out", o->out, "Output directory")->required();
    auto* iters = sub->add_option("--iters", o->iters, "Total iterations");
    auto* lr = sub->add_option("--lr", o->lr, "Initial learning rate");
    auto* gamma1 = sub->add_option("--gamma1", o->gamma1, "Cycle-consistency weight");
    auto* decay_f = sub->add_option("--decay-factor", o->decay_factor, "Learning-rate decay factor");
    auto* decay_i = sub->add_option("--decay-interval", o->decay_interval, "Iterations between decays");
    auto* ckpt_i = sub->add_option("--checkpoint-interval", o->checkpoint_interval, "Iterations between checkpoints");
    auto* batch = sub->add_option("--batch", o->batch, "Batch size");
    auto* crop = sub->add_option("--crop", o->crop, "Random crop side (0 = whole patch)");
    auto* depth = sub->add_option("--depth", o->depth, "Generator depth");
    auto* base = sub->add_option("--base", o->base, "Generator base channels");
    auto* res = sub->add_option("--res-blocks", o->res_blocks, "Residual blocks in the bottleneck");
    auto* dl = sub->add_option("--disc-layers", o->disc_layers, "Discriminator feature convolutions");
    auto* db = sub->add_option("--disc-base", o->disc_base, "Discriminator base channels");
    auto* pf = sub->add_option("--prefetch", o->prefetch, "Batches prepared ahead");
    auto* na = sub->add_flag("--no-augment", o->no_augment, "Disable the random affine augmentation");
    auto* hist = sub->add_flag("--history", o->history, "Enable the discriminator replay pool");
    auto* seed = sub->add_option("--seed", seed_, "Master seed");
    sub->add_option("--resume", o->resume, "Checkpoint to resume from");
    sub->add_option("--config", o->config, "JSON training configuration");
    sub->add_option("--threads", threads_, "Unused; training is single-threaded apart from prefetch");
    sub->add_option("--record", record_, "Run record path");
    actions_.emplace_back(sub, [this, o, iters, lr, gamma1, decay_f, decay_i, ckpt_i, batch, crop, depth, base, res, dl,
                                db, pf, na, hist, seed](Run& run) {
      const fs::path out(o->out);
      default_record(run, out / "run_train.json");
      TrainConfig cfg;
      if (!o->config.empty()) {
        std::ifstream in(o->config);
        if (!in) throw DataError("cannot open config " + o->config);
        try {
          cfg = json::parse(in).get<TrainConfig>();
        } catch (const json::exception& e) {
          throw ConfigError("bad training config: " + std::string(e.what()));
        }
      } else if (!o->resume.empty()) {
        (void)from_checkpoint(load_checkpoint(o->resume), &cfg);
        if (*depth || *base || *res || *dl || *db)
          throw ConfigError("model shape flags conflict with --resume; the checkpoint fixes the architecture");
      }
      if (*iters) cfg.max_iterations = o->iters;
      if (*lr) cfg.initial_lr = o->lr;
      if (*gamma1) cfg.gamma1 = o->gamma1;
      if (*decay_f) cfg.decay_factor = o->decay_factor;
      if (*decay_i) cfg.decay_interval = o->decay_interval;
      if (*ckpt_i) cfg.checkpoint_interval = o->checkpoint_interval;
      if (*batch) cfg.batch_size = o->batch;
      if (*crop) cfg.crop = o->crop;
      if (*depth) cfg.model.generator.depth = o->depth;
      if (*base) cfg.model.generator.base_channels = o->base;
      if (*res) cfg.model.generator.residual_blocks = o->res_blocks;
      if (*dl) cfg.model.discriminator.layers = o->disc_layers;
      if (*db) cfg.model.discriminator.base_channels = o->disc_base;
      if (*pf) cfg.prefetch_depth = o->prefetch;
      if (*na) cfg.augment = false;
      if (*hist) cfg.image_history = true;
      if (*seed || (o->config.empty() && o->resume.empty())) cfg.seed = seed_;
      cfg.validate();
      run.rec.seed = cfg.seed;
      run.rec.config = cfg;
      run.rec.inputs = {{"ff_manifest", o->ff}, {"ffpe_manifest", o->ffpe}};
      if (!o->resume.empty()) run.rec.inputs["resume"] = o->resume;

      const ImageSet ff = load_manifest_images(o->ff, Domain::FF);
      const ImageSet ffpe = load_manifest_images(o->ffpe, Domain::FFPE);
      TrainOptions opts;
      if (!o->resume.empty()) opts.resume = fs::path(o->resume);
      const long report_every = std::max(1L, cfg.max_iterations / 20);
      opts.on_iteration = [report_every](long it, const LossBundle& b) {
        if (it % report_every == 0)
          std::cerr << "iter " << it << " cycle " << b.cycle << " total_G " << b.total_G << " total_D " << b.total_D
                    << '\n';
      };
      const TrainResult res_ = train(cfg, ff, ffpe, out, opts);
      json ckpts = json::array();
      for (const auto& c : res_.checkpoints) ckpts.push_back(c.string());
      run.rec.artifacts = {{"loss_csv", res_.loss_csv.string()},
                           {"checkpoints", ckpts},
                           {"final_checkpoint", res_.checkpoints.empty() ? std::string() : res_.checkpoints.back().string()},
                           {"iterations", res_.state.iteration}};
      std::cout << "trained to iteration " << res_.state.iteration << "; final checkpoint "
                << (res_.checkpoints.empty() ? std::string("(none)") : res_.checkpoints.back().string()) << '\n';
    });
  }

  void add_translate() {
    auto* sub = app_.add_subcommand("translate", "Translate an image or a directory of images");
    struct Opts {
      std::string ckpt, input, output, blend = "feather", direction = "ff-to-ffpe";
      TilingPolicy policy;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--ckpt", o->ckpt, "Checkpoint")->required();
    sub->add_option("--input", o->input, "Input image or directory")->required();
    sub->add_option("--output", o->output, "Output image or directory")->required();
    sub->add_option("--tile", o->policy.tile, "Tile side")->capture_default_str();
    sub->add_option("--overlap", o->policy.overlap, "Tile overlap")->capture_default_str();
    sub->add_option("--blend", o->blend, "feather or center-crop")->capture_default_str();
    sub->add_option("--direction", o->direction, "ff-to-ffpe or ffpe-to-ff")->capture_default_str();
    common(sub, false);
    actions_.emplace_back(sub, [this, o](Run& run) {
      const fs::path input(o->input);
      const fs::path output(o->output);
      const bool batch = fs::is_directory(input);
      if (batch && fs::exists(output) && !fs::is_directory(output))
        throw ConfigError("--input is a directory, so --output must be a directory too");
      if (!batch && (fs::is_directory(output) || output.extension().empty()))
        throw ConfigError("--input is a file, so --output must be an image file path");
      default_record(run, batch ? output / "run_translate.json" : fs::path(output.string() + ".run.json"));
      std::string_view ns;
      if (o->direction == "ff-to-ffpe") ns = kGenFFPE;
      else if (o->direction == "ffpe-to-ff") ns = kGenFF;
      else throw ConfigError("--direction must be ff-to-ffpe or ffpe-to-ff");
      o->policy.blend = parse_blend(o->blend);
      const Translator t = load_translator(o->ckpt, ns);
      o->policy.validate(t.config.required_multiple());
      run.rec.config = {{"tile", o->policy.tile}, {"overlap", o->policy.overlap}, {"blend", o->blend},
                        {"direction", o->direction}, {"threads", worker_count(threads_)}};
      run.rec.inputs = {{"ckpt", o->ckpt}, {"input", o->input}};
      std::vector<std::pair<fs::path, fs::path>> jobs;
      if (batch) {
        fs::create_directories(output);
        for (const auto& p : list_images(input)) jobs.emplace_back(p, output / (p.stem().string() + ".png"));
        if (jobs.empty()) throw DataError("no images in " + input.string());
      } else {
        jobs.emplace_back(input, output);
      }
      json written = json::array();
      for (const auto& [src, dst] : jobs) {
        const Image img = normalize(read_image(src), ValueRange::Symmetric);
        write_image(dst, translate_slide(t, img, o->policy, threads_));
        written.push_back(dst.string());
      }
      run.rec.artifacts = {{"outputs", written}, {"output", output.string()}};
      std::cout << "translated " << jobs.size() << " image(s)\n";
    });
  }

  void add_bench() {
    auto* sub = app_.add_subcommand("bench", "Time tiled translation of a synthetic region");
    struct Opts {
      std::string ckpt, region = "2000x2000", json_out, blend = "feather";
      int reps = 10;
      TilingPolicy policy;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--ckpt", o->ckpt, "Checkpoint")->required();
    sub->add_option("--region", o->region, "HxW region")->capture_default_str();
    sub->add_option("--reps", o->reps, "Timed repetitions")->capture_default_str();
    sub->add_option("--json", o->json_out, "Report path")->required();
    sub->add_option("--tile", o->policy.tile, "Tile side")->capture_default_str();
    sub->add_option("--overlap", o->policy.overlap, "Tile overlap")->capture_default_str();
    sub->add_option("--blend", o->blend, "feather or center-crop")->capture_default_str();
    common(sub, false);
    actions_.emplace_back(sub, [this, o](Run& run) {
      default_record(run, o->json_out + ".run.json");
      const auto [h, w] = parse_region(o->region);
      o->policy.blend = parse_blend(o->blend);
      const auto t0 = std::chrono::steady_clock::now();
      const Translator t = load_translator(o->ckpt);
      const double load_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      BenchmarkReport rep = benchmark(t, h, w, o->reps, o->policy, threads_);
      json j = rep;
      j["phases"]["load_s"] = load_s;
      write_json(o->json_out, j);
      run.rec.config = {{"region", o->region}, {"reps", o->reps}, {"tile", o->policy.tile}, {"overlap", o->policy.overlap}};
      run.rec.inputs = {{"ckpt", o->ckpt}};
      run.rec.artifacts = {{"report", o->json_out}};
      std::printf("median %.4f s, p95 %.4f s, %.0f px/s (reference %.3f s on the published hardware)\n", rep.median_s,
                  rep.p95_s, rep.pixels_per_second, rep.reference_s);
    });
  }

  void add_eval_lpips() {
    auto* sub = app_.add_subcommand("eval-lpips", "Perceptual distance of FF and virtual FFPE to FFPE references");
    struct Opts {
      std::string features = "builtin:random", pairs, json_out;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--ckpt-features", o->features, "Feature extractor checkpoint or builtin:random")->capture_default_str();
    sub->add_option("--pairs", o->pairs, "JSONL with ff, vffpe, ffpe paths per line")->required();
    sub->add_option("--json", o->json_out, "Report path")->required();
    common(sub);
    actions_.emplace_back(sub, [this, o](Run& run) {
      default_record(run, o->json_out + ".run.json");
      const FeatureExtractor fx = resolve_feature_extractor(o->features, seed_);
      std::ifstream in(o->pairs);
      if (!in) throw DataError("cannot open pairs " + o->pairs);
      const fs::path base = fs::path(o->pairs).parent_path();
      auto resolve = [&](const std::string& p) { return fs::path(p).is_relative() ? base / p : fs::path(p); };
      std::vector<Image> ff, vffpe, ffpe;
      std::vector<Triple> triples;
      std::string line;
      long lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        try {
          const json j = json::parse(line);
          ff.push_back(read_image(resolve(j.at("ff").get<std::string>())));
          vffpe.push_back(read_image(resolve(j.at("vffpe").get<std::string>())));
          ffpe.push_back(read_image(resolve(j.at("ffpe").get<std::string>())));
        } catch (const json::exception& e) {
          throw DataError(o->pairs + ":" + std::to_string(lineno) + ": " + e.what());
        }
        const std::size_t k = ff.size() - 1;
        triples.push_back({k, k, k});
      }
      if (triples.empty()) throw DataError("pairs file lists no triples");
      std::vector<std::pair<std::size_t, std::size_t>> pairing;
      for (std::size_t k = 0; k < triples.size(); ++k) pairing.emplace_back(k, k);
      const DistanceSummary s_ff = lpips_summary(fx, ff, ffpe, pairing);
      const DistanceSummary s_v = lpips_summary(fx, vffpe, ffpe, pairing);
      const double closer = fraction_closer(s_ff.distances, s_v.distances);
      const std::string table = render_lpips_table({{"FF", s_ff}, {"vFFPE", s_v}});
      const json report = {{"extractor", fx.name},
                           {"pairs", triples.size()},
                           {"ff_vs_ffpe", {{"mean", s_ff.mean}, {"std", s_ff.std}, {"formatted", format_mean_std(s_ff.mean, s_ff.std)}, {"distances", s_ff.distances}}},
                           {"vffpe_vs_ffpe", {{"mean", s_v.mean}, {"std", s_v.std}, {"formatted", format_mean_std(s_v.mean, s_v.std)}, {"distances", s_v.distances}}},
                           {"fraction_closer", closer},
                           {"table", table}};
      write_json(o->json_out, report);
      run.rec.config = {{"extractor", o->features}};
      run.rec.inputs = {{"pairs", o->pairs}};
      run.rec.artifacts = {{"report", o->json_out}};
      std::cout << table << "fraction closer: " << closer << '\n';
    });
  }

  void add_eval_kappa() {
    auto* sub = app_.add_subcommand("eval-kappa", "Fleiss' kappa with a bootstrap interval from a ratings CSV");
    struct Opts {
      std::string ratings, json_out, domain, collapse = "none";
      double level = 0.95;
      int resamples = 1000;
      bool by_domain = false;
      std::uint64_t seed = 7;
    };
    auto o = std::make_shared<Opts>();
    sub->add_option("--ratings", o->ratings, "CSV with subject_id, rater_id, category[, domain]")->required();
    sub->add_option("--level", o->level, "Confidence level")->capture_default_str();
    sub->add_option("--resamples", o->resamples, "Bootstrap resamples")->capture_default_str();
    sub->add_option("--json", o->json_out, "Report path")->required();
    auto* dom = sub->add_option("--domain", o->domain, "Only rows with this domain value");
    auto* byd = sub->add_flag("--by-domain", o->by_domain, "One result per domain value");
    sub->add_option("--collapse", o->collapse, "none or benign-cancer")->capture_default_str();
    dom->excludes(byd);
    sub->add_option("--seed", o->seed, "Bootstrap seed")->capture_default_str();
    common(sub, false);
    actions_.emplace_back(sub, [this, o](Run& run) {
      default_record(run, o->json_out + ".run.json");
      run.rec.seed = o->seed;
      if (o->collapse != "none" && o->collapse != "benign-cancer")
        throw ConfigError("--collapse must be none or benign-cancer");
      const RatingsCsv csv = read_ratings_csv(o->ratings);
      if ((o->by_domain || !o->domain.empty()) && !csv.has_domain)
        throw ConfigError("ratings file has no domain column");
      std::map<std::string, std::vector<Rating>> groups;
      for (std::size_t i = 0; i < csv.ratings.size(); ++i) {
        if (!o->domain.empty() && csv.domains[i] != o->domain) continue;
        groups[o->by_domain ? csv.domains[i] : std::string("all")].push_back(csv.ratings[i]);
      }
      if (groups.empty()) throw DataError("no ratings selected");
      json results = json::object();
      for (const auto& [g, ratings] : groups) {
        RatingMatrix m = tally(ratings);
        if (o->collapse == "benign-cancer") m = benign_vs_cancer(m);
        const AgreementResult a = agreement(m, o->level, o->resamples, o->seed);
        results[g] = {{"kappa", a.kappa},
                      {"ci_low", a.ci_low},
                      {"ci_high", a.ci_high},
                      {"band", a.band},
                      {"formatted", format_interval(a)},
                      {"subjects", m.counts.size()},
                      {"raters", m.raters()},
                      {"categories", m.categories},
                      {"skipped_resamples", a.interval.skipped}};
        std::cout << g << ": " << format_interval(a) << " " << a.band << '\n';
      }
      write_json(o->json_out, {{"level", o->level}, {"resamples", o->resamples}, {"seed", o->seed}, {"results", results}});
      run.rec.config = {{"level", o->level}, {"resamples", o->resamples}, {"collapse", o->collapse},
                        {"domain", o->domain}, {"by_domain", o->by_domain}};
      run.rec.inputs = {{"ratings", o->ratings}};
      run.rec.artifacts = {{"report", o->json_out}};
    });
  }

  void add_survey() {
    auto* survey = app_.add_subcommand("survey", "Blinded reader survey");
    survey->require_subcommand(1);

    auto* build = survey->add_subcommand("build", "Sample items and per-reviewer orders into a plan");
    struct BuildOpts {
      std::string ff, vffpe, ffpe, out, reviewers;
      std::vector<int> counts{35, 35, 35};
    };
    auto b = std::make_shared<BuildOpts>();
    build->add_option("--ff", b->ff, "Directory of FF images")->required();
    build->add_option("--vffpe", b->vffpe, "Directory of virtual FFPE images")->required();
    build->add_option("--ffpe", b->ffpe, "Directory of FFPE images")->required();
    build->add_option("--counts", b->counts, "Items per domain: FF,vFFPE,FFPE")->delimiter(',')->expected(3);
    build->add_option("--reviewers", b->reviewers, "Comma-separated reviewer ids")->required();
    build->add_option("--out", b->out, "Plan file")->required();
    common(build);
    actions_.emplace_back(build, [this, b](Run& run) {
      default_record(run, b->out + ".run.json");
      const std::map<std::string, std::vector<fs::path>> pools{
          {"FF", list_images(b->ff)}, {"vFFPE", list_images(b->vffpe)}, {"FFPE", list_images(b->ffpe)}};
      const std::map<std::string, int> counts{{"FF", b->counts[0]}, {"vFFPE", b->counts[1]}, {"FFPE", b->counts[2]}};
      std::vector<std::string> reviewers;
      for (auto& r : split(b->reviewers, ',')) reviewers.push_back(trim(r));
      const SurveyPlan plan = build_survey(pools, counts, reviewers, seed_);
      save_plan(b->out, plan);
      run.rec.config = {{"counts", b->counts}, {"reviewers", reviewers}};
      run.rec.inputs = {{"ff", b->ff}, {"vffpe", b->vffpe}, {"ffpe", b->ffpe}};
      run.rec.artifacts = {{"plan", b->out}, {"items", plan.items.size()}};
      std::cout << "plan with " << plan.items.size() << " items for " << reviewers.size() << " reviewers\n";
    });

    auto* serve = survey->add_subcommand("serve", "Serve the survey over HTTP");
    struct ServeOpts {
      std::string plan, store, host = "127.0.0.1";
      int port = 8080;
    };
    auto s = std::make_shared<ServeOpts>();
    serve->add_option("--plan", s->plan, "Plan file")->required();
    serve->add_option("--store", s->store, "Response store directory")->required();
    serve->add_option("--port", s->port, "Port")->check(CLI::Range(1, 65535));
    serve->add_option("--host", s->host, "Bind address");
    common(serve, false);
    actions_.emplace_back(serve, [this, s](Run& run) {
      default_record(run, fs::path(s->store) / "run_survey-serve.json");
      const char* token = std::getenv(kAdminTokenEnv);
      SurveyService svc(load_plan(s->plan), s->store, token ? std::optional<std::string>(token) : std::nullopt);
      run.rec.config = {{"host", s->host}, {"port", s->port}, {"export_enabled", token != nullptr}};
      run.rec.inputs = {{"plan", s->plan}};
      run.rec.artifacts = {{"store", svc.store().log_path().string()}};
      std::cerr << "serving " << svc.plan().items.size() << " items on " << s->host << ":" << s->port << '\n';
      svc.listen(s->host, s->port);
    });

    auto* exp = survey->add_subcommand("export", "Write unblinded ratings as CSV");
    struct ExportOpts {
      std::string plan, store, out, question = "Q2";
      bool partial = false;
    };
    auto e = std::make_shared<ExportOpts>();
    exp->add_option("--plan", e->plan, "Plan file")->required();
    exp->add_option("--store", e->store, "Response store directory")->required();
    exp->add_option("--question", e->question, "Q1 or Q2")->capture_default_str();
    exp->add_option("--out", e->out, "CSV path")->required();
    exp->add_flag("--partial", e->partial, "Allow incomplete reviews");
    common(exp, false);
    actions_.emplace_back(exp, [this, e](Run& run) {
      default_record(run, e->out + ".run.json");
      const SurveyPlan plan = load_plan(e->plan);
      ResponseStore store(plan, e->store);
      const RatingExport ex = export_ratings(plan, *store.snapshot(), parse_question(e->question), e->partial);
      std::ofstream out(e->out, std::ios::trunc);
      if (!out) throw DataError("cannot write " + e->out);
      out << export_csv(ex);
      run.rec.config = {{"question", e->question}, {"partial", e->partial}};
      run.rec.inputs = {{"plan", e->plan}, {"store", e->store}};
      run.rec.artifacts = {{"csv", e->out}, {"rows", ex.ratings.size()}, {"missing", ex.missing.size()}};
      std::cout << "exported " << ex.ratings.size() << " ratings\n";
    });
  }

  CLI::App app_;
  std::vector<std::pair<CLI::App*, Action>> actions_;
  std::uint64_t seed_ = 0;
  int threads_ = 0;
  std::string record_;
};

}  // namespace

void to_json(json& j, const RunRecord& r) {
  j = json{{"subcommand", r.subcommand}, {"config", r.config},   {"seed", r.seed},
           {"started", r.started},       {"finished", r.finished}, {"inputs", r.inputs},
           {"artifacts", r.artifacts},   {"build_id", r.build_id}, {"exit_code", r.exit_code}};
  if (!r.error.empty()) j["error"] = r.error;
}

std::string build_id() { return CYCLESTAIN_BUILD_ID; }

std::string iso_utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[64];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

int dispatch(const std::vector<std::string>& args) {
  Dispatcher d;
  return d.run(args);
}

int dispatch(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return dispatch(args);
}

}  // namespace cyclestain
