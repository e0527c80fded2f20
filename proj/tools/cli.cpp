#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "tricov/checkpoint.hpp"
#include "tricov/dataset.hpp"
#include "tricov/errors.hpp"
#include "tricov/evaluation.hpp"
#include "tricov/extractor.hpp"
#include "tricov/gradcheck.hpp"
#include "tricov/image_io.hpp"
#include "tricov/parallel.hpp"
#include "tricov/trainer.hpp"

namespace tricov::cli {
namespace {

namespace fs = std::filesystem;

// threads and output locations do not change any result
std::string effective_config(const CLI::App& sub) {
  static const char* const skipped[] = {"threads", "config", "out", "log", "out-dir",
                                        "emit-plot-data"};
  std::istringstream in(sub.config_to_str(true, false));
  std::string line, kept;
  while (std::getline(in, line)) {
    const std::string key = line.substr(0, line.find('='));
    if (std::find(std::begin(skipped), std::end(skipped), key) != std::end(skipped)) continue;
    kept += line + '\n';
  }
  return "command=\"" + sub.get_name() + "\"\n" + kept;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

void write_config_record(const fs::path& path, const std::string& config,
                         const std::string& hash) {
  write_text(path, "# config " + hash + "\n" + config);
}

bool is_image_file(const fs::path& p) {
  const auto ext = p.extension().string();
  return ext == ".pgm" || ext == ".ppm";
}

// ---- make-patches

struct MakePatchesOptions {
  std::string source;
  int synthetic_images = 16;
  int image_size = 256;
  std::uint64_t image_seed = 0;
  AugmentationConfig aug;
  std::string out;
  std::size_t threads = default_thread_count();
};

void add_augmentation_options(CLI::App* sub, AugmentationConfig& aug) {
  sub->add_option("--scale-min", aug.scale_min, "smallest axis scale");
  sub->add_option("--scale-max", aug.scale_max, "largest axis scale");
  sub->add_option("--shear-min", aug.shear_min);
  sub->add_option("--shear-max", aug.shear_max);
  sub->add_option("--rotation-min", aug.rotation_min_deg, "degrees");
  sub->add_option("--rotation-max", aug.rotation_max_deg, "degrees");
  sub->add_option("--jitter", aug.jitter, "reference patch offset range, pixels");
  sub->add_option("--translation", aug.translation, "triplet offset range, pixels");
}

int cmd_make_patches(const MakePatchesOptions& o, const CLI::App& sub, std::ostream& out) {
  std::vector<Image> images;
  if (!o.source.empty()) {
    const fs::path dir(o.source);
    if (!fs::is_directory(dir)) throw InputError("source directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_regular_file() && is_image_file(e.path())) files.push_back(e.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no .pgm or .ppm images in " + dir.string());
    for (const auto& f : files) images.push_back(read_image(f));
  } else {
    if (o.synthetic_images < 1) throw InputError("--synthetic-images must be positive");
    for (int i = 0; i < o.synthetic_images; ++i)
      images.push_back(synthetic_corner_image(o.image_size, o.image_size,
                                              stream_seed(o.image_seed, static_cast<std::uint64_t>(i))));
  }
  const std::string config = effective_config(sub);
  const std::string hash = fnv1a_hex(config);
  build_training_set(images, o.aug, o.out, o.threads);
  write_config_record(o.out + ".cfg", config, hash);
  out << "wrote " << o.aug.tuple_count << " tuples from " << images.size() << " images to "
      << o.out << " (config " << hash << ")\n";
  return kOk;
}

// ---- train

struct TrainOptions {
  std::string archive;
  std::string out;
  std::string log;
  std::string resume_from;
  std::string loss = "trip-aff";
  TrainConfig config;
};

int cmd_train(TrainOptions o, const CLI::App& sub, std::ostream& out) {
  o.config.loss.variant = parse_loss_variant(o.loss);
  o.config.checkpoint_path = o.out;
  o.config.log_path = o.log.empty() ? o.out + ".jsonl" : o.log;
  const std::string config = effective_config(sub);
  const std::string hash = fnv1a_hex(config);
  write_config_record(o.out + ".cfg", config, hash);

  const TupleArchive archive(o.archive);
  out << "training " << o.loss << " on " << archive.size() << " tuples (config " << hash
      << ")\n";

  std::uint32_t epoch = 0;
  double sum_tran = 0, sum_aff = 0, sum_total = 0, lr = 0;
  std::size_t steps = 0;
  auto flush = [&] {
    if (steps == 0) return;
    const double n = static_cast<double>(steps);
    out << "epoch " << epoch << " lr " << lr << " steps " << steps << " loss " << sum_total / n
        << " cov_tran " << sum_tran / n << " cov_aff " << sum_aff / n << '\n';
    out.flush();
  };
  auto on_step = [&](const TrainLogRecord& r) {
    if (steps > 0 && r.epoch != epoch) {
      flush();
      sum_tran = sum_aff = sum_total = 0;
      steps = 0;
    }
    epoch = r.epoch;
    lr = r.learning_rate;
    sum_tran += r.components.cov_tran + r.components.pairwise_cov;
    sum_aff += r.components.cov_aff;
    sum_total += r.total;
    ++steps;
  };

  TrainResult result;
  if (!o.resume_from.empty()) {
    const auto start = load_checkpoint<float>(o.resume_from);
    result = resume(start, archive, o.config, on_step);
  } else {
    result = train(archive, o.config, on_step);
  }
  flush();
  out << (result.completed ? "finished" : "stopped") << " at global step "
      << result.checkpoint.global_step << ", checkpoint " << o.out << '\n';
  return kOk;
}

// ---- extract

struct ExtractOptions {
  std::string checkpoint;
  std::vector<std::string> images;
  std::vector<std::size_t> ks{200};
  std::string out_dir = ".";
  bool dump_votemap = false;
  bool no_standardize = false;
  ExtractConfig config;
};

Image votes_as_image(const VoteMap& v, float& peak) {
  Image img(v.width, v.height);
  peak = 0.0f;
  for (std::size_t i = 0; i < v.values.size(); ++i) {
    img.pixels[i] = static_cast<float>(v.values[i]);
    peak = std::max(peak, img.pixels[i]);
  }
  return img;
}

int cmd_extract(ExtractOptions o, const CLI::App& sub, std::ostream& out) {
  if (o.ks.empty() || std::count(o.ks.begin(), o.ks.end(), 0u))
    throw InputError("-k must be positive");
  const auto ck = load_checkpoint<float>(o.checkpoint);
  const std::string ck_hash = file_hash(o.checkpoint);
  const std::string hash = fnv1a_hex(effective_config(sub));
  o.config.standardize = !o.no_standardize;
  o.config.k = *std::max_element(o.ks.begin(), o.ks.end());
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  for (const auto& path : o.images) {
    const Image image = read_image(path);
    const Extraction ex = extract(image, ck.network, o.config);
    const std::string stem = fs::path(path).stem().string();
    for (std::size_t k : o.ks) {
      KeypointFile file;
      file.image_id = stem;
      file.checkpoint_hash = ck_hash;
      file.k = k;
      file.nms_radius = o.config.nms_radius;
      file.config_hash = hash;
      file.keypoints.assign(ex.keypoints.begin(),
                            ex.keypoints.begin() + std::min(k, ex.keypoints.size()));
      const fs::path kp = dir / (stem + ".k" + std::to_string(k) + ".kp");
      write_keypoints(kp, file);
      out << kp.string() << ": " << file.keypoints.size() << " keypoints\n";
    }
    if (o.dump_votemap) {
      float peak = 0.0f;
      const Image raster = votes_as_image(ex.votes, peak);
      const fs::path vm = dir / (stem + ".votes.pgm");
      write_pgm(vm, raster, 0.0f, peak > 0.0f ? peak : 1.0f);
      out << vm.string() << ": vote map, peak " << peak << '\n';
    }
  }
  return kOk;
}

// ---- eval

struct EvalOptions {
  std::vector<std::string> checkpoints;
  std::vector<std::string> keypoint_dirs;
  std::vector<std::string> datasets;
  std::size_t synthetic = 0;
  int synthetic_size = 512;
  std::uint64_t synthetic_seed = 9000;
  std::vector<std::size_t> ks{200, 1000};
  std::size_t runs = 0;
  bool random_baseline = false;
  bool no_matching = false;
  double threshold = kOverlapThreshold;
  std::uint64_t seed = 0;
  std::string name;
  std::string title;
  std::string out;
  std::string plot_dir;
  bool no_standardize = false;
  ExtractConfig extract;
};

struct EvalPair {
  std::string dataset;
  std::string sequence;  // empty for synthetic pairs
  std::string name;
  std::size_t image_a = 0, image_b = 0;  // indices into the image table
  std::size_t file_b = 0;                // img<file_b + 1> inside the sequence
  Homography h;
};

struct EvalData {
  std::vector<Image> images;
  std::vector<EvalPair> pairs;
};

bool holds_sequence(const fs::path& dir) {
  return fs::exists(dir / "img1.ppm") || fs::exists(dir / "img1.pgm");
}

void add_sequence(EvalData& data, const std::string& dataset, const SequenceDataset& seq) {
  const std::size_t base = data.images.size();
  for (const auto& img : seq.images) data.images.push_back(img);
  for (std::size_t k = 0; k < seq.homographies.size(); ++k) {
    EvalPair p;
    p.dataset = dataset;
    p.sequence = seq.name;
    p.name = seq.name + ":1-" + std::to_string(k + 2);
    p.image_a = base;
    p.image_b = base + k + 1;
    p.file_b = k + 1;
    p.h = seq.homographies[k];
    data.pairs.push_back(p);
  }
}

EvalData load_eval_data(const EvalOptions& o) {
  EvalData data;
  for (const auto& d : o.datasets) {
    const fs::path dir(d);
    if (!fs::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
    const std::string label = dir.filename().empty() ? dir.parent_path().filename().string()
                                                     : dir.filename().string();
    if (holds_sequence(dir)) {
      add_sequence(data, label, load_sequence(dir));
      continue;
    }
    std::vector<fs::path> seqs;
    for (const auto& e : fs::directory_iterator(dir))
      if (e.is_directory() && holds_sequence(e.path())) seqs.push_back(e.path());
    std::sort(seqs.begin(), seqs.end());
    if (seqs.empty()) throw InputError("no image sequences under " + dir.string());
    for (const auto& s : seqs) add_sequence(data, label, load_sequence(s));
  }
  for (std::size_t i = 0; i < o.synthetic; ++i) {
    auto pair = synthetic_pair(o.synthetic_size, o.synthetic_size, AugmentationConfig{},
                               o.synthetic_seed + i);
    EvalPair p;
    p.dataset = "synthetic";
    p.name = "s" + std::to_string(i);
    p.image_a = data.images.size();
    data.images.push_back(std::move(pair.first));
    p.image_b = data.images.size();
    data.images.push_back(std::move(pair.second));
    p.h = pair.homography;
    data.pairs.push_back(p);
  }
  if (data.pairs.empty()) throw InputError("nothing to evaluate: give --dataset or --synthetic");
  return data;
}

ImageSize size_of(const Image& img) { return {img.width, img.height}; }

std::vector<Keypoint> truncated(const std::vector<Keypoint>& all, std::size_t k) {
  return {all.begin(), all.begin() + std::min(k, all.size())};
}

void score_pair(const EvalData& data, const EvalPair& p, const std::string& detector,
                std::size_t run, std::size_t k, const std::vector<Keypoint>& a,
                const std::vector<Keypoint>& b, double threshold, bool matching,
                std::vector<EvalRecord>& records) {
  const Image& ia = data.images[p.image_a];
  const Image& ib = data.images[p.image_b];
  EvalRecord rec{detector, p.dataset, p.name, run, k, std::nullopt, std::nullopt};
  rec.repeatability = repeatability(a, b, p.h, size_of(ia), size_of(ib), threshold).repeatability;
  if (matching) rec.matching_score = matching_score(ia, ib, a, b, p.h, threshold).matching_score;
  records.push_back(std::move(rec));
}

int cmd_eval(EvalOptions o, const CLI::App& sub, std::ostream& out) {
  if (!o.checkpoints.empty() && !o.keypoint_dirs.empty())
    throw InputError("give either --checkpoint or --keypoints, not both");
  if (o.ks.empty() || std::count(o.ks.begin(), o.ks.end(), 0u))
    throw InputError("-k must be positive");
  const std::size_t sources = o.checkpoints.size() + o.keypoint_dirs.size();
  if (sources == 0 && !o.random_baseline)
    throw InputError("no detector: give --checkpoint, --keypoints or --random-baseline");
  if (sources > 0 && o.runs > 0 && o.runs != sources)
    throw InputError("--runs " + std::to_string(o.runs) + " but " + std::to_string(sources) +
                     " detector outputs given (one per run)");
  const std::size_t runs = sources > 0 ? sources : std::max<std::size_t>(1, o.runs);
  const std::string hash = fnv1a_hex(effective_config(sub));
  const EvalData data = load_eval_data(o);
  const std::size_t kmax = *std::max_element(o.ks.begin(), o.ks.end());
  const bool matching = !o.no_matching;

  std::vector<EvalRecord> records;
  for (std::size_t run = 0; run < runs && sources > 0; ++run) {
    if (!o.checkpoints.empty()) {
      const auto ck = load_checkpoint<float>(o.checkpoints[run]);
      const std::string detector = o.name.empty() ? std::string(to_string(ck.loss.variant)) : o.name;
      ExtractConfig ec = o.extract;
      ec.k = kmax;
      ec.standardize = !o.no_standardize;
      std::map<std::size_t, std::vector<Keypoint>> cache;
      auto points = [&](std::size_t image) -> const std::vector<Keypoint>& {
        auto it = cache.find(image);
        if (it == cache.end())
          it = cache.emplace(image, extract(data.images[image], ck.network, ec).keypoints).first;
        return it->second;
      };
      for (const auto& p : data.pairs) {
        for (std::size_t k : o.ks)
          score_pair(data, p, detector, run, k, truncated(points(p.image_a), k),
                     truncated(points(p.image_b), k), o.threshold, matching, records);
      }
    } else {
      const fs::path dir(o.keypoint_dirs[run]);
      const std::string detector = o.name.empty() ? "keypoints" : o.name;
      auto load = [&](const EvalPair& p, std::size_t file, std::size_t k) {
        if (p.sequence.empty())
          throw InputError("keypoint files can only be evaluated on image sequences");
        const fs::path f = dir / p.sequence / ("img" + std::to_string(file + 1) + ".k" +
                                               std::to_string(k) + ".kp");
        return truncated(read_keypoints(f).keypoints, k);
      };
      for (const auto& p : data.pairs)
        for (std::size_t k : o.ks)
          score_pair(data, p, detector, run, k, load(p, 0, k), load(p, p.file_b, k), o.threshold,
                     matching, records);
    }
    out << "run " << run + 1 << "/" << runs << " done\n";
    out.flush();
  }
  if (o.random_baseline) {
    for (std::size_t run = 0; run < runs; ++run) {
      for (std::size_t i = 0; i < data.pairs.size(); ++i) {
        const auto& p = data.pairs[i];
        for (std::size_t k : o.ks) {
          const auto a = random_keypoints(size_of(data.images[p.image_a]), k,
                                          stream_seed(o.seed + run, 2 * i));
          const auto b = random_keypoints(size_of(data.images[p.image_b]), k,
                                          stream_seed(o.seed + run, 2 * i + 1));
          score_pair(data, p, "random", run, k, a, b, o.threshold, matching, records);
        }
      }
    }
  }

  const auto rows = aggregate_report(records);
  const std::string report = "# config " + hash + "\n" + format_report(rows, o.title);
  out << report;
  if (!o.out.empty()) write_text(o.out, report);
  if (!o.plot_dir.empty()) {
    const fs::path dir(o.plot_dir);
    write_text(dir / "records.tsv", format_records_tsv(records));
    write_text(dir / "summary.tsv", format_report_tsv(rows));
    out << "plot data in " << dir.string() << '\n';
  }
  return kOk;
}

// ---- gradcheck

int cmd_gradcheck(const GradcheckConfig& config, bool network_only, bool losses_only,
                  std::ostream& out) {
  GradcheckConfig c = config;
  if (c.layer < 0 || c.layer > 5) throw InputError("--layer must be in 1..5 (0 = all)");
  if (network_only && losses_only) throw InputError("--network-only and --losses-only exclude each other");
  if (network_only) c.check_losses = false;
  if (losses_only) c.check_network = false;
  if (c.layer != 0) c.check_losses = false;
  const auto report = run_gradcheck(c);
  out << format_gradcheck(report, c.tolerance);
  return report.pass() ? kOk : kNumericFailure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Covariant feature detector: patch generation, training, extraction, evaluation"};
  app.name("tricov");
  app.set_config("--config", "", "TOML/INI config file; command line flags override it");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  MakePatchesOptions mp;
  auto* make = app.add_subcommand("make-patches", "generate a training tuple archive");
  make->option_defaults()->always_capture_default();
  make->add_option("--source", mp.source, "directory of .pgm/.ppm training images");
  make->add_option("--synthetic-images", mp.synthetic_images,
                   "procedural images when no --source is given");
  make->add_option("--image-size", mp.image_size, "side of each procedural image");
  make->add_option("--image-seed", mp.image_seed, "seed of the procedural images");
  make->add_option("--count", mp.aug.tuple_count, "tuples to generate");
  make->add_option("--seed", mp.aug.seed, "seed of the perturbations");
  make->add_option("-o,--out", mp.out, "archive path")->required();
  make->add_option("--threads", mp.threads);
  add_augmentation_options(make, mp.aug);

  TrainOptions tr;
  auto* trn = app.add_subcommand("train", "train the regressor on a tuple archive");
  trn->option_defaults()->always_capture_default();
  trn->add_option("--archive", tr.archive, "tuple archive")->required();
  trn->add_option("-o,--out", tr.out, "checkpoint path")->required();
  trn->add_option("--log", tr.log, "JSON lines log (default <out>.jsonl)");
  trn->add_option("--resume", tr.resume_from, "continue from this checkpoint");
  trn->add_option("--loss", tr.loss, "trip-aff, trip, cov-aff, covdet or ddet")
      ->check(CLI::IsMember({"trip-aff", "trip", "cov-aff", "covdet", "ddet"}));
  trn->add_option("--epochs", tr.config.epochs);
  trn->add_option("--batch", tr.config.batch_size, "tuples per step");
  trn->add_option("--lr", tr.config.learning_rate, "base learning rate");
  trn->add_option("--momentum", tr.config.momentum);
  trn->add_option("--decay", tr.config.decay_rate, "per-epoch learning rate factor");
  trn->add_option("--clip", tr.config.clip_norm, "global gradient norm limit, 0 = off");
  trn->add_option("--alpha", tr.config.loss.alpha);
  trn->add_option("--beta", tr.config.loss.beta);
  trn->add_option("--identity-weight", tr.config.loss.identity_weight);
  trn->add_option("--affine-epoch", tr.config.loss.affine_enabled_epoch,
                  "first epoch with the affine term");
  trn->add_option("--seed", tr.config.seed);
  trn->add_option("--checkpoint-every", tr.config.checkpoint_interval, "steps, 0 = end only");
  trn->add_option("--stop-after", tr.config.stop_after_steps, "stop at this global step");
  trn->add_option("--micro-batch", tr.config.micro_batch);
  tr.config.threads = default_thread_count();
  trn->add_option("--threads", tr.config.threads);

  ExtractOptions ex;
  auto* ext = app.add_subcommand("extract", "detect keypoints with a trained checkpoint");
  ext->option_defaults()->always_capture_default();
  ext->add_option("--checkpoint", ex.checkpoint)->required();
  ext->add_option("images", ex.images, "input images")->required();
  ext->add_option("-k", ex.ks, "keypoints per image (repeatable)");
  ext->add_option("--out-dir", ex.out_dir);
  ext->add_flag("--dump-votemap", ex.dump_votemap, "also write <image>.votes.pgm");
  ext->add_option("--nms-radius", ex.config.nms_radius);
  ext->add_flag("--blur", ex.config.blur, "3x3 box blur of the vote map before NMS");
  ext->add_flag("--no-standardize", ex.no_standardize);
  ex.config.threads = default_thread_count();
  ext->add_option("--threads", ex.config.threads);

  EvalOptions ev;
  auto* evl = app.add_subcommand("eval", "repeatability and matching score report");
  evl->option_defaults()->always_capture_default();
  evl->add_option("--checkpoint", ev.checkpoints, "checkpoint per run (repeatable)");
  evl->add_option("--keypoints", ev.keypoint_dirs,
                  "keypoint directory per run: <dir>/<sequence>/img<i>.k<k>.kp");
  evl->add_option("--dataset", ev.datasets,
                  "sequence directory or directory of sequences (repeatable)");
  evl->add_option("--synthetic", ev.synthetic, "held-out synthetic pairs");
  evl->add_option("--synthetic-size", ev.synthetic_size);
  evl->add_option("--synthetic-seed", ev.synthetic_seed);
  evl->add_option("-k", ev.ks, "keypoint budgets (repeatable)");
  evl->add_option("--runs", ev.runs, "number of runs; must match the detector outputs given");
  evl->add_flag("--random-baseline", ev.random_baseline, "add uniformly random keypoints");
  evl->add_flag("--no-matching", ev.no_matching, "skip the matching score");
  evl->add_option("--threshold", ev.threshold, "overlap threshold");
  evl->add_option("--seed", ev.seed, "seed of the random baseline");
  evl->add_option("--name", ev.name, "detector label");
  evl->add_option("--title", ev.title);
  evl->add_option("-o,--out", ev.out, "report file");
  evl->add_option("--emit-plot-data", ev.plot_dir, "directory for records.tsv and summary.tsv");
  evl->add_option("--nms-radius", ev.extract.nms_radius);
  evl->add_flag("--blur", ev.extract.blur, "3x3 box blur of the vote map before NMS");
  evl->add_flag("--no-standardize", ev.no_standardize);
  ev.extract.threads = default_thread_count();
  evl->add_option("--threads", ev.extract.threads);

  GradcheckConfig gc;
  bool network_only = false, losses_only = false;
  auto* grd = app.add_subcommand("gradcheck", "finite difference check of all gradients");
  grd->option_defaults()->always_capture_default();
  grd->add_option("--seed", gc.seed);
  grd->add_option("--layer", gc.layer, "restrict to one layer 1..5");
  grd->add_option("--coords", gc.coordinates_per_layer, "probes per layer");
  grd->add_option("--step", gc.step);
  grd->add_option("--tolerance", gc.tolerance);
  grd->add_flag("--network-only", network_only);
  grd->add_flag("--losses-only", losses_only);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kInputFailure;
  }

  try {
    if (make->parsed()) return cmd_make_patches(mp, *make, out);
    if (trn->parsed()) return cmd_train(tr, *trn, out);
    if (ext->parsed()) return cmd_extract(ex, *ext, out);
    if (evl->parsed()) return cmd_eval(ev, *evl, out);
    if (grd->parsed()) return cmd_gradcheck(gc, network_only, losses_only, out);
  } catch (const NumericError& e) {
    err << "numeric failure: " << e.what() << '\n';
    return kNumericFailure;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kInputFailure;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << '\n';
    return kIoFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kNumericFailure;
  }
  return kInputFailure;
}

}  // namespace tricov::cli
