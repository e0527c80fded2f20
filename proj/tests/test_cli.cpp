#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "cli.hpp"
#include "tricov/checkpoint.hpp"
#include "tricov/dataset.hpp"
#include "tricov/extractor.hpp"
#include "tricov/image_io.hpp"
#include "tricov/trainer.hpp"

using namespace tricov;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

Outcome tricov_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = cli::run(args, out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct Workspace {
  fs::path dir;
  explicit Workspace(const std::string& name)
      : dir(fs::temp_directory_path() / ("tricov_cli_" + name)) {
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Workspace() { fs::remove_all(dir); }
  std::string operator/(const std::string& f) const { return (dir / f).string(); }
};

// small archive plus a one-step checkpoint
void prepare(const Workspace& ws, int count = 12) {
  REQUIRE(tricov_cli({"make-patches", "--count", std::to_string(count), "--seed", "3",
                      "--synthetic-images", "2", "--image-size", "128", "-o", ws / "t.bin"})
              .code == 0);
  REQUIRE(tricov_cli({"train", "--archive", ws / "t.bin", "-o", ws / "m.ck", "--epochs", "1",
                      "--batch", "4", "--lr", "1e-4"})
              .code == 0);
}

}  // namespace

TEST_CASE("make-patches is seeded and records its config") {
  Workspace ws("patches");
  const std::vector<std::string> base{"make-patches", "--count", "64", "--seed", "7",
                                      "--synthetic-images", "3", "--image-size", "128"};
  auto a = base, b = base;
  a.insert(a.end(), {"-o", ws / "a.bin"});
  b.insert(b.end(), {"-o", ws / "b.bin"});
  REQUIRE(tricov_cli(a).code == 0);
  REQUIRE(tricov_cli(b).code == 0);
  CHECK(slurp(ws / "a.bin") == slurp(ws / "b.bin"));
  CHECK(TupleArchive(ws / "a.bin").size() == 64);
  // output location is not part of the hashed config
  CHECK(slurp(ws / "a.bin.cfg") == slurp(ws / "b.bin.cfg"));
  CHECK(slurp(ws / "a.bin.cfg").rfind("# config ", 0) == 0);

  auto c = base;
  c[4] = "8";
  c.insert(c.end(), {"-o", ws / "c.bin"});
  REQUIRE(tricov_cli(c).code == 0);
  CHECK(slurp(ws / "a.bin") != slurp(ws / "c.bin"));
  CHECK(slurp(ws / "a.bin.cfg") != slurp(ws / "c.bin.cfg"));
}

TEST_CASE("make-patches defaults and errors") {
  const auto help = tricov_cli({"make-patches", "--help"});
  CHECK(help.code == 0);
  CHECK(help.out.find("256000") != std::string::npos);

  Workspace ws("patches_err");
  const auto r = tricov_cli({"make-patches", "--source", ws / "missing", "-o", ws / "x.bin"});
  CHECK(r.code == 2);
  CHECK(r.err.find(ws / "missing") != std::string::npos);

  fs::create_directories(ws.dir / "imgs");
  write_pgm(ws.dir / "imgs" / "a.pgm", synthetic_corner_image(120, 120, 1));
  CHECK(tricov_cli({"make-patches", "--source", ws / "imgs", "--count", "5", "-o", ws / "y.bin"})
            .code == 0);
  write_pgm(ws.dir / "imgs" / "b.pgm", synthetic_corner_image(60, 60, 1));
  const auto small = tricov_cli({"make-patches", "--source", ws / "imgs", "--count", "50", "-o", ws / "z.bin"});
  CHECK(small.code == 2);
}

TEST_CASE("argument errors exit with 2") {
  CHECK(tricov_cli({}).code == 2);
  CHECK(tricov_cli({"bogus"}).code == 2);
  CHECK(tricov_cli({"train", "--archive", "x"}).code == 2);
  CHECK(tricov_cli({"train", "--archive", "x", "-o", "y", "--loss", "nope"}).code == 2);
  CHECK(tricov_cli({"gradcheck", "--layer", "9"}).code == 2);
}

TEST_CASE("train runs the requested steps") {
  Workspace ws("train");
  REQUIRE(tricov_cli({"make-patches", "--count", "128", "--seed", "1", "--synthetic-images", "2",
                      "--image-size", "128", "-o", ws / "t.bin"})
              .code == 0);
  const auto r = tricov_cli({"train", "--archive", ws / "t.bin", "-o", ws / "m.ck", "--epochs",
                             "1", "--batch", "128", "--lr", "1e-4"});
  REQUIRE(r.code == 0);
  const auto log = read_train_log(ws / "m.ck.jsonl");
  CHECK(log.size() == 1);
  CHECK(load_checkpoint<float>(ws / "m.ck").global_step == 1);
  CHECK(slurp(ws / "m.ck.cfg").find("batch=128") != std::string::npos);

  const auto missing = tricov_cli({"train", "--archive", ws / "none.bin", "-o", ws / "n.ck"});
  CHECK(missing.code == 3);
}

TEST_CASE("train with the trip loss never uses the affine term") {
  Workspace ws("trip");
  prepare(ws);
  REQUIRE(tricov_cli({"train", "--archive", ws / "t.bin", "-o", ws / "trip.ck", "--loss", "trip",
                      "--epochs", "7", "--batch", "6", "--lr", "0.1", "--clip", "1"})
              .code == 0);
  const auto log = read_train_log(ws / "trip.ck.jsonl");
  REQUIRE(log.size() == 14);
  for (const auto& rec : log) CHECK(rec.components.cov_aff == 0.0);
  CHECK(log.back().epoch == 6);
}

TEST_CASE("seeded training through the command line is bit identical") {
  Workspace ws("det");
  prepare(ws);
  for (const char* name : {"a.ck", "b.ck"}) {
    REQUIRE(tricov_cli({"train", "--archive", ws / "t.bin", "-o", ws / name, "--epochs", "2",
                        "--batch", "4", "--lr", "1e-4", "--seed", "5", "--threads",
                        std::string(name) == "a.ck" ? "1" : "2"})
                .code == 0);
  }
  CHECK(slurp(ws / "a.ck") == slurp(ws / "b.ck"));
  CHECK(slurp(ws / "a.ck.cfg") == slurp(ws / "b.ck.cfg"));
}

TEST_CASE("train resumes from a stopped run") {
  Workspace ws("resume");
  prepare(ws);
  const std::vector<std::string> common{"--archive", ws / "t.bin", "--epochs", "2", "--batch",
                                        "4", "--lr", "1e-4"};
  auto full = common, part = common, rest = common;
  full.insert(full.begin(), "train");
  full.insert(full.end(), {"-o", ws / "full.ck"});
  part.insert(part.begin(), "train");
  part.insert(part.end(), {"-o", ws / "part.ck", "--stop-after", "2"});
  rest.insert(rest.begin(), "train");
  rest.insert(rest.end(), {"-o", ws / "part.ck", "--resume", ws / "part.ck"});
  REQUIRE(tricov_cli(full).code == 0);
  const auto p = tricov_cli(part);
  REQUIRE(p.code == 0);
  CHECK(p.out.find("stopped") != std::string::npos);
  REQUIRE(tricov_cli(rest).code == 0);
  CHECK(slurp(ws / "part.ck") == slurp(ws / "full.ck"));
}

TEST_CASE("divergence exits with 1") {
  Workspace ws("nan");
  prepare(ws);
  const auto r = tricov_cli({"train", "--archive", ws / "t.bin", "-o", ws / "bad.ck", "--epochs",
                             "3", "--batch", "4", "--lr", "10", "--alpha", "50", "--beta", "49"});
  CHECK(r.code == 1);
  CHECK(r.err.find("non-finite") != std::string::npos);
  CHECK(fs::exists(ws.dir / "bad.ck.last-good"));
}

TEST_CASE("config file with flag overrides") {
  Workspace ws("config");
  prepare(ws);
  {
    std::ofstream cfg(ws.dir / "run.toml");
    cfg << "[train]\nepochs = 3\nbatch = 4\nlr = 0.0001\nseed = 9\n";
  }
  REQUIRE(tricov_cli({"--config", ws / "run.toml", "train", "--archive", ws / "t.bin", "-o",
                      ws / "c.ck", "--epochs", "1"})
              .code == 0);
  const auto ck = load_checkpoint<float>(ws / "c.ck");
  CHECK(ck.total_epochs == 1);
  CHECK(ck.batch_size == 4);
  CHECK(ck.seed == 9);
  CHECK(ck.global_step == 3);
  {
    std::ofstream cfg(ws.dir / "typo.toml");
    cfg << "[train]\nepocs = 3\n";
  }
  CHECK(tricov_cli({"--config", ws / "typo.toml", "train", "--archive", ws / "t.bin", "-o",
                    ws / "d.ck"})
            .code == 2);
}

TEST_CASE("thread count comes from the environment unless given") {
  ::setenv("TRICOV_THREADS", "3", 1);
  const auto help = tricov_cli({"train", "--help"});
  ::unsetenv("TRICOV_THREADS");
  CHECK(help.out.find("--threads UINT [3]") != std::string::npos);
  CHECK(tricov_cli({"train", "--help"}).out.find("--threads UINT [1]") != std::string::npos);
}

TEST_CASE("extract writes keypoint files and vote maps") {
  Workspace ws("extract");
  prepare(ws);
  write_pgm(ws.dir / "scene.pgm", synthetic_corner_image(160, 128, 4));
  const auto r = tricov_cli({"extract", "--checkpoint", ws / "m.ck", "-k", "200", "-k", "1000",
                             "--dump-votemap", "--out-dir", ws / "kp", ws / "scene.pgm"});
  REQUIRE(r.code == 0);
  const auto k200 = read_keypoints(ws.dir / "kp" / "scene.k200.kp");
  const auto k1000 = read_keypoints(ws.dir / "kp" / "scene.k1000.kp");
  CHECK(k200.k == 200);
  CHECK(k1000.k == 1000);
  CHECK(k200.keypoints.size() <= 200);
  CHECK(k200.keypoints.size() <= k1000.keypoints.size());
  for (std::size_t i = 0; i < k200.keypoints.size(); ++i)
    CHECK(k200.keypoints[i].position == k1000.keypoints[i].position);
  CHECK(k200.checkpoint_hash == file_hash(ws.dir / "m.ck"));
  CHECK_FALSE(k200.config_hash.empty());
  const Image votes = read_image(ws.dir / "kp" / "scene.votes.pgm");
  CHECK(votes.width == 160);
  CHECK(votes.height == 128);

  CHECK(tricov_cli({"extract", "--checkpoint", ws / "absent.ck", ws / "scene.pgm"}).code == 3);
  {
    std::ofstream junk(ws.dir / "junk.ck");
    junk << "not a checkpoint at all";
  }
  CHECK(tricov_cli({"extract", "--checkpoint", ws / "junk.ck", ws / "scene.pgm"}).code == 3);
  CHECK(tricov_cli({"extract", "--checkpoint", ws / "m.ck", ws / "missing.pgm"}).code == 3);
  CHECK(tricov_cli({"extract", "--checkpoint", ws / "m.ck", "-k", "0", ws / "scene.pgm"}).code == 2);
}

TEST_CASE("eval on an identity self pair and aggregated runs") {
  Workspace ws("eval");
  prepare(ws);
  SequenceDataset seq;
  seq.name = "self";
  const Image img = synthetic_corner_image(160, 160, 21);
  seq.images = {img, img};
  seq.homographies = {Homography::identity()};
  save_sequence(ws.dir / "data" / "self", seq);
  fs::copy_file(ws.dir / "m.ck", ws.dir / "m2.ck");
  fs::copy_file(ws.dir / "m.ck", ws.dir / "m3.ck");

  const auto r = tricov_cli({"eval", "--checkpoint", ws / "m.ck", "--checkpoint", ws / "m2.ck",
                             "--checkpoint", ws / "m3.ck", "--runs", "3", "--dataset",
                             ws / "data", "--emit-plot-data", ws / "plots", "-o",
                             ws / "report.txt"});
  REQUIRE(r.code == 0);
  const std::string report = slurp(ws / "report.txt");
  CHECK(report.find("k=200") != std::string::npos);
  CHECK(report.find("k=1000") != std::string::npos);
  CHECK(report.find("100.00 +/- 0.00") != std::string::npos);
  CHECK(report.rfind("# config ", 0) == 0);

  std::istringstream rec(slurp(ws / "plots/records.tsv"));
  std::string line;
  std::getline(rec, line);
  int rows = 0;
  while (std::getline(rec, line)) {
    ++rows;
    std::istringstream f(line);
    std::string det, ds, pair, run, k, rep, ms;
    f >> det >> ds >> pair >> run >> k >> rep >> ms;
    CHECK(det == "trip-aff");
    CHECK(ds == "data");
    CHECK(rep == "1");
    CHECK(ms == "1");
  }
  CHECK(rows == 6);
  const std::string summary = slurp(ws / "plots/summary.tsv");
  CHECK(summary.find("trip-aff\tdata\t200\t3\t3\t1\t0\t1\t0") != std::string::npos);

  const auto blurred = tricov_cli({"eval", "--checkpoint", ws / "m.ck", "--dataset", ws / "data",
                                   "--blur", "--no-standardize", "-k", "50"});
  REQUIRE(blurred.code == 0);
  CHECK(blurred.out.find("100.00 +/- 0.00") != std::string::npos);

  CHECK(tricov_cli({"eval", "--checkpoint", ws / "m.ck", "--runs", "5", "--dataset", ws / "data"})
            .code == 2);
  CHECK(tricov_cli({"eval", "--dataset", ws / "data"}).code == 2);
  CHECK(tricov_cli({"eval", "--random-baseline", "--dataset", ws / "nowhere"}).code == 2);
}

TEST_CASE("eval with keypoint files and the random baseline") {
  Workspace ws("eval_kp");
  prepare(ws);
  SequenceDataset seq;
  seq.name = "pair";
  seq.images = {synthetic_corner_image(150, 140, 2), synthetic_corner_image(150, 140, 2)};
  seq.homographies = {Homography::from_affine(AffineTransform::translate(Vec2(3, -2)))};
  save_sequence(ws.dir / "data" / "pair", seq);
  REQUIRE(tricov_cli({"extract", "--checkpoint", ws / "m.ck", "-k", "30", "--out-dir",
                      ws / "kp/pair", ws / "data/pair/img1.pgm", ws / "data/pair/img2.pgm"})
              .code == 0);
  const auto r = tricov_cli({"eval", "--keypoints", ws / "kp", "-k", "30", "--dataset",
                             ws / "data", "--random-baseline", "--name", "mine", "--emit-plot-data",
                             ws / "plots"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("mine") != std::string::npos);
  CHECK(r.out.find("random") != std::string::npos);
  const std::string records = slurp(ws / "plots/records.tsv");
  CHECK(records.find("mine\tdata\tpair:1-2\t0\t30\t") != std::string::npos);
  CHECK(records.find("random\tdata\tpair:1-2\t0\t30\t") != std::string::npos);
  // seeded baseline
  const auto again = tricov_cli({"eval", "--keypoints", ws / "kp", "-k", "30", "--dataset",
                                 ws / "data", "--random-baseline", "--name", "mine"});
  CHECK(again.out == r.out.substr(0, r.out.find("plot data")));
  CHECK(tricov_cli({"eval", "--keypoints", ws / "kp", "-k", "31", "--dataset", ws / "data"}).code ==
        3);
}

TEST_CASE("eval on synthetic pairs") {
  Workspace ws("eval_syn");
  const auto r = tricov_cli({"eval", "--random-baseline", "--runs", "2", "--synthetic", "3",
                             "--synthetic-size", "128", "-k", "20", "--no-matching"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("synthetic k=20") != std::string::npos);
}

TEST_CASE("gradcheck command") {
  const auto one = tricov_cli({"gradcheck", "--layer", "5", "--coords", "10"});
  CHECK(one.code == 0);
  CHECK(one.out.find("gradcheck passed") != std::string::npos);
  CHECK(one.out.find("conv5") != std::string::npos);
  CHECK(one.out.find("conv4") == std::string::npos);
  const auto strict = tricov_cli({"gradcheck", "--losses-only", "--tolerance", "0"});
  CHECK(strict.code == 1);
  CHECK(strict.out.find("FAIL") != std::string::npos);
}

TEST_CASE("binary exit codes") {
  const std::string bin = TRICOV_CLI_PATH;
  CHECK(WEXITSTATUS(std::system((bin + " --help > /dev/null").c_str())) == 0);
  CHECK(WEXITSTATUS(std::system((bin + " extract --checkpoint /nonexistent.ck x.pgm 2> /dev/null").c_str())) == 3);
  CHECK(WEXITSTATUS(std::system((bin + " make-patches --source /nonexistent -o /tmp/x.bin 2> /dev/null").c_str())) == 2);
}
