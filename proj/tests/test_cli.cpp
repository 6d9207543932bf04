#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "test_util.hpp"
#include "voxseg/cli.hpp"

using namespace voxseg;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  const fs::path dir = fs::temp_directory_path() / "voxseg_cli_tests";
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string file_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  EXPECT_TRUE(in.good()) << p;
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += c == '\n';
  return n;
}

// Small end-to-end shape: 32-voxel phantoms, a two-level net, 16-voxel
// windows with no overlap so inference stays quick.
std::string write_config(const fs::path& dir, uint64_t seed, const std::string& tag) {
  const fs::path cfg_path = dir / ("run_" + tag + ".cfg");
  std::ofstream cfg(cfg_path);
  cfg << "seed = " << seed << "\n"
      << "[paths]\n"
      << "data_dir = " << (dir / ("data_" + tag)).string() << "\n"
      << "output_dir = " << (dir / ("out_" + tag)).string() << "\n"
      << "[network]\n"
      << "variant = e1d3\nlevels = 2\nbase_width = 2\n"
      << "[train]\n"
      << "t_max = 2\nsteps_per_epoch = 2\nbatch_size = 1\nsegment = 16\n"
      << "[augment]\n"
      << "distort_prob = 0.5\n"
      << "[inference]\n"
      << "window = 16\nstride = 16\n"
      << "[phantom]\n"
      << "shape = 32\ncount = 3\nnoise = 0.01\n";
  return cfg_path.string();
}

struct Paths {
  std::string cfg, data, out, ckpt;
};

Paths run_pipeline_until_train(const fs::path& dir, uint64_t seed, const std::string& tag) {
  Paths p;
  p.cfg = write_config(dir, seed, tag);
  p.data = (dir / ("data_" + tag)).string();
  p.out = (dir / ("out_" + tag)).string();
  p.ckpt = (fs::path(p.out) / "checkpoint.bin").string();
  EXPECT_EQ(run_cli({"phantom", p.cfg}), 0);
  EXPECT_EQ(run_cli({"train", p.cfg}), 0);
  return p;
}

}  // namespace

TEST(Cli, PipelineRunsEndToEnd) {
  const fs::path dir = scratch();
  const Paths p = run_pipeline_until_train(dir, 11, "main");

  // phantom: three loadable subjects
  EXPECT_EQ(list_subjects(p.data).size(), 3u);

  // train: checkpoint plus one log line per optimizer step
  EXPECT_TRUE(fs::exists(p.ckpt));
  const std::string log = file_text(fs::path(p.out) / "train_log.tsv");
  EXPECT_EQ(count_lines(log), 4);  // t_max * steps_per_epoch

  // infer: label map plus the three probability maps
  const std::string subject = (fs::path(p.data) / "phantom_000").string();
  EXPECT_EQ(run_cli({"infer", p.cfg, "--checkpoint", p.ckpt, "--subject", subject, "--save-probs"}), 0);
  const fs::path pred_path = fs::path(p.out) / "phantom_000_pred.nii.gz";
  ASSERT_TRUE(fs::exists(pred_path));
  const LabelGrid pred = read_labels(pred_path.string());
  validate_labels(pred);
  const LabeledVolume orig = load_subject(subject);
  ASSERT_TRUE(pred.same_shape(orig.brain_mask));
  for (const char* tail : {"_prob_wt", "_prob_tc", "_prob_en"}) {
    const fs::path prob = fs::path(p.out) / ("phantom_000" + std::string(tail) + ".nii.gz");
    ASSERT_TRUE(fs::exists(prob)) << prob;
    const NiftiVolume nv = read_nifti(prob.string());
    ASSERT_TRUE(nv.image.same_shape(orig.brain_mask));
    for (double v : nv.image.data) {
      ASSERT_GE(v, 0.0);
      ASSERT_LE(v, 1.0);
    }
  }

  // evaluate: predictions against the phantom ground truth
  const std::string csv = (fs::path(p.out) / "metrics.csv").string();
  EXPECT_EQ(run_cli({"evaluate", p.out, p.data, "--csv", csv}), 0);
  const std::string rows = file_text(csv);
  ASSERT_EQ(count_lines(rows), 2);  // header + one subject
  EXPECT_EQ(rows.substr(0, rows.find('\n')), metric_csv_header());
  std::istringstream row(rows.substr(rows.find('\n') + 1));
  std::string id;
  std::getline(row, id, ',');
  EXPECT_EQ(id, "phantom_000");
  double vals[6];
  char comma;
  for (int i = 0; i < 6; ++i) {
    row >> vals[i];
    row >> comma;
  }
  for (int i = 0; i < 3; ++i) {
    EXPECT_GE(vals[i], 0.0);
    EXPECT_LE(vals[i], 1.0);
  }
}

TEST(Cli, FuseSubcommandMatchesInProcessFusion) {
  const fs::path dir = scratch();
  const Paths p = run_pipeline_until_train(dir, 13, "fuse");
  const std::string subject = (fs::path(p.data) / "phantom_001").string();
  EXPECT_EQ(run_cli({"infer", p.cfg, "--checkpoint", p.ckpt, "--subject", subject, "--save-probs", "--no-tta"}), 0);

  const std::string wt = (fs::path(p.out) / "phantom_001_prob_wt.nii.gz").string();
  const std::string tc = (fs::path(p.out) / "phantom_001_prob_tc.nii.gz").string();
  const std::string en = (fs::path(p.out) / "phantom_001_prob_en.nii.gz").string();
  const std::string fused = (fs::path(p.out) / "fused.nii.gz").string();
  EXPECT_EQ(run_cli({"fuse", wt, tc, en, "--mode", "naive", "--out", fused}), 0);

  const SegmentationMap expect = fuse_naive(binarize(read_nifti(wt).image, 0.5), binarize(read_nifti(tc).image, 0.5),
                                            binarize(read_nifti(en).image, 0.5));
  EXPECT_EQ(read_labels(fused).data, expect.data);

  // the fuse output and prob maps sit in the same directory as the _pred map;
  // evaluation must score the tagged prediction and ignore the rest
  EXPECT_EQ(run_cli({"evaluate", p.out, p.data, "--csv", (fs::path(p.out) / "m.csv").string()}), 0);
  EXPECT_EQ(count_lines(file_text(fs::path(p.out) / "m.csv")), 2);
}

TEST(Cli, SplitEmitsFoldCsv) {
  const fs::path dir = scratch();
  std::ofstream(dir / "ids.txt") << "s1\ns2\ns3\ns4\n\n";
  testing::internal::CaptureStdout();
  const int rc = run_cli({"split", (dir / "ids.txt").string(), "--k", "2", "--seed", "5"});
  const std::string out = testing::internal::GetCapturedStdout();
  EXPECT_EQ(rc, 0);
  EXPECT_EQ(count_lines(out), 4);
  int zero = 0, one = 0;
  std::istringstream lines(out);
  std::string line;
  while (std::getline(lines, line)) {
    ASSERT_GE(line.size(), 4u);
    EXPECT_TRUE(line[0] == '0' || line[0] == '1') << line;
    EXPECT_EQ(line[1], ',');
    (line[0] == '0' ? zero : one)++;
  }
  EXPECT_EQ(zero, 2);
  EXPECT_EQ(one, 2);

  // a dataset directory works as the id source too
  fs::create_directories(dir / "ds" / "a");
  fs::create_directories(dir / "ds" / "b");
  testing::internal::CaptureStdout();
  EXPECT_EQ(run_cli({"split", (dir / "ds").string(), "--k", "2"}), 0);
  EXPECT_EQ(count_lines(testing::internal::GetCapturedStdout()), 2);
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli({"segment-everything"}), 2);  // unknown subcommand
  EXPECT_EQ(run_cli({}), 2);                      // no subcommand
  EXPECT_EQ(run_cli({"train"}), 2);               // missing config
  EXPECT_EQ(run_cli({"infer", "cfg"}), 2);        // missing required options
  EXPECT_EQ(run_cli({"fuse", "a", "b", "c", "--mode", "fancy"}), 2);
  EXPECT_EQ(run_cli({"split", "ids", "--k", "two"}), 2);
}

TEST(Cli, RuntimeErrorsExitOne) {
  const fs::path dir = scratch();
  const std::string cfg = write_config(dir, 1, "err");
  EXPECT_EQ(run_cli({"train", cfg}), 1);  // data_dir never generated
  std::ofstream(dir / "ids.txt") << "a\nb\n";
  EXPECT_EQ(run_cli({"split", (dir / "ids.txt").string(), "--k", "3"}), 1);  // too few subjects
  EXPECT_EQ(run_cli({"evaluate", (dir / "nope").string(), (dir / "nada").string()}), 1);
  EXPECT_EQ(run_cli({"phantom", (dir / "missing.cfg").string()}), 1);

  // config error: unknown key
  std::ofstream(dir / "broken.cfg") << "[paths]\ndata_dirr = x\n";
  EXPECT_EQ(run_cli({"phantom", (dir / "broken.cfg").string()}), 1);

  // infer against a checkpoint file that does not exist
  EXPECT_EQ(run_cli({"infer", cfg, "--checkpoint", (dir / "no.bin").string(), "--subject", dir.string()}), 1);
}

TEST(Cli, TtaFlagsAreMutuallyExclusive) {
  EXPECT_EQ(run_cli({"infer", "cfg", "--checkpoint", "c", "--subject", "s", "--tta", "--no-tta"}), 2);
}

TEST(Cli, HelpExitsZero) {
  testing::internal::CaptureStdout();
  const int rc = run_cli({"--help"});
  testing::internal::GetCapturedStdout();
  EXPECT_EQ(rc, 0);
}

// Same seed, separate directories: metric rows and checkpoint bytes agree.
TEST(Cli, RerunWithSameSeedIsByteIdentical) {
  const fs::path dir = scratch();
  std::string csvs[2], ckpts[2];
  for (int run = 0; run < 2; ++run) {
    const std::string tag = "rep" + std::to_string(run);
    const Paths p = run_pipeline_until_train(dir, 77, tag);
    const std::string subject = (fs::path(p.data) / "phantom_002").string();
    ASSERT_EQ(run_cli({"infer", p.cfg, "--checkpoint", p.ckpt, "--subject", subject}), 0);
    const std::string csv = (fs::path(p.out) / "metrics.csv").string();
    ASSERT_EQ(run_cli({"evaluate", p.out, p.data, "--csv", csv}), 0);
    csvs[run] = file_text(csv);
    ckpts[run] = file_text(p.ckpt);
  }
  EXPECT_EQ(csvs[0], csvs[1]);
  EXPECT_FALSE(csvs[0].empty());
  EXPECT_EQ(ckpts[0], ckpts[1]);
}
