#include "cli.hpp"

#include "rcnn/checkpoint.hpp"
#include "rcnn/io.hpp"
#include "rcnn/scene.hpp"
#include "rcnn/train.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include <unistd.h>

namespace rcnn {
namespace {

namespace fs = std::filesystem;

const fs::path kMnist = RCNN_MNIST_DIR;

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result rcnn_cmd(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("rcnn_cli_test_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    // 30 test digits, three per class.
    const Result r = rcnn_cmd({"generate", "--mnist-images", (kMnist / "t10k-images-idx3-ubyte").string(),
                               "--mnist-labels", (kMnist / "t10k-labels-idx1-ubyte").string(), "--out",
                               (dir_ / "small.osmn").string(), "--seed", "3", "--limit", "30"});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  static void TearDownTestSuite() { fs::remove_all(dir_); }

  static std::vector<std::string> generate_args(const fs::path& out, const std::string& seed,
                                                const std::string& limit) {
    return {"generate", "--mnist-images", (kMnist / "train-images-idx3-ubyte").string(), "--mnist-labels",
            (kMnist / "train-labels-idx1-ubyte").string(), "--out", out.string(), "--seed", seed, "--limit", limit};
  }

  static fs::path small() { return dir_ / "small.osmn"; }

  static fs::path dir_;
};

fs::path Cli::dir_;

// Stereo B model with trained-mode statistics and a readout fixed on one class.
fs::path constant_checkpoint(const fs::path& path, const fs::path& data, int cls) {
  ModelParams<float> p = build<float>(ArchitectureSpec::named("B", 2), 1);
  const Dataset d = make_dataset(read_dataset(data), InputMode::Stereo);
  run(p, d.images, Mode::Train, false);
  p.readout_weights.data().setZero();
  p.readout_bias.data().setZero();
  p.readout_bias[cls] = 3.0f;
  save_checkpoint(path, p);
  return path;
}

TEST_F(Cli, GenerateCountsAndReproducibility) {
  const fs::path a = dir_ / "gen_a.osmn";
  const fs::path b = dir_ / "gen_b.osmn";
  const fs::path c = dir_ / "gen_c.osmn";
  Result r = rcnn_cmd(generate_args(a, "11", "1000"));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("wrote 10000 records"), std::string::npos);
  EXPECT_EQ(read_dataset_header(a).count, 10000u);
  ASSERT_EQ(rcnn_cmd(generate_args(b, "11", "1000")).code, 0);
  ASSERT_EQ(rcnn_cmd(generate_args(c, "12", "1000")).code, 0);
  EXPECT_EQ(read_file(a), read_file(b));
  EXPECT_NE(read_file(a), read_file(c));
  EXPECT_NE(file_adler32(a), file_adler32(c));
  EXPECT_TRUE(fs::exists(manifest_path(a)));

  const KeyValues run = read_key_values(a.string() + ".run");
  EXPECT_EQ(run.at("subcommand"), "generate");
  EXPECT_EQ(run.at("records"), "10000");
  EXPECT_EQ(run.at("seed"), "11");
  EXPECT_EQ(run.at("artifact.dataset.adler32"), std::to_string(file_adler32(a)));
  EXPECT_TRUE(run.count("wall_seconds"));
}

TEST_F(Cli, GenerateErrors) {
  // Five digits do not cover every class.
  Result r = rcnn_cmd(generate_args(dir_ / "few.osmn", "1", "5"));
  EXPECT_EQ(r.code, 3);
  EXPECT_FALSE(fs::exists(dir_ / "few.osmn"));
  r = rcnn_cmd({"generate", "--mnist-images", "/nonexistent", "--mnist-labels", "/nonexistent", "--out", "x"});
  EXPECT_EQ(r.code, 2);
  // Labels file given as images.
  r = rcnn_cmd({"generate", "--mnist-images", (kMnist / "train-labels-idx1-ubyte").string(), "--mnist-labels",
                (kMnist / "train-labels-idx1-ubyte").string(), "--out", (dir_ / "bad.osmn").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("bad magic"), std::string::npos);
  EXPECT_EQ(rcnn_cmd(generate_args(dir_ / "c.osmn", "1", "abc")).code, 2);
}

TEST_F(Cli, TrainWritesCheckpointsAndReportsParameters) {
  const fs::path out = dir_ / "train_b";
  const Result r = rcnn_cmd({"train", "--data", small().string(), "--arch", "B", "--input", "stereo", "--epochs",
                             "2", "--batch", "50", "--seed", "4", "--out-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("10,186 learnable parameters"), std::string::npos);
  EXPECT_NE(r.out.find("epoch 2/2 loss"), std::string::npos);
  for (const char* f : {"initial.ckpt", "epoch_001.ckpt", "epoch_002.ckpt", "metrics.csv", "run_manifest.txt"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }
  EXPECT_FALSE(fs::exists(out / "epoch_003.ckpt"));
  const KeyValues m = read_key_values(out / "run_manifest.txt");
  EXPECT_EQ(m.at("arch"), "B");
  EXPECT_EQ(m.at("learnable_parameters"), "10186");
  EXPECT_EQ(m.at("artifact.final_checkpoint.adler32"), std::to_string(file_adler32(out / "epoch_002.ckpt")));
  EXPECT_NE(m.at("artifact.final_checkpoint.adler32"), m.at("artifact.initial_checkpoint.adler32"));

  // Same flags, same primary artifacts.
  const fs::path again = dir_ / "train_b2";
  ASSERT_EQ(rcnn_cmd({"train", "--data", small().string(), "--arch", "B", "--input", "stereo", "--epochs", "2",
                      "--batch", "50", "--seed", "4", "--out-dir", again.string()})
                .code,
            0);
  EXPECT_EQ(read_file(out / "epoch_002.ckpt"), read_file(again / "epoch_002.ckpt"));
  EXPECT_EQ(read_file(out / "metrics.csv"), read_file(again / "metrics.csv"));
}

TEST_F(Cli, TrainMonoParameterCount) {
  const Result r = rcnn_cmd({"train", "--data", small().string(), "--arch", "BLT", "--input", "mono", "--epochs",
                             "0", "--out-dir", (dir_ / "mono").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("model BLT (mono): 37,642 learnable parameters"), std::string::npos);
}

TEST_F(Cli, ZeroLearningRateKeepsInitialWeights) {
  const fs::path out = dir_ / "lr0";
  const Result r = rcnn_cmd({"train", "--data", small().string(), "--arch", "BL", "--epochs", "1", "--batch",
                             "60", "--lr", "0", "--out-dir", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  ModelParams<float> a = load_checkpoint(out / "initial.ckpt");
  ModelParams<float> b = load_checkpoint(out / "epoch_001.ckpt");
  auto ta = trainable(a);
  auto tb = trainable(b);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) EXPECT_EQ(ta[i]->data(), tb[i]->data());
}

TEST_F(Cli, TrainUsageErrors) {
  const std::string out = (dir_ / "bad").string();
  EXPECT_EQ(rcnn_cmd({"train", "--data", small().string(), "--arch", "BX", "--out-dir", out}).code, 2);
  EXPECT_EQ(rcnn_cmd({"train", "--data", small().string(), "--arch", "B", "--input", "tri", "--out-dir", out}).code, 2);
  EXPECT_EQ(rcnn_cmd({"train", "--data", small().string(), "--arch", "B", "--batch", "1", "--out-dir", out}).code, 2);
  EXPECT_EQ(rcnn_cmd({"train", "--arch", "B", "--out-dir", out}).code, 2);
  EXPECT_EQ(rcnn_cmd({}).code, 2);
  EXPECT_EQ(rcnn_cmd({"--help"}).code, 0);

  std::ofstream(dir_ / "junk.osmn") << "not a dataset";
  const Result r = rcnn_cmd({"train", "--data", (dir_ / "junk.osmn").string(), "--arch", "B", "--out-dir", out});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("data error"), std::string::npos);
}

TEST_F(Cli, EvalConstantClassifier) {
  const fs::path ckpt = constant_checkpoint(dir_ / "const.ckpt", small(), 4);
  const fs::path out = dir_ / "eval_const";
  Result r = rcnn_cmd({"eval", "--checkpoint", ckpt.string(), "--data", small().string(), "--out", out.string(),
                       "--trace"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("error 0.9000"), std::string::npos);
  const std::string summary = read_file(out / "eval.csv");
  EXPECT_NE(summary.find("\nB,300,0.9,0.1,0.1,0.1,0.1,"), std::string::npos) << summary;
  const auto correct = read_correctness(out / "correct.txt");
  ASSERT_EQ(correct.size(), 300u);
  const std::string trace = read_file(out / "trace.csv");
  EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 401);
  EXPECT_EQ(read_key_values(out / "run_manifest.txt").at("trace_sample_per_class"), "30");

  // Repeated runs give identical artifacts.
  const fs::path again = dir_ / "eval_const2";
  ASSERT_EQ(rcnn_cmd({"eval", "--checkpoint", ckpt.string(), "--data", small().string(), "--out", again.string(),
                      "--trace", "--trace-sample", "1000"})
                .code,
            0);
  for (const char* f : {"eval.csv", "correct.txt", "trace.csv"}) EXPECT_EQ(read_file(out / f), read_file(again / f));
}

TEST_F(Cli, EvalErrors) {
  const fs::path ckpt = constant_checkpoint(dir_ / "const2.ckpt", small(), 1);
  Result r = rcnn_cmd({"eval", "--checkpoint", ckpt.string(), "--data", small().string(), "--out",
                       (dir_ / "e1").string(), "--arch", "BLT"});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("holds model B"), std::string::npos);
  EXPECT_FALSE(fs::exists(dir_ / "e1" / "eval.csv"));

  // A NaN readout poisons the softmax.
  ModelParams<float> p = load_checkpoint(ckpt);
  p.readout_bias[0] = std::numeric_limits<float>::quiet_NaN();
  save_checkpoint(dir_ / "nan.ckpt", p);
  r = rcnn_cmd({"eval", "--checkpoint", (dir_ / "nan.ckpt").string(), "--data", small().string(), "--out",
                (dir_ / "e2").string()});
  EXPECT_EQ(r.code, 4);
  EXPECT_FALSE(fs::exists(dir_ / "e2" / "eval.csv"));
  EXPECT_FALSE(fs::exists(dir_ / "e2" / "correct.txt"));

  // A mono checkpoint reads the left eye only.
  ModelParams<float> mono = build<float>(ArchitectureSpec::named("B", 1), 2);
  save_checkpoint(dir_ / "mono.ckpt", mono);
  r = rcnn_cmd({"eval", "--checkpoint", (dir_ / "mono.ckpt").string(), "--data", small().string(), "--out",
                (dir_ / "e3").string()});
  EXPECT_EQ(r.code, 4);  // never trained: no running statistics
  EXPECT_NE(r.err.find("numeric failure"), std::string::npos);

  std::string bytes = read_file(ckpt);
  bytes[bytes.size() / 2] ^= 1;
  std::ofstream(dir_ / "corrupt.ckpt", std::ios::binary) << bytes;
  r = rcnn_cmd({"eval", "--checkpoint", (dir_ / "corrupt.ckpt").string(), "--data", small().string(), "--out",
                (dir_ / "e4").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("checksum failure"), std::string::npos);
}

TEST_F(Cli, CompareSixModels) {
  const fs::path in = dir_ / "cmp_in";
  fs::create_directories(in);
  std::vector<std::string> args = {"compare"};
  const char* names[6] = {"B", "B-F", "B-K", "BT", "BL", "BLT"};
  for (int m = 0; m < 6; ++m) {
    std::vector<std::uint8_t> v(400);
    // Model m gets the first 200 + 30 m stimuli right.
    for (int i = 0; i < 400; ++i) v[std::size_t(i)] = i < 200 + 30 * m;
    const fs::path f = in / names[m] / "correct.txt";
    fs::create_directories(f.parent_path());
    write_correctness(f, v);
    args.push_back(f.string());
  }
  args.insert(args.end(), {"--out", (dir_ / "cmp").string()});
  const Result r = rcnn_cmd(args);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("15 pairs tested"), std::string::npos);
  const std::string csv = read_file(dir_ / "cmp" / "comparison.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 16);
  EXPECT_NE(csv.find("\nB,B-F,30,0,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\nB,BLT,150,0,"), std::string::npos);

  // The grid is symmetric.
  std::istringstream grid(read_file(dir_ / "cmp" / "comparison_grid.txt"));
  std::vector<std::vector<std::string>> cells;
  std::string line;
  std::getline(grid, line);
  while (std::getline(grid, line)) {
    std::istringstream row(line);
    std::vector<std::string> tok{std::istream_iterator<std::string>(row), {}};
    cells.emplace_back(tok.begin() + 1, tok.end());
  }
  ASSERT_EQ(cells.size(), 6u);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) EXPECT_EQ(cells[i][j], cells[j][i]);
  EXPECT_EQ(cells[0][5], "#");
  EXPECT_EQ(cells[2][2], "-");
}

TEST_F(Cli, CompareIdenticalAndMismatched) {
  const fs::path in = dir_ / "cmp2";
  fs::create_directories(in);
  write_correctness(in / "a.txt", {1, 0, 1, 1, 0, 1});
  write_correctness(in / "b.txt", {1, 0, 1, 1, 0, 1});
  write_correctness(in / "short.txt", {1, 0});
  Result r = rcnn_cmd({"compare", (in / "a.txt").string(), (in / "b.txt").string(), "--out", (in / "o").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(read_file(in / "o" / "comparison.csv").find("a,b,0,0,NA,NA,0"), std::string::npos);

  r = rcnn_cmd({"compare", (in / "a.txt").string(), (in / "short.txt").string(), "--out", (in / "o2").string()});
  EXPECT_EQ(r.code, 3);
  EXPECT_NE(r.err.find("length mismatch"), std::string::npos);
  EXPECT_FALSE(fs::exists(in / "o2" / "comparison.csv"));

  r = rcnn_cmd({"compare", (in / "a.txt").string(), "--out", (in / "o3").string()});
  EXPECT_EQ(r.code, 2);
  r = rcnn_cmd({"compare", (in / "a.txt").string(), (in / "b.txt").string(), "--names", "x", "--out",
                (in / "o4").string()});
  EXPECT_EQ(r.code, 2);
  r = rcnn_cmd({"compare", (in / "a.txt").string(), (in / "b.txt").string(), "--names", "x,y", "--fdr", "0.1",
                "--out", (in / "o5").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(read_file(in / "o5" / "comparison.csv").find("\nx,y,"), std::string::npos);
}

TEST(GroupThousands, Formats) {
  EXPECT_EQ(cli::group_thousands(10186), "10,186");
  EXPECT_EQ(cli::group_thousands(999), "999");
  EXPECT_EQ(cli::group_thousands(1000000), "1,000,000");
  EXPECT_EQ(cli::group_thousands(-37930), "-37,930");
}

}  // namespace
}  // namespace rcnn
