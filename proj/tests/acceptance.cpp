// Acceptance run: one PASS/FAIL line per criterion. The desk-scale part
// generates data, trains all six models and evaluates them through the
// command-line front end; its artifacts stay in --out for inspection.

#include "cli.hpp"
#include "model_gradcheck.hpp"

#include "rcnn/checkpoint.hpp"
#include "rcnn/io.hpp"
#include "rcnn/memory.hpp"
#include "rcnn/scene.hpp"
#include "rcnn/stats.hpp"
#include "rcnn/train.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using namespace rcnn;

namespace {

const fs::path kMnist = RCNN_MNIST_DIR;

struct Outcome {
  int id;
  std::string title;
  bool pass;
  std::string detail;
};

std::vector<Outcome> outcomes;

void report(int id, const std::string& title, bool pass, const std::string& detail) {
  outcomes.push_back({id, title, pass, detail});
  std::cout << (pass ? "PASS" : "FAIL") << "  criterion " << id << ": " << title << " | " << detail << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, sep)) out.push_back(field);
  return out;
}

// Header-keyed rows of a small CSV file.
std::vector<std::map<std::string, std::string>> read_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  std::getline(in, line);
  const auto header = split(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    const auto f = split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < f.size(); ++i) row[header[i]] = f[i];
    rows.push_back(row);
  }
  return rows;
}

void cli_or_throw(const std::vector<std::string>& args) {
  const int code = cli::run(args, std::cout, std::cerr);
  if (code != 0) {
    std::string line = "rcnn";
    for (const auto& a : args) line += " " + a;
    throw std::runtime_error("command failed with exit code " + std::to_string(code) + ": " + line);
  }
}

// ---------------------------------------------------------------------------

void parameter_counts() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::map<std::pair<int, int>, std::array<std::int64_t, 6>> table = {
      {{1, 10}, {9898, 38218, 26794, 19146, 28394, 37642}},
      {{2, 10}, {10186, 38794, 27594, 19434, 28682, 37930}},
      {{3, 80}, {12784, 43920, 30704, 22032, 31280, 40528}},
      {{6, 80}, {13648, 45648, 33104, 22896, 32144, 41392}},
  };
  int exact = 0;
  int total = 0;
  std::string miss;
  for (const auto& [key, row] : table)
    for (std::size_t i = 0; i < kArchitectureNames.size(); ++i) {
      const auto spec = ArchitectureSpec::named(kArchitectureNames[i], key.first, key.second);
      const std::int64_t n = count_learnable(spec);
      // The allocated model must agree with the formula.
      const std::int64_t allocated = count_learnable(build<float>(spec, 1));
      ++total;
      if (n == row[i] && allocated == row[i]) {
        ++exact;
      } else {
        miss += " " + spec.name + "/" + std::to_string(key.first) + "ch=" + std::to_string(n);
      }
    }
  const double t = seconds_since(t0);
  report(1, "parameter-count oracle", exact == total && t < 1.0,
         std::to_string(exact) + "/" + std::to_string(total) + " table values exact" + miss + ", " + num(t, 3) +
             " s (limit 1 s)");
}

void gradient_check() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0;
  std::size_t checked = 0;
  std::size_t failed = 0;
  std::string where;
  for (const auto& name : kArchitectureNames) {
    const ArchitectureSpec spec = rcnn::testing::tiny_spec(std::string(name));
    std::mt19937_64 rng(1007);
    const auto batch = rcnn::testing::random_tensor({4, 1, 8, 8}, rng, 0.0, 1.0);
    const auto labels = rcnn::testing::one_hot({3, 1, 4, 1}, 10);
    const auto r = rcnn::testing::model_gradient_check(build<double>(spec, 7), batch, labels, 1e-3, 1e-3);
    checked += r.checked;
    failed += r.failed;
    if (r.max_relative_error > worst) {
      worst = r.max_relative_error;
      where = std::string(name) + " " + r.worst;
    }
  }
  const double t = seconds_since(t0);
  report(2, "gradient correctness (h = 1e-3, 2 maps, 8x8, 2 steps)", failed == 0 && worst < 1e-3 && t < 60,
         std::to_string(checked) + " entries over 6 models, " + std::to_string(failed) +
             " above 1e-3, max relative error " + sci(worst) + " (" + where + "), " + num(t, 1) + " s");
}

// Rejected iff p_i <= k* q / m, k* = max{k : #{p_i <= k q / m} >= k}.
std::vector<bool> bh_brute_force(const std::vector<double>& p, double q) {
  const std::size_t m = p.size();
  std::size_t best = 0;
  for (std::size_t k = 1; k <= m; ++k) {
    const double cut = double(k) * q / double(m);
    std::size_t below = 0;
    for (double v : p) below += v <= cut;
    if (below >= k) best = k;
  }
  std::vector<bool> out(m);
  for (std::size_t i = 0; i < m; ++i) out[i] = best > 0 && p[i] <= double(best) * q / double(m);
  return out;
}

void statistics() {
  const double p017 = chi2_sf_1df(0.17);
  const double p012 = chi2_sf_1df(0.12);
  // mcnemar reports the survival function of its own statistic.
  const McNemarResult m = mcnemar({0, 12, 8, 0});
  const bool mc = std::abs(m.chi2 - 0.45) < 1e-12 && m.p == chi2_sf_1df(m.chi2);

  Rng rng(99);
  int agree = 0;
  for (int f = 0; f < 1000; ++f) {
    std::vector<double> p(15);
    for (double& v : p) v = f % 2 ? std::pow(rng.uniform(), 3) : std::round(rng.uniform() * 40) / 400;
    agree += fdr_bh(p, 0.05) == bh_brute_force(p, 0.05);
  }
  const bool pass = std::abs(p017 - 0.680) <= 0.005 && std::abs(p012 - 0.73) <= 0.01 && mc && agree == 1000;
  report(3, "statistics oracle", pass,
         "p(0.17) = " + num(p017) + " (0.680 +- 0.005), p(0.12) = " + num(p012) + " (0.73 +- 0.01), mcnemar(12, 8) chi2 " +
             num(m.chi2, 3) + ", BH agrees with brute force on " + std::to_string(agree) + "/1000 families of 15");
}

double centroid_column(const Image& mask) {
  double sum = 0;
  double n = 0;
  for (Index i = 0; i < mask.rows(); ++i)
    for (Index j = 0; j < mask.cols(); ++j)
      if (mask(i, j)) {
        sum += double(j);
        n += 1;
      }
  return n > 0 ? sum / n : 0.0;
}

void geometry(const fs::path& out) {
  const SpriteSet sprites = load_idx(kMnist / "train-images-idx3-ubyte", kMnist / "train-labels-idx1-ubyte");
  const CameraRig rig;

  double worst = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const SceneSpec spec = draw_scene(rig, sprites, {int(seed % 10), int(seed / 10)}, seed);
    const EyeRender l = render_eye(rig, Eye::Left, spec, sprites);
    const EyeRender r = render_eye(rig, Eye::Right, spec, sprites);
    worst = std::max(worst, std::abs(centroid_column(l.masks[0]) - centroid_column(r.masks[0])));
  }

  int monotone = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const SceneSpec full = draw_scene(rig, sprites, {int(seed % 10), int(seed / 10)}, seed + 5000);
    SceneSpec one = full;
    one.occluders.resize(1);
    SceneSpec none = full;
    none.occluders.clear();
    const float a = render_scene(rig, none, sprites).occlusion_pct;
    const float b = render_scene(rig, one, sprites).occlusion_pct;
    const float c = render_scene(rig, full, sprites).occlusion_pct;
    monotone += a <= b && b <= c;
  }

  // Record counts: --limit 1000 through the front end, and the whole bundled
  // train split counted without storing it.
  const fs::path a = out / "limit1000_a.osmn";
  const fs::path b = out / "limit1000_b.osmn";
  for (const auto& path : {a, b}) {
    cli_or_throw({"generate", "--mnist-images", (kMnist / "train-images-idx3-ubyte").string(), "--mnist-labels",
                  (kMnist / "train-labels-idx1-ubyte").string(), "--out", path.string(), "--seed", "7", "--limit",
                  "1000"});
  }
  const std::uint64_t limited = read_dataset_header(a).count;
  const bool identical = read_file(a) == read_file(b);
  std::size_t full = 0;
  generate_dataset(rig, sprites, GenerateOptions{}, [&](const StereoSample&) { ++full; });
  fs::remove(a);
  fs::remove(b);

  const bool pass = worst <= 1.0 && monotone == 1000 && limited == 10000 && full == sprites.size() * 10 && identical;
  report(6, "dataset geometry", pass,
         "max target centroid disparity " + num(worst, 3) + " px over 1000 scenes (<= 1), occlusion monotone in " +
             std::to_string(monotone) + "/1000 scenes, --limit 1000 -> " + std::to_string(limited) +
             " records, full bundled split " + std::to_string(sprites.size()) + " digits -> " + std::to_string(full) +
             " records (x10; 60,000 digits would give 600,000), regeneration byte-identical: " +
             (identical ? "yes" : "no"));
}

void loss_oracle() {
  const double closed = -std::log(0.1) - 9 * std::log(0.9);
  Tensor uniform = Tensor::Constant({3, 10, 1, 1}, 0.1f);
  Tensor labels({3, 10, 1, 1});
  for (Index n = 0; n < 3; ++n) labels(n, int(n * 3), 0, 0) = 1;
  const double single = cross_entropy(uniform, labels);

  // Time-constant trace: a feed-forward model whose readout ignores its input.
  ModelParams<float> p = build<float>(ArchitectureSpec::named("B", 1), 3);
  p.readout_weights.data().setZero();
  p.readout_bias.data().setZero();
  std::mt19937_64 rng(5);
  const Tensor batch = rcnn::testing::random_tensor<float>({3, 1, 32, 32}, rng, 0.0, 1.0);
  GradientTape<float> tape;
  const ForwardPass pass = forward(tape, p, batch, Mode::Train);
  const double step0 = tape.value(cross_entropy(tape, pass.probabilities[0], tape.constant(labels)))[0];
  const double four = tape.value(time_summed_loss(tape, pass, labels))[0];

  const bool ok = std::abs(single - 3.25083) <= 1e-4 && std::abs(closed - 3.25083) <= 1e-4 &&
                  std::abs(four - 4 * step0) <= 1e-6 * four && std::abs(step0 - 3.25083) <= 1e-4;
  report(7, "loss oracle", ok,
         "uniform 0.1 loss " + num(single, 6) + " (closed form " + num(closed, 6) + ", target 3.25083 +- 1e-4), 4-step " +
             num(four, 6) + " = " + num(four / step0, 8) + " x single step");
}

// ---------------------------------------------------------------------------

struct DeskConfig {
  fs::path out;
  std::size_t train_digits = 2000;
  std::size_t test_digits = 400;
  int epochs = 5;
  int batch = 100;
  double lr = 0.003;
  std::uint64_t seed = 2024;
};

double max_step_deviation(ModelParams<float>& params, const Dataset& data) {
  double worst = 0;
  std::vector<Index> order(std::size_t(data.size()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = Index(i);
  for (std::size_t b = 0; b < order.size(); b += 500) {
    const std::size_t e = std::min(order.size(), b + 500);
    const UnrolledTrace<float> trace = run(params, gather_images(data, order, b, e), Mode::Eval, false);
    for (std::size_t t = 1; t < trace.steps(); ++t)
      worst = std::max(worst, double((trace.probabilities[t].data() - trace.probabilities[0].data()).cwiseAbs().maxCoeff()));
  }
  return worst;
}

void desk_scale(const DeskConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path train = c.out / "train.osmn";
  const fs::path test = c.out / "test.osmn";
  cli_or_throw({"generate", "--mnist-images", (kMnist / "train-images-idx3-ubyte").string(), "--mnist-labels",
                (kMnist / "train-labels-idx1-ubyte").string(), "--out", train.string(), "--seed",
                std::to_string(c.seed), "--limit", std::to_string(c.train_digits)});
  cli_or_throw({"generate", "--mnist-images", (kMnist / "t10k-images-idx3-ubyte").string(), "--mnist-labels",
                (kMnist / "t10k-labels-idx1-ubyte").string(), "--out", test.string(), "--seed",
                std::to_string(c.seed + 1), "--limit", std::to_string(c.test_digits)});

  std::map<std::string, std::map<std::string, std::string>> eval;
  std::map<std::string, std::vector<std::map<std::string, std::string>>> metrics;
  std::vector<std::string> correct_files;
  for (const auto& name : kArchitectureNames) {
    const std::string m(name);
    const fs::path dir = c.out / m;
    std::cout << "--- training " << m << std::endl;
    cli_or_throw({"train", "--data", train.string(), "--arch", m, "--input", "stereo", "--epochs",
                  std::to_string(c.epochs), "--batch", std::to_string(c.batch), "--lr", format_number(c.lr), "--seed",
                  std::to_string(c.seed), "--holdout", "0", "--out-dir", dir.string()});
    char ckpt[32];
    std::snprintf(ckpt, sizeof ckpt, "epoch_%03d.ckpt", c.epochs);
    std::vector<std::string> args = {"eval", "--checkpoint", (dir / ckpt).string(), "--data", test.string(), "--out",
                                     (dir / "eval").string(), "--arch", m};
    if (m == "BLT") args.push_back("--trace");
    cli_or_throw(args);
    eval[m] = read_csv(dir / "eval" / "eval.csv").at(0);
    metrics[m] = read_csv(dir / "metrics.csv");
    correct_files.push_back((dir / "eval" / "correct.txt").string());
  }
  std::vector<std::string> cmp = {"compare"};
  cmp.insert(cmp.end(), correct_files.begin(), correct_files.end());
  cmp.insert(cmp.end(), {"--names", "B,B-F,B-K,BT,BL,BLT", "--out", (c.out / "compare").string()});
  cli_or_throw(cmp);
  const double minutes = seconds_since(t0) / 60;

  auto err = [&](const std::string& m) { return std::stod(eval[m].at("error_rate")); };
  std::string errors;
  bool all_beat_chance = true;
  for (const auto& name : kArchitectureNames) {
    const std::string m(name);
    errors += (errors.empty() ? "" : ", ") + m + " " + num(err(m));
    all_beat_chance = all_beat_chance && err(m) <= 0.9 - 0.3;
  }
  const bool ordering = err("BLT") <= err("B") && err("BL") <= err("B");
  report(4, "desk-scale ordering (20k/4k stereo, 5 epochs, batch 100, lr 0.003)", ordering && all_beat_chance,
         "test error " + errors + "; BLT <= B: " + (err("BLT") <= err("B") ? "yes" : "no") +
             ", BL <= B: " + (err("BL") <= err("B") ? "yes" : "no") + ", all <= 0.6: " +
             (all_beat_chance ? "yes" : "no") + "; " + num(minutes, 1) + " min");

  const Dataset test_set = make_dataset(read_dataset(test), InputMode::Stereo);
  double ff_worst = 0;
  std::string ff;
  for (const char* m : {"B", "B-F", "B-K"}) {
    char ckpt[32];
    std::snprintf(ckpt, sizeof ckpt, "epoch_%03d.ckpt", c.epochs);
    ModelParams<float> p = load_checkpoint(c.out / m / ckpt);
    const double d = max_step_deviation(p, test_set);
    ff_worst = std::max(ff_worst, d);
    ff += std::string(ff.empty() ? "" : ", ") + m + " " + sci(d);
  }
  report(5, "feed-forward step invariance", ff_worst <= 1e-6,
         "max |softmax(t) - softmax(0)| on the test set: " + ff + " (limit 1e-6)");

  const auto& blt = eval["BLT"];
  const long revisions = std::stol(blt.at("revisions"));
  std::vector<double> prob;
  for (int t = 0; t < 4; ++t) prob.push_back(std::stod(blt.at("true_prob_t" + std::to_string(t))));
  bool trend = true;
  for (std::size_t t = 1; t < prob.size(); ++t) trend = trend && prob[t] >= prob[t - 1] - 0.01;
  report(8, "temporal revision (BLT)", revisions > 0 && trend,
         std::to_string(revisions) + " test stimuli wrong at t=0 and right at t=3; mean true-class probability " +
             num(prob[0]) + " " + num(prob[1]) + " " + num(prob[2]) + " " + num(prob[3]) + " (non-decreasing +- 0.01)");

  bool logged = true;
  std::string sums;
  for (const char* m : {"BT", "BL", "BLT"}) {
    const auto& rows = metrics[m];
    logged = logged && int(rows.size()) == c.epochs;
    std::string last = "NA";
    for (const auto& row : rows) {
      const std::string& v = row.at("recurrent_weight_sum");
      const bool finite = v != "NA" && std::isfinite(std::stod(v));
      logged = logged && finite;
      last = v;
    }
    sums += std::string(sums.empty() ? "" : ", ") + m + " " + (last == "NA" ? last : num(std::stod(last)));
  }
  report(9, "recurrent-weight-sum diagnostic", logged,
         "logged every epoch and finite for BT, BL, BLT; final sums " + sums + " (sign recorded, not asserted)");

  // Run report.
  std::ostringstream r;
  r << "desk-scale run: " << c.train_digits * 10 << " train / " << c.test_digits * 10
    << " test stereo records, seed " << c.seed << ", " << c.epochs << " epochs, batch " << c.batch << ", lr "
    << format_number(c.lr) << ", " << num(minutes, 1) << " min\n\n";
  r << "model  error   acc_t0  acc_t3  true_prob_t0  true_prob_t3  revisions\n";
  std::vector<std::pair<double, std::string>> rank;
  for (const auto& name : kArchitectureNames) {
    const std::string m(name);
    const auto& e = eval[m];
    char line[160];
    std::snprintf(line, sizeof line, "%-5s  %.4f  %.4f  %.4f  %.4f        %.4f        %s\n", m.c_str(), err(m),
                  std::stod(e.at("acc_t0")), std::stod(e.at("acc_t3")), std::stod(e.at("true_prob_t0")),
                  std::stod(e.at("true_prob_t3")), e.at("revisions").c_str());
    r << line;
    rank.push_back({err(m), m});
  }
  std::sort(rank.begin(), rank.end());
  r << "\nranking (best first):";
  for (const auto& [e, m] : rank) r << ' ' << m;
  r << "\nstretch goal, BLT best of all six: " << (rank.front().second == "BLT" ? "met" : "not met") << "\n";
  r << "\nrecurrent weight sum per epoch:\n";
  for (const char* m : {"BT", "BL", "BLT"}) {
    r << "  " << m << ":";
    for (const auto& row : metrics[m]) r << ' ' << row.at("recurrent_weight_sum");
    r << "\n";
  }
  r << "\ntraining loss per epoch:\n";
  for (const auto& name : kArchitectureNames) {
    r << "  " << name << ":";
    for (const auto& row : metrics[std::string(name)]) r << ' ' << row.at("loss");
    r << "\n";
  }
  r << "\npairwise McNemar tests, BH at q = 0.05 ('#' significant):\n"
    << read_file(c.out / "compare" / "comparison_grid.txt");
  atomic_write(c.out / "report.txt", [&](std::ostream& o) { o << r.str(); });
  std::cout << "\n" << r.str() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  keep_large_allocations_on_heap();
  CLI::App app{"Acceptance criteria 1-9"};
  DeskConfig desk;
  std::string out = "acceptance_run";
  bool skip_desk = false;
  app.add_option("--out", out, "Artifact directory")->capture_default_str();
  app.add_option("--train-digits", desk.train_digits)->capture_default_str();
  app.add_option("--test-digits", desk.test_digits)->capture_default_str();
  app.add_option("--epochs", desk.epochs)->capture_default_str();
  app.add_option("--seed", desk.seed)->capture_default_str();
  app.add_flag("--skip-desk", skip_desk, "Skip criteria 4, 5, 8, 9 (training run)");
  CLI11_PARSE(app, argc, argv);
  desk.out = out;
  fs::create_directories(desk.out);

  try {
    parameter_counts();
    gradient_check();
    statistics();
    geometry(desk.out);
    loss_oracle();
    if (!skip_desk) desk_scale(desk);
  } catch (const std::exception& e) {
    std::cout << "FAIL  acceptance run aborted: " << e.what() << std::endl;
    return 1;
  }

  std::sort(outcomes.begin(), outcomes.end(), [](const Outcome& a, const Outcome& b) { return a.id < b.id; });
  std::cout << "\nsummary\n";
  int failed = 0;
  for (const auto& o : outcomes) {
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << o.id << "  " << o.title << "\n";
    failed += !o.pass;
  }
  if (skip_desk) std::cout << "SKIP  4 5 8 9 (--skip-desk)\n";
  std::cout << outcomes.size() - std::size_t(failed) << "/" << outcomes.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
