#include "cli.hpp"

#include "rcnn/checkpoint.hpp"
#include "rcnn/io.hpp"
#include "rcnn/scene.hpp"
#include "rcnn/stats.hpp"
#include "rcnn/train.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <map>
#include <ostream>
#include <set>

namespace rcnn::cli {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Resolved configuration, seeds, paths and artifact checksums of one run.
class RunManifest {
 public:
  RunManifest(std::string subcommand, const std::vector<std::string>& args)
      : start_(std::chrono::steady_clock::now()) {
    kv_["subcommand"] = std::move(subcommand);
    std::string line = "rcnn";
    for (const auto& a : args) line += " " + a;
    kv_["command_line"] = line;
  }

  void set(const std::string& key, const std::string& value) { kv_[key] = value; }
  void set(const std::string& key, double value) { kv_[key] = format_number(value); }
  void set(const std::string& key, long long value) { kv_[key] = std::to_string(value); }

  void artifact(const std::string& name, const fs::path& path) {
    kv_["artifact." + name] = path.string();
    kv_["artifact." + name + ".adler32"] = std::to_string(file_adler32(path));
    kv_["artifact." + name + ".bytes"] = std::to_string(fs::file_size(path));
  }

  double elapsed() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

  void write(const fs::path& path) {
    kv_["wall_seconds"] = format_number(elapsed());
    write_key_values(path, kv_);
  }

 private:
  KeyValues kv_;
  std::chrono::steady_clock::time_point start_;
};

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

Dataset load_for_model(const fs::path& path, int in_channels) {
  if (in_channels != 1 && in_channels != 2) {
    throw DataError("model expects " + std::to_string(in_channels) + " input channels; datasets give 1 or 2");
  }
  return make_dataset(read_dataset(path), in_channels == 1 ? InputMode::Mono : InputMode::Stereo);
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  std::string images;
  std::string labels;
  std::string out;
  std::uint64_t seed = 0;
  int combos = 10;
  double focal_px = 60;
  int occluders = 2;
  std::size_t limit = 0;
};

int cmd_generate(const GenerateArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("generate", argv);
  SpriteSet sprites = load_idx(a.images, a.labels);
  if (a.limit > 0) sprites = sprites.head(a.limit);
  CameraRig rig;
  rig.focal_px = a.focal_px;
  rig.validate(a.occluders);
  GenerateOptions opt;
  opt.combos_per_digit = a.combos;
  opt.occluders = a.occluders;
  opt.master_seed = a.seed;

  const std::vector<StereoSample> samples = generate_dataset(rig, sprites, opt);
  const fs::path path(a.out);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_dataset(path, samples, rig.width, rig.height);
  write_dataset_manifest(path, rig, opt, sprites.source, samples.size());

  manifest.set("mnist_images", a.images);
  manifest.set("mnist_labels", a.labels);
  manifest.set("seed", static_cast<long long>(a.seed));
  manifest.set("combos", static_cast<long long>(a.combos));
  manifest.set("focal_px", a.focal_px);
  manifest.set("occluders", static_cast<long long>(a.occluders));
  manifest.set("limit", static_cast<long long>(a.limit));
  manifest.set("sprites", static_cast<long long>(sprites.images.size()));
  manifest.set("records", static_cast<long long>(samples.size()));
  manifest.artifact("dataset", path);
  manifest.write(path.string() + ".run");
  out << "wrote " << samples.size() << " records (" << sprites.images.size() << " digits x " << a.combos
      << " scenes) to " << path.string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string arch;
  std::string input = "stereo";
  int epochs = 25;
  int batch = 400;
  double lr = 0.003;
  std::uint64_t seed = 0;
  std::string out_dir;
  double holdout = 0.05;
  int eval_every = 1;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("train", argv);
  const InputMode mode = parse_input_mode(a.input);
  const ArchitectureSpec spec = ArchitectureSpec::named(a.arch, channels_of(mode));
  ModelParams<float> params = build<float>(spec, a.seed);
  out << "model " << spec.name << " (" << a.input << "): " << group_thousands(count_learnable(params))
      << " learnable parameters\n";

  TrainConfig cfg;
  cfg.learning_rate = a.lr;
  cfg.epochs = a.epochs;
  cfg.batch_size = a.batch;
  cfg.shuffle_seed = mix64(a.seed);
  cfg.holdout_fraction = a.holdout;
  cfg.eval_every = a.eval_every;
  cfg.validate();

  const Dataset data = make_dataset(read_dataset(a.data), mode);
  out << "dataset " << a.data << ": " << data.size() << " records\n";

  const fs::path dir(a.out_dir);
  fs::create_directories(dir);
  cfg.checkpoint_dir = dir;
  cfg.metrics_path = dir / "metrics.csv";
  save_checkpoint(dir / "initial.ckpt", params);

  train(params, data, cfg, [&](const EpochMetrics& m) {
    out << "epoch " << m.epoch << "/" << cfg.epochs << " loss " << fixed(m.loss);
    if (!m.step_accuracy.empty()) {
      out << " holdout_acc";
      for (double acc : m.step_accuracy) out << ' ' << fixed(acc, 3);
    }
    if (m.recurrent_weight_sum) out << " recurrent_weight_sum " << fixed(*m.recurrent_weight_sum);
    out << " time " << fixed(m.wall_seconds, 1) << "s\n";
    out.flush();
  });

  manifest.set("data", a.data);
  manifest.set("arch", spec.name);
  manifest.set("input", a.input);
  manifest.set("epochs", static_cast<long long>(a.epochs));
  manifest.set("batch", static_cast<long long>(a.batch));
  manifest.set("lr", a.lr);
  manifest.set("seed", static_cast<long long>(a.seed));
  manifest.set("init_seed", static_cast<long long>(a.seed));
  manifest.set("shuffle_seed", std::to_string(cfg.shuffle_seed));
  manifest.set("holdout_fraction", a.holdout);
  manifest.set("eval_every", static_cast<long long>(a.eval_every));
  manifest.set("adam", "beta1 0.9, beta2 0.999, epsilon 1e-08");
  manifest.set("learnable_parameters", static_cast<long long>(count_learnable(params)));
  manifest.artifact("initial_checkpoint", dir / "initial.ckpt");
  if (a.epochs > 0) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d.ckpt", a.epochs);
    manifest.artifact("final_checkpoint", dir / name);
    manifest.artifact("metrics", cfg.metrics_path);
  }
  manifest.write(dir / "run_manifest.txt");
  return kOk;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string out;
  std::string arch;
  bool trace = false;
  std::size_t trace_sample = 1000;
  int batch = 500;
};

int cmd_eval(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("eval", argv);
  ModelParams<float> params = load_checkpoint(a.checkpoint);
  if (!a.arch.empty() && a.arch != params.spec.name) {
    throw DataError("checkpoint " + a.checkpoint + " holds model " + params.spec.name + ", not " + a.arch);
  }
  const Dataset data = load_for_model(a.data, params.spec.in_channels);
  const EvalReport report = evaluate(params, data, a.batch);

  std::string trace_csv;
  std::size_t sample = 0;
  if (a.trace) {
    std::vector<std::size_t> per_class(std::size_t(data.classes), 0);
    for (int l : data.labels) ++per_class[std::size_t(l)];
    sample = std::min(a.trace_sample, *std::min_element(per_class.begin(), per_class.end()));
    if (sample == 0) throw DataError("trace: a class is absent from the test set");
    trace_csv = softmax_trace_summary(params, data, sample, a.batch).csv();
  }

  const fs::path dir(a.out);
  fs::create_directories(dir);
  atomic_write(dir / "eval.csv", [&](std::ostream& o) { o << report.summary_csv(); });
  write_correctness(dir / "correct.txt", report.correct);
  manifest.artifact("summary", dir / "eval.csv");
  manifest.artifact("correctness", dir / "correct.txt");
  if (a.trace) {
    atomic_write(dir / "trace.csv", [&](std::ostream& o) { o << trace_csv; });
    manifest.artifact("trace", dir / "trace.csv");
    manifest.set("trace_sample_per_class", static_cast<long long>(sample));
  }
  manifest.set("checkpoint", a.checkpoint);
  manifest.set("checkpoint.adler32", std::to_string(file_adler32(a.checkpoint)));
  manifest.set("data", a.data);
  manifest.set("model", params.spec.name);
  manifest.set("records", static_cast<long long>(data.size()));
  manifest.set("error_rate", report.error_rate);
  manifest.write(dir / "run_manifest.txt");

  out << params.spec.name << ": error " << fixed(report.error_rate) << " on " << data.size()
      << " records; per-step accuracy";
  for (double acc : report.step_accuracy) out << ' ' << fixed(acc);
  out << "; revisions " << report.revisions << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct CompareArgs {
  std::vector<std::string> files;
  std::vector<std::string> names;
  double fdr = 0.05;
  std::string out;
};

std::vector<std::string> default_names(const std::vector<std::string>& files) {
  std::vector<std::string> stems;
  for (const auto& f : files) stems.push_back(fs::path(f).stem().string());
  if (std::set<std::string>(stems.begin(), stems.end()).size() == stems.size()) return stems;
  // Same file name in every run directory: name by directory.
  std::vector<std::string> dirs;
  for (const auto& f : files) dirs.push_back(fs::absolute(f).parent_path().filename().string());
  return dirs;
}

int cmd_compare(const CompareArgs& a, const std::vector<std::string>& argv, std::ostream& out) {
  RunManifest manifest("compare", argv);
  if (a.files.size() < 2) throw UsageError("compare needs at least two correctness files");
  if (!a.names.empty() && a.names.size() != a.files.size()) {
    throw UsageError("--names must give one name per correctness file");
  }
  if (!(a.fdr > 0 && a.fdr < 1)) throw UsageError("--fdr must be in (0, 1)");
  const std::vector<std::string> names = a.names.empty() ? default_names(a.files) : a.names;
  std::vector<std::vector<std::uint8_t>> correct;
  for (const auto& f : a.files) correct.push_back(read_correctness(f));
  for (std::size_t i = 1; i < correct.size(); ++i) {
    if (correct[i].size() != correct[0].size()) {
      throw DataError("length mismatch: " + a.files[i] + " has " + std::to_string(correct[i].size()) +
                      " entries, " + a.files[0] + " has " + std::to_string(correct[0].size()));
    }
  }
  const ComparisonMatrix cm = compare_all(names, correct, a.fdr);

  const fs::path dir(a.out);
  fs::create_directories(dir);
  atomic_write(dir / "comparison.csv", [&](std::ostream& o) { o << cm.csv(); });
  atomic_write(dir / "comparison_grid.txt", [&](std::ostream& o) { o << cm.grid(); });
  for (std::size_t i = 0; i < a.files.size(); ++i) manifest.set("input." + names[i], a.files[i]);
  manifest.set("fdr_q", a.fdr);
  manifest.set("pairs", static_cast<long long>(cm.pairs.size()));
  manifest.artifact("comparison", dir / "comparison.csv");
  manifest.artifact("grid", dir / "comparison_grid.txt");
  manifest.write(dir / "run_manifest.txt");

  std::size_t flagged = 0;
  for (const auto& p : cm.pairs) flagged += p.significant;
  out << cm.pairs.size() << " pairs tested, " << flagged << " significant at FDR q = " << format_number(a.fdr)
      << "\n"
      << cm.grid();
  return kOk;
}

}  // namespace

std::string group_thousands(long long value) {
  std::string digits = std::to_string(value < 0 ? -value : value);
  std::string outs;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i > 0 && (digits.size() - i) % 3 == 0) outs += ',';
    outs += digits[i];
  }
  return value < 0 ? "-" + outs : outs;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Recurrent convolutional networks on occluded stereo digits", "rcnn"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Render an occluded stereo dataset from IDX digits");
  g->add_option("--mnist-images", gen.images, "IDX image file")->required()->check(CLI::ExistingFile);
  g->add_option("--mnist-labels", gen.labels, "IDX label file")->required()->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output dataset file")->required();
  g->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  g->add_option("--combos", gen.combos, "Scenes per digit")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--focal-px", gen.focal_px, "Focal length in pixels")->capture_default_str();
  g->add_option("--occluders", gen.occluders, "Occluding digits per scene")
      ->capture_default_str()
      ->check(CLI::Range(0, 9));
  g->add_option("--limit", gen.limit, "Use only the first N digits (0: all)")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train one model");
  t->add_option("--data", tr.data, "Training dataset")->required()->check(CLI::ExistingFile);
  t->add_option("--arch", tr.arch, "Architecture")
      ->required()
      ->check(CLI::IsMember({"B", "B-F", "B-K", "BT", "BL", "BLT"}));
  t->add_option("--input", tr.input, "mono or stereo")->capture_default_str()->check(CLI::IsMember({"mono", "stereo"}));
  t->add_option("--epochs", tr.epochs)->capture_default_str()->check(CLI::NonNegativeNumber);
  t->add_option("--batch", tr.batch)->capture_default_str()->check(CLI::Range(2, 1 << 20));
  t->add_option("--lr", tr.lr)->capture_default_str()->check(CLI::NonNegativeNumber);
  t->add_option("--seed", tr.seed, "Initialization and shuffling seed")->capture_default_str();
  t->add_option("--out-dir", tr.out_dir, "Checkpoints, metrics and manifest")->required();
  t->add_option("--holdout", tr.holdout, "Fraction held out from the end of the data")->capture_default_str();
  t->add_option("--eval-every", tr.eval_every, "Epochs between holdout evaluations")->capture_default_str();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  e->add_option("--checkpoint", ev.checkpoint)->required()->check(CLI::ExistingFile);
  e->add_option("--data", ev.data)->required()->check(CLI::ExistingFile);
  e->add_option("--out", ev.out, "Output directory")->required();
  e->add_option("--arch", ev.arch, "Expected architecture of the checkpoint");
  e->add_flag("--trace", ev.trace, "Also write the mean softmax trace per class");
  e->add_option("--trace-sample", ev.trace_sample, "Stimuli per class in the trace")->capture_default_str();
  e->add_option("--batch", ev.batch)->capture_default_str()->check(CLI::PositiveNumber);

  CompareArgs cmp;
  auto* c = app.add_subcommand("compare", "Pairwise McNemar tests with FDR control");
  c->add_option("files", cmp.files, "Correctness files")->required()->check(CLI::ExistingFile);
  c->add_option("--names", cmp.names, "Model names, in file order")->delimiter(',');
  c->add_option("--fdr", cmp.fdr, "False discovery rate")->capture_default_str();
  c->add_option("--out", cmp.out, "Output directory")->required();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (g->parsed()) return cmd_generate(gen, args, out);
    if (t->parsed()) return cmd_train(tr, args, out);
    if (e->parsed()) return cmd_eval(ev, args, out);
    return cmd_compare(cmp, args, out);
  } catch (const NumericError& ex) {
    err << "numeric failure: " << ex.what() << "\n";
    return kNumeric;
  } catch (const DataError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const ShapeError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const StatsError& ex) {
    err << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& ex) {
    err << "data error: " << ex.what() << "\n";
    return kData;
  } catch (const std::invalid_argument& ex) {
    err << "usage error: " << ex.what() << "\n";
    return kUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kFailure;
  }
}

}  // namespace rcnn::cli
