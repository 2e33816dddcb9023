#include "rcnn/train.hpp"

#include "rcnn/checkpoint.hpp"
#include "rcnn/io.hpp"

#include <chrono>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace rcnn {

InputMode parse_input_mode(const std::string& s) {
  if (s == "mono") return InputMode::Mono;
  if (s == "stereo") return InputMode::Stereo;
  throw std::invalid_argument("unknown input mode '" + s + "' (expected mono or stereo)");
}

int channels_of(InputMode mode) { return mode == InputMode::Mono ? 1 : 2; }

Dataset make_dataset(const std::vector<StereoSample>& samples, InputMode mode, int classes) {
  Dataset d;
  d.classes = classes;
  if (samples.empty()) {
    d.images = Tensor({0, channels_of(mode), 0, 0});
    return d;
  }
  const Index h = samples.front().left.rows();
  const Index w = samples.front().left.cols();
  const Index c = channels_of(mode);
  d.images = Tensor({Index(samples.size()), c, h, w});
  d.labels.reserve(samples.size());
  for (std::size_t n = 0; n < samples.size(); ++n) {
    const StereoSample& s = samples[n];
    if (s.label < 0 || s.label >= classes) throw DataError("label out of range at record " + std::to_string(n));
    for (Index ch = 0; ch < c; ++ch) {
      const Image& img = ch == 0 ? s.left : s.right;
      if (img.rows() != h || img.cols() != w) throw DataError("inconsistent image size at record " + std::to_string(n));
      float* dst = d.images.plane_ptr(Index(n), ch);
      for (Index i = 0; i < h * w; ++i) dst[i] = float(img.data()[i]) / 255.0f;
    }
    d.labels.push_back(s.label);
  }
  return d;
}

Tensor gather_images(const Dataset& data, const std::vector<Index>& order, std::size_t begin,
                     std::size_t end) {
  const Shape& s = data.images.shape();
  Tensor out({Index(end - begin), s.c, s.h, s.w});
  for (std::size_t k = begin; k < end; ++k) {
    std::copy_n(data.images.sample_ptr(order[k]), s.sample(), out.sample_ptr(Index(k - begin)));
  }
  return out;
}

Tensor gather_one_hot(const Dataset& data, const std::vector<Index>& order, std::size_t begin,
                      std::size_t end) {
  Tensor out({Index(end - begin), data.classes, 1, 1});
  for (std::size_t k = begin; k < end; ++k) {
    out(Index(k - begin), data.labels[std::size_t(order[k])], 0, 0) = 1.0f;
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and >= 0");
  }
  if (batch_size < 2) throw std::invalid_argument("batch size must be >= 2 (batch normalization)");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
  if (!(holdout_fraction >= 0 && holdout_fraction < 1)) {
    throw std::invalid_argument("holdout fraction must be in [0, 1)");
  }
}

std::string metrics_csv(const std::vector<EpochMetrics>& log, int time_steps) {
  std::ostringstream out;
  out << "epoch,loss";
  for (int t = 0; t < time_steps; ++t) out << ",acc_t" << t;
  out << ",recurrent_weight_sum\n";
  for (const EpochMetrics& m : log) {
    out << m.epoch << ',' << format_number(m.loss);
    for (int t = 0; t < time_steps; ++t) {
      out << ',' << (m.step_accuracy.empty() ? "NA" : format_number(m.step_accuracy[std::size_t(t)]));
    }
    out << ',' << (m.recurrent_weight_sum ? format_number(*m.recurrent_weight_sum) : "NA") << '\n';
  }
  return out.str();
}

double train_step(ModelParams<float>& params, Adam<float>& adam, const Tensor& images,
                  const Tensor& one_hot) {
  GradientTape<float> tape;
  const ForwardPass pass = forward(tape, params, images, Mode::Train);
  const Var loss = time_summed_loss(tape, pass, one_hot);
  const double value = tape.value(loss)[0];
  if (!std::isfinite(value)) throw NumericError("non-finite loss");
  tape.backward(loss);
  std::vector<Tensor> grads;
  grads.reserve(pass.parameters.size());
  for (Var p : pass.parameters) grads.push_back(tape.grad(p));
  adam.step(trainable(params), grads);
  return value;
}

namespace {

Dataset slice(const Dataset& data, Index begin, Index end) {
  Dataset d;
  d.classes = data.classes;
  std::vector<Index> order(static_cast<std::size_t>(end - begin));
  std::iota(order.begin(), order.end(), begin);
  d.images = gather_images(data, order, 0, order.size());
  d.labels.assign(data.labels.begin() + begin, data.labels.begin() + end);
  return d;
}

void check_channels(const ModelParams<float>& params, const Dataset& data) {
  if (data.channels() != params.spec.in_channels) {
    throw ShapeError("channel mismatch: dataset has " + std::to_string(data.channels()) +
                     " channels, model " + params.spec.name + " expects " +
                     std::to_string(params.spec.in_channels));
  }
}

}  // namespace

std::vector<EpochMetrics> train(ModelParams<float>& params, const Dataset& data, const TrainConfig& config,
                                const std::function<void(const EpochMetrics&)>& on_epoch) {
  config.validate();
  if (data.size() == 0) throw DataError("empty dataset");
  check_channels(params, data);

  const Index holdout = Index(std::floor(double(data.size()) * config.holdout_fraction));
  const Index n_train = data.size() - holdout;
  if (n_train < 2) throw DataError("too few training samples");
  const Dataset held = holdout > 0 ? slice(data, n_train, data.size()) : Dataset{};

  Adam<float> adam(config.learning_rate, config.adam);
  Rng rng(config.shuffle_seed);
  std::vector<Index> order(static_cast<std::size_t>(n_train));
  std::vector<EpochMetrics> log;
  const auto start = std::chrono::steady_clock::now();

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), Index(0));
    for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

    double total = 0;
    int batches = 0;
    for (std::size_t b = 0; b < order.size(); b += std::size_t(config.batch_size)) {
      const std::size_t e = std::min(order.size(), b + std::size_t(config.batch_size));
      if (e - b < 2) break;
      total += train_step(params, adam, gather_images(data, order, b, e), gather_one_hot(data, order, b, e));
      ++batches;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = total / std::max(batches, 1);
    if (holdout > 0 && epoch % config.eval_every == 0) m.step_accuracy = evaluate(params, held).step_accuracy;
    if (params.spec.recurrent()) m.recurrent_weight_sum = recurrent_weight_sum(params);
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.push_back(m);

    if (!config.checkpoint_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d.ckpt", epoch);
      save_checkpoint(config.checkpoint_dir / name, params);
    }
    if (!config.metrics_path.empty()) {
      const std::string csv = metrics_csv(log, params.spec.time_steps);
      atomic_write(config.metrics_path, [&](std::ostream& out) { out << csv; });
    }
    if (on_epoch) on_epoch(m);
  }
  return log;
}

EvalReport evaluate(ModelParams<float>& params, const Dataset& data, int batch_size) {
  check_channels(params, data);
  if (batch_size < 1) throw std::invalid_argument("batch size must be >= 1");
  const std::size_t n = std::size_t(data.size());
  const std::size_t steps = std::size_t(params.spec.time_steps);
  EvalReport r;
  r.model = params.spec.name;
  r.correct.resize(n);
  r.predictions.resize(n);
  std::vector<std::size_t> hits(steps, 0);
  std::vector<double> prob(steps, 0.0);
  std::vector<std::uint8_t> first(n);

  std::vector<Index> order(n);
  std::iota(order.begin(), order.end(), Index(0));
  for (std::size_t b = 0; b < n; b += std::size_t(batch_size)) {
    const std::size_t e = std::min(n, b + std::size_t(batch_size));
    const UnrolledTrace<float> trace = run(params, gather_images(data, order, b, e), Mode::Eval, false);
    for (std::size_t t = 0; t < steps; ++t) {
      const Tensor& p = trace.probabilities[t];
      if (!p.all_finite()) throw NumericError("non-finite softmax output");
      const std::vector<int> pred = argmax_rows(p);
      for (std::size_t k = b; k < e; ++k) {
        const int label = data.labels[k];
        const bool ok = pred[k - b] == label;
        hits[t] += ok;
        prob[t] += p(Index(k - b), label, 0, 0);
        if (t == 0) first[k] = ok;
        if (t + 1 == steps) {
          r.correct[k] = ok;
          r.predictions[k] = pred[k - b];
          r.revisions += ok && !first[k];
        }
      }
    }
  }
  for (std::size_t t = 0; t < steps; ++t) {
    r.step_accuracy.push_back(n ? double(hits[t]) / double(n) : 0.0);
    r.true_class_prob.push_back(n ? prob[t] / double(n) : 0.0);
  }
  r.error_rate = n ? 1.0 - r.step_accuracy.back() : 0.0;
  return r;
}

std::string EvalReport::summary_csv() const {
  std::ostringstream out;
  out << "model,n,error_rate";
  for (std::size_t t = 0; t < step_accuracy.size(); ++t) out << ",acc_t" << t;
  for (std::size_t t = 0; t < true_class_prob.size(); ++t) out << ",true_prob_t" << t;
  out << ",revisions\n";
  out << model << ',' << correct.size() << ',' << format_number(error_rate);
  for (double a : step_accuracy) out << ',' << format_number(a);
  for (double p : true_class_prob) out << ',' << format_number(p);
  out << ',' << revisions << '\n';
  return out.str();
}

void write_correctness(const std::filesystem::path& path, const std::vector<std::uint8_t>& correct) {
  atomic_write(path, [&](std::ostream& out) {
    for (std::uint8_t c : correct) out.put(c ? '1' : '0');
    out.put('\n');
  });
}

std::vector<std::uint8_t> read_correctness(const std::filesystem::path& path) {
  std::vector<std::uint8_t> out;
  for (char c : read_file(path)) {
    if (c == '0' || c == '1') {
      out.push_back(c == '1');
    } else if (c != '\n' && c != '\r' && c != ' ') {
      throw DataError(path.string() + ": unexpected character in correctness vector");
    }
  }
  return out;
}

TraceSummary softmax_trace_summary(ModelParams<float>& params, const Dataset& data,
                                   std::size_t per_class_sample, int batch_size) {
  check_channels(params, data);
  const int classes = data.classes;
  const std::size_t steps = std::size_t(params.spec.time_steps);
  std::vector<std::vector<Index>> members(static_cast<std::size_t>(classes));
  for (std::size_t k = 0; k < data.labels.size(); ++k) {
    auto& m = members[std::size_t(data.labels[k])];
    if (m.size() < per_class_sample) m.push_back(Index(k));
  }

  TraceSummary s;
  s.classes = classes;
  s.steps = int(steps);
  for (int c = 0; c < classes; ++c) {
    const auto& idx = members[std::size_t(c)];
    if (idx.empty()) throw DataError("class " + std::to_string(c) + " absent from test set");
    if (idx.size() < per_class_sample) {
      throw std::invalid_argument("class " + std::to_string(c) + " has only " + std::to_string(idx.size()) +
                                  " stimuli, fewer than the requested sample of " +
                                  std::to_string(per_class_sample));
    }
    // Probabilities of every sampled stimulus: [step][stimulus][class].
    std::vector<std::vector<std::vector<double>>> p(steps);
    for (std::size_t b = 0; b < idx.size(); b += std::size_t(batch_size)) {
      const std::size_t e = std::min(idx.size(), b + std::size_t(batch_size));
      const UnrolledTrace<float> trace = run(params, gather_images(data, idx, b, e), Mode::Eval, false);
      for (std::size_t t = 0; t < steps; ++t)
        for (std::size_t k = 0; k < e - b; ++k) {
          std::vector<double> row(static_cast<std::size_t>(classes));
          for (int j = 0; j < classes; ++j) row[std::size_t(j)] = trace.probabilities[t](Index(k), j, 0, 0);
          p[t].push_back(std::move(row));
        }
    }
    const double n = double(idx.size());
    std::vector<std::vector<double>> mean(steps, std::vector<double>(std::size_t(classes)));
    auto se = mean;
    for (std::size_t t = 0; t < steps; ++t)
      for (std::size_t j = 0; j < std::size_t(classes); ++j) {
        double sum = 0;
        for (const auto& row : p[t]) sum += row[j];
        const double mu = sum / n;
        double ss = 0;
        for (const auto& row : p[t]) ss += (row[j] - mu) * (row[j] - mu);
        mean[t][j] = mu;
        se[t][j] = n > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
      }
    s.samples.push_back(idx.size());
    s.mean.push_back(std::move(mean));
    s.standard_error.push_back(std::move(se));
  }
  return s;
}

std::string TraceSummary::csv() const {
  std::ostringstream out;
  out << "target,step,class,mean,stderr,n\n";
  for (int c = 0; c < classes; ++c)
    for (int t = 0; t < steps; ++t)
      for (int j = 0; j < classes; ++j) {
        out << c << ',' << t << ',' << j << ',' << format_number(mean[std::size_t(c)][std::size_t(t)][std::size_t(j)])
            << ',' << format_number(standard_error[std::size_t(c)][std::size_t(t)][std::size_t(j)]) << ','
            << samples[std::size_t(c)] << '\n';
      }
  return out.str();
}

}  // namespace rcnn
