#pragma once

#include "rcnn/architecture.hpp"
#include "rcnn/scene.hpp"

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace rcnn {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias-corrected moment estimates. One instance per model; the
/// moment buffers follow the order of the tensors passed to step().
template <typename Scalar>
class Adam {
 public:
  explicit Adam(double learning_rate, AdamOptions options = {})
      : lr_(learning_rate), opt_(options) {}

  void step(const std::vector<Tensor4<Scalar>*>& params, const std::vector<Tensor4<Scalar>>& grads) {
    if (params.size() != grads.size()) throw std::invalid_argument("Adam: params/grads size mismatch");
    if (m_.empty()) {
      for (const auto* p : params) {
        m_.push_back(Tensor4<Scalar>(p->shape()));
        v_.push_back(Tensor4<Scalar>(p->shape()));
      }
    }
    ++t_;
    const Scalar b1 = Scalar(opt_.beta1);
    const Scalar b2 = Scalar(opt_.beta2);
    const Scalar c1 = Scalar(1 - std::pow(opt_.beta1, double(t_)));
    const Scalar c2 = Scalar(1 - std::pow(opt_.beta2, double(t_)));
    const Scalar lr = Scalar(lr_);
    const Scalar eps = Scalar(opt_.epsilon);
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(*params[i], grads[i], "Adam");
      auto g = grads[i].data().array();
      auto m = m_[i].data().array();
      auto v = v_[i].data().array();
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g.square();
      params[i]->data().array() -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
  }

  long steps() const { return t_; }
  double learning_rate() const { return lr_; }

 private:
  double lr_;
  AdamOptions opt_;
  long t_ = 0;
  std::vector<Tensor4<Scalar>> m_;
  std::vector<Tensor4<Scalar>> v_;
};

enum class InputMode { Mono, Stereo };

InputMode parse_input_mode(const std::string& s);
int channels_of(InputMode mode);

/// Images as a float tensor in [0, 1]: mono keeps the left eye, stereo
/// stacks left and right as two channels.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int classes = 10;

  Index size() const { return images.shape().n; }
  Index channels() const { return images.shape().c; }
};

Dataset make_dataset(const std::vector<StereoSample>& samples, InputMode mode, int classes = 10);

/// Rows `order[begin..end)` of the dataset.
Tensor gather_images(const Dataset& data, const std::vector<Index>& order, std::size_t begin,
                     std::size_t end);
Tensor gather_one_hot(const Dataset& data, const std::vector<Index>& order, std::size_t begin,
                      std::size_t end);

struct TrainConfig {
  double learning_rate = 0.003;
  int epochs = 25;
  int batch_size = 400;
  AdamOptions adam{};
  std::uint64_t shuffle_seed = 0;
  int eval_every = 1;
  double holdout_fraction = 0.05;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path metrics_path;    // empty: no CSV

  void validate() const;
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0;                   // mean over batches of the time-summed loss
  std::vector<double> step_accuracy;  // on the held-out slice; empty if not evaluated
  std::optional<double> recurrent_weight_sum;
  double wall_seconds = 0;
};

std::string metrics_csv(const std::vector<EpochMetrics>& log, int time_steps);

/// One optimizer step on a mini-batch; returns the batch loss.
double train_step(ModelParams<float>& params, Adam<float>& adam, const Tensor& images,
                  const Tensor& one_hot);

/// Shuffled mini-batch training. The final holdout_fraction of the stream is
/// kept out of training and scored after each eval_every epochs.
std::vector<EpochMetrics> train(ModelParams<float>& params, const Dataset& data, const TrainConfig& config,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {});

struct EvalReport {
  std::string model;
  double error_rate = 0;
  std::vector<std::uint8_t> correct;       // dataset order, final step
  std::vector<int> predictions;            // final step
  std::vector<double> step_accuracy;       // argmax accuracy per step
  std::vector<double> true_class_prob;     // mean probability of the label per step
  std::size_t revisions = 0;               // wrong at the first step, right at the last

  std::string summary_csv() const;
};

EvalReport evaluate(ModelParams<float>& params, const Dataset& data, int batch_size = 500);

/// Correctness vector as one '0'/'1' character per stimulus.
void write_correctness(const std::filesystem::path& path, const std::vector<std::uint8_t>& correct);
std::vector<std::uint8_t> read_correctness(const std::filesystem::path& path);

struct TraceSummary {
  int classes = 0;
  int steps = 0;
  std::vector<std::size_t> samples;  // per target class
  // [target][step][class]
  std::vector<std::vector<std::vector<double>>> mean;
  std::vector<std::vector<std::vector<double>>> standard_error;

  std::string csv() const;
};

/// Mean softmax trajectory per target class over the first per_class_sample
/// stimuli of that class (dataset order), with standard errors.
TraceSummary softmax_trace_summary(ModelParams<float>& params, const Dataset& data,
                                   std::size_t per_class_sample = 1000, int batch_size = 500);

}  // namespace rcnn
