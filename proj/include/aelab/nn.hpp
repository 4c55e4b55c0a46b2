#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "aelab/dataset.hpp"
#include "aelab/tensor.hpp"

namespace aelab {

enum class Head { softmax, svm };
enum class Regularizer { none, l1, l2 };

std::string to_string(Head h);
std::string to_string(Regularizer r);
Head head_from_string(const std::string& s);
Regularizer regularizer_from_string(const std::string& s);

// Residual CNN family: a 3x3 stem, `num_stages` stages of basic blocks
// (two 3x3 convs plus shortcut; stages after the first downsample by 2 via a
// strided first conv and a 1x1 projection shortcut), global average pooling,
// and a linear classification head. ResNet-20 is the config point
// {3 stages, 3 blocks, {16,32,64}} on 32x32 inputs; the desk profile shrinks
// counts but keeps the family.
struct ModelSpec {
  int num_stages = 3;
  int blocks_per_stage = 1;
  std::vector<int> channels{4, 8, 16};  // one entry per stage
  Head head = Head::softmax;
  Regularizer regularizer = Regularizer::none;
  double reg_lambda = 0.0;
  int num_classes = 10;
  std::array<int, 3> input_shape{3, 16, 16};  // channels, rows, cols

  void validate() const;
  std::string to_json() const;  // canonical (sorted keys); used for hashing
  static ModelSpec from_json(const std::string& s);
};

struct TrainConfig {
  int epochs = 16;
  int batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.9;
  std::vector<int> decay_epochs{12};  // epochs at which lr is multiplied by decay_factor
  double decay_factor = 0.1;
  double clip_norm = 5.0;  // global gradient-norm clip; 0 disables
  std::uint64_t seed = 0;

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& s);
};

struct TrainMeta {
  int epochs = 0;
  std::uint64_t seed = 0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

struct Prediction {
  std::vector<int> classes;
  std::vector<double> scores;  // B x num_classes, raw model outputs
  int num_classes = 0;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
  bool penalized = false;  // weights yes, biases no
};

class TrainedModel {
 public:
  TrainedModel() = default;
  TrainedModel(ModelSpec spec, std::vector<NamedParam> params, TrainMeta meta);

  const ModelSpec& spec() const { return spec_; }
  const TrainMeta& meta() const { return meta_; }
  const std::vector<NamedParam>& parameters() const { return params_; }
  std::vector<NamedParam>& mutable_parameters() { return params_; }
  void set_meta(const TrainMeta& m) { meta_ = m; }

  // Content hash over spec + parameter values; changes whenever either does.
  std::string id() const;

  // Builds the graph on `tape`. With param_grads the stored parameters are
  // bound directly (training); otherwise detached copies are bound so
  // backward passes only chase input gradients (attacks).
  Tensor forward(Tape* tape, const Tensor& images, bool param_grads) const;

  // The model's own training loss: data term for its head plus the
  // configured regularization penalty.
  Tensor training_loss(Tape* tape, const Tensor& images, const std::vector<int>& labels,
                       bool param_grads) const;

  // argmax of raw scores, ties to the lowest index
  Prediction predict(const Tensor& images) const;
  Prediction predict_split(const DatasetSplit& split, int batch_size = 128) const;

  double penalty_value() const;  // sum |w| or sum w^2 over penalized params

 private:
  void check_input(const Tensor& images) const;
  ModelSpec spec_;
  std::vector<NamedParam> params_;
  TrainMeta meta_;
};

// Deterministic He-style initialization from the seed.
TrainedModel build(const ModelSpec& spec, std::uint64_t seed);

// SGD with momentum and step decay. Bitwise reproducible for identical
// (spec, dataset, cfg, seed) within one build.
TrainedModel train(TrainedModel model, const DatasetSplit& train_split,
                   const DatasetSplit& test_split, const TrainConfig& cfg);

// Swaps the head for a freshly initialized linear layer trained with the
// multiclass hinge loss, then retrains the whole network.
TrainedModel replace_head_svm(const TrainedModel& model, const DatasetSplit& train_split,
                              const DatasetSplit& test_split, const TrainConfig& cfg);

double accuracy(const TrainedModel& model, const DatasetSplit& split);

// .aemodel container; bit-exact round trip
void save_model(const TrainedModel& model, const std::string& path);
TrainedModel load_model(const std::string& path);

}  // namespace aelab
