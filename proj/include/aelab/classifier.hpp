#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "aelab/ensemble.hpp"
#include "aelab/nn.hpp"

namespace aelab {

// What an attack needs from a target, whether it is a single model or an
// ensemble. Call counters exist so tests can pin down exactly which gradient
// path an attack consumed.
class Classifier {
 public:
  struct CallCounts {
    int loss_gradient = 0;
    int score_gradients = 0;
  };
  struct ScoreGrads {
    std::vector<double> scores;  // raw linearization scores, one per class
    std::vector<Tensor> grads;   // d(score_c)/d(image), one per class
  };

  virtual ~Classifier() = default;

  virtual std::string id() const = 0;
  virtual int num_classes() const = 0;
  virtual std::array<int, 3> input_shape() const = 0;

  // classification semantics (ensembles: weighted average per Fig. 1)
  virtual std::vector<int> predict_classes(const Tensor& images) const = 0;
  int predict_class(const Tensor& image) const;

  // d(training loss)/d(image); ensembles sum over sub-models
  virtual Tensor loss_gradient(const Tensor& image, int label) const = 0;

  // raw class scores and their input gradients, the DeepFool linearization
  // surface; ensembles sum both over sub-models
  virtual ScoreGrads score_gradients(const Tensor& image) const = 0;

  const CallCounts& call_counts() const { return counts_; }
  void reset_call_counts() { counts_ = {}; }

 protected:
  mutable CallCounts counts_;
};

class ModelClassifier final : public Classifier {
 public:
  explicit ModelClassifier(std::shared_ptr<const TrainedModel> model);
  std::string id() const override;
  int num_classes() const override;
  std::array<int, 3> input_shape() const override;
  std::vector<int> predict_classes(const Tensor& images) const override;
  Tensor loss_gradient(const Tensor& image, int label) const override;
  ScoreGrads score_gradients(const Tensor& image) const override;
  const TrainedModel& model() const { return *model_; }

 private:
  std::shared_ptr<const TrainedModel> model_;
};

class EnsembleClassifier final : public Classifier {
 public:
  explicit EnsembleClassifier(EnsembleModel ensemble);
  std::string id() const override;
  int num_classes() const override;
  std::array<int, 3> input_shape() const override;
  std::vector<int> predict_classes(const Tensor& images) const override;
  Tensor loss_gradient(const Tensor& image, int label) const override;
  ScoreGrads score_gradients(const Tensor& image) const override;
  const EnsembleModel& ensemble() const { return ensemble_; }

 private:
  EnsembleModel ensemble_;
};

}  // namespace aelab
