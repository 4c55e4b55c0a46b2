#pragma once

#include <memory>
#include <string>
#include <vector>

#include "aelab/nn.hpp"

namespace aelab {

// Fixed-weight ensemble: prediction averages the sub-models' weighted
// classification scores; the attack-facing gradient is the plain sum of the
// sub-models' input gradients. Never retrained.
class EnsembleModel {
 public:
  EnsembleModel() = default;
  EnsembleModel(std::vector<std::shared_ptr<const TrainedModel>> submodels,
                std::vector<double> weights);

  const std::vector<std::shared_ptr<const TrainedModel>>& submodels() const {
    return submodels_;
  }
  const std::vector<double>& weights() const { return weights_; }
  int size() const { return static_cast<int>(submodels_.size()); }
  int num_classes() const;
  std::array<int, 3> input_shape() const;
  // softmax heads are averaged as probabilities, svm heads as raw margins;
  // mixing the two works but is flagged because the scales differ
  bool mixed_heads() const;

  // Order-insensitive over sub-models: hash of the sorted (id, weight) list.
  std::string id() const;

  // scores = sum_k weight_k * scores_k / K; class = argmax, ties to lowest
  Prediction predict(const Tensor& images) const;

  // sum_k d(loss_k)/d(image), each loss_k the sub-model's own training-loss
  // form. Reduced in sorted-id order so the result is deterministic no matter
  // how sub-models were listed.
  Tensor loss_gradient_wrt_input(const Tensor& image, int label) const;

 private:
  std::vector<std::shared_ptr<const TrainedModel>> submodels_;
  std::vector<double> weights_;
};

// |intersection of sub-model id sets| (set semantics: duplicates count once)
int shared_submodel_count(const EnsembleModel& a, const EnsembleModel& b);

// manifest JSON: {"ensemble_id":..., "submodels":[{"id":..., "weight":...}]}
std::string ensemble_manifest_json(const EnsembleModel& ens);

}  // namespace aelab
