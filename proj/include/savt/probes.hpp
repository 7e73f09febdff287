#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "savt/tensor.hpp"
#include "savt/vit.hpp"

namespace savt {

enum class ProbeTask { kClassification, kDenseSeg, kDenseDepth };

struct ProbeHyper {
  double lr = 1e-3;
  std::size_t iters = 2000;
  std::size_t batch = 64;
  std::uint64_t seed = 0;
  std::vector<double> lr_grid;  // when nonempty, the best-by-eval member wins
};

struct ProbeReport {
  ProbeTask task = ProbeTask::kClassification;
  std::size_t iters = 0;
  double lr = 0.0;
  std::vector<double> loss_curve;  // one entry per SGD step
  double metric = 0.0;             // top-1, mean per-class IoU, or RMSE
  std::string metric_name;
};

// Minibatch SGD on frozen features. Classification and dense segmentation
// train a softmax linear head under cross-entropy (the dense head is preceded
// by a trained affine batch norm, momentum 0.1); depth trains a linear
// regressor under squared error. Targets are class ids (integral, >= 0) for
// the first two tasks and strictly positive depths for the third. The eval
// set defaults to the training set when none is given.
ProbeReport train_linear_probe(const Tensor& features, const Tensor& targets, ProbeTask task,
                               const ProbeHyper& hyper,
                               const Tensor* eval_features = nullptr,
                               const Tensor* eval_targets = nullptr);

// Dense probe per layer on that layer's post-block patch tokens, optionally
// with the same layer's CLS feature appended to every patch row.
std::vector<ProbeReport> layer_sweep(const std::vector<LayerFeatures>& batch,
                                     const Tensor& patch_targets, bool concat_cls,
                                     const ProbeHyper& hyper);

std::vector<ProbeReport> layer_sweep(const VitModel& model, const std::vector<Tensor>& images,
                                     const Tensor& patch_targets, bool concat_cls,
                                     const ProbeHyper& hyper);

// Patch rows of one layer across a batch, optionally CLS-concatenated:
// [n_images * n_patches x d or 2d]. Register tokens are excluded.
Tensor stack_layer_patches(const std::vector<LayerFeatures>& batch, std::size_t layer,
                           bool concat_cls);

std::string probe_task_name(ProbeTask task);
ProbeTask probe_task_from_name(const std::string& name);

}  // namespace savt
