#include "savt/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "savt/ops.hpp"
#include "savt/rng.hpp"

namespace savt {

namespace {

struct BatchNormState {
  Tensor gamma, beta;          // trained
  Tensor running_mean, running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  explicit BatchNormState(std::size_t d)
      : gamma(Tensor::full({d}, 1.0)),
        beta(Tensor({d})),
        running_mean(Tensor({d})),
        running_var(Tensor::full({d}, 1.0)) {}
};

std::vector<std::int64_t> class_targets(const Tensor& targets, const char* task) {
  std::vector<std::int64_t> out(targets.numel());
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    const double v = targets[i];
    if (!(v >= 0.0) || v != std::floor(v)) {
      throw ValidationError(std::string(task) + ": targets must be nonnegative integers, got " +
                            std::to_string(v) + " at index " + std::to_string(i));
    }
    out[i] = static_cast<std::int64_t>(v);
  }
  return out;
}

double mean_iou(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& truth,
                std::size_t n_classes) {
  std::vector<double> inter(n_classes, 0.0), uni(n_classes, 0.0);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == truth[i]) {
      inter[pred[i]] += 1.0;
      uni[pred[i]] += 1.0;
    } else {
      uni[pred[i]] += 1.0;
      uni[truth[i]] += 1.0;
    }
  }
  double total = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (uni[c] > 0.0) {
      total += inter[c] / uni[c];
      ++counted;
    }
  }
  return counted == 0 ? 0.0 : total / static_cast<double>(counted);
}

// One classification/dense-seg training run. The batch-norm layer (dense seg
// only) normalizes with batch statistics during training and running
// statistics at eval; its gamma/beta train alongside the linear head.
ProbeReport train_classifier(const Tensor& features, const std::vector<std::int64_t>& labels,
                             ProbeTask task, double lr, const ProbeHyper& hyper,
                             const Tensor& eval_features,
                             const std::vector<std::int64_t>& eval_labels) {
  const std::size_t n = features.extent(0), d = features.extent(1);
  const bool use_bn = task == ProbeTask::kDenseSeg;
  std::size_t n_classes = 0;
  for (std::int64_t c : labels) n_classes = std::max<std::size_t>(n_classes, c + 1);
  for (std::int64_t c : eval_labels) n_classes = std::max<std::size_t>(n_classes, c + 1);

  Tensor w({d, n_classes});
  Tensor b({n_classes});
  BatchNormState bn(d);
  Rng rng(hyper.seed);

  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  std::size_t cursor = n;  // forces a shuffle before the first batch

  ProbeReport report;
  report.task = task;
  report.lr = lr;
  report.iters = hyper.iters;
  report.metric_name = use_bn ? "miou" : "top1";

  const std::size_t batch = std::min<std::size_t>(std::max<std::size_t>(hyper.batch, 1), n);
  std::vector<double> xb(batch * d), xhat(use_bn ? batch * d : 0), hb(batch * d);
  std::vector<double> probs(batch * n_classes), dlogits(batch * n_classes);
  std::vector<std::int64_t> yb(batch);

  for (std::size_t step = 0; step < hyper.iters; ++step) {
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == n) {
        rng.shuffle(indices);
        cursor = 0;
      }
      const std::size_t row = indices[cursor++];
      std::copy(features.data() + row * d, features.data() + (row + 1) * d, xb.begin() + i * d);
      yb[i] = labels[row];
    }

    if (use_bn) {
      for (std::size_t c = 0; c < d; ++c) {
        double mean = 0.0;
        for (std::size_t i = 0; i < batch; ++i) mean += xb[i * d + c];
        mean /= static_cast<double>(batch);
        double var = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
          const double dv = xb[i * d + c] - mean;
          var += dv * dv;
        }
        var /= static_cast<double>(batch);
        bn.running_mean[c] = (1.0 - bn.momentum) * bn.running_mean[c] + bn.momentum * mean;
        bn.running_var[c] = (1.0 - bn.momentum) * bn.running_var[c] + bn.momentum * var;
        const double inv = 1.0 / std::sqrt(var + bn.eps);
        for (std::size_t i = 0; i < batch; ++i) {
          xhat[i * d + c] = (xb[i * d + c] - mean) * inv;
          hb[i * d + c] = bn.gamma[c] * xhat[i * d + c] + bn.beta[c];
        }
      }
    } else {
      hb = xb;
    }

    // forward: logits = h W + b, softmax cross-entropy
    double loss = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      double* p = probs.data() + i * n_classes;
      for (std::size_t c = 0; c < n_classes; ++c) {
        double acc = b[c];
        for (std::size_t t = 0; t < d; ++t) acc += hb[i * d + t] * w(t, c);
        p[c] = acc;
      }
      double zmax = p[0];
      for (std::size_t c = 1; c < n_classes; ++c) zmax = std::max(zmax, p[c]);
      double total = 0.0;
      for (std::size_t c = 0; c < n_classes; ++c) {
        p[c] = std::exp(p[c] - zmax);
        total += p[c];
      }
      for (std::size_t c = 0; c < n_classes; ++c) p[c] /= total;
      loss -= std::log(std::max(p[yb[i]], 1e-300));
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      throw NumericError("linear probe diverged at step " + std::to_string(step) + " with lr " +
                         std::to_string(lr));
    }
    report.loss_curve.push_back(loss);

    // backward. Features are frozen, so only the head (and the bn affine
    // parameters, which batch statistics do not depend on) receive gradients.
    const double inv_batch = 1.0 / static_cast<double>(batch);
    for (std::size_t i = 0; i < batch; ++i) {
      for (std::size_t c = 0; c < n_classes; ++c) {
        const double onehot = yb[i] == static_cast<std::int64_t>(c) ? 1.0 : 0.0;
        dlogits[i * n_classes + c] = (probs[i * n_classes + c] - onehot) * inv_batch;
      }
    }
    if (use_bn) {
      for (std::size_t t = 0; t < d; ++t) {
        double dgamma = 0.0, dbeta = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
          double dh = 0.0;
          for (std::size_t c = 0; c < n_classes; ++c) {
            dh += dlogits[i * n_classes + c] * w(t, c);
          }
          dgamma += dh * xhat[i * d + t];
          dbeta += dh;
        }
        bn.gamma[t] -= lr * dgamma;
        bn.beta[t] -= lr * dbeta;
      }
    }
    for (std::size_t c = 0; c < n_classes; ++c) {
      double db = 0.0;
      for (std::size_t i = 0; i < batch; ++i) db += dlogits[i * n_classes + c];
      b[c] -= lr * db;
    }
    for (std::size_t t = 0; t < d; ++t) {
      for (std::size_t c = 0; c < n_classes; ++c) {
        double dw = 0.0;
        for (std::size_t i = 0; i < batch; ++i) {
          dw += hb[i * d + t] * dlogits[i * n_classes + c];
        }
        w(t, c) -= lr * dw;
      }
    }
  }

  // eval: batch norm switches to running statistics
  const std::size_t n_eval = eval_features.extent(0);
  std::vector<std::int64_t> pred(n_eval);
  for (std::size_t i = 0; i < n_eval; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
      double acc = b[c];
      for (std::size_t t = 0; t < d; ++t) {
        double h = eval_features(i, t);
        if (use_bn) {
          h = bn.gamma[t] * ((h - bn.running_mean[t]) / std::sqrt(bn.running_var[t] + bn.eps)) +
              bn.beta[t];
        }
        acc += h * w(t, c);
      }
      if (acc > best) {
        best = acc;
        best_c = c;
      }
    }
    pred[i] = static_cast<std::int64_t>(best_c);
  }
  if (use_bn) {
    report.metric = mean_iou(pred, eval_labels, n_classes);
  } else {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n_eval; ++i) correct += pred[i] == eval_labels[i];
    report.metric = static_cast<double>(correct) / static_cast<double>(n_eval);
  }
  return report;
}

ProbeReport train_depth(const Tensor& features, const Tensor& targets, double lr,
                        const ProbeHyper& hyper, const Tensor& eval_features,
                        const Tensor& eval_targets) {
  const std::size_t n = features.extent(0), d = features.extent(1);
  for (std::size_t i = 0; i < targets.numel(); ++i) {
    if (!(targets[i] > 0.0)) {
      throw ValidationError("depth probe: depths must be positive, got " +
                            std::to_string(targets[i]) + " at index " + std::to_string(i));
    }
  }
  Tensor w({d});
  double b = 0.0;
  Rng rng(hyper.seed);
  std::vector<std::size_t> indices(n);
  std::iota(indices.begin(), indices.end(), 0);
  std::size_t cursor = n;

  ProbeReport report;
  report.task = ProbeTask::kDenseDepth;
  report.lr = lr;
  report.iters = hyper.iters;
  report.metric_name = "rmse";

  const std::size_t batch = std::min<std::size_t>(std::max<std::size_t>(hyper.batch, 1), n);
  for (std::size_t step = 0; step < hyper.iters; ++step) {
    double loss = 0.0;
    std::vector<double> dw(d, 0.0);
    double db = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
      if (cursor == n) {
        rng.shuffle(indices);
        cursor = 0;
      }
      const std::size_t row = indices[cursor++];
      double pred = b;
      for (std::size_t t = 0; t < d; ++t) pred += features(row, t) * w[t];
      const double err = pred - targets[row];
      loss += err * err;
      for (std::size_t t = 0; t < d; ++t) dw[t] += 2.0 * err * features(row, t);
      db += 2.0 * err;
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) {
      throw NumericError("linear probe diverged at step " + std::to_string(step) + " with lr " +
                         std::to_string(lr));
    }
    report.loss_curve.push_back(loss);
    const double scale = lr / static_cast<double>(batch);
    for (std::size_t t = 0; t < d; ++t) w[t] -= scale * dw[t];
    b -= scale * db;
  }

  double mse = 0.0;
  const std::size_t n_eval = eval_features.extent(0);
  for (std::size_t i = 0; i < n_eval; ++i) {
    double pred = b;
    for (std::size_t t = 0; t < d; ++t) pred += eval_features(i, t) * w[t];
    const double err = pred - eval_targets[i];
    mse += err * err;
  }
  report.metric = std::sqrt(mse / static_cast<double>(n_eval));
  return report;
}

}  // namespace

ProbeReport train_linear_probe(const Tensor& features, const Tensor& targets, ProbeTask task,
                               const ProbeHyper& hyper, const Tensor* eval_features,
                               const Tensor* eval_targets) {
  if (features.rank() != 2 || features.extent(0) == 0) {
    throw ShapeError("linear probe: features must be a nonempty [N x d] matrix, got " +
                     shape_to_string(features.shape()));
  }
  if (targets.numel() != features.extent(0)) {
    throw ShapeError("linear probe: " + std::to_string(targets.numel()) + " targets for " +
                     std::to_string(features.extent(0)) + " feature rows");
  }
  if (!all_finite(features)) throw ValidationError("linear probe: features must be finite");
  if ((eval_features == nullptr) != (eval_targets == nullptr)) {
    throw ValidationError("linear probe: eval features and targets must come together");
  }
  const Tensor& ef = eval_features ? *eval_features : features;
  const Tensor& et = eval_targets ? *eval_targets : targets;
  if (ef.rank() != 2 || ef.extent(1) != features.extent(1) || et.numel() != ef.extent(0)) {
    throw ShapeError("linear probe: eval set shapes are inconsistent");
  }

  std::vector<double> lrs = hyper.lr_grid;
  if (lrs.empty()) lrs.push_back(hyper.lr);

  std::optional<ProbeReport> best;
  for (double lr : lrs) {
    ProbeReport r;
    if (task == ProbeTask::kDenseDepth) {
      r = train_depth(features, targets, lr, hyper, ef, et);
    } else {
      const auto labels = class_targets(targets, "classification probe");
      const auto eval_labels = class_targets(et, "classification probe");
      r = train_classifier(features, labels, task, lr, hyper, ef, eval_labels);
    }
    const bool better =
        !best || (task == ProbeTask::kDenseDepth ? r.metric < best->metric
                                                 : r.metric > best->metric);
    if (better) best = std::move(r);
  }
  return *best;
}

Tensor stack_layer_patches(const std::vector<LayerFeatures>& batch, std::size_t layer,
                           bool concat_cls) {
  if (batch.empty()) throw ValidationError("stack_layer_patches: empty batch");
  const TokenMap tok = batch.front().tokens;
  const std::size_t d = batch.front().config.d_model;
  const std::size_t np = tok.n_patches();
  const std::size_t width = concat_cls ? 2 * d : d;
  Tensor out({batch.size() * np, width});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor& tokens = batch[i].layer(layer);
    for (std::size_t p = 0; p < np; ++p) {
      double* dst = out.data() + (i * np + p) * width;
      const double* src = tokens.data() + (tok.patch_offset() + p) * d;
      std::copy(src, src + d, dst);
      if (concat_cls) std::copy(tokens.data(), tokens.data() + d, dst + d);
    }
  }
  return out;
}

std::vector<ProbeReport> layer_sweep(const std::vector<LayerFeatures>& batch,
                                     const Tensor& patch_targets, bool concat_cls,
                                     const ProbeHyper& hyper) {
  if (batch.empty()) throw ValidationError("layer_sweep: empty batch");
  std::vector<ProbeReport> reports;
  const std::size_t n_layers = batch.front().layers.size();
  for (std::size_t l = 1; l <= n_layers; ++l) {
    const Tensor features = stack_layer_patches(batch, l, concat_cls);
    reports.push_back(train_linear_probe(features, patch_targets, ProbeTask::kDenseSeg, hyper));
  }
  return reports;
}

std::vector<ProbeReport> layer_sweep(const VitModel& model, const std::vector<Tensor>& images,
                                     const Tensor& patch_targets, bool concat_cls,
                                     const ProbeHyper& hyper) {
  std::vector<LayerFeatures> batch;
  batch.reserve(images.size());
  for (const Tensor& img : images) batch.push_back(forward_features(model, img));
  return layer_sweep(batch, patch_targets, concat_cls, hyper);
}

std::string probe_task_name(ProbeTask task) {
  switch (task) {
    case ProbeTask::kClassification:
      return "classification";
    case ProbeTask::kDenseSeg:
      return "dense_seg";
    case ProbeTask::kDenseDepth:
      return "dense_depth";
  }
  return "unknown";
}

ProbeTask probe_task_from_name(const std::string& name) {
  if (name == "classification") return ProbeTask::kClassification;
  if (name == "dense_seg") return ProbeTask::kDenseSeg;
  if (name == "dense_depth") return ProbeTask::kDenseDepth;
  throw ValidationError("unknown probe task '" + name + "'");
}

}  // namespace savt
