#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "savt/probes.hpp"
#include "savt/rng.hpp"
#include "savt/synthetic.hpp"

using namespace savt;

namespace {

ProbeHyper quick_hyper(double lr, std::size_t iters, std::uint64_t seed = 0) {
  ProbeHyper h;
  h.lr = lr;
  h.iters = iters;
  h.batch = 32;
  h.seed = seed;
  return h;
}

}  // namespace

TEST_CASE("separable blobs reach 99% top-1") {
  Rng rng(41);
  const std::size_t n = 200, d = 8;
  Tensor feats({n, d}), targets({n});
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = i % 2;
    targets[i] = cls;
    for (std::size_t j = 0; j < d; ++j) {
      feats(i, j) = rng.normal() * 0.5 + (cls == 0 ? -1.5 : 1.5);
    }
  }
  const ProbeReport r = train_linear_probe(feats, targets, ProbeTask::kClassification,
                                           quick_hyper(0.1, 2000));
  CHECK(r.metric >= 0.99);
  CHECK(r.metric_name == "top1");
  CHECK(r.loss_curve.size() == 2000);
  CHECK(r.loss_curve.back() < r.loss_curve.front());
}

TEST_CASE("zero-variance features predict the majority class") {
  const std::size_t n = 90;
  Tensor feats = Tensor::full({n, 4}, 1.0);
  Tensor targets({n});
  for (std::size_t i = 0; i < n; ++i) targets[i] = i < 60 ? 0.0 : 1.0;  // 2/3 majority
  const ProbeReport r = train_linear_probe(feats, targets, ProbeTask::kClassification,
                                           quick_hyper(0.1, 1500));
  CHECK(r.metric == doctest::Approx(60.0 / 90.0));
}

TEST_CASE("exact-linear depth targets reach near-zero RMSE") {
  Rng rng(42);
  const std::size_t n = 256, d = 8;
  Tensor feats({n, d}), targets({n});
  std::vector<double> w_star(d);
  for (double& w : w_star) w = 0.1 + 0.4 * rng.uniform();
  for (std::size_t i = 0; i < n; ++i) {
    double y = 10.0;
    for (std::size_t j = 0; j < d; ++j) {
      feats(i, j) = rng.normal();
      y += w_star[j] * feats(i, j);
    }
    targets[i] = y;
  }
  ProbeHyper h = quick_hyper(0.05, 4000);
  h.batch = 64;
  const ProbeReport r = train_linear_probe(feats, targets, ProbeTask::kDenseDepth, h);
  CHECK(r.metric < 1e-3);
  CHECK(r.metric_name == "rmse");
}

TEST_CASE("probe input validation") {
  Tensor feats = Tensor::full({10, 3}, 0.5);
  Tensor bad_class({10});
  bad_class[3] = 1.5;  // not an integer
  CHECK_THROWS_AS(
      train_linear_probe(feats, bad_class, ProbeTask::kClassification, quick_hyper(0.1, 10)),
      ValidationError);

  Tensor bad_depth = Tensor::full({10}, 1.0);
  bad_depth[7] = -2.0;
  CHECK_THROWS_AS(
      train_linear_probe(feats, bad_depth, ProbeTask::kDenseDepth, quick_hyper(0.1, 10)),
      ValidationError);

  CHECK_THROWS_AS(
      train_linear_probe(feats, Tensor({4}), ProbeTask::kClassification, quick_hyper(0.1, 10)),
      ShapeError);
}

TEST_CASE("divergence reports the step and learning rate") {
  Rng rng(43);
  Tensor feats({32, 4}), targets({32});
  for (std::size_t i = 0; i < feats.numel(); ++i) feats[i] = rng.normal() * 100.0;
  for (std::size_t i = 0; i < 32; ++i) targets[i] = 1.0 + rng.uniform();
  try {
    train_linear_probe(feats, targets, ProbeTask::kDenseDepth, quick_hyper(1e6, 200));
    CHECK(false);
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step") != std::string::npos);
    CHECK(msg.find("lr") != std::string::npos);
  }
}

TEST_CASE("lr grid returns the best member by eval metric") {
  Rng rng(44);
  const std::size_t n = 128, d = 6;
  Tensor feats({n, d}), targets({n});
  std::vector<double> w_star(d, 0.3);
  for (std::size_t i = 0; i < n; ++i) {
    double y = 8.0;
    for (std::size_t j = 0; j < d; ++j) {
      feats(i, j) = rng.normal();
      y += w_star[j] * feats(i, j);
    }
    targets[i] = y;
  }
  ProbeHyper h = quick_hyper(0.0, 1500);
  h.lr_grid = {1e-9, 0.05};  // the tiny lr barely moves off initialization
  const ProbeReport r = train_linear_probe(feats, targets, ProbeTask::kDenseDepth, h);
  CHECK(r.lr == 0.05);
  CHECK(r.metric < 0.1);
}

TEST_CASE("dense probe trains its batch norm and improves") {
  Rng rng(45);
  const std::size_t n = 192, d = 9, classes = 3;
  Tensor feats({n, d}), targets({n});
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t cls = i % classes;
    targets[i] = static_cast<double>(cls);
    for (std::size_t j = 0; j < d; ++j) {
      feats(i, j) = rng.normal() + (j % classes == cls ? 20.0 : 0.0);  // large scale for bn
    }
  }
  ProbeHyper h = quick_hyper(0.05, 600);
  h.batch = 64;
  const ProbeReport r = train_linear_probe(feats, targets, ProbeTask::kDenseSeg, h);
  CHECK(r.metric_name == "miou");
  CHECK(r.metric > 0.9);
  const std::size_t steps_per_epoch = n / h.batch;
  double first = 0.0, last = 0.0;
  for (std::size_t s = 0; s < steps_per_epoch; ++s) {
    first += r.loss_curve[s];
    last += r.loss_curve[r.loss_curve.size() - steps_per_epoch + s];
  }
  CHECK(last < first);
}

TEST_CASE("explicit eval sets are honored") {
  Rng rng(46);
  Tensor train({64, 4}), train_y({64});
  Tensor eval = Tensor::full({8, 4}, 0.0);
  Tensor eval_y({8});
  for (std::size_t i = 0; i < 64; ++i) {
    const int cls = i % 2;
    train_y[i] = cls;
    for (std::size_t j = 0; j < 4; ++j) train(i, j) = (cls ? 2.0 : -2.0) + 0.2 * rng.normal();
  }
  for (std::size_t i = 0; i < 8; ++i) {
    const int cls = i % 2;
    eval_y[i] = cls;
    for (std::size_t j = 0; j < 4; ++j) eval(i, j) = (cls ? 2.0 : -2.0);
  }
  const ProbeReport r = train_linear_probe(train, train_y, ProbeTask::kClassification,
                                           quick_hyper(0.2, 600), &eval, &eval_y);
  CHECK(r.metric == 1.0);
}

TEST_CASE("layer sweep shapes") {
  const VitConfig cfg = VitConfig::tiny();
  Rng rng(47);
  const VitModel m = init_model(cfg, rng);
  SyntheticConfig scfg;
  scfg.seed = 5;
  scfg.n_images = 6;
  const auto dataset = make_synthetic_dataset(scfg);

  std::vector<LayerFeatures> batch;
  Tensor targets({dataset.size() * cfg.n_patches()});
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    batch.push_back(forward_features(m, dataset[i].image));
    for (std::size_t p = 0; p < cfg.n_patches(); ++p) {
      targets[i * cfg.n_patches() + p] = dataset[i].patch_labels[p];
    }
  }

  // width doubles with concat_cls
  CHECK(stack_layer_patches(batch, 1, false).extent(1) == cfg.d_model);
  CHECK(stack_layer_patches(batch, 1, true).extent(1) == 2 * cfg.d_model);

  const auto reports = layer_sweep(batch, targets, false, quick_hyper(0.1, 60));
  CHECK(reports.size() == cfg.n_layers);

  // single-layer model gives a single-entry sweep
  VitConfig one = cfg;
  one.n_layers = 1;
  Rng rng2(48);
  const VitModel m1 = init_model(one, rng2);
  std::vector<LayerFeatures> batch1{forward_features(m1, dataset[0].image)};
  Tensor t1({one.n_patches()});
  for (std::size_t p = 0; p < one.n_patches(); ++p) t1[p] = dataset[0].patch_labels[p];
  CHECK(layer_sweep(batch1, t1, false, quick_hyper(0.1, 40)).size() == 1);
}

TEST_CASE("global-bit task: CLS concat strictly beats patch-only") {
  Rng rng(49);
  const VitModel m = init_model(VitConfig::tiny(NormalizerKind::kEntmax15), rng);
  SyntheticConfig scfg;
  scfg.seed = 11;
  scfg.n_images = 16;
  const auto dataset = make_synthetic_dataset(scfg);
  const GlobalBitTask task = make_global_bit_task(m, dataset, 77);

  CHECK(task.features.size() == 16);
  CHECK(task.bits.size() == 16);

  ProbeHyper h = quick_hyper(0.2, 500);
  h.batch = 64;
  const auto patch_only = layer_sweep(task.features, task.patch_labels, false, h);
  const auto with_cls = layer_sweep(task.features, task.patch_labels, true, h);
  REQUIRE(patch_only.size() == with_cls.size());
  for (std::size_t l = 0; l < patch_only.size(); ++l) {
    CHECK(with_cls[l].metric > patch_only[l].metric);
  }
}

TEST_CASE("synthetic dataset structure") {
  SyntheticConfig cfg;
  cfg.seed = 3;
  cfg.n_images = 5;
  const auto samples = make_synthetic_dataset(cfg);
  REQUIRE(samples.size() == 5);
  for (const SyntheticSample& s : samples) {
    CHECK(s.image.shape() == std::vector<std::size_t>{32, 32, 3});
    s.box.validate(32);
    bool has_fg = false, has_bg = false;
    for (std::size_t p = 0; p < s.patch_labels.numel(); ++p) {
      CHECK(s.patch_depth[p] > 0.0);
      has_fg = has_fg || s.patch_labels[p] > 0.0;
      has_bg = has_bg || s.patch_labels[p] == 0.0;
    }
    CHECK(has_fg);
    CHECK(has_bg);
  }
  // deterministic in the seed
  const auto again = make_synthetic_dataset(cfg);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(samples[i].image.flat() == again[i].image.flat());
    CHECK(samples[i].image_label == again[i].image_label);
  }
}
