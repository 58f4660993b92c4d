#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "flowpool/graphs.hpp"
#include "flowpool/implicit.hpp"

namespace flowpool {

enum class PoolingKind { FlowPool, SortPool };

// Trainable state of the classifier: SGC projection, logistic weights with a
// bias row, and the fixed (non-trainable) pooling reference.
struct ModelParams {
  Matrix W;      // kinds x d
  Matrix w_clf;  // (M*d + 1) x classes, last row is the bias
  Matrix X0;     // M x d, identical across the whole run
};

struct TrainConfig {
  int batch_size = 32;
  double learning_rate = 0.01;
  int max_epochs = 300;
  int patience = 20;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  int threads = 0;             // 0 = hardware concurrency
  double max_skip_rate = 0.01; // abort when more training samples fail the flow
};

// Stratified k-fold splitter: test folds partition the indices with class
// proportions within one sample of global; a stratified tenth of each
// training pool is held out for early stopping. Returns (train, val, test).
std::vector<std::array<std::vector<int>, 3>> stratified_kfold(
    const std::vector<int>& labels, int k, std::uint64_t seed);

struct ForwardCache {
  Matrix H;       // propagated node features, n x kinds
  Matrix Y;       // H * W, n x d
  Matrix x_star;  // pooled representation
  std::vector<Eigen::Index> sortpool_rows;  // source row per kept row
  Vector z;       // row-major flatten of x_star
  Vector logits;
  bool fixed_point = true;  // flow reached grad_tol (FlowPool only)
};

// logits = w_clf^T [flatten(pool(sgc(g) W)); 1].
std::pair<Vector, ForwardCache> forward(const LabeledGraph& g,
                                        const ModelParams& params,
                                        const FlowParams& flow,
                                        PoolingKind pooling);

struct BatchGradients {
  Matrix dW;
  Matrix dw_clf;
  double loss = 0.0;  // mean cross-entropy over the used samples
  int used = 0;
  int skipped = 0;
};

// Mean cross-entropy gradient over a batch. The classifier part is exact;
// the W part flows through the pooling backward (implicit VJP for FlowPool,
// row routing for SortPool). Samples whose flow failed or did not reach a
// fixed point are skipped and counted.
BatchGradients backward(const std::vector<const LabeledGraph*>& batch,
                        const ModelParams& params, const FlowParams& flow,
                        const ImplicitDiffParams& idp, PoolingKind pooling,
                        int threads = 0);

struct FoldResult {
  int fold = 0;
  double test_accuracy = 0.0;
  int epochs_ran = 0;
  double best_val_loss = 0.0;
};

struct CvReport {
  std::string dataset;
  std::string pooling;
  std::vector<FoldResult> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  int skipped_total = 0;
  // effective configuration, echoed into every serialization
  TrainConfig config;
  FlowParams flow;
  ImplicitDiffParams idp;
  int pooled_points = 0;   // M
  int feature_dim = 0;     // d
  int k_folds = 0;
  std::string x0_digest;
  std::string git_revision;

  std::string to_json(int indent = 2) const;
};

// Per fold: Adam on the training split, early stopping on validation loss,
// best-validation weights restored, accuracy on the held-out test fold.
CvReport train_eval_cv(const GraphDataset& ds, const TrainConfig& config,
                       const FlowParams& flow, const ImplicitDiffParams& idp,
                       PoolingKind pooling, int pooled_points, int feature_dim,
                       int k_folds = 10);

// FNV-1a over the row-major byte image; pins the reference in run manifests.
std::string matrix_digest(const Matrix& m);

}  // namespace flowpool
