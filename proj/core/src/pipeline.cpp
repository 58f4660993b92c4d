#include "flowpool/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "flowpool/rng.hpp"

#ifndef FLOWPOOL_GIT_REVISION
#define FLOWPOOL_GIT_REVISION "unknown"
#endif

namespace flowpool {

namespace {

using nlohmann::json;

Vector flatten_rowmajor(const Matrix& m) {
  Vector out(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out(k++) = m(i, j);
  return out;
}

Matrix unflatten_rowmajor(const Vector& v, Eigen::Index rows, Eigen::Index cols) {
  Matrix out(rows, cols);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) out(i, j) = v(k++);
  return out;
}

Vector softmax(const Vector& logits) {
  const Vector shifted = logits.array() - logits.maxCoeff();
  Vector p = shifted.array().exp();
  return p / p.sum();
}

double cross_entropy(const Vector& logits, int label) {
  const Vector shifted = logits.array() - logits.maxCoeff();
  const double lse = std::log(shifted.array().exp().sum());
  return lse - shifted(label);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ull * (a + 1) + 0xbf58476d1ce4e5b9ull * (b + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

struct Adam {
  double lr, beta1, beta2, eps;
  Matrix mW, vW, mC, vC;
  int t = 0;

  Adam(const TrainConfig& cfg, const ModelParams& p)
      : lr(cfg.learning_rate),
        beta1(cfg.adam_beta1),
        beta2(cfg.adam_beta2),
        eps(cfg.adam_eps),
        mW(Matrix::Zero(p.W.rows(), p.W.cols())),
        vW(Matrix::Zero(p.W.rows(), p.W.cols())),
        mC(Matrix::Zero(p.w_clf.rows(), p.w_clf.cols())),
        vC(Matrix::Zero(p.w_clf.rows(), p.w_clf.cols())) {}

  void step_one(Matrix& w, Matrix& m, Matrix& v, const Matrix& g) {
    m = beta1 * m + (1.0 - beta1) * g;
    v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    w.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
  }

  void step(ModelParams& p, const Matrix& dW, const Matrix& dC) {
    ++t;
    step_one(p.W, mW, vW, dW);
    step_one(p.w_clf, mC, vC, dC);
  }
};

Matrix glorot_uniform(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  rng::Generator gen(seed);
  Matrix out(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out(i, j) = limit * (2.0 * gen.uniform() - 1.0);
  return out;
}

json params_json(const TrainConfig& c, const FlowParams& f,
                 const ImplicitDiffParams& idp) {
  return json{
      {"batch_size", c.batch_size},
      {"learning_rate", c.learning_rate},
      {"max_epochs", c.max_epochs},
      {"patience", c.patience},
      {"adam", {{"beta1", c.adam_beta1}, {"beta2", c.adam_beta2}, {"eps", c.adam_eps}}},
      {"seed", c.seed},
      {"flow",
       {{"tau", f.tau},
        {"max_steps", f.max_steps},
        {"grad_tol", f.grad_tol},
        {"objective", f.objective == Objective::Divergence ? "divergence" : "loss_only"},
        {"epsilon", f.sinkhorn.epsilon},
        {"sinkhorn_max_iters", f.sinkhorn.max_iters},
        {"sinkhorn_tol", f.sinkhorn.tol}}},
      {"implicit",
       {{"lambda", idp.lambda},
        {"cg_max_iters", idp.cg_max_iters},
        {"cg_tol", idp.cg_tol}}},
  };
}

// Per-sample backward result, accumulated in index order.
struct SampleWork {
  Matrix dW;
  Matrix dw_clf;
  double loss = 0.0;
  bool used = false;
};

}  // namespace

std::string matrix_digest(const Matrix& m) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  auto feed = [&h](const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 0x100000001b3ull;
    }
  };
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      const double x = m(i, j);
      feed(&x, sizeof(x));
    }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

std::vector<std::array<std::vector<int>, 3>> stratified_kfold(
    const std::vector<int>& labels, int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_kfold: need k >= 2");
  const int num_classes =
      labels.empty() ? 0 : *std::max_element(labels.begin(), labels.end()) + 1;
  std::vector<std::vector<int>> by_class(num_classes);
  for (std::size_t i = 0; i < labels.size(); ++i)
    by_class[labels[i]].push_back(static_cast<int>(i));

  rng::Generator gen(seed);
  std::vector<std::vector<int>> test_folds(k);
  for (int c = 0; c < num_classes; ++c) {
    if (static_cast<int>(by_class[c].size()) < k)
      throw std::invalid_argument("stratified_kfold: class " + std::to_string(c) +
                                  " has fewer than k members");
    rng::shuffle(by_class[c], gen);
    for (std::size_t i = 0; i < by_class[c].size(); ++i)
      test_folds[i % k].push_back(by_class[c][i]);
  }

  std::vector<std::array<std::vector<int>, 3>> out(k);
  for (int f = 0; f < k; ++f) {
    out[f][2] = test_folds[f];
    std::vector<std::vector<int>> pool_by_class(num_classes);
    for (int g = 0; g < k; ++g) {
      if (g == f) continue;
      for (int idx : test_folds[g]) pool_by_class[labels[idx]].push_back(idx);
    }
    for (int c = 0; c < num_classes; ++c) {
      rng::Generator vgen(mix_seed(seed, f, c));
      rng::shuffle(pool_by_class[c], vgen);
      const std::size_t val_count =
          std::max<std::size_t>(1, pool_by_class[c].size() / 10);
      for (std::size_t i = 0; i < pool_by_class[c].size(); ++i)
        out[f][i < val_count ? 1 : 0].push_back(pool_by_class[c][i]);
    }
    std::sort(out[f][0].begin(), out[f][0].end());
    std::sort(out[f][1].begin(), out[f][1].end());
    std::sort(out[f][2].begin(), out[f][2].end());
  }
  return out;
}

std::pair<Vector, ForwardCache> forward(const LabeledGraph& g,
                                        const ModelParams& params,
                                        const FlowParams& flow,
                                        PoolingKind pooling) {
  constexpr int kSgcPower = 2;
  ForwardCache cache;
  const int kinds = static_cast<int>(params.W.rows());
  cache.H = sgc_propagate(g, one_hot_features(g, kinds), kSgcPower);
  cache.Y = cache.H * params.W;
  const Eigen::Index m = params.X0.rows();
  const Eigen::Index d = params.X0.cols();

  if (pooling == PoolingKind::FlowPool) {
    FlowResult res = pool(cache.Y, params.X0, flow);
    cache.x_star = std::move(res.x_star);
    cache.fixed_point = res.converged;
  } else {
    const Eigen::Index n = cache.Y.rows();
    const Eigen::Index last = cache.Y.cols() - 1;
    std::vector<Eigen::Index> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                       return cache.Y(a, last) > cache.Y(b, last);
                     });
    cache.x_star = Matrix::Zero(m, d);
    cache.sortpool_rows.assign(m, -1);
    for (Eigen::Index i = 0; i < std::min<Eigen::Index>(m, n); ++i) {
      cache.x_star.row(i) = cache.Y.row(order[i]);
      cache.sortpool_rows[i] = order[i];
    }
  }

  cache.z = flatten_rowmajor(cache.x_star);
  Vector zb(cache.z.size() + 1);
  zb << cache.z, 1.0;
  cache.logits = params.w_clf.transpose() * zb;
  return {cache.logits, cache};
}

BatchGradients backward(const std::vector<const LabeledGraph*>& batch,
                        const ModelParams& params, const FlowParams& flow,
                        const ImplicitDiffParams& idp, PoolingKind pooling,
                        int threads) {
  BatchGradients out;
  out.dW = Matrix::Zero(params.W.rows(), params.W.cols());
  out.dw_clf = Matrix::Zero(params.w_clf.rows(), params.w_clf.cols());
  if (batch.empty()) return out;

  std::vector<SampleWork> work(batch.size());
  std::vector<std::string> errors(batch.size());

  auto run_one = [&](std::size_t i) {
    const LabeledGraph& g = *batch[i];
    auto [logits, cache] = forward(g, params, flow, pooling);
    if (pooling == PoolingKind::FlowPool && !cache.fixed_point) return;  // skip

    const Vector p = softmax(logits);
    Vector dlogits = p;
    dlogits(g.class_label) -= 1.0;

    SampleWork& w = work[i];
    Vector zb(cache.z.size() + 1);
    zb << cache.z, 1.0;
    w.dw_clf = zb * dlogits.transpose();

    const Vector dz =
        (params.w_clf.topRows(cache.z.size()) * dlogits).eval();
    const Matrix v =
        unflatten_rowmajor(dz, cache.x_star.rows(), cache.x_star.cols());

    Matrix dY;
    if (pooling == PoolingKind::FlowPool) {
      dY = implicit_vjp(cache.x_star, cache.Y, v, CostSpec::squared_euclidean(),
                        flow.sinkhorn, idp, flow.objective);
    } else {
      dY = Matrix::Zero(cache.Y.rows(), cache.Y.cols());
      for (std::size_t r = 0; r < cache.sortpool_rows.size(); ++r)
        if (cache.sortpool_rows[r] >= 0)
          dY.row(cache.sortpool_rows[r]) += v.row(static_cast<Eigen::Index>(r));
    }
    w.dW = cache.H.transpose() * dY;
    w.loss = cross_entropy(logits, g.class_label);
    w.used = true;
  };

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(batch.size())));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < batch.size(); i = next.fetch_add(1)) {
      try {
        run_one(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < batch.size(); ++i)
    if (!errors[i].empty())
      throw std::runtime_error("backward: graph " + std::to_string(i) + ": " +
                               errors[i]);

  for (const SampleWork& w : work) {
    if (!w.used) {
      ++out.skipped;
      continue;
    }
    out.dW += w.dW;
    out.dw_clf += w.dw_clf;
    out.loss += w.loss;
    ++out.used;
  }
  if (out.used > 0) {
    out.dW /= out.used;
    out.dw_clf /= out.used;
    out.loss /= out.used;
  }
  return out;
}

namespace {

struct EvalStats {
  double loss = 0.0;
  int correct = 0;
  int used = 0;
  int skipped = 0;
};

EvalStats evaluate(const GraphDataset& ds, const std::vector<int>& indices,
                   const ModelParams& params, const FlowParams& flow,
                   PoolingKind pooling, int threads) {
  EvalStats stats;
  std::vector<double> losses(indices.size(), -1.0);
  std::vector<int> corrects(indices.size(), 0);
  std::vector<std::string> errors(indices.size());

  if (threads <= 0) threads = static_cast<int>(std::thread::hardware_concurrency());
  threads = std::max(1, std::min<int>(threads, static_cast<int>(std::max<std::size_t>(1, indices.size()))));
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < indices.size(); i = next.fetch_add(1)) {
      try {
        const LabeledGraph& g = ds.graphs[indices[i]];
        auto [logits, cache] = forward(g, params, flow, pooling);
        losses[i] = cross_entropy(logits, g.class_label);
        Eigen::Index arg;
        logits.maxCoeff(&arg);
        corrects[i] = (static_cast<int>(arg) == g.class_label) ? 1 : 0;
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (!errors[i].empty() || losses[i] < 0.0) {
      ++stats.skipped;
      continue;
    }
    stats.loss += losses[i];
    stats.correct += corrects[i];
    ++stats.used;
  }
  if (stats.used > 0) stats.loss /= stats.used;
  return stats;
}

}  // namespace

CvReport train_eval_cv(const GraphDataset& ds, const TrainConfig& config,
                       const FlowParams& flow, const ImplicitDiffParams& idp,
                       PoolingKind pooling, int pooled_points, int feature_dim,
                       int k_folds) {
  CvReport report;
  report.dataset = ds.name;
  report.pooling = pooling == PoolingKind::FlowPool ? "flowpool" : "sortpool";
  report.config = config;
  report.flow = flow;
  report.idp = idp;
  report.pooled_points = pooled_points;
  report.feature_dim = feature_dim;
  report.k_folds = k_folds;
  report.git_revision = FLOWPOOL_GIT_REVISION;

  std::vector<int> labels(ds.graphs.size());
  for (std::size_t i = 0; i < ds.graphs.size(); ++i)
    labels[i] = ds.graphs[i].class_label;
  const auto folds = stratified_kfold(labels, k_folds, config.seed);

  const Matrix X0 = init_reference(pooled_points, feature_dim, config.seed);
  report.x0_digest = matrix_digest(X0);

  long long train_samples_seen = 0;
  for (int f = 0; f < k_folds; ++f) {
    const auto& [train_idx, val_idx, test_idx] = folds[f];

    ModelParams params;
    params.W = glorot_uniform(ds.num_node_label_kinds, feature_dim,
                              mix_seed(config.seed, f, 0x57));
    params.w_clf = Matrix::Zero(pooled_points * feature_dim + 1, ds.num_classes);
    params.X0 = X0;

    Adam adam(config, params);
    ModelParams best = params;
    double best_val = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_ran = 0;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
      epochs_ran = epoch;
      std::vector<int> order = train_idx;
      rng::Generator egen(mix_seed(config.seed, f * 100000ull + epoch, 7));
      rng::shuffle(order, egen);

      for (std::size_t start = 0; start < order.size();
           start += config.batch_size) {
        std::vector<const LabeledGraph*> batch;
        for (std::size_t i = start;
             i < std::min(order.size(), start + config.batch_size); ++i)
          batch.push_back(&ds.graphs[order[i]]);
        const BatchGradients g =
            backward(batch, params, flow, idp, pooling, config.threads);
        report.skipped_total += g.skipped;
        train_samples_seen += static_cast<long long>(batch.size());
        if (g.used > 0) adam.step(params, g.dW, g.dw_clf);
      }

      const EvalStats val =
          evaluate(ds, val_idx, params, flow, pooling, config.threads);
      if (val.used > 0 && val.loss < best_val) {
        best_val = val.loss;
        best = params;
        best_epoch = epoch;
      }
      if (epoch - best_epoch >= config.patience) break;
    }

    const EvalStats test =
        evaluate(ds, test_idx, best, flow, pooling, config.threads);
    FoldResult fr;
    fr.fold = f;
    fr.test_accuracy =
        test.used > 0 ? static_cast<double>(test.correct) / test.used : 0.0;
    fr.epochs_ran = epochs_ran;
    fr.best_val_loss = best_val;
    report.folds.push_back(fr);

    if (train_samples_seen > 0 &&
        static_cast<double>(report.skipped_total) / train_samples_seen >
            config.max_skip_rate)
      throw std::runtime_error("train_eval_cv: flow skip rate exceeded " +
                               std::to_string(config.max_skip_rate));
  }

  double sum = 0.0;
  for (const auto& fr : report.folds) sum += fr.test_accuracy;
  report.mean_accuracy = sum / report.folds.size();
  double var = 0.0;
  for (const auto& fr : report.folds) {
    const double dev = fr.test_accuracy - report.mean_accuracy;
    var += dev * dev;
  }
  report.std_accuracy = std::sqrt(var / report.folds.size());
  return report;
}

std::string CvReport::to_json(int indent) const {
  json folds_json = json::array();
  for (const auto& fr : folds)
    folds_json.push_back({{"fold", fr.fold},
                          {"test_accuracy", fr.test_accuracy},
                          {"epochs_ran", fr.epochs_ran},
                          {"best_val_loss", fr.best_val_loss}});
  json j{
      {"dataset", dataset},
      {"pooling", pooling},
      {"k_folds", k_folds},
      {"folds", folds_json},
      {"mean_accuracy", mean_accuracy},
      {"std_accuracy", std_accuracy},
      {"skipped_total", skipped_total},
      {"config", params_json(config, flow, idp)},
      {"model", {{"pooled_points", pooled_points}, {"feature_dim", feature_dim}}},
      {"manifest",
       {{"seed", config.seed},
        {"x0_digest", x0_digest},
        {"git_revision", git_revision}}},
  };
  return j.dump(indent);
}

}  // namespace flowpool
