#include "moma/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "moma/checkpoint.hpp"

namespace moma {

namespace {

Mat covariance(const Mat& x) {
  const long m = x.rows();
  const long f = x.cols();
  const Eigen::RowVectorXd mu = x.colwise().mean();
  Mat centered = x.rowwise() - mu;
  Mat cov = centered.transpose() * centered;
  if (m > 1)
    cov /= static_cast<double>(m - 1);
  // Regularize when the sample count cannot support a full-rank estimate.
  if (m <= f) cov.diagonal().array() += 1e-6;
  return cov;
}

Mat psd_sqrt(const Mat& sym) {
  Eigen::SelfAdjointEigenSolver<Mat> eig(sym);
  Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  return eig.eigenvectors() * lam.cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

}  // namespace

double fid(const Mat& a, const Mat& b) {
  MOMA_CHECK(a.rows() >= 1 && b.rows() >= 1, "fid: empty feature set");
  MOMA_CHECK(a.cols() == b.cols(), "fid: feature width mismatch");
  MOMA_CHECK(a.allFinite() && b.allFinite(), "fid: non-finite features");
  const Eigen::RowVectorXd mu_a = a.colwise().mean();
  const Eigen::RowVectorXd mu_b = b.colwise().mean();
  const Mat cov_a = covariance(a);
  const Mat cov_b = covariance(b);

  const Mat root_a = psd_sqrt(cov_a);
  Mat inner = root_a * cov_b * root_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(inner);
  double trace_sqrt = 0.0;
  for (long i = 0; i < eig.eigenvalues().size(); ++i) {
    const double lam = eig.eigenvalues()(i);
    if (lam > 0.0) trace_sqrt += std::sqrt(lam);
    // Small negative eigenvalues are numerical noise; clip to zero.
  }
  const double d2 = (mu_a - mu_b).squaredNorm() + cov_a.trace() + cov_b.trace() -
                    2.0 * trace_sqrt;
  return std::max(0.0, d2);
}

double diversity(const Mat& a, int pairs, RngStream& rng) {
  const long m = a.rows();
  MOMA_CHECK(m >= 2, "diversity: need at least two features");
  double total = 0.0;
  for (int k = 0; k < pairs; ++k) {
    const long i = static_cast<long>(rng.integer(static_cast<uint64_t>(m)));
    long j = static_cast<long>(rng.integer(static_cast<uint64_t>(m - 1)));
    if (j >= i) ++j;
    total += (a.row(i) - a.row(j)).norm();
  }
  return total / static_cast<double>(pairs);
}

double mm_dist(const Mat& motion, const Mat& text) {
  MOMA_CHECK(motion.rows() == text.rows() && motion.cols() == text.cols(),
             "mm_dist: paired sets must match");
  MOMA_CHECK(motion.rows() >= 1, "mm_dist: empty sets");
  double total = 0.0;
  for (long i = 0; i < motion.rows(); ++i)
    total += (motion.row(i) - text.row(i)).norm();
  return total / static_cast<double>(motion.rows());
}

RPrecision r_precision(const Mat& motion, const Mat& text, int pool,
                       RngStream& rng) {
  const long m = motion.rows();
  MOMA_CHECK(pool >= 1, "r_precision: pool must be >= 1");
  MOMA_CHECK(m >= pool, "r_precision: need at least pool items");
  MOMA_CHECK(text.rows() == m, "r_precision: paired sets must match");
  RPrecision rp;
  for (long i = 0; i < m; ++i) {
    const double d_true = (motion.row(i) - text.row(i)).norm();
    // pool-1 distinct distractors from other items.
    std::vector<int> others =
        rng.sample_without_replacement(static_cast<int>(m - 1), pool - 1);
    int closer = 0;
    for (int o : others) {
      const long j = o >= i ? o + 1 : o;
      if ((motion.row(i) - text.row(j)).norm() < d_true) ++closer;
    }
    const int rank = closer + 1;
    if (rank <= 1) rp.top1 += 1.0;
    if (rank <= 2) rp.top2 += 1.0;
    if (rank <= 3) rp.top3 += 1.0;
  }
  rp.top1 /= static_cast<double>(m);
  rp.top2 /= static_cast<double>(m);
  rp.top3 /= static_cast<double>(m);
  return rp;
}

double mpjpe(const Mat& pred, const Mat& gt) {
  MOMA_CHECK(pred.rows() == gt.rows() && pred.cols() == gt.cols(),
             "mpjpe: shape mismatch");
  MOMA_CHECK(pred.cols() % 3 == 0, "mpjpe: columns must be J*3");
  const long t_len = pred.rows();
  const long joints = pred.cols() / 3;
  double total = 0.0;
  for (long t = 0; t < t_len; ++t)
    for (long j = 0; j < joints; ++j)
      total += (pred.block(t, 3 * j, 1, 3) - gt.block(t, 3 * j, 1, 3)).norm();
  return total / static_cast<double>(t_len * joints);
}

namespace {

// Similarity (rotation + translation + uniform scale) alignment of pred onto
// gt for one frame; returns the mean per-joint residual.
double procrustes_frame_error(const Eigen::MatrixXd& pred,
                              const Eigen::MatrixXd& gt) {
  const long j = pred.rows();
  const Eigen::RowVector3d mp = pred.colwise().mean();
  const Eigen::RowVector3d mg = gt.colwise().mean();
  const Eigen::MatrixXd pc = pred.rowwise() - mp;
  const Eigen::MatrixXd gc = gt.rowwise() - mg;
  const double var_p = pc.squaredNorm();
  if (var_p < 1e-18) {
    // All joints coincident: translation-only fallback.
    double total = 0.0;
    for (long k = 0; k < j; ++k)
      total += (gt.row(k) - (pred.row(k) - mp + mg)).norm();
    return total / static_cast<double>(j);
  }
  const Eigen::Matrix3d h = pc.transpose() * gc;
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(
      h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0)
    d(2, 2) = -1.0;
  const Eigen::Matrix3d rot = svd.matrixV() * d * svd.matrixU().transpose();
  const double scale = (svd.singularValues().asDiagonal() * d).trace() / var_p;
  double total = 0.0;
  for (long k = 0; k < j; ++k) {
    const Eigen::Vector3d aligned =
        scale * (rot * pc.row(k).transpose()) + mg.transpose();
    total += (gt.row(k).transpose() - aligned).norm();
  }
  return total / static_cast<double>(j);
}

}  // namespace

double pa_mpjpe(const Mat& pred, const Mat& gt) {
  MOMA_CHECK(pred.rows() == gt.rows() && pred.cols() == gt.cols(),
             "pa_mpjpe: shape mismatch");
  MOMA_CHECK(pred.cols() % 3 == 0, "pa_mpjpe: columns must be J*3");
  const long t_len = pred.rows();
  const long joints = pred.cols() / 3;
  double total = 0.0;
  for (long t = 0; t < t_len; ++t) {
    Eigen::MatrixXd p(joints, 3), g(joints, 3);
    for (long j = 0; j < joints; ++j) {
      p.row(j) = pred.block(t, 3 * j, 1, 3);
      g.row(j) = gt.block(t, 3 * j, 1, 3);
    }
    total += procrustes_frame_error(p, g);
  }
  return total / static_cast<double>(t_len);
}

double accl(const Mat& pred, const Mat& gt) {
  MOMA_CHECK(pred.rows() == gt.rows() && pred.cols() == gt.cols(),
             "accl: shape mismatch");
  MOMA_CHECK(pred.rows() >= 3, "accl: need T >= 3");
  MOMA_CHECK(pred.cols() % 3 == 0, "accl: columns must be J*3");
  const long t_len = pred.rows();
  const long joints = pred.cols() / 3;
  double total = 0.0;
  for (long t = 1; t + 1 < t_len; ++t) {
    for (long j = 0; j < joints; ++j) {
      Eigen::RowVector3d ap = pred.block(t + 1, 3 * j, 1, 3) -
                              2.0 * pred.block(t, 3 * j, 1, 3) +
                              pred.block(t - 1, 3 * j, 1, 3);
      Eigen::RowVector3d ag = gt.block(t + 1, 3 * j, 1, 3) -
                              2.0 * gt.block(t, 3 * j, 1, 3) +
                              gt.block(t - 1, 3 * j, 1, 3);
      total += (ap - ag).norm();
    }
  }
  return total / static_cast<double>((t_len - 2) * joints);
}

// ---- toy evaluator ----

ToyEvaluator::ToyEvaluator(EvaluatorConfig cfg, int motion_dim,
                           std::vector<std::string> templates, NormStats stats,
                           uint64_t seed)
    : cfg_(cfg), motion_dim_(motion_dim), stats_(std::move(stats)) {
  MOMA_CHECK(cfg_.feature_dim >= 1 && cfg_.hidden >= 1,
             "evaluator: dims must be >= 1");
  RngStream rng = derive_stream(seed, "eval-init");
  in_proj_ = nn::Linear(params_, "in_proj", motion_dim, cfg_.hidden, rng);
  pos_table_ = params_.create("pos_table", cfg_.max_len, cfg_.hidden,
                              [&] { return 0.02 * rng.normal(); });
  for (int i = 0; i < cfg_.layers; ++i) {
    std::ostringstream name;
    name << "block" << i;
    blocks_.emplace_back(params_, name.str(), cfg_.hidden, cfg_.heads,
                         cfg_.ffn_mult, rng);
  }
  out_proj_ = nn::Linear(params_, "out_proj", cfg_.hidden, cfg_.feature_dim, rng);
  text_enc_ = std::make_shared<ToyTextEncoder>(
      cfg_.text_dim, std::move(templates), derive_stream(seed, "eval-text").next_u64());
  text_fc1_ = nn::Linear(params_, "text_fc1", cfg_.text_dim, cfg_.hidden, rng);
  text_fc2_ = nn::Linear(params_, "text_fc2", cfg_.hidden, cfg_.feature_dim, rng);
  logit_scale_ = params_.create_const("logit_scale", 1, 1, std::log(10.0));
}

Tensor ToyEvaluator::motion_features_t(const Mat& frames_norm) const {
  MOMA_CHECK(frames_norm.cols() == motion_dim_, "evaluator: motion dim mismatch");
  Mat x = frames_norm;
  if (x.rows() > cfg_.max_len) x = x.topRows(cfg_.max_len);
  std::vector<int> pos(static_cast<size_t>(x.rows()));
  for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<int>(i);
  Tensor h = add(in_proj_.forward(Tensor::constant(x)),
                 gather_rows(pos_table_, pos));
  for (const auto& b : blocks_) h = b.forward(h);
  Tensor pooled = mean_rows(h);
  return l2_normalize_rows(out_proj_.forward(pooled),
                           std::sqrt(static_cast<double>(cfg_.feature_dim)));
}

Tensor ToyEvaluator::text_features_t(const std::string& caption) const {
  Tensor e = text_enc_->encode(caption).vector;
  Tensor f = text_fc2_.forward(gelu(text_fc1_.forward(e)));
  return l2_normalize_rows(f, std::sqrt(static_cast<double>(cfg_.feature_dim)));
}

Mat ToyEvaluator::motion_features(const std::vector<MotionSequence>& seqs) const {
  NoGradGuard ng;
  MOMA_CHECK(!seqs.empty(), "evaluator: empty sequence list");
  Mat out(static_cast<long>(seqs.size()), cfg_.feature_dim);
  for (size_t i = 0; i < seqs.size(); ++i) {
    const Mat norm = normalize_frames(seqs[i].frames_d(), stats_);
    out.row(static_cast<long>(i)) = motion_features_t(norm).value().row(0);
  }
  return out;
}

Mat ToyEvaluator::text_features(const std::vector<std::string>& captions) const {
  NoGradGuard ng;
  MOMA_CHECK(!captions.empty(), "evaluator: empty caption list");
  Mat out(static_cast<long>(captions.size()), cfg_.feature_dim);
  for (size_t i = 0; i < captions.size(); ++i)
    out.row(static_cast<long>(i)) = text_features_t(captions[i]).value().row(0);
  return out;
}

std::shared_ptr<ToyEvaluator> train_toy_evaluator(
    const std::vector<MotionSequence>& corpus,
    const std::vector<std::string>& captions, const EvaluatorConfig& cfg) {
  MOMA_CHECK(corpus.size() == captions.size() && !corpus.empty(),
             "train_toy_evaluator: bad corpus");
  // Distinct captions, in first-seen order; batches take one item per caption.
  std::vector<std::string> distinct;
  std::vector<std::vector<int>> by_caption;
  for (size_t i = 0; i < captions.size(); ++i) {
    size_t k = 0;
    for (; k < distinct.size(); ++k)
      if (distinct[k] == captions[i]) break;
    if (k == distinct.size()) {
      distinct.push_back(captions[i]);
      by_caption.emplace_back();
    }
    by_caption[k].push_back(static_cast<int>(i));
  }
  MOMA_CHECK(distinct.size() >= 2, "train_toy_evaluator: need >= 2 captions");

  NormStats stats = compute_stats(corpus);
  auto ev = std::make_shared<ToyEvaluator>(cfg, corpus[0].dim(), distinct,
                                           stats, cfg.seed);
  std::vector<NodePtr> params;
  for (const auto& [n, p] : ev->params().items()) params.push_back(p);
  for (const auto& [n, p] : ev->text_encoder().params().items())
    params.push_back(p);
  nn::AdamOptimizer opt(params);
  RngStream rng = derive_stream(cfg.seed, "eval-train");

  std::vector<Mat> normalized;
  normalized.reserve(corpus.size());
  for (const auto& seq : corpus)
    normalized.push_back(normalize_frames(seq.frames_d(), stats));

  const long b = static_cast<long>(distinct.size());
  std::vector<int> diag(static_cast<size_t>(b));
  for (long i = 0; i < b; ++i) diag[static_cast<size_t>(i)] = static_cast<int>(i);

  for (long it = 0; it < cfg.iterations; ++it) {
    opt.zero_grad();
    std::vector<Tensor> motion_rows, text_rows;
    for (long k = 0; k < b; ++k) {
      const auto& idxs = by_caption[static_cast<size_t>(k)];
      const int pick = idxs[rng.integer(idxs.size())];
      motion_rows.push_back(
          ev->motion_features_t(normalized[static_cast<size_t>(pick)]));
      text_rows.push_back(ev->text_features_t(distinct[static_cast<size_t>(k)]));
    }
    Tensor mf = concat_rows(motion_rows);
    Tensor tf = concat_rows(text_rows);
    // Cosine logits with a learnable temperature.
    Tensor logits = scale(matmul(mf, transpose(tf)),
                          1.0 / static_cast<double>(cfg.feature_dim));
    logits = mul_scalar_node(logits, exp(ev->logit_scale()));
    Tensor loss = scale(add(cross_entropy_rows(logits, diag),
                            cross_entropy_rows(transpose(logits), diag)),
                        0.5);
    backward(loss);
    opt.step(cfg.lr);
    if (cfg.log_every > 0 && (it % cfg.log_every == 0 || it == cfg.iterations - 1))
      std::fprintf(stderr, "[eval] iter %ld/%ld loss %.6f\n", it, cfg.iterations,
                   loss.scalar());
  }
  return ev;
}

void save_evaluator_checkpoint(const ToyEvaluator& ev, uint64_t step,
                               const std::string& path) {
  Checkpoint ck;
  ck.step = step;
  const EvaluatorConfig& cfg = ev.config();
  ck.set_config("model", "toy_evaluator");
  ck.set_config("e.feature_dim", std::to_string(cfg.feature_dim));
  ck.set_config("e.hidden", std::to_string(cfg.hidden));
  ck.set_config("e.layers", std::to_string(cfg.layers));
  ck.set_config("e.heads", std::to_string(cfg.heads));
  ck.set_config("e.text_dim", std::to_string(cfg.text_dim));
  ck.set_config("e.max_len", std::to_string(cfg.max_len));
  ck.set_config("e.ffn_mult", std::to_string(cfg.ffn_mult));
  ck.set_config("e.motion_dim", std::to_string(ev.motion_dim()));
  std::ostringstream caps;
  const auto& templates = const_cast<ToyEvaluator&>(ev).text_encoder().templates();
  for (size_t i = 0; i < templates.size(); ++i) {
    if (i) caps << '\t';
    caps << templates[i];
  }
  ck.set_config("e.templates", caps.str());
  ck.put_params("m.", ev.params());
  ck.put_params("x.", const_cast<ToyEvaluator&>(ev).text_encoder().params());
  ck.set_array("norm.mean", ev.stats().mean.transpose());
  ck.set_array("norm.std", ev.stats().std.transpose());
  ck.save(path);
}

std::shared_ptr<ToyEvaluator> load_evaluator_checkpoint(const std::string& path) {
  Checkpoint ck = Checkpoint::load(path);
  MOMA_CHECK(ck.get_config("model") == "toy_evaluator",
             "not an evaluator checkpoint: " + path);
  EvaluatorConfig cfg;
  cfg.feature_dim = static_cast<int>(ck.get_config_long("e.feature_dim"));
  cfg.hidden = static_cast<int>(ck.get_config_long("e.hidden"));
  cfg.layers = static_cast<int>(ck.get_config_long("e.layers"));
  cfg.heads = static_cast<int>(ck.get_config_long("e.heads"));
  cfg.text_dim = static_cast<int>(ck.get_config_long("e.text_dim"));
  cfg.max_len = static_cast<int>(ck.get_config_long("e.max_len"));
  cfg.ffn_mult = static_cast<int>(ck.get_config_long("e.ffn_mult"));
  std::vector<std::string> templates;
  {
    std::istringstream is(ck.get_config("e.templates"));
    std::string part;
    while (std::getline(is, part, '\t')) templates.push_back(part);
  }
  NormStats stats;
  stats.mean = ck.get_array("norm.mean").row(0).transpose();
  stats.std = ck.get_array("norm.std").row(0).transpose();
  auto ev = std::make_shared<ToyEvaluator>(
      cfg, static_cast<int>(ck.get_config_long("e.motion_dim")), templates,
      stats, /*seed=*/0);
  ck.load_params("m.", ev->params());
  ck.load_params("x.", ev->text_encoder().params());
  return ev;
}

// ---- summaries ----

namespace {

MetricSummary mean_ci(const std::vector<double>& values) {
  MetricSummary s;
  const double n = static_cast<double>(values.size());
  for (double v : values) s.value += v;
  s.value /= n;
  if (values.size() > 1) {
    double var = 0.0;
    for (double v : values) var += (v - s.value) * (v - s.value);
    var /= (n - 1.0);
    s.ci_half = 1.96 * std::sqrt(var / n);
  }
  return s;
}

Mat resample_rows(const Mat& a, RngStream& rng) {
  Mat out(a.rows(), a.cols());
  for (long r = 0; r < a.rows(); ++r)
    out.row(r) = a.row(static_cast<long>(rng.integer(static_cast<uint64_t>(a.rows()))));
  return out;
}

}  // namespace

MetricSummary fid_summary(const Mat& a, const Mat& b, int reps, RngStream& rng) {
  MetricSummary s;
  s.value = fid(a, b);
  if (reps > 1) {
    std::vector<double> boot;
    boot.reserve(static_cast<size_t>(reps));
    for (int r = 0; r < reps; ++r)
      boot.push_back(fid(resample_rows(a, rng), resample_rows(b, rng)));
    double mean = 0.0;
    for (double v : boot) mean += v;
    mean /= static_cast<double>(boot.size());
    double var = 0.0;
    for (double v : boot) var += (v - mean) * (v - mean);
    var /= static_cast<double>(boot.size() - 1);
    s.ci_half = 1.96 * std::sqrt(var);
  }
  return s;
}

MetricSummary diversity_summary(const Mat& a, int pairs, int reps,
                                RngStream& rng) {
  std::vector<double> runs;
  runs.reserve(static_cast<size_t>(reps));
  for (int r = 0; r < reps; ++r) runs.push_back(diversity(a, pairs, rng));
  return mean_ci(runs);
}

RPrecisionSummary r_precision_summary(const Mat& motion, const Mat& text,
                                      int pool, int reps, RngStream& rng) {
  std::vector<double> t1, t2, t3;
  for (int r = 0; r < reps; ++r) {
    const RPrecision rp = r_precision(motion, text, pool, rng);
    t1.push_back(rp.top1);
    t2.push_back(rp.top2);
    t3.push_back(rp.top3);
  }
  return RPrecisionSummary{mean_ci(t1), mean_ci(t2), mean_ci(t3)};
}

}  // namespace moma
