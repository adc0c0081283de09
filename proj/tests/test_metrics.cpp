#include <doctest.h>

#include <filesystem>

#include "gradcheck.hpp"
#include "moma/metrics.hpp"

using namespace moma;
using testutil::random_mat;

TEST_CASE("fid: identical sets give ~0; symmetric; nonnegative") {
  RngStream rng(1);
  const Mat a = random_mat(200, 6, rng);
  const Mat b = random_mat(180, 6, rng, 1.3);
  CHECK(fid(a, a) <= 1e-6);
  CHECK(std::abs(fid(a, b) - fid(b, a)) < 1e-8);
  CHECK(fid(a, b) >= 0.0);
}

TEST_CASE("fid: mean shift with equal covariance gives ||v||^2") {
  RngStream rng(2);
  const int f = 6, m = 4000;
  Mat a = random_mat(m, f, rng);
  Mat v(1, f);
  for (int i = 0; i < f; ++i) v(0, i) = 0.5 * (i % 2 == 0 ? 1.0 : -1.0);
  Mat b = random_mat(m, f, rng);
  b.rowwise() += v.row(0);
  const double expect = v.squaredNorm();
  CHECK(fid(a, b) == doctest::Approx(expect).epsilon(0.15));
}

TEST_CASE("fid: 1-D variance gap gives (sigma1 - sigma2)^2") {
  RngStream rng(3);
  const int m = 20000;
  Mat a(m, 1), b(m, 1);
  for (int i = 0; i < m; ++i) {
    a(i, 0) = rng.normal();
    b(i, 0) = 2.0 * rng.normal();
  }
  CHECK(fid(a, b) == doctest::Approx(1.0).epsilon(0.1));
}

TEST_CASE("fid regularizes tiny sample counts instead of failing") {
  RngStream rng(4);
  const Mat a = random_mat(4, 6, rng);
  const Mat b = random_mat(5, 6, rng);
  CHECK(std::isfinite(fid(a, b)));
}

TEST_CASE("diversity: identical vectors 0; two distinct give their distance") {
  RngStream rng(5);
  Mat same = Mat::Ones(10, 3);
  CHECK(diversity(same, 300, rng) == doctest::Approx(0.0));

  Mat two(2, 3);
  two.row(0) << 0, 0, 0;
  two.row(1) << 3, 4, 0;
  CHECK(diversity(two, 300, rng) == doctest::Approx(5.0));

  RngStream r1(6), r2(6);
  const Mat a = random_mat(50, 4, rng);
  CHECK(diversity(a, 300, r1) == diversity(a, 300, r2));
}

TEST_CASE("mm_dist: zero on identical pairs, exact distance, homogeneous") {
  RngStream rng(7);
  const Mat m = random_mat(8, 4, rng);
  CHECK(mm_dist(m, m) == doctest::Approx(0.0));

  Mat a(1, 2), b(1, 2);
  a << 0, 0;
  b << 0, 2;
  CHECK(mm_dist(a, b) == doctest::Approx(2.0));

  const Mat t = random_mat(8, 4, rng);
  CHECK(mm_dist(3.0 * m, 3.0 * t) == doctest::Approx(3.0 * mm_dist(m, t)));
  CHECK_THROWS_AS(mm_dist(m, random_mat(5, 4, rng)), Error);
}

TEST_CASE("r_precision: perfect pairing gives (1,1,1); pool=1 degenerate") {
  RngStream rng(8);
  Mat feats = random_mat(40, 6, rng);
  RPrecision rp = r_precision(feats, feats, 32, rng);
  CHECK(rp.top1 == doctest::Approx(1.0));
  CHECK(rp.top2 == doctest::Approx(1.0));
  CHECK(rp.top3 == doctest::Approx(1.0));

  RPrecision one = r_precision(feats, random_mat(40, 6, rng), 1, rng);
  CHECK(one.top1 == doctest::Approx(1.0));
  CHECK_THROWS_AS(r_precision(feats, feats, 41, rng), Error);
}

TEST_CASE("r_precision: independent features converge to (1,2,3)/32") {
  RngStream rng(9);
  const int m = 5000;
  const Mat motion = random_mat(m, 8, rng);
  const Mat text = random_mat(m, 8, rng);
  const RPrecision rp = r_precision(motion, text, 32, rng);
  CHECK(std::abs(rp.top1 - 1.0 / 32) < 0.02);
  CHECK(std::abs(rp.top2 - 2.0 / 32) < 0.02);
  CHECK(std::abs(rp.top3 - 3.0 / 32) < 0.02);
}

TEST_CASE("mpjpe/pa_mpjpe: zero on equality; alignment removes rigid motion") {
  RngStream rng(10);
  const Mat gt = random_mat(6, 12, rng);  // 4 joints
  CHECK(mpjpe(gt, gt) == doctest::Approx(0.0));
  CHECK(pa_mpjpe(gt, gt) <= 1e-9);

  // Rotate 90 degrees about z and translate.
  Mat pred = gt;
  for (long t = 0; t < gt.rows(); ++t) {
    for (int j = 0; j < 4; ++j) {
      const double x = gt(t, 3 * j), y = gt(t, 3 * j + 1), z = gt(t, 3 * j + 2);
      pred(t, 3 * j) = -y + 1.0;
      pred(t, 3 * j + 1) = x - 2.0;
      pred(t, 3 * j + 2) = z + 0.5;
    }
  }
  CHECK(mpjpe(pred, gt) > 0.1);
  CHECK(pa_mpjpe(pred, gt) <= 1e-8);
}

TEST_CASE("pa_mpjpe <= mpjpe on random pairs (Procrustes optimality)") {
  RngStream rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const long t = 2 + static_cast<long>(rng.integer(4));
    const int j = 3 + static_cast<int>(rng.integer(4));
    const Mat gt = random_mat(t, 3 * j, rng);
    const Mat pred = gt + 0.3 * random_mat(t, 3 * j, rng);
    CHECK(pa_mpjpe(pred, gt) <= mpjpe(pred, gt) + 1e-9);
  }
}

TEST_CASE("pa_mpjpe: coincident joints fall back to translation alignment") {
  Mat gt = Mat::Zero(2, 9);
  Mat pred = Mat::Ones(2, 9);
  CHECK(std::isfinite(pa_mpjpe(pred, gt)));
  CHECK(pa_mpjpe(pred, gt) <= 1e-12);  // pure translation is removed
}

TEST_CASE("accl: annihilates constant and linear ramps exactly") {
  // Dyadic values keep the arithmetic exact in floating point.
  Mat gt(6, 6);
  for (long t = 0; t < 6; ++t)
    for (int c = 0; c < 6; ++c)
      gt(t, c) = static_cast<double>((t * 7 + c * 3) % 16) / 8.0;
  CHECK(accl(gt, gt) == 0.0);

  Mat off = gt;
  off.array() += 0.5;
  CHECK(accl(off, gt) == 0.0);

  Mat ramp = gt;
  for (long t = 0; t < 6; ++t) ramp.row(t).array() += 0.25 * static_cast<double>(t);
  CHECK(accl(ramp, gt) == 0.0);

  Mat quad = gt;
  for (long t = 0; t < 6; ++t)
    quad.row(t).array() += 0.25 * static_cast<double>(t * t);
  CHECK(accl(quad, gt) > 0.0);
  CHECK_THROWS_AS(accl(gt.topRows(2), gt.topRows(2)), Error);
}

TEST_CASE("toy evaluator: deterministic features; retrieval beats chance") {
  ToyCorpusSpec spec;
  spec.n_classes = 4;
  spec.n_per_class = 24;
  spec.joint_count = 3;
  spec.t_min = 16;
  spec.t_max = 24;
  spec.seed = 12;
  ToyCorpus corpus = generate_toy_corpus(spec);
  std::vector<std::string> captions;
  for (const auto& c : corpus.captions) captions.push_back(c.text);

  EvaluatorConfig cfg;
  cfg.feature_dim = 16;
  cfg.hidden = 24;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.text_dim = 12;
  cfg.max_len = 32;
  cfg.iterations = 300;
  cfg.seed = 13;
  auto ev = train_toy_evaluator(corpus.sequences, captions, cfg);

  const Mat f1 = ev->motion_features(corpus.sequences);
  const Mat f2 = ev->motion_features(corpus.sequences);
  CHECK(f1 == f2);

  // Unit-norm * sqrt(f) scaling.
  for (long r = 0; r < std::min<long>(5, f1.rows()); ++r)
    CHECK(f1.row(r).norm() == doctest::Approx(std::sqrt(16.0)).epsilon(1e-6));

  const Mat tf = ev->text_features(captions);
  RngStream rng(14);
  const RPrecision rp = r_precision(f1, tf, 16, rng);
  CHECK(rp.top1 > 3.0 / 16.0);  // far above the 1/16 chance floor

  // Distinct archetype captions are not collinear after training.
  const Mat ta = ev->text_features({captions[0]});
  const Mat tb = ev->text_features({toy_caption_template(1)});
  const double cosine = ta.row(0).dot(tb.row(0)) / (ta.row(0).norm() * tb.row(0).norm());
  CHECK(cosine < 1.0 - 1e-6);
}

TEST_CASE("evaluator checkpoint round trip") {
  ToyCorpusSpec spec;
  spec.n_classes = 2;
  spec.n_per_class = 4;
  spec.joint_count = 2;
  spec.t_min = 8;
  spec.t_max = 12;
  spec.seed = 15;
  ToyCorpus corpus = generate_toy_corpus(spec);
  std::vector<std::string> captions;
  for (const auto& c : corpus.captions) captions.push_back(c.text);
  EvaluatorConfig cfg;
  cfg.feature_dim = 8;
  cfg.hidden = 12;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.text_dim = 8;
  cfg.max_len = 16;
  cfg.iterations = 5;
  cfg.seed = 16;
  auto ev = train_toy_evaluator(corpus.sequences, captions, cfg);

  const std::string path =
      (std::filesystem::temp_directory_path() / "eval_ckpt_test.bin").string();
  save_evaluator_checkpoint(*ev, 5, path);
  auto loaded = load_evaluator_checkpoint(path);
  CHECK(ev->motion_features(corpus.sequences) ==
        loaded->motion_features(corpus.sequences));
  CHECK(ev->text_features(captions) == loaded->text_features(captions));
}

TEST_CASE("fid sanity ordering: real-vs-real far below real-vs-shuffled") {
  ToyCorpusSpec spec;
  spec.n_classes = 3;
  spec.n_per_class = 30;
  spec.joint_count = 3;
  spec.t_min = 16;
  spec.t_max = 20;
  spec.seed = 17;
  ToyCorpus corpus = generate_toy_corpus(spec);
  std::vector<std::string> captions;
  for (const auto& c : corpus.captions) captions.push_back(c.text);
  EvaluatorConfig cfg;
  cfg.feature_dim = 16;
  cfg.hidden = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.text_dim = 8;
  cfg.max_len = 24;
  cfg.iterations = 150;
  cfg.seed = 18;
  auto ev = train_toy_evaluator(corpus.sequences, captions, cfg);

  Mat feats = ev->motion_features(corpus.sequences);
  const long half = feats.rows() / 2;
  const Mat a = feats.topRows(half);
  const Mat b = feats.bottomRows(feats.rows() - half);

  // Channel-shuffled impostors.
  Mat shuffled = feats;
  RngStream rng(19);
  for (long r = 0; r < shuffled.rows(); ++r) {
    const auto perm = rng.permutation(static_cast<int>(shuffled.cols()));
    Eigen::RowVectorXd row = shuffled.row(r);
    for (int c = 0; c < shuffled.cols(); ++c)
      shuffled(r, c) = row(perm[static_cast<size_t>(c)]);
  }
  CHECK(fid(a, b) * 5.0 < fid(shuffled, b));
}

TEST_CASE("metric summaries carry value and half-width") {
  RngStream rng(20);
  const Mat a = random_mat(100, 4, rng);
  const Mat b = random_mat(100, 4, rng);
  MetricSummary f = fid_summary(a, b, 10, rng);
  CHECK(f.value >= 0.0);
  CHECK(f.ci_half > 0.0);
  MetricSummary d = diversity_summary(a, 100, 10, rng);
  CHECK(d.value > 0.0);
  RPrecisionSummary rp = r_precision_summary(a, b, 16, 5, rng);
  CHECK(rp.top1.value >= 0.0);
  CHECK(rp.top1.value <= 1.0);
}
