#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "gradcheck.hpp"
#include "moma/motion_data.hpp"

using namespace moma;

namespace {

MotionSequence make_random_motion(long t, int joints, uint64_t seed) {
  RngStream rng(seed);
  MotionSequence m;
  m.layout = LayoutDescriptor::toy(joints);
  m.fps = 20.0f;
  m.frames.resize(t, m.layout.d);
  for (long r = 0; r < t; ++r)
    for (int c = 0; c < m.layout.d; ++c)
      m.frames(r, c) = static_cast<float>(rng.normal());
  return m;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("compute_stats: constant corpus hits the std floor") {
  MotionSequence m = make_random_motion(5, 2, 1);
  for (long r = 0; r < m.frames.rows(); ++r) m.frames.row(r) = m.frames.row(0);
  NormStats s = compute_stats({m});
  for (int c = 0; c < m.dim(); ++c) {
    CHECK(s.mean(c) == doctest::Approx(static_cast<double>(m.frames(0, c))));
    CHECK(s.std(c) == kStdFloor);
  }
}

TEST_CASE("compute_stats: two 1-D frames give mean 1, std 1") {
  MotionSequence m;
  m.layout.kind = LayoutKind::kToy;
  m.layout.d = 6;
  m.layout.joint_count = 1;
  m.layout.v_lo = 3;
  m.layout.v_hi = 6;
  m.frames.setZero(2, 6);
  m.frames(0, 0) = 0.0f;
  m.frames(1, 0) = 2.0f;
  NormStats s = compute_stats({m});
  CHECK(s.mean(0) == doctest::Approx(1.0));
  CHECK(s.std(0) == doctest::Approx(1.0));
}

TEST_CASE("compute_stats rejects an empty corpus") {
  CHECK_THROWS_AS(compute_stats({}), Error);
}

TEST_CASE("normalize: X equal to the mean maps to zeros; round trip") {
  ToyCorpusSpec spec;
  spec.n_per_class = 3;
  spec.seed = 5;
  ToyCorpus corpus = generate_toy_corpus(spec);
  NormStats s = compute_stats(corpus.sequences);

  MotionSequence mean_seq = corpus.sequences[0];
  for (long r = 0; r < mean_seq.frames.rows(); ++r)
    for (int c = 0; c < mean_seq.dim(); ++c)
      mean_seq.frames(r, c) = static_cast<float>(s.mean(c));
  MotionSequence z = normalize(mean_seq, s);
  CHECK(z.frames.cwiseAbs().maxCoeff() < 1e-5f);

  const MotionSequence& x = corpus.sequences[1];
  MotionSequence rt = denormalize(normalize(x, s), s);
  CHECK((rt.frames - x.frames).cwiseAbs().maxCoeff() < 1e-6f);

  // Zero-variance dimension stays finite through the floor.
  MotionSequence flat = x;
  for (long r = 0; r < flat.frames.rows(); ++r) flat.frames(r, 0) = 2.5f;
  NormStats s2 = compute_stats({flat});
  MotionSequence n2 = normalize(flat, s2);
  CHECK(n2.frames.allFinite());
}

TEST_CASE("normalize rejects dimension mismatch") {
  MotionSequence m = make_random_motion(4, 2, 2);
  NormStats s;
  s.mean = Eigen::VectorXd::Zero(3);
  s.std = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(normalize(m, s), Error);
}

TEST_CASE("motion file save/load round-trips bit-exactly") {
  RngStream rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const long t = 1 + static_cast<long>(rng.integer(30));
    const int joints = 2 + static_cast<int>(rng.integer(6));
    MotionSequence m = make_random_motion(t, joints, 1000 + trial);
    const std::string path = temp_path("moma_roundtrip.moma");
    save_motion(m, path);
    MotionSequence r = load_motion(path);
    CHECK(r.fps == m.fps);
    CHECK(r.layout.d == m.layout.d);
    CHECK(r.layout.joint_count == m.layout.joint_count);
    CHECK(r.frames.rows() == m.frames.rows());
    bool exact = true;
    for (long i = 0; i < m.frames.size(); ++i)
      exact = exact && (r.frames.data()[i] == m.frames.data()[i]);
    CHECK(exact);
  }
}

TEST_CASE("motion file: truncated data reports expected vs found bytes") {
  MotionSequence m = make_random_motion(10, 4, 3);
  const std::string path = temp_path("moma_truncated.moma");
  save_motion(m, path);
  const auto full = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, full - 7);
  try {
    load_motion(path);
    FAIL("expected a parse error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("expected") != std::string::npos);
    CHECK(msg.find("found") != std::string::npos);
  }
}

TEST_CASE("motion file: d = 0 header rejected") {
  MotionSequence m = make_random_motion(4, 2, 4);
  const std::string path = temp_path("moma_zerod.moma");
  save_motion(m, path);
  // Patch the d field (offset 8) to zero.
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(8);
  const uint32_t zero = 0;
  f.write(reinterpret_cast<const char*>(&zero), 4);
  f.close();
  CHECK_THROWS_AS(load_motion(path), Error);
}

TEST_CASE("motion file: bad magic rejected") {
  const std::string path = temp_path("moma_badmagic.moma");
  std::ofstream os(path, std::ios::binary);
  os << "NOPE this is not a motion file";
  os.close();
  CHECK_THROWS_AS(load_motion(path), Error);
}

TEST_CASE("toy corpus: deterministic per seed, distinct across seeds") {
  ToyCorpusSpec spec;
  spec.n_per_class = 2;
  spec.seed = 1;
  ToyCorpus a = generate_toy_corpus(spec);
  ToyCorpus b = generate_toy_corpus(spec);
  spec.seed = 2;
  ToyCorpus c = generate_toy_corpus(spec);

  REQUIRE(a.sequences.size() == b.sequences.size());
  bool identical = true;
  for (size_t i = 0; i < a.sequences.size(); ++i) {
    identical = identical &&
                (a.sequences[i].frames == b.sequences[i].frames) &&
                a.captions[i].text == b.captions[i].text;
  }
  CHECK(identical);
  bool any_diff = false;
  for (size_t i = 0; i < a.sequences.size(); ++i)
    if (a.sequences[i].frames.rows() != c.sequences[i].frames.rows() ||
        a.sequences[i].frames != c.sequences[i].frames)
      any_diff = true;
  CHECK(any_diff);
}

TEST_CASE("toy corpus: velocity block is the exact float finite difference") {
  ToyCorpusSpec spec;
  spec.n_per_class = 4;
  spec.seed = 9;
  ToyCorpus corpus = generate_toy_corpus(spec);
  for (const auto& seq : corpus.sequences) {
    const int j3 = 3 * seq.layout.joint_count;
    float max_err = 0.0f;
    for (long t = 1; t < seq.length(); ++t)
      for (int c = 0; c < j3; ++c) {
        const float expect = seq.fps * (seq.frames(t, c) - seq.frames(t - 1, c));
        max_err = std::max(max_err,
                           std::abs(seq.frames(t, seq.layout.v_lo + c) - expect));
      }
    CHECK(max_err == 0.0f);
  }
}

TEST_CASE("toy corpus: counts and caption templates") {
  ToyCorpusSpec spec;
  spec.n_classes = 8;
  spec.n_per_class = 250;
  spec.seed = 3;
  ToyCorpus corpus = generate_toy_corpus(spec);
  CHECK(corpus.sequences.size() == 2000);
  std::set<std::string> distinct;
  for (const auto& c : corpus.captions) distinct.insert(c.text);
  CHECK(distinct.size() == 8);
}

TEST_CASE("recover_joints: toy layout is an exact projection") {
  MotionSequence m = make_random_motion(6, 5, 8);
  const Mat joints = recover_joints(m);
  const Mat expect = m.frames_d().leftCols(15);
  CHECK((joints - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("recover_joints humanml3d: zero root velocities keep the root at origin") {
  MotionSequence m;
  m.layout = LayoutDescriptor::humanml3d();
  m.fps = 20.0f;
  m.frames.setZero(5, 263);
  for (long t = 0; t < 5; ++t) {
    m.frames(t, 3) = 0.9f;                      // root height
    for (int j = 1; j < 22; ++j) {
      m.frames(t, 4 + 3 * (j - 1) + 0) = 0.1f * j;
      m.frames(t, 4 + 3 * (j - 1) + 1) = 0.05f * j;
      m.frames(t, 4 + 3 * (j - 1) + 2) = -0.02f * j;
    }
  }
  const Mat joints = recover_joints(m);
  for (long t = 0; t < 5; ++t) {
    CHECK(joints(t, 0) == doctest::Approx(0.0));
    CHECK(joints(t, 1) == doctest::Approx(0.9).epsilon(1e-6));
    CHECK(joints(t, 2) == doctest::Approx(0.0));
    // Zero yaw: local RIC coordinates appear unrotated.
    CHECK(joints(t, 3) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(joints(t, 5) == doctest::Approx(-0.02).epsilon(1e-6));
  }
}

TEST_CASE("recover_joints humanml3d: constant linear velocity integrates linearly") {
  // Closed form: with zero yaw velocity the root position is t * (vx, vz).
  const double vx = 0.03, vz = -0.01;
  MotionSequence m;
  m.layout = LayoutDescriptor::humanml3d();
  m.fps = 20.0f;
  m.frames.setZero(8, 263);
  for (long t = 0; t < 8; ++t) {
    m.frames(t, 1) = static_cast<float>(vx);
    m.frames(t, 2) = static_cast<float>(vz);
  }
  const Mat joints = recover_joints(m);
  for (long t = 0; t < 8; ++t) {
    CHECK(joints(t, 0) ==
          doctest::Approx(static_cast<double>(t) * vx).epsilon(1e-5));
    CHECK(joints(t, 2) ==
          doctest::Approx(static_cast<double>(t) * vz).epsilon(1e-5));
  }
}

TEST_CASE("recover_joints humanml3d: quarter-turn yaw rotates subsequent steps") {
  MotionSequence m;
  m.layout = LayoutDescriptor::humanml3d();
  m.fps = 20.0f;
  m.frames.setZero(3, 263);
  // Frame 0 carries a +pi/2 yaw velocity; frames 0..2 step forward in +x.
  m.frames(0, 0) = static_cast<float>(M_PI / 2.0);
  for (long t = 0; t < 3; ++t) m.frames(t, 1) = 1.0f;
  const Mat joints = recover_joints(m);
  // Step into frame 1 is rotated by the accumulated quarter turn.
  CHECK(joints(1, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::abs(joints(1, 2)) == doctest::Approx(1.0).epsilon(1e-9));
  // The same heading persists into frame 2 (no further yaw velocity).
  CHECK(joints(2, 0) == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(std::abs(joints(2, 2)) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("manifest round trip and labeled corpus loading") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "moma_manifest_test";
  fs::create_directories(dir);
  ToyCorpusSpec spec;
  spec.n_classes = 2;
  spec.n_per_class = 2;
  spec.seed = 4;
  ToyCorpus corpus = generate_toy_corpus(spec);
  std::vector<std::string> files;
  for (size_t i = 0; i < corpus.sequences.size(); ++i) {
    const std::string name = "m" + std::to_string(i) + ".moma";
    save_motion(corpus.sequences[i], (dir / name).string());
    files.push_back(name);
  }
  write_corpus_manifest((dir / "manifest.tsv").string(), files, corpus.captions);
  LabeledCorpus loaded = load_labeled_corpus((dir / "manifest.tsv").string());
  REQUIRE(loaded.sequences.size() == corpus.sequences.size());
  CHECK(loaded.captions[0] == corpus.captions[0].text);
  CHECK(loaded.sequences[3].frames == corpus.sequences[3].frames);
}

TEST_CASE("mean_bone_length on the rest pose chain") {
  MotionSequence m;
  m.layout = LayoutDescriptor::toy(4);
  m.fps = 20.0f;
  m.frames.setZero(2, m.layout.d);
  for (long t = 0; t < 2; ++t)
    for (int j = 0; j < 4; ++j) m.frames(t, 3 * j + 1) = 0.3f * j;
  const double bone =
      mean_bone_length(recover_joints(m), skeleton_parents(m.layout));
  CHECK(bone == doctest::Approx(0.3).epsilon(1e-6));
}
