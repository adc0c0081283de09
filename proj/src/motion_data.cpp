#include "moma/motion_data.hpp"

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace moma {

namespace {

constexpr uint32_t kMotionFormatVersion = 1;
const char kMagic[4] = {'M', 'O', 'M', 'A'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T& v) {
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

void LayoutDescriptor::validate() const {
  MOMA_CHECK(d > 0, "layout: d must be > 0");
  MOMA_CHECK(joint_count > 0, "layout: joint_count must be > 0");
  MOMA_CHECK(0 <= v_lo && v_lo < v_hi && v_hi <= d,
             "layout: velocity range must satisfy 0 <= v_lo < v_hi <= d");
  if (kind == LayoutKind::kToy)
    MOMA_CHECK(d >= 3 * joint_count, "layout: toy layout needs 3*joints dims");
}

LayoutDescriptor LayoutDescriptor::toy(int joint_count) {
  LayoutDescriptor l;
  l.kind = LayoutKind::kToy;
  l.joint_count = joint_count;
  l.d = 6 * joint_count;
  l.v_lo = 3 * joint_count;
  l.v_hi = 6 * joint_count;
  l.validate();
  return l;
}

LayoutDescriptor LayoutDescriptor::humanml3d() {
  LayoutDescriptor l;
  l.kind = LayoutKind::kHumanml3d;
  l.joint_count = 22;
  l.d = 263;
  l.v_lo = 193;
  l.v_hi = 259;
  l.validate();
  return l;
}

void MotionSequence::validate() const {
  MOMA_CHECK(frames.rows() >= 1, "motion: T must be >= 1");
  MOMA_CHECK(fps > 0.0f, "motion: fps must be > 0");
  MOMA_CHECK(frames.cols() == layout.d, "motion: frame width != layout.d");
  MOMA_CHECK(frames.allFinite(), "motion: non-finite values");
  layout.validate();
}

NormStats compute_stats(const std::vector<MotionSequence>& corpus) {
  MOMA_CHECK(!corpus.empty(), "compute_stats: empty corpus");
  const int d = corpus[0].dim();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(d);
  long n = 0;
  for (const auto& seq : corpus) {
    MOMA_CHECK(seq.dim() == d, "compute_stats: dimension mismatch");
    const Mat f = seq.frames_d();
    sum += f.colwise().sum().transpose();
    sumsq += f.array().square().colwise().sum().matrix().transpose();
    n += f.rows();
  }
  NormStats s;
  s.mean = sum / static_cast<double>(n);
  Eigen::VectorXd var =
      sumsq / static_cast<double>(n) - s.mean.cwiseProduct(s.mean);
  s.std = var.cwiseMax(0.0).cwiseSqrt().cwiseMax(kStdFloor);
  return s;
}

Mat normalize_frames(const Mat& frames, const NormStats& s) {
  MOMA_CHECK(frames.cols() == s.mean.size(), "normalize: dimension mismatch");
  return (frames.rowwise() - s.mean.transpose()).array().rowwise() /
         s.std.transpose().array();
}

Mat denormalize_frames(const Mat& frames, const NormStats& s) {
  MOMA_CHECK(frames.cols() == s.mean.size(), "denormalize: dimension mismatch");
  return (frames.array().rowwise() * s.std.transpose().array()).matrix()
             .rowwise() +
         s.mean.transpose();
}

MotionSequence normalize(const MotionSequence& x, const NormStats& s) {
  MotionSequence out = x;
  out.frames = normalize_frames(x.frames_d(), s).cast<float>();
  return out;
}

MotionSequence denormalize(const MotionSequence& x, const NormStats& s) {
  MotionSequence out = x;
  out.frames = denormalize_frames(x.frames_d(), s).cast<float>();
  return out;
}

void save_motion(const MotionSequence& x, const std::string& path) {
  x.validate();
  std::ofstream os(path, std::ios::binary);
  MOMA_CHECK(os.good(), "save_motion: cannot open " + path);
  os.write(kMagic, 4);
  write_pod(os, kMotionFormatVersion);
  write_pod(os, static_cast<uint32_t>(x.layout.d));
  write_pod(os, static_cast<uint32_t>(x.frames.rows()));
  write_pod(os, x.fps);
  write_pod(os, static_cast<uint8_t>(x.layout.kind));
  write_pod(os, static_cast<uint32_t>(x.layout.v_lo));
  write_pod(os, static_cast<uint32_t>(x.layout.v_hi));
  os.write(reinterpret_cast<const char*>(x.frames.data()),
           static_cast<std::streamsize>(sizeof(float)) * x.frames.size());
  MOMA_CHECK(os.good(), "save_motion: write failed for " + path);
}

MotionSequence load_motion(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  MOMA_CHECK(is.good(), "load_motion: cannot open " + path);
  char magic[4];
  is.read(magic, 4);
  MOMA_CHECK(is && std::memcmp(magic, kMagic, 4) == 0,
             "load_motion: bad magic in " + path);
  uint32_t version = 0, d = 0, t = 0, v_lo = 0, v_hi = 0;
  float fps = 0.0f;
  uint8_t kind = 0;
  MOMA_CHECK(read_pod(is, version) && read_pod(is, d) && read_pod(is, t) &&
                 read_pod(is, fps) && read_pod(is, kind) &&
                 read_pod(is, v_lo) && read_pod(is, v_hi),
             "load_motion: truncated header in " + path);
  MOMA_CHECK(version == kMotionFormatVersion,
             "load_motion: unsupported format version in " + path);
  MOMA_CHECK(d > 0, "load_motion: d = 0 rejected in " + path);
  MOMA_CHECK(t > 0, "load_motion: T = 0 rejected in " + path);
  MOMA_CHECK(kind <= 1, "load_motion: unknown layout kind in " + path);

  MotionSequence x;
  x.fps = fps;
  x.layout.kind = static_cast<LayoutKind>(kind);
  x.layout.d = static_cast<int>(d);
  x.layout.v_lo = static_cast<int>(v_lo);
  x.layout.v_hi = static_cast<int>(v_hi);
  x.layout.joint_count = x.layout.kind == LayoutKind::kToy
                             ? static_cast<int>(v_lo) / 3
                             : 22;
  x.frames.resize(t, d);
  const std::streamsize want =
      static_cast<std::streamsize>(sizeof(float)) * x.frames.size();
  is.read(reinterpret_cast<char*>(x.frames.data()), want);
  const std::streamsize got = is.gcount();
  if (got != want) {
    std::ostringstream msg;
    msg << "load_motion: truncated data in " << path << ": expected " << want
        << " bytes, found " << got;
    throw Error(msg.str());
  }
  x.validate();
  return x;
}

void ToyCorpusSpec::validate() const {
  MOMA_CHECK(n_classes >= 2, "toy spec: n_classes must be >= 2");
  MOMA_CHECK(n_per_class >= 1, "toy spec: n_per_class must be >= 1");
  MOMA_CHECK(joint_count >= 2, "toy spec: joint_count must be >= 2");
  MOMA_CHECK(1 <= t_min && t_min <= t_max, "toy spec: bad length range");
  MOMA_CHECK(t_max <= 196, "toy spec: t_max must be <= 196");
  MOMA_CHECK(fps > 0.0f, "toy spec: fps must be > 0");
}

std::string toy_caption_template(int archetype) {
  static const char* kVerbs[] = {"waves",  "bounces",   "twists", "sways",
                                 "kicks",  "spins",     "marches", "stretches"};
  if (archetype < 8) {
    std::ostringstream os;
    os << "a person " << kVerbs[archetype] << " with a steady rhythm";
    return os.str();
  }
  std::ostringstream os;
  os << "a person performs pattern " << archetype << " repeatedly";
  return os.str();
}

ToyCorpus generate_toy_corpus(const ToyCorpusSpec& spec) {
  spec.validate();
  const int J = spec.joint_count;
  const LayoutDescriptor layout = LayoutDescriptor::toy(J);
  constexpr double kBone = 0.3;

  ToyCorpus corpus;
  corpus.sequences.reserve(static_cast<size_t>(spec.n_classes) * spec.n_per_class);
  corpus.captions.reserve(corpus.sequences.capacity());

  for (int a = 0; a < spec.n_classes; ++a) {
    // Archetype-specific kinematic family.
    const double freq = 0.45 + 0.21 * a;
    const double joint_phase = 0.35 + 0.17 * a;
    const double amp = 0.10 + 0.02 * (a % 4);
    const double wx = 0.55 + 0.40 * std::cos(1.1 * a);
    const double wy = 0.45 + 0.30 * std::sin(1.7 * a + 0.5);
    const double wz = 0.55 + 0.40 * std::sin(0.9 * a + 2.1);
    const double ry = 1.0 + 0.5 * ((a + 1) % 3);
    const double rz = 0.5 + 0.5 * (a % 2);

    for (int i = 0; i < spec.n_per_class; ++i) {
      RngStream rng = derive_stream(spec.seed, "toy-sample",
                                    static_cast<uint64_t>(a),
                                    static_cast<uint64_t>(i));
      const int T = spec.t_min +
                    static_cast<int>(rng.integer(
                        static_cast<uint64_t>(spec.t_max - spec.t_min + 1)));
      const double phase0 = rng.uniform(-0.25, 0.25);
      const double amp_jit = 1.0 + rng.uniform(-0.1, 0.1);
      const double freq_jit = 1.0 + rng.uniform(-0.04, 0.04);

      MotionSequence seq;
      seq.fps = spec.fps;
      seq.layout = layout;
      seq.frames.setZero(T, layout.d);
      const double f = freq * freq_jit;
      const double A = amp * amp_jit;
      for (int t = 0; t < T; ++t) {
        const double tau = 2.0 * M_PI * f * t / spec.fps;
        for (int j = 0; j < J; ++j) {
          const double pj = joint_phase * j + phase0;
          const double px =
              A * wx * std::sin(tau + pj) + 0.002 * rng.normal();
          const double py = kBone * j +
                            A * wy * std::sin(ry * tau + 1.3 * pj + 1.0) +
                            0.002 * rng.normal();
          const double pz =
              A * wz * std::cos(rz * tau + 0.7 * pj + 2.0) + 0.002 * rng.normal();
          seq.frames(t, 3 * j + 0) = static_cast<float>(px);
          seq.frames(t, 3 * j + 1) = static_cast<float>(py);
          seq.frames(t, 3 * j + 2) = static_cast<float>(pz);
        }
      }
      // Velocity block: exact float finite differences of the stored joints.
      for (int t = 1; t < T; ++t)
        for (int c = 0; c < 3 * J; ++c)
          seq.frames(t, layout.v_lo + c) =
              spec.fps * (seq.frames(t, c) - seq.frames(t - 1, c));
      corpus.sequences.push_back(std::move(seq));
      corpus.captions.push_back(Caption{toy_caption_template(a), a});
    }
  }
  return corpus;
}

namespace {

Mat recover_joints_toy(const MotionSequence& x) {
  const int J = x.layout.joint_count;
  return x.frames_d().leftCols(3 * J);
}

Mat recover_joints_humanml3d(const MotionSequence& x) {
  const Mat f = x.frames_d();
  const long T = f.rows();
  const int J = x.layout.joint_count;
  MOMA_CHECK(x.layout.d >= 4 + (J - 1) * 3,
             "recover_joints: frame too narrow for RIC block");
  Mat joints(T, 3 * J);

  // Accumulated root yaw: theta_t = sum of rotation velocities before t.
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(T);
  for (long t = 1; t < T; ++t) theta(t) = theta(t - 1) + f(t - 1, 0);

  // Root XZ: per-step local velocity rotated into the world frame by the
  // accumulated yaw, then integrated.
  double rx = 0.0, rz = 0.0;
  for (long t = 0; t < T; ++t) {
    if (t >= 1) {
      const double c = std::cos(theta(t)), s = std::sin(theta(t));
      const double vx = f(t - 1, 1), vz = f(t - 1, 2);
      rx += c * vx - s * vz;
      rz += s * vx + c * vz;
    }
    const double c = std::cos(theta(t)), s = std::sin(theta(t));
    joints(t, 0) = rx;
    joints(t, 1) = f(t, 3);  // root height channel
    joints(t, 2) = rz;
    for (int j = 1; j < J; ++j) {
      const double lx = f(t, 4 + 3 * (j - 1) + 0);
      const double ly = f(t, 4 + 3 * (j - 1) + 1);
      const double lz = f(t, 4 + 3 * (j - 1) + 2);
      joints(t, 3 * j + 0) = c * lx - s * lz + rx;
      joints(t, 3 * j + 1) = ly;
      joints(t, 3 * j + 2) = s * lx + c * lz + rz;
    }
  }
  return joints;
}

}  // namespace

Mat recover_joints(const MotionSequence& x) {
  switch (x.layout.kind) {
    case LayoutKind::kToy:
      return recover_joints_toy(x);
    case LayoutKind::kHumanml3d:
      return recover_joints_humanml3d(x);
  }
  throw Error("recover_joints: unknown layout kind");
}

std::vector<int> skeleton_parents(const LayoutDescriptor& layout) {
  if (layout.kind == LayoutKind::kToy) {
    std::vector<int> p(layout.joint_count);
    p[0] = -1;
    for (int j = 1; j < layout.joint_count; ++j) p[j] = j - 1;
    return p;
  }
  // SMPL-style 22-joint chain used by the 263-dim representation.
  return {-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19};
}

double mean_bone_length(const Mat& joints, const std::vector<int>& parents) {
  const long T = joints.rows();
  double total = 0.0;
  long count = 0;
  for (size_t j = 0; j < parents.size(); ++j) {
    if (parents[j] < 0) continue;
    const long cj = 3 * static_cast<long>(j);
    const long cp = 3 * static_cast<long>(parents[j]);
    for (long t = 0; t < T; ++t) {
      const double dx = joints(t, cj) - joints(t, cp);
      const double dy = joints(t, cj + 1) - joints(t, cp + 1);
      const double dz = joints(t, cj + 2) - joints(t, cp + 2);
      total += std::sqrt(dx * dx + dy * dy + dz * dz);
      ++count;
    }
  }
  MOMA_CHECK(count > 0, "mean_bone_length: no bones");
  return total / static_cast<double>(count);
}

void write_corpus_manifest(const std::string& path,
                           const std::vector<std::string>& files,
                           const std::vector<Caption>& captions) {
  MOMA_CHECK(files.size() == captions.size(), "manifest: size mismatch");
  std::ofstream os(path, std::ios::binary);
  MOMA_CHECK(os.good(), "manifest: cannot open " + path);
  for (size_t i = 0; i < files.size(); ++i)
    os << files[i] << '\t' << captions[i].text << '\n';
}

std::vector<ManifestEntry> read_corpus_manifest(const std::string& path) {
  std::ifstream is(path);
  MOMA_CHECK(is.good(), "manifest: cannot open " + path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    MOMA_CHECK(tab != std::string::npos, "manifest: missing tab in line: " + line);
    out.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return out;
}

LabeledCorpus load_labeled_corpus(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  const fs::path base = fs::path(manifest_path).parent_path();
  LabeledCorpus corpus;
  for (const auto& e : read_corpus_manifest(manifest_path)) {
    corpus.sequences.push_back(load_motion((base / e.file).string()));
    corpus.captions.push_back(e.caption);
  }
  MOMA_CHECK(!corpus.sequences.empty(), "corpus: manifest listed no sequences");
  return corpus;
}

}  // namespace moma
