#pragma once

#include <Eigen/Core>
#include <string>
#include <vector>

#include "moma/rng.hpp"
#include "moma/tensor.hpp"

namespace moma {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class LayoutKind : uint8_t { kToy = 0, kHumanml3d = 1 };

struct LayoutDescriptor {
  int d = 0;           // feature width
  int joint_count = 0;
  int v_lo = 0, v_hi = 0;  // velocity block [v_lo, v_hi)
  LayoutKind kind = LayoutKind::kToy;

  void validate() const;
  static LayoutDescriptor toy(int joint_count);
  static LayoutDescriptor humanml3d();  // 263 dims, 22 joints, V = [193, 259)
};

// A motion clip: T frames of d features. Stored as float32, matching the
// on-disk format, so save/load round-trips are bit-exact.
struct MotionSequence {
  MatF frames;  // T x d
  float fps = 20.0f;
  LayoutDescriptor layout;

  long length() const { return frames.rows(); }
  int dim() const { return static_cast<int>(frames.cols()); }
  void validate() const;
  Mat frames_d() const { return frames.cast<double>(); }
};

struct NormStats {
  Eigen::VectorXd mean, std;  // length d; std floored at 1e-6
  int dim() const { return static_cast<int>(mean.size()); }
};

constexpr double kStdFloor = 1e-6;

NormStats compute_stats(const std::vector<MotionSequence>& corpus);
MotionSequence normalize(const MotionSequence& x, const NormStats& s);
MotionSequence denormalize(const MotionSequence& x, const NormStats& s);
Mat normalize_frames(const Mat& frames, const NormStats& s);
Mat denormalize_frames(const Mat& frames, const NormStats& s);

// Binary motion file: magic "MOMA", version u32, d u32, T u32, fps f32,
// layout-kind u8, joint_count u32, velocity_range 2xu32, then T*d float32
// row-major, all little-endian.
void save_motion(const MotionSequence& x, const std::string& path);
MotionSequence load_motion(const std::string& path);

struct ToyCorpusSpec {
  int n_classes = 8;
  int n_per_class = 250;
  int joint_count = 8;
  int t_min = 32, t_max = 64;
  float fps = 20.0f;
  uint64_t seed = 0;

  void validate() const;
};

struct Caption {
  std::string text;
  int archetype = 0;
};

struct ToyCorpus {
  std::vector<MotionSequence> sequences;
  std::vector<Caption> captions;
};

// Deterministic procedural corpus: each archetype is a distinct family of
// per-joint sinusoids; the velocity block holds exact fps-scaled finite
// differences of the joint block.
ToyCorpus generate_toy_corpus(const ToyCorpusSpec& spec);

// The caption template used for archetype `a`.
std::string toy_caption_template(int archetype);

// T x (J*3) joint positions, flattened row-major per frame (x,y,z per joint).
Mat recover_joints(const MotionSequence& x);

// Kinematic chain as a parent index per joint (-1 for root).
std::vector<int> skeleton_parents(const LayoutDescriptor& layout);

// Mean bone length over all frames of `joints` (T x J*3) given parents.
double mean_bone_length(const Mat& joints, const std::vector<int>& parents);

// Corpus manifest: "relative_path<TAB>caption" per line.
void write_corpus_manifest(const std::string& path,
                           const std::vector<std::string>& files,
                           const std::vector<Caption>& captions);
struct ManifestEntry {
  std::string file;
  std::string caption;
};
std::vector<ManifestEntry> read_corpus_manifest(const std::string& path);

// Loads every sequence named by a manifest (paths relative to its directory).
struct LabeledCorpus {
  std::vector<MotionSequence> sequences;
  std::vector<std::string> captions;
};
LabeledCorpus load_labeled_corpus(const std::string& manifest_path);

}  // namespace moma
