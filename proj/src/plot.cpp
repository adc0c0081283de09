#include "moma/plot.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace moma {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string render_skeleton_svg(const MotionSequence& motion, int stride) {
  MOMA_CHECK(stride >= 1, "plot: stride must be >= 1");
  motion.validate();
  const Mat joints = recover_joints(motion);
  const std::vector<int> parents = skeleton_parents(motion.layout);
  const long t_len = joints.rows();
  const long n_poses = (t_len + stride - 1) / stride;
  const int joint_count = motion.layout.joint_count;

  // Oblique projection; z adds a slight diagonal offset.
  auto proj_u = [&](double x, double z) { return x + 0.35 * z; };
  auto proj_v = [&](double y, double z) { return -y - 0.18 * z; };

  double min_u = 1e300, max_u = -1e300, min_v = 1e300, max_v = -1e300;
  for (long t = 0; t < t_len; t += stride) {
    for (int j = 0; j < joint_count; ++j) {
      const double u = proj_u(joints(t, 3 * j), joints(t, 3 * j + 2));
      const double v = proj_v(joints(t, 3 * j + 1), joints(t, 3 * j + 2));
      min_u = std::min(min_u, u);
      max_u = std::max(max_u, u);
      min_v = std::min(min_v, v);
      max_v = std::max(max_v, v);
    }
  }
  const double pose_w = std::max(1e-6, max_u - min_u);
  const double pose_h = std::max(1e-6, max_v - min_v);
  const double unit = 100.0 / std::max(pose_w, pose_h);
  const double cell_w = pose_w * unit + 30.0;
  const double height = pose_h * unit + 40.0;
  const double width = cell_w * static_cast<double>(n_poses) + 10.0;

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << fmt(width)
      << "\" height=\"" << fmt(height) << "\" viewBox=\"0 0 " << fmt(width)
      << " " << fmt(height) << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";

  long pose_idx = 0;
  for (long t = 0; t < t_len; t += stride, ++pose_idx) {
    const double ox = 20.0 + cell_w * static_cast<double>(pose_idx);
    const double oy = 20.0;
    svg << "<g stroke=\"#2060a0\" stroke-width=\"2\" fill=\"#c03030\">\n";
    for (int j = 0; j < joint_count; ++j) {
      const int p = parents[static_cast<size_t>(j)];
      const double uj = (proj_u(joints(t, 3 * j), joints(t, 3 * j + 2)) - min_u) * unit + ox;
      const double vj = (proj_v(joints(t, 3 * j + 1), joints(t, 3 * j + 2)) - min_v) * unit + oy;
      if (p >= 0) {
        const double up = (proj_u(joints(t, 3 * p), joints(t, 3 * p + 2)) - min_u) * unit + ox;
        const double vp = (proj_v(joints(t, 3 * p + 1), joints(t, 3 * p + 2)) - min_v) * unit + oy;
        svg << "<line x1=\"" << fmt(up) << "\" y1=\"" << fmt(vp) << "\" x2=\""
            << fmt(uj) << "\" y2=\"" << fmt(vj) << "\"/>\n";
      }
      svg << "<circle cx=\"" << fmt(uj) << "\" cy=\"" << fmt(vj)
          << "\" r=\"2.5\"/>\n";
    }
    svg << "</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void plot_motion(const MotionSequence& motion, int stride,
                 const std::string& out_path) {
  const std::string svg = render_skeleton_svg(motion, stride);
  std::ofstream os(out_path, std::ios::binary);
  MOMA_CHECK(os.good(), "plot: cannot open " + out_path);
  os << svg;
}

}  // namespace moma
