#pragma once

#include <string>

#include "moma/motion_data.hpp"

namespace moma {

// Renders stick-figure keyposes every `stride` frames into a single SVG,
// poses laid out left to right. Output bytes are deterministic.
std::string render_skeleton_svg(const MotionSequence& motion, int stride);
void plot_motion(const MotionSequence& motion, int stride,
                 const std::string& out_path);

}  // namespace moma
