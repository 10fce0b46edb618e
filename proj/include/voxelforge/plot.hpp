#pragma once

// Standalone SVG with two line charts: training loss per epoch, and mean plus
// per-class validation dice per epoch. Each sample is a
// <circle class="pt series-NAME"> element; non-finite values are left out.

#include <string>

#include "voxelforge/trainer.hpp"

namespace vxf {

std::string render_metrics_svg(const MetricsLog& log);

}  // namespace vxf
