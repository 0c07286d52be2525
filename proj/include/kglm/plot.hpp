#pragma once

#include <map>
#include <string>

#include "kglm/train.hpp"

namespace kglm {

// Per-lesson loss curves on a shared axis.
void write_loss_svg(const RunLog& log, const std::string& path);

// Bar chart of metric values in [0, 1]; count_* keys render in the caption.
void write_metrics_svg(const std::map<std::string, double>& kv, const std::string& path);

}  // namespace kglm
