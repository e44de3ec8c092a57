#pragma once

#include <span>
#include <string>

#include "segx/evaluation.hpp"

namespace segx::cli {

/// One table per (metric, scale): rows are (source, attack, iter), columns
/// are targets.
std::string markdown_report(std::span<const MetricsRecord> rows);

/// Value against attack iteration, one polyline per (source, attack, target,
/// scale).
std::string svg_report(std::span<const MetricsRecord> rows);

}  // namespace segx::cli
