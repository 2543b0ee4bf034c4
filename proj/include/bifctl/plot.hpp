#pragma once

#include <string>

namespace bifctl {

/// SVG of a diagram CSV (branch_id,lambda,diagnostic,is_fold): one polyline
/// per branch, folds drawn as circles.
std::string diagram_svg(const std::string& csv);

/// SVG of an optimization history CSV: log10 objective of accepted steps
/// against iteration, rejected attempts as crosses.
std::string history_svg(const std::string& csv);

/// Picks diagram_svg or history_svg from the CSV header.
std::string plot_svg(const std::string& csv);

}  // namespace bifctl
