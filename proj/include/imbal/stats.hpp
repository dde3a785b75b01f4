#pragma once

#include <span>

namespace imbal {

/// Percentile p in [0,100] with linear interpolation between closest ranks:
/// rank = p/100 * (n - 1) on the sorted sample. Throws on empty input.
double percentile(std::span<const double> values, double p);

double mean(std::span<const double> values);

/// Population standard deviation (divides by n).
double population_std(std::span<const double> values);

}  // namespace imbal
