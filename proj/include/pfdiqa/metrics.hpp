#pragma once

#include <vector>

namespace pfd {

// Spearman rank correlation with average-rank tie handling.
double srcc(const std::vector<double>& pred, const std::vector<double>& truth);

// Pearson linear correlation.
double plcc(const std::vector<double>& pred, const std::vector<double>& truth);

// Average ranks (1-based); ties share the mean of their covered positions.
std::vector<double> average_ranks(const std::vector<double>& v);

}  // namespace pfd
