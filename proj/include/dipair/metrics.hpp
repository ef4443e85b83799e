#pragma once
#include <vector>

namespace dipair {

// Probability that a random positive outscores a random negative, ties
// counted half. Rank-statistic computation; the O(n^2) pairwise count is
// kept in the tests as the oracle.
double auc_roc(const std::vector<float>& scores, const std::vector<int>& labels);

// Sample Pearson correlation.
double pearson(const std::vector<float>& x, const std::vector<float>& y);

}  // namespace dipair
