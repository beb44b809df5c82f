#pragma once

#include <vector>

namespace dpnet {

// Sparse feature vector with ascending 0-based indices.
struct SparseVec {
  int dim = 0;
  std::vector<int> idx;
  std::vector<double> val;
};

}  // namespace dpnet
