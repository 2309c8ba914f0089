#ifndef EVSSM_HIPPO_HPP
#define EVSSM_HIPPO_HPP

#include "evssm/common.hpp"

namespace evssm::model {

// Real symmetric memory operator and its orthogonal eigen-decomposition,
// S = V diag(eigenvalues) V^T with eigenvalues sorted ascending.
struct HippoOperator {
  Mat s;             // symmetric operator, H x H
  Vec eigenvalues;   // ascending
  Mat eigenvectors;  // columns are eigenvectors, orthogonal
  Vec rank_one;      // the sqrt(i + 1/2) correction vector
};

// Builds the operator from a lower-triangular kernel with entries
// sqrt(1+2i)*sqrt(1+2j) for j <= i, diagonal shifted down by the row index,
// plus the rank-one correction p p^T, symmetrized as (M + M^T)/2.
HippoOperator hippo_init(std::size_t h);

// Cyclic Jacobi eigensolver for symmetric matrices. Returns (eigenvalues ascending,
// eigenvector columns). Off-diagonal mass shrinks monotonically, so iteration
// terminates; accuracy is limited only by rounding.
void symmetric_eigh(const Mat& s, Vec& eigenvalues, Mat& eigenvectors);

}  // namespace evssm::model

#endif  // EVSSM_HIPPO_HPP
