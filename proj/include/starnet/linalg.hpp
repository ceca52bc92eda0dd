#pragma once

#include <cstddef>
#include <vector>

#include "starnet/matrix.hpp"

namespace starnet {

// Columns whose pivot falls below pivot_max * kDefaultRankTol are treated as
// dependent: the strict solves refuse such systems, the truncated solve zeroes
// their coefficients.
inline constexpr double kDefaultRankTol = 1e-10;

// Householder QR with column pivoting of an m x n matrix A (m >= n).
// Storage is transposed: qrt is n x m and row j holds what became column j of
// A * P after elimination, so every inner loop runs over contiguous memory.
// Row j of qrt = [R(0,j) ... R(j,j), v_{j+1} ... v_{m-1}] where v is the
// scaled Householder tail for step j.
struct QrFactorization {
    Matrix qrt;                     // n x m, transposed factored storage
    std::vector<double> tau;        // n Householder coefficients
    std::vector<std::size_t> perm;  // column permutation: factored col j is A col perm[j]
    double pivot_max = 0.0;         // largest |R(j,j)|
    double pivot_min = 0.0;         // smallest |R(j,j)|
};

// Factorizes A (m x n, m >= n). Throws ShapeMismatch when m < n.
QrFactorization qr_factorize(const Matrix& a);

// Same factorization, but the input is already transposed (n x m, row j =
// column j of A). Saves a transpose when the caller builds A column-wise.
QrFactorization qr_factorize_transposed(Matrix at);

// Solves A x = b in the least-squares sense for one right-hand side using a
// prior factorization. b has qr.qrt.cols() entries; the result has
// qr.qrt.rows() entries. Throws RankDeficient when the pivot ratio falls
// below rank_tol.
std::vector<double> qr_solve(const QrFactorization& qr, const std::vector<double>& b,
                             double rank_tol = kDefaultRankTol);

// Like qr_solve, but tolerates rank deficiency instead of throwing: the rank
// is the count of leading pivots above rank_tol * |R(0,0)|, the solve runs on
// that leading block, and the remaining (dependent) coefficients are zero.
// On a consistent system this still reproduces the right-hand side exactly;
// on a full-rank system it matches qr_solve bit for bit.
std::vector<double> qr_solve_truncated(const QrFactorization& qr, const std::vector<double>& b,
                                       double rank_tol = kDefaultRankTol);

// Least-squares solutions plus the exact residual norms ||A x_k - b_k|| for
// every column of B, computed by re-applying A to the solution.
struct SolveReport {
    Matrix solution;                     // n x k
    std::vector<double> residual_norms;  // k entries
};

// Minimizes ||A X - B||_F column by column. A is m x n with m >= n and full
// column rank; B is m x k.
SolveReport least_squares(const Matrix& a, const Matrix& b, double rank_tol = kDefaultRankTol);

// Moore-Penrose pseudoinverse of a full-column-rank matrix, n x m, obtained
// by solving against the identity.
Matrix pseudoinverse(const Matrix& a, double rank_tol = kDefaultRankTol);

// True when A has m >= n and the QR pivot ratio clears rank_tol.
bool column_rank_ok(const Matrix& a, double rank_tol = kDefaultRankTol);

// Explicit residual norms ||A x_k - b_k|| for an existing solution, used to
// report confidence without re-solving.
std::vector<double> residual_norms(const Matrix& a, const Matrix& x, const Matrix& b);

} // namespace starnet
