#include "starnet/linalg.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <utility>

#include "starnet/errors.hpp"

namespace starnet {
namespace {

double column_tail_norm(const double* col, std::size_t from, std::size_t m) {
    double s = 0.0;
    for (std::size_t i = from; i < m; ++i) s += col[i] * col[i];
    return std::sqrt(s);
}

std::string short_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

void check_rhs_shape(const QrFactorization& qr, const std::vector<double>& b) {
    if (b.size() != qr.qrt.cols()) {
        throw ShapeMismatch("right-hand side has " + std::to_string(b.size()) +
                            " entries, expected " + std::to_string(qr.qrt.cols()));
    }
}

// Applies Q^T to b, back-substitutes the leading rank x rank block of R, and
// scatters through the column permutation, leaving dependent coefficients at
// zero. With rank == n this is the plain full-rank solve.
std::vector<double> solve_leading_block(const QrFactorization& qr, const std::vector<double>& b,
                                        std::size_t rank) {
    const std::size_t n = qr.qrt.rows();
    const std::size_t m = qr.qrt.cols();

    // y = Q^T b, applying the stored reflectors in order.
    std::vector<double> y = b;
    for (std::size_t step = 0; step < n; ++step) {
        const double tau = qr.tau[step];
        if (tau == 0.0) continue;
        const double* v = qr.qrt.row_ptr(step);
        double dot = y[step];
        for (std::size_t i = step + 1; i < m; ++i) dot += v[i] * y[i];
        const double scale = tau * dot;
        y[step] -= scale;
        for (std::size_t i = step + 1; i < m; ++i) y[i] -= scale * v[i];
    }

    // Back-substitute R z = y[0..rank); R(i,j) for i <= j lives at qrt(j, i).
    std::vector<double> z(n, 0.0);
    for (std::size_t ii = rank; ii-- > 0;) {
        double s = y[ii];
        for (std::size_t j = ii + 1; j < rank; ++j) s -= qr.qrt(j, ii) * z[j];
        z[ii] = s / qr.qrt(ii, ii);
    }

    // Undo the column permutation: x[perm[j]] = z[j].
    std::vector<double> x(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) x[qr.perm[j]] = z[j];
    return x;
}

} // namespace

QrFactorization qr_factorize(const Matrix& a) {
    return qr_factorize_transposed(a.transposed());
}

QrFactorization qr_factorize_transposed(Matrix at) {
    const std::size_t n = at.rows();
    const std::size_t m = at.cols();
    if (m < n) {
        throw ShapeMismatch("least-squares system is underdetermined: " + std::to_string(m) +
                            " equations for " + std::to_string(n) + " unknowns");
    }
    if (n == 0) throw ShapeMismatch("cannot factorize a matrix with zero columns");

    QrFactorization qr;
    qr.tau.assign(n, 0.0);
    qr.perm.resize(n);
    for (std::size_t j = 0; j < n; ++j) qr.perm[j] = j;

    for (std::size_t step = 0; step < n; ++step) {
        // Column pivoting: recompute the remaining tail norms and bring the
        // largest column forward. Recomputing (rather than downdating) keeps
        // the choice exact and independent of accumulated rounding shortcuts;
        // ties resolve to the lowest index.
        std::size_t best = step;
        double best_norm = column_tail_norm(at.row_ptr(step), step, m);
        for (std::size_t j = step + 1; j < n; ++j) {
            const double norm_j = column_tail_norm(at.row_ptr(j), step, m);
            if (norm_j > best_norm) {
                best_norm = norm_j;
                best = j;
            }
        }
        if (best != step) {
            double* rs = at.row_ptr(step);
            double* rb = at.row_ptr(best);
            for (std::size_t i = 0; i < m; ++i) std::swap(rs[i], rb[i]);
            std::swap(qr.perm[step], qr.perm[best]);
        }

        double* col = at.row_ptr(step);
        const double normx = best_norm;
        if (normx == 0.0) {
            // Entire remaining column is zero: R(step,step) = 0, no reflector.
            qr.tau[step] = 0.0;
            continue;
        }
        const double x0 = col[step];
        const double alpha = x0 > 0.0 ? -normx : normx;
        const double beta = x0 - alpha;
        qr.tau[step] = -beta / alpha;
        col[step] = alpha;
        for (std::size_t i = step + 1; i < m; ++i) col[i] /= beta;

        // Apply the reflector H = I - tau * v v^T (v_step = 1) to the
        // remaining columns, each of which is a contiguous row of `at`.
        const double tau = qr.tau[step];
        for (std::size_t j = step + 1; j < n; ++j) {
            double* cj = at.row_ptr(j);
            double dot = cj[step];
            for (std::size_t i = step + 1; i < m; ++i) dot += col[i] * cj[i];
            const double scale = tau * dot;
            cj[step] -= scale;
            for (std::size_t i = step + 1; i < m; ++i) cj[i] -= scale * col[i];
        }
    }

    qr.pivot_max = 0.0;
    qr.pivot_min = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double p = std::fabs(at(j, j));
        if (j == 0) {
            qr.pivot_max = qr.pivot_min = p;
        } else {
            if (p > qr.pivot_max) qr.pivot_max = p;
            if (p < qr.pivot_min) qr.pivot_min = p;
        }
    }
    qr.qrt = std::move(at);
    return qr;
}

std::vector<double> qr_solve(const QrFactorization& qr, const std::vector<double>& b,
                             double rank_tol) {
    check_rhs_shape(qr, b);
    if (qr.pivot_min <= rank_tol * qr.pivot_max || qr.pivot_max == 0.0) {
        throw RankDeficient("matrix is rank deficient: pivot ratio " +
                            short_double(qr.pivot_max == 0.0 ? 0.0
                                                             : qr.pivot_min / qr.pivot_max) +
                            " is below tolerance " + short_double(rank_tol));
    }
    return solve_leading_block(qr, b, qr.qrt.rows());
}

std::vector<double> qr_solve_truncated(const QrFactorization& qr, const std::vector<double>& b,
                                       double rank_tol) {
    check_rhs_shape(qr, b);
    // Column pivoting keeps |R(i,i)| non-increasing, so the rank is where the
    // diagonal first drops below the threshold.
    const std::size_t n = qr.qrt.rows();
    std::size_t rank = 0;
    while (rank < n && std::fabs(qr.qrt(rank, rank)) > rank_tol * qr.pivot_max) ++rank;
    return solve_leading_block(qr, b, rank);
}

SolveReport least_squares(const Matrix& a, const Matrix& b, double rank_tol) {
    if (a.rows() != b.rows()) {
        throw ShapeMismatch("matrix has " + std::to_string(a.rows()) +
                            " rows but right-hand side has " + std::to_string(b.rows()));
    }
    const QrFactorization qr = qr_factorize(a);
    const std::size_t n = a.cols();
    const std::size_t k = b.cols();

    Matrix x(n, k);
    std::vector<double> col(a.rows());
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t r = 0; r < a.rows(); ++r) col[r] = b(r, c);
        const std::vector<double> xc = qr_solve(qr, col, rank_tol);
        for (std::size_t r = 0; r < n; ++r) x(r, c) = xc[r];
    }

    SolveReport report{std::move(x), {}};
    report.residual_norms = residual_norms(a, report.solution, b);
    return report;
}

Matrix pseudoinverse(const Matrix& a, double rank_tol) {
    const Matrix eye = Matrix::identity(a.rows());
    SolveReport report = least_squares(a, eye, rank_tol);
    return std::move(report.solution);
}

bool column_rank_ok(const Matrix& a, double rank_tol) {
    if (a.rows() < a.cols() || a.cols() == 0) return false;
    const QrFactorization qr = qr_factorize(a);
    return qr.pivot_max > 0.0 && qr.pivot_min > rank_tol * qr.pivot_max;
}

std::vector<double> residual_norms(const Matrix& a, const Matrix& x, const Matrix& b) {
    if (a.cols() != x.rows() || a.rows() != b.rows() || x.cols() != b.cols()) {
        throw ShapeMismatch("residual shapes do not agree");
    }
    std::vector<double> norms(b.cols(), 0.0);
    std::vector<double> r(b.rows());
    for (std::size_t c = 0; c < b.cols(); ++c) {
        for (std::size_t i = 0; i < b.rows(); ++i) r[i] = -b(i, c);
        for (std::size_t i = 0; i < a.rows(); ++i) {
            const double* arow = a.row_ptr(i);
            double acc = r[i];
            for (std::size_t j = 0; j < a.cols(); ++j) acc += arow[j] * x(j, c);
            r[i] = acc;
        }
        double s = 0.0;
        for (std::size_t i = 0; i < b.rows(); ++i) s += r[i] * r[i];
        norms[c] = std::sqrt(s);
    }
    return norms;
}

} // namespace starnet
