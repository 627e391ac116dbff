#pragma once

// Independent reference solvers for the soft-margin SVM dual:
//   maximize  W(a) = sum a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij
//   s.t.      0 <= a_i <= C,  sum a_i y_i = 0
//
// Two methods that share no code with the production optimizer:
//  - exact active-set enumeration: every {lower, upper, free} pattern of the
//    box constraints, solving the stationarity system on the free set
//    (feasible candidates lower-bound the optimum; the optimal pattern is
//    among them for nondegenerate data)
//  - projected gradient ascent with an exact bisection projection onto the
//    box-hyperplane intersection
// The oracle value is the max over both.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace svm_oracle {

inline double dual_value(const std::vector<double>& alpha, const std::vector<int>& y,
                         const std::vector<std::vector<double>>& K) {
    const std::size_t n = alpha.size();
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += alpha[i];
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            obj -= 0.5 * alpha[i] * alpha[j] * y[i] * y[j] * K[i][j];
    return obj;
}

/// Gaussian elimination with partial pivoting; false when near-singular.
inline bool solve_linear(std::vector<std::vector<double>> A, std::vector<double> b,
                         std::vector<double>& x) {
    const std::size_t m = b.size();
    for (std::size_t col = 0; col < m; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < m; ++r)
            if (std::abs(A[r][col]) > std::abs(A[piv][col])) piv = r;
        if (std::abs(A[piv][col]) < 1e-10) return false;
        std::swap(A[piv], A[col]);
        std::swap(b[piv], b[col]);
        for (std::size_t r = col + 1; r < m; ++r) {
            const double f = A[r][col] / A[col][col];
            for (std::size_t c = col; c < m; ++c) A[r][c] -= f * A[col][c];
            b[r] -= f * b[col];
        }
    }
    x.assign(m, 0.0);
    for (std::size_t col = m; col-- > 0;) {
        double s = b[col];
        for (std::size_t c = col + 1; c < m; ++c) s -= A[col][c] * x[c];
        x[col] = s / A[col][col];
    }
    return true;
}

/// Max dual objective over every feasible active-set candidate.
inline double enumerate_patterns(const std::vector<std::vector<double>>& K,
                                 const std::vector<int>& y, double C) {
    const std::size_t n = y.size();
    std::size_t patterns = 1;
    for (std::size_t i = 0; i < n; ++i) patterns *= 3;

    double best = 0.0;  // alpha = 0 is always feasible with W = 0
    std::vector<int> state(n);
    std::vector<double> alpha(n);
    for (std::size_t code = 0; code < patterns; ++code) {
        std::size_t rem = code;
        std::vector<std::size_t> free_idx;
        for (std::size_t i = 0; i < n; ++i) {
            state[i] = static_cast<int>(rem % 3);  // 0: lower, 1: upper, 2: free
            rem /= 3;
            alpha[i] = state[i] == 1 ? C : 0.0;
            if (state[i] == 2) free_idx.push_back(i);
        }

        const std::size_t m = free_idx.size();
        if (m > 0) {
            // stationarity on the free set: sum_jF Q_ij a_j + nu y_i = 1 - sum_fixed Q_ij a_j
            // plus the balance equation; unknowns (a_F, nu)
            std::vector<std::vector<double>> A(m + 1, std::vector<double>(m + 1, 0.0));
            std::vector<double> b(m + 1, 0.0);
            for (std::size_t r = 0; r < m; ++r) {
                const std::size_t i = free_idx[r];
                for (std::size_t c = 0; c < m; ++c) {
                    const std::size_t j = free_idx[c];
                    A[r][c] = y[i] * y[j] * K[i][j];
                }
                A[r][m] = y[i];
                double rhs = 1.0;
                for (std::size_t j = 0; j < n; ++j)
                    if (state[j] == 1) rhs -= y[i] * y[j] * K[i][j] * C;
                b[r] = rhs;
            }
            double fixed_balance = 0.0;
            for (std::size_t j = 0; j < n; ++j)
                if (state[j] == 1) fixed_balance += y[j] * C;
            for (std::size_t c = 0; c < m; ++c) A[m][c] = y[free_idx[c]];
            b[m] = -fixed_balance;

            std::vector<double> sol;
            if (!solve_linear(A, b, sol)) continue;
            bool feasible = true;
            for (std::size_t r = 0; r < m; ++r) {
                if (sol[r] < -1e-9 || sol[r] > C + 1e-9) {
                    feasible = false;
                    break;
                }
                alpha[free_idx[r]] = std::clamp(sol[r], 0.0, C);
            }
            if (!feasible) continue;
        }

        double balance = 0.0;
        for (std::size_t i = 0; i < n; ++i) balance += alpha[i] * y[i];
        if (std::abs(balance) > 1e-7) continue;

        best = std::max(best, dual_value(alpha, y, K));
    }
    return best;
}

/// Exact Euclidean projection onto {0 <= a <= C, sum a_i y_i = 0} via
/// bisection on the balance multiplier.
inline std::vector<double> project(const std::vector<double>& v, const std::vector<int>& y,
                                   double C) {
    const auto balance = [&](double nu) {
        double s = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i)
            s += std::clamp(v[i] - nu * y[i], 0.0, C) * y[i];
        return s;
    };
    double bound = C + 1.0;
    for (double vi : v) bound = std::max(bound, std::abs(vi) + C + 1.0);
    double lo = -bound, hi = bound;  // balance(lo) >= 0 >= balance(hi)
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        (balance(mid) > 0.0 ? lo : hi) = mid;
    }
    const double nu = 0.5 * (lo + hi);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp(v[i] - nu * y[i], 0.0, C);
    return out;
}

inline double projected_gradient(const std::vector<std::vector<double>>& K,
                                 const std::vector<int>& y, double C,
                                 std::size_t iterations = 50000) {
    const std::size_t n = y.size();
    double L = 1e-12;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) L += K[i][j] * K[i][j];
    const double step = 1.0 / std::sqrt(L);

    std::vector<double> alpha(n, 0.0), grad(n), trial(n);
    double best = 0.0;
    for (std::size_t it = 0; it < iterations; ++it) {
        for (std::size_t i = 0; i < n; ++i) {
            double qa = 0.0;
            for (std::size_t j = 0; j < n; ++j) qa += y[i] * y[j] * K[i][j] * alpha[j];
            grad[i] = 1.0 - qa;
        }
        for (std::size_t i = 0; i < n; ++i) trial[i] = alpha[i] + step * grad[i];
        alpha = project(trial, y, C);
        best = std::max(best, dual_value(alpha, y, K));
    }
    return best;
}

/// Combined reference value: the better of the two independent methods.
inline double reference_dual_objective(const std::vector<std::vector<double>>& K,
                                       const std::vector<int>& y, double C,
                                       std::size_t pg_iterations = 50000) {
    return std::max(enumerate_patterns(K, y, C), projected_gradient(K, y, C, pg_iterations));
}

}  // namespace svm_oracle
