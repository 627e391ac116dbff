#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "dupless/errors.hpp"
#include "dupless/parallel.hpp"
#include "dupless/rng.hpp"
#include "dupless/textio.hpp"

namespace dupless {

struct TsneConfig {
    double perplexity = 30.0;
    std::size_t output_dim = 2;
    std::size_t iterations = 1000;
    double learning_rate = 200.0;
    double early_exaggeration = 12.0;
    std::size_t exaggeration_iters = 250;
    double momentum_initial = 0.5;
    double momentum_final = 0.8;
    std::size_t momentum_switch = 250;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(perplexity > 1.0)) throw UsageError("perplexity must be > 1");
        if (iterations < 1) throw UsageError("tsne iterations must be >= 1");
        if (output_dim < 1) throw UsageError("tsne output_dim must be >= 1");
        if (!(learning_rate > 0.0)) throw UsageError("tsne learning_rate must be > 0");
    }
};

/// Symmetric joint probabilities p_ij, zero diagonal, summing to 1.
struct AffinityMatrix {
    std::size_t n = 0;
    std::vector<double> p;  // n*n row-major

    double at(std::size_t i, std::size_t j) const { return p[i * n + j]; }
    double& at(std::size_t i, std::size_t j) { return p[i * n + j]; }

    void validate(double tol = 1e-9) const {
        if (p.size() != n * n) throw ShapeMismatch("affinity matrix storage mismatch");
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (at(i, i) != 0.0) throw DataError("affinity diagonal must be zero");
            for (std::size_t j = 0; j < n; ++j) {
                const double v = at(i, j);
                if (v < 0.0 || !std::isfinite(v)) throw DataError("bad affinity value");
                if (std::abs(v - at(j, i)) > tol) throw DataError("affinity matrix not symmetric");
                total += v;
            }
        }
        if (std::abs(total - 1.0) > tol)
            throw DataError("affinities sum to " + format_float(total) + ", expected 1");
    }
};

namespace detail {

/// Conditional distribution of row i for a given precision beta; returns the
/// perplexity exp(H). `dist2` holds squared distances with dist2[i] ignored.
inline double row_perplexity(const std::vector<double>& dist2, std::size_t i, double beta,
                             std::vector<double>& out_p) {
    const std::size_t n = dist2.size();
    out_p.assign(n, 0.0);
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double w = std::exp(-beta * dist2[j]);
        out_p[j] = w;
        sum += w;
        weighted += dist2[j] * w;
    }
    if (sum <= 0.0) return 1.0;  // beta so large every weight underflowed
    for (std::size_t j = 0; j < n; ++j) out_p[j] /= sum;
    const double entropy = std::log(sum) + beta * weighted / sum;
    return std::exp(entropy);
}

}  // namespace detail

/**
 * @brief Gaussian affinities with per-row bandwidths found by bisection so
 * each row's perplexity matches the target within 1e-4 (at most 100 steps),
 * then symmetrized: p_ij = (p_{j|i} + p_{i|j}) / 2N.
 *
 * The reachable per-row maximum is N-1 (the uniform row), so targets above
 * N-1 are rejected.
 *
 * When `conditional_out` is non-null it receives the n x n row-stochastic
 * conditional matrix p_{j|i} before symmetrization.
 */
inline AffinityMatrix compute_affinities(const std::vector<std::vector<double>>& X,
                                         double perplexity, int threads = 1,
                                         std::vector<double>* conditional_out = nullptr) {
    const std::size_t n = X.size();
    if (n < 3) throw DataError("affinities need at least 3 points, got " + std::to_string(n));
    if (!(perplexity > 1.0)) throw UsageError("perplexity must be > 1");
    if (perplexity > static_cast<double>(n - 1))
        throw PerplexityTooLarge("perplexity " + format_float(perplexity) + " exceeds N-1 = " +
                                 std::to_string(n - 1));
    const std::size_t dim = X.front().size();
    for (const auto& row : X)
        if (row.size() != dim) throw DimMismatch("affinity input rows differ in dim");

    std::vector<double> dist2(n * n, 0.0);
    double max_d2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = X[i][k] - X[j][k];
                d2 += d * d;
            }
            dist2[i * n + j] = dist2[j * n + i] = d2;
            max_d2 = std::max(max_d2, d2);
        }
    }
    if (max_d2 == 0.0) throw DegenerateDistances("all pairwise distances are zero");

    std::vector<double> conditional(n * n, 0.0);
    parallel_for(n, threads, [&](std::size_t i) {
        std::vector<double> row(dist2.begin() + static_cast<std::ptrdiff_t>(i * n),
                                dist2.begin() + static_cast<std::ptrdiff_t>((i + 1) * n));
        std::vector<double> p;
        double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
        for (int step = 0; step < 100; ++step) {
            const double perp = detail::row_perplexity(row, i, beta, p);
            if (std::abs(perp - perplexity) < 1e-5) break;
            if (perp > perplexity) {  // too flat: raise beta
                lo = beta;
                beta = std::isinf(hi) ? beta * 2.0 : 0.5 * (beta + hi);
            } else {
                hi = beta;
                beta = 0.5 * (beta + lo);
            }
        }
        detail::row_perplexity(row, i, beta, p);
        for (std::size_t j = 0; j < n; ++j) conditional[i * n + j] = p[j];
    });
    if (conditional_out != nullptr) *conditional_out = conditional;

    AffinityMatrix P;
    P.n = n;
    P.p.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            P.at(i, j) = (conditional[i * n + j] + conditional[j * n + i]) /
                         (2.0 * static_cast<double>(n));
        }
    return P;
}

/**
 * @brief KL(P||Q) of a layout and its gradient. The gradient applies the
 * exaggeration factor to P (pass 1 for the plain objective); the returned KL
 * always uses the raw P, which is what the iteration log reports.
 *
 * grad may be null when only the objective is needed.
 */
inline double tsne_kl_and_grad(const AffinityMatrix& P, const std::vector<double>& layout,
                               std::size_t dim, double exaggeration, std::vector<double>* grad,
                               int threads = 1) {
    const std::size_t n = P.n;
    if (layout.size() != n * dim) throw ShapeMismatch("layout size mismatch");

    // Student-t weights and their normalizer
    std::vector<double> w(n * n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = layout[i * dim + k] - layout[j * dim + k];
                d2 += d * d;
            }
            const double v = 1.0 / (1.0 + d2);
            w[i * n + j] = w[j * n + i] = v;
            z += 2.0 * v;
        }

    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            const double p = P.at(i, j);
            if (p <= 0.0) continue;
            const double q = std::max(w[i * n + j] / z, 1e-12);
            kl += p * std::log(p / q);
        }

    if (grad) {
        grad->assign(n * dim, 0.0);
        parallel_for(n, threads, [&](std::size_t i) {
            for (std::size_t j = 0; j < n; ++j) {
                if (i == j) continue;
                const double q = w[i * n + j] / z;
                const double mult = 4.0 * (exaggeration * P.at(i, j) - q) * w[i * n + j];
                for (std::size_t k = 0; k < dim; ++k)
                    (*grad)[i * dim + k] +=
                        mult * (layout[i * dim + k] - layout[j * dim + k]);
            }
        });
    }
    return kl;
}

struct TsneResult {
    std::size_t n = 0;
    std::size_t dim = 2;
    std::vector<double> layout;  // n x dim row-major
    std::vector<double> kl_log;  // one entry per iteration, raw (unexaggerated) KL
};

/// Gradient descent with momentum, per-coordinate adaptive gains and early
/// exaggeration, from a small seeded Gaussian initialization. The gains damp
/// coordinates that keep flipping direction, which is what keeps the standard
/// learning rate of 200 stable on small inputs.
inline TsneResult run_tsne(const AffinityMatrix& P, const TsneConfig& config, int threads = 1) {
    config.validate();
    P.validate();
    const std::size_t n = P.n, dim = config.output_dim;

    TsneResult result;
    result.n = n;
    result.dim = dim;
    result.layout.resize(n * dim);
    Rng rng(derive_seed(config.seed, 0x75E));
    for (double& v : result.layout) v = rng.gaussian() * 1e-4;

    std::vector<double> velocity(n * dim, 0.0), gain(n * dim, 1.0), grad;
    for (std::size_t iter = 0; iter < config.iterations; ++iter) {
        const double ex = iter < config.exaggeration_iters ? config.early_exaggeration : 1.0;
        const double momentum =
            iter < config.momentum_switch ? config.momentum_initial : config.momentum_final;
        const double kl = tsne_kl_and_grad(P, result.layout, dim, ex, &grad, threads);
        for (double g : grad)
            if (!std::isfinite(g)) throw NonFiniteGradient("non-finite t-SNE gradient at iteration " +
                                                           std::to_string(iter));
        result.kl_log.push_back(kl);
        for (std::size_t i = 0; i < velocity.size(); ++i) {
            const bool steady = (grad[i] > 0.0) != (velocity[i] > 0.0);
            gain[i] = steady ? gain[i] + 0.2 : gain[i] * 0.8;
            if (gain[i] < 0.01) gain[i] = 0.01;
            velocity[i] = momentum * velocity[i] - config.learning_rate * gain[i] * grad[i];
            result.layout[i] += velocity[i];
        }
    }
    return result;
}

// ---------------------------------------------------------------- scatter

struct ScatterPoint {
    std::string id;
    double x = 0.0;
    double y = 0.0;
    std::string label;
};

inline void write_scatter_csv(const std::vector<ScatterPoint>& points,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "id,x,y,label\n";
    for (const auto& pt : points)
        out << pt.id << "," << format_float(pt.x) << "," << format_float(pt.y) << "," << pt.label
            << "\n";
}

/// Tissue-class palette for the scatter plots; unknown labels cycle through
/// a neutral fallback set.
inline std::string scatter_color(const std::string& label, std::size_t fallback_index) {
    if (label == "normal") return "#d62728";    // red
    if (label == "benign") return "#2ca02c";    // green
    if (label == "in-situ") return "#9467bd";   // purple
    if (label == "invasive") return "#1f77b4";  // blue
    static const char* fallback[] = {"#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
    return fallback[fallback_index % 5];
}

inline void write_scatter_svg(const std::vector<ScatterPoint>& points,
                              const std::filesystem::path& path) {
    double min_x = 0, max_x = 1, min_y = 0, max_y = 1;
    if (!points.empty()) {
        min_x = max_x = points[0].x;
        min_y = max_y = points[0].y;
        for (const auto& pt : points) {
            min_x = std::min(min_x, pt.x);
            max_x = std::max(max_x, pt.x);
            min_y = std::min(min_y, pt.y);
            max_y = std::max(max_y, pt.y);
        }
    }
    const double span_x = std::max(max_x - min_x, 1e-9);
    const double span_y = std::max(max_y - min_y, 1e-9);
    const double size = 640.0, margin = 40.0, inner = size - 2 * margin;

    std::vector<std::string> labels;
    for (const auto& pt : points)
        if (std::find(labels.begin(), labels.end(), pt.label) == labels.end())
            labels.push_back(pt.label);
    std::sort(labels.begin(), labels.end());

    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\"" << size
        << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
    out << "  <rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";
    for (const auto& pt : points) {
        const double px = margin + (pt.x - min_x) / span_x * inner;
        const double py = margin + (1.0 - (pt.y - min_y) / span_y) * inner;
        const auto it = std::find(labels.begin(), labels.end(), pt.label);
        const auto li = static_cast<std::size_t>(it - labels.begin());
        out << "  <circle cx=\"" << format_float(px) << "\" cy=\"" << format_float(py)
            << "\" r=\"3\" fill=\"" << scatter_color(pt.label, li) << "\" fill-opacity=\"0.75\">"
            << "<title>" << pt.id << "</title></circle>\n";
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double ly = margin + 14.0 * static_cast<double>(i);
        out << "  <circle cx=\"" << margin << "\" cy=\"" << format_float(ly) << "\" r=\"4\" fill=\""
            << scatter_color(labels[i], i) << "\"/>\n";
        out << "  <text x=\"" << margin + 10 << "\" y=\"" << format_float(ly + 4.0)
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << labels[i] << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace dupless
