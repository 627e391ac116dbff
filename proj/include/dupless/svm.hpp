#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "dupless/embedding.hpp"
#include "dupless/errors.hpp"

namespace dupless {

enum class KernelKind { Linear, Rbf };

inline const char* kernel_name(KernelKind k) { return k == KernelKind::Linear ? "linear" : "rbf"; }

inline KernelKind parse_kernel(const std::string& s) {
    if (s == "linear") return KernelKind::Linear;
    if (s == "rbf") return KernelKind::Rbf;
    throw UsageError("unknown kernel: " + s);
}

struct KernelSpec {
    KernelKind kind = KernelKind::Linear;
    double gamma = 0.001;

    void validate() const {
        if (kind == KernelKind::Rbf && !(gamma > 0.0))
            throw UsageError("rbf kernel needs gamma > 0");
    }
};

inline double kernel_value(const KernelSpec& spec, const std::vector<double>& a,
                           const std::vector<double>& b) {
    if (a.size() != b.size())
        throw DimMismatch("kernel inputs differ in dim: " + std::to_string(a.size()) + " vs " +
                          std::to_string(b.size()));
    if (spec.kind == KernelKind::Linear) {
        double dot = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
        return dot;
    }
    double d2 = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        d2 += d * d;
    }
    return std::exp(-spec.gamma * d2);
}

struct SvmConfig {
    double C = 10.0;
    KernelSpec kernel;
    double tolerance = 1e-3;
    std::size_t max_passes = 10000;  // cap on outer sweeps, not expected to bind

    void validate() const {
        if (!(C > 0.0)) throw UsageError("svm C must be > 0");
        if (!(tolerance > 0.0)) throw UsageError("svm tolerance must be > 0");
        if (max_passes < 1) throw UsageError("svm max_passes must be >= 1");
        kernel.validate();
    }
};

/// Binary decision function f(x) = sum_i coeff_i K(sv_i, x) + bias, where
/// coeff_i = alpha_i * y_i for the retained support vectors.
struct SvmModel {
    KernelSpec kernel;
    std::vector<std::vector<double>> support_vectors;
    std::vector<double> coefficients;
    double bias = 0.0;
    int positive_class = 1;  // the +1 side; the rest of the classes are -1
    bool converged = true;
};

/// Full training-time state, for tests and the JSON summary.
struct SmoDiagnostics {
    std::vector<double> alpha;
    double dual_objective = 0.0;
    double max_kkt_violation = 0.0;
    std::size_t sweeps = 0;
};

inline double dual_objective(const std::vector<double>& alpha, const std::vector<int>& y,
                             const std::vector<std::vector<double>>& gram) {
    const std::size_t n = alpha.size();
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) obj += alpha[i];
    for (std::size_t i = 0; i < n; ++i) {
        if (alpha[i] == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j)
            obj -= 0.5 * alpha[i] * alpha[j] * y[i] * y[j] * gram[i][j];
    }
    return obj;
}

namespace detail {

/**
 * @brief Sequential minimal optimization over the soft-margin dual.
 *
 * Pairs of coefficients are updated analytically; the second index comes from
 * a deterministic cascade (largest |E_i - E_j| over the non-bound set, then
 * cyclic scans), so training is reproducible without any RNG.
 */
class SmoSolver {
public:
    SmoSolver(const std::vector<std::vector<double>>& X, const std::vector<int>& y,
              const SvmConfig& config)
        : X_(X), y_(y), config_(config), n_(X.size()) {
        alpha_.assign(n_, 0.0);
        error_.resize(n_);
        for (std::size_t i = 0; i < n_; ++i) error_[i] = -static_cast<double>(y_[i]);
        gram_.assign(n_, std::vector<double>(n_));
        for (std::size_t i = 0; i < n_; ++i) {
            gram_[i][i] = kernel_value(config_.kernel, X_[i], X_[i]);
            for (std::size_t j = i + 1; j < n_; ++j)
                gram_[i][j] = gram_[j][i] = kernel_value(config_.kernel, X_[i], X_[j]);
        }
    }

    bool solve() {
        bool examine_all = true;
        std::size_t steps_since_rebias = 0;
        while (sweeps_ < config_.max_passes) {
            ++sweeps_;
            std::size_t changed = 0;
            for (std::size_t i = 0; i < n_; ++i) {
                if (!examine_all && !non_bound(i)) continue;
                changed += examine(i);
            }
            steps_since_rebias += changed;
            if (examine_all) {
                if (changed == 0) {
                    // clean full sweep: the alphas are stationary under the
                    // current bias; pin the bias to them before judging KKT,
                    // and run another round only if that unlocked progress
                    recompute_bias();
                    if (max_kkt_violation() <= config_.tolerance) return true;
                    if (steps_since_rebias == 0) return pair_descent();
                    steps_since_rebias = 0;
                    continue;
                }
                examine_all = false;
            } else if (changed == 0) {
                examine_all = true;
            }
        }
        recompute_bias();
        return max_kkt_violation() <= config_.tolerance;
    }

    double decision(std::size_t i) const { return error_[i] + y_[i]; }

    double max_kkt_violation() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < n_; ++i) {
            const double margin = y_[i] * decision(i);
            double v = 0.0;
            if (alpha_[i] <= 0.0)
                v = std::max(0.0, 1.0 - margin);
            else if (alpha_[i] >= config_.C)
                v = std::max(0.0, margin - 1.0);
            else
                v = std::abs(margin - 1.0);
            worst = std::max(worst, v);
        }
        return worst;
    }

    const std::vector<double>& alpha() const { return alpha_; }
    const std::vector<std::vector<double>>& gram() const { return gram_; }
    double bias() const { return bias_; }
    std::size_t sweeps() const { return sweeps_; }

private:
    bool non_bound(std::size_t i) const { return alpha_[i] > 0.0 && alpha_[i] < config_.C; }

    /// Maximal-violating-pair descent. The single-point scan can stall when
    /// every partner step for the violating point is blocked by the box; the
    /// pair criterion cannot, so this finishes the last stretch to within
    /// tolerance.
    bool pair_descent() {
        while (sweeps_ < config_.max_passes) {
            ++sweeps_;
            std::size_t i_up = n_, i_low = n_;
            double up_best = 0.0, low_best = 0.0;
            for (std::size_t i = 0; i < n_; ++i) {
                const double target = bias_ - error_[i];  // y_i - g_i
                const bool can_up = y_[i] > 0 ? alpha_[i] < config_.C : alpha_[i] > 0.0;
                const bool can_low = y_[i] > 0 ? alpha_[i] > 0.0 : alpha_[i] < config_.C;
                if (can_up && (i_up == n_ || target > up_best)) {
                    up_best = target;
                    i_up = i;
                }
                if (can_low && (i_low == n_ || target < low_best)) {
                    low_best = target;
                    i_low = i;
                }
            }
            if (i_up == n_ || i_low == n_ || up_best - low_best <= config_.tolerance) break;
            if (!take_step(i_up, i_low)) break;  // flat within numeric resolution
        }
        recompute_bias();
        return max_kkt_violation() <= config_.tolerance;
    }

    /// Pins the bias to the current alphas: the mean of (y_i - g_i) over
    /// non-bound points, or the midpoint of the feasible interval when every
    /// alpha sits on a box bound. The incremental pair heuristic can leave
    /// the bias outside that interval, which reads as phantom KKT violations
    /// even though the alphas are optimal.
    void recompute_bias() {
        double nb_sum = 0.0;
        std::size_t nb_count = 0;
        double lo = -std::numeric_limits<double>::infinity();
        double hi = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n_; ++i) {
            const double target = bias_ - error_[i];  // the b that puts f_i on y_i
            if (non_bound(i)) {
                nb_sum += target;
                ++nb_count;
            } else if ((alpha_[i] <= 0.0 && y_[i] > 0) || (alpha_[i] >= config_.C && y_[i] < 0)) {
                lo = std::max(lo, target);
            } else {
                hi = std::min(hi, target);
            }
        }
        double b_new = bias_;
        if (nb_count > 0)
            b_new = nb_sum / static_cast<double>(nb_count);
        else if (std::isinf(lo))
            b_new = hi;
        else if (std::isinf(hi))
            b_new = lo;
        else
            b_new = 0.5 * (lo + hi);
        const double db = b_new - bias_;
        if (db != 0.0) {
            for (std::size_t i = 0; i < n_; ++i) error_[i] += db;
            bias_ = b_new;
        }
    }

    std::size_t examine(std::size_t i2) {
        const double e2 = error_[i2];
        const double r2 = e2 * y_[i2];
        const bool violates = (r2 < -config_.tolerance && alpha_[i2] < config_.C) ||
                              (r2 > config_.tolerance && alpha_[i2] > 0.0);
        if (!violates) return 0;

        // best |E1 - E2| over the non-bound set first
        std::size_t best = n_;
        double best_gap = -1.0;
        for (std::size_t j = 0; j < n_; ++j) {
            if (j == i2 || !non_bound(j)) continue;
            const double gap = std::abs(error_[j] - e2);
            if (gap > best_gap) {
                best_gap = gap;
                best = j;
            }
        }
        if (best < n_ && take_step(best, i2)) return 1;

        for (std::size_t k = 1; k <= n_; ++k) {  // cyclic fallback, non-bound then all
            const std::size_t j = (i2 + k) % n_;
            if (j == i2 || !non_bound(j)) continue;
            if (take_step(j, i2)) return 1;
        }
        for (std::size_t k = 1; k <= n_; ++k) {
            const std::size_t j = (i2 + k) % n_;
            if (j == i2) continue;
            if (take_step(j, i2)) return 1;
        }
        return 0;
    }

    bool take_step(std::size_t i1, std::size_t i2) {
        if (i1 == i2) return false;
        const double a1_old = alpha_[i1], a2_old = alpha_[i2];
        const int y1 = y_[i1], y2 = y_[i2];
        const double e1 = error_[i1], e2 = error_[i2];
        const double s = y1 * y2;
        const double C = config_.C;

        double lo, hi;
        if (y1 != y2) {
            lo = std::max(0.0, a2_old - a1_old);
            hi = std::min(C, C + a2_old - a1_old);
        } else {
            lo = std::max(0.0, a1_old + a2_old - C);
            hi = std::min(C, a1_old + a2_old);
        }
        if (lo >= hi) return false;

        const double k11 = gram_[i1][i1], k12 = gram_[i1][i2], k22 = gram_[i2][i2];
        const double eta = k11 + k22 - 2.0 * k12;
        double a2 = 0.0;
        if (eta > 1e-12) {
            a2 = a2_old + y2 * (e1 - e2) / eta;
            a2 = std::clamp(a2, lo, hi);
        } else {
            // objective is (near-)linear along the constraint line:
            // W(a2) - W(a2_old) = y2 (E1-E2)(a2 - a2_old) - eta/2 (a2 - a2_old)^2
            const auto gain = [&](double a) {
                const double d = a - a2_old;
                return y2 * (e1 - e2) * d - 0.5 * eta * d * d;
            };
            const double gl = gain(lo), gh = gain(hi);
            if (gl > gh + 1e-12)
                a2 = lo;
            else if (gh > gl + 1e-12)
                a2 = hi;
            else
                return false;
        }
        if (std::abs(a2 - a2_old) < 1e-12 * (a2 + a2_old + 1e-12)) return false;

        double a1 = a1_old + s * (a2_old - a2);
        // FP residue from the clamped pair move can leave a coefficient a
        // hair off its box bound, which later reads as a phantom non-bound
        // point and stalls the pair selection
        if (a1 < 1e-12 * C) a1 = 0.0;
        else if (a1 > (1.0 - 1e-12) * C) a1 = C;
        if (a2 < 1e-12 * C) a2 = 0.0;
        else if (a2 > (1.0 - 1e-12) * C) a2 = C;
        const double d1 = a1 - a1_old, d2 = a2 - a2_old;

        const double b1 = bias_ - e1 - y1 * d1 * k11 - y2 * d2 * k12;
        const double b2 = bias_ - e2 - y1 * d1 * k12 - y2 * d2 * k22;
        double b_new;
        if (a1 > 0.0 && a1 < C)
            b_new = b1;
        else if (a2 > 0.0 && a2 < C)
            b_new = b2;
        else
            b_new = 0.5 * (b1 + b2);

        const double db = b_new - bias_;
        for (std::size_t i = 0; i < n_; ++i)
            error_[i] += y1 * d1 * gram_[i1][i] + y2 * d2 * gram_[i2][i] + db;
        alpha_[i1] = a1;
        alpha_[i2] = a2;
        bias_ = b_new;
        return true;
    }

    const std::vector<std::vector<double>>& X_;
    const std::vector<int>& y_;
    SvmConfig config_;
    std::size_t n_;
    std::vector<double> alpha_;
    std::vector<double> error_;  // E_i = f(x_i) - y_i, kept exact across steps
    std::vector<std::vector<double>> gram_;
    double bias_ = 0.0;
    std::size_t sweeps_ = 0;
};

}  // namespace detail

/**
 * @brief Trains one soft-margin binary SVM. Labels must be +1/-1 with both
 * signs present. If the sweep cap is hit the best-so-far model is returned
 * with `converged = false` rather than throwing.
 */
inline SvmModel train_binary_svm(const std::vector<std::vector<double>>& X,
                                 const std::vector<int>& y, const SvmConfig& config,
                                 SmoDiagnostics* diag = nullptr) {
    config.validate();
    if (X.size() != y.size()) throw LengthMismatch("svm inputs and labels differ in length");
    if (X.empty()) throw EmptyDataset("svm training set is empty");
    bool has_pos = false, has_neg = false;
    for (int v : y) {
        if (v == 1) has_pos = true;
        else if (v == -1) has_neg = true;
        else throw DataError("binary svm labels must be +1 or -1, got " + std::to_string(v));
    }
    if (!has_pos || !has_neg) throw SingleClassInput("svm training set has a single class");
    const std::size_t dim = X.front().size();
    for (const auto& row : X) {
        if (row.size() != dim) throw DimMismatch("svm training rows differ in dim");
        for (double v : row)
            if (!std::isfinite(v)) throw DataError("non-finite svm training value");
    }

    detail::SmoSolver solver(X, y, config);
    const bool converged = solver.solve();

    SvmModel model;
    model.kernel = config.kernel;
    model.bias = solver.bias();
    model.converged = converged;
    for (std::size_t i = 0; i < X.size(); ++i) {
        if (solver.alpha()[i] > 0.0) {
            model.support_vectors.push_back(X[i]);
            model.coefficients.push_back(solver.alpha()[i] * y[i]);
        }
    }
    if (diag) {
        diag->alpha = solver.alpha();
        diag->dual_objective = dual_objective(solver.alpha(), y, solver.gram());
        diag->max_kkt_violation = solver.max_kkt_violation();
        diag->sweeps = solver.sweeps();
    }
    return model;
}

inline double decision_value(const SvmModel& model, const std::vector<double>& x) {
    double f = model.bias;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
        f += model.coefficients[i] * kernel_value(model.kernel, model.support_vectors[i], x);
    return f;
}

// ------------------------------------------------------------- multiclass

struct MulticlassModel {
    std::vector<int> class_labels;  // ascending
    std::vector<SvmModel> models;   // one-vs-rest, aligned with class_labels
};

inline MulticlassModel train_multiclass(const std::vector<std::vector<double>>& X,
                                        const std::vector<int>& labels, const SvmConfig& config,
                                        std::vector<SmoDiagnostics>* diags = nullptr) {
    if (X.size() != labels.size()) throw LengthMismatch("svm inputs and labels differ in length");
    MulticlassModel mc;
    for (int c : labels)
        if (std::find(mc.class_labels.begin(), mc.class_labels.end(), c) == mc.class_labels.end())
            mc.class_labels.push_back(c);
    std::sort(mc.class_labels.begin(), mc.class_labels.end());
    if (mc.class_labels.size() < 2) throw SingleClassInput("multiclass training needs >= 2 classes");

    for (int c : mc.class_labels) {
        std::vector<int> y(labels.size());
        for (std::size_t i = 0; i < labels.size(); ++i) y[i] = labels[i] == c ? 1 : -1;
        SmoDiagnostics diag;
        SvmModel m = train_binary_svm(X, y, config, &diag);
        m.positive_class = c;
        mc.models.push_back(std::move(m));
        if (diags) diags->push_back(std::move(diag));
    }
    return mc;
}

/// Per-class decision values in class_labels order.
inline std::vector<double> decision_values(const MulticlassModel& mc,
                                           const std::vector<double>& x) {
    std::vector<double> out;
    out.reserve(mc.models.size());
    for (const auto& m : mc.models) out.push_back(decision_value(m, x));
    return out;
}

/// Argmax over one-vs-rest decision values; ties go to the lowest class index.
inline int predict(const MulticlassModel& mc, const std::vector<double>& x) {
    const auto scores = decision_values(mc, x);
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i)
        if (scores[i] > scores[best]) best = i;
    return mc.class_labels[best];
}

/**
 * @brief Modal class over patch predictions. Ties are broken by the highest
 * mean decision value among the tied classes (when scores are given), then
 * by the lowest class index.
 *
 * `scores[i]` are the per-class decision values for prediction i, aligned
 * with `class_labels`.
 */
inline int majority_vote(const std::vector<int>& predictions,
                         const std::vector<int>& class_labels = {},
                         const std::vector<std::vector<double>>& scores = {}) {
    if (predictions.empty()) throw EmptyList("majority vote over an empty prediction list");
    std::map<int, std::size_t> counts;
    for (int p : predictions) ++counts[p];
    std::size_t top = 0;
    for (const auto& [cls, count] : counts) top = std::max(top, count);

    std::vector<int> tied;
    for (const auto& [cls, count] : counts)
        if (count == top) tied.push_back(cls);
    if (tied.size() == 1 || scores.empty() || class_labels.empty()) return tied.front();

    if (scores.size() != predictions.size())
        throw LengthMismatch("vote scores do not match predictions");
    int best_cls = tied.front();
    double best_mean = -std::numeric_limits<double>::infinity();
    for (int cls : tied) {
        const auto it = std::find(class_labels.begin(), class_labels.end(), cls);
        if (it == class_labels.end()) continue;
        const std::size_t col = static_cast<std::size_t>(it - class_labels.begin());
        double mean = 0.0;
        for (const auto& row : scores) mean += row.at(col);
        mean /= static_cast<double>(scores.size());
        if (mean > best_mean + 1e-15) {
            best_mean = mean;
            best_cls = cls;
        }
    }
    return best_cls;
}

// ------------------------------------------------------------------- SVM1
//
// Versioned binary: "SVM1", u32 version, kernel spec, class labels, then per
// class the support set, coefficients and bias, all doubles LE.

static_assert(std::endian::native == std::endian::little,
              "svm serialization assumes a little-endian host");

namespace detail {

inline void put_f64(std::ostream& out, double v) {
    out.write(reinterpret_cast<const char*>(&v), 8);
}

inline double get_f64(std::istream& in, const char* what) {
    double v = 0.0;
    in.read(reinterpret_cast<char*>(&v), 8);
    if (!in) throw TruncatedFile(std::string("short read in ") + what);
    return v;
}

}  // namespace detail

inline void save_multiclass(const MulticlassModel& mc, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write("SVM1", 4);
    detail::put_u32(out, 1);  // version
    detail::put_u32(out, static_cast<std::uint32_t>(mc.class_labels.size()));
    for (int c : mc.class_labels) detail::put_u32(out, static_cast<std::uint32_t>(c));
    for (const auto& m : mc.models) {
        detail::put_u32(out, m.kernel.kind == KernelKind::Rbf ? 1u : 0u);
        detail::put_f64(out, m.kernel.gamma);
        detail::put_f64(out, m.bias);
        detail::put_u32(out, m.converged ? 1u : 0u);
        detail::put_u32(out, static_cast<std::uint32_t>(m.positive_class));
        detail::put_u32(out, static_cast<std::uint32_t>(m.support_vectors.size()));
        const std::uint32_t dim =
            m.support_vectors.empty() ? 0u : static_cast<std::uint32_t>(m.support_vectors[0].size());
        detail::put_u32(out, dim);
        for (std::size_t i = 0; i < m.support_vectors.size(); ++i) {
            detail::put_f64(out, m.coefficients[i]);
            for (double v : m.support_vectors[i]) detail::put_f64(out, v);
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

inline MulticlassModel load_multiclass(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SVM1", 4) != 0)
        throw BadMagic("not an SVM1 file: " + path.string());
    const std::uint32_t version = detail::get_u32(in, "SVM1 version");
    if (version != 1) throw DataError("unsupported SVM1 version " + std::to_string(version));
    MulticlassModel mc;
    const std::uint32_t k = detail::get_u32(in, "SVM1 class count");
    for (std::uint32_t i = 0; i < k; ++i)
        mc.class_labels.push_back(static_cast<int>(detail::get_u32(in, "SVM1 class label")));
    for (std::uint32_t i = 0; i < k; ++i) {
        SvmModel m;
        m.kernel.kind = detail::get_u32(in, "SVM1 kernel") == 1u ? KernelKind::Rbf
                                                                 : KernelKind::Linear;
        m.kernel.gamma = detail::get_f64(in, "SVM1 gamma");
        m.bias = detail::get_f64(in, "SVM1 bias");
        m.converged = detail::get_u32(in, "SVM1 converged") != 0;
        m.positive_class = static_cast<int>(detail::get_u32(in, "SVM1 positive class"));
        const std::uint32_t n_sv = detail::get_u32(in, "SVM1 support count");
        const std::uint32_t dim = detail::get_u32(in, "SVM1 dim");
        for (std::uint32_t s = 0; s < n_sv; ++s) {
            m.coefficients.push_back(detail::get_f64(in, "SVM1 coefficient"));
            std::vector<double> v(dim);
            for (auto& x : v) x = detail::get_f64(in, "SVM1 support value");
            m.support_vectors.push_back(std::move(v));
        }
        mc.models.push_back(std::move(m));
    }
    return mc;
}

// --------------------------------------------------------------- adapters

inline std::vector<double> to_feature_row(const EmbeddingVector& v) {
    return std::vector<double>(v.values.begin(), v.values.end());
}

inline std::vector<double> to_feature_row(const SliceEmbedding& v) {
    return std::vector<double>(v.values.begin(), v.values.end());
}

}  // namespace dupless
