#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "dupless/embedding.hpp"
#include "dupless/errors.hpp"
#include "dupless/manifest.hpp"
#include "dupless/rng.hpp"
#include "dupless/svm.hpp"
#include "dupless/textio.hpp"

namespace dupless {

// ------------------------------------------------------------------ splits

enum class SplitKind { HoldOut, KFold };

struct SplitPlan {
    SplitKind kind = SplitKind::HoldOut;
    double train_fraction = 0.75;  // HoldOut only
    std::size_t folds = 4;         // KFold only
    std::uint64_t seed = 0;

    void validate() const {
        if (kind == SplitKind::HoldOut && (!(train_fraction > 0.0) || !(train_fraction < 1.0)))
            throw UsageError("train_fraction must be in (0,1)");
        if (kind == SplitKind::KFold && folds < 2) throw UsageError("kfold needs >= 2 folds");
    }
};

/// One train/test partition of slice ids. Patches always travel with their
/// slice, so splitting at slice granularity rules out patch leakage.
struct SplitAssignment {
    std::vector<std::string> train_slices;
    std::vector<std::string> test_slices;
};

namespace detail {

inline void check_partition(const SplitAssignment& split, std::size_t expected_total) {
    std::vector<std::string> all = split.train_slices;
    all.insert(all.end(), split.test_slices.begin(), split.test_slices.end());
    std::sort(all.begin(), all.end());
    if (std::adjacent_find(all.begin(), all.end()) != all.end())
        throw DataError("split leaks a slice into both train and test");
    if (all.size() != expected_total) throw DataError("split does not cover the slice set");
}

/// Slice ids grouped per class, id-sorted then seed-shuffled per class.
inline std::vector<std::vector<std::string>> shuffled_class_groups(const DatasetManifest& manifest,
                                                                   std::uint64_t seed) {
    std::vector<std::vector<std::string>> groups(kNumTissueClasses);
    for (const auto& s : manifest.slices)
        groups[static_cast<std::size_t>(s.label)].push_back(s.slice_id);
    for (std::size_t c = 0; c < groups.size(); ++c) {
        std::sort(groups[c].begin(), groups[c].end());
        Rng rng(derive_seed(seed, 0x5F00 + c));
        rng.shuffle(groups[c]);
    }
    return groups;
}

}  // namespace detail

inline SplitAssignment make_holdout_split(const DatasetManifest& manifest, const SplitPlan& plan) {
    plan.validate();
    if (plan.kind != SplitKind::HoldOut) throw UsageError("plan is not a hold-out plan");
    SplitAssignment split;
    for (auto& group : detail::shuffled_class_groups(manifest, plan.seed)) {
        if (group.empty()) continue;
        if (group.size() < 2)
            throw TooFewSlices("class with " + std::to_string(group.size()) +
                               " slice(s) cannot be split");
        auto train = static_cast<std::size_t>(
            std::llround(plan.train_fraction * static_cast<double>(group.size())));
        train = std::clamp<std::size_t>(train, 1, group.size() - 1);
        for (std::size_t i = 0; i < group.size(); ++i)
            (i < train ? split.train_slices : split.test_slices).push_back(group[i]);
    }
    std::sort(split.train_slices.begin(), split.train_slices.end());
    std::sort(split.test_slices.begin(), split.test_slices.end());
    detail::check_partition(split, manifest.slices.size());
    return split;
}

inline std::vector<SplitAssignment> make_kfold_splits(const DatasetManifest& manifest,
                                                      const SplitPlan& plan) {
    plan.validate();
    if (plan.kind != SplitKind::KFold) throw UsageError("plan is not a k-fold plan");
    const std::size_t k = plan.folds;
    std::vector<std::vector<std::string>> fold_members(k);
    for (auto& group : detail::shuffled_class_groups(manifest, plan.seed)) {
        if (group.empty()) continue;
        if (group.size() < k)
            throw TooFewSlices("class with " + std::to_string(group.size()) + " slices cannot fill " +
                               std::to_string(k) + " folds");
        for (std::size_t i = 0; i < group.size(); ++i) fold_members[i % k].push_back(group[i]);
    }
    std::vector<SplitAssignment> folds(k);
    for (std::size_t f = 0; f < k; ++f) {
        folds[f].test_slices = fold_members[f];
        for (std::size_t g = 0; g < k; ++g)
            if (g != f)
                folds[f].train_slices.insert(folds[f].train_slices.end(), fold_members[g].begin(),
                                             fold_members[g].end());
        std::sort(folds[f].train_slices.begin(), folds[f].train_slices.end());
        std::sort(folds[f].test_slices.begin(), folds[f].test_slices.end());
        detail::check_partition(folds[f], manifest.slices.size());
    }
    return folds;
}

// ----------------------------------------------------------------- metrics

enum class EvalLevel { Patch, Slice };

inline const char* level_name(EvalLevel l) { return l == EvalLevel::Patch ? "patch" : "slice"; }

struct SensitivityReport {
    std::string extractor;
    std::string method;
    EvalLevel level = EvalLevel::Patch;
    std::vector<std::vector<std::size_t>> confusion;  // [truth][predicted], 4x4
    std::vector<double> per_class;                    // recall per tissue class
    double overall = 0.0;                             // macro average over supported classes
};

/// Builds a confusion matrix and per-class recalls. Overall sensitivity is
/// the macro average over classes that appear in the truth.
inline SensitivityReport compute_sensitivity(const std::vector<TissueClass>& truth,
                                             const std::vector<TissueClass>& predicted) {
    if (truth.empty()) throw EmptyList("sensitivity of an empty prediction set");
    if (truth.size() != predicted.size())
        throw LengthMismatch("truth and prediction lengths differ: " + std::to_string(truth.size()) +
                             " vs " + std::to_string(predicted.size()));
    SensitivityReport report;
    report.confusion.assign(kNumTissueClasses, std::vector<std::size_t>(kNumTissueClasses, 0));
    for (std::size_t i = 0; i < truth.size(); ++i)
        ++report.confusion[static_cast<std::size_t>(truth[i])]
                          [static_cast<std::size_t>(predicted[i])];

    report.per_class.assign(kNumTissueClasses, 0.0);
    double macro = 0.0;
    std::size_t supported = 0;
    for (std::size_t c = 0; c < kNumTissueClasses; ++c) {
        std::size_t row = 0;
        for (std::size_t j = 0; j < kNumTissueClasses; ++j) row += report.confusion[c][j];
        if (row == 0) continue;
        report.per_class[c] =
            static_cast<double>(report.confusion[c][c]) / static_cast<double>(row);
        macro += report.per_class[c];
        ++supported;
    }
    report.overall = supported ? macro / static_cast<double>(supported) : 0.0;
    return report;
}

/// Cross-validation aggregate: fold reports plus their equal-weight mean and
/// the pooled confusion matrix. The mean is reproducible from the fold
/// reports alone.
struct CvSummary {
    std::string extractor;
    std::string method;
    EvalLevel level = EvalLevel::Slice;
    std::vector<SensitivityReport> folds;
    std::vector<double> mean_per_class;
    double mean_overall = 0.0;
    std::vector<std::vector<std::size_t>> pooled_confusion;
};

inline CvSummary summarize_folds(std::vector<SensitivityReport> folds) {
    if (folds.empty()) throw EmptyList("cross-validation with no folds");
    CvSummary cv;
    cv.extractor = folds.front().extractor;
    cv.method = folds.front().method;
    cv.level = folds.front().level;
    cv.mean_per_class.assign(kNumTissueClasses, 0.0);
    cv.pooled_confusion.assign(kNumTissueClasses, std::vector<std::size_t>(kNumTissueClasses, 0));
    for (const auto& fold : folds) {
        for (std::size_t c = 0; c < kNumTissueClasses; ++c) {
            cv.mean_per_class[c] += fold.per_class[c];
            for (std::size_t j = 0; j < kNumTissueClasses; ++j)
                cv.pooled_confusion[c][j] += fold.confusion[c][j];
        }
        cv.mean_overall += fold.overall;
    }
    for (double& v : cv.mean_per_class) v /= static_cast<double>(folds.size());
    cv.mean_overall /= static_cast<double>(folds.size());
    cv.folds = std::move(folds);
    return cv;
}

// -------------------------------------------------------------- experiment

struct ExperimentConfig {
    SvmConfig patch_svm{10.0, {KernelKind::Rbf, 0.001}, 1e-3, 10000};
    SvmConfig slice_svm{10.0, {KernelKind::Linear, 0.001}, 1e-3, 10000};
    SplitPlan holdout{SplitKind::HoldOut, 0.75, 4, 0};
    SplitPlan cv{SplitKind::KFold, 0.75, 4, 0};
    bool standardize = false;
    std::string extractor = "extractor";
};

struct ExperimentResult {
    SensitivityReport patch_report;  // hold-out, patch-level RBF SVM
    SensitivityReport vote_report;   // hold-out, slice-level majority vote
    CvSummary concat_cv;             // 4-fold, slice-level linear SVM
    CvSummary sum_cv;
    bool patch_svm_converged = true;
    bool slice_svm_converged = true;
};

namespace detail {

inline const EmbeddingVector& embedding_for(
    const std::map<std::string, EmbeddingVector>& embeddings, const std::string& patch_id) {
    const auto it = embeddings.find(patch_id);
    if (it == embeddings.end()) throw MissingEmbeddings("no embedding for patch " + patch_id);
    return it->second;
}

struct SliceFeatures {
    std::vector<std::string> slice_ids;
    std::vector<TissueClass> labels;
    std::vector<std::vector<double>> rows;
};

inline SliceFeatures aggregate_slices(const DatasetManifest& manifest,
                                      const std::map<std::string, EmbeddingVector>& embeddings,
                                      AggregationMethod method,
                                      const std::vector<std::string>& slice_ids) {
    SliceFeatures out;
    for (const auto& slice_id : slice_ids) {
        const SliceRecord* slice = manifest.find(slice_id);
        if (!slice) throw DataError("unknown slice id " + slice_id);
        std::vector<EmbeddingVector> patch_vecs;
        for (const auto& p : slice->patches) patch_vecs.push_back(embedding_for(embeddings, p.patch_id));
        const SliceEmbedding agg = method == AggregationMethod::Concat
                                       ? concat_embeddings(patch_vecs)
                                       : sum_embeddings(patch_vecs);
        out.slice_ids.push_back(slice_id);
        out.labels.push_back(slice->label);
        out.rows.push_back(to_feature_row(agg));
    }
    return out;
}

inline std::vector<TissueClass> predictions_to_tissue(const std::vector<int>& preds) {
    std::vector<TissueClass> out;
    out.reserve(preds.size());
    for (int p : preds) {
        if (p < 0 || p >= static_cast<int>(kNumTissueClasses))
            throw LabelOutOfRange("prediction outside tissue classes: " + std::to_string(p));
        out.push_back(static_cast<TissueClass>(p));
    }
    return out;
}

}  // namespace detail

/// Slice-level linear SVM on aggregated features under k-fold CV.
inline CvSummary run_cv_experiment(const DatasetManifest& manifest,
                                   const std::map<std::string, EmbeddingVector>& embeddings,
                                   AggregationMethod method, const ExperimentConfig& config,
                                   bool* converged_out = nullptr) {
    const auto folds = make_kfold_splits(manifest, config.cv);
    std::vector<SensitivityReport> reports;
    bool converged = true;
    for (const auto& fold : folds) {
        auto train = detail::aggregate_slices(manifest, embeddings, method, fold.train_slices);
        auto test = detail::aggregate_slices(manifest, embeddings, method, fold.test_slices);

        if (config.standardize) {
            std::vector<std::vector<float>> fit_rows;
            for (const auto& r : train.rows) fit_rows.emplace_back(r.begin(), r.end());
            Standardizer st;
            st.fit(fit_rows);
            const auto apply = [&st](std::vector<std::vector<double>>& rows) {
                for (auto& r : rows) {
                    std::vector<float> f(r.begin(), r.end());
                    const auto z = st.apply(f);
                    r.assign(z.begin(), z.end());
                }
            };
            apply(train.rows);
            apply(test.rows);
        }

        std::vector<int> train_labels;
        for (TissueClass c : train.labels) train_labels.push_back(static_cast<int>(c));
        const MulticlassModel model = train_multiclass(train.rows, train_labels, config.slice_svm);
        for (const auto& m : model.models) converged = converged && m.converged;

        std::vector<int> preds;
        for (const auto& row : test.rows) preds.push_back(predict(model, row));
        SensitivityReport report = compute_sensitivity(test.labels, detail::predictions_to_tissue(preds));
        report.extractor = config.extractor;
        report.method = aggregation_name(method);
        report.level = EvalLevel::Slice;
        reports.push_back(std::move(report));
    }
    if (converged_out) *converged_out = converged;
    CvSummary cv = summarize_folds(std::move(reports));
    cv.extractor = config.extractor;
    cv.method = aggregation_name(method);
    return cv;
}

/**
 * @brief The full protocol for one feature source: patch-level RBF SVM and
 * slice-level majority voting on the hold-out split, then concat and sum
 * linear SVMs under k-fold CV.
 */
inline ExperimentResult run_experiment(const DatasetManifest& manifest,
                                       const std::map<std::string, EmbeddingVector>& embeddings,
                                       const ExperimentConfig& config) {
    ExperimentResult result;
    const SplitAssignment holdout = make_holdout_split(manifest, config.holdout);

    // patch-level SVM on the hold-out split
    std::vector<std::vector<double>> train_rows;
    std::vector<int> train_labels;
    for (const auto& slice_id : holdout.train_slices) {
        const SliceRecord* slice = manifest.find(slice_id);
        for (const auto& p : slice->patches) {
            train_rows.push_back(to_feature_row(detail::embedding_for(embeddings, p.patch_id)));
            train_labels.push_back(static_cast<int>(slice->label));
        }
    }
    const MulticlassModel patch_model = train_multiclass(train_rows, train_labels, config.patch_svm);
    for (const auto& m : patch_model.models)
        result.patch_svm_converged = result.patch_svm_converged && m.converged;

    std::vector<TissueClass> patch_truth;
    std::vector<TissueClass> patch_pred;
    std::vector<TissueClass> vote_truth;
    std::vector<TissueClass> vote_pred;
    for (const auto& slice_id : holdout.test_slices) {
        const SliceRecord* slice = manifest.find(slice_id);
        std::vector<int> slice_preds;
        std::vector<std::vector<double>> slice_scores;
        for (const auto& p : slice->patches) {
            const auto row = to_feature_row(detail::embedding_for(embeddings, p.patch_id));
            slice_scores.push_back(decision_values(patch_model, row));
            const auto& scores = slice_scores.back();
            std::size_t best = 0;
            for (std::size_t i = 1; i < scores.size(); ++i)
                if (scores[i] > scores[best]) best = i;
            slice_preds.push_back(patch_model.class_labels[best]);
            patch_truth.push_back(slice->label);
            patch_pred.push_back(static_cast<TissueClass>(slice_preds.back()));
        }
        vote_truth.push_back(slice->label);
        vote_pred.push_back(static_cast<TissueClass>(
            majority_vote(slice_preds, patch_model.class_labels, slice_scores)));
    }

    result.patch_report = compute_sensitivity(patch_truth, patch_pred);
    result.patch_report.extractor = config.extractor;
    result.patch_report.method = "patch-svm";
    result.patch_report.level = EvalLevel::Patch;

    result.vote_report = compute_sensitivity(vote_truth, vote_pred);
    result.vote_report.extractor = config.extractor;
    result.vote_report.method = "vote";
    result.vote_report.level = EvalLevel::Slice;

    result.concat_cv = run_cv_experiment(manifest, embeddings, AggregationMethod::Concat, config,
                                         &result.slice_svm_converged);
    bool sum_converged = true;
    result.sum_cv = run_cv_experiment(manifest, embeddings, AggregationMethod::Sum, config,
                                      &sum_converged);
    result.slice_svm_converged = result.slice_svm_converged && sum_converged;
    return result;
}

// ------------------------------------------------------------------ output

inline nlohmann::json report_to_json(const SensitivityReport& r) {
    nlohmann::json j;
    j["extractor"] = r.extractor;
    j["method"] = r.method;
    j["level"] = level_name(r.level);
    j["confusion"] = r.confusion;
    nlohmann::json per;
    for (std::size_t c = 0; c < kNumTissueClasses; ++c)
        per[tissue_name(static_cast<TissueClass>(c))] = r.per_class[c];
    j["sensitivity"] = per;
    j["overall"] = r.overall;
    return j;
}

inline nlohmann::json cv_to_json(const CvSummary& cv) {
    nlohmann::json j;
    j["extractor"] = cv.extractor;
    j["method"] = cv.method;
    j["level"] = level_name(cv.level);
    j["folds"] = nlohmann::json::array();
    for (const auto& fold : cv.folds) j["folds"].push_back(report_to_json(fold));
    nlohmann::json per;
    for (std::size_t c = 0; c < kNumTissueClasses; ++c)
        per[tissue_name(static_cast<TissueClass>(c))] = cv.mean_per_class[c];
    j["mean_sensitivity"] = per;
    j["mean_overall"] = cv.mean_overall;
    j["pooled_confusion"] = cv.pooled_confusion;
    return j;
}

/// Rows of the summary CSV `extractor,method,level,class,sensitivity`; each
/// report contributes its four class rows plus an `overall` row.
inline void append_summary_rows(std::ostream& out, const std::string& extractor,
                                const std::string& method, EvalLevel level,
                                const std::vector<double>& per_class, double overall) {
    for (std::size_t c = 0; c < kNumTissueClasses; ++c)
        out << extractor << "," << method << "," << level_name(level) << ","
            << tissue_name(static_cast<TissueClass>(c)) << "," << format_float(per_class[c])
            << "\n";
    out << extractor << "," << method << "," << level_name(level) << ",overall,"
        << format_float(overall) << "\n";
}

inline void write_summary_csv(const std::vector<ExperimentResult>& results,
                              const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "extractor,method,level,class,sensitivity\n";
    for (const auto& r : results) {
        append_summary_rows(out, r.patch_report.extractor, r.patch_report.method,
                            r.patch_report.level, r.patch_report.per_class, r.patch_report.overall);
        append_summary_rows(out, r.vote_report.extractor, r.vote_report.method,
                            r.vote_report.level, r.vote_report.per_class, r.vote_report.overall);
        append_summary_rows(out, r.concat_cv.extractor, r.concat_cv.method, r.concat_cv.level,
                            r.concat_cv.mean_per_class, r.concat_cv.mean_overall);
        append_summary_rows(out, r.sum_cv.extractor, r.sum_cv.method, r.sum_cv.level,
                            r.sum_cv.mean_per_class, r.sum_cv.mean_overall);
    }
}

/// Comparison table: one row per extractor x method, per-class columns plus
/// the overall column. This is both the human-readable table and the data
/// behind per-method bar charts.
inline void write_comparison_csv(const std::vector<ExperimentResult>& results,
                                 const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "extractor,method,level";
    for (std::size_t c = 0; c < kNumTissueClasses; ++c)
        out << "," << tissue_name(static_cast<TissueClass>(c));
    out << ",overall\n";
    const auto row = [&out](const std::string& extractor, const std::string& method,
                            EvalLevel level, const std::vector<double>& per_class, double overall) {
        out << extractor << "," << method << "," << level_name(level);
        for (std::size_t c = 0; c < kNumTissueClasses; ++c) out << "," << format_float(per_class[c]);
        out << "," << format_float(overall) << "\n";
    };
    for (const auto& r : results) {
        row(r.patch_report.extractor, r.patch_report.method, r.patch_report.level,
            r.patch_report.per_class, r.patch_report.overall);
        row(r.vote_report.extractor, r.vote_report.method, r.vote_report.level,
            r.vote_report.per_class, r.vote_report.overall);
        row(r.concat_cv.extractor, r.concat_cv.method, r.concat_cv.level, r.concat_cv.mean_per_class,
            r.concat_cv.mean_overall);
        row(r.sum_cv.extractor, r.sum_cv.method, r.sum_cv.level, r.sum_cv.mean_per_class,
            r.sum_cv.mean_overall);
    }
}

}  // namespace dupless
