#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dupless/rng.hpp"
#include "dupless/svm.hpp"
#include "support/svm_oracle.hpp"

using namespace dupless;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dupless_test_svm";
    std::filesystem::create_directories(dir);
    return dir / name;
}

struct RandomProblem {
    std::vector<std::vector<double>> X;
    std::vector<int> y;
    SvmConfig config;
};

RandomProblem random_problem(std::uint64_t seed) {
    Rng rng(seed);
    RandomProblem p;
    const std::size_t n = 2 + rng.next_below(7);   // 2..8 points
    const std::size_t dim = 1 + rng.next_below(3); // 1..3 dims
    p.X.resize(n);
    p.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        p.X[i].resize(dim);
        for (auto& v : p.X[i]) v = rng.gaussian();
        p.y[i] = i < n / 2 ? -1 : 1;  // both signs guaranteed
    }
    const double cs[3] = {0.5, 1.0, 10.0};
    p.config.C = cs[rng.next_below(3)];
    if (rng.next_below(2) == 0) {
        p.config.kernel = {KernelKind::Linear, 0.001};
    } else {
        p.config.kernel = {KernelKind::Rbf, 0.1 + 1.9 * rng.uniform()};
    }
    p.config.tolerance = 1e-5;  // tight stop for the oracle comparison
    p.config.max_passes = 100000;
    return p;
}

std::vector<std::vector<double>> gram_of(const RandomProblem& p) {
    std::vector<std::vector<double>> K(p.X.size(), std::vector<double>(p.X.size()));
    for (std::size_t i = 0; i < p.X.size(); ++i)
        for (std::size_t j = 0; j < p.X.size(); ++j)
            K[i][j] = kernel_value(p.config.kernel, p.X[i], p.X[j]);
    return K;
}

}  // namespace

TEST_CASE("kernel values", "[svm]") {
    const KernelSpec lin{KernelKind::Linear, 0.001};
    CHECK(kernel_value(lin, {1, 2, 3}, {4, -5, 6}) == Catch::Approx(1 * 4 - 2 * 5 + 3 * 6));

    const KernelSpec rbf{KernelKind::Rbf, 0.25};
    CHECK(kernel_value(rbf, {1, 2}, {1, 2}) == 1.0);
    CHECK(kernel_value(rbf, {0, 0}, {2, 0}) == Catch::Approx(std::exp(-0.25 * 4.0)));

    CHECK_THROWS_AS(kernel_value(lin, {1, 2}, {1, 2, 3}), DimMismatch);
    CHECK_THROWS_AS((KernelSpec{KernelKind::Rbf, 0.0}.validate()), UsageError);
    CHECK(parse_kernel("rbf") == KernelKind::Rbf);
    CHECK(parse_kernel("linear") == KernelKind::Linear);
    CHECK_THROWS_AS(parse_kernel("poly"), UsageError);
}

TEST_CASE("the symmetric two-point problem has the known closed form", "[svm]") {
    const std::vector<std::vector<double>> X = {{-1.0}, {1.0}};
    const std::vector<int> y = {-1, 1};
    SvmConfig config{10.0, {KernelKind::Linear, 0.001}, 1e-6, 1000};

    SmoDiagnostics diag;
    const SvmModel model = train_binary_svm(X, y, config, &diag);
    CHECK(model.converged);
    REQUIRE(diag.alpha.size() == 2);
    CHECK(std::abs(diag.alpha[0] - 0.5) < 1e-6);
    CHECK(std::abs(diag.alpha[1] - 0.5) < 1e-6);
    CHECK(std::abs(model.bias) < 1e-6);
    CHECK(std::abs(decision_value(model, {-1.0}) - (-1.0)) < 1e-6);
    CHECK(std::abs(decision_value(model, {1.0}) - 1.0) < 1e-6);
    CHECK(std::abs(decision_value(model, {0.0})) < 1e-6);
    CHECK(std::abs(diag.dual_objective - 0.5) < 1e-6);  // 2a - a^2 K(1,1) at a=1/2
}

TEST_CASE("smo matches the independent dual oracle on random problems", "[svm]") {
    int hardest_sweeps = 0;
    for (std::uint64_t seed = 1; seed <= 25; ++seed) {
        const RandomProblem p = random_problem(seed);
        SmoDiagnostics diag;
        const SvmModel model = train_binary_svm(p.X, p.y, p.config, &diag);
        INFO("seed " << seed << ", n=" << p.X.size() << ", kernel "
                     << kernel_name(p.config.kernel.kind) << ", C=" << p.config.C);
        CHECK(model.converged);
        CHECK(diag.max_kkt_violation <= 1e-3);

        const double reference =
            svm_oracle::reference_dual_objective(gram_of(p), p.y, p.config.C, 20000);
        CHECK(std::abs(diag.dual_objective - reference) <= 1e-3);
        hardest_sweeps = std::max(hardest_sweeps, static_cast<int>(diag.sweeps));
    }
    CHECK(hardest_sweeps < 1000);  // these tiny problems must not grind
}

TEST_CASE("training rejects degenerate inputs", "[svm]") {
    SvmConfig config;
    CHECK_THROWS_AS(train_binary_svm({{1.0}, {2.0}}, {1, 1}, config), SingleClassInput);
    CHECK_THROWS_AS(train_binary_svm({{1.0}, {2.0}}, {1, 2}, config), DataError);
    CHECK_THROWS_AS(train_binary_svm({{1.0}, {2.0, 3.0}}, {1, -1}, config), DimMismatch);
    CHECK_THROWS_AS(train_binary_svm({}, {}, config), EmptyDataset);
    CHECK_THROWS_AS(train_binary_svm({{1.0}, {std::nan("")}}, {1, -1}, config), DataError);
    CHECK_THROWS_AS(train_binary_svm({{1.0}, {2.0}}, {1, -1, 1}, config), LengthMismatch);
}

TEST_CASE("a capped optimizer returns a flagged but usable model", "[svm]") {
    Rng rng(2024);
    std::vector<std::vector<double>> X(24);
    std::vector<int> y(24);
    for (std::size_t i = 0; i < X.size(); ++i) {
        X[i] = {rng.gaussian(), rng.gaussian()};  // heavily overlapping classes
        y[i] = i % 2 == 0 ? 1 : -1;
    }
    SvmConfig config{10.0, {KernelKind::Rbf, 1.0}, 1e-9, 1};
    const SvmModel model = train_binary_svm(X, y, config);
    CHECK_FALSE(model.converged);
    CHECK(std::isfinite(decision_value(model, {0.0, 0.0})));
}

TEST_CASE("one-vs-rest separates well-spaced clusters", "[svm]") {
    Rng rng(7);
    std::vector<std::vector<double>> X;
    std::vector<int> labels;
    const double centers[3][2] = {{0, 0}, {10, 0}, {0, 10}};
    const int names[3] = {2, 5, 9};  // non-contiguous labels must survive the mapping
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 8; ++i) {
            X.push_back({centers[c][0] + 0.5 * rng.gaussian(),
                         centers[c][1] + 0.5 * rng.gaussian()});
            labels.push_back(names[c]);
        }

    SvmConfig config{10.0, {KernelKind::Rbf, 0.5}, 1e-3, 10000};
    std::vector<SmoDiagnostics> diags;
    const MulticlassModel mc = train_multiclass(X, labels, config, &diags);
    CHECK(mc.class_labels == std::vector<int>{2, 5, 9});
    CHECK(mc.models.size() == 3);
    CHECK(diags.size() == 3);

    for (std::size_t i = 0; i < X.size(); ++i) CHECK(predict(mc, X[i]) == labels[i]);
    CHECK(decision_values(mc, X[0]).size() == 3);

    CHECK_THROWS_AS(train_multiclass(X, std::vector<int>(X.size(), 4), config),
                    SingleClassInput);
}

TEST_CASE("majority vote follows mode, then mean score, then lowest class", "[svm]") {
    CHECK(majority_vote({0, 0, 0, 2, 2, 1}) == 0);
    CHECK(majority_vote({3, 3, 1}) == 3);
    CHECK(majority_vote({5}) == 5);

    // 1-1 tie broken by the higher mean decision value
    const std::vector<int> labels = {0, 1};
    const std::vector<std::vector<double>> scores = {{0.2, 0.9}, {0.1, 0.8}};
    CHECK(majority_vote({0, 1}, labels, scores) == 1);
    const std::vector<std::vector<double>> flipped = {{0.9, 0.2}, {0.8, 0.1}};
    CHECK(majority_vote({0, 1}, labels, flipped) == 0);

    // exact score tie and no scores at all both fall to the lowest class
    const std::vector<std::vector<double>> equal = {{0.5, 0.5}, {0.5, 0.5}};
    CHECK(majority_vote({1, 0}, labels, equal) == 0);
    CHECK(majority_vote({1, 0}) == 0);

    CHECK_THROWS_AS(majority_vote({}), EmptyList);
}

TEST_CASE("multiclass models round trip bit exact", "[svm]") {
    Rng rng(12);
    std::vector<std::vector<double>> X;
    std::vector<int> labels;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 6; ++i) {
            X.push_back({5.0 * c + rng.gaussian(), rng.gaussian(), rng.gaussian()});
            labels.push_back(c);
        }
    const SvmConfig config{10.0, {KernelKind::Rbf, 0.3}, 1e-3, 10000};
    const MulticlassModel mc = train_multiclass(X, labels, config);

    const auto path = temp_file("model.svm1");
    save_multiclass(mc, path);
    const MulticlassModel back = load_multiclass(path);

    REQUIRE(back.models.size() == mc.models.size());
    CHECK(back.class_labels == mc.class_labels);
    for (std::size_t m = 0; m < mc.models.size(); ++m) {
        CHECK(back.models[m].support_vectors == mc.models[m].support_vectors);
        CHECK(back.models[m].coefficients == mc.models[m].coefficients);
        CHECK(back.models[m].bias == mc.models[m].bias);
        CHECK(back.models[m].kernel.kind == mc.models[m].kernel.kind);
        CHECK(back.models[m].kernel.gamma == mc.models[m].kernel.gamma);
        CHECK(back.models[m].converged == mc.models[m].converged);
    }

    const auto bad = temp_file("bad.svm1");
    { std::ofstream out(bad, std::ios::binary); out << "NOPE"; }
    CHECK_THROWS_AS(load_multiclass(bad), BadMagic);
}

TEST_CASE("oracle self-check on a hand-solvable problem", "[svm]") {
    // two points at +-1, C large: alpha = 0.5 each, W = 0.5
    const std::vector<std::vector<double>> K = {{1.0, -1.0}, {-1.0, 1.0}};
    const std::vector<int> y = {-1, 1};
    CHECK(std::abs(svm_oracle::reference_dual_objective(K, y, 10.0, 5000) - 0.5) < 1e-6);

    // same geometry but C = 0.25 binds the box: alpha = 0.25, W = 2*0.25 - 0.25^2*2 = 0.375
    CHECK(std::abs(svm_oracle::reference_dual_objective(K, y, 0.25, 5000) - 0.375) < 1e-6);
}
