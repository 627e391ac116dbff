#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dupless/rng.hpp"
#include "dupless/tsne.hpp"

using namespace dupless;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dupless_test_tsne";
    std::filesystem::create_directories(dir);
    return dir / name;
}

std::vector<std::vector<double>> random_points(std::size_t n, std::size_t dim,
                                               std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<double>> X(n, std::vector<double>(dim));
    for (auto& row : X)
        for (auto& v : row) v = rng.gaussian();
    return X;
}

/// Entropy-based perplexity of one conditional row, recomputed directly.
double row_perplexity_of(const std::vector<double>& conditional, std::size_t n, std::size_t i) {
    double h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        const double p = conditional[i * n + j];
        if (p > 0.0) h -= p * std::log(p);
    }
    return std::exp(h);
}

/// KL(P||Q) recomputed without the library's gradient plumbing.
double kl_direct(const AffinityMatrix& P, const std::vector<double>& layout, std::size_t dim) {
    const std::size_t n = P.n;
    std::vector<double> w(n * n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            if (i == j) continue;
            double d2 = 0.0;
            for (std::size_t k = 0; k < dim; ++k) {
                const double d = layout[i * dim + k] - layout[j * dim + k];
                d2 += d * d;
            }
            w[i * n + j] = 1.0 / (1.0 + d2);
            z += w[i * n + j];
        }
    double kl = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const double p = P.at(i, j);
            if (p <= 0.0) continue;
            const double q = std::max(w[i * n + j] / z, 1e-12);
            kl += p * std::log(p / q);
        }
    return kl;
}

}  // namespace

TEST_CASE("affinities hit the target perplexity per row", "[tsne]") {
    const auto X = random_points(40, 5, 1);
    std::vector<double> conditional;
    const AffinityMatrix P = compute_affinities(X, 12.0, 1, &conditional);

    REQUIRE(conditional.size() == 40u * 40u);
    for (std::size_t i = 0; i < 40; ++i) {
        CHECK(std::abs(row_perplexity_of(conditional, 40, i) - 12.0) < 1e-4);
        CHECK(conditional[i * 40 + i] == 0.0);
        double row_sum = 0.0;
        for (std::size_t j = 0; j < 40; ++j) row_sum += conditional[i * 40 + j];
        CHECK(std::abs(row_sum - 1.0) < 1e-12);
    }
}

TEST_CASE("the affinity matrix is symmetric, zero-diagonal, normalized", "[tsne]") {
    const auto X = random_points(25, 4, 2);
    const AffinityMatrix P = compute_affinities(X, 8.0);
    double total = 0.0;
    for (std::size_t i = 0; i < 25; ++i) {
        CHECK(P.at(i, i) == 0.0);
        for (std::size_t j = 0; j < 25; ++j) {
            CHECK(P.at(i, j) == P.at(j, i));
            CHECK(P.at(i, j) >= 0.0);
            total += P.at(i, j);
        }
    }
    CHECK(std::abs(total - 1.0) < 1e-9);
    CHECK_NOTHROW(P.validate());
}

TEST_CASE("affinity preconditions", "[tsne]") {
    const auto X = random_points(5, 3, 3);
    CHECK_THROWS_AS(compute_affinities(X, 10.0), PerplexityTooLarge);
    CHECK_THROWS_AS(compute_affinities(X, 0.5), UsageError);
    CHECK_THROWS_AS(compute_affinities(random_points(2, 3, 4), 1.5), DataError);

    std::vector<std::vector<double>> identical(6, {1.0, 2.0});
    CHECK_THROWS_AS(compute_affinities(identical, 3.0), DegenerateDistances);

    std::vector<std::vector<double>> ragged = {{1, 2}, {1}, {0, 1}};
    CHECK_THROWS_AS(compute_affinities(ragged, 2.0), DimMismatch);

    // threading must not change the result
    const auto big = random_points(30, 4, 5);
    const AffinityMatrix a = compute_affinities(big, 9.0, 1);
    const AffinityMatrix b = compute_affinities(big, 9.0, 4);
    CHECK(a.p == b.p);
}

TEST_CASE("kl gradient matches finite differences on five points", "[tsne]") {
    const auto X = random_points(5, 3, 6);
    const AffinityMatrix P = compute_affinities(X, 2.5);

    Rng rng(7);
    std::vector<double> layout(10);
    for (auto& v : layout) v = rng.gaussian();

    std::vector<double> grad;
    tsne_kl_and_grad(P, layout, 2, 1.0, &grad, 1);
    REQUIRE(grad.size() == layout.size());

    const auto objective = [&] { return kl_direct(P, layout, 2); };
    const double h = 1e-5;
    double worst = 0.0;
    for (std::size_t i = 0; i < layout.size(); ++i) {
        const double keep = layout[i];
        layout[i] = keep + h;
        const double up = objective();
        layout[i] = keep - h;
        const double down = objective();
        layout[i] = keep;
        const double fd = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(fd - grad[i]) /
                                    std::max(std::abs(fd) + std::abs(grad[i]), 1e-6));
    }
    INFO("worst relative error " << worst);
    CHECK(worst < 1e-3);
}

TEST_CASE("exaggeration adds exactly the scaled attraction term", "[tsne]") {
    const auto X = random_points(5, 3, 6);
    const AffinityMatrix P = compute_affinities(X, 2.5);
    Rng rng(11);
    std::vector<double> layout(10);
    for (auto& v : layout) v = rng.gaussian();

    std::vector<double> g1, g4;
    tsne_kl_and_grad(P, layout, 2, 1.0, &g1, 1);
    tsne_kl_and_grad(P, layout, 2, 4.0, &g4, 1);

    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t k = 0; k < 2; ++k) {
            double attraction = 0.0;
            for (std::size_t j = 0; j < 5; ++j) {
                if (i == j) continue;
                double d2 = 0.0;
                for (std::size_t kk = 0; kk < 2; ++kk) {
                    const double d = layout[i * 2 + kk] - layout[j * 2 + kk];
                    d2 += d * d;
                }
                attraction += 4.0 * P.at(i, j) / (1.0 + d2) *
                              (layout[i * 2 + k] - layout[j * 2 + k]);
            }
            CHECK(g4[i * 2 + k] - g1[i * 2 + k] ==
                  Catch::Approx(3.0 * attraction).margin(1e-10));
        }
}

TEST_CASE("gradient components sum to zero (translation invariance)", "[tsne]") {
    const auto X = random_points(12, 4, 8);
    const AffinityMatrix P = compute_affinities(X, 5.0);
    Rng rng(9);
    std::vector<double> layout(24);
    for (auto& v : layout) v = rng.gaussian();

    std::vector<double> grad;
    const double kl = tsne_kl_and_grad(P, layout, 2, 1.0, &grad, 1);
    CHECK(kl == Catch::Approx(kl_direct(P, layout, 2)).margin(1e-10));

    double sx = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < 12; ++i) {
        sx += grad[i * 2];
        sy += grad[i * 2 + 1];
    }
    CHECK(std::abs(sx) < 1e-10);
    CHECK(std::abs(sy) < 1e-10);
}

TEST_CASE("optimization reduces kl on a clustered instance", "[tsne]") {
    Rng rng(10);
    std::vector<std::vector<double>> X;
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 17; ++i) {
            std::vector<double> p(4, 0.0);
            p[static_cast<std::size_t>(c)] = 8.0;
            for (auto& v : p) v += 0.3 * rng.gaussian();
            X.push_back(std::move(p));
        }
    REQUIRE(X.size() == 51);

    const AffinityMatrix P = compute_affinities(X, 10.0);
    TsneConfig config;
    config.perplexity = 10.0;
    config.iterations = 400;
    config.exaggeration_iters = 100;
    config.momentum_switch = 100;
    config.seed = 4;

    const TsneResult result = run_tsne(P, config);
    REQUIRE(result.layout.size() == 51u * 2u);
    REQUIRE(result.kl_log.size() == 400);
    CHECK(result.kl_log.back() < result.kl_log.front());
    for (double v : result.layout) CHECK(std::isfinite(v));

    // deterministic given the seed
    const TsneResult again = run_tsne(P, config);
    CHECK(again.layout == result.layout);
    const TsneResult diff = run_tsne(P, TsneConfig{10.0, 2, 50, 200.0, 12.0, 25, 0.5, 0.8, 25, 5});
    CHECK(diff.layout != result.layout);
}

TEST_CASE("scatter outputs", "[tsne]") {
    const std::vector<ScatterPoint> points = {
        {"a#r0c0", 1.25, -0.5, "normal"},
        {"b#r0c0", -2.0, 3.5, "invasive"},
        {"c#r0c0", 0.0, 0.0, "mystery"},
    };
    const auto csv = temp_file("scatter.csv");
    write_scatter_csv(points, csv);
    std::ifstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "id,x,y,label");
    std::getline(in, line);
    CHECK(line == "a#r0c0,1.25,-0.5,normal");

    CHECK(scatter_color("normal", 0) == "#d62728");
    CHECK(scatter_color("benign", 0) == "#2ca02c");
    CHECK(scatter_color("in-situ", 0) == "#9467bd");
    CHECK(scatter_color("invasive", 0) == "#1f77b4");
    CHECK(scatter_color("mystery", 0) != scatter_color("mystery2", 1));

    const auto svg = temp_file("scatter.svg");
    write_scatter_svg(points, svg);
    std::ifstream sv(svg);
    std::string all((std::istreambuf_iterator<char>(sv)), std::istreambuf_iterator<char>());
    CHECK(all.find("<svg") != std::string::npos);
    CHECK(all.find("#d62728") != std::string::npos);
    CHECK(all.find("a#r0c0") != std::string::npos);
}
