#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>

#include "dupless/layers.hpp"
#include "dupless/nnet.hpp"
#include "dupless/rng.hpp"

using namespace dupless;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "dupless_test_nnet";
    std::filesystem::create_directories(dir);
    return dir / name;
}

Tensor<double> random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
    Tensor<double> t(std::move(shape));
    for (auto& v : t.data) v = rng.gaussian() * scale;
    return t;
}

double rel_err(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-4);
}

/// Central finite difference of `loss` against the analytic gradient, one
/// element at a time. Returns the worst relative error.
double fd_against(Tensor<double>& x, const Tensor<double>& analytic,
                  const std::function<double()>& loss, double h = 1e-3) {
    REQUIRE(x.data.size() == analytic.data.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < x.data.size(); ++i) {
        const double keep = x.data[i];
        x.data[i] = keep + h;
        const double up = loss();
        x.data[i] = keep - h;
        const double down = loss();
        x.data[i] = keep;
        worst = std::max(worst, rel_err((up - down) / (2 * h), analytic.data[i]));
    }
    return worst;
}

double weighted_sum(const Tensor<double>& t, const Tensor<double>& r) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.data.size(); ++i) s += t.data[i] * r.data[i];
    return s;
}

}  // namespace

TEST_CASE("conv3x3 matches a direct convolution", "[nnet]") {
    Rng rng(31);
    const std::size_t C = 2, O = 3, H = 5, W = 4;
    const Tensor<double> input = random_tensor({C, H, W}, rng);
    const Tensor<double> weight = random_tensor({O, C, 3, 3}, rng);
    const Tensor<double> bias = random_tensor({O}, rng);
    const Tensor<double> out = conv3x3_forward(input, weight, bias);
    REQUIRE(out.shape == std::vector<std::size_t>{O, H, W});

    for (std::size_t o = 0; o < O; ++o)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double acc = bias.data[o];
                for (std::size_t c = 0; c < C; ++c)
                    for (int ky = -1; ky <= 1; ++ky)
                        for (int kx = -1; kx <= 1; ++kx) {
                            const int sy = static_cast<int>(y) + ky;
                            const int sx = static_cast<int>(x) + kx;
                            if (sy < 0 || sy >= static_cast<int>(H) || sx < 0 ||
                                sx >= static_cast<int>(W))
                                continue;  // zero padding
                            acc += input(c, static_cast<std::size_t>(sy),
                                         static_cast<std::size_t>(sx)) *
                                   weight(o, c, static_cast<std::size_t>(ky + 1),
                                          static_cast<std::size_t>(kx + 1));
                        }
                CHECK(std::abs(out(o, y, x) - acc) < 1e-12);
            }
}

TEST_CASE("conv3x3 gradients pass finite differences", "[nnet]") {
    Rng rng(32);
    Tensor<double> input = random_tensor({2, 4, 5}, rng);
    Tensor<double> weight = random_tensor({3, 2, 3, 3}, rng);
    Tensor<double> bias = random_tensor({3}, rng);
    const Tensor<double> r = random_tensor({3, 4, 5}, rng);

    const auto loss = [&] { return weighted_sum(conv3x3_forward(input, weight, bias), r); };

    std::vector<double> cols;
    conv3x3_forward(input, weight, bias, &cols);
    Tensor<double> dweight(weight.shape), dbias(bias.shape);
    const Tensor<double> dinput = conv3x3_backward(r, weight, cols, input.shape, dweight, dbias);

    Tensor<double> din_copy = dinput;
    CHECK(fd_against(input, din_copy, loss) < 1e-3);
    CHECK(fd_against(weight, dweight, loss) < 1e-3);
    CHECK(fd_against(bias, dbias, loss) < 1e-3);
}

TEST_CASE("relu gradients pass finite differences", "[nnet]") {
    Rng rng(33);
    Tensor<double> input = random_tensor({2, 3, 3}, rng);
    const Tensor<double> r = random_tensor({2, 3, 3}, rng);
    const auto loss = [&] { return weighted_sum(relu_forward(input), r); };
    const Tensor<double> dinput = relu_backward(r, input);
    Tensor<double> din_copy = dinput;
    CHECK(fd_against(input, din_copy, loss) < 1e-3);
}

TEST_CASE("maxpool gradients pass finite differences", "[nnet]") {
    Rng rng(34);
    // spread values out so the FD step cannot flip an argmax
    Tensor<double> input = random_tensor({2, 4, 6}, rng, 5.0);
    const Tensor<double> r = random_tensor({2, 2, 3}, rng);
    const auto loss = [&] {
        std::vector<std::size_t> argmax;
        return weighted_sum(maxpool2_forward(input, argmax), r);
    };
    std::vector<std::size_t> argmax;
    const Tensor<double> out = maxpool2_forward(input, argmax);
    REQUIRE(out.shape == std::vector<std::size_t>{2, 2, 3});
    const Tensor<double> dinput = maxpool2_backward(r, argmax, input.shape);
    Tensor<double> din_copy = dinput;
    CHECK(fd_against(input, din_copy, loss) < 1e-3);

    Tensor<double> odd({1, 3, 4});
    std::vector<std::size_t> am;
    CHECK_THROWS_AS(maxpool2_forward(odd, am), ShapeMismatch);
}

TEST_CASE("gap gradients pass finite differences", "[nnet]") {
    Rng rng(35);
    Tensor<double> input = random_tensor({3, 4, 4}, rng);
    const Tensor<double> r = random_tensor({3}, rng);
    const auto loss = [&] { return weighted_sum(gap_forward(input), r); };
    const Tensor<double> dinput = gap_backward(r, input.shape);
    Tensor<double> din_copy = dinput;
    CHECK(fd_against(input, din_copy, loss) < 1e-3);

    const Tensor<double> out = gap_forward(input);
    double mean0 = 0.0;
    for (std::size_t i = 0; i < 16; ++i) mean0 += input.data[i] / 16.0;
    CHECK(std::abs(out.data[0] - mean0) < 1e-12);
}

TEST_CASE("affine gradients pass finite differences", "[nnet]") {
    Rng rng(36);
    Tensor<double> x = random_tensor({5}, rng);
    Tensor<double> weight = random_tensor({4, 5}, rng);
    Tensor<double> bias = random_tensor({4}, rng);
    const Tensor<double> r = random_tensor({4}, rng);
    const auto loss = [&] { return weighted_sum(affine_forward(x, weight, bias), r); };

    Tensor<double> dweight(weight.shape), dbias(bias.shape);
    const Tensor<double> dx = affine_backward(r, x, weight, dweight, dbias);
    Tensor<double> dx_copy = dx;
    CHECK(fd_against(x, dx_copy, loss) < 1e-3);
    CHECK(fd_against(weight, dweight, loss) < 1e-3);
    CHECK(fd_against(bias, dbias, loss) < 1e-3);
}

TEST_CASE("softmax cross-entropy gradient and value", "[nnet]") {
    Rng rng(37);
    Tensor<double> logits = random_tensor({7}, rng);
    const int label = 3;

    Tensor<double> dlogits;
    const double loss_value = softmax_cross_entropy(logits, label, dlogits);

    // independent recomputation
    double mx = logits.data[0];
    for (double v : logits.data) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits.data) z += std::exp(v - mx);
    CHECK(std::abs(loss_value - (-(logits.data[3] - mx) + std::log(z))) < 1e-12);

    const auto loss = [&] {
        Tensor<double> d;
        return softmax_cross_entropy(logits, label, d);
    };
    CHECK(fd_against(logits, dlogits, loss) < 1e-3);

    const auto probs = softmax(logits);
    double sum = 0.0;
    for (double p : probs.data) sum += p;
    CHECK(std::abs(sum - 1.0) < 1e-12);

    Tensor<double> d;
    CHECK_THROWS_AS(softmax_cross_entropy(logits, 7, d), LabelOutOfRange);
    CHECK_THROWS_AS(softmax_cross_entropy(logits, -1, d), LabelOutOfRange);
}

TEST_CASE("full pretext loss matches finite differences", "[nnet]") {
    const NetworkSpec spec{8, {2, 3}, 7};
    NetworkParams<double> params = init_params<double>(spec, 77);

    Rng rng(38);
    const std::size_t n = 3;
    Tensor<double> batch({n, 3, 8, 8});
    for (auto& v : batch.data) v = rng.uniform();  // matches the 0..1 input range
    const std::vector<int> labels = {0, 4, 6};

    NetworkParams<double> grads;
    loss_and_grad(params, batch, labels, grads);

    const auto loss = [&] {
        NetworkParams<double> g;
        return static_cast<double>(loss_and_grad(params, batch, labels, g).loss);
    };

    auto pt = params.named_tensors();
    auto gt = grads.named_tensors();
    REQUIRE(pt.size() == gt.size());
    double worst = 0.0;
    for (std::size_t t = 0; t < pt.size(); ++t)
        worst = std::max(worst, fd_against(*pt[t].second, *gt[t].second, loss));
    INFO("worst relative gradient error " << worst);
    CHECK(worst < 1e-3);
}

TEST_CASE("initialization is bounded, zero-biased, deterministic", "[nnet]") {
    const NetworkSpec spec{16, {4, 8}, 7};
    const auto a = init_params<float>(spec, 5);
    const auto b = init_params<float>(spec, 5);
    const auto c = init_params<float>(spec, 6);

    REQUIRE(a.conv_weight.size() == 2);
    CHECK(a.conv_weight[0].shape == std::vector<std::size_t>{4, 3, 3, 3});
    CHECK(a.conv_weight[1].shape == std::vector<std::size_t>{8, 4, 3, 3});
    CHECK(a.fc_weight.shape == std::vector<std::size_t>{7, 8});
    CHECK(a.embedding_dim() == 8);

    const double bound0 = std::sqrt(6.0 / (3 * 9));
    for (float w : a.conv_weight[0].data) CHECK(std::abs(w) <= bound0);
    const double bound1 = std::sqrt(6.0 / (4 * 9));
    for (float w : a.conv_weight[1].data) CHECK(std::abs(w) <= bound1);
    for (float v : a.conv_bias[0].data) CHECK(v == 0.0f);
    for (float v : a.fc_bias.data) CHECK(v == 0.0f);

    CHECK(a.conv_weight[0].data == b.conv_weight[0].data);
    CHECK(a.fc_weight.data == b.fc_weight.data);
    CHECK(a.conv_weight[0].data != c.conv_weight[0].data);

    CHECK_THROWS_AS((NetworkSpec{10, {2, 2}, 7}.validate()), UsageError);
}

TEST_CASE("optimizer steps match a hand-rolled reference", "[nnet]") {
    const NetworkSpec spec{4, {2}, 3};
    NetworkParams<double> params = init_params<double>(spec, 9);
    NetworkParams<double> reference = params;

    Rng rng(40);
    NetworkParams<double> grads = zeros_like(params);
    for (auto& [name, t] : grads.named_tensors())
        for (auto& v : t->data) v = rng.gaussian();

    SECTION("adam") {
        AdamState<double> adam(params);
        NetworkParams<double> m = zeros_like(params), v = zeros_like(params);
        const double lr = 0.01;
        for (std::size_t step = 1; step <= 3; ++step) {
            adam.update(params, grads, lr);
            auto pr = reference.named_tensors();
            auto gr = std::as_const(grads).named_tensors();
            auto mr = m.named_tensors();
            auto vr = v.named_tensors();
            for (std::size_t t = 0; t < pr.size(); ++t)
                for (std::size_t i = 0; i < pr[t].second->data.size(); ++i) {
                    double& mi = mr[t].second->data[i];
                    double& vi = vr[t].second->data[i];
                    const double g = gr[t].second->data[i];
                    mi = 0.9 * mi + 0.1 * g;
                    vi = 0.999 * vi + 0.001 * g * g;
                    const double mhat = mi / (1.0 - std::pow(0.9, static_cast<double>(step)));
                    const double vhat = vi / (1.0 - std::pow(0.999, static_cast<double>(step)));
                    pr[t].second->data[i] -= lr * mhat / (std::sqrt(vhat) + 1e-8);
                }
            auto pt = params.named_tensors();
            for (std::size_t t = 0; t < pt.size(); ++t)
                for (std::size_t i = 0; i < pt[t].second->data.size(); ++i)
                    CHECK(std::abs(pt[t].second->data[i] - pr[t].second->data[i]) < 1e-12);
        }
    }

    SECTION("sgd") {
        sgd_update(params, grads, 0.5);
        auto pt = params.named_tensors();
        auto pr = reference.named_tensors();
        auto gr = std::as_const(grads).named_tensors();
        for (std::size_t t = 0; t < pt.size(); ++t)
            for (std::size_t i = 0; i < pt[t].second->data.size(); ++i)
                CHECK(std::abs(pt[t].second->data[i] -
                               (pr[t].second->data[i] - 0.5 * gr[t].second->data[i])) < 1e-12);
    }
}

TEST_CASE("patch_to_tensor scales to unit range in planar layout", "[nnet]") {
    PatchImage patch(4, std::uint8_t{0}, PatchOrigin{"p", 0, 0});
    patch.set(1, 2, 0, 255);
    patch.set(3, 0, 2, 51);
    const Tensor<float> t = patch_to_tensor<float>(patch);
    REQUIRE(t.shape == std::vector<std::size_t>{3, 4, 4});
    CHECK(t.data[(0 * 4 + 2) * 4 + 1] == 1.0f);
    CHECK(t.data[(2 * 4 + 0) * 4 + 3] == Catch::Approx(0.2).epsilon(1e-6));
    CHECK(t.data[0] == 0.0f);
}

TEST_CASE("training fits a trivially separable pretext set", "[nnet]") {
    // constant-color patches with a distinct RGB color per label; a GAP
    // network separates these from the channel means alone
    const std::uint8_t colors[7][3] = {{230, 30, 30},  {30, 230, 30},  {30, 30, 230},
                                       {230, 230, 30}, {230, 30, 230}, {30, 230, 230},
                                       {160, 160, 160}};
    std::vector<PretextExample> examples;
    for (int k = 0; k < 7; ++k)
        for (int rep = 0; rep < 5; ++rep) {
            PatchImage patch(8, std::uint8_t{0}, PatchOrigin{"c" + std::to_string(k), rep, 0});
            for (int y = 0; y < 8; ++y)
                for (int x = 0; x < 8; ++x)
                    for (int c = 0; c < 3; ++c) patch.set(x, y, c, colors[k][c]);
            PretextExample ex;
            ex.patch = std::move(patch);
            ex.label = static_cast<DuplicationClass>(k);
            ex.source_patch_id = ex.patch.id();
            examples.push_back(std::move(ex));
        }

    const NetworkSpec spec{8, {4}, 7};
    const TrainConfig config{8, 0.02, 40, OptimizerKind::Adam, 3};
    const TrainResult result = train_pretext(spec, config, examples);

    REQUIRE(result.log.size() == 40);
    CHECK(result.log.front().epoch == 1);
    CHECK(result.log.back().epoch == 40);
    CHECK(result.log.back().loss < result.log.front().loss);
    CHECK(result.log.back().accuracy > 0.8);

    const EpochStats eval = evaluate_pretext(result.params, examples);
    CHECK(eval.accuracy > 0.8);
    CHECK(eval.loss < 1.0);

    // embeddings come from the GAP layer with the trained weights
    const EmbeddingVector emb = extract_embedding(result.params, examples[0].patch, 8);
    CHECK(emb.dim == 4);
    CHECK(emb.patch_id == examples[0].patch.id());
    CHECK_THROWS_AS(extract_embedding(result.params, PatchImage(16, std::uint8_t{0}, {}), 8),
                    ShapeMismatch);
}

TEST_CASE("batch gradients are identical across thread counts", "[nnet]") {
    const NetworkSpec spec{8, {2, 3}, 7};
    NetworkParams<float> params = init_params<float>(spec, 11);
    Rng rng(41);
    Tensor<float> batch({5, 3, 8, 8});
    for (auto& v : batch.data) v = static_cast<float>(rng.uniform());
    const std::vector<int> labels = {1, 2, 3, 4, 5};

    NetworkParams<float> g1, g4;
    const auto s1 = loss_and_grad(params, batch, labels, g1, 1);
    const auto s4 = loss_and_grad(params, batch, labels, g4, 4);
    CHECK(s1.loss == s4.loss);
    CHECK(s1.correct == s4.correct);
    auto t1 = std::as_const(g1).named_tensors();
    auto t4 = std::as_const(g4).named_tensors();
    for (std::size_t t = 0; t < t1.size(); ++t)
        CHECK(t1[t].second->data == t4[t].second->data);
}

TEST_CASE("parameter files round trip bit exact", "[nnet]") {
    const NetworkSpec spec{16, {4, 8}, 7};
    const NetworkParams<float> params = init_params<float>(spec, 13);
    const auto path = temp_file("params.nnp1");
    save_params(params, path);

    const NetworkParams<float> back = load_params(path);
    REQUIRE(back.conv_weight.size() == params.conv_weight.size());
    for (std::size_t b = 0; b < params.conv_weight.size(); ++b) {
        CHECK(back.conv_weight[b].shape == params.conv_weight[b].shape);
        CHECK(back.conv_weight[b].data == params.conv_weight[b].data);
        CHECK(back.conv_bias[b].data == params.conv_bias[b].data);
    }
    CHECK(back.fc_weight.data == params.fc_weight.data);
    CHECK(back.fc_bias.data == params.fc_bias.data);
    CHECK(back.init_scheme == "loaded");

    const auto bad = temp_file("bad.nnp1");
    { std::ofstream out(bad, std::ios::binary); out << "NOPE"; }
    CHECK_THROWS_AS(load_params(bad), BadMagic);

    const auto trunc = temp_file("trunc.nnp1");
    {
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        std::ofstream out(trunc, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS_AS(load_params(trunc), TruncatedFile);
}

TEST_CASE("training rejects inconsistent inputs", "[nnet]") {
    const NetworkSpec spec{8, {2}, 7};
    CHECK_THROWS_AS(train_pretext(spec, TrainConfig{4, 0.01, 2, OptimizerKind::Sgd, 0}, {}),
                    EmptyDataset);

    NetworkParams<float> params = init_params<float>(spec, 1);
    Tensor<float> batch({2, 3, 8, 8});
    NetworkParams<float> grads;
    CHECK_THROWS_AS(loss_and_grad(params, batch, {0}, grads), ShapeMismatch);
    CHECK_THROWS_AS(loss_and_grad(params, batch, {0, 9}, grads), LabelOutOfRange);
}
