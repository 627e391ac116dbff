#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "dupless/embedding.hpp"
#include "dupless/errors.hpp"
#include "dupless/image.hpp"
#include "dupless/layers.hpp"
#include "dupless/parallel.hpp"
#include "dupless/pretext.hpp"
#include "dupless/rng.hpp"
#include "dupless/tensor.hpp"
#include "dupless/textio.hpp"

namespace dupless {

static_assert(std::endian::native == std::endian::little,
              "parameter serialization assumes a little-endian host");

/**
 * @brief Shape of the feature extractor: a stack of conv blocks, each
 * 3x3 conv (stride 1, pad 1) -> ReLU -> 2x2 max-pool (stride 2), followed by
 * global average pooling into the embedding and one affine map to logits.
 */
struct NetworkSpec {
    std::size_t input_side = 128;
    std::vector<std::size_t> block_channels = {8, 16, 32, 64};
    std::size_t num_classes = 7;

    std::size_t embedding_dim() const { return block_channels.back(); }

    void validate() const {
        if (block_channels.empty()) throw UsageError("network needs at least one block");
        for (std::size_t c : block_channels)
            if (c == 0) throw UsageError("block channel counts must be positive");
        if (num_classes < 2) throw UsageError("network needs at least 2 classes");
        std::size_t side = input_side;
        for (std::size_t i = 0; i < block_channels.size(); ++i) {
            if (side % 2 != 0)
                throw UsageError("input side " + std::to_string(input_side) +
                                 " is not divisible by 2^" + std::to_string(block_channels.size()));
            side /= 2;
        }
        if (side == 0) throw UsageError("input side too small for the block stack");
    }
};

enum class OptimizerKind { Adam, Sgd };

inline const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::Adam ? "adam" : "sgd";
}

inline OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "adam") return OptimizerKind::Adam;
    if (s == "sgd") return OptimizerKind::Sgd;
    throw UsageError("unknown optimizer: " + s);
}

struct TrainConfig {
    std::size_t batch_size = 16;
    double learning_rate = 0.0001;
    std::size_t epochs = 60;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::uint64_t seed = 0;

    void validate() const {
        if (batch_size < 1) throw UsageError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be > 0");
        if (epochs < 1) throw UsageError("epochs must be >= 1");
    }
};

template <typename T>
struct NetworkParams {
    std::vector<Tensor<T>> conv_weight;  // per block, [out, in, 3, 3]
    std::vector<Tensor<T>> conv_bias;    // per block, [out]
    Tensor<T> fc_weight;                 // [num_classes, embedding_dim]
    Tensor<T> fc_bias;                   // [num_classes]
    std::string init_scheme;
    std::uint64_t init_seed = 0;

    std::size_t num_blocks() const { return conv_weight.size(); }
    std::size_t embedding_dim() const { return conv_weight.back().shape[0]; }
    std::size_t num_classes() const { return fc_bias.shape[0]; }

    std::vector<std::pair<std::string, Tensor<T>*>> named_tensors() {
        std::vector<std::pair<std::string, Tensor<T>*>> out;
        for (std::size_t i = 0; i < conv_weight.size(); ++i) {
            out.emplace_back("conv" + std::to_string(i) + ".weight", &conv_weight[i]);
            out.emplace_back("conv" + std::to_string(i) + ".bias", &conv_bias[i]);
        }
        out.emplace_back("fc.weight", &fc_weight);
        out.emplace_back("fc.bias", &fc_bias);
        return out;
    }
    std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const {
        std::vector<std::pair<std::string, const Tensor<T>*>> out;
        for (std::size_t i = 0; i < conv_weight.size(); ++i) {
            out.emplace_back("conv" + std::to_string(i) + ".weight", &conv_weight[i]);
            out.emplace_back("conv" + std::to_string(i) + ".bias", &conv_bias[i]);
        }
        out.emplace_back("fc.weight", &fc_weight);
        out.emplace_back("fc.bias", &fc_bias);
        return out;
    }

    template <typename U>
    NetworkParams<U> cast() const {
        NetworkParams<U> out;
        for (const auto& w : conv_weight) out.conv_weight.push_back(w.template cast<U>());
        for (const auto& b : conv_bias) out.conv_bias.push_back(b.template cast<U>());
        out.fc_weight = fc_weight.template cast<U>();
        out.fc_bias = fc_bias.template cast<U>();
        out.init_scheme = init_scheme;
        out.init_seed = init_seed;
        return out;
    }
};

template <typename T>
inline NetworkParams<T> zeros_like(const NetworkParams<T>& p) {
    NetworkParams<T> out;
    for (const auto& w : p.conv_weight) out.conv_weight.emplace_back(w.shape);
    for (const auto& b : p.conv_bias) out.conv_bias.emplace_back(b.shape);
    out.fc_weight = Tensor<T>(p.fc_weight.shape);
    out.fc_bias = Tensor<T>(p.fc_bias.shape);
    return out;
}

/// He-uniform fan-in initialization: weights uniform on ±sqrt(6/fan_in),
/// biases zero. Draw order is the named-tensor order, so a seed pins every
/// parameter value.
template <typename T = float>
inline NetworkParams<T> init_params(const NetworkSpec& spec, std::uint64_t seed) {
    spec.validate();
    NetworkParams<T> params;
    params.init_scheme = "he-uniform";
    params.init_seed = seed;
    Rng rng(derive_seed(seed, 0x1217));

    std::size_t in_ch = 3;
    for (std::size_t c : spec.block_channels) {
        Tensor<T> w({c, in_ch, 3, 3});
        const double limit = std::sqrt(6.0 / static_cast<double>(in_ch * 9));
        for (T& v : w.data) v = static_cast<T>(rng.uniform(-limit, limit));
        params.conv_weight.push_back(std::move(w));
        params.conv_bias.emplace_back(std::vector<std::size_t>{c});
        in_ch = c;
    }
    params.fc_weight = Tensor<T>({spec.num_classes, spec.embedding_dim()});
    const double limit = std::sqrt(6.0 / static_cast<double>(spec.embedding_dim()));
    for (T& v : params.fc_weight.data) v = static_cast<T>(rng.uniform(-limit, limit));
    params.fc_bias = Tensor<T>({spec.num_classes});
    return params;
}

// ----------------------------------------------------------------- forward

/// Everything backward needs from one example's forward pass.
template <typename T>
struct ForwardCache {
    std::vector<Tensor<T>> block_in;                 // input to each conv
    std::vector<Tensor<T>> conv_out;                 // pre-ReLU
    std::vector<Tensor<T>> relu_out;                 // pool input
    std::vector<std::vector<T>> cols;                // im2col buffers
    std::vector<std::vector<std::size_t>> pool_argmax;
    std::vector<std::size_t> gap_in_shape;
    Tensor<T> embedding;
    Tensor<T> logits;
};

/// Scales 8-bit pixels by 1/255 into a [3,S,S] planar tensor. This is the
/// only place pixel values cross into network range.
template <typename T = float>
inline Tensor<T> patch_to_tensor(const PatchImage& patch) {
    const std::size_t s = patch.side;
    Tensor<T> out({3, s, s});
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < s; ++y)
            for (std::size_t x = 0; x < s; ++x)
                out.data[(c * s + y) * s + x] =
                    static_cast<T>(patch.pixels[(y * s + x) * 3 + c]) / T(255);
    return out;
}

template <typename T>
inline void forward_example(const NetworkParams<T>& params, const Tensor<T>& image,
                            ForwardCache<T>& cache) {
    require_rank(image, 3, "network input");
    const std::size_t blocks = params.num_blocks();
    cache.block_in.assign(blocks, Tensor<T>());
    cache.conv_out.assign(blocks, Tensor<T>());
    cache.relu_out.assign(blocks, Tensor<T>());
    cache.cols.assign(blocks, {});
    cache.pool_argmax.assign(blocks, {});

    Tensor<T> x = image;
    for (std::size_t b = 0; b < blocks; ++b) {
        cache.block_in[b] = std::move(x);
        cache.conv_out[b] = conv3x3_forward(cache.block_in[b], params.conv_weight[b],
                                            params.conv_bias[b], &cache.cols[b]);
        cache.relu_out[b] = relu_forward(cache.conv_out[b]);
        x = maxpool2_forward(cache.relu_out[b], cache.pool_argmax[b]);
    }
    cache.gap_in_shape = x.shape;
    cache.embedding = gap_forward(x);
    cache.logits = affine_forward(cache.embedding, params.fc_weight, params.fc_bias);
}

/// Accumulates parameter gradients (+=) for one example given dL/dlogits.
template <typename T>
inline void backward_example(const NetworkParams<T>& params, const ForwardCache<T>& cache,
                             const Tensor<T>& dlogits, NetworkParams<T>& grads) {
    Tensor<T> demb =
        affine_backward(dlogits, cache.embedding, params.fc_weight, grads.fc_weight, grads.fc_bias);
    Tensor<T> dx = gap_backward(demb, cache.gap_in_shape);
    for (std::size_t b = params.num_blocks(); b-- > 0;) {
        Tensor<T> drelu = maxpool2_backward(dx, cache.pool_argmax[b], cache.relu_out[b].shape);
        Tensor<T> dconv = relu_backward(drelu, cache.conv_out[b]);
        dx = conv3x3_backward(dconv, params.conv_weight[b], cache.cols[b],
                              cache.block_in[b].shape, grads.conv_weight[b], grads.conv_bias[b]);
    }
}

// ------------------------------------------------------------ batched loss

template <typename T>
struct BatchStats {
    T loss = T(0);
    std::size_t correct = 0;
};

/**
 * @brief Mean cross-entropy loss and parameter gradients over a batch.
 *
 * Per-example passes may run in parallel; each example accumulates into its
 * own buffer and buffers are reduced in example order, so results are
 * bit-identical for any thread count.
 */
template <typename T>
inline BatchStats<T> loss_and_grad(const NetworkParams<T>& params, const Tensor<T>& batch,
                                   const std::vector<int>& labels, NetworkParams<T>& grads,
                                   int threads = 1) {
    require_rank(batch, 4, "batch");
    const std::size_t n = batch.shape[0];
    if (n == 0) throw EmptyDataset("empty batch");
    if (labels.size() != n) throw ShapeMismatch("labels do not match batch size");
    const int k = static_cast<int>(params.num_classes());
    for (int label : labels)
        if (label < 0 || label >= k)
            throw LabelOutOfRange("label " + std::to_string(label) + " outside [0," +
                                  std::to_string(k) + ")");

    const std::vector<std::size_t> image_shape = {batch.shape[1], batch.shape[2], batch.shape[3]};
    const std::size_t image_numel = shape_numel(image_shape);

    std::vector<NetworkParams<T>> per_grads;
    per_grads.reserve(n);
    for (std::size_t i = 0; i < n; ++i) per_grads.push_back(zeros_like(params));
    std::vector<T> per_loss(n, T(0));
    std::vector<std::uint8_t> per_correct(n, 0);

    parallel_for(n, threads, [&](std::size_t i) {
        Tensor<T> image(image_shape);
        std::memcpy(image.data.data(), batch.data.data() + i * image_numel,
                    image_numel * sizeof(T));
        ForwardCache<T> cache;
        forward_example(params, image, cache);
        Tensor<T> dlogits;
        per_loss[i] = softmax_cross_entropy(cache.logits, labels[i], dlogits);
        const auto pred = static_cast<int>(
            std::max_element(cache.logits.data.begin(), cache.logits.data.end()) -
            cache.logits.data.begin());
        per_correct[i] = pred == labels[i] ? 1 : 0;
        for (T& v : dlogits.data) v /= static_cast<T>(n);
        backward_example(params, cache, dlogits, per_grads[i]);
    });

    grads = zeros_like(params);
    auto dst = grads.named_tensors();
    BatchStats<T> stats;
    for (std::size_t i = 0; i < n; ++i) {
        auto src = per_grads[i].named_tensors();
        for (std::size_t t = 0; t < dst.size(); ++t)
            for (std::size_t j = 0; j < dst[t].second->data.size(); ++j)
                dst[t].second->data[j] += src[t].second->data[j];
        stats.loss += per_loss[i] / static_cast<T>(n);
        stats.correct += per_correct[i];
    }
    return stats;
}

// -------------------------------------------------------------- optimizers

template <typename T>
struct AdamState {
    NetworkParams<T> m;
    NetworkParams<T> v;
    std::size_t step = 0;
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double eps = 1e-8;

    explicit AdamState(const NetworkParams<T>& params)
        : m(zeros_like(params)), v(zeros_like(params)) {}

    void update(NetworkParams<T>& params, const NetworkParams<T>& grads, double lr) {
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        auto pt = params.named_tensors();
        auto gt = std::as_const(grads).named_tensors();
        auto mt = m.named_tensors();
        auto vt = v.named_tensors();
        for (std::size_t t = 0; t < pt.size(); ++t) {
            T* p = pt[t].second->data.data();
            const T* g = gt[t].second->data.data();
            T* mm = mt[t].second->data.data();
            T* vv = vt[t].second->data.data();
            const std::size_t len = pt[t].second->data.size();
            for (std::size_t i = 0; i < len; ++i) {
                mm[i] = static_cast<T>(beta1 * mm[i] + (1.0 - beta1) * g[i]);
                vv[i] = static_cast<T>(beta2 * vv[i] + (1.0 - beta2) * g[i] * g[i]);
                const double mhat = mm[i] / bc1;
                const double vhat = vv[i] / bc2;
                p[i] = static_cast<T>(p[i] - lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

template <typename T>
inline void sgd_update(NetworkParams<T>& params, const NetworkParams<T>& grads, double lr) {
    auto pt = params.named_tensors();
    auto gt = std::as_const(grads).named_tensors();
    for (std::size_t t = 0; t < pt.size(); ++t) {
        T* p = pt[t].second->data.data();
        const T* g = gt[t].second->data.data();
        for (std::size_t i = 0; i < pt[t].second->data.size(); ++i)
            p[i] = static_cast<T>(p[i] - lr * g[i]);
    }
}

// ---------------------------------------------------------------- training

struct EpochStats {
    std::size_t epoch = 0;  // 1-based
    double loss = 0.0;      // mean over the epoch's batches
    double accuracy = 0.0;  // over the epoch's training examples
};

struct TrainResult {
    NetworkParams<float> params;
    std::vector<EpochStats> log;
};

inline void write_training_log(const std::vector<EpochStats>& log,
                               const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out << "epoch,loss,accuracy\n";
    for (const auto& e : log)
        out << e.epoch << "," << format_float(e.loss) << "," << format_float(e.accuracy) << "\n";
}

namespace detail {

template <typename T>
inline Tensor<T> examples_to_batch(const std::vector<PretextExample>& examples,
                                   const std::vector<std::size_t>& order, std::size_t begin,
                                   std::size_t end, std::vector<int>& labels) {
    const std::size_t s = examples[order[begin]].patch.side;
    Tensor<T> batch({end - begin, 3, s, s});
    labels.clear();
    const std::size_t image_numel = 3 * s * s;
    for (std::size_t i = begin; i < end; ++i) {
        const PretextExample& ex = examples[order[i]];
        if (static_cast<std::size_t>(ex.patch.side) != s)
            throw ShapeMismatch("pretext examples differ in patch side");
        Tensor<T> img = patch_to_tensor<T>(ex.patch);
        std::memcpy(batch.data.data() + (i - begin) * image_numel, img.data.data(),
                    image_numel * sizeof(T));
        labels.push_back(static_cast<int>(ex.label));
    }
    return batch;
}

}  // namespace detail

/**
 * @brief Trains the pretext network: epochs * ceil(N / batch_size) optimizer
 * steps over seed-shuffled minibatches. Deterministic in (spec, config,
 * examples); thread count never changes the result.
 */
inline TrainResult train_pretext(const NetworkSpec& spec, const TrainConfig& config,
                                 const std::vector<PretextExample>& examples, int threads = 1) {
    spec.validate();
    config.validate();
    if (examples.empty()) throw EmptyDataset("no pretext examples to train on");

    TrainResult result;
    result.params = init_params<float>(spec, config.seed);
    AdamState<float> adam(result.params);

    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, 0xE000 + epoch));
        rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t correct = 0, batches = 0;
        for (std::size_t begin = 0; begin < examples.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, examples.size());
            std::vector<int> labels;
            Tensor<float> batch = detail::examples_to_batch<float>(examples, order, begin, end, labels);

            NetworkParams<float> grads;
            const BatchStats<float> stats =
                loss_and_grad(result.params, batch, labels, grads, threads);
            if (!std::isfinite(stats.loss))
                throw DivergenceDetected("non-finite loss at epoch " + std::to_string(epoch));

            if (config.optimizer == OptimizerKind::Adam)
                adam.update(result.params, grads, config.learning_rate);
            else
                sgd_update(result.params, grads, config.learning_rate);

            loss_sum += stats.loss;
            correct += stats.correct;
            ++batches;
        }
        result.log.push_back({epoch, loss_sum / static_cast<double>(batches),
                              static_cast<double>(correct) / static_cast<double>(examples.size())});
    }
    return result;
}

/// Loss and accuracy of fixed parameters on a labeled example set.
template <typename T>
inline EpochStats evaluate_pretext(const NetworkParams<T>& params,
                                   const std::vector<PretextExample>& examples, int threads = 1) {
    if (examples.empty()) throw EmptyDataset("no pretext examples to evaluate");
    std::vector<T> losses(examples.size());
    std::vector<std::uint8_t> correct(examples.size());
    parallel_for(examples.size(), threads, [&](std::size_t i) {
        ForwardCache<T> cache;
        forward_example(params, patch_to_tensor<T>(examples[i].patch), cache);
        Tensor<T> dlogits;
        losses[i] = softmax_cross_entropy(cache.logits, static_cast<int>(examples[i].label), dlogits);
        const auto pred = static_cast<int>(
            std::max_element(cache.logits.data.begin(), cache.logits.data.end()) -
            cache.logits.data.begin());
        correct[i] = pred == static_cast<int>(examples[i].label) ? 1 : 0;
    });
    EpochStats stats;
    stats.epoch = 0;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        stats.loss += losses[i];
        stats.accuracy += correct[i];
    }
    stats.loss /= static_cast<double>(examples.size());
    stats.accuracy /= static_cast<double>(examples.size());
    return stats;
}

// ------------------------------------------------------------- embeddings

/// Embedding head of a forward pass on a batch of one.
template <typename T>
inline EmbeddingVector extract_embedding(const NetworkParams<T>& params, const PatchImage& patch,
                                         std::size_t expected_side) {
    if (static_cast<std::size_t>(patch.side) != expected_side)
        throw ShapeMismatch("patch side " + std::to_string(patch.side) +
                            " does not match network input side " + std::to_string(expected_side));
    ForwardCache<T> cache;
    forward_example(params, patch_to_tensor<T>(patch), cache);
    EmbeddingVector out;
    out.dim = cache.embedding.numel();
    out.values.reserve(out.dim);
    for (T v : cache.embedding.data) out.values.push_back(static_cast<float>(v));
    out.patch_id = patch.id();
    return out;
}

// ------------------------------------------------------------------- NNP1
//
// Layout: "NNP1", u32 tensor count, then per tensor u32 name length, name
// bytes, u32 rank, u32 dims; after the manifest, the payloads as raw LE f32
// in manifest order.

inline void save_params(const NetworkParams<float>& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    const auto named = params.named_tensors();
    out.write("NNP1", 4);
    detail::put_u32(out, static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        detail::put_u32(out, static_cast<std::uint32_t>(tensor->shape.size()));
        for (std::size_t d : tensor->shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    }
    for (const auto& [name, tensor] : named)
        out.write(reinterpret_cast<const char*>(tensor->data.data()),
                  static_cast<std::streamsize>(tensor->data.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());
}

inline std::vector<std::pair<std::string, Tensor<float>>> load_named_tensors(
    const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[4] = {};
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "NNP1", 4) != 0)
        throw BadMagic("not an NNP1 file: " + path.string());
    const std::uint32_t count = detail::get_u32(in, "NNP1 tensor count");
    std::vector<std::pair<std::string, Tensor<float>>> named(count);
    for (auto& [name, tensor] : named) {
        const std::uint32_t name_len = detail::get_u32(in, "NNP1 name length");
        name.resize(name_len);
        in.read(name.data(), name_len);
        if (!in) throw TruncatedFile("NNP1 manifest ends early: " + path.string());
        const std::uint32_t rank = detail::get_u32(in, "NNP1 rank");
        std::vector<std::size_t> shape(rank);
        for (auto& d : shape) d = detail::get_u32(in, "NNP1 dim");
        tensor = Tensor<float>(std::move(shape));
    }
    for (auto& [name, tensor] : named) {
        in.read(reinterpret_cast<char*>(tensor.data.data()),
                static_cast<std::streamsize>(tensor.data.size() * sizeof(float)));
        if (!in) throw TruncatedFile("NNP1 payload ends early: " + path.string());
    }
    return named;
}

/// Rebuilds params from a tensor manifest; the block structure is recovered
/// from the conv weight shapes.
inline NetworkParams<float> load_params(const std::filesystem::path& path) {
    auto named = load_named_tensors(path);
    NetworkParams<float> params;
    params.init_scheme = "loaded";
    for (std::size_t b = 0;; ++b) {
        const std::string wname = "conv" + std::to_string(b) + ".weight";
        const std::string bname = "conv" + std::to_string(b) + ".bias";
        Tensor<float>*w = nullptr, *bias = nullptr;
        for (auto& [name, tensor] : named) {
            if (name == wname) w = &tensor;
            if (name == bname) bias = &tensor;
        }
        if (!w && !bias) break;
        if (!w || !bias) throw DataError("incomplete conv block " + std::to_string(b) + " in " +
                                         path.string());
        params.conv_weight.push_back(std::move(*w));
        params.conv_bias.push_back(std::move(*bias));
    }
    if (params.conv_weight.empty()) throw DataError("no conv blocks in " + path.string());
    Tensor<float>*fw = nullptr, *fb = nullptr;
    for (auto& [name, tensor] : named) {
        if (name == "fc.weight") fw = &tensor;
        if (name == "fc.bias") fb = &tensor;
    }
    if (!fw || !fb) throw DataError("missing affine head in " + path.string());
    params.fc_weight = std::move(*fw);
    params.fc_bias = std::move(*fb);

    std::size_t in_ch = 3;
    for (std::size_t b = 0; b < params.conv_weight.size(); ++b) {
        const auto& s = params.conv_weight[b].shape;
        if (s.size() != 4 || s[1] != in_ch || s[2] != 3 || s[3] != 3)
            throw DataError("conv" + std::to_string(b) + " has unexpected shape " +
                            shape_string(s));
        require_shape(params.conv_bias[b], {s[0]}, "loaded conv bias");
        in_ch = s[0];
    }
    require_shape(params.fc_weight, {params.fc_bias.shape[0], in_ch}, "loaded fc weight");
    return params;
}

}  // namespace dupless
