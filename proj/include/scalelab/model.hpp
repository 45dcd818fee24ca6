#pragma once

// Model construction from an architecture spec, forward/backward
// orchestration, the epoch training loop, and binary model persistence.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "scalelab/architecture.hpp"
#include "scalelab/data.hpp"
#include "scalelab/layers.hpp"
#include "scalelab/optimizer.hpp"

namespace scalelab {

struct TrainConfig {
    int epochs = 20;
    int batch_size = 32;
    std::uint64_t seed = 0;
    bool shuffle = true;
    AdamHyper adam;
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

namespace detail {

inline constexpr std::uint64_t kStreamInit = 0x494e4954;     // "INIT"
inline constexpr std::uint64_t kStreamDropout = 0x44524f50;  // "DROP"

inline std::vector<LayerState> make_states(const ArchitectureSpec& arch) {
    std::vector<LayerState> states;
    states.reserve(arch.layers.size());
    Shape current = arch.input_shape;
    for (const LayerSpec& spec : arch.layers) {
        LayerState st;
        switch (spec.kind) {
            case LayerKind::conv2d:
                st.weights = Tensor(Shape{spec.kernel, spec.kernel, current[2], spec.filters});
                st.bias = Tensor(Shape{spec.filters});
                break;
            case LayerKind::dense:
                st.weights = Tensor(Shape{current[0], spec.units});
                st.bias = Tensor(Shape{spec.units});
                break;
            case LayerKind::batchnorm: {
                const int c = current.back();
                st.gamma = Tensor(Shape{c}, 1.0f);
                st.beta = Tensor(Shape{c});
                st.running_mean = Tensor(Shape{c});
                st.running_var = Tensor(Shape{c}, 1.0f);
                break;
            }
            default:
                break;
        }
        current = layer_output_shape(spec, current);
        states.push_back(std::move(st));
    }
    return states;
}

}  // namespace detail

class Model {
public:
    Model() = default;

    // Fan-balanced uniform init: weights ~ U(+-sqrt(6/(fan_in+fan_out))),
    // biases zero, batchnorm gamma 1 / beta 0. Bitwise deterministic per seed.
    Model(ArchitectureSpec arch, std::uint64_t seed) : arch_(std::move(arch)), seed_(seed), dropout_rng_(0) {
        infer_shapes(arch_);  // validate the chain before allocating
        states_ = detail::make_states(arch_);
        const Rng root(seed);
        dropout_rng_ = root.stream(detail::kStreamDropout);
        Shape current = arch_.input_shape;
        for (size_t i = 0; i < arch_.layers.size(); ++i) {
            const LayerSpec& spec = arch_.layers[i];
            LayerState& st = states_[i];
            if (spec.kind == LayerKind::conv2d || spec.kind == LayerKind::dense) {
                double fan_in, fan_out;
                if (spec.kind == LayerKind::conv2d) {
                    fan_in = static_cast<double>(spec.kernel) * spec.kernel * current[2];
                    fan_out = static_cast<double>(spec.kernel) * spec.kernel * spec.filters;
                } else {
                    fan_in = current[0];
                    fan_out = spec.units;
                }
                const float bound = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
                Rng stream = root.stream(detail::kStreamInit, static_cast<std::uint64_t>(i));
                st.weights = rng_uniform(stream, st.weights.shape(), -bound, bound);
            }
            current = layer_output_shape(spec, current);
        }
        init_adam();
    }

    const ArchitectureSpec& arch() const { return arch_; }
    std::vector<LayerState>& states() { return states_; }
    const std::vector<LayerState>& states() const { return states_; }
    std::uint64_t seed() const { return seed_; }

    std::int64_t parameter_count() const {
        std::int64_t n = 0;
        for (const auto& st : states_) {
            n += st.weights.size() + st.bias.size();
            n += st.gamma.size() + st.beta.size();
        }
        return n;
    }

    // Probabilities (N,2); rows sum to 1 when the head is softmax.
    Tensor forward(const Tensor& batch, bool train) { return run(batch, train, false); }

    // Head pre-activations: what the loss consumes.
    Tensor forward_logits(const Tensor& batch, bool train) { return run(batch, train, true); }

    // Batch-mean cross-entropy loss plus gradients for every trainable
    // tensor (same layout as trainable_tensors) and the input.
    struct Gradients {
        double loss = 0.0;
        std::vector<std::vector<Tensor>> per_layer;
        Tensor input;
    };

    Gradients compute_gradients(const Tensor& batch, const std::vector<int>& labels) {
        Tensor logits = forward_logits(batch, true);
        LossValue loss = cross_entropy_loss(logits, labels);
        Gradients out;
        out.loss = loss.loss;
        out.per_layer.resize(arch_.layers.size());
        Tensor grad = std::move(loss.grad_logits);
        for (size_t ri = arch_.layers.size(); ri-- > 0;) {
            const LayerSpec& spec = arch_.layers[ri];
            LayerState& st = states_[ri];
            switch (spec.kind) {
                case LayerKind::conv2d: {
                    ConvGrads g = conv2d_backward(grad, st, spec);
                    out.per_layer[ri] = {std::move(g.weights), std::move(g.bias)};
                    grad = std::move(g.input);
                    break;
                }
                case LayerKind::dense: {
                    DenseGrads g = dense_backward(grad, st, spec);
                    out.per_layer[ri] = {std::move(g.weights), std::move(g.bias)};
                    grad = std::move(g.input);
                    break;
                }
                case LayerKind::batchnorm: {
                    BatchnormGrads g = batchnorm_backward(grad, st, spec);
                    out.per_layer[ri] = {std::move(g.gamma), std::move(g.beta)};
                    grad = std::move(g.input);
                    break;
                }
                case LayerKind::maxpool2d:
                    grad = maxpool2d_backward(grad, st, spec);
                    break;
                case LayerKind::dropout:
                    grad = dropout_backward(grad, st, spec);
                    break;
                case LayerKind::flatten:
                    grad = flatten_backward(grad, st);
                    break;
            }
        }
        out.input = std::move(grad);
        return out;
    }

    // Trainable tensors of one layer, in optimizer/persistence order.
    std::vector<Tensor*> trainable_tensors(size_t layer) {
        const LayerSpec& spec = arch_.layers[layer];
        LayerState& st = states_[layer];
        switch (spec.kind) {
            case LayerKind::conv2d:
            case LayerKind::dense:
                return {&st.weights, &st.bias};
            case LayerKind::batchnorm:
                return {&st.gamma, &st.beta};
            default:
                return {};
        }
    }

    // One optimizer step on the batch-mean cross entropy. Returns the
    // pre-update loss.
    double train_step(const Tensor& batch, const std::vector<int>& labels, const AdamHyper& hyper) {
        Gradients grads = compute_gradients(batch, labels);
        for (size_t i = 0; i < arch_.layers.size(); ++i) {
            const auto tensors = trainable_tensors(i);
            for (size_t j = 0; j < tensors.size(); ++j)
                adam_step(*tensors[j], grads.per_layer[i][j], adam_[i][j], hyper);
        }
        return grads.loss;
    }

    Rng& dropout_rng() { return dropout_rng_; }

    // Used by persistence: states in save order for one layer.
    static std::vector<Tensor*> layer_tensors(LayerState& st, const LayerSpec& spec) {
        switch (spec.kind) {
            case LayerKind::conv2d:
            case LayerKind::dense:
                return {&st.weights, &st.bias};
            case LayerKind::batchnorm:
                return {&st.gamma, &st.beta, &st.running_mean, &st.running_var};
            default:
                return {};
        }
    }
    static std::vector<const Tensor*> layer_tensors(const LayerState& st, const LayerSpec& spec) {
        auto mutable_tensors = layer_tensors(const_cast<LayerState&>(st), spec);
        return {mutable_tensors.begin(), mutable_tensors.end()};
    }

private:
    void init_adam() {
        adam_.clear();
        adam_.resize(states_.size());
        for (size_t i = 0; i < states_.size(); ++i) {
            const LayerSpec& spec = arch_.layers[i];
            if (spec.kind == LayerKind::conv2d || spec.kind == LayerKind::dense) {
                adam_[i].push_back(AdamState::for_param(states_[i].weights));
                adam_[i].push_back(AdamState::for_param(states_[i].bias));
            } else if (spec.kind == LayerKind::batchnorm) {
                adam_[i].push_back(AdamState::for_param(states_[i].gamma));
                adam_[i].push_back(AdamState::for_param(states_[i].beta));
            }
        }
    }

    Tensor run(const Tensor& batch, bool train, bool want_logits) {
        if (batch.rank() != 4 || batch.dim(1) != arch_.input_shape[0] || batch.dim(2) != arch_.input_shape[1] ||
            batch.dim(3) != arch_.input_shape[2])
            throw ShapeError("forward: batch " + shape_to_string(batch.shape()) + " does not match model input " +
                             shape_to_string(arch_.input_shape));
        Tensor x = batch;
        for (size_t i = 0; i < arch_.layers.size(); ++i) {
            const LayerSpec& spec = arch_.layers[i];
            const bool is_last = i + 1 == arch_.layers.size();
            switch (spec.kind) {
                case LayerKind::conv2d:
                    x = conv2d_forward(x, states_[i], spec, train);
                    break;
                case LayerKind::maxpool2d:
                    x = maxpool2d_forward(x, states_[i], spec, train);
                    break;
                case LayerKind::dropout:
                    x = dropout_forward(x, states_[i], spec, train, dropout_rng_);
                    break;
                case LayerKind::batchnorm:
                    x = batchnorm_forward(x, states_[i], spec, train);
                    break;
                case LayerKind::flatten:
                    x = flatten_forward(x, states_[i], train);
                    break;
                case LayerKind::dense: {
                    LayerSpec effective = spec;
                    if (is_last && want_logits && spec.activation == Activation::softmax)
                        effective.activation = Activation::none;
                    x = dense_forward(x, states_[i], effective, train);
                    break;
                }
            }
        }
        return x;
    }

    ArchitectureSpec arch_;
    std::vector<LayerState> states_;
    std::vector<std::vector<AdamState>> adam_;
    Rng dropout_rng_{0};
    std::uint64_t seed_ = 0;

    friend Model load_model(const std::filesystem::path&);
};

inline Model build_model(const ArchitectureSpec& arch, std::uint64_t seed) { return Model(arch, seed); }

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

struct EvalResult {
    double loss = 0.0;      // sample-weighted mean
    double accuracy = 0.0;  // argmax vs label; exact ties predict class 0
    std::vector<int> predictions;
    std::vector<int> labels;
    std::vector<float> positive_scores;  // P(class 1)
};

inline EvalResult evaluate(Model& model, const DatasetIndex& data, int batch_size) {
    if (data.size() == 0) throw ValueError("evaluate: empty dataset");
    EvalResult result;
    BatchStream stream(data, batch_size, /*shuffle=*/false, /*seed=*/0, /*epoch=*/0);
    double loss_sum = 0.0;
    std::int64_t correct = 0, total = 0;
    while (auto batch = stream.next()) {
        Tensor logits = model.forward_logits(batch->images, /*train=*/false);
        const LossValue lv = cross_entropy_loss(logits, batch->labels);
        Tensor probs = softmax(logits);
        const std::int64_t n = probs.dim(0);
        loss_sum += lv.loss * static_cast<double>(n);
        for (std::int64_t r = 0; r < n; ++r) {
            const int pred = probs(r, 1) > probs(r, 0) ? 1 : 0;
            result.predictions.push_back(pred);
            result.labels.push_back(batch->labels[static_cast<size_t>(r)]);
            result.positive_scores.push_back(probs(r, 1));
            correct += pred == batch->labels[static_cast<size_t>(r)] ? 1 : 0;
        }
        total += n;
    }
    result.loss = loss_sum / static_cast<double>(total);
    result.accuracy = static_cast<double>(correct) / static_cast<double>(total);
    return result;
}

// ---------------------------------------------------------------------------
// Training loop: shuffle (seeded per epoch), step over batches, then an
// eval-mode pass over both splits for the epoch record.
// ---------------------------------------------------------------------------

inline std::vector<EpochRecord> train(Model& model, const DatasetIndex& train_set, const DatasetIndex& val_set,
                                      const TrainConfig& cfg) {
    if (cfg.epochs < 1) throw ValueError("train: epochs must be >= 1");
    if (cfg.batch_size < 1) throw ValueError("train: batch size must be >= 1");
    if (train_set.size() == 0 || val_set.size() == 0) throw ValueError("train: empty dataset");

    std::vector<EpochRecord> records;
    records.reserve(static_cast<size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        BatchStream stream(train_set, cfg.batch_size, cfg.shuffle, cfg.seed, epoch);
        int batch_index = 0;
        while (auto batch = stream.next()) {
            double loss = 0.0;
            try {
                loss = model.train_step(batch->images, batch->labels, cfg.adam);
            } catch (const NumericError& e) {
                throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index + 1) +
                                   ": " + e.what());
            }
            if (!std::isfinite(loss))
                throw NumericError("epoch " + std::to_string(epoch + 1) + " batch " + std::to_string(batch_index + 1) +
                                   ": non-finite loss");
            ++batch_index;
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        const EvalResult train_eval = evaluate(model, train_set, cfg.batch_size);
        const EvalResult val_eval = evaluate(model, val_set, cfg.batch_size);
        rec.train_loss = train_eval.loss;
        rec.train_accuracy = train_eval.accuracy;
        rec.val_loss = val_eval.loss;
        rec.val_accuracy = val_eval.accuracy;
        records.push_back(rec);
    }
    return records;
}

// ---------------------------------------------------------------------------
// Persistence. Layout, all little-endian:
//   "SCLB" | u16 version | u32 arch text length | arch text
//   | per-layer float32 parameter blobs | u32 CRC32 of all preceding bytes
// ---------------------------------------------------------------------------

inline constexpr std::uint16_t kModelFormatVersion = 1;

class ModelLoadError : public IoError {
public:
    enum class Kind { bad_magic, bad_version, truncated, bad_checksum };
    ModelLoadError(Kind kind, const std::string& msg) : IoError(msg), kind(kind) {}
    Kind kind;
};

namespace detail {

inline std::uint32_t crc32(const unsigned char* data, size_t len) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1u) ? 0xedb88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xffffffffu;
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
}

inline void append_u16_le(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void append_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

}  // namespace detail

inline void save_model(const Model& model, const std::filesystem::path& path) {
    std::string buf;
    buf += "SCLB";
    detail::append_u16_le(buf, kModelFormatVersion);
    const std::string arch_text = arch_to_text(model.arch());
    detail::append_u32_le(buf, static_cast<std::uint32_t>(arch_text.size()));
    buf += arch_text;
    const auto& states = model.states();
    for (size_t i = 0; i < states.size(); ++i) {
        for (const Tensor* t : Model::layer_tensors(states[i], model.arch().layers[i])) {
            for (std::int64_t j = 0; j < t->size(); ++j) {
                const float v = (*t)[j];
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                detail::append_u32_le(buf, bits);
            }
        }
    }
    detail::append_u32_le(buf, detail::crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size()));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("save_model: cannot open " + path.string());
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("save_model: failed writing " + path.string());
}

inline Model load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("load_model: cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    const auto need = [&](size_t offset, size_t count) {
        if (offset + count > buf.size())
            throw ModelLoadError(ModelLoadError::Kind::truncated, "load_model: " + path.string() + " is truncated");
    };
    const auto u16_at = [&](size_t off) {
        return static_cast<std::uint16_t>(static_cast<unsigned char>(buf[off]) |
                                          (static_cast<unsigned char>(buf[off + 1]) << 8));
    };
    const auto u32_at = [&](size_t off) {
        return static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off])) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 1])) << 8) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 2])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(buf[off + 3])) << 24);
    };

    need(0, 4);
    if (buf.compare(0, 4, "SCLB") != 0)
        throw ModelLoadError(ModelLoadError::Kind::bad_magic, "load_model: " + path.string() + " has wrong magic");
    need(4, 2);
    const std::uint16_t version = u16_at(4);
    if (version != kModelFormatVersion)
        throw ModelLoadError(ModelLoadError::Kind::bad_version,
                             "load_model: " + path.string() + " is format version " + std::to_string(version) +
                                 ", this build reads version " + std::to_string(kModelFormatVersion));
    need(6, 4);
    const std::uint32_t arch_len = u32_at(6);
    need(10, arch_len);
    const std::string arch_text = buf.substr(10, arch_len);

    Model model;
    model.arch_ = arch_from_text(arch_text);
    infer_shapes(model.arch_);
    model.states_ = detail::make_states(model.arch_);
    model.dropout_rng_ = Rng(0).stream(detail::kStreamDropout);

    size_t off = 10 + arch_len;
    for (size_t i = 0; i < model.states_.size(); ++i) {
        for (Tensor* t : Model::layer_tensors(model.states_[i], model.arch_.layers[i])) {
            need(off, static_cast<size_t>(t->size()) * 4);
            for (std::int64_t j = 0; j < t->size(); ++j, off += 4) {
                const std::uint32_t bits = u32_at(off);
                std::memcpy(&(*t)[j], &bits, 4);
            }
        }
    }
    need(off, 4);
    if (off + 4 != buf.size())
        throw ModelLoadError(ModelLoadError::Kind::truncated,
                             "load_model: " + path.string() + " has trailing bytes after the checksum");
    const std::uint32_t stored = u32_at(off);
    const std::uint32_t actual = detail::crc32(reinterpret_cast<const unsigned char*>(buf.data()), off);
    if (stored != actual)
        throw ModelLoadError(ModelLoadError::Kind::bad_checksum, "load_model: " + path.string() + " checksum mismatch");
    model.init_adam();
    return model;
}

}  // namespace scalelab
