#pragma once

// Dataset ingestion (directory + labels CSV), seeded split and batch
// generation, bilinear resizing, and the synthetic two-class image generator
// used for desk-scale experiments.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "scalelab/image_io.hpp"
#include "scalelab/tensor.hpp"

namespace scalelab {

struct DatasetRecord {
    std::string id;
    std::variant<std::filesystem::path, Tensor> source;
    int label = 0;  // 0 = benign/negative, 1 = malignant/positive
};

struct DatasetIndex {
    std::vector<DatasetRecord> records;
    Shape resolution;       // (H,W,C) every batch is resized to
    std::string split_tag;  // "train", "val" or ""

    size_t size() const { return records.size(); }

    std::int64_t class_count(int label) const {
        std::int64_t n = 0;
        for (const auto& r : records) n += r.label == label ? 1 : 0;
        return n;
    }
};

namespace detail {

// Seed tags for independent derived streams.
inline constexpr std::uint64_t kStreamSplit = 0x53504c49;    // "SPLI"
inline constexpr std::uint64_t kStreamShuffle = 0x53485546;  // "SHUF"
inline constexpr std::uint64_t kStreamSynth = 0x53594e54;    // "SYNT"

}  // namespace detail

// ---------------------------------------------------------------------------
// Index loading. CSV header must be exactly "id,label"; every id must resolve
// to <root>/<id>.ppm or <root>/<id>.rawt.
// ---------------------------------------------------------------------------

inline DatasetIndex load_index(const std::filesystem::path& root, const std::filesystem::path& csv_path) {
    std::ifstream in(csv_path);
    if (!in) throw IoError("load_index: cannot open " + csv_path.string());
    std::string line;
    if (!std::getline(in, line)) throw ParseError("load_index: " + csv_path.string() + " is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "id,label")
        throw ParseError("load_index: " + csv_path.string() + ": expected header 'id,label', got '" + line + "'");

    DatasetIndex index;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw ParseError("load_index: " + csv_path.string() + " row " + std::to_string(row) + ": missing comma");
        DatasetRecord record;
        record.id = line.substr(0, comma);
        const std::string label_text = line.substr(comma + 1);
        if (label_text == "0")
            record.label = 0;
        else if (label_text == "1")
            record.label = 1;
        else
            throw ParseError("load_index: " + csv_path.string() + " row " + std::to_string(row) + ": label '" +
                             label_text + "' outside {0,1}");
        std::filesystem::path ppm = root / (record.id + ".ppm");
        std::filesystem::path rawt = root / (record.id + ".rawt");
        if (std::filesystem::exists(ppm))
            record.source = ppm;
        else if (std::filesystem::exists(rawt))
            record.source = rawt;
        else
            throw IoError("load_index: no image for id '" + record.id + "' under " + root.string());
        index.records.push_back(std::move(record));
    }
    if (!index.records.empty()) {
        const auto& first = index.records.front();
        Tensor probe = image_read(std::get<std::filesystem::path>(first.source));
        index.resolution = probe.shape();
    }
    return index;
}

// Seeded shuffle, then the first train_count records become the training
// split and the next val_count the validation split.
inline std::pair<DatasetIndex, DatasetIndex> split(const DatasetIndex& index, size_t train_count, size_t val_count,
                                                   std::uint64_t seed) {
    if (train_count + val_count > index.size())
        throw ValueError("split: requested " + std::to_string(train_count) + "+" + std::to_string(val_count) +
                         " from " + std::to_string(index.size()) + " records");
    std::vector<size_t> order(index.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng = Rng(seed).stream(detail::kStreamSplit);
    rng.shuffle(order);

    DatasetIndex train, val;
    train.resolution = index.resolution;
    val.resolution = index.resolution;
    train.split_tag = "train";
    val.split_tag = "val";
    for (size_t i = 0; i < train_count; ++i) train.records.push_back(index.records[order[i]]);
    for (size_t i = 0; i < val_count; ++i) val.records.push_back(index.records[order[train_count + i]]);
    return {std::move(train), std::move(val)};
}

// ---------------------------------------------------------------------------
// Bilinear resize with half-pixel centers.
// ---------------------------------------------------------------------------

inline Tensor resize_bilinear(const Tensor& image, int out_h, int out_w) {
    if (image.rank() != 3) throw ShapeError("resize_bilinear: expected (H,W,C) image");
    if (out_h < 1 || out_w < 1) throw ValueError("resize_bilinear: target must be >= 1x1");
    const int h = image.dim(0), w = image.dim(1), c = image.dim(2);
    if (out_h == h && out_w == w) return image;

    Tensor out(Shape{out_h, out_w, c});
    const float* src = image.data();
    float* dst = out.data();
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int i = 0; i < out_h; ++i) {
        double fy = (i + 0.5) * sy - 0.5;
        fy = std::min(std::max(fy, 0.0), static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int j = 0; j < out_w; ++j) {
            double fx = (j + 0.5) * sx - 0.5;
            fx = std::min(std::max(fx, 0.0), static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = src[(static_cast<std::int64_t>(y0) * w + x0) * c + ch];
                const double v01 = src[(static_cast<std::int64_t>(y0) * w + x1) * c + ch];
                const double v10 = src[(static_cast<std::int64_t>(y1) * w + x0) * c + ch];
                const double v11 = src[(static_cast<std::int64_t>(y1) * w + x1) * c + ch];
                const double top = v00 * (1.0 - wx) + v01 * wx;
                const double bottom = v10 * (1.0 - wx) + v11 * wx;
                dst[(static_cast<std::int64_t>(i) * out_w + j) * c + ch] =
                    static_cast<float>(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Batch stream: decodes, resizes to the index resolution, and yields
// ceil(N/B) batches. Order is a pure function of (seed, epoch).
// ---------------------------------------------------------------------------

struct Batch {
    Tensor images;            // (B,H,W,C), values in [0,1]
    std::vector<int> labels;  // length B
};

class BatchStream {
public:
    BatchStream(const DatasetIndex& index, int batch_size, bool shuffle, std::uint64_t seed, int epoch)
        : index_(&index), batch_size_(batch_size) {
        if (batch_size < 1) throw ValueError("batches: batch size must be >= 1");
        if (index.resolution.size() != 3) throw ShapeError("batches: index resolution is not set");
        order_.resize(index.size());
        for (size_t i = 0; i < order_.size(); ++i) order_[i] = i;
        if (shuffle) {
            Rng rng = Rng(seed).stream(detail::kStreamShuffle, static_cast<std::uint64_t>(epoch));
            rng.shuffle(order_);
        }
    }

    size_t batch_count() const { return (order_.size() + static_cast<size_t>(batch_size_) - 1) / batch_size_; }

    std::optional<Batch> next() {
        if (cursor_ >= order_.size()) return std::nullopt;
        const size_t take = std::min(static_cast<size_t>(batch_size_), order_.size() - cursor_);
        const Shape& res = index_->resolution;
        Batch batch;
        batch.images = Tensor(Shape{static_cast<int>(take), res[0], res[1], res[2]});
        batch.labels.resize(take);
        const std::int64_t stride = static_cast<std::int64_t>(res[0]) * res[1] * res[2];
        for (size_t b = 0; b < take; ++b) {
            const DatasetRecord& record = index_->records[order_[cursor_ + b]];
            Tensor image;
            if (std::holds_alternative<std::filesystem::path>(record.source))
                image = image_read(std::get<std::filesystem::path>(record.source));
            else
                image = std::get<Tensor>(record.source);
            if (image.dim(2) != res[2])
                throw ShapeError("batches: image '" + record.id + "' has " + std::to_string(image.dim(2)) +
                                 " channels, pipeline expects " + std::to_string(res[2]));
            if (image.dim(0) != res[0] || image.dim(1) != res[1]) image = resize_bilinear(image, res[0], res[1]);
            std::memcpy(batch.images.data() + static_cast<std::int64_t>(b) * stride, image.data(),
                        sizeof(float) * static_cast<size_t>(stride));
            batch.labels[b] = record.label;
        }
        cursor_ += take;
        return batch;
    }

private:
    const DatasetIndex* index_;
    int batch_size_;
    std::vector<size_t> order_;
    size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Synthetic two-class corpus. Class 0: smooth blob textures (sums of Gaussian
// bumps). Class 1: high-frequency oriented stripes. Both get 5% uniform
// noise. The stripe angle keeps a horizontal wave component, so a mean
// |horizontal gradient| probe separates the classes while a constant
// classifier stays at chance.
// ---------------------------------------------------------------------------

namespace detail {

inline Tensor synth_blob_image(Rng& rng, int res) {
    Tensor image(Shape{res, res, 3});
    const int bumps = 3 + static_cast<int>(rng.below(4));
    std::vector<double> cx(static_cast<size_t>(bumps)), cy(static_cast<size_t>(bumps)), sigma(static_cast<size_t>(bumps)),
        amp(static_cast<size_t>(bumps));
    for (int b = 0; b < bumps; ++b) {
        cx[static_cast<size_t>(b)] = rng.next_double() * res;
        cy[static_cast<size_t>(b)] = rng.next_double() * res;
        sigma[static_cast<size_t>(b)] = res * (0.18 + 0.17 * rng.next_double());
        amp[static_cast<size_t>(b)] = 0.35 + 0.45 * rng.next_double();
    }
    const double base = 0.15 + 0.2 * rng.next_double();
    double tint[3];
    for (double& t : tint) t = 0.8 + 0.2 * rng.next_double();
    float* p = image.data();
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            double v = base;
            for (int b = 0; b < bumps; ++b) {
                const double dx = x - cx[static_cast<size_t>(b)];
                const double dy = y - cy[static_cast<size_t>(b)];
                const double s = sigma[static_cast<size_t>(b)];
                v += amp[static_cast<size_t>(b)] * std::exp(-(dx * dx + dy * dy) / (2.0 * s * s));
            }
            for (int ch = 0; ch < 3; ++ch) {
                const double noise = (rng.next_double() - 0.5) * 0.1;  // +-5%
                const double value = std::min(1.0, std::max(0.0, v * tint[ch] + noise));
                p[(static_cast<std::int64_t>(y) * res + x) * 3 + ch] = static_cast<float>(value);
            }
        }
    }
    return image;
}

inline Tensor synth_stripe_image(Rng& rng, int res) {
    Tensor image(Shape{res, res, 3});
    // Angle within +-60 degrees of the x axis keeps |cos(theta)| >= 0.5, so
    // stripes always carry horizontal-frequency content.
    const double angle = (rng.next_double() * 2.0 - 1.0) * (3.14159265358979323846 / 3.0);
    const double wavelength = 4.0 + 4.0 * rng.next_double();  // 4..8 px
    const double phase = rng.next_double() * 2.0 * 3.14159265358979323846;
    const double kx = std::cos(angle) * 2.0 * 3.14159265358979323846 / wavelength;
    const double ky = std::sin(angle) * 2.0 * 3.14159265358979323846 / wavelength;
    const double base = 0.45 + 0.1 * rng.next_double();
    double tint[3];
    for (double& t : tint) t = 0.8 + 0.2 * rng.next_double();
    float* p = image.data();
    for (int y = 0; y < res; ++y) {
        for (int x = 0; x < res; ++x) {
            const double v = base + 0.4 * std::sin(kx * x + ky * y + phase);
            for (int ch = 0; ch < 3; ++ch) {
                const double noise = (rng.next_double() - 0.5) * 0.1;
                const double value = std::min(1.0, std::max(0.0, v * tint[ch] + noise));
                p[(static_cast<std::int64_t>(y) * res + x) * 3 + ch] = static_cast<float>(value);
            }
        }
    }
    return image;
}

}  // namespace detail

// Writes n PPM images per class plus labels.csv under out_dir. Byte-identical
// for equal (n, resolution, seed).
inline void synth_generate(const std::filesystem::path& out_dir, int per_class, int resolution, std::uint64_t seed) {
    if (per_class < 1) throw ValueError("synth_generate: need at least 1 image per class");
    if (resolution < 16) throw ValueError("synth_generate: resolution must be >= 16, got " + std::to_string(resolution));
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("synth_generate: cannot create " + out_dir.string() + ": " + ec.message());

    std::ofstream csv(out_dir / "labels.csv");
    if (!csv) throw IoError("synth_generate: cannot open labels.csv under " + out_dir.string());
    csv << "id,label\n";
    const Rng root(seed);
    char id[32];
    for (int label = 0; label < 2; ++label) {
        for (int i = 0; i < per_class; ++i) {
            std::snprintf(id, sizeof(id), "img_%d_%05d", label, i);
            Rng rng = root.stream(detail::kStreamSynth + static_cast<std::uint64_t>(label), static_cast<std::uint64_t>(i));
            Tensor image = label == 0 ? detail::synth_blob_image(rng, resolution) : detail::synth_stripe_image(rng, resolution);
            ppm_write(out_dir / (std::string(id) + ".ppm"), image);
            csv << id << ',' << label << "\n";
        }
    }
    if (!csv) throw IoError("synth_generate: failed writing labels.csv");
}

}  // namespace scalelab
