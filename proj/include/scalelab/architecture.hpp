#pragma once

// Architecture specifications, the width/depth/resolution/compound scaling
// transformations, static shape + parameter inference, and the architecture
// text file format.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scalelab/layers.hpp"

namespace scalelab {

struct ArchitectureSpec {
    std::string name;
    Shape input_shape;  // (H, W, C)
    std::vector<LayerSpec> layers;

    bool operator==(const ArchitectureSpec&) const = default;
};

struct ScaleFactors {
    double width = 1.0;
    int depth = 1;
    double resolution = 1.0;
};

struct LayerSummaryRow {
    LayerKind kind;
    Shape output_shape;  // batch dimension excluded
    std::int64_t params = 0;
    std::int64_t non_trainable = 0;
};

// ---------------------------------------------------------------------------
// Shape / parameter inference.
// ---------------------------------------------------------------------------

inline std::vector<LayerSummaryRow> infer_shapes(const ArchitectureSpec& arch) {
    if (arch.input_shape.size() != 3)
        throw ShapeError("architecture '" + arch.name + "': input must be (H,W,C), got " +
                         shape_to_string(arch.input_shape));
    std::vector<LayerSummaryRow> rows;
    rows.reserve(arch.layers.size());
    Shape current = arch.input_shape;
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& spec = arch.layers[i];
        try {
            LayerSummaryRow row;
            row.kind = spec.kind;
            row.params = layer_param_count(spec, current);
            row.non_trainable = layer_non_trainable_count(spec, current);
            current = layer_output_shape(spec, current);
            row.output_shape = current;
            rows.push_back(std::move(row));
        } catch (const ShapeError& e) {
            throw ShapeError("layer " + std::to_string(i) + " (" + layer_kind_name(spec.kind) + "): " + e.what());
        }
    }
    return rows;
}

inline std::int64_t total_params(const std::vector<LayerSummaryRow>& rows) {
    std::int64_t total = 0;
    for (const auto& row : rows) total += row.params;
    return total;
}

inline std::int64_t total_params(const ArchitectureSpec& arch) { return total_params(infer_shapes(arch)); }

// "(None,106,106,16)" / "(None,128)", the summary-table shape notation.
inline std::string format_output_shape(const Shape& shape) {
    std::ostringstream out;
    out << "(None";
    for (int d : shape) out << ',' << d;
    out << ')';
    return out.str();
}

inline std::string format_summary(const ArchitectureSpec& arch) {
    const auto rows = infer_shapes(arch);
    std::ostringstream out;
    out << "Architecture: " << arch.name << "  input " << format_output_shape(arch.input_shape) << "\n";
    char line[128];
    std::snprintf(line, sizeof(line), "%-22s %-24s %12s\n", "Layer", "Output Shape", "Parameters");
    out << line;
    std::int64_t non_trainable = 0;
    for (const auto& row : rows) {
        std::snprintf(line, sizeof(line), "%-22s %-24s %12lld\n", layer_kind_name(row.kind).c_str(),
                      format_output_shape(row.output_shape).c_str(), static_cast<long long>(row.params));
        out << line;
        non_trainable += row.non_trainable;
    }
    out << "Total parameters: " << total_params(rows) << "\n";
    if (non_trainable > 0) out << "Non-trainable parameters: " << non_trainable << "\n";
    return out.str();
}

// ---------------------------------------------------------------------------
// The reconstructed baseline: four conv/pool blocks with 16/32/64/128 3x3
// filters, dropout after every pool and after the hidden dense layer, then
// Dense(256) and a softmax Dense(2) head, on 108x108x3 input.
// ---------------------------------------------------------------------------

inline ArchitectureSpec baseline_arch() {
    ArchitectureSpec arch;
    arch.name = "baseline";
    arch.input_shape = {108, 108, 3};
    for (int filters : {16, 32, 64, 128}) {
        arch.layers.push_back(LayerSpec::conv2d(filters, 3, Activation::relu));
        arch.layers.push_back(LayerSpec::maxpool2d(2));
        arch.layers.push_back(LayerSpec::dropout(0.25f));
    }
    arch.layers.push_back(LayerSpec::flatten());
    arch.layers.push_back(LayerSpec::dense(256, Activation::relu));
    arch.layers.push_back(LayerSpec::dropout(0.5f));
    arch.layers.push_back(LayerSpec::dense(2, Activation::softmax));
    return arch;
}

// ---------------------------------------------------------------------------
// Scaling transformations.
// ---------------------------------------------------------------------------

namespace detail {

inline int round_positive(double x) { return std::max(1, static_cast<int>(std::floor(x + 0.5))); }

// Nearest even integer, ties rounded up (135 -> 136).
inline int round_to_even(double x) { return 2 * std::max(1, static_cast<int>(std::floor(x / 2.0 + 0.5))); }

}  // namespace detail

// Multiplies every conv filter count and every hidden dense width by w
// (nearest integer, minimum 1). The final classifier layer is left alone.
inline ArchitectureSpec scale_width(const ArchitectureSpec& arch, double w) {
    if (!(w >= 1.0)) throw ValueError("scale_width: factor must be >= 1, got " + std::to_string(w));
    if (w == 1.0) return arch;
    ArchitectureSpec out = arch;
    size_t last_dense = out.layers.size();
    for (size_t i = 0; i < out.layers.size(); ++i)
        if (out.layers[i].kind == LayerKind::dense) last_dense = i;
    for (size_t i = 0; i < out.layers.size(); ++i) {
        LayerSpec& spec = out.layers[i];
        if (spec.kind == LayerKind::conv2d)
            spec.filters = detail::round_positive(spec.filters * w);
        else if (spec.kind == LayerKind::dense && i != last_dense)
            spec.units = detail::round_positive(spec.units * w);
    }
    return out;
}

// Replicates each conv layer d times in place. Replicas keep the filter
// count, so the first maps Cin -> f and the rest f -> f.
inline ArchitectureSpec scale_depth(const ArchitectureSpec& arch, int d) {
    if (d < 1) throw ValueError("scale_depth: factor must be >= 1, got " + std::to_string(d));
    if (d == 1) return arch;
    ArchitectureSpec out = arch;
    out.layers.clear();
    for (const LayerSpec& spec : arch.layers) {
        const int copies = spec.kind == LayerKind::conv2d ? d : 1;
        for (int i = 0; i < copies; ++i) out.layers.push_back(spec);
    }
    return out;
}

// Rescales the input height/width to the nearest even integer. Factors below
// 1 shrink the input; the result must still shape-infer.
inline ArchitectureSpec scale_resolution(const ArchitectureSpec& arch, double r) {
    if (!(r > 0.0)) throw ValueError("scale_resolution: factor must be > 0, got " + std::to_string(r));
    if (r == 1.0) return arch;
    ArchitectureSpec out = arch;
    out.input_shape[0] = detail::round_to_even(arch.input_shape[0] * r);
    out.input_shape[1] = detail::round_to_even(arch.input_shape[1] * r);
    infer_shapes(out);  // throws ShapeError if the chain starves
    return out;
}

inline ArchitectureSpec scale_compound(const ArchitectureSpec& arch, const ScaleFactors& f) {
    return scale_resolution(scale_depth(scale_width(arch, f.width), f.depth), f.resolution);
}

// ---------------------------------------------------------------------------
// Named presets. The published compound table is exactly the depth-tripled
// baseline (its first row and input resolution match the baseline's), so the
// compound preset uses those factors; width and resolution presets pick
// representative factors since no canonical ones exist.
// ---------------------------------------------------------------------------

inline const std::vector<std::string>& preset_names() {
    static const std::vector<std::string> names{"baseline", "width", "depth", "resolution", "compound"};
    return names;
}

inline ScaleFactors preset_factors(const std::string& name) {
    if (name == "baseline") return {1.0, 1, 1.0};
    if (name == "width") return {2.0, 1, 1.0};
    if (name == "depth") return {1.0, 3, 1.0};
    if (name == "resolution") return {1.0, 1, 1.25};
    if (name == "compound") return {1.0, 3, 1.0};
    throw ValueError("unknown preset '" + name + "' (expected baseline|width|depth|resolution|compound)");
}

inline ArchitectureSpec preset_arch(const std::string& name) {
    ArchitectureSpec arch = scale_compound(baseline_arch(), preset_factors(name));
    arch.name = name;
    return arch;
}

// ---------------------------------------------------------------------------
// Architecture file format: line-oriented UTF-8 text.
//
//   name: baseline
//   input: [108,108,3]
//   layer: type=conv2d filters=16 kernel=3 activation=relu
//   layer: type=maxpool2d pool=2
//   layer: type=dropout rate=0.25
//   layer: type=flatten
//   layer: type=dense units=256 activation=relu
//
// '#' starts a comment; blank lines are ignored.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline Activation parse_activation(const std::string& value, int line_no) {
    if (value == "none") return Activation::none;
    if (value == "relu") return Activation::relu;
    if (value == "softmax") return Activation::softmax;
    throw ParseError("line " + std::to_string(line_no) + ": unknown activation '" + value + "'");
}

inline int parse_positive_int(const std::string& key, const std::string& value, int line_no) {
    int v = 0;
    try {
        size_t used = 0;
        v = std::stoi(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": field '" + key + "' is not an integer: '" + value + "'");
    }
    if (v < 1) throw ParseError("line " + std::to_string(line_no) + ": field '" + key + "' must be >= 1, got " + value);
    return v;
}

inline LayerSpec parse_layer_line(const std::string& body, int line_no) {
    std::map<std::string, std::string> fields;
    std::istringstream in(body);
    std::string token;
    while (in >> token) {
        const size_t eq = token.find('=');
        if (eq == std::string::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected key=value, got '" + token + "'");
        fields[token.substr(0, eq)] = token.substr(eq + 1);
    }
    auto take = [&](const char* key) -> std::string {
        auto it = fields.find(key);
        if (it == fields.end())
            throw ParseError("line " + std::to_string(line_no) + ": missing field '" + std::string(key) + "'");
        std::string v = it->second;
        fields.erase(it);
        return v;
    };
    auto take_optional = [&](const char* key, const std::string& fallback) -> std::string {
        auto it = fields.find(key);
        if (it == fields.end()) return fallback;
        std::string v = it->second;
        fields.erase(it);
        return v;
    };

    const std::string type = take("type");
    LayerSpec spec;
    if (type == "conv2d") {
        spec = LayerSpec::conv2d(parse_positive_int("filters", take("filters"), line_no),
                                 parse_positive_int("kernel", take_optional("kernel", "3"), line_no),
                                 parse_activation(take_optional("activation", "none"), line_no));
    } else if (type == "maxpool2d") {
        spec = LayerSpec::maxpool2d(parse_positive_int("pool", take("pool"), line_no));
    } else if (type == "dropout") {
        const std::string value = take("rate");
        float rate = 0.0f;
        try {
            rate = std::stof(value);
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(line_no) + ": field 'rate' is not a number: '" + value + "'");
        }
        if (!(rate >= 0.0f && rate < 1.0f))
            throw ParseError("line " + std::to_string(line_no) + ": dropout rate must be in [0,1), got " + value);
        spec = LayerSpec::dropout(rate);
    } else if (type == "batchnorm") {
        spec = LayerSpec::batchnorm();
    } else if (type == "flatten") {
        spec = LayerSpec::flatten();
    } else if (type == "dense") {
        spec = LayerSpec::dense(parse_positive_int("units", take("units"), line_no),
                                parse_activation(take_optional("activation", "none"), line_no));
    } else {
        throw ParseError("line " + std::to_string(line_no) + ": unknown layer type '" + type + "'");
    }
    if (!fields.empty())
        throw ParseError("line " + std::to_string(line_no) + ": unexpected field '" + fields.begin()->first +
                         "' for type '" + type + "'");
    return spec;
}

inline std::string format_float(float v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace detail

inline std::string arch_to_text(const ArchitectureSpec& arch) {
    std::ostringstream out;
    out << "name: " << arch.name << "\n";
    out << "input: [" << arch.input_shape[0] << ',' << arch.input_shape[1] << ',' << arch.input_shape[2] << "]\n";
    for (const LayerSpec& spec : arch.layers) {
        out << "layer: ";
        switch (spec.kind) {
            case LayerKind::conv2d:
                out << "type=conv2d filters=" << spec.filters << " kernel=" << spec.kernel
                    << " activation=" << activation_name(spec.activation);
                break;
            case LayerKind::maxpool2d:
                out << "type=maxpool2d pool=" << spec.pool;
                break;
            case LayerKind::dropout:
                out << "type=dropout rate=" << detail::format_float(spec.rate);
                break;
            case LayerKind::batchnorm:
                out << "type=batchnorm";
                break;
            case LayerKind::flatten:
                out << "type=flatten";
                break;
            case LayerKind::dense:
                out << "type=dense units=" << spec.units << " activation=" << activation_name(spec.activation);
                break;
        }
        out << "\n";
    }
    return out.str();
}

inline ArchitectureSpec arch_from_text(const std::string& text) {
    ArchitectureSpec arch;
    bool have_input = false;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = detail::trim(raw);
        if (line.empty() || line[0] == '#') continue;
        const size_t colon = line.find(':');
        if (colon == std::string::npos)
            throw ParseError("line " + std::to_string(line_no) + ": expected 'key: value', got '" + line + "'");
        const std::string key = detail::trim(line.substr(0, colon));
        const std::string value = detail::trim(line.substr(colon + 1));
        if (key == "name") {
            arch.name = value;
        } else if (key == "input") {
            if (value.size() < 2 || value.front() != '[' || value.back() != ']')
                throw ParseError("line " + std::to_string(line_no) + ": input must look like [H,W,C]");
            std::istringstream dims(value.substr(1, value.size() - 2));
            std::string item;
            Shape shape;
            while (std::getline(dims, item, ','))
                shape.push_back(detail::parse_positive_int("input", detail::trim(item), line_no));
            if (shape.size() != 3)
                throw ParseError("line " + std::to_string(line_no) + ": input must have exactly 3 dimensions");
            arch.input_shape = shape;
            have_input = true;
        } else if (key == "layer") {
            arch.layers.push_back(detail::parse_layer_line(value, line_no));
        } else {
            throw ParseError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
        }
    }
    if (!have_input) throw ParseError("architecture text is missing the 'input:' line");
    if (arch.layers.empty()) throw ParseError("architecture text has no layers");
    return arch;
}

inline void arch_save(const ArchitectureSpec& arch, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << arch_to_text(arch);
    if (!out) throw IoError("failed writing " + path.string());
}

inline ArchitectureSpec arch_load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return arch_from_text(buf.str());
}

}  // namespace scalelab
