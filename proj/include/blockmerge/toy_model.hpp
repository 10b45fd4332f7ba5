#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "blockmerge/tensor.hpp"
#include "blockmerge/tensor_file.hpp"
#include "json.hpp"

namespace blockmerge {

enum class LayerKind : std::uint8_t { Conv2dValid, Linear, Relu, Flatten };

enum class LossKind : std::uint8_t { MSE, CrossEntropy };

struct LayerSpec {
    LayerKind kind = LayerKind::Relu;
    std::string weight_name;  // Conv2dValid / Linear only
    std::string bias_name;
};

// Minimal sequential model: enough structure to produce rank-4 -> rank-2
// shape transitions while keeping a scalar reference forward pass feasible.
struct ToyModelSpec {
    std::vector<LayerSpec> layers;
    LossKind loss = LossKind::MSE;
    std::vector<std::uint64_t> input_shape;  // per-sample shape, no batch extent
};

// inputs: [N, ...]; targets: [N, ...] vectors for MSE, class indices for
// cross entropy.
struct Dataset {
    Tensor inputs;
    Tensor targets;
};

namespace detail {

struct Activation {
    std::vector<std::uint64_t> shape;  // per-sample shape
    std::vector<float> data;
};

inline const Tensor& fetch_param(const TensorMap& m, const std::string& name) {
    if (!m.contains(name)) throw MissingParameter("model parameter missing: " + name);
    return m.at(name);
}

inline void conv2d_valid(const Activation& in, const Tensor& w, const Tensor& b, Activation& out) {
    if (in.shape.size() != 3 || w.shape.size() != 4)
        throw ShapeMismatch("conv2d expects [C,H,W] activations and a rank-4 kernel");
    const std::size_t in_c = in.shape[0], in_h = in.shape[1], in_w = in.shape[2];
    const std::size_t out_c = w.shape[0], k_c = w.shape[1], k_h = w.shape[2], k_w = w.shape[3];
    if (k_c != in_c || k_h > in_h || k_w > in_w)
        throw ShapeMismatch("conv2d kernel does not fit the activation");
    if (b.shape.size() != 1 || b.shape[0] != out_c) throw ShapeMismatch("conv2d bias shape");
    const std::size_t out_h = in_h - k_h + 1, out_w = in_w - k_w + 1;
    out.shape = {out_c, out_h, out_w};
    out.data.assign(out_c * out_h * out_w, 0.0f);
    for (std::size_t oc = 0; oc < out_c; ++oc)
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                float acc = b.data[oc];
                for (std::size_t ic = 0; ic < in_c; ++ic)
                    for (std::size_t ky = 0; ky < k_h; ++ky)
                        for (std::size_t kx = 0; kx < k_w; ++kx)
                            acc += in.data[(ic * in_h + oy + ky) * in_w + ox + kx] *
                                   w.data[((oc * k_c + ic) * k_h + ky) * k_w + kx];
                out.data[(oc * out_h + oy) * out_w + ox] = acc;
            }
}

inline void linear(const Activation& in, const Tensor& w, const Tensor& b, Activation& out) {
    if (in.shape.size() != 1 || w.shape.size() != 2)
        throw ShapeMismatch("linear expects flat activations and a rank-2 weight");
    const std::size_t in_dim = in.shape[0], out_dim = w.shape[0];
    if (w.shape[1] != in_dim) throw ShapeMismatch("linear weight does not match activation width");
    if (b.shape.size() != 1 || b.shape[0] != out_dim) throw ShapeMismatch("linear bias shape");
    out.shape = {out_dim};
    out.data.assign(out_dim, 0.0f);
    for (std::size_t o = 0; o < out_dim; ++o) {
        float acc = b.data[o];
        for (std::size_t i = 0; i < in_dim; ++i) acc += w.data[o * in_dim + i] * in.data[i];
        out.data[o] = acc;
    }
}

}  // namespace detail

// Runs one sample through the network. `sample` holds the flattened
// per-sample input of spec.input_shape.
inline std::vector<float> forward_sample(const ToyModelSpec& spec, const TensorMap& m,
                                         const std::vector<float>& sample) {
    detail::Activation act, next;
    act.shape = spec.input_shape;
    act.data = sample;
    for (const auto& layer : spec.layers) {
        switch (layer.kind) {
            case LayerKind::Conv2dValid:
                detail::conv2d_valid(act, detail::fetch_param(m, layer.weight_name),
                                     detail::fetch_param(m, layer.bias_name), next);
                std::swap(act, next);
                break;
            case LayerKind::Linear:
                detail::linear(act, detail::fetch_param(m, layer.weight_name),
                               detail::fetch_param(m, layer.bias_name), next);
                std::swap(act, next);
                break;
            case LayerKind::Relu:
                for (auto& v : act.data) v = v > 0.0f ? v : 0.0f;
                break;
            case LayerKind::Flatten: {
                std::uint64_t n = 1;
                for (auto e : act.shape) n *= e;
                act.shape = {n};
                break;
            }
        }
    }
    return act.data;
}

// Mean loss over the dataset. MSE averages squared error over every output
// element; cross entropy averages -log softmax(target class) per sample.
inline double forward_loss(const ToyModelSpec& spec, const TensorMap& m, const Dataset& d) {
    if (d.inputs.shape.empty() || d.targets.shape.empty())
        throw ShapeMismatch("dataset tensors need a leading sample extent");
    const std::size_t n = d.inputs.shape[0];
    if (n == 0 || d.targets.shape[0] != n)
        throw ShapeMismatch("dataset inputs/targets sample counts differ");
    const std::size_t sample_size = d.inputs.numel() / n;
    const std::size_t target_size = d.targets.numel() / n;

    double total = 0.0;
    std::size_t element_count = 0;
    std::vector<float> sample(sample_size);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(d.inputs.data.begin() + i * sample_size,
                  d.inputs.data.begin() + (i + 1) * sample_size, sample.begin());
        const std::vector<float> out = forward_sample(spec, m, sample);
        if (spec.loss == LossKind::MSE) {
            if (out.size() != target_size) throw ShapeMismatch("MSE target width mismatch");
            for (std::size_t j = 0; j < out.size(); ++j) {
                const double e = static_cast<double>(out[j]) -
                                 static_cast<double>(d.targets.data[i * target_size + j]);
                total += e * e;
            }
            element_count += out.size();
        } else {
            if (target_size != 1) throw ShapeMismatch("cross entropy expects one class per sample");
            const auto cls = static_cast<std::size_t>(d.targets.data[i]);
            if (cls >= out.size()) throw ShapeMismatch("target class out of range");
            double max_logit = out[0];
            for (float v : out) max_logit = std::max(max_logit, static_cast<double>(v));
            double sum_exp = 0.0;
            for (float v : out) sum_exp += std::exp(static_cast<double>(v) - max_logit);
            total += std::log(sum_exp) - (static_cast<double>(out[cls]) - max_logit);
            ++element_count;
        }
    }
    return total / static_cast<double>(element_count);
}

// ---- JSON interchange ----

inline LayerKind layer_kind_from_name(const std::string& s) {
    if (s == "conv2d_valid") return LayerKind::Conv2dValid;
    if (s == "linear") return LayerKind::Linear;
    if (s == "relu") return LayerKind::Relu;
    if (s == "flatten") return LayerKind::Flatten;
    throw DataError("unknown layer kind: " + s);
}

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::Conv2dValid: return "conv2d_valid";
        case LayerKind::Linear: return "linear";
        case LayerKind::Relu: return "relu";
        case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

inline ToyModelSpec toy_spec_from_json(const nlohmann::json& j) {
    ToyModelSpec spec;
    for (const auto& l : j.at("layers")) {
        LayerSpec ls;
        ls.kind = layer_kind_from_name(l.at("kind").get<std::string>());
        if (ls.kind == LayerKind::Conv2dValid || ls.kind == LayerKind::Linear) {
            ls.weight_name = l.at("weight").get<std::string>();
            ls.bias_name = l.at("bias").get<std::string>();
        }
        spec.layers.push_back(std::move(ls));
    }
    const std::string loss = j.at("loss").get<std::string>();
    if (loss == "mse") spec.loss = LossKind::MSE;
    else if (loss == "cross_entropy") spec.loss = LossKind::CrossEntropy;
    else throw DataError("unknown loss kind: " + loss);
    spec.input_shape = j.at("input_shape").get<std::vector<std::uint64_t>>();
    return spec;
}

inline nlohmann::json toy_spec_to_json(const ToyModelSpec& spec) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        nlohmann::json e = {{"kind", layer_kind_name(l.kind)}};
        if (!l.weight_name.empty()) {
            e["weight"] = l.weight_name;
            e["bias"] = l.bias_name;
        }
        layers.push_back(std::move(e));
    }
    return {{"layers", layers},
            {"loss", spec.loss == LossKind::MSE ? "mse" : "cross_entropy"},
            {"input_shape", spec.input_shape}};
}

inline ToyModelSpec read_toy_spec(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoFailure("cannot open model spec: " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("model spec is not valid JSON: " + std::string(e.what()));
    }
    return toy_spec_from_json(j);
}

inline Dataset read_dataset(const std::string& path) {
    TensorMap m = read_checkpoint(path);
    if (!m.contains("inputs") || !m.contains("targets"))
        throw DataError("dataset file must contain 'inputs' and 'targets': " + path);
    Dataset d;
    d.inputs = m.at("inputs");
    d.targets = m.at("targets");
    return d;
}

inline void write_dataset(const Dataset& d, const std::string& path) {
    TensorMap m;
    m.add("inputs", d.inputs);
    m.add("targets", d.targets);
    write_checkpoint(m, path);
}

}  // namespace blockmerge
