#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "ncdlab/autograd.hpp"
#include "ncdlab/errors.hpp"
#include "ncdlab/io.hpp"
#include "ncdlab/rng.hpp"
#include "ncdlab/tensor.hpp"

namespace ncdlab {

/// Desk-scale architecture: the backbone is two stride-2 3x3 convolutions
/// followed by a two-layer MLP producing the latent h (d_h); the projection
/// head maps h to the embedding z (d_r). The style encoder is an independent
/// two-convolution network with a linear head to the same d_r, so embeddings
/// and style features can be paired coordinatewise.
struct ModelDims {
    int image_size = 16;
    int conv1_channels = 8;
    int conv2_channels = 16;
    int mlp_hidden = 128;
    int d_h = 64;
    int d_r = 32;
    int num_seen = 5;
    int num_novel = 5;

    int total_classes() const { return num_seen + num_novel; }

    int conv_side() const {
        const int s1 = (image_size + 2 - 3) / 2 + 1;
        return (s1 + 2 - 3) / 2 + 1;
    }

    int conv_flat() const { return conv2_channels * conv_side() * conv_side(); }

    void validate() const {
        if (image_size < 8) throw config_error("image_size must be >= 8");
        if (d_h < 2 || d_r < 2) throw config_error("d_h and d_r must be >= 2");
        if (num_seen < 1 || num_novel < 1) throw config_error("need seen and novel classes");
    }
};

struct InitSpec {
    std::uint64_t seed = 1;
};

template <typename T = float>
struct ModelBundle {
    ModelDims dims;

    // backbone f
    Tensor<T> conv1_w, conv1_b, conv2_w, conv2_b;
    Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
    // projection head phi
    Tensor<T> proj1_w, proj1_b, proj2_w, proj2_b;
    // style encoder g (no parameters shared with the backbone)
    Tensor<T> s_conv1_w, s_conv1_b, s_conv2_w, s_conv2_b, s_fc_w, s_fc_b;
    // prototype bank C, one row per class, [K, d_h]
    Tensor<T> prototypes;

    /// Identical seed yields bit-identical parameters. Weights and biases use
    /// fan-in-scaled uniform init; prototypes are unit-normalized Gaussian
    /// directions.
    static ModelBundle init(const ModelDims& dims, const InitSpec& spec) {
        dims.validate();
        ModelBundle m;
        m.dims = dims;
        Rng rng(mix_seed(spec.seed, 0x6d6f64656cull));

        auto uniform_fan_in = [&](std::vector<int> shape, int fan_in) {
            const T bound = static_cast<T>(1.0 / std::sqrt(static_cast<double>(fan_in)));
            return Tensor<T>::uniform(std::move(shape), rng, -bound, bound);
        };

        const int c1 = dims.conv1_channels, c2 = dims.conv2_channels;
        m.conv1_w = uniform_fan_in({c1, 1, 3, 3}, 9);
        m.conv1_b = uniform_fan_in({c1}, 9);
        m.conv2_w = uniform_fan_in({c2, c1, 3, 3}, 9 * c1);
        m.conv2_b = uniform_fan_in({c2}, 9 * c1);
        m.fc1_w = uniform_fan_in({dims.conv_flat(), dims.mlp_hidden}, dims.conv_flat());
        m.fc1_b = uniform_fan_in({dims.mlp_hidden}, dims.conv_flat());
        m.fc2_w = uniform_fan_in({dims.mlp_hidden, dims.d_h}, dims.mlp_hidden);
        m.fc2_b = uniform_fan_in({dims.d_h}, dims.mlp_hidden);

        m.proj1_w = uniform_fan_in({dims.d_h, dims.d_h}, dims.d_h);
        m.proj1_b = uniform_fan_in({dims.d_h}, dims.d_h);
        m.proj2_w = uniform_fan_in({dims.d_h, dims.d_r}, dims.d_h);
        m.proj2_b = uniform_fan_in({dims.d_r}, dims.d_h);

        m.s_conv1_w = uniform_fan_in({c1, 1, 3, 3}, 9);
        m.s_conv1_b = uniform_fan_in({c1}, 9);
        m.s_conv2_w = uniform_fan_in({c2, c1, 3, 3}, 9 * c1);
        m.s_conv2_b = uniform_fan_in({c2}, 9 * c1);
        // the style head starts at 0.2x fan-in scale: with small ||v|| the
        // decorrelation penalty steers the feature direction within the
        // first epochs at desk scale
        m.s_fc_w = uniform_fan_in({dims.conv_flat(), dims.d_r}, dims.conv_flat());
        m.s_fc_b = uniform_fan_in({dims.d_r}, dims.conv_flat());
        for (auto* t : {&m.s_fc_w, &m.s_fc_b})
            for (auto& v : t->data) v *= T(0.2);

        m.prototypes = Tensor<T>({dims.total_classes(), dims.d_h});
        for (int k = 0; k < dims.total_classes(); ++k) {
            double ss = 0;
            for (int j = 0; j < dims.d_h; ++j) {
                m.prototypes.at(k, j) = static_cast<T>(rng.normal());
                ss += double(m.prototypes.at(k, j)) * double(m.prototypes.at(k, j));
            }
            const T norm = static_cast<T>(std::sqrt(ss));
            for (int j = 0; j < dims.d_h; ++j) m.prototypes.at(k, j) /= norm;
        }
        return m;
    }

    std::vector<std::pair<std::string, Tensor<T>*>> named_params() {
        return {
            {"conv1_w", &conv1_w},     {"conv1_b", &conv1_b},
            {"conv2_w", &conv2_w},     {"conv2_b", &conv2_b},
            {"fc1_w", &fc1_w},         {"fc1_b", &fc1_b},
            {"fc2_w", &fc2_w},         {"fc2_b", &fc2_b},
            {"proj1_w", &proj1_w},     {"proj1_b", &proj1_b},
            {"proj2_w", &proj2_w},     {"proj2_b", &proj2_b},
            {"s_conv1_w", &s_conv1_w}, {"s_conv1_b", &s_conv1_b},
            {"s_conv2_w", &s_conv2_w}, {"s_conv2_b", &s_conv2_b},
            {"s_fc_w", &s_fc_w},       {"s_fc_b", &s_fc_b},
            {"prototypes", &prototypes},
        };
    }

    /// Backbone + projection + prototypes (everything the baseline trains).
    std::vector<Tensor<T>*> content_params() {
        return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w,   &fc1_b,  &fc2_w,
                &fc2_b,   &proj1_w, &proj1_b, &proj2_w, &proj2_b, &prototypes};
    }

    std::vector<Tensor<T>*> style_params() {
        return {&s_conv1_w, &s_conv1_b, &s_conv2_w, &s_conv2_b, &s_fc_w, &s_fc_b};
    }

    std::vector<Tensor<T>*> all_params() {
        auto out = content_params();
        for (auto* p : style_params()) out.push_back(p);
        return out;
    }

    void set_requires_grad(bool on) {
        for (auto& [_, p] : named_params()) p->set_requires_grad(on);
    }

    void zero_grads() {
        for (auto& [_, p] : named_params()) p->zero_grad();
    }
};

template <typename T>
struct ContentForward {
    Value h;  // [B, d_h]
    Value z;  // [B, d_r]
};

namespace detail {

template <typename T>
Value linear(Tape<T>& tp, Value x, Tensor<T>& w, Tensor<T>& b) {
    return tp.add_rows(tp.matmul(x, tp.leaf(w)), tp.leaf(b));
}

// x arrives flattened [B, h*w]; reshape to NCHW for the convolutions.
template <typename T>
Value conv_trunk(Tape<T>& tp, Value x, const ModelDims& dims, Tensor<T>& w1, Tensor<T>& b1,
                 Tensor<T>& w2, Tensor<T>& b2) {
    const auto& tx = tp.value(x);
    if (tx.rank() != 2 || tx.cols() != dims.image_size * dims.image_size)
        throw shape_error("model input must be [B, " +
                          std::to_string(dims.image_size * dims.image_size) + "], got " +
                          tx.shape_str());
    const int batch = tx.rows();
    Value img = tp.reshape(x, {batch, 1, dims.image_size, dims.image_size});
    Value a1 = tp.relu(tp.conv2d(img, tp.leaf(w1), tp.leaf(b1), 2, 1));
    Value a2 = tp.relu(tp.conv2d(a1, tp.leaf(w2), tp.leaf(b2), 2, 1));
    return tp.reshape(a2, {batch, dims.conv_flat()});
}

}  // namespace detail

/// h = f(x), z = phi(f(x)); both differentiable through the tape.
template <typename T>
ContentForward<T> forward_content(Tape<T>& tp, ModelBundle<T>& m, Value x) {
    Value flat = detail::conv_trunk(tp, x, m.dims, m.conv1_w, m.conv1_b, m.conv2_w, m.conv2_b);
    Value h1 = tp.relu(detail::linear(tp, flat, m.fc1_w, m.fc1_b));
    Value h = detail::linear(tp, h1, m.fc2_w, m.fc2_b);
    Value p1 = tp.relu(detail::linear(tp, h, m.proj1_w, m.proj1_b));
    Value z = detail::linear(tp, p1, m.proj2_w, m.proj2_b);
    return {h, z};
}

/// v = g(x). The style encoder shares no parameters with the backbone, so
/// gradients of v cannot reach backbone or projection weights.
template <typename T>
Value forward_style(Tape<T>& tp, ModelBundle<T>& m, Value x) {
    Value flat =
        detail::conv_trunk(tp, x, m.dims, m.s_conv1_w, m.s_conv1_b, m.s_conv2_w, m.s_conv2_b);
    return detail::linear(tp, flat, m.s_fc_w, m.s_fc_b);
}

/// Prototype soft labels, one row per sample: softmax over classes of the
/// cosine between L2-normalized h_i and L2-normalized prototype c_k, divided
/// by the temperature.
template <typename T>
Value soft_labels(Tape<T>& tp, Value h, Value prototypes, T temperature) {
    if (temperature <= T(0)) throw config_error("soft_labels temperature must be positive");
    Value hn = tp.l2_normalize_rows(h);
    Value cn = tp.l2_normalize_rows(prototypes);
    return tp.row_softmax(tp.matmul(hn, tp.transpose(cn)), temperature);
}

/// Teacher view of the same prototypes: sharpened by tau_t and fully
/// gradient-stopped (same parameters as the student, no EMA).
template <typename T>
Value teacher_labels(Tape<T>& tp, Value h, Value prototypes, T tau_t) {
    return soft_labels(tp, tp.detach(h), tp.detach(prototypes), tau_t);
}

// ---- checkpointing --------------------------------------------------------

/// Checkpoint layout: manifest.json plus one CDT1 file per parameter.
template <typename T>
void save_checkpoint(const std::filesystem::path& dir, ModelBundle<T>& m) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["dims"] = {{"image_size", m.dims.image_size},
                        {"conv1_channels", m.dims.conv1_channels},
                        {"conv2_channels", m.dims.conv2_channels},
                        {"mlp_hidden", m.dims.mlp_hidden},
                        {"d_h", m.dims.d_h},
                        {"d_r", m.dims.d_r},
                        {"num_seen", m.dims.num_seen},
                        {"num_novel", m.dims.num_novel}};
    nlohmann::json params = nlohmann::json::array();
    for (auto& [name, p] : m.named_params()) {
        params.push_back({{"name", name}, {"dims", p->dims}});
        save_cdt1(dir / (name + ".cdt1"), *p);
    }
    manifest["params"] = params;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

template <typename T = float>
ModelBundle<T> load_checkpoint(const std::filesystem::path& dir) {
    const auto manifest = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    const auto& d = manifest.at("dims");
    ModelDims dims;
    dims.image_size = d.at("image_size").get<int>();
    dims.conv1_channels = d.at("conv1_channels").get<int>();
    dims.conv2_channels = d.at("conv2_channels").get<int>();
    dims.mlp_hidden = d.at("mlp_hidden").get<int>();
    dims.d_h = d.at("d_h").get<int>();
    dims.d_r = d.at("d_r").get<int>();
    dims.num_seen = d.at("num_seen").get<int>();
    dims.num_novel = d.at("num_novel").get<int>();
    ModelBundle<T> m = ModelBundle<T>::init(dims, InitSpec{0});
    for (auto& [name, p] : m.named_params()) {
        Tensor<T> loaded = load_cdt1<T>(dir / (name + ".cdt1"));
        if (loaded.dims != p->dims) throw io_error("checkpoint shape mismatch for " + name);
        *p = std::move(loaded);
    }
    return m;
}

}  // namespace ncdlab
