// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/velocity_field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>

#include <json.hpp>

#include "splitflow/latent_io.hpp"

namespace splitflow {

std::string to_string(Activation a) { return a == Activation::tanh ? "tanh" : "relu"; }

Activation activation_from_string(const std::string& s) {
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw ConfigError("unknown activation '" + s + "' (expected tanh or relu)");
}

std::string to_string(FieldKind k) {
    switch (k) {
        case FieldKind::constant_shift: return "constant_shift";
        case FieldKind::affine_gaussian: return "affine_gaussian";
        case FieldKind::mlp: return "mlp";
    }
    return "unknown";
}

FieldKind field_kind_from_string(const std::string& s) {
    if (s == "constant_shift") return FieldKind::constant_shift;
    if (s == "affine_gaussian") return FieldKind::affine_gaussian;
    if (s == "mlp") return FieldKind::mlp;
    throw ConfigError("unknown field kind '" + s + "'");
}

// ---------------------------------------------------------------------------
// MLP

std::vector<std::size_t> MlpParams::hidden_widths() const {
    std::vector<std::size_t> w;
    for (std::size_t l = 0; l + 1 < layers.size(); ++l) w.push_back(layers[l].out);
    return w;
}

std::size_t MlpParams::param_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.param_count();
    return n;
}

double& MlpParams::param(std::size_t flat_index) {
    for (auto& l : layers) {
        if (flat_index < l.weight.size()) return l.weight[flat_index];
        flat_index -= l.weight.size();
        if (flat_index < l.bias.size()) return l.bias[flat_index];
        flat_index -= l.bias.size();
    }
    throw DimensionError("mlp parameter index out of range");
}

double MlpParams::param(std::size_t flat_index) const { return const_cast<MlpParams*>(this)->param(flat_index); }

std::vector<double> MlpParams::flatten() const {
    std::vector<double> out;
    out.reserve(param_count());
    for (const auto& l : layers) {
        out.insert(out.end(), l.weight.begin(), l.weight.end());
        out.insert(out.end(), l.bias.begin(), l.bias.end());
    }
    return out;
}

void MlpParams::assign(std::span<const double> flat) {
    if (flat.size() != param_count()) throw DimensionError("mlp assign: parameter count mismatch");
    std::size_t k = 0;
    for (auto& l : layers) {
        for (double& w : l.weight) w = flat[k++];
        for (double& b : l.bias) b = flat[k++];
    }
}

MlpParams MlpParams::zeros_like() const {
    MlpParams z = *this;
    for (auto& l : z.layers) {
        std::fill(l.weight.begin(), l.weight.end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
    }
    return z;
}

bool MlpParams::operator==(const MlpParams& o) const {
    if (activation != o.activation || layers.size() != o.layers.size()) return false;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& a = layers[l];
        const auto& b = o.layers[l];
        if (a.in != b.in || a.out != b.out || a.weight != b.weight || a.bias != b.bias) return false;
    }
    return true;
}

MlpParams init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim,
                   Activation activation, std::uint64_t seed, bool zero_last_layer) {
    if (input_dim == 0 || output_dim == 0) throw DimensionError("init_mlp: zero-sized input or output");
    MlpParams p;
    p.activation = activation;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> dims{input_dim};
    dims.insert(dims.end(), hidden.begin(), hidden.end());
    dims.push_back(output_dim);
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        DenseLayer layer;
        layer.in = dims[l];
        layer.out = dims[l + 1];
        if (layer.in == 0 || layer.out == 0) throw DimensionError("init_mlp: zero-width layer");
        layer.weight.assign(layer.in * layer.out, 0.0);
        layer.bias.assign(layer.out, 0.0);
        const bool last = (l + 2 == dims.size());
        if (!(last && zero_last_layer)) {
            const float limit = std::sqrt(6.0f / static_cast<float>(layer.in + layer.out));
            std::uniform_real_distribution<float> dist(-limit, limit);
            for (double& w : layer.weight) w = static_cast<double>(dist(rng));
        }
        p.layers.push_back(std::move(layer));
    }
    return p;
}

namespace {

inline double activate(Activation a, double z) { return a == Activation::tanh ? std::tanh(z) : (z > 0.0 ? z : 0.0); }

inline double activate_grad(Activation a, double z) {
    if (a == Activation::tanh) {
        const double t = std::tanh(z);
        return 1.0 - t * t;
    }
    return z > 0.0 ? 1.0 : 0.0;
}

}  // namespace

MlpForward mlp_forward(const MlpParams& params, std::span<const double> input) {
    if (params.layers.empty()) throw StateError("mlp_forward: network has no layers");
    if (input.size() != params.input_dim()) {
        throw DimensionError("mlp_forward: input has " + std::to_string(input.size()) + " entries, expected " +
                             std::to_string(params.input_dim()));
    }
    MlpForward f;
    f.cache.inputs.reserve(params.layers.size());
    f.cache.pre.reserve(params.layers.size());
    std::vector<double> a(input.begin(), input.end());
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const DenseLayer& layer = params.layers[l];
        std::vector<double> z(layer.bias);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double* row = layer.weight.data() + o * layer.in;
            double acc = 0.0;
            for (std::size_t i = 0; i < layer.in; ++i) acc += row[i] * a[i];
            z[o] += acc;
        }
        f.cache.inputs.push_back(std::move(a));
        const bool last = (l + 1 == params.layers.size());
        a = z;
        if (!last) {
            for (double& v : a) v = activate(params.activation, v);
        }
        f.cache.pre.push_back(std::move(z));
    }
    f.output = std::move(a);
    return f;
}

std::vector<double> mlp_output(const MlpParams& params, std::span<const double> input) {
    return mlp_forward(params, input).output;
}

void mlp_backward_accumulate(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream,
                             MlpParams& grads) {
    const std::size_t L = params.layers.size();
    if (cache.inputs.size() != L || cache.pre.size() != L) {
        throw StateError("mlp_backward: cache depth does not match the network");
    }
    if (grads.layers.size() != L) throw StateError("mlp_backward: gradient buffer does not match the network");
    for (std::size_t l = 0; l < L; ++l) {
        if (cache.inputs[l].size() != params.layers[l].in || cache.pre[l].size() != params.layers[l].out ||
            grads.layers[l].weight.size() != params.layers[l].weight.size()) {
            throw StateError("mlp_backward: cache from a different architecture");
        }
    }
    if (upstream.size() != params.output_dim()) throw DimensionError("mlp_backward: upstream gradient size mismatch");

    std::vector<double> delta(upstream.begin(), upstream.end());
    for (std::size_t l = L; l-- > 0;) {
        const DenseLayer& layer = params.layers[l];
        DenseLayer& g = grads.layers[l];
        const std::vector<double>& a = cache.inputs[l];
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta[o];
            g.bias[o] += d;
            if (d == 0.0) continue;
            double* grow = g.weight.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) grow[i] += d * a[i];
        }
        if (l == 0) break;
        std::vector<double> prev(layer.in, 0.0);
        for (std::size_t o = 0; o < layer.out; ++o) {
            const double d = delta[o];
            if (d == 0.0) continue;
            const double* row = layer.weight.data() + o * layer.in;
            for (std::size_t i = 0; i < layer.in; ++i) prev[i] += row[i] * d;
        }
        const std::vector<double>& z = cache.pre[l - 1];
        for (std::size_t i = 0; i < layer.in; ++i) prev[i] *= activate_grad(params.activation, z[i]);
        delta = std::move(prev);
    }
}

MlpParams mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream) {
    MlpParams grads = params.zeros_like();
    mlp_backward_accumulate(params, cache, upstream, grads);
    return grads;
}

// ---------------------------------------------------------------------------
// FieldSpec

namespace {

void require_shape(const Latent& x, const Shape& s, const char* what) {
    if (x.shape() != s) {
        throw DimensionError(std::string(what) + " has shape " + x.shape().str() + ", field expects " + s.str());
    }
}

Latent linear_in_condition(const Latent& offset, const std::vector<Latent>& basis, const Condition& cond) {
    Latent out = offset;
    for (std::size_t d = 0; d < basis.size(); ++d) {
        if (cond.embedding[d] != 0.0) out.axpy(cond.embedding[d], basis[d]);
    }
    return out;
}

}  // namespace

void FieldSpec::validate() const {
    const std::size_t n = input_shape.size();
    if (n == 0) throw DimensionError("field input shape is empty");
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ConstantShiftParams>) {
                require_shape(p.offset, input_shape, "constant_shift offset");
                if (p.basis.size() != cond_dim) throw DimensionError("constant_shift basis count != cond_dim");
                for (const auto& b : p.basis) require_shape(b, input_shape, "constant_shift basis");
            } else if constexpr (std::is_same_v<P, AffineGaussianParams>) {
                require_shape(p.noise_mean, input_shape, "affine_gaussian noise_mean");
                require_shape(p.noise_std, input_shape, "affine_gaussian noise_std");
                require_shape(p.data_offset, input_shape, "affine_gaussian data_offset");
                require_shape(p.data_std, input_shape, "affine_gaussian data_std");
                if (p.data_basis.size() != cond_dim) throw DimensionError("affine_gaussian basis count != cond_dim");
                for (const auto& b : p.data_basis) require_shape(b, input_shape, "affine_gaussian basis");
                for (std::size_t i = 0; i < n; ++i) {
                    if (!(p.noise_std[i] > 0.0) || !(p.data_std[i] > 0.0)) {
                        throw DomainError("affine_gaussian standard deviations must be positive");
                    }
                }
            } else {
                if (p.layers.empty()) throw DimensionError("mlp field has no layers");
                if (p.input_dim() != n + 1 + cond_dim) {
                    throw DimensionError("mlp input dim " + std::to_string(p.input_dim()) + " != C*H*W + 1 + D = " +
                                         std::to_string(n + 1 + cond_dim));
                }
                if (p.output_dim() != n) throw DimensionError("mlp output dim != C*H*W");
                for (std::size_t l = 0; l < p.layers.size(); ++l) {
                    const auto& layer = p.layers[l];
                    if (layer.weight.size() != layer.in * layer.out || layer.bias.size() != layer.out) {
                        throw DimensionError("mlp layer parameter block has the wrong size");
                    }
                    if (l > 0 && p.layers[l - 1].out != layer.in) throw DimensionError("mlp layer dims do not chain");
                }
            }
        },
        params);
}

FieldSpec make_constant_shift(Latent offset, std::vector<Latent> basis) {
    FieldSpec f;
    f.input_shape = offset.shape();
    f.cond_dim = basis.size();
    f.params = ConstantShiftParams{std::move(offset), std::move(basis)};
    f.validate();
    return f;
}

FieldSpec make_affine_gaussian(AffineGaussianParams p) {
    FieldSpec f;
    f.input_shape = p.noise_mean.shape();
    f.cond_dim = p.data_basis.size();
    f.params = std::move(p);
    f.validate();
    return f;
}

FieldSpec make_mlp_field(Shape shape, std::size_t cond_dim, const std::vector<std::size_t>& hidden,
                         Activation activation, std::uint64_t seed, bool zero_last_layer) {
    FieldSpec f;
    f.input_shape = shape;
    f.cond_dim = cond_dim;
    f.params = init_mlp(shape.size() + 1 + cond_dim, hidden, shape.size(), activation, seed, zero_last_layer);
    f.validate();
    return f;
}

std::vector<double> pack_mlp_input(const Latent& x, double sigma, const Condition& cond) {
    std::vector<double> in;
    in.reserve(x.size() + 1 + cond.dim());
    in.insert(in.end(), x.data().begin(), x.data().end());
    in.push_back(sigma);
    in.insert(in.end(), cond.embedding.begin(), cond.embedding.end());
    return in;
}

Latent eval(const FieldSpec& field, const Latent& x, double sigma, const Condition& cond) {
    require_shape(x, field.input_shape, "eval input");
    if (cond.dim() != field.cond_dim) {
        throw DimensionError("condition has dim " + std::to_string(cond.dim()) + ", field expects " +
                             std::to_string(field.cond_dim));
    }
    return std::visit(
        [&](const auto& p) -> Latent {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ConstantShiftParams>) {
                return linear_in_condition(p.offset, p.basis, cond);
            } else if constexpr (std::is_same_v<P, AffineGaussianParams>) {
                const Latent data_mean = linear_in_condition(p.data_offset, p.data_basis, cond);
                Latent v(x.shape());
                for (std::size_t i = 0; i < x.size(); ++i) {
                    const double mn = p.noise_mean[i], sn = p.noise_std[i];
                    const double md = data_mean[i], sd = p.data_std[i];
                    const double z = (x[i] - (1.0 - sigma) * md - sigma * mn) / ((1.0 - sigma) * sd + sigma * sn);
                    v[i] = (mn - md) + z * (sn - sd);
                }
                return v;
            } else {
                return Latent(x.shape(), mlp_output(p, pack_mlp_input(x, sigma, cond)));
            }
        },
        field.params);
}

Latent eval_cfg(const FieldSpec& field, const Latent& x, double sigma, const Condition& cond, double scale) {
    if (scale == 1.0) return eval(field, x, sigma, cond);
    const Latent v_null = eval(field, x, sigma, Condition::null(field.cond_dim));
    if (scale == 0.0) return v_null;
    Latent out = v_null;
    out.axpy(scale, eval(field, x, sigma, cond) - v_null);
    return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

constexpr const char* kFieldFormat = "SFFIELD";

std::vector<double> field_payload(const FieldSpec& field) {
    std::vector<double> out;
    auto put = [&](const Latent& x) { out.insert(out.end(), x.data().begin(), x.data().end()); };
    std::visit(
        [&](const auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ConstantShiftParams>) {
                put(p.offset);
                for (const auto& b : p.basis) put(b);
            } else if constexpr (std::is_same_v<P, AffineGaussianParams>) {
                put(p.noise_mean);
                put(p.noise_std);
                put(p.data_offset);
                for (const auto& b : p.data_basis) put(b);
                put(p.data_std);
            } else {
                out = p.flatten();
            }
        },
        field.params);
    return out;
}

}  // namespace

std::vector<std::uint8_t> encode_field(const FieldSpec& field) {
    field.validate();
    const std::vector<double> payload = field_payload(field);
    nlohmann::json header = {
        {"format", kFieldFormat},
        {"version", 1},
        {"kind", to_string(field.kind())},
        {"input_shape", {field.input_shape.channels, field.input_shape.height, field.input_shape.width}},
        {"cond_dim", field.cond_dim},
        {"payload_float32", payload.size()},
    };
    if (field.kind() == FieldKind::mlp) {
        header["hidden"] = field.mlp().hidden_widths();
        header["activation"] = to_string(field.mlp().activation);
    }
    const std::string text = header.dump() + "\n";
    std::vector<std::uint8_t> out(text.begin(), text.end());
    out.reserve(out.size() + 4 * payload.size());
    for (double v : payload) detail::put_f32_le(out, static_cast<float>(v));
    return out;
}

FieldSpec decode_field(const std::vector<std::uint8_t>& bytes) {
    const auto nl = std::find(bytes.begin(), bytes.end(), static_cast<std::uint8_t>('\n'));
    if (nl == bytes.end()) throw ConfigError("field file: missing header line");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(std::string(bytes.begin(), nl));
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("field file: bad header: ") + e.what());
    }
    if (header.value("format", "") != kFieldFormat) throw ConfigError("field file: not an SFFIELD file");

    const auto dims = header.at("input_shape").get<std::vector<std::size_t>>();
    if (dims.size() != 3) throw ConfigError("field file: input_shape must have three entries");
    const Shape shape{dims[0], dims[1], dims[2]};
    const auto cond_dim = header.at("cond_dim").get<std::size_t>();
    const auto count = header.at("payload_float32").get<std::size_t>();
    const std::size_t offset = static_cast<std::size_t>(nl - bytes.begin()) + 1;
    if (bytes.size() != offset + 4 * count) throw ConfigError("field file: payload length mismatch");

    std::vector<double> payload(count);
    for (std::size_t i = 0; i < count; ++i) payload[i] = detail::get_f32_le(bytes.data() + offset + 4 * i);

    std::size_t cursor = 0;
    auto take = [&]() {
        if (cursor + shape.size() > payload.size()) throw ConfigError("field file: payload too short");
        std::vector<double> v(payload.begin() + static_cast<std::ptrdiff_t>(cursor),
                              payload.begin() + static_cast<std::ptrdiff_t>(cursor + shape.size()));
        cursor += shape.size();
        return Latent(shape, std::move(v));
    };

    FieldSpec f;
    switch (field_kind_from_string(header.at("kind").get<std::string>())) {
        case FieldKind::constant_shift: {
            Latent off = take();
            std::vector<Latent> basis;
            for (std::size_t d = 0; d < cond_dim; ++d) basis.push_back(take());
            f = make_constant_shift(std::move(off), std::move(basis));
            break;
        }
        case FieldKind::affine_gaussian: {
            AffineGaussianParams p;
            p.noise_mean = take();
            p.noise_std = take();
            p.data_offset = take();
            for (std::size_t d = 0; d < cond_dim; ++d) p.data_basis.push_back(take());
            p.data_std = take();
            f = make_affine_gaussian(std::move(p));
            break;
        }
        case FieldKind::mlp: {
            const auto hidden = header.at("hidden").get<std::vector<std::size_t>>();
            const auto act = activation_from_string(header.at("activation").get<std::string>());
            f.input_shape = shape;
            f.cond_dim = cond_dim;
            MlpParams p = init_mlp(shape.size() + 1 + cond_dim, hidden, shape.size(), act, 0, true);
            if (p.param_count() != payload.size()) throw ConfigError("field file: mlp payload length mismatch");
            p.assign(payload);
            f.params = std::move(p);
            cursor = payload.size();
            break;
        }
    }
    if (cursor != payload.size()) throw ConfigError("field file: trailing payload");
    f.validate();
    return f;
}

void save_field(const FieldSpec& field, const std::filesystem::path& path) {
    detail::write_file(path, encode_field(field));
}

FieldSpec load_field(const std::filesystem::path& path) { return decode_field(detail::read_file(path)); }

void round_params_to_float32(FieldSpec& field) {
    auto r = [](double& v) { v = static_cast<double>(static_cast<float>(v)); };
    auto rl = [&](Latent& x) {
        for (double& v : x.data()) r(v);
    };
    std::visit(
        [&](auto& p) {
            using P = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<P, ConstantShiftParams>) {
                rl(p.offset);
                for (auto& b : p.basis) rl(b);
            } else if constexpr (std::is_same_v<P, AffineGaussianParams>) {
                rl(p.noise_mean);
                rl(p.noise_std);
                rl(p.data_offset);
                for (auto& b : p.data_basis) rl(b);
                rl(p.data_std);
            } else {
                for (auto& l : p.layers) {
                    for (double& w : l.weight) r(w);
                    for (double& b : l.bias) r(b);
                }
            }
        },
        field.params);
}

}  // namespace splitflow
