// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "splitflow/latent.hpp"

namespace splitflow {

/// Conditioning vector standing in for a text prompt. The null condition
/// used by classifier-free guidance is the all-zeros embedding with is_null set.
struct Condition {
    std::vector<double> embedding;
    bool is_null = false;
    std::string label;

    std::size_t dim() const noexcept { return embedding.size(); }
    static Condition null(std::size_t dim) { return Condition{std::vector<double>(dim, 0.0), true, "null"}; }

    bool operator==(const Condition& o) const { return embedding == o.embedding && is_null == o.is_null; }
};

/// v(x, sigma, c) = offset + sum_d c_d * basis[d], independent of x and sigma.
struct ConstantShiftParams {
    Latent offset;
    std::vector<Latent> basis;
};

/// Straight-path transport between a per-coordinate Gaussian noise law
/// N(noise_mean, noise_std^2) at sigma = 1 and a conditional data law
/// N(data_offset + sum_d c_d * data_basis[d], data_std^2) at sigma = 0, coupled
/// by the monotone (optimal transport) map. The velocity is affine in x and
/// constant when noise_std == data_std.
struct AffineGaussianParams {
    Latent noise_mean;
    Latent noise_std;
    Latent data_offset;
    std::vector<Latent> data_basis;
    Latent data_std;
};

enum class Activation { tanh, relu };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

struct DenseLayer {
    std::size_t in = 0;
    std::size_t out = 0;
    std::vector<double> weight;  // out x in, row-major
    std::vector<double> bias;    // out

    std::size_t param_count() const noexcept { return weight.size() + bias.size(); }
};

/// Dense network; hidden layers apply the activation, the last layer is linear.
/// Gradients use the same type so their shapes mirror the parameters.
struct MlpParams {
    std::vector<DenseLayer> layers;
    Activation activation = Activation::tanh;

    std::size_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
    std::size_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
    std::vector<std::size_t> hidden_widths() const;
    std::size_t param_count() const noexcept;

    /// Flat view over (W_0, b_0, W_1, b_1, ...).
    double& param(std::size_t flat_index);
    double param(std::size_t flat_index) const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);

    /// Same architecture, every parameter zero.
    MlpParams zeros_like() const;

    bool operator==(const MlpParams& o) const;
};

/// Per-layer input activations and pre-activations of one forward pass.
struct MlpCache {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> pre;
};

struct MlpForward {
    std::vector<double> output;
    MlpCache cache;
};

/// Xavier-uniform init drawn in float32 so parameters persist exactly.
MlpParams init_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t output_dim,
                   Activation activation, std::uint64_t seed, bool zero_last_layer = false);

MlpForward mlp_forward(const MlpParams& params, std::span<const double> input);
std::vector<double> mlp_output(const MlpParams& params, std::span<const double> input);

/// Parameter gradients of <upstream, output> for the cached forward pass.
MlpParams mlp_backward(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream);

/// Adds the parameter gradient into grads (same architecture as params).
void mlp_backward_accumulate(const MlpParams& params, const MlpCache& cache, std::span<const double> upstream,
                             MlpParams& grads);

enum class FieldKind { constant_shift, affine_gaussian, mlp };

std::string to_string(FieldKind k);
FieldKind field_kind_from_string(const std::string& s);

/// The conditional velocity field v(x, sigma, c).
struct FieldSpec {
    Shape input_shape;
    std::size_t cond_dim = 0;
    std::variant<ConstantShiftParams, AffineGaussianParams, MlpParams> params;

    FieldKind kind() const noexcept { return static_cast<FieldKind>(params.index()); }

    /// Throws DimensionError if the parameter block does not fit input_shape / cond_dim.
    void validate() const;

    MlpParams& mlp() { return std::get<MlpParams>(params); }
    const MlpParams& mlp() const { return std::get<MlpParams>(params); }
};

FieldSpec make_constant_shift(Latent offset, std::vector<Latent> basis);
FieldSpec make_affine_gaussian(AffineGaussianParams p);
FieldSpec make_mlp_field(Shape shape, std::size_t cond_dim, const std::vector<std::size_t>& hidden,
                         Activation activation, std::uint64_t seed, bool zero_last_layer = false);

/// Input vector for the MLP backend: flattened x, then sigma, then the embedding.
std::vector<double> pack_mlp_input(const Latent& x, double sigma, const Condition& cond);

Latent eval(const FieldSpec& field, const Latent& x, double sigma, const Condition& cond);

/// v_null + scale * (v_cond - v_null)
Latent eval_cfg(const FieldSpec& field, const Latent& x, double sigma, const Condition& cond, double scale);

// Persistence. A field file is a JSON header line ("SFFIELD" format tag,
// kind, shapes, widths, activation, payload length) terminated by '\n',
// followed by the parameters as little-endian float32.
std::vector<std::uint8_t> encode_field(const FieldSpec& field);
FieldSpec decode_field(const std::vector<std::uint8_t>& bytes);
void save_field(const FieldSpec& field, const std::filesystem::path& path);
FieldSpec load_field(const std::filesystem::path& path);

/// Rounds every parameter to float32, making the field exactly persistable.
void round_params_to_float32(FieldSpec& field);

}  // namespace splitflow
