// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "splitflow/latent.hpp"
#include "splitflow/rng.hpp"
#include "splitflow/velocity_field.hpp"

namespace splitflow {

struct Location {
    std::size_t h = 0;
    std::size_t w = 0;
    bool operator==(const Location&) const = default;
};

/// One discrete attribute of a toy scene. Value k places means[k] (a
/// channel vector) at every location of the attribute's region.
struct AttributeSpec {
    std::string name;
    std::vector<std::string> values;
    std::vector<std::vector<double>> means;
    double stddev = 0.1;
    std::vector<Location> region;

    std::size_t cardinality() const noexcept { return values.size(); }
};

/// Desk-scale stand-in for an image distribution: a Gaussian mixture over
/// latents indexed by attribute combinations, plus attribute-independent
/// background locations.
struct SceneDescriptor {
    Shape shape{2, 1, 1};
    std::vector<AttributeSpec> attributes;
    std::vector<double> background_mean;  // one channel vector, shared by every background location
    double background_stddev = 0.1;
    /// Peak value for PSNR.
    double data_range = 2.0;

    std::size_t cond_dim() const noexcept;
    std::vector<std::size_t> block_layout() const;
    void validate() const;
};

SceneDescriptor scene_from_json(const nlohmann::json& j);
nlohmann::json scene_to_json(const SceneDescriptor& s);

/// Attribute assignment, one value index per attribute.
using AttributeValues = std::vector<std::size_t>;

class SceneDataset {
public:
    explicit SceneDataset(SceneDescriptor desc);

    const SceneDescriptor& descriptor() const noexcept { return desc_; }
    const Shape& shape() const noexcept { return desc_.shape; }
    std::size_t cond_dim() const noexcept { return desc_.cond_dim(); }
    std::vector<std::size_t> block_layout() const { return desc_.block_layout(); }

    /// Concatenated one-hot blocks, labelled "attr=value,...".
    Condition condition(const AttributeValues& values) const;
    AttributeValues values_of(const Condition& cond) const;

    AttributeValues random_values(Rng& rng) const;
    Latent mean(const AttributeValues& values) const;
    Latent sample(const AttributeValues& values, Rng& rng) const;
    std::pair<Latent, Condition> draw(Rng& rng) const;

    /// 1 at locations owned by an attribute that differs between src and tgt.
    ChannelMap edit_mask(const AttributeValues& src, const AttributeValues& tgt) const;
    /// 1 at every attribute-owned location.
    ChannelMap attribute_mask() const;

private:
    SceneDescriptor desc_;
    std::vector<int> owner_;  // per location: owning attribute or -1
};

}  // namespace splitflow
