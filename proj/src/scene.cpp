// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/scene.hpp"

#include <sstream>

namespace splitflow {

std::size_t SceneDescriptor::cond_dim() const noexcept {
    std::size_t d = 0;
    for (const auto& a : attributes) d += a.cardinality();
    return d;
}

std::vector<std::size_t> SceneDescriptor::block_layout() const {
    std::vector<std::size_t> b;
    for (const auto& a : attributes) b.push_back(a.cardinality());
    return b;
}

void SceneDescriptor::validate() const {
    if (shape.size() == 0) throw ConfigError("scene: empty shape");
    if (attributes.empty()) throw ConfigError("scene: at least one attribute is required");
    std::vector<int> owner(shape.locations(), -1);
    for (std::size_t a = 0; a < attributes.size(); ++a) {
        const auto& attr = attributes[a];
        if (attr.values.empty()) throw ConfigError("scene: attribute '" + attr.name + "' has no values");
        if (attr.means.size() != attr.values.size()) {
            throw ConfigError("scene: attribute '" + attr.name + "' needs one mean per value");
        }
        for (const auto& m : attr.means) {
            if (m.size() != shape.channels) {
                throw ConfigError("scene: attribute '" + attr.name + "' mean must have C entries");
            }
        }
        if (!(attr.stddev >= 0.0)) throw ConfigError("scene: negative stddev");
        if (attr.region.empty()) throw ConfigError("scene: attribute '" + attr.name + "' has an empty region");
        for (const auto& loc : attr.region) {
            if (loc.h >= shape.height || loc.w >= shape.width) {
                throw ConfigError("scene: attribute '" + attr.name + "' region outside the latent");
            }
            int& o = owner[loc.h * shape.width + loc.w];
            if (o != -1) throw ConfigError("scene: attribute regions overlap");
            o = static_cast<int>(a);
        }
    }
    if (background_mean.size() != shape.channels) throw ConfigError("scene: background_mean must have C entries");
    if (!(background_stddev >= 0.0)) throw ConfigError("scene: negative background stddev");
    if (!(data_range > 0.0)) throw ConfigError("scene: data_range must be positive");
}

SceneDescriptor scene_from_json(const nlohmann::json& j) {
    try {
        SceneDescriptor s;
        const auto dims = j.at("shape").get<std::vector<std::size_t>>();
        if (dims.size() != 3) throw ConfigError("scene: shape must be [C, H, W]");
        s.shape = Shape{dims[0], dims[1], dims[2]};
        for (const auto& ja : j.at("attributes")) {
            AttributeSpec a;
            a.name = ja.at("name").get<std::string>();
            a.values = ja.at("values").get<std::vector<std::string>>();
            a.means = ja.at("means").get<std::vector<std::vector<double>>>();
            a.stddev = ja.value("stddev", 0.1);
            for (const auto& loc : ja.at("region")) {
                const auto hw = loc.get<std::vector<std::size_t>>();
                if (hw.size() != 2) throw ConfigError("scene: region entries are [h, w]");
                a.region.push_back({hw[0], hw[1]});
            }
            s.attributes.push_back(std::move(a));
        }
        s.background_mean = j.value("background_mean", std::vector<double>(s.shape.channels, 0.0));
        s.background_stddev = j.value("background_stddev", 0.1);
        s.data_range = j.value("data_range", 2.0);
        s.validate();
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene: ") + e.what());
    }
}

nlohmann::json scene_to_json(const SceneDescriptor& s) {
    nlohmann::json attrs = nlohmann::json::array();
    for (const auto& a : s.attributes) {
        nlohmann::json region = nlohmann::json::array();
        for (const auto& l : a.region) region.push_back({l.h, l.w});
        attrs.push_back({{"name", a.name},
                         {"values", a.values},
                         {"means", a.means},
                         {"stddev", a.stddev},
                         {"region", region}});
    }
    return {{"shape", {s.shape.channels, s.shape.height, s.shape.width}},
            {"attributes", attrs},
            {"background_mean", s.background_mean},
            {"background_stddev", s.background_stddev},
            {"data_range", s.data_range}};
}

SceneDataset::SceneDataset(SceneDescriptor desc) : desc_(std::move(desc)) {
    desc_.validate();
    owner_.assign(desc_.shape.locations(), -1);
    for (std::size_t a = 0; a < desc_.attributes.size(); ++a) {
        for (const auto& loc : desc_.attributes[a].region) owner_[loc.h * desc_.shape.width + loc.w] = static_cast<int>(a);
    }
}

Condition SceneDataset::condition(const AttributeValues& values) const {
    if (values.size() != desc_.attributes.size()) throw ConfigError("condition: one value per attribute expected");
    Condition c;
    c.embedding.assign(cond_dim(), 0.0);
    std::ostringstream label;
    std::size_t offset = 0;
    for (std::size_t a = 0; a < values.size(); ++a) {
        const auto& attr = desc_.attributes[a];
        if (values[a] >= attr.cardinality()) throw ConfigError("condition: value index out of range for " + attr.name);
        c.embedding[offset + values[a]] = 1.0;
        offset += attr.cardinality();
        label << (a ? "," : "") << attr.name << "=" << attr.values[values[a]];
    }
    c.label = label.str();
    return c;
}

AttributeValues SceneDataset::values_of(const Condition& cond) const {
    if (cond.dim() != cond_dim()) throw DimensionError("values_of: condition dim mismatch");
    AttributeValues v;
    std::size_t offset = 0;
    for (const auto& attr : desc_.attributes) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < attr.cardinality(); ++k) {
            if (cond.embedding[offset + k] > cond.embedding[offset + best]) best = k;
        }
        v.push_back(best);
        offset += attr.cardinality();
    }
    return v;
}

AttributeValues SceneDataset::random_values(Rng& rng) const {
    AttributeValues v;
    for (const auto& attr : desc_.attributes) {
        std::uniform_int_distribution<std::size_t> pick(0, attr.cardinality() - 1);
        v.push_back(pick(rng));
    }
    return v;
}

Latent SceneDataset::mean(const AttributeValues& values) const {
    if (values.size() != desc_.attributes.size()) throw ConfigError("mean: one value per attribute expected");
    const Shape& s = desc_.shape;
    Latent m(s);
    for (std::size_t l = 0; l < s.locations(); ++l) {
        const int o = owner_[l];
        const std::vector<double>& col =
            o < 0 ? desc_.background_mean : desc_.attributes[static_cast<std::size_t>(o)].means[values[static_cast<std::size_t>(o)]];
        for (std::size_t c = 0; c < s.channels; ++c) m[c * s.locations() + l] = col[c];
    }
    return m;
}

Latent SceneDataset::sample(const AttributeValues& values, Rng& rng) const {
    Latent x = mean(values);
    const Shape& s = desc_.shape;
    std::normal_distribution<double> n01(0.0, 1.0);
    for (std::size_t c = 0; c < s.channels; ++c) {
        for (std::size_t l = 0; l < s.locations(); ++l) {
            const int o = owner_[l];
            const double sd = o < 0 ? desc_.background_stddev : desc_.attributes[static_cast<std::size_t>(o)].stddev;
            x[c * s.locations() + l] += sd * n01(rng);
        }
    }
    return x;
}

std::pair<Latent, Condition> SceneDataset::draw(Rng& rng) const {
    const AttributeValues v = random_values(rng);
    Latent x = sample(v, rng);
    return {std::move(x), condition(v)};
}

ChannelMap SceneDataset::edit_mask(const AttributeValues& src, const AttributeValues& tgt) const {
    if (src.size() != desc_.attributes.size() || tgt.size() != desc_.attributes.size()) {
        throw ConfigError("edit_mask: one value per attribute expected");
    }
    ChannelMap m(desc_.shape.height, desc_.shape.width, 0.0);
    for (std::size_t l = 0; l < desc_.shape.locations(); ++l) {
        const int o = owner_[l];
        if (o >= 0 && src[static_cast<std::size_t>(o)] != tgt[static_cast<std::size_t>(o)]) m[l] = 1.0;
    }
    return m;
}

ChannelMap SceneDataset::attribute_mask() const {
    ChannelMap m(desc_.shape.height, desc_.shape.width, 0.0);
    for (std::size_t l = 0; l < desc_.shape.locations(); ++l) m[l] = owner_[l] >= 0 ? 1.0 : 0.0;
    return m;
}

}  // namespace splitflow
