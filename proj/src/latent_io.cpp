// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/latent_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace splitflow {

namespace detail {

void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFFu));
}

void put_f32_le(std::vector<std::uint8_t>& out, float v) {
    put_u32_le(out, std::bit_cast<std::uint32_t>(v));
}

std::uint32_t get_u32_le(const std::uint8_t* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

float get_f32_le(const std::uint8_t* p) { return std::bit_cast<float>(get_u32_le(p)); }

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write file: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::string read_text(const std::filesystem::path& path) {
    auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

}  // namespace detail

namespace {
constexpr char kMagic[4] = {'S', 'F', 'L', 'T'};
constexpr std::size_t kHeaderBytes = 16;
}  // namespace

std::vector<std::uint8_t> encode_latent(const Latent& x) {
    std::vector<std::uint8_t> out;
    out.reserve(kHeaderBytes + 4 * x.size());
    out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
    detail::put_u32_le(out, static_cast<std::uint32_t>(x.shape().channels));
    detail::put_u32_le(out, static_cast<std::uint32_t>(x.shape().height));
    detail::put_u32_le(out, static_cast<std::uint32_t>(x.shape().width));
    for (double v : x.data()) detail::put_f32_le(out, static_cast<float>(v));
    return out;
}

Latent decode_latent(const std::vector<std::uint8_t>& bytes) {
    if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ConfigError("not an SFLT latent file");
    }
    const Shape shape{detail::get_u32_le(bytes.data() + 4), detail::get_u32_le(bytes.data() + 8),
                      detail::get_u32_le(bytes.data() + 12)};
    if (bytes.size() != kHeaderBytes + 4 * shape.size()) {
        throw ConfigError("SFLT payload length does not match header shape " + shape.str());
    }
    std::vector<double> data(shape.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        data[i] = static_cast<double>(detail::get_f32_le(bytes.data() + kHeaderBytes + 4 * i));
    }
    return Latent(shape, std::move(data));
}

void save_latent(const Latent& x, const std::filesystem::path& path) {
    detail::write_file(path, encode_latent(x));
}

Latent load_latent(const std::filesystem::path& path) { return decode_latent(detail::read_file(path)); }

nlohmann::json latent_to_json(const Latent& x) {
    const Shape s = x.shape();
    nlohmann::json data = nlohmann::json::array();
    for (std::size_t c = 0; c < s.channels; ++c) {
        nlohmann::json plane = nlohmann::json::array();
        for (std::size_t h = 0; h < s.height; ++h) {
            nlohmann::json row = nlohmann::json::array();
            for (std::size_t w = 0; w < s.width; ++w) row.push_back(x.at(c, h, w));
            plane.push_back(std::move(row));
        }
        data.push_back(std::move(plane));
    }
    return {{"shape", {s.channels, s.height, s.width}}, {"data", std::move(data)}};
}

Latent latent_from_json(const nlohmann::json& j) {
    try {
        const auto dims = j.at("shape").get<std::vector<std::size_t>>();
        if (dims.size() != 3) throw ConfigError("latent json: shape must have three entries");
        Latent x(Shape{dims[0], dims[1], dims[2]});
        const auto& data = j.at("data");
        if (data.size() != dims[0]) throw ConfigError("latent json: channel count mismatch");
        for (std::size_t c = 0; c < dims[0]; ++c) {
            if (data[c].size() != dims[1]) throw ConfigError("latent json: row count mismatch");
            for (std::size_t h = 0; h < dims[1]; ++h) {
                if (data[c][h].size() != dims[2]) throw ConfigError("latent json: column count mismatch");
                for (std::size_t w = 0; w < dims[2]; ++w) x.at(c, h, w) = data[c][h][w].get<double>();
            }
        }
        return x;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("latent json: ") + e.what());
    }
}

void save_latent_json(const Latent& x, const std::filesystem::path& path) {
    detail::write_text(path, latent_to_json(x).dump(2) + "\n");
}

Latent load_latent_json(const std::filesystem::path& path) {
    try {
        return latent_from_json(nlohmann::json::parse(detail::read_text(path)));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("latent json " + path.string() + ": " + e.what());
    }
}

void save_latent_any(const Latent& x, const std::filesystem::path& path) {
    if (path.extension() == ".json") save_latent_json(x, path);
    else save_latent(x, path);
}

Latent load_latent_any(const std::filesystem::path& path) {
    return path.extension() == ".json" ? load_latent_json(path) : load_latent(path);
}

Latent round_to_float32(Latent x) {
    for (double& v : x.data()) v = static_cast<double>(static_cast<float>(v));
    return x;
}

}  // namespace splitflow
