// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitflow/latent.hpp"

namespace splitflow {

// Binary layout: "SFLT", u32 C, u32 H, u32 W (all little-endian), then
// C*H*W little-endian IEEE-754 float32 values in (c, h, w) order.
// Values are narrowed to float32 on write; a latent whose entries are
// float32-representable round-trips bit-exactly.
std::vector<std::uint8_t> encode_latent(const Latent& x);
Latent decode_latent(const std::vector<std::uint8_t>& bytes);

void save_latent(const Latent& x, const std::filesystem::path& path);
Latent load_latent(const std::filesystem::path& path);

// Text variant: {"shape": [C, H, W], "data": [[[...]]]} with full double precision.
nlohmann::json latent_to_json(const Latent& x);
Latent latent_from_json(const nlohmann::json& j);

void save_latent_json(const Latent& x, const std::filesystem::path& path);
Latent load_latent_json(const std::filesystem::path& path);

/// Dispatches on extension: ".json" uses the text format, anything else the binary one.
void save_latent_any(const Latent& x, const std::filesystem::path& path);
Latent load_latent_any(const std::filesystem::path& path);

/// Rounds every entry to the nearest float32.
Latent round_to_float32(Latent x);

namespace detail {
void put_u32_le(std::vector<std::uint8_t>& out, std::uint32_t v);
void put_f32_le(std::vector<std::uint8_t>& out, float v);
std::uint32_t get_u32_le(const std::uint8_t* p);
float get_f32_le(const std::uint8_t* p);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
}  // namespace detail

}  // namespace splitflow
