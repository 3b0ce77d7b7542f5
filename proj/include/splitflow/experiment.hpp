// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitflow/edit_engine.hpp"
#include "splitflow/fm_trainer.hpp"
#include "splitflow/metrics.hpp"
#include "splitflow/prompt_decomp.hpp"
#include "splitflow/scene.hpp"

namespace splitflow {

struct ModelSpec {
    std::vector<std::size_t> hidden{64, 64, 64};
    Activation activation = Activation::tanh;
    std::uint64_t init_seed = 7;
};

/// attribute name -> value name
using AttributeMap = std::map<std::string, std::string>;

struct EditTask {
    AttributeMap source;
    AttributeMap target;
};

/// Everything a train / edit / bench run needs. Stored as one JSON document;
/// `reference_config()` documents every key with its default.
struct ExperimentConfig {
    SceneDescriptor scene;
    ModelSpec model;
    TrainConfig train;
    EditSchedule schedule;
    EditConfig edit;
    EditTask task;
    std::vector<std::string> methods{"baseline", "avg", "ltp", "ltp+vfa"};
    std::vector<std::uint64_t> seeds;
    std::vector<int> eta_dec_sweep;
    std::size_t target_samples = 300;
    std::filesystem::path output_dir = "splitflow-out";

    void validate() const;
};

/// Parses a config document. Relative paths ("scene_file", "output_dir") are
/// resolved against base_dir. Throws ConfigError.
ExperimentConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
nlohmann::json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Default experiment: the 3-attribute toy editing scene.
ExperimentConfig reference_config();
/// The 2-D two-cluster conditional scene.
SceneDescriptor two_cluster_scene();

/// Stable hex digest of the canonical config document.
std::string config_fingerprint(const ExperimentConfig& c);

AttributeValues resolve_values(const SceneDataset& data, const AttributeMap& m);
std::string caption(const SceneDataset& data, const AttributeValues& values);

/// Maps text sub-prompts onto toy conditions: each sub-condition starts from
/// the source and takes the target value of every edited attribute whose
/// value name occurs as a word in the text. Texts matching nothing are skipped.
std::vector<Condition> conditions_from_text(const SceneDataset& data, const AttributeValues& src,
                                            const AttributeValues& tgt, const std::vector<std::string>& texts);

/// One "attr=value,attr=value" assignment per non-empty, non-# line; attributes
/// left out keep their source value.
std::vector<Condition> conditions_from_manual(const SceneDataset& data, const AttributeValues& src,
                                              const std::string& text);

FieldSpec make_model(const ExperimentConfig& c);

/// Method tag -> runner. "baseline" runs flowedit_run, the others run
/// splitflow_run with the matching aggregation.
bool is_known_method(const std::string& m);

struct SeedOutcome {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    Latent x0_src;
    Latent edited;
    double background_displacement = 0.0;
    std::size_t eval_count = 0;
};

struct BenchResult {
    MetricReport report;
    /// outcomes[row][seed]
    std::vector<std::vector<SeedOutcome>> outcomes;
};

/// Runs every method over every seed (and every sweep point) as an OpenMP
/// job pool and aggregates one MetricRow per (method, eta_dec).
BenchResult run_bench(const ExperimentConfig& c, const FieldSpec& field);

/// Minimal SVG line chart of one metric against eta_dec, one series per method.
std::string metric_plot_svg(const MetricReport& report, const std::string& metric);

}  // namespace splitflow
