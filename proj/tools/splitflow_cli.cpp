// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0
//
// splitflow: train toy velocity fields, run edits, benchmark the aggregation
// variants, check the VFA inequality and decompose prompts.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "splitflow/edit_engine.hpp"
#include "splitflow/experiment.hpp"
#include "splitflow/fm_trainer.hpp"
#include "splitflow/latent_io.hpp"
#include "splitflow/metrics.hpp"
#include "splitflow/prompt_decomp.hpp"

namespace fs = std::filesystem;
using namespace splitflow;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitExternal = 4;

fs::path model_path(const ExperimentConfig& c) { return c.output_dir / "models" / "field.sfm"; }

int cmd_reference_config(const std::string& out) {
    const std::string text = config_to_json(reference_config()).dump(2) + "\n";
    if (out.empty() || out == "-") {
        std::cout << text;
    } else {
        detail::write_text(out, text);
        std::cerr << "wrote " << out << "\n";
    }
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& model_out) {
    const ExperimentConfig c = load_config(config_path);
    const SceneDataset data(c.scene);
    const fs::path out = model_out.empty() ? model_path(c) : fs::path(model_out);
    std::cerr << "training " << c.train.steps << " steps, batch " << c.train.batch_size << "\n";
    const TrainResult r = train(make_model(c), data, c.train);
    save_field(r.field, out);
    const fs::path loss = c.output_dir / "reports" / "loss.csv";
    write_loss_csv(r.loss_curve, loss);
    std::cerr << "loss " << r.loss_curve.front() << " -> " << r.loss_curve.back() << "\n";
    std::cout << out.string() << "\n" << loss.string() << "\n";
    return kExitOk;
}

int cmd_sample(const std::string& config_path, std::uint64_t seed, const std::string& out) {
    const ExperimentConfig c = load_config(config_path);
    const SceneDataset data(c.scene);
    Rng rng(derive_seed(seed, 0x5eed));
    const Latent x = data.sample(resolve_values(data, c.task.source), rng);
    const fs::path path = out.empty() ? c.output_dir / "latents" / ("source_" + std::to_string(seed) + ".sflt") : fs::path(out);
    save_latent_any(x, path);
    std::cout << path.string() << "\n";
    return kExitOk;
}

struct EditArgs {
    std::string config;
    std::string source;
    std::string method = "splitflow";
    std::string aggregation = "ltp+vfa";
    std::string decomposer = "attribute";
    std::string model;
    std::string out;
    std::string report;
    std::string endpoint;
    std::string templ = "psi1";
    bool strict = false;
    bool same_target = false;
};

std::vector<Condition> sub_conditions(const EditArgs& a, const ExperimentConfig& c, const SceneDataset& data,
                                      const AttributeValues& src, const AttributeValues& tgt) {
    const Condition cs = data.condition(src), ct = data.condition(tgt);
    if (a.decomposer == "attribute") {
        return decompose_attributes(cs, ct, data.block_layout(), c.edit.max_sub_prompts).sub_conditions;
    }
    if (a.decomposer.rfind("manual:", 0) == 0) {
        const fs::path file = a.decomposer.substr(7);
        if (!fs::exists(file)) throw ConfigError("manual decomposition file not found: " + file.string());
        return conditions_from_manual(data, src, detail::read_text(file));
    }
    const PromptPair pair{caption(data, src), caption(data, tgt)};
    DecompositionResult dec;
    if (a.decomposer == "llm") {
        LlmEndpointConfig ep;
        if (!a.endpoint.empty()) ep.base_url = a.endpoint;
        std::string why;
        dec = decompose_with_fallback(pair, template_from_string(a.templ), ep, c.edit.max_sub_prompts, a.strict, &why);
        if (!why.empty()) std::cerr << "warning: llm decomposition failed (" << why << "); using the rule-based splitter\n";
    } else if (a.decomposer == "rule") {
        dec = decompose_rule_based(pair, c.edit.max_sub_prompts);
    } else {
        throw ConfigError("unknown decomposer '" + a.decomposer + "' (attribute, rule, llm or manual:<file>)");
    }
    auto conds = conditions_from_text(data, src, tgt, dec.sub_prompts);
    if (conds.empty()) throw ConfigError("no sub-prompt names an edited attribute value");
    return conds;
}

int cmd_edit(const EditArgs& a) {
    ExperimentConfig c = load_config(a.config);
    const SceneDataset data(c.scene);
    const fs::path mpath = a.model.empty() ? model_path(c) : fs::path(a.model);
    if (!fs::exists(mpath)) throw ConfigError("model file not found: " + mpath.string() + " (run `splitflow train`)");
    if (!fs::exists(a.source)) throw ConfigError("source latent not found: " + a.source);
    const FieldSpec field = load_field(mpath);
    const Latent x0 = load_latent_any(a.source);
    if (x0.shape() != c.scene.shape) throw DimensionError("source latent shape " + x0.shape().str() + " does not match the scene");

    const AttributeValues src = resolve_values(data, c.task.source);
    const AttributeValues tgt = a.same_target ? src : resolve_values(data, c.task.target);
    const Condition cs = data.condition(src), ct = data.condition(tgt);
    // Asking for the source back: guide the target side like the source, so
    // the velocity delta vanishes and the edit is a fixed point.
    if (a.same_target) c.edit.cfg_tgt = c.edit.cfg_sub = c.edit.cfg_src;

    RunReport report;
    Latent out;
    if (a.method == "baseline") {
        out = flowedit_run(field, x0, cs, ct, c.schedule, c.edit, &report);
    } else if (a.method == "splitflow") {
        EditConfig cfg = c.edit;
        cfg.aggregation = aggregation_from_string(a.aggregation);
        const auto subs = sub_conditions(a, c, data, src, tgt);
        for (const auto& s : subs) std::cerr << "sub-condition: " << s.label << "\n";
        out = splitflow_run(field, x0, cs, subs, ct, c.schedule, cfg, &report);
    } else {
        throw ConfigError("unknown method '" + a.method + "' (baseline or splitflow)");
    }

    const fs::path opath = a.out.empty() ? c.output_dir / "latents" / "edited.sflt" : fs::path(a.out);
    const fs::path rpath = a.report.empty() ? c.output_dir / "reports" / "run_report.json" : fs::path(a.report);
    save_latent_any(out, opath);
    report.final_latent = opath.string();
    detail::write_text(rpath, report.to_json().dump(2) + "\n");
    std::cerr << report.method << ": N=" << report.num_sub_flows << " evals=" << report.eval_count << "\n";
    std::cout << opath.string() << "\n" << rpath.string() << "\n";
    return kExitOk;
}

int cmd_bench(const std::string& config_path, const std::string& model, const std::vector<int>& sweep,
              const std::vector<std::string>& methods) {
    ExperimentConfig c = load_config(config_path);
    if (!sweep.empty()) c.eta_dec_sweep = sweep;
    if (!methods.empty()) c.methods = methods;
    c.validate();
    const fs::path mpath = model.empty() ? model_path(c) : fs::path(model);
    if (!fs::exists(mpath)) throw ConfigError("model file not found: " + mpath.string() + " (run `splitflow train`)");
    const FieldSpec field = load_field(mpath);

    const BenchResult r = run_bench(c, field);
    const fs::path reports = c.output_dir / "reports", plots = c.output_dir / "plots";
    detail::write_text(reports / "metrics.csv", r.report.to_csv());
    detail::write_text(reports / "metrics.json", r.report.to_json().dump(2) + "\n");
    for (const char* m : {"background_displacement", "energy_distance_to_target", "mse", "psnr"}) {
        detail::write_text(plots / (std::string(m) + ".svg"), metric_plot_svg(r.report, m));
    }
    std::cout << r.report.to_csv();
    std::size_t failed_rows = 0;
    for (const auto& row : r.report.rows) {
        if (row.failures == row.seeds) ++failed_rows;
        if (row.failures) std::cerr << "warning: " << row.method << " eta_dec=" << row.eta_dec << ": " << row.failures
                                    << " failed seed(s): " << row.error << "\n";
    }
    if (failed_rows == r.report.rows.size()) {
        std::cerr << "error: every benchmark run failed\n";
        return kExitNumeric;
    }
    return kExitOk;
}

int cmd_vfa_check(std::size_t trials, const std::vector<std::size_t>& dims, std::size_t kmax, std::uint64_t seed,
                  const std::string& hist_path, std::size_t bins) {
    if (trials == 0) throw ConfigError("--trials must be >= 1");
    if (dims.empty()) throw ConfigError("--dims must list at least one dimension");
    for (auto d : dims) if (d == 0) throw ConfigError("--dims entries must be >= 1");
    if (kmax == 0) throw ConfigError("--kmax must be >= 1");
    if (bins == 0) throw ConfigError("--bins must be >= 1");

    Rng rng(seed);
    std::uniform_int_distribution<std::size_t> pick_k(1, kmax), pick_d(0, dims.size() - 1);
    std::normal_distribution<double> n01;
    std::vector<double> margins;
    margins.reserve(trials);
    double min_margin = INFINITY, min_gibbs = INFINITY, min_jensen = INFINITY;
    for (std::size_t t = 0; t < trials; ++t) {
        const std::size_t K = pick_k(rng), D = dims[pick_d(rng)];
        std::vector<std::vector<double>> g(K, std::vector<double>(D));
        for (auto& v : g) {
            double n = 0.0;
            do {
                n = 0.0;
                for (double& x : v) {
                    x = n01(rng);
                    n += x * x;
                }
            } while (n == 0.0);
            n = std::sqrt(n);
            for (double& x : v) x /= n;
        }
        const VfaMargins m = check_vfa_inequality(g);
        margins.push_back(m.margin);
        min_margin = std::min(min_margin, m.margin);
        min_gibbs = std::min(min_gibbs, m.gibbs);
        min_jensen = std::min(min_jensen, m.jensen);
    }
    const double lo = std::min(0.0, min_margin);
    const double hi = std::max(lo + 1e-12, *std::max_element(margins.begin(), margins.end()));
    std::vector<std::size_t> counts(bins, 0);
    for (double m : margins) {
        auto b = static_cast<std::size_t>((m - lo) / (hi - lo) * static_cast<double>(bins));
        counts[std::min(b, bins - 1)]++;
    }
    std::ostringstream csv;
    csv << "# splitflow vfa-margin-histogram v1; trials=" << trials << " seed=" << seed << "\n";
    csv << "bin_lo,bin_hi,count\n";
    csv.precision(10);
    for (std::size_t b = 0; b < bins; ++b) {
        csv << lo + (hi - lo) * static_cast<double>(b) / static_cast<double>(bins) << ","
            << lo + (hi - lo) * static_cast<double>(b + 1) / static_cast<double>(bins) << "," << counts[b] << "\n";
    }
    if (!hist_path.empty()) detail::write_text(hist_path, csv.str());

    const bool pass = min_margin >= -1e-9 && min_gibbs >= -1e-9 && min_jensen >= -1e-9;
    std::cout.precision(6);
    std::cout << (pass ? "PASS" : "FAIL") << " trials=" << trials << " min_margin=" << min_margin
              << " min_gibbs=" << min_gibbs << " min_jensen=" << min_jensen << "\n";
    return pass ? kExitOk : kExitNumeric;
}

int cmd_decompose(const std::string& src, const std::string& tgt, const std::string& templ,
                  const std::string& backend, bool strict, const LlmEndpointConfig& ep, std::size_t n_max) {
    const PromptPair pair{src, tgt};
    pair.validate();
    DecompositionResult r;
    if (backend == "rule") {
        r = decompose_rule_based(pair, n_max);
    } else if (backend == "llm") {
        std::string why;
        r = decompose_with_fallback(pair, template_from_string(templ), ep, n_max, strict, &why);
        if (!why.empty()) std::cerr << "warning: " << why << "; falling back to the rule-based splitter\n";
    } else {
        throw ConfigError("unknown backend '" + backend + "' (llm or rule)");
    }
    for (std::size_t k = 0; k < r.sub_prompts.size(); ++k) std::cout << k + 1 << ". " << r.sub_prompts[k] << "\n";
    std::cerr << "provenance: " << to_string(r.provenance) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"splitflow: desk-scale split-flow latent editing"};
    app.require_subcommand(1);

    std::string config, model, out;
    auto* ref = app.add_subcommand("reference-config", "Print the documented default experiment config");
    ref->add_option("-o,--out", out, "Write to this file instead of stdout");

    auto* tr = app.add_subcommand("train", "Train the velocity field of an experiment");
    tr->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    tr->add_option("-m,--model", model, "Model output path (default <output_dir>/models/field.sfm)");

    std::uint64_t sample_seed = 0;
    auto* sa = app.add_subcommand("sample", "Draw a source latent for the edit task");
    sa->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    sa->add_option("-s,--seed", sample_seed, "Sample seed");
    sa->add_option("-o,--out", out, "Output latent (.sflt or .json)");

    EditArgs ea;
    auto* ed = app.add_subcommand("edit", "Edit a source latent");
    ed->add_option("-c,--config", ea.config, "Experiment config (JSON)")->required();
    ed->add_option("-s,--source", ea.source, "Source latent (.sflt or .json)")->required();
    ed->add_option("--method", ea.method, "baseline or splitflow")->check(CLI::IsMember({"baseline", "splitflow"}));
    ed->add_option("--aggregation", ea.aggregation, "ltp+vfa, ltp or avg");
    ed->add_option("--decomposer", ea.decomposer, "attribute, rule, llm or manual:<file>");
    ed->add_option("-m,--model", ea.model, "Model file");
    ed->add_option("-o,--out", ea.out, "Edited latent output");
    ed->add_option("--report", ea.report, "Run report output (JSON)");
    ed->add_option("--endpoint", ea.endpoint, "Chat-completion base URL for --decomposer llm");
    ed->add_option("--template", ea.templ, "psi1 or psi2");
    ed->add_flag("--strict", ea.strict, "Fail instead of falling back when the LLM is unavailable");
    ed->add_flag("--same-target", ea.same_target, "Use the source attributes as the target (null edit)");

    std::vector<int> sweep;
    std::vector<std::string> methods;
    auto* be = app.add_subcommand("bench", "Run every enabled method over every seed and write metrics and plots");
    be->add_option("-c,--config", config, "Experiment config (JSON)")->required();
    be->add_option("-m,--model", model, "Model file");
    be->add_option("--eta-dec", sweep, "eta_dec sweep, overrides the config")->delimiter(',');
    be->add_option("--methods", methods, "Methods, overrides the config")->delimiter(',');

    std::size_t trials = 10000, kmax = 8, bins = 40;
    std::vector<std::size_t> dims{2, 16, 128};
    std::uint64_t vfa_seed = 0;
    std::string hist;
    auto* vc = app.add_subcommand("vfa-check", "Check the aggregation inequality on random unit-vector sets");
    vc->add_option("--trials", trials, "Number of random sets");
    vc->add_option("--dims", dims, "Vector dimensions to draw from")->delimiter(',');
    vc->add_option("--kmax", kmax, "Set sizes are drawn from 1..kmax");
    vc->add_option("--seed", vfa_seed, "RNG seed");
    vc->add_option("--hist", hist, "Margin histogram CSV output");
    vc->add_option("--bins", bins, "Histogram bins");

    std::string dsrc, dtgt, templ = "psi1", backend = "llm";
    bool strict = false;
    std::size_t n_max = 3;
    LlmEndpointConfig ep;
    int timeout_ms = 30000;
    auto* de = app.add_subcommand("decompose", "Split a target caption into sub-prompts");
    de->add_option("--src", dsrc, "Source caption")->required();
    de->add_option("--tgt", dtgt, "Target caption")->required();
    de->add_option("--template", templ, "psi1 or psi2")->check(CLI::IsMember({"psi1", "psi2"}));
    de->add_option("--backend", backend, "llm or rule")->check(CLI::IsMember({"llm", "rule"}));
    de->add_flag("--strict", strict, "Fail instead of falling back to the rule-based splitter");
    de->add_option("--endpoint", ep.base_url, "Chat-completion base URL");
    de->add_option("--llm-model", ep.model, "Model name sent to the endpoint");
    de->add_option("--api-key-env", ep.api_key_env, "Environment variable holding the API key");
    de->add_option("--timeout-ms", timeout_ms, "Request timeout");
    de->add_option("--n-max", n_max, "Maximum number of sub-prompts (0 = uncapped)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*ref) return cmd_reference_config(out);
        if (*tr) return cmd_train(config, model);
        if (*sa) return cmd_sample(config, sample_seed, out);
        if (*ed) return cmd_edit(ea);
        if (*be) return cmd_bench(config, model, sweep, methods);
        if (*vc) return cmd_vfa_check(trials, dims, kmax, vfa_seed, hist, bins);
        if (*de) {
            ep.timeout = std::chrono::milliseconds(timeout_ms);
            return cmd_decompose(dsrc, dtgt, templ, backend, strict, ep,
                                 n_max == 0 ? std::numeric_limits<std::size_t>::max() : n_max);
        }
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << " (step " << e.step() << ")\n";
        return kExitNumeric;
    } catch (const NetworkError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitExternal;
    } catch (const ParseError& e) {
        std::cerr << "error: " << e.what() << "\n--- raw reply ---\n" << e.raw() << "\n";
        return kExitExternal;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kExitConfig;
}
