// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

#include "splitflow/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "splitflow/latent_io.hpp"

namespace splitflow {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
    if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

AttributeMap map_from_json(const json& j) {
    AttributeMap m;
    for (auto it = j.begin(); it != j.end(); ++it) m[it.key()] = it.value().get<std::string>();
    return m;
}

}  // namespace

void ExperimentConfig::validate() const {
    scene.validate();
    train.validate();
    schedule.validate();
    edit.validate();
    if (model.hidden.empty()) throw ConfigError("config: model.hidden must list at least one width");
    if (methods.empty()) throw ConfigError("config: at least one method must be enabled");
    for (const auto& m : methods) {
        if (!is_known_method(m)) throw ConfigError("config: unknown method '" + m + "'");
    }
    if (seeds.empty()) throw ConfigError("config: the seed list is empty");
    for (int e : eta_dec_sweep) {
        EditSchedule s = schedule;
        s.eta_dec = e;
        s.validate();
    }
    if (target_samples == 0) throw ConfigError("config: target_samples must be positive");
    SceneDataset data(scene);
    const auto src = resolve_values(data, task.source);
    const auto tgt = resolve_values(data, task.target);
    if (src == tgt) throw ConfigError("config: edit task source and target are identical");
}

ExperimentConfig config_from_json(const json& j, const fs::path& base_dir) {
    ExperimentConfig c = reference_config();
    try {
        if (j.contains("scene_file")) {
            const fs::path p = base_dir / j.at("scene_file").get<std::string>();
            if (!fs::exists(p)) throw ConfigError("config: scene file not found: " + p.string());
            json sj;
            try {
                sj = json::parse(detail::read_text(p));
            } catch (const json::exception& e) {
                throw ConfigError("config: cannot parse scene file " + p.string() + ": " + e.what());
            }
            c.scene = scene_from_json(sj);
        } else if (j.contains("scene")) {
            c.scene = scene_from_json(j.at("scene"));
        }
        if (j.contains("model")) {
            const auto& m = j.at("model");
            read_opt(m, "hidden", c.model.hidden);
            if (m.contains("activation")) c.model.activation = activation_from_string(m.at("activation"));
            read_opt(m, "init_seed", c.model.init_seed);
        }
        if (j.contains("train")) {
            const auto& t = j.at("train");
            read_opt(t, "batch_size", c.train.batch_size);
            read_opt(t, "steps", c.train.steps);
            read_opt(t, "learning_rate", c.train.learning_rate);
            read_opt(t, "beta1", c.train.beta1);
            read_opt(t, "beta2", c.train.beta2);
            read_opt(t, "adam_eps", c.train.adam_eps);
            read_opt(t, "cond_dropout", c.train.cond_dropout);
            read_opt(t, "seed", c.train.seed);
            read_opt(t, "cosine_decay", c.train.cosine_decay);
        }
        if (j.contains("schedule")) {
            const auto& s = j.at("schedule");
            read_opt(s, "T", c.schedule.total_steps);
            read_opt(s, "eta_max", c.schedule.eta_max);
            read_opt(s, "eta_dec", c.schedule.eta_dec);
        }
        if (j.contains("edit")) {
            const auto& e = j.at("edit");
            read_opt(e, "cfg_src", c.edit.cfg_src);
            read_opt(e, "cfg_tgt", c.edit.cfg_tgt);
            c.edit.cfg_sub = c.edit.cfg_tgt;
            read_opt(e, "cfg_sub", c.edit.cfg_sub);
            read_opt(e, "fidelity_enhanced", c.edit.fidelity_enhanced);
            read_opt(e, "share_eps_across_flows", c.edit.share_eps_across_flows);
            read_opt(e, "max_sub_prompts", c.edit.max_sub_prompts);
            read_opt(e, "seed", c.edit.seed);
            read_opt(e, "tol", c.edit.tol);
        }
        if (j.contains("task")) {
            c.task.source = map_from_json(j.at("task").at("source"));
            c.task.target = map_from_json(j.at("task").at("target"));
        }
        read_opt(j, "methods", c.methods);
        if (j.contains("seeds")) {
            const auto& s = j.at("seeds");
            if (s.is_array()) {
                c.seeds = s.get<std::vector<std::uint64_t>>();
            } else {
                const auto count = s.at("count").get<std::size_t>();
                const auto first = s.value("first", std::uint64_t{0});
                c.seeds.clear();
                for (std::size_t k = 0; k < count; ++k) c.seeds.push_back(first + k);
            }
        }
        read_opt(j, "eta_dec_sweep", c.eta_dec_sweep);
        read_opt(j, "target_samples", c.target_samples);
        if (j.contains("output_dir")) {
            const fs::path out = j.at("output_dir").get<std::string>();
            c.output_dir = out.is_absolute() ? out : (base_dir / out).lexically_normal();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

json config_to_json(const ExperimentConfig& c) {
    return {{"scene", scene_to_json(c.scene)},
            {"model",
             {{"hidden", c.model.hidden},
              {"activation", to_string(c.model.activation)},
              {"init_seed", c.model.init_seed}}},
            {"train",
             {{"batch_size", c.train.batch_size},
              {"steps", c.train.steps},
              {"learning_rate", c.train.learning_rate},
              {"beta1", c.train.beta1},
              {"beta2", c.train.beta2},
              {"adam_eps", c.train.adam_eps},
              {"cond_dropout", c.train.cond_dropout},
              {"seed", c.train.seed},
              {"cosine_decay", c.train.cosine_decay}}},
            {"schedule",
             {{"T", c.schedule.total_steps}, {"eta_max", c.schedule.eta_max}, {"eta_dec", c.schedule.eta_dec}}},
            {"edit",
             {{"cfg_src", c.edit.cfg_src},
              {"cfg_tgt", c.edit.cfg_tgt},
              {"cfg_sub", c.edit.cfg_sub},
              {"fidelity_enhanced", c.edit.fidelity_enhanced},
              {"share_eps_across_flows", c.edit.share_eps_across_flows},
              {"max_sub_prompts", c.edit.max_sub_prompts},
              {"seed", c.edit.seed},
              {"tol", c.edit.tol}}},
            {"task", {{"source", c.task.source}, {"target", c.task.target}}},
            {"methods", c.methods},
            {"seeds", c.seeds},
            {"eta_dec_sweep", c.eta_dec_sweep},
            {"target_samples", c.target_samples},
            {"output_dir", c.output_dir.string()}};
}

ExperimentConfig load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    json j;
    try {
        j = json::parse(detail::read_text(path));
    } catch (const json::exception& e) {
        throw ConfigError("cannot parse config " + path.string() + ": " + e.what());
    }
    return config_from_json(j, path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

ExperimentConfig reference_config() {
    ExperimentConfig c;
    SceneDescriptor& s = c.scene;
    // Three attributes on their own locations, two background locations.
    s.shape = {3, 1, 5};
    s.attributes = {
        {"color", {"red", "blue"}, {{1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}}, 0.1, {{0, 0}}},
        {"shape", {"round", "square"}, {{0.0, 0.0, 1.0}, {1.0, 1.0, 0.0}}, 0.1, {{0, 1}}},
        {"size", {"small", "large"}, {{0.5, 0.0, 0.5}, {0.0, 0.5, 1.0}}, 0.1, {{0, 2}}},
    };
    s.background_mean = {0.5, 0.5, 0.5};
    s.background_stddev = 0.1;
    s.data_range = 2.0;

    c.model.hidden = {64, 64, 64};
    c.train.batch_size = 256;
    c.train.steps = 8000;
    c.train.learning_rate = 2e-3;
    c.train.cosine_decay = true;
    c.train.seed = 3;
    c.edit.seed = 1234;
    c.task.source = {{"color", "red"}, {"shape", "round"}, {"size", "small"}};
    c.task.target = {{"color", "blue"}, {"shape", "square"}, {"size", "large"}};
    for (std::uint64_t k = 0; k < 50; ++k) c.seeds.push_back(k);
    return c;
}

SceneDescriptor two_cluster_scene() {
    SceneDescriptor s;
    s.shape = {2, 1, 1};
    s.attributes = {{"cluster", {"left", "right"}, {{-1.5, -0.5}, {1.5, 0.5}}, 0.25, {{0, 0}}}};
    s.background_mean = {0.0, 0.0};
    s.data_range = 4.0;
    return s;
}

std::string config_fingerprint(const ExperimentConfig& c) {
    json j = config_to_json(c);
    j.erase("output_dir");
    const std::string text = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

AttributeValues resolve_values(const SceneDataset& data, const AttributeMap& m) {
    const auto& attrs = data.descriptor().attributes;
    AttributeValues v(attrs.size(), 0);
    std::set<std::string> seen;
    for (std::size_t a = 0; a < attrs.size(); ++a) {
        const auto it = m.find(attrs[a].name);
        if (it == m.end()) throw ConfigError("edit task: no value given for attribute '" + attrs[a].name + "'");
        const auto& vals = attrs[a].values;
        const auto pos = std::find(vals.begin(), vals.end(), it->second);
        if (pos == vals.end()) {
            throw ConfigError("edit task: '" + it->second + "' is not a value of attribute '" + attrs[a].name + "'");
        }
        v[a] = static_cast<std::size_t>(pos - vals.begin());
        seen.insert(it->first);
    }
    for (const auto& [k, _] : m) {
        if (!seen.count(k)) throw ConfigError("edit task: unknown attribute '" + k + "'");
    }
    return v;
}

std::string caption(const SceneDataset& data, const AttributeValues& values) {
    const auto& attrs = data.descriptor().attributes;
    std::string out = "object";
    for (std::size_t a = 0; a < attrs.size(); ++a) out += ", " + attrs[a].name + " " + attrs[a].values.at(values[a]);
    return out;
}

namespace {

std::set<std::string> words_of(const std::string& text) {
    std::set<std::string> out;
    std::string cur;
    for (char ch : text + " ") {
        if (std::isalnum(static_cast<unsigned char>(ch)) || ch == '_' || ch == '-') {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
        } else if (!cur.empty()) {
            out.insert(cur);
            cur.clear();
        }
    }
    return out;
}

std::string lowercase(std::string s) {
    for (char& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
}

}  // namespace

std::vector<Condition> conditions_from_text(const SceneDataset& data, const AttributeValues& src,
                                            const AttributeValues& tgt, const std::vector<std::string>& texts) {
    const auto& attrs = data.descriptor().attributes;
    std::vector<Condition> out;
    for (const auto& t : texts) {
        const auto words = words_of(t);
        AttributeValues v = src;
        bool any = false;
        for (std::size_t a = 0; a < attrs.size(); ++a) {
            if (src[a] == tgt[a]) continue;
            if (words.count(lowercase(attrs[a].values[tgt[a]]))) {
                v[a] = tgt[a];
                any = true;
            }
        }
        if (any) out.push_back(data.condition(v));
    }
    return out;
}

std::vector<Condition> conditions_from_manual(const SceneDataset& data, const AttributeValues& src,
                                              const std::string& text) {
    const auto& attrs = data.descriptor().attributes;
    std::vector<Condition> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto b = line.find_first_not_of(" \t\r");
        if (b == std::string::npos || line[b] == '#') continue;
        AttributeValues v = src;
        std::istringstream items(line);
        std::string item;
        while (std::getline(items, item, ',')) {
            const auto eq = item.find('=');
            if (eq == std::string::npos) {
                throw ConfigError("manual decomposition line " + std::to_string(lineno) + ": expected attr=value");
            }
            auto trim = [](std::string s) {
                const auto x = s.find_first_not_of(" \t\r"), y = s.find_last_not_of(" \t\r");
                return x == std::string::npos ? std::string() : s.substr(x, y - x + 1);
            };
            const std::string key = trim(item.substr(0, eq)), val = trim(item.substr(eq + 1));
            bool found = false;
            for (std::size_t a = 0; a < attrs.size() && !found; ++a) {
                if (attrs[a].name != key) continue;
                const auto pos = std::find(attrs[a].values.begin(), attrs[a].values.end(), val);
                if (pos == attrs[a].values.end()) {
                    throw ConfigError("manual decomposition line " + std::to_string(lineno) + ": unknown value '" +
                                      val + "' for '" + key + "'");
                }
                v[a] = static_cast<std::size_t>(pos - attrs[a].values.begin());
                found = true;
            }
            if (!found) {
                throw ConfigError("manual decomposition line " + std::to_string(lineno) + ": unknown attribute '" +
                                  key + "'");
            }
        }
        out.push_back(data.condition(v));
    }
    if (out.empty()) throw ConfigError("manual decomposition file lists no sub-prompts");
    return out;
}

FieldSpec make_model(const ExperimentConfig& c) {
    return make_mlp_field(c.scene.shape, c.scene.cond_dim(), c.model.hidden, c.model.activation, c.model.init_seed);
}

bool is_known_method(const std::string& m) {
    return m == "baseline" || m == "avg" || m == "ltp" || m == "ltp+vfa";
}

namespace {

struct Job {
    std::size_t row;
    std::size_t seed_index;
};

double finite_mean(const std::vector<double>& v) {
    double s = 0.0;
    std::size_t n = 0;
    for (double x : v) {
        if (std::isfinite(x)) {
            s += x;
            ++n;
        }
    }
    return n ? s / static_cast<double>(n) : std::numeric_limits<double>::infinity();
}

}  // namespace

BenchResult run_bench(const ExperimentConfig& c, const FieldSpec& field) {
    c.validate();
    const SceneDataset data(c.scene);
    const AttributeValues src = resolve_values(data, c.task.source);
    const AttributeValues tgt = resolve_values(data, c.task.target);
    const Condition cond_src = data.condition(src);
    const Condition cond_tgt = data.condition(tgt);
    const auto dec = decompose_attributes(cond_src, cond_tgt, data.block_layout(), c.edit.max_sub_prompts);
    const ChannelMap mask = data.edit_mask(src, tgt);

    const std::vector<int> sweep = c.eta_dec_sweep.empty() ? std::vector<int>{c.schedule.eta_dec} : c.eta_dec_sweep;
    struct RowSpec {
        std::string method;
        int eta_dec;
    };
    std::vector<RowSpec> rows;
    for (const auto& m : c.methods)
        for (int e : sweep) rows.push_back({m, e});

    BenchResult result;
    result.outcomes.assign(rows.size(), std::vector<SeedOutcome>(c.seeds.size()));
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t s = 0; s < c.seeds.size(); ++s) jobs.push_back({r, s});

    const auto n_jobs = static_cast<std::ptrdiff_t>(jobs.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t k = 0; k < n_jobs; ++k) {
        const Job job = jobs[static_cast<std::size_t>(k)];
        const RowSpec& row = rows[job.row];
        SeedOutcome& o = result.outcomes[job.row][job.seed_index];
        o.seed = c.seeds[job.seed_index];
        Rng rng(derive_seed(o.seed, 0x5eed));
        o.x0_src = data.sample(src, rng);
        EditSchedule schedule = c.schedule;
        schedule.eta_dec = row.eta_dec;
        EditConfig cfg = c.edit;
        cfg.seed = derive_seed(c.edit.seed, o.seed);
        try {
            RunReport rep;
            if (row.method == "baseline") {
                o.edited = flowedit_run(field, o.x0_src, cond_src, cond_tgt, schedule, cfg, &rep);
            } else {
                cfg.aggregation = aggregation_from_string(row.method);
                o.edited = splitflow_run(field, o.x0_src, cond_src, dec.sub_conditions, cond_tgt, schedule, cfg, &rep);
            }
            o.eval_count = rep.eval_count;
            o.background_displacement = background_displacement(o.x0_src, o.edited, mask).value;
            o.ok = true;
        } catch (const Error& e) {
            o.error = e.what();
        }
    }

    Rng trng(derive_seed(c.edit.seed, 0x7a59e7));
    std::vector<Latent> target_cloud;
    for (std::size_t k = 0; k < c.target_samples; ++k) target_cloud.push_back(data.sample(tgt, trng));

    result.report.config_fingerprint = config_fingerprint(c);
    result.report.seeds = c.seeds;
    const bool with_ssim = ssim_applicable(c.scene.shape);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        MetricRow m;
        m.method = rows[r].method;
        m.eta_dec = rows[r].eta_dec;
        m.seeds = c.seeds.size();
        std::vector<double> mses, psnrs, ssims, bgs, counts;
        std::vector<Latent> edited;
        for (const auto& o : result.outcomes[r]) {
            if (!o.ok) {
                ++m.failures;
                if (m.error.empty()) m.error = o.error;
                continue;
            }
            mses.push_back(mse(o.x0_src, o.edited));
            psnrs.push_back(psnr(o.x0_src, o.edited, c.scene.data_range));
            if (with_ssim) ssims.push_back(ssim(o.x0_src, o.edited, SsimParams{7, 1.5, c.scene.data_range}));
            bgs.push_back(o.background_displacement);
            counts.push_back(static_cast<double>(o.eval_count));
            edited.push_back(o.edited);
        }
        if (!edited.empty()) {
            m.mse = finite_mean(mses);
            m.psnr = finite_mean(psnrs);
            if (with_ssim) m.ssim = finite_mean(ssims);
            m.background_displacement = finite_mean(bgs);
            m.step_count = finite_mean(counts);
            m.energy_distance_to_target = energy_distance(edited, target_cloud);
        }
        result.report.rows.push_back(std::move(m));
    }
    return result;
}

namespace {

double metric_value(const MetricRow& r, const std::string& metric) {
    if (metric == "mse") return r.mse;
    if (metric == "psnr") return r.psnr;
    if (metric == "ssim") return r.ssim.value_or(std::numeric_limits<double>::quiet_NaN());
    if (metric == "energy_distance_to_target") return r.energy_distance_to_target;
    if (metric == "background_displacement") return r.background_displacement;
    if (metric == "step_count") return r.step_count;
    throw ConfigError("plot: unknown metric '" + metric + "'");
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

}  // namespace

std::string metric_plot_svg(const MetricReport& report, const std::string& metric) {
    constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
    std::map<std::string, std::vector<std::pair<double, double>>> series;
    std::vector<std::string> order;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& r : report.rows) {
        const double y = metric_value(r, metric);
        if (!series.count(r.method)) order.push_back(r.method);
        auto& s = series[r.method];
        if (!std::isfinite(y) || r.failures == r.seeds) continue;
        s.emplace_back(r.eta_dec, y);
        xmin = std::min(xmin, double(r.eta_dec));
        xmax = std::max(xmax, double(r.eta_dec));
        ymin = std::min(ymin, y);
        ymax = std::max(ymax, y);
    }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmin -= 1, xmax += 1;
    if (ymax == ymin) {
        const double pad = std::max(std::abs(ymin) * 0.05, 1e-9);
        ymin -= pad, ymax += pad;
    }
    // eta_dec decreases along the x axis, as in a schedule read left to right.
    auto px = [&](double x) { return L + (xmax - x) / (xmax - xmin) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - ymin) / (ymax - ymin) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << metric
       << " vs eta_dec</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    std::set<int> xs;
    for (const auto& r : report.rows) xs.insert(r.eta_dec);
    for (int x : xs) {
        os << "<text x=\"" << px(x) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\">" << x << "</text>\n";
    }
    for (int k = 0; k <= 4; ++k) {
        const double y = ymin + (ymax - ymin) * k / 4.0;
        os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">eta_dec</text>\n";
    for (std::size_t k = 0; k < order.size(); ++k) {
        const auto& pts = series[order[k]];
        const char* col = colors[k % 6];
        if (pts.size() > 1) {
            os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
            for (const auto& [x, y] : pts) os << px(x) << "," << py(y) << " ";
            os << "\"/>\n";
        }
        for (const auto& [x, y] : pts) {
            os << "<circle cx=\"" << px(x) << "\" cy=\"" << py(y) << "\" r=\"3.5\" fill=\"" << col << "\"/>\n";
        }
        const double ly = T + 10 + 18.0 * static_cast<double>(k);
        os << "<rect x=\"" << W - R + 14 << "\" y=\"" << ly - 9 << "\" width=\"12\" height=\"12\" fill=\"" << col
           << "\"/>\n";
        os << "<text x=\"" << W - R + 32 << "\" y=\"" << ly + 1 << "\">" << order[k] << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

}  // namespace splitflow
