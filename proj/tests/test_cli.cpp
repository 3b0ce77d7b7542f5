// Copyright (C) 2026 The splitflow-desk Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end runs of the splitflow binary.

#include <doctest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "splitflow/experiment.hpp"
#include "splitflow/latent_io.hpp"
#include "stub_llm.hpp"

using namespace splitflow;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

class Workdir {
public:
    explicit Workdir(const std::string& name) : dir_(fs::temp_directory_path() / ("splitflow_cli_" + name)) {
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    ~Workdir() { fs::remove_all(dir_); }
    const fs::path& path() const { return dir_; }

    Run run(const std::string& args) const {
        const fs::path o = dir_ / "stdout.txt", e = dir_ / "stderr.txt";
        const std::string cmd =
            std::string(SPLITFLOW_CLI_PATH) + " " + args + " >" + o.string() + " 2>" + e.string();
        const int raw = std::system(cmd.c_str());
        Run r;
        r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
        r.out = slurp(o);
        r.err = slurp(e);
        return r;
    }

    // Small but complete experiment: reference scene, short training.
    fs::path write_config(const std::string& out_dir = "out") const {
        ExperimentConfig c = reference_config();
        c.train.steps = 150;
        c.train.batch_size = 32;
        c.model.hidden = {16};
        c.seeds = {0, 1};
        c.target_samples = 10;
        nlohmann::json j = config_to_json(c);
        j["output_dir"] = out_dir;
        const fs::path p = dir_ / "config.json";
        std::ofstream(p) << j.dump(2);
        return p;
    }

private:
    fs::path dir_;
};

}  // namespace

TEST_CASE("cli: usage and configuration errors exit with 2") {
    Workdir w("usage");
    CHECK(w.run("").code == 2);
    CHECK(w.run("frobnicate").code == 2);
    CHECK(w.run("train").code == 2);  // missing --config
    CHECK(w.run("--help").code == 0);

    nlohmann::json j = config_to_json(reference_config());
    j.erase("scene");
    j["scene_file"] = "no/such/scene.json";
    std::ofstream(w.path() / "bad.json") << j.dump();
    const Run r = w.run("train -c " + (w.path() / "bad.json").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("scene.json") != std::string::npos);

    CHECK(w.run("vfa-check --trials 0").code == 2);
}

TEST_CASE("cli: reference-config round trips") {
    Workdir w("ref");
    const Run r = w.run("reference-config");
    REQUIRE(r.code == 0);
    CHECK(config_fingerprint(config_from_json(nlohmann::json::parse(r.out))) == config_fingerprint(reference_config()));
}

TEST_CASE("cli: train, sample, edit and bench") {
    Workdir w("pipeline");
    const fs::path cfg = w.write_config();
    const fs::path out = w.path() / "out";

    REQUIRE(w.run("train -c " + cfg.string()).code == 0);
    const std::string model = slurp(out / "models" / "field.sfm");
    CHECK(fs::exists(out / "reports" / "loss.csv"));
    // training is byte-for-byte reproducible
    REQUIRE(w.run("train -c " + cfg.string() + " -m " + (w.path() / "again.sfm").string()).code == 0);
    CHECK(slurp(w.path() / "again.sfm") == model);

    const fs::path src = w.path() / "src.json";
    REQUIRE(w.run("sample -c " + cfg.string() + " -s 3 -o " + src.string()).code == 0);
    const Latent x0 = load_latent_any(src);
    CHECK(x0.shape() == Shape{3, 1, 5});

    SUBCASE("splitflow edit with attribute sub-conditions") {
        const Run r = w.run("edit -c " + cfg.string() + " -s " + src.string());
        REQUIRE(r.code == 0);
        CHECK(r.err.find("N=3 evals=48") != std::string::npos);
        const auto rep = nlohmann::json::parse(slurp(out / "reports" / "run_report.json"));
        CHECK(rep.at("eval_count") == 48);
        CHECK(fs::exists(out / "latents" / "edited.sflt"));
    }
    SUBCASE("baseline edit") {
        const Run r = w.run("edit --method baseline -c " + cfg.string() + " -s " + src.string());
        REQUIRE(r.code == 0);
        CHECK(r.err.find("evals=33") != std::string::npos);
    }
    SUBCASE("null edit returns the source") {
        const fs::path e = w.path() / "null.json";
        REQUIRE(w.run("edit --method baseline --same-target -c " + cfg.string() + " -s " + src.string() + " -o " +
                      e.string())
                    .code == 0);
        const Latent back = load_latent_any(e);
        for (std::size_t i = 0; i < x0.size(); ++i) CHECK(back[i] == doctest::Approx(x0[i]).epsilon(1e-9));
    }
    SUBCASE("rule decomposer maps captions onto attributes") {
        const Run r = w.run("edit --decomposer rule -c " + cfg.string() + " -s " + src.string());
        REQUIRE(r.code == 0);
        CHECK(r.err.find("sub-condition:") != std::string::npos);
    }
    SUBCASE("strict llm decomposer with an unreachable endpoint exits with 4") {
        const std::string ep = "http://127.0.0.1:" + std::to_string(sftest::dead_port()) + "/v1";
        const Run r = w.run("edit --decomposer llm --strict --endpoint " + ep + " -c " + cfg.string() + " -s " +
                            src.string());
        CHECK(r.code == 4);
        // without --strict the rule-based splitter takes over
        const Run soft = w.run("edit --decomposer llm --endpoint " + ep + " -c " + cfg.string() + " -s " + src.string());
        CHECK(soft.code == 0);
        CHECK(soft.err.find("rule-based") != std::string::npos);
    }
    SUBCASE("missing source latent") {
        CHECK(w.run("edit -c " + cfg.string() + " -s " + (w.path() / "nope.sflt").string()).code == 2);
    }
    SUBCASE("bench writes metrics and plots") {
        const Run r = w.run("bench -c " + cfg.string());
        REQUIRE(r.code == 0);
        CHECK(r.out.find("baseline,") != std::string::npos);
        CHECK(r.out.find("ltp+vfa,") != std::string::npos);
        CHECK(fs::exists(out / "reports" / "metrics.csv"));
        CHECK(fs::exists(out / "reports" / "metrics.json"));
        CHECK(fs::exists(out / "plots" / "background_displacement.svg"));
        const Run again = w.run("bench -c " + cfg.string());
        CHECK(again.out == r.out);
        const Run sweep = w.run("bench -c " + cfg.string() + " --methods ltp+vfa --eta-dec 30,28");
        REQUIRE(sweep.code == 0);
        CHECK(sweep.out.find("ltp+vfa,30,") != std::string::npos);
        CHECK(sweep.out.find("ltp+vfa,28,") != std::string::npos);
    }
}

TEST_CASE("cli: vfa-check") {
    Workdir w("vfa");
    const Run r = w.run("vfa-check --trials 2000 --dims 2,16,128 --kmax 8 --hist " + (w.path() / "h.csv").string());
    CHECK(r.code == 0);
    CHECK(r.out.rfind("PASS", 0) == 0);
    const std::string hist = slurp(w.path() / "h.csv");
    CHECK(hist.find("bin_lo,bin_hi,count") != std::string::npos);

    const Run one = w.run("vfa-check --trials 5 --kmax 1");
    CHECK(one.code == 0);
    CHECK(one.out.find("min_margin=0 ") != std::string::npos);
}

TEST_CASE("cli: decompose") {
    Workdir w("decompose");
    const Run rule = w.run("decompose --backend rule --src cat --tgt dog");
    CHECK(rule.code == 0);
    CHECK(rule.out == "1. dog\n");
    CHECK(rule.err.find("provenance: rule") != std::string::npos);

    sftest::StubLlm stub;
    stub.reply_with(std::string("1. ") + sftest::kShepherdSubCaptions[0] + "\n2. " + sftest::kShepherdSubCaptions[1] +
                    "\n3. " + sftest::kShepherdSubCaptions[2]);
    const std::string args = std::string("decompose --src \"") + sftest::kShepherdSource + "\" --tgt \"" +
                             sftest::kShepherdTarget + "\" --endpoint " + stub.base_url();
    const Run llm = w.run(args);
    CHECK(llm.code == 0);
    CHECK(llm.out == std::string("1. ") + sftest::kShepherdSubCaptions[0] + "\n2. " + sftest::kShepherdSubCaptions[1] +
                         "\n3. " + sftest::kShepherdSubCaptions[2] + "\n");

    stub.reply_with("Sure! The dog is happy.");
    CHECK(w.run(args + " --strict").code == 4);
    const Run fallback = w.run(args);
    CHECK(fallback.code == 0);
    CHECK(fallback.err.find("provenance: rule") != std::string::npos);
}
