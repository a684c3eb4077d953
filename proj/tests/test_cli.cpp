#include "support.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kTiny =
    " --set gen.stacks_per_stain=2 gen.planes_per_stack=16 gen.image_size=32"
    " train.stage1_epochs=1 train.stage2_epochs=1 train.baseline_epochs=1 train.batch_size=16 train.test_fraction=0.5";

int run(const std::string& args) {
    const std::string cmd = std::string(STAINFOCUS_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

void check_metrics_schema(const fs::path& p) {
    REQUIRE(fs::exists(p));
    const auto j = nlohmann::json::parse(slurp(p));
    for (const char* k : {"accuracy", "plcc", "srcc", "mae", "count", "per_stain", "config_digest"}) CHECK(j.contains(k));
    CHECK(j["accuracy"].get<double>() >= 0.0);
    CHECK(j["accuracy"].get<double>() <= 1.0);
    CHECK(j["mae"].get<double>() >= 0.0);
}

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("pipeline: gen-data, train all, eval, ablate, fewshot") {
        const fs::path out = sftest::temp_dir("cli");
        const std::string o = " -o " + out.string();
        REQUIRE(run("gen-data" + o + " -n g1 -s 3" + kTiny) == 0);
        REQUIRE(run("gen-data" + o + " -n g2 -s 3" + kTiny) == 0);
        CHECK(slurp(out / "g1/dataset_hash.txt") == slurp(out / "g2/dataset_hash.txt"));
        CHECK(fs::exists(out / "g1/config.resolved"));
        const auto info = nlohmann::json::parse(slurp(out / "g1/run_info.json"));
        CHECK(info["seed"] == 3);
        CHECK(info["source_digest"].get<std::string>().size() == 64);

        const std::string data = " -m " + (out / "g1/data/manifest.csv").string();
        CHECK(run("analyze" + o + " -n an" + data + kTiny) == 0);
        CHECK(fs::exists(out / "an/report.json"));

        REQUIRE(run("train --stage all --variant E" + o + " -n tr -s 3" + data + kTiny) == 0);
        check_metrics_schema(out / "tr/metrics.json");
        CHECK(fs::exists(out / "tr/stage1.ckpt"));
        CHECK(fs::exists(out / "tr/train_log.jsonl"));

        const std::string test_manifest = (out / "tr/test_manifest.csv").string();
        REQUIRE(run("eval --checkpoint " + (out / "tr/model.ckpt").string() + " -m " + test_manifest + o + " -n ev") == 0);
        const auto a = nlohmann::json::parse(slurp(out / "tr/metrics.json"));
        const auto b = nlohmann::json::parse(slurp(out / "ev/metrics.json"));
        CHECK(a.dump() == b.dump());

        REQUIRE(run("train --stage 2 --variant D --checkpoint " + (out / "tr/stage1.ckpt").string() + o + " -n d2 -s 3" + data +
                    kTiny) == 0);
        check_metrics_schema(out / "d2/metrics.json");

        REQUIRE(run("ablate --variants A,E --seeds 3" + o + " -n ab" + data + kTiny) == 0);
        const auto table = nlohmann::json::parse(slurp(out / "ab/ablation_table.json"));
        REQUIRE(table["rows"].size() == 2);
        for (const auto& row : table["rows"]) {
            CHECK(row["seeds"] == 3);
            for (const char* m : {"accuracy", "plcc", "srcc", "mae"}) {
                CHECK(row[m].contains("mean"));
                CHECK(row[m].contains("std"));
            }
        }
        CHECK(fs::exists(out / "ab/ablation_table.csv"));

        CHECK(run("fewshot-sample -k 1" + data + o + " -n fs") == 3);  // 16 planes do not cover every rank
        CHECK(run("train --baseline OE" + o + " -n oe" + data + kTiny) == 0);
        check_metrics_schema(out / "oe/metrics.json");
    }

    TEST_CASE("error exit codes") {
        const fs::path out = sftest::temp_dir("cli_err");
        const std::string o = " -o " + out.string();
        CHECK(run("train --stage 2 --variant E" + o + " -m nowhere.csv") == 2);
        CHECK(run("train --stage 1 --variant A" + o + " -m nowhere.csv") == 2);
        CHECK(run("gen-data" + o + " --set train.nonsense=1") == 2);
        CHECK(run("") == 2);
        CHECK(run("analyze" + o + " -m " + (out / "missing.csv").string()) != 0);
        std::ofstream(out / "bad.csv") << "image_path,stain\nx\n";
        CHECK(run("analyze" + o + " -m " + (out / "bad.csv").string()) == 4);  // no sidecar: I/O failure
        std::ofstream(out / "bad.meta") << "num_levels = 10\nstains = a\n";
        CHECK(run("analyze" + o + " -m " + (out / "bad.csv").string()) == 3);
    }
}
