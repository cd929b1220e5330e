#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "segsim/pipeline.hpp"
#include "test_util.hpp"

using namespace segsim;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    REQUIRE_MESSAGE(is.good(), "missing ", path);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

pipeline::RunConfig demo_config() {
    pipeline::RunConfig c;
    c.seed = 20260809;
    c.n_pairs = 5;
    c.n_distractors = 15;
    c.n_train_pairs = 0; // baselines only in the smoke tests
    c.method = "dp";
    c.min_len = 64;
    c.max_len = 96;
    c.threads = 2;
    return c;
}

} // namespace

TEST_CASE("config: json round trip, env override, hash stability") {
    pipeline::RunConfig c;
    c.topn = 33;
    c.method = "tn";
    nlohmann::json j = c.to_json();
    pipeline::RunConfig d = pipeline::RunConfig::from_json(j);
    CHECK(d.topn == 33);
    CHECK(d.method == "tn");
    CHECK(d.hash() == c.hash());

    setenv("SEGSIM_TOPN", "77", 1);
    d.apply_env();
    unsetenv("SEGSIM_TOPN");
    CHECK(d.topn == 77);
    CHECK(d.hash() != c.hash());
}

TEST_CASE("run pipeline: demo config completes, report schema, verify chain") {
    pipeline::RunConfig c = demo_config();
    std::string dir = testutil::temp_dir("run_demo");
    REQUIRE(pipeline::run_pipeline(c, dir) == 0);

    nlohmann::json report = nlohmann::json::parse(slurp(dir + "/report.json"));
    CHECK(report.contains("config"));
    CHECK(report.contains("config_hash"));
    CHECK(report.contains("eval"));
    CHECK(report.contains("timings"));
    CHECK(report["eval"].contains("f1"));
    CHECK(report["eval"].contains("map"));
    CHECK(report["eval"].contains("pr_points"));
    CHECK(report["eval"]["f1"].get<double>() >= 0.0);
    CHECK(report["eval"]["map"].get<double>() >= 0.0);

    std::string msg;
    CHECK_MESSAGE(pipeline::verify_run_dir(dir, &msg), msg);

    // tampering breaks the chain
    {
        std::ofstream os(dir + "/labels.jsonl", std::ios::binary | std::ios::app);
        os << "{\"video_id\":\"tampered\"}\n";
    }
    CHECK_FALSE(pipeline::verify_run_dir(dir, &msg));
}

TEST_CASE("run pipeline: hough and spd emit the same report schema") {
    pipeline::RunConfig c = demo_config();
    c.method = "hough";
    std::string d1 = testutil::temp_dir("run_hough");
    REQUIRE(pipeline::run_pipeline(c, d1) == 0);
    nlohmann::json r1 = nlohmann::json::parse(slurp(d1 + "/report.json"));

    pipeline::RunConfig cs = demo_config();
    cs.method = "spd";
    cs.n_train_pairs = 2;
    cs.train_epochs = 1;
    cs.n_pairs = 2;
    cs.n_distractors = 2;
    std::string d2 = testutil::temp_dir("run_spd");
    REQUIRE(pipeline::run_pipeline(cs, d2) == 0);
    nlohmann::json r2 = nlohmann::json::parse(slurp(d2 + "/report.json"));

    for (const char* key : {"config", "config_hash", "stages", "eval", "timings"}) {
        CHECK(r1.contains(key));
        CHECK(r2.contains(key));
    }
    for (const char* key : {"precision", "recall", "f1", "macro_f1", "map"}) {
        CHECK(r1["eval"].contains(key));
        CHECK(r2["eval"].contains(key));
    }
}

TEST_CASE("determinism: same seed twice gives identical reports modulo timings") {
    pipeline::RunConfig c = demo_config();
    c.n_pairs = 3;
    c.n_distractors = 5;
    std::string d1 = testutil::temp_dir("det1");
    std::string d2 = testutil::temp_dir("det2");
    REQUIRE(pipeline::run_pipeline(c, d1) == 0);
    REQUIRE(pipeline::run_pipeline(c, d2) == 0);
    nlohmann::json r1 = pipeline::strip_timings(nlohmann::json::parse(slurp(d1 + "/report.json")));
    nlohmann::json r2 = pipeline::strip_timings(nlohmann::json::parse(slurp(d2 + "/report.json")));
    CHECK(r1.dump() == r2.dump());
    // binary artifacts byte-identical as well
    CHECK(pipeline::file_digest(d1 + "/queries.sgaf") == pipeline::file_digest(d2 + "/queries.sgaf"));
    CHECK(pipeline::file_digest(d1 + "/index.sgix") == pipeline::file_digest(d2 + "/index.sgix"));
    CHECK(pipeline::file_digest(d1 + "/matches.jsonl") ==
          pipeline::file_digest(d2 + "/matches.jsonl"));
}

TEST_CASE("matches jsonl round trip") {
    eval::SegmentSet set;
    set[{"q1", "r1"}] = {{0.5, 2.5, 1.0, 3.0, 0.75}};
    set[{"q2", "r2"}] = {{1.0, 4.0, 0.0, 3.0, 0.5}, {5.0, 6.0, 5.5, 6.5, 0.25}};
    std::string text = pipeline::matches_to_jsonl(set, "dp");
    eval::SegmentSet back = pipeline::matches_from_jsonl(text);
    REQUIRE(back.size() == 2);
    REQUIRE(back.at({"q2", "r2"}).size() == 2);
    CHECK(back.at({"q1", "r1"})[0].score == 0.75);
    CHECK(back.at({"q1", "r1"})[0].q_end == 2.5);
}

TEST_CASE("select_keyframes honors threshold and uniform interval") {
    std::vector<double> scores{0.9, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.1, 0.95};
    std::vector<int> keys = pipeline::select_keyframes(scores, 0.5, 4);
    // quantized {0, 9}; window [4,8) is empty so its first frame is added,
    // window [8,10) already holds frame 9
    CHECK(keys == std::vector<int>{0, 4, 9});
}

TEST_CASE("cli binary smoke: synth -> label -> index -> run -> verify" *
          doctest::timeout(300)) {
    const char* cli = std::getenv("SEGSIM_CLI_PATH");
    if (!cli) {
        MESSAGE("SEGSIM_CLI_PATH not set; CLI smoke runs only under ctest");
        return;
    }
    std::string dir = testutil::temp_dir("cli");
    std::string cmd;

    cmd = std::string(cli) + " synth --out " + dir + "/ds --pairs 3 --distractors 2 --seed 5";
    CHECK(std::system(cmd.c_str()) == 0);
    CHECK(std::filesystem::exists(dir + "/ds/manifest.json"));

    cmd = std::string(cli) + " teacher-label --features " + dir + "/ds/gallery.sgaf" +
          " --manifest " + dir + "/ds/manifest.json --out " + dir + "/labels.jsonl" +
          " --train-scorer " + dir + "/scorer.json";
    CHECK(std::system(cmd.c_str()) == 0);

    cmd = std::string(cli) + " build-index --features " + dir + "/ds/gallery.sgaf" +
          " --keyframes " + dir + "/labels.jsonl --kind flat --out " + dir + "/index.sgix";
    CHECK(std::system(cmd.c_str()) == 0);

    cmd = std::string(cli) + " align --method dp --features " + dir + "/ds/queries.sgaf" +
          " --features2 " + dir + "/ds/gallery.sgaf --pair q0000 --ref g0000 > " + dir +
          "/matches.jsonl";
    CHECK(std::system(cmd.c_str()) == 0);

    cmd = std::string(cli) + " eval --preds " + dir + "/matches.jsonl --gts " + dir +
          "/ds/annotations.csv --out " + dir + "/eval.json";
    CHECK(std::system(cmd.c_str()) == 0);

    cmd = std::string(cli) + " dump-map --features " + dir + "/ds/queries.sgaf --features2 " +
          dir + "/ds/gallery.sgaf --pair q0000 --ref g0000 --out " + dir + "/map.ppm";
    CHECK(std::system(cmd.c_str()) == 0);

    cmd = std::string(cli) + " run --out " + dir + "/run --method dp --pairs 2 --distractors 2" +
          " --train-pairs 0 --seed 11";
    CHECK(std::system(cmd.c_str()) == 0);

    cmd = std::string(cli) + " verify --dir " + dir + "/run";
    CHECK(std::system(cmd.c_str()) == 0);

    // verification failure exit code is 5
    {
        std::ofstream os(dir + "/run/matches.jsonl", std::ios::binary | std::ios::app);
        os << "\n";
    }
    int rc = std::system((std::string(cli) + " verify --dir " + dir + "/run").c_str());
    CHECK(WEXITSTATUS(rc) == 5);
}
