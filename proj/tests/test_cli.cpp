#include <catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "umixer/checkpoint.hpp"
#include "umixer/cli.hpp"

using namespace umixer;
namespace fs = std::filesystem;

namespace {

const char* cli_path() {
    const char* p = std::getenv("UMIXER_CLI");
    return p ? p : "umixer";
}

struct Result {
    int code;
    std::string output;
};

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("umixer_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

Result run(const std::string& args) {
    const auto log = fs::temp_directory_path() / "umixer_cli_last.log";
    const std::string cmd = std::string(cli_path()) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const std::string kTiny =
    " -s data_path=synthetic:sinusoid input_length=16 horizon=8 patch_length=4 patch_stride=4 d_model=8 levels=1"
    " epochs=2 lr=0.001 window_stride=8";

Result train_into(const fs::path& dir) { return run("train" + kTiny + " output_dir=" + dir.string()); }

void write_series(const fs::path& path, const RawSeries& s) {
    std::ofstream out(path);
    write_csv(out, s);
}

}  // namespace

TEST_CASE("train writes checkpoint, history and config", "[cli]") {
    const auto dir = scratch("train");
    const auto r = train_into(dir);
    INFO(r.output);
    REQUIRE(r.code == kExitOk);
    CHECK(fs::exists(dir / "model.ckpt"));
    CHECK(fs::exists(dir / "config.txt"));
    REQUIRE(fs::exists(dir / "history.jsonl"));

    std::ifstream hist(dir / "history.jsonl");
    std::string line;
    std::size_t lines = 0;
    while (std::getline(hist, line)) {
        const auto j = nlohmann::json::parse(line);
        CHECK(j["epoch"].get<int>() == static_cast<int>(++lines));
        CHECK(j["train_l1"].is_number());
    }
    CHECK(lines == 2);

    const auto snapshot = config_from_text(slurp(dir / "config.txt"));
    CHECK(snapshot.model.D == 8);
    CHECK(snapshot.model.C == 2);
    CHECK(snapshot.data_path == "synthetic:sinusoid");
}

TEST_CASE("unknown config keys exit with the config code", "[cli][negative]") {
    const auto dir = scratch("unknown");
    const auto r = run("train -s data_path=synthetic:sinusoid patch_lenght=16 output_dir=" + dir.string());
    CHECK(r.code == kExitConfig);
    CHECK(r.output.find("patch_lenght") != std::string::npos);
    CHECK(run("bogus").code == kExitConfig);
    CHECK(run("train -s data_path=synthetic:nope output_dir=" + dir.string()).code == kExitConfig);
    CHECK(run("train -s data_path=/nonexistent.csv output_dir=" + dir.string()).code == kExitData);
}

TEST_CASE("identical runs give byte-identical checkpoints", "[cli][determinism]") {
    const auto dir = scratch("determinism");
    REQUIRE(train_into(dir).code == kExitOk);
    const auto first = slurp(dir / "model.ckpt");
    REQUIRE(train_into(dir).code == kExitOk);
    const bool identical = first == slurp(dir / "model.ckpt");
    CHECK(identical);
}

TEST_CASE("config file and flags combine", "[cli]") {
    const auto dir = scratch("cfgfile");
    std::ofstream(dir / "run.cfg") << "data_path = synthetic:sinusoid\ninput_length = 16\nhorizon = 8\npatch_length = 4\n"
                                      "patch_stride = 4\nd_model = 8\nlevels = 3\nepochs = 1\nwindow_stride = 16\n";
    const auto r = run("train -c " + (dir / "run.cfg").string() + " -s levels=1 output_dir=" + dir.string());
    INFO(r.output);
    REQUIRE(r.code == kExitOk);
    CHECK(config_from_text(slurp(dir / "config.txt")).model.M == 1);
}

TEST_CASE("evaluate reports metrics and refuses mismatched checkpoints", "[cli]") {
    const auto dir = scratch("evaluate");
    REQUIRE(train_into(dir).code == kExitOk);
    const auto ok = run("evaluate" + kTiny + " output_dir=" + dir.string());
    INFO(ok.output);
    REQUIRE(ok.code == kExitOk);
    const auto j = nlohmann::json::parse(slurp(dir / "metrics.json"));
    REQUIRE(j["reports"].size() == 1);
    CHECK(j["reports"][0]["horizon"] == "8");
    CHECK(j["reports"][0]["metrics"]["mse"].get<double>() >= 0.0);

    const auto ckpt = (dir / "model.ckpt").string();
    const auto bad = run("evaluate" + kTiny + " d_model=16 output_dir=" + dir.string() + " --checkpoint " + ckpt);
    CHECK(bad.code == kExitConfig);
    CHECK(bad.output.find("fingerprint") != std::string::npos);

    fs::copy_file(ckpt, dir / "second.ckpt");
    const auto twice = run("evaluate" + kTiny + " output_dir=" + dir.string() + " --checkpoint " + ckpt +
                           " --checkpoint " + (dir / "second.ckpt").string());
    REQUIRE(twice.code == kExitOk);
    const auto j2 = nlohmann::json::parse(slurp(dir / "metrics.json"));
    REQUIRE(j2["reports"].size() == 3);
    CHECK(j2["reports"][2]["horizon"] == "avg");

    std::string corrupt = slurp(ckpt);
    corrupt[corrupt.size() / 2] ^= 1;
    std::ofstream(dir / "corrupt.ckpt", std::ios::binary) << corrupt;
    CHECK(run("evaluate" + kTiny + " output_dir=" + dir.string() + " --checkpoint " + (dir / "corrupt.ckpt").string()).code ==
          kExitData);
}

TEST_CASE("forecast writes a C x H table and plot data", "[cli][forecast]") {
    const auto dir = scratch("forecast");
    REQUIRE(train_into(dir).code == kExitOk);
    const auto input = dir / "input.csv";
    write_series(input, slice_time(sinusoid_trend(), 100, 140));
    const std::string base = "forecast -s output_dir=" + dir.string() + " -i " + input.string();

    const auto r = run(base);
    INFO(r.output);
    REQUIRE(r.code == kExitOk);
    const auto csv = slurp(dir / "forecast.csv");
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
    CHECK(csv.rfind("ch0,ch1\n", 0) == 0);
    const auto plot = nlohmann::json::parse(slurp(dir / "plot.json"));
    CHECK(plot["series"].size() == 2);
    CHECK(plot["series"][0]["history"].size() == 16);
    CHECK(plot["series"][0]["forecast"].size() == 8);
    CHECK_FALSE(plot["series"][0].contains("truth"));

    REQUIRE(run(base).code == kExitOk);
    CHECK(slurp(dir / "forecast.csv") == csv);

    REQUIRE(run(base + " --holdout").code == kExitOk);
    CHECK(nlohmann::json::parse(slurp(dir / "plot.json"))["series"][1]["truth"].size() == 8);

    write_series(input, slice_time(sinusoid_trend(), 0, 15));
    const auto shortened = run(base);
    CHECK(shortened.code == kExitData);
    CHECK(shortened.output.find("at least 16") != std::string::npos);
}

TEST_CASE("forecast from an untrained default model on constant input", "[cli][forecast]") {
    const auto dir = scratch("default_forecast");
    RunConfig cfg;
    Checkpoint ck{kCheckpointVersion, cfg, ChannelScaler::identity(7), init_train_state(cfg.model, cfg.train)};
    save_checkpoint(dir / "model.ckpt", ck);

    RawSeries flat;
    for (int c = 0; c < 7; ++c) flat.channel_names.push_back("ch" + std::to_string(c));
    flat.values = Matrix(7, cfg.model.L, 2.0);
    write_series(dir / "input.csv", flat);

    const auto r = run("forecast -s output_dir=" + dir.string() + " -i " + (dir / "input.csv").string());
    INFO(r.output);
    REQUIRE(r.code == kExitOk);
    std::ifstream in(dir / "forecast.csv");
    std::string line;
    std::getline(in, line);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 6);
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) CHECK(std::isfinite(std::stod(cell)));
    }
    CHECK(rows == 96);
}

TEST_CASE("selftest and gradcheck", "[cli]") {
    const auto st = run("selftest");
    INFO(st.output);
    CHECK(st.code == kExitOk);
    CHECK(st.output.find("FAIL") == std::string::npos);

    const auto dir = scratch("gradcheck");
    const auto gc = run("gradcheck -s channels=2 input_length=8 horizon=4 patch_length=4 patch_stride=2 d_model=4 levels=1 "
                        "dropout=0 output_dir=" +
                        dir.string());
    INFO(gc.output);
    CHECK(gc.code == kExitOk);
    const auto j = nlohmann::json::parse(slurp(dir / "gradcheck.json"));
    CHECK(j["passed"].get<bool>());
    CHECK(j["max_rel_error"].get<double>() < 1e-4);
}

TEST_CASE("ablate and sweep write their tables", "[cli]") {
    const auto dir = scratch("ablate");
    const auto a = run("ablate" + kTiny + " epochs=1 seeds=0 output_dir=" + dir.string());
    INFO(a.output);
    REQUIRE(a.code == kExitOk);
    const auto abl = slurp(dir / "ablation.csv");
    CHECK(std::count(abl.begin(), abl.end(), '\n') == 4);

    const auto s = run("sweep" + kTiny + " epochs=1 sweep_levels=0,1 sweep_patch_lengths=4,8 output_dir=" + dir.string());
    INFO(s.output);
    REQUIRE(s.code == kExitOk);
    const auto sw = slurp(dir / "sweep.csv");
    CHECK(std::count(sw.begin(), sw.end(), '\n') == 5);
    CHECK(fs::exists(dir / "sweep_timing.csv"));
    CHECK(run("sweep" + kTiny + " sweep_patch_lengths=32 output_dir=" + dir.string()).code == kExitConfig);
}

TEST_CASE("output directory can come from the environment", "[cli]") {
    const auto dir = scratch("env");
    ::setenv(kOutputDirEnv, dir.string().c_str(), 1);
    const auto e = run("train" + kTiny + " epochs=1");
    ::unsetenv(kOutputDirEnv);
    INFO(e.output);
    REQUIRE(e.code == kExitOk);
    CHECK(fs::exists(dir / "model.ckpt"));
}
