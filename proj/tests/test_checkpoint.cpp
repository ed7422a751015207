#include <catch_amalgamated.hpp>

#include <filesystem>

#include "umixer/checkpoint.hpp"
#include "umixer/synthetic.hpp"

using namespace umixer;

namespace {

RunConfig small_run() {
    RunConfig cfg;
    cfg.model.C = 2;
    cfg.model.L = 16;
    cfg.model.H = 8;
    cfg.model.P = 4;
    cfg.model.S = 4;
    cfg.model.D = 8;
    cfg.model.M = 2;
    cfg.train.epochs = 2;
    cfg.train.lr = 1e-3;
    cfg.train.seed = 3;
    return cfg;
}

std::vector<WindowSample> windows(const RunConfig& cfg) {
    return make_windows(sinusoid_trend({.channels = 2, .length = 120}), cfg.model.L, cfg.model.H, 3);
}

Checkpoint trained(const RunConfig& cfg) {
    const auto w = windows(cfg);
    Checkpoint ck{kCheckpointVersion, cfg, ChannelScaler::identity(2), init_train_state(cfg.model, cfg.train)};
    train(cfg.model, w, w, cfg.train, ck.state);
    return ck;
}

std::vector<double> flat(const ModelParams& p) {
    std::vector<double> out;
    for (const auto& [name, t] : p.named()) out.insert(out.end(), t.data().begin(), t.data().end());
    return out;
}

}  // namespace

TEST_CASE("checkpoint round trip preserves every field", "[checkpoint]") {
    const auto cfg = small_run();
    const auto ck = trained(cfg);
    const auto bytes = serialize_checkpoint(ck);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(flat(back.state.params) == flat(ck.state.params));
    CHECK(flat(back.state.best) == flat(ck.state.best));
    CHECK(back.state.adam.m == ck.state.adam.m);
    CHECK(back.state.adam.v == ck.state.adam.v);
    CHECK(back.state.adam.step == ck.state.adam.step);
    CHECK(back.state.rng == ck.state.rng);
    CHECK(back.state.epochs_done == 2);
    CHECK(back.state.best_score == ck.state.best_score);
    CHECK(back.state.best_epoch == ck.state.best_epoch);
    REQUIRE(back.state.history.size() == 2);
    CHECK(back.state.history[1].train_l1 == ck.state.history[1].train_l1);
    CHECK(back.state.history[1].val_l1 == ck.state.history[1].val_l1);
    CHECK(config_to_text(back.config) == config_to_text(ck.config));
    CHECK(back.scaler.mean == ck.scaler.mean);
    CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("untrained state round trips", "[checkpoint]") {
    const auto cfg = small_run();
    const Checkpoint ck{kCheckpointVersion, cfg, ChannelScaler::identity(2), init_train_state(cfg.model, cfg.train)};
    const auto bytes = serialize_checkpoint(ck);
    const auto back = deserialize_checkpoint(bytes);
    CHECK(std::isinf(back.state.best_score));
    CHECK(serialize_checkpoint(back) == bytes);
}

TEST_CASE("loaded model forecasts exactly like the saved one", "[checkpoint]") {
    const auto cfg = small_run();
    const auto ck = trained(cfg);
    const auto path = std::filesystem::temp_directory_path() / "umixer_ckpt_test.ckpt";
    save_checkpoint(path, ck);
    const auto back = load_checkpoint(path);
    std::filesystem::remove(path);
    const auto w = windows(cfg);
    const auto a = predict(cfg.model, ck.state.best, w);
    const auto b = predict(back.config.model, back.state.best, w);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("corruption is detected", "[checkpoint][negative]") {
    const auto bytes = serialize_checkpoint(trained(small_run()));

    auto flipped = bytes;
    flipped[flipped.size() / 2] ^= 0x40;
    CHECK_THROWS_WITH(deserialize_checkpoint(flipped), Catch::Matchers::ContainsSubstring("checksum"));

    CHECK_THROWS_WITH(deserialize_checkpoint(bytes.substr(0, bytes.size() - 9)), Catch::Matchers::ContainsSubstring("truncated"));
    CHECK_THROWS_WITH(deserialize_checkpoint(bytes.substr(0, 5)), Catch::Matchers::ContainsSubstring("truncated"));
    CHECK_THROWS_WITH(deserialize_checkpoint(bytes + "x"), Catch::Matchers::ContainsSubstring("trailing"));

    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_WITH(deserialize_checkpoint(magic), Catch::Matchers::ContainsSubstring("magic"));

    auto version = bytes;
    version[8] = 9;
    CHECK_THROWS_WITH(deserialize_checkpoint(version), Catch::Matchers::ContainsSubstring("version 9"));

    CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/model.ckpt"), CheckpointError);
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run", "[checkpoint][determinism]") {
    auto cfg = small_run();
    cfg.model.dropout = 0.2;
    const auto w = windows(cfg);

    auto straight = cfg;
    straight.train.epochs = 3;
    Checkpoint full{kCheckpointVersion, straight, ChannelScaler::identity(2), init_train_state(cfg.model, cfg.train)};
    train(cfg.model, w, w, straight.train, full.state);

    const auto partial = trained(cfg);
    auto resumed = deserialize_checkpoint(serialize_checkpoint(partial));
    resumed.config.train.epochs = 3;
    train(resumed.config.model, w, w, resumed.config.train, resumed.state);

    CHECK(flat(resumed.state.params) == flat(full.state.params));
    CHECK(flat(resumed.state.best) == flat(full.state.best));
    CHECK(resumed.state.history.back().train_l1 == full.state.history.back().train_l1);
    resumed.config.train.epochs = full.config.train.epochs;
    CHECK(serialize_checkpoint(resumed) == serialize_checkpoint(full));
}

TEST_CASE("identical runs give identical checkpoint bytes", "[checkpoint][determinism]") {
    const auto cfg = small_run();
    CHECK(serialize_checkpoint(trained(cfg)) == serialize_checkpoint(trained(cfg)));
}
