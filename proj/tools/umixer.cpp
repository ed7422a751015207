#include <iostream>

#include <CLI11.hpp>

#include "umixer/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"U-Mixer forecasting engine"};
    app.require_subcommand(1);

    umixer::CliRequest req;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("-c,--config", req.config_file, "Config file (key = value lines)");
        sub->add_option("-s,--set", req.sets, "Override a config key, e.g. --set epochs=20")->take_all();
    };

    auto* train = app.add_subcommand("train", "Train a model and write checkpoint, history and config");
    add_common(train);

    auto* evaluate = app.add_subcommand("evaluate", "Evaluate one checkpoint per horizon on the test split");
    add_common(evaluate);
    evaluate->add_option("--checkpoint", req.checkpoints, "Checkpoint file (repeatable)");

    auto* forecast = app.add_subcommand("forecast", "Forecast the next H steps of an input CSV");
    add_common(forecast);
    forecast->add_option("--checkpoint", req.checkpoints, "Checkpoint file")->expected(1);
    forecast->add_option("-i,--input", req.input, "Input CSV")->required();
    forecast->add_flag("--holdout", req.holdout, "Treat the last H rows as ground truth");

    auto* ablate = app.add_subcommand("ablate", "Train and compare full, wo_ue and wo_sc over the seed list");
    add_common(ablate);

    auto* sweep = app.add_subcommand("sweep", "Train the levels x patch length grid");
    add_common(sweep);

    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient check of the configured model");
    add_common(gradcheck);

    app.add_subcommand("selftest", "Run the built-in oracle checks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : umixer::kExitConfig;
    }
    req.command = app.get_subcommands().front()->get_name();
    return umixer::run_command(req, std::cout, std::cerr);
}
