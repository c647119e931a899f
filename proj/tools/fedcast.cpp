#include <CLI11.hpp>

#include <iostream>

#include "fedcast/cli.hpp"

namespace cli = fedcast::cli;

int main(int argc, char** argv) {
    CLI::App app{"Household load forecasting with federated LSTMs and client clustering"};
    app.set_version_flag("--version", std::string(cli::kToolVersion));
    app.require_subcommand(1);

    cli::PrepareOptions prep;
    auto* prepare = app.add_subcommand("prepare", "clean, normalise and window meter data into a cache");
    prepare->add_option("--meters", prep.meters, "half-hourly meter CSV")->required();
    prepare->add_option("--weather", prep.weather, "hourly weather CSV");
    prepare->add_option("--out", prep.out, "cache directory")->required();
    prepare->add_option("--k", prep.ks, "sequence lengths, comma separated")->delimiter(',');
    prepare->add_option("--weather-variant", prep.weather_variant, "both, with or without")
        ->check(CLI::IsMember({"both", "with", "without"}));

    cli::SynthesizeOptions syn;
    auto* synthesize = app.add_subcommand("synthesize", "generate households with known load archetypes");
    synthesize->add_option("--n", syn.households, "number of households");
    synthesize->add_option("--archetypes", syn.archetypes, "number of archetypes");
    synthesize->add_option("--noise", syn.noise, "multiplicative noise std-dev");
    synthesize->add_option("--seed", syn.seed, "random seed");
    synthesize->add_option("--days", syn.days, "days of readings");
    synthesize->add_option("--out", syn.out, "output directory")->required();

    cli::RunOptions run;
    auto* run_cmd = app.add_subcommand("run", "train and evaluate the configured scenarios");
    run_cmd->add_option("--config", run.config, "run configuration JSON")->required();
    run_cmd->add_option("--out", run.out, "output directory")->required();
    run_cmd->add_option("--jobs", run.jobs, "worker threads");

    cli::ReportOptions rep;
    auto* report = app.add_subcommand("report", "merge run results into comparison tables");
    report->add_option("runs", rep.run_dirs, "run directories")->required();
    report->add_option("--out", rep.out, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : cli::kInputError;
    }

    if (*prepare) return cli::cmd_prepare(prep, std::cout, std::cerr);
    if (*synthesize) return cli::cmd_synthesize(syn, std::cout, std::cerr);
    if (*run_cmd) return cli::cmd_run(run, std::cout, std::cerr);
    return cli::cmd_report(rep, std::cout, std::cerr);
}
