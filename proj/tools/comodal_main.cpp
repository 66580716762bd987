// comodal command-line interface. Talks to the core exclusively through the
// public C API in comodal/comodal.h.

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "comodal/comodal.h"

namespace {

struct CommonFlags {
    std::string config;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    double labeled_fraction = 0.0;
    bool fraction_set = false;
    std::string ablation;
    int deterministic = -1;  // -1 = not set
};

void add_common_flags(CLI::App* cmd, CommonFlags& flags, bool with_config = true) {
    if (with_config)
        cmd->add_option("--config", flags.config, "configuration file (JSON)")
            ->required()
            ->check(CLI::ExistingFile);
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_option("--seed", flags.seed, "seed override")
        ->each([&flags](const std::string&) { flags.seed_set = true; });
    cmd->add_option("--labeled-fraction", flags.labeled_fraction,
                    "labeled fraction override in (0, 1]")
        ->each([&flags](const std::string&) { flags.fraction_set = true; });
    cmd->add_option("--ablation", flags.ablation,
                    "ablation preset: baseline|encoder|cmc|full")
        ->check(CLI::IsMember({"baseline", "encoder", "cmc", "full"}));
    cmd->add_flag("--deterministic,!--no-deterministic",
                  [&flags](int64_t count) { flags.deterministic = count > 0 ? 1 : 0; },
                  "fix all rng streams (default from config)");
}

using OptionsPtr = std::unique_ptr<comodal_options, decltype(&comodal_options_free)>;

OptionsPtr build_options(const CommonFlags& flags) {
    OptionsPtr opts(comodal_options_create(), &comodal_options_free);
    if (flags.seed_set) comodal_options_set_seed(opts.get(), flags.seed);
    if (!flags.out_dir.empty()) comodal_options_set_out_dir(opts.get(), flags.out_dir.c_str());
    if (flags.fraction_set)
        comodal_options_set_labeled_fraction(opts.get(), flags.labeled_fraction);
    if (flags.deterministic >= 0)
        comodal_options_set_deterministic(opts.get(), flags.deterministic);
    if (!flags.ablation.empty()) {
        if (comodal_options_set_ablation(opts.get(), flags.ablation.c_str()) != COMODAL_OK) {
            std::fprintf(stderr, "error: %s\n", comodal_last_error());
            std::exit(2);
        }
    }
    return opts;
}

int finish(comodal_status status, comodal_run* run) {
    if (status != COMODAL_OK) {
        std::fprintf(stderr, "error [%s]: %s\n", comodal_status_name(status),
                     comodal_last_error());
        return 1;
    }
    std::printf("%s", comodal_run_summary(run));
    std::printf("manifest: %s\n", comodal_run_manifest_path(run));
    comodal_run_free(run);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"comodal: semi-supervised bimodal 3-D segmentation on synthetic phantoms"};
    app.require_subcommand(1);

    CommonFlags gen_flags, train_flags, eval_flags, ablate_flags;
    std::string checkpoint, split = "test";
    std::vector<std::string> report_dirs;
    std::string report_out;

    CLI::App* gen = app.add_subcommand("generate-data", "synthesize a bimodal phantom dataset");
    add_common_flags(gen, gen_flags);

    CLI::App* train = app.add_subcommand("train", "train on a generated dataset");
    add_common_flags(train, train_flags);

    CLI::App* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a split");
    add_common_flags(eval, eval_flags);
    eval->add_option("--checkpoint", checkpoint, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--split", split, "split name: val|test|labeled");

    CLI::App* ablate = app.add_subcommand("ablate", "run the 4-row cumulative ablation");
    add_common_flags(ablate, ablate_flags);

    CLI::App* report = app.add_subcommand("report", "merge evaluation runs into one table");
    report->add_option("runs", report_dirs, "run directories")->required();
    report->add_option("--out", report_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    comodal_run* run = nullptr;
    if (gen->parsed()) {
        OptionsPtr opts = build_options(gen_flags);
        comodal_status s = comodal_generate_data(gen_flags.config.c_str(), opts.get(), &run);
        return finish(s, run);
    }
    if (train->parsed()) {
        OptionsPtr opts = build_options(train_flags);
        comodal_status s = comodal_train(train_flags.config.c_str(), opts.get(), &run);
        return finish(s, run);
    }
    if (eval->parsed()) {
        OptionsPtr opts = build_options(eval_flags);
        comodal_status s = comodal_evaluate(eval_flags.config.c_str(), checkpoint.c_str(),
                                            split.c_str(), opts.get(), &run);
        return finish(s, run);
    }
    if (ablate->parsed()) {
        OptionsPtr opts = build_options(ablate_flags);
        comodal_status s = comodal_ablate(ablate_flags.config.c_str(), opts.get(), &run);
        return finish(s, run);
    }
    if (report->parsed()) {
        std::vector<const char*> dirs;
        dirs.reserve(report_dirs.size());
        for (const auto& d : report_dirs) dirs.push_back(d.c_str());
        comodal_status s = comodal_report(dirs.data(), dirs.size(),
                                          report_out.empty() ? nullptr : report_out.c_str(), &run);
        return finish(s, run);
    }
    return 2;
}
