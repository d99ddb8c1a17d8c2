#include "maskgen/error.hpp"
#include "maskgen/experiments.hpp"
#include "maskgen/run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <functional>
#include <string>
#include <vector>

namespace {

struct CommonOpts {
    std::string config_path;
    std::vector<std::string> overrides;
    uint64_t seed = 0;
    bool seed_given = false;
    std::string out;
    bool out_given = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
    sub->add_option("--config", o.config_path, "JSON run config")->check(CLI::ExistingFile);
    sub->add_option("--set", o.overrides, "dot-path override, e.g. sampling.scale=1.5")
        ->take_all();
    sub->add_option("--seed", o.seed, "master seed")->each([&o](const std::string&) {
        o.seed_given = true;
    });
    sub->add_option("--out", o.out, "run directory")->each([&o](const std::string&) {
        o.out_given = true;
    });
}

int run(const CommonOpts& o, int (*cmd)(const maskgen::RunConfig&)) {
    maskgen::RunConfig cfg = maskgen::resolve_config(
        o.config_path, o.overrides, o.seed_given ? &o.seed : nullptr,
        o.out_given ? &o.out : nullptr);
    return cmd(cfg);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"masked generative model pipeline: dataset -> tokenizer -> train -> finetune -> "
                 "sample/eval/sweep"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        int (*cmd)(const maskgen::RunConfig&);
    };
    const Sub subs[] = {
        {"dataset", "generate or ingest the labeled image set", maskgen::cmd_dataset},
        {"tokenizer", "fit the patch codebook", maskgen::cmd_tokenizer},
        {"train", "train the masked-token generator", maskgen::cmd_train},
        {"finetune", "fine-tune the feedback adapter against the frozen generator",
         maskgen::cmd_finetune},
        {"sample", "decode sample grids with the configured guidance mode", maskgen::cmd_sample},
        {"eval", "score generated samples against the dataset", maskgen::cmd_eval},
        {"sweep", "grid over guidance modes, scales, temperatures and steps", maskgen::cmd_sweep},
    };

    std::vector<CommonOpts> opts(std::size(subs));
    int status = 0;
    for (size_t i = 0; i < std::size(subs); ++i) {
        CLI::App* sub = app.add_subcommand(subs[i].name, subs[i].help);
        add_common(sub, opts[i]);
        auto cmd = subs[i].cmd;
        CommonOpts* o = &opts[i];
        sub->callback([o, cmd, &status]() { status = run(*o, cmd); });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return status;
}
