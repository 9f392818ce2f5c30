// molli.cpp - batch command-line front end for the T1 mapping toolkit.
//
// Subcommands: gen-curves, gen-phantom, fit, train, infer, eval, selftest.
// Exit codes: 0 success, 1 usage/config error, 2 runtime/data error,
// 3 selftest failure.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "molli/config.hpp"
#include "molli/pipeline.hpp"
#include "molli/selftest.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    bool seed_set = false;
    std::uint64_t seed = 0;
    bool threads_set = false;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required = true) {
    cmd->add_option("--config", args.config_path, "JSON config file");
    auto* out = cmd->add_option("--out", args.out_dir, "output directory");
    if (out_required)
        out->required();
    cmd->add_option("--seed", args.seed, "root random seed (overrides config)")
        ->each([&args](const std::string&) { args.seed_set = true; });
    cmd->add_option("--threads", args.threads, "worker cap, 0 = all cores")
        ->each([&args](const std::string&) { args.threads_set = true; });
}

molli::RunConfig resolve_config(const CommonArgs& args) {
    molli::RunConfig cfg;
    if (!args.config_path.empty())
        cfg = molli::load_config(args.config_path);
    if (args.seed_set)
        cfg.seed = args.seed;
    if (args.threads_set)
        cfg.threads = args.threads;
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"MOLLI T1 mapping toolkit: synthetic data, LM fitting, and an "
                 "LSTM regressor"};
    app.require_subcommand(1);

    CommonArgs gen_curves_args;
    int gen_count = -1;
    auto* gen_curves = app.add_subcommand("gen-curves", "generate a balanced curve batch");
    add_common(gen_curves, gen_curves_args);
    gen_curves->add_option("--count", gen_count, "curves to generate (multiple of 3)");

    CommonArgs gen_phantom_args;
    bool with_motion = false, with_noise = false;
    auto* gen_phantom = app.add_subcommand("gen-phantom", "generate a phantom MOLLI stack");
    add_common(gen_phantom, gen_phantom_args);
    gen_phantom->add_flag("--motion", with_motion, "corrupt a random image pair");
    gen_phantom->add_flag("--noise", with_noise, "add 5% Gaussian noise");

    CommonArgs fit_args;
    std::string fit_stack;
    auto* fit = app.add_subcommand("fit", "Levenberg-Marquardt map fit of a stack");
    add_common(fit, fit_args);
    fit->add_option("stack", fit_stack, "stack directory")->required();

    CommonArgs train_args;
    std::string resume_path;
    int train_epochs = -1;
    auto* train_cmd = app.add_subcommand("train", "train the LSTM regressor");
    add_common(train_cmd, train_args);
    train_cmd->add_option("--resume", resume_path, "checkpoint to continue from");
    train_cmd->add_option("--epochs", train_epochs, "total epochs (overrides config)");

    CommonArgs infer_args;
    std::string infer_stack, infer_ckpt;
    auto* infer = app.add_subcommand("infer", "reconstruct maps with trained weights");
    add_common(infer, infer_args);
    infer->add_option("stack", infer_stack, "stack directory")->required();
    infer->add_option("--checkpoint", infer_ckpt, "weights checkpoint")->required();

    CommonArgs eval_args;
    std::string eval_ckpt;
    auto* eval_cmd = app.add_subcommand("eval", "LM vs RNN comparison report");
    add_common(eval_cmd, eval_args);
    eval_cmd->add_option("--checkpoint", eval_ckpt, "weights checkpoint")->required();

    auto* selftest = app.add_subcommand("selftest", "run the fast invariant suite");
    std::string inject_bug;
    selftest->add_option("--inject-bug", inject_bug, "corrupt a check on purpose")
        ->check(CLI::IsMember({"jacobian-sign", "bptt-sign"}))
        ->group(""); // hidden; used by the test suite to verify the checks bite

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*gen_curves) {
            auto cfg = resolve_config(gen_curves_args);
            if (gen_count > 0)
                cfg.gen_count = gen_count;
            cfg.validate();
            molli::run_gen_curves(cfg, gen_curves_args.out_dir);
        } else if (*gen_phantom) {
            auto cfg = resolve_config(gen_phantom_args);
            cfg.phantom_apply_motion = cfg.phantom_apply_motion || with_motion;
            cfg.phantom_apply_noise = cfg.phantom_apply_noise || with_noise;
            molli::run_gen_phantom(cfg, gen_phantom_args.out_dir);
        } else if (*fit) {
            auto cfg = resolve_config(fit_args);
            molli::run_fit(cfg, fit_stack, fit_args.out_dir);
        } else if (*train_cmd) {
            auto cfg = resolve_config(train_args);
            if (train_epochs >= 0)
                cfg.rnn.epochs = train_epochs;
            cfg.validate();
            molli::run_train(cfg, train_args.out_dir, resume_path,
                             [](const molli::HistoryRow& row) {
                                 std::fprintf(stderr,
                                              "epoch %4d  loss %.6f  val T1 err %.4f\n",
                                              row.epoch, row.loss, row.val_t1_rel_err);
                             });
        } else if (*infer) {
            auto cfg = resolve_config(infer_args);
            molli::run_infer(cfg, infer_stack, infer_ckpt, infer_args.out_dir);
        } else if (*eval_cmd) {
            auto cfg = resolve_config(eval_args);
            const int failures = molli::run_eval(cfg, eval_ckpt, eval_args.out_dir);
            if (failures > 0) {
                std::fprintf(stderr, "eval: %d condition run(s) failed\n", failures);
                return 2;
            }
        } else if (*selftest) {
            molli::SelftestOptions opts;
            if (inject_bug == "jacobian-sign")
                opts.flip_jacobian_sign = true;
            else if (inject_bug == "bptt-sign")
                opts.bptt_mutation = molli::GradCheckMutation::flip_forget_bias_sign;
            const auto checks = molli::run_selftest(opts);
            bool all_pass = true;
            for (const auto& c : checks) {
                std::printf("[%s] %-42s %7.2fs  %s\n", c.pass ? "PASS" : "FAIL",
                            c.name.c_str(), c.seconds, c.detail.c_str());
                all_pass = all_pass && c.pass;
            }
            if (!all_pass)
                return 3;
        }
    } catch (const molli::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 0;
}
