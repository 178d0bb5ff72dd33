// gme — command-line harness for the GME-Net low-resolution expression
// recognition pipeline: dataset fabrication, teacher training, student
// distillation, evaluation, and the ablation matrix.
//
// Exit codes: 0 success, 2 configuration/validation error, 3 runtime failure.

#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gme/harness.hpp"

namespace {

struct GlobalArgs {
    std::string config_path;
    std::vector<std::string> sets;
    int64_t seed = -1;
    std::string out_dir;
    int precision = 0;
};

gme::json resolve_config(const GlobalArgs& g) {
    gme::json cfg = gme::load_config(g.config_path);
    for (const std::string& kv : g.sets) gme::apply_override(cfg, kv);
    if (g.seed >= 0) cfg["seed"] = g.seed;
    if (!g.out_dir.empty()) cfg["output_dir"] = g.out_dir;
    if (g.precision != 0) cfg["precision"] = g.precision;
    const int p = cfg.at("precision").get<int>();
    if (p != 32 && p != 64)
        throw std::invalid_argument("precision must be 32 or 64, got " + std::to_string(p));
    return cfg;
}

void add_global_flags(CLI::App* app, GlobalArgs& g) {
    app->add_option("--config", g.config_path, "JSON config file");
    app->add_option("--set", g.sets, "override config key, e.g. --set schedule.epochs=5")
        ->take_all();
    app->add_option("--seed", g.seed, "random seed (overrides config)");
    app->add_option("--out", g.out_dir, "output directory (overrides config)");
    app->add_option("--precision", g.precision, "floating point width: 32 or 64")
        ->check(CLI::IsMember({32, 64}));
}

template <typename Fn32, typename Fn64>
void dispatch_precision(const gme::json& cfg, Fn32&& f32, Fn64&& f64) {
    if (cfg.at("precision").get<int>() == 32)
        f32();
    else
        f64();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"GME-Net low-resolution facial expression recognition harness"};
    app.require_subcommand(1);

    GlobalArgs g_prep, g_teacher, g_distill, g_eval, g_abl;
    std::string eval_ckpt, eval_manifest;

    CLI::App* prep = app.add_subcommand("prepare-data", "fabricate the LR dataset + manifest");
    add_global_flags(prep, g_prep);
    CLI::App* teacher = app.add_subcommand("train-teacher", "train HR-Net on HR images");
    add_global_flags(teacher, g_teacher);
    CLI::App* distill =
        app.add_subcommand("distill", "train LR-Net with attention-similarity distillation");
    add_global_flags(distill, g_distill);
    CLI::App* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a manifest");
    add_global_flags(evaluate, g_eval);
    evaluate->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    evaluate->add_option("--manifest", eval_manifest, "manifest file (default: config)");
    CLI::App* ablation = app.add_subcommand("ablation", "run the six-variant ablation matrix");
    add_global_flags(ablation, g_abl);

    CLI11_PARSE(app, argc, argv);

    try {
        if (prep->parsed()) {
            const gme::json cfg = resolve_config(g_prep);
            const gme::Manifest m = gme::cmd_prepare_data(cfg);
            std::cout << "wrote manifest with " << m.records.size() << " records, "
                      << m.class_names.size() << " classes\n";
        } else if (teacher->parsed()) {
            const gme::json cfg = resolve_config(g_teacher);
            dispatch_precision(
                cfg, [&] { gme::cmd_train_teacher<float>(cfg); },
                [&] { gme::cmd_train_teacher<double>(cfg); });
        } else if (distill->parsed()) {
            const gme::json cfg = resolve_config(g_distill);
            dispatch_precision(
                cfg, [&] { gme::cmd_distill_student<float>(cfg); },
                [&] { gme::cmd_distill_student<double>(cfg); });
        } else if (evaluate->parsed()) {
            const gme::json cfg = resolve_config(g_eval);
            gme::EvaluationReport rep;
            dispatch_precision(
                cfg,
                [&] { rep = gme::cmd_evaluate<float>(cfg, eval_ckpt, eval_manifest); },
                [&] { rep = gme::cmd_evaluate<double>(cfg, eval_ckpt, eval_manifest); });
            std::cout << "accuracy " << rep.overall_accuracy << " over " << rep.sample_count
                      << " samples\n";
        } else if (ablation->parsed()) {
            const gme::json cfg = resolve_config(g_abl);
            dispatch_precision(
                cfg, [&] { gme::cmd_ablation<float>(cfg); },
                [&] { gme::cmd_ablation<double>(cfg); });
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
