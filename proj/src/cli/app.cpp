#include "cfsynth/cli.hpp"

#include "cfsynth/error.hpp"
#include "cfsynth/log.hpp"

#include <CLI11.hpp>

#include <iomanip>

namespace cfs::cli {

namespace fs = std::filesystem;

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"cfsynth: synthetic human video data, training and synthesis", "cfsynth"};
    app.require_subcommand(1);
    app.footer(
        "Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.\n"
        "Environment: CFSYNTH_DATA_ROOT sets the default --data-root.");

    std::string config, log_level = "info", checkpoint, pred, gt, report;
    fs::path out_dir, data_root;
    std::uint64_t seed = 0;

    // Shared flags, accepted before or after the command name.
    app.fallthrough();
    app.add_option("--config", config, "Input file of the command (spec, train config or job)");
    auto* seed_opt = app.add_option("--seed", seed, "Seed; recorded in every output manifest");
    auto* out_opt = app.add_option("--out", out_dir, "Output directory (created if absent)");
    app.add_option("--log-level", log_level, "debug, info, warn or error")->capture_default_str();
    auto* root_opt = app.add_option("--data-root", data_root,
                                    "Default output of gen-data; base of relative data paths in train configs")
                         ->envname("CFSYNTH_DATA_ROOT");

    auto* gen = app.add_subcommand("gen-data", "Generate synthetic clips from a spec file {\"clips\": [...]}");
    gen->footer("--seed is added to every identity, motion and background seed.");
    auto* train = app.add_subcommand("train", "Train the codec (fresh runs) and one model phase from a config");
    train->footer(
        "Config keys: model, train, codec, data {manifests: [...] | dir}, init_checkpoint, out_dir.\n"
        "Writes checkpoints and train_log.jsonl (one line per step) to --out or out_dir.");
    auto* render = app.add_subcommand("render-pose", "Render pose maps and composite previews for a job");
    auto* synth = app.add_subcommand("synthesize", "Synthesize frames for a job with a trained checkpoint");
    synth->add_option("--checkpoint", checkpoint, "Model checkpoint")->required();
    auto* evaluate = app.add_subcommand("evaluate", "Per-frame L1, PSNR and SSIM of predicted against ground truth");
    evaluate->add_option("--pred", pred, "Directory of predicted frames")->required();
    evaluate->add_option("--gt", gt, "Directory of ground-truth frames")->required();
    evaluate->add_option("--report", report, "Report path (default <out>/report.jsonl)");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kInvalid;
    }

    auto need = [](bool ok, const std::string& what) { require(ok, what); };
    try {
        log::set_level(log::parse_level(log_level));
        const std::optional<std::uint64_t> seed_flag =
            seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt;
        if (gen->parsed()) {
            need(!config.empty(), "gen-data needs --config <spec file>");
            need(out_opt->count() || root_opt->count(), "gen-data needs --out or a data root");
            const int n = cmd_gen_data(config, out_opt->count() ? out_dir : data_root, seed);
            out << n << '\n';
        } else if (train->parsed()) {
            need(!config.empty(), "train needs --config <train config>");
            TrainOverrides o;
            if (out_opt->count()) o.out_dir = out_dir;
            o.seed = seed_flag;
            if (root_opt->count()) o.data_root = data_root;
            out << cmd_train(config, o).string() << '\n';
        } else if (render->parsed()) {
            need(!config.empty() && out_opt->count(), "render-pose needs --config <job file> and --out");
            cmd_render_pose(config, out_dir);
        } else if (synth->parsed()) {
            need(!config.empty() && out_opt->count(), "synthesize needs --config <job file> and --out");
            cmd_synthesize(config, checkpoint, out_dir, seed_flag);
        } else if (evaluate->parsed()) {
            need(!report.empty() || out_opt->count(), "evaluate needs --report or --out");
            const fs::path path = report.empty() ? out_dir / "report.jsonl" : fs::path(report);
            const auto r = cmd_evaluate(pred, gt, path);
            out << std::fixed << std::setprecision(6) << "l1 " << r.mean_l1 << " psnr " << r.mean_psnr << " ssim "
                << r.mean_ssim << '\n';
        }
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e);
    }
    return kOk;
}

}  // namespace cfs::cli
