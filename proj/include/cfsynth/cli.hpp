#pragma once

#include "cfsynth/evalkit.hpp"

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

// Command-line front end. Every command reads files and writes files.
namespace cfs::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kInvalid = 1;  // bad arguments, configs or data
inline constexpr int kFailure = 2;  // anything else

// Maps an exception to an exit code.
int exit_code(const std::exception& e);

// Spec file: {"clips": [scene spec, ...]}. `seed` is added to every seed of
// every clip and recorded in each manifest. Returns the clip count.
int cmd_gen_data(const std::filesystem::path& spec_file, const std::filesystem::path& out_dir,
                 std::uint64_t seed = 0);

struct TrainOverrides {
    std::optional<std::filesystem::path> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<std::filesystem::path> data_root;
};

// Config keys: model, train, codec, data {manifests | dir}, init_checkpoint,
// out_dir. Returns the final checkpoint path.
std::filesystem::path cmd_train(const std::filesystem::path& config_file, const TrainOverrides& overrides = {});

// Writes pose_XXXX.png, preview_XXXX.png and manifest.json.
void cmd_render_pose(const std::filesystem::path& job_file, const std::filesystem::path& out_dir);

void cmd_synthesize(const std::filesystem::path& job_file, const std::filesystem::path& checkpoint,
                    const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed = std::nullopt);

// Compares frame_*.png (or every *.png) of two directories in name order.
eval::MetricReport cmd_evaluate(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                const std::filesystem::path& report_path);

// Parses `args` (without the program name) and runs one command.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace cfs::cli
