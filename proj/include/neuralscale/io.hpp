#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "json.hpp"

#include "neuralscale/arch.hpp"
#include "neuralscale/fit.hpp"
#include "neuralscale/prune.hpp"
#include "neuralscale/scale.hpp"

namespace neuralscale {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kArchSchema = "neuralscale.arch/1";
inline constexpr std::string_view kTrajectorySchema = "neuralscale.trajectory/1";
inline constexpr std::string_view kParamsSchema = "neuralscale.params/1";
inline constexpr std::string_view kWidthsSchema = "neuralscale.widths/1";

// Architecture documents. Either a full description
//   {"schema", "name", "family", "input": {channels, height, width},
//    "num_classes", "expansion_factor"?, "layers": [...]}
// or a preset reference {"preset": "vgg11", "input"?, "num_classes"?, "name"?}.
// Unknown fields are rejected.
Json arch_to_json(const ArchSpec& arch);
ArchSpec arch_from_json(const Json& j);
ArchSpec load_arch_file(const std::filesystem::path& path);
void save_arch_file(const ArchSpec& arch, const std::filesystem::path& path);

// A preset name or a path to an architecture document.
ArchSpec resolve_arch(const std::string& name_or_path);

Json prune_config_to_json(const PruneConfig& cfg);
PruneConfig prune_config_from_json(const Json& j);

// Trajectory: JSON lines. A header {"schema", "arch", "L", "seed", "config"},
// one {"step", "tau", "phi"} line per record, then {"end": true, "records": N}.
std::string trajectory_to_text(const PruneTrajectory& traj);
PruneTrajectory trajectory_from_text(std::string_view text);
void save_trajectory(const PruneTrajectory& traj, const std::filesystem::path& path);
PruneTrajectory load_trajectory(const std::filesystem::path& path);

Json params_to_json(const ScalingParams& params);
ScalingParams params_from_json(const Json& j);
void save_params(const ScalingParams& params, const std::filesystem::path& path);
ScalingParams load_params(const std::filesystem::path& path);

Json scaled_to_json(const ScaledConfig& sc, const ArchSpec& arch);
void save_widths(const ScaledConfig& sc, const ArchSpec& arch, const std::filesystem::path& path);
// Accepts a widths document or a bare JSON array of integers.
WidthConfig load_widths(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);
// Write through a temporary file and rename, so readers never see a partial file.
void write_text_atomic(const std::filesystem::path& path, std::string_view text);
void write_json_atomic(const std::filesystem::path& path, const Json& j);

std::string utc_timestamp();

}  // namespace neuralscale
