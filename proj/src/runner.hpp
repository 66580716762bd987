#pragma once

#include <string>
#include <vector>

#include "config.hpp"

namespace comodal {

struct RunOutcome {
    std::string run_dir;
    std::string manifest_path;
    std::string summary;  // human-readable, printed by the CLI
};

// Environment variable consulted for the default output root when a config
// leaves out_dir empty or relative.
constexpr const char* kOutRootEnvVar = "COMODAL_OUT_ROOT";

RunOutcome cmd_generate_data(const std::string& config_path, const ConfigOverrides& overrides);
RunOutcome cmd_train(const std::string& config_path, const ConfigOverrides& overrides);
RunOutcome cmd_evaluate(const std::string& config_path, const std::string& checkpoint_path,
                        const std::string& split_name, const ConfigOverrides& overrides);
RunOutcome cmd_ablate(const std::string& config_path, const ConfigOverrides& overrides);
RunOutcome cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir);

}  // namespace comodal
