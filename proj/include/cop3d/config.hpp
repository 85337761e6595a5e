#pragma once

#include <string>
#include <vector>

#include "cop3d/trainer.hpp"

namespace cop3d::config {

/// Parses the line-oriented `key = value` experiment config format with
/// bracketed section headers. Unknown sections or keys are hard errors
/// (ConfigError), as are malformed numerics.
trainer::ExperimentConfig parse(const std::string& text);

/// Loads and parses a config file, then applies `key=value` overrides of the
/// form "section.key=value" in order.
trainer::ExperimentConfig load(const std::string& path,
                               const std::vector<std::string>& overrides = {});

/// Canonical serialization: parse(serialize(cfg)) reproduces cfg exactly
/// (doubles are emitted with 17 significant digits).
std::string serialize(const trainer::ExperimentConfig& cfg);

} // namespace cop3d::config
