#pragma once

// JSON experiment configuration and dataset-source resolution.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "l3doc/datasets.hpp"
#include "l3doc/trainer.hpp"

namespace l3doc::experiment {

inline constexpr int kSchemaVersion = 1;

struct SyntheticSource {
    std::vector<std::string> classes = data::synthetic_class_names();
    std::size_t num_tasks = 5;
    std::size_t classes_per_task = 3;
    std::size_t per_class = 50;
    std::size_t points = 128;
    double noise = 0.02;
};

struct DirectorySource {
    std::filesystem::path root;
    std::size_t num_tasks = 10;
    std::size_t classes_per_task = 5;
    std::size_t points = 1024;
};

struct RunConfig {
    train::ExperimentConfig experiment;
    std::variant<SyntheticSource, DirectorySource> data = SyntheticSource{};
    std::optional<std::filesystem::path> output_dir;
};

/// Parses and validates a configuration document. Unknown keys, missing
/// schema_version and invalid values raise ConfigError.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration with every default spelled out.
nlohmann::ordered_json to_json(const RunConfig& config);

/// Builds the task sequence. Every cloud is normalized to the unit sphere.
std::vector<data::TaskDataset> build_tasks(const RunConfig& config);

}  // namespace l3doc::experiment
