#pragma once

// Point-cloud ingestion, preprocessing and lifelong task construction.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "l3doc/tensor.hpp"

namespace l3doc::data {

struct PointCloud {
    Tensor points;  // n_pts x d
    std::string source;

    [[nodiscard]] std::size_t num_points() const { return points.dim(0); }
    [[nodiscard]] std::size_t dim() const { return points.dim(1); }
};

struct Sample {
    PointCloud cloud;
    std::size_t label;
};

struct TaskDataset {
    std::size_t task_id = 0;
    std::vector<std::string> class_names;
    std::vector<Sample> train;
    std::vector<Sample> test;

    [[nodiscard]] std::size_t num_classes() const { return class_names.size(); }
    /// Throws DataError on empty splits, out-of-range labels or ragged clouds.
    void validate() const;
};

struct SplitPlan {
    std::uint64_t seed = 0;
    std::vector<std::vector<std::string>> tasks;
};

// OFF meshes ---------------------------------------------------------------

struct Mesh {
    std::vector<std::array<double, 3>> vertices;
    std::vector<std::array<std::size_t, 3>> faces;  // triangles
};

/// Accepts both "OFF\n<v f e>" and the fused "OFF<v f e>" header. Polygons
/// with more than three vertices are fan-triangulated.
Mesh parse_off(std::string_view text);
std::string serialize_off(const Mesh& mesh);

/// Area-weighted uniform surface sampling.
PointCloud sample_mesh(const Mesh& mesh, std::size_t n_pts, std::uint64_t seed);

// Point processing ---------------------------------------------------------

/// Greedy max-min subset of k indices starting at `start_index`; ties go to
/// the lowest index.
std::vector<std::size_t> farthest_point_sampling(const PointCloud& cloud, std::size_t k, std::size_t start_index = 0);

PointCloud select_points(const PointCloud& cloud, const std::vector<std::size_t>& indices);

/// Centroid to the origin, farthest point at radius 1.
PointCloud normalize_unit_sphere(const PointCloud& cloud);

// PTS text format: "n d" header then n rows of d floats ---------------------

PointCloud parse_pts(std::string_view text);
std::string serialize_pts(const PointCloud& cloud);

// Tasks --------------------------------------------------------------------

/// Classes are distinct within a task and drawn with replacement across tasks.
SplitPlan make_split_plan(const std::vector<std::string>& class_names, std::size_t num_tasks,
                          std::size_t classes_per_task, std::uint64_t seed);

const std::vector<std::string>& synthetic_class_names();

/// Randomly rotated, jittered primitive surfaces; per class the first 80%
/// of objects go to train and the rest to test.
TaskDataset gen_synthetic(const std::vector<std::string>& classes, std::size_t per_class, std::size_t n_pts,
                          double noise_sigma, std::uint64_t seed);

/// Reads <root>/<class>/{train,test}/*.{off,pts} for the listed classes,
/// resamples every object to n_pts points and normalizes it.
TaskDataset load_directory_task(const std::filesystem::path& root, const std::vector<std::string>& classes,
                                std::size_t n_pts, std::uint64_t seed);

/// Class sub-directory names under `root`, sorted.
std::vector<std::string> list_directory_classes(const std::filesystem::path& root);

/// Writes the dataset as PTS files in the directory layout above.
void write_dataset_directory(const TaskDataset& dataset, const std::filesystem::path& root);

}  // namespace l3doc::data
