#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "milfcn/mask.hpp"
#include "milfcn/mil.hpp"
#include "milfcn/rng.hpp"
#include "milfcn/tensor.hpp"

namespace milfcn {

// Synthetic shape-segmentation data: each image holds one to a few distinct
// shape classes (disk, square, triangle, cross) on a noise-textured gray
// background. Shape colors are sampled independently of class, so class
// identity is carried by geometry alone. Later shapes occlude earlier ones.
struct DatasetSpec {
    int train_images = 500;
    int val_images = 100;
    int height = 64;
    int width = 64;
    int num_fg_classes = 4;
    int min_shapes = 1;
    int max_shapes = 3;
    double min_scale = 0.25;
    double max_scale = 0.45;
    double noise = 0.1;
    std::uint64_t seed = 1;

    void validate() const;
};

struct Sample {
    Tensor image;  // [3,H,W] in [0,1]
    Mask mask;     // ground truth, evaluation-only
    LabelBag bag{std::vector<int>{0}};
};

// key=value per line, keys named exactly like the DatasetSpec fields
DatasetSpec parse_dataset_spec(const std::string& text);
DatasetSpec load_dataset_spec(const std::filesystem::path& path);

Sample generate_sample(const DatasetSpec& spec, Rng& rng);

// Writes <root>/train and <root>/val, each laid out as img/NNNN.ppm,
// mask/NNNN.pgm and manifest.tsv. A byte-identical function of the spec.
void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& root);

struct ManifestEntry {
    std::string image_path;  // relative to the manifest directory
    std::string mask_path;
    LabelBag bag{std::vector<int>{0}};
};

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& manifest_path, int num_fg_classes);

struct LoadedDataset {
    std::vector<Sample> samples;
};

LoadedDataset load_split(const std::filesystem::path& split_root, int num_fg_classes);

}  // namespace milfcn
