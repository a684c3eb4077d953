#pragma once

#include "stainfocus/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace stainfocus {

// Focal series of one field of view.
struct ZStack {
    std::string fov_id;
    int stain_id = 0;
    std::string tissue;
    std::vector<Image> planes;
    int best_focus_index = 0;

    // Throws std::invalid_argument if planes are empty, ragged, or b is out of range.
    void validate() const;
};

// One plane with its stain and ordinal focus rank (0 = best focus).
struct Sample {
    Image image;
    int stain_id = 0;
    int rank = 0;
    std::string fov_id;
    int z_index = 0;
};

struct ManifestEntry {
    std::string image_path;
    std::string stain;
    std::string tissue;
    std::string fov_id;
    int z_index = 0;
    int rank = 0;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> stain_vocabulary;
    int num_levels = 10;
    // Directory relative image paths resolve against; not serialized.
    std::filesystem::path root;

    [[nodiscard]] int stain_index(const std::string& name) const;  // -1 when unknown
    [[nodiscard]] std::filesystem::path resolve(const ManifestEntry& entry) const;
    // Throws ValidationError on unknown stains, out-of-range ranks, or duplicate paths.
    void validate() const;

    friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
        return a.entries == b.entries && a.stain_vocabulary == b.stain_vocabulary && a.num_levels == b.num_levels;
    }
};

// Relative focus levels: rank(z) = min(R-1, floor(|z-b| * R / (max_d + 1))),
// max_d = max(b, Z-1-b). The best-focus plane always maps to 0.
std::vector<int> relabel_zstack(const ZStack& stack, int levels);
std::vector<int> relabel_positions(int plane_count, int best_focus_index, int levels);

// CSV with header image_path,stain,tissue,fov_id,z_index,rank plus a sibling
// "<stem>.meta" key-value file holding num_levels and the stain vocabulary.
DatasetManifest load_manifest(const std::filesystem::path& csv_path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& csv_path);
std::filesystem::path metadata_path_for(const std::filesystem::path& csv_path);

// Exactly k entries per (stain, rank) cell over the full vocabulary x [0, K).
DatasetManifest fewshot_sample(const DatasetManifest& manifest, int shots, std::uint64_t seed);

// Holds out a fraction of fields of view per stain; planes of one FOV never straddle the split.
std::pair<DatasetManifest, DatasetManifest> split_by_fov(const DatasetManifest& manifest, double test_fraction,
                                                         std::uint64_t seed);

std::vector<Sample> load_samples(const DatasetManifest& manifest);

// FNV-1a over every file below `dir` (sorted relative paths and contents), as hex.
std::string dataset_digest(const std::filesystem::path& dir);
// Copy whose image paths are absolute, so it can be saved anywhere.
DatasetManifest with_absolute_paths(const DatasetManifest& manifest);

}  // namespace stainfocus
