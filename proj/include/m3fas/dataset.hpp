#pragma once

#include "m3fas/types.hpp"

#include <string>
#include <vector>

namespace m3fas {

enum class SampleLabel { attack = 0, bonafide = 1 };

std::string label_name(SampleLabel label);
SampleLabel parse_label(const std::string& name);

struct ManifestRow {
    std::string id;
    SampleLabel label = SampleLabel::attack;
    int device = 0;
    std::string image_path;  // relative to the manifest directory
    std::string wav_path;
    std::string scenario_json;
};

// Tab-separated manifest with columns
//   id  label  device  image_path  wav_path  scenario_json
struct DatasetManifest {
    std::string root;  // directory containing manifest.tsv
    std::vector<ManifestRow> rows;
};

void write_manifest(const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& dir);

// Index lists into DatasetManifest::rows.
struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

enum class SplitMode { random, cross_device };

// random: seeded shuffle partitioned by ratio. cross_device: the held-out
// device becomes the test split; the remaining devices are ratio-split into
// train/val (no device appears on both sides of the train/test boundary).
SplitIndices split_dataset(const DatasetManifest& manifest, SplitMode mode, double train_ratio,
                           double val_ratio, double test_ratio, std::uint64_t seed,
                           int holdout_device);

}  // namespace m3fas
