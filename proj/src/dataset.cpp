#include "m3fas/dataset.hpp"

#include "m3fas/rng.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace m3fas {

std::string label_name(SampleLabel label) {
    return label == SampleLabel::bonafide ? "bonafide" : "attack";
}

SampleLabel parse_label(const std::string& name) {
    if (name == "bonafide") return SampleLabel::bonafide;
    if (name == "attack") return SampleLabel::attack;
    throw InvalidInputError("unknown label: " + name);
}

void write_manifest(const DatasetManifest& manifest) {
    namespace fs = std::filesystem;
    const fs::path path = fs::path(manifest.root) / "manifest.tsv";
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest: " + path.string());
    out << "id\tlabel\tdevice\timage_path\twav_path\tscenario_json\n";
    for (const auto& row : manifest.rows) {
        out << row.id << '\t' << label_name(row.label) << '\t' << row.device << '\t'
            << row.image_path << '\t' << row.wav_path << '\t' << row.scenario_json << '\n';
    }
    if (!out) throw IoError("short write: " + path.string());
}

DatasetManifest read_manifest(const std::string& dir) {
    namespace fs = std::filesystem;
    const fs::path path = fs::path(dir) / "manifest.tsv";
    std::ifstream in(path);
    if (!in) throw IoError("cannot read manifest: " + path.string());

    DatasetManifest manifest;
    manifest.root = dir;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("id\t", 0) == 0) continue;  // header
        }
        std::vector<std::string> fields;
        std::size_t start = 0;
        while (true) {
            const std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() != 6)
            throw IoError("manifest row with " + std::to_string(fields.size()) +
                          " fields (want 6): " + line.substr(0, 60));
        ManifestRow row;
        row.id = fields[0];
        row.label = parse_label(fields[1]);
        row.device = std::stoi(fields[2]);
        row.image_path = fields[3];
        row.wav_path = fields[4];
        row.scenario_json = fields[5];
        if (!fs::exists(fs::path(dir) / row.image_path))
            throw IoError("manifest references missing image: " + row.image_path);
        if (!fs::exists(fs::path(dir) / row.wav_path))
            throw IoError("manifest references missing wav: " + row.wav_path);
        manifest.rows.push_back(std::move(row));
    }
    return manifest;
}

SplitIndices split_dataset(const DatasetManifest& manifest, SplitMode mode, double train_ratio,
                           double val_ratio, double test_ratio, std::uint64_t seed,
                           int holdout_device) {
    require(train_ratio >= 0 && val_ratio >= 0 && test_ratio >= 0, "ratios must be nonnegative");
    require(std::abs(train_ratio + val_ratio + test_ratio - 1.0) < 1e-9,
            "split ratios must sum to 1");
    require(!manifest.rows.empty(), "empty manifest");

    SplitIndices out;
    Rng rng(mix_seed(seed, 0x5714d5ull));

    auto shuffle = [&rng](std::vector<std::size_t>& v) {
        for (std::size_t i = v.size(); i > 1; --i)
            std::swap(v[i - 1], v[std::size_t(rng.randint(0, std::int64_t(i) - 1))]);
    };

    if (mode == SplitMode::random) {
        std::vector<std::size_t> idx(manifest.rows.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        shuffle(idx);
        const std::size_t n = idx.size();
        const std::size_t n_train = std::size_t(std::lround(train_ratio * double(n)));
        const std::size_t n_val = std::size_t(std::lround(val_ratio * double(n)));
        for (std::size_t i = 0; i < n; ++i) {
            if (i < n_train)
                out.train.push_back(idx[i]);
            else if (i < n_train + n_val)
                out.val.push_back(idx[i]);
            else
                out.test.push_back(idx[i]);
        }
    } else {
        std::vector<std::size_t> rest;
        for (std::size_t i = 0; i < manifest.rows.size(); ++i) {
            if (manifest.rows[i].device == holdout_device)
                out.test.push_back(i);
            else
                rest.push_back(i);
        }
        require(!out.test.empty(), "holdout device has no samples");
        require(!rest.empty(), "no samples left for training after device holdout");
        shuffle(rest);
        // train/val ratio renormalized over the remaining devices
        const double tv = train_ratio + val_ratio;
        const std::size_t n_train =
            std::size_t(std::lround((tv > 0 ? train_ratio / tv : 1.0) * double(rest.size())));
        for (std::size_t i = 0; i < rest.size(); ++i)
            (i < n_train ? out.train : out.val).push_back(rest[i]);
    }
    return out;
}

}  // namespace m3fas
