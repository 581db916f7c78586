#pragma once

#include "m3fas/checkpoint.hpp"
#include "m3fas/config.hpp"
#include "m3fas/dataset.hpp"
#include "m3fas/image.hpp"
#include "m3fas/metrics.hpp"
#include "m3fas/model.hpp"

#include <optional>
#include <string>
#include <vector>

namespace m3fas {

enum class TrainingMode { joint, separate_vision, separate_acoustic };
TrainingMode parse_training_mode(const std::string& name);

// Model-ready features for manifest rows: images as (3,S,S) and spectrograms
// as (1,F,T), both flattened row-major.
struct PreparedDataset {
    std::vector<Eigen::ArrayXd> images;
    std::vector<Eigen::ArrayXd> specs;
    Eigen::ArrayXd labels;
    std::vector<int> devices;
    Shape image_shape, spec_shape;  // per sample
};

PreparedDataset prepare_dataset(const DatasetManifest& manifest, const Config& cfg);
PreparedDataset prepare_rows(const DatasetManifest& manifest, const Config& cfg,
                             const std::vector<std::size_t>& rows);

Eigen::ArrayXd image_to_chw(const Image& img, Eigen::Index target_size);
Eigen::ArrayXd spectrogram_to_row_major(const Eigen::MatrixXd& magnitudes);

// 0-based argmin; ties resolved to the earliest epoch.
int best_epoch_index(const std::vector<double>& val_hters);

struct TrainResult {
    Checkpoint checkpoint;  // parameters from the best epoch of the selection head
    double best_hter = 1.0;
    int best_epoch = 0;  // 1-based
    std::vector<double> val_hter_history;    // selection head, one entry per epoch
    std::vector<double> train_loss_history;  // mean loss per epoch
    // Joint mode only: each auxiliary head snapshotted at its own best
    // validation epoch, for per-head comparisons against separate training.
    std::optional<Checkpoint> checkpoint_vision_best;
    std::optional<Checkpoint> checkpoint_acoustic_best;
};

// Joint mode optimizes L_f + alpha (L_v + L_a); the separate modes optimize a
// single head with the other branch untouched. Validation HTER is computed
// after every epoch and the best epoch's parameters are kept (joint mode
// selects on the fusion head, the deployment output).
TrainResult train(const DatasetManifest& manifest, const Config& cfg);

// Per-head score sets over a list of prepared rows, fusion-route forwards in
// inference mode.
struct HeadScores {
    ScoreSet vision, acoustic, fusion;
};
HeadScores score_rows(M3FASModel& model, const PreparedDataset& data,
                      const std::vector<std::size_t>& rows, int batch_size);

struct EvalRow {
    std::string metric;
    std::string head;
    double value = 0.0;
};
std::vector<EvalRow> evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                              const std::string& split_name);
std::string format_eval_tsv(const std::vector<EvalRow>& rows);

struct InferScores {
    std::optional<double> vision, acoustic, fusion;
};
// The acoustic path runs the echo pipeline on the recording; preprocessing
// failures surface so callers can fall back to the vision route.
InferScores infer(const Checkpoint& ckpt, const Image* image, const Waveform* recording,
                  Route route);

// Checkpoint <-> model bridging.
Checkpoint make_model_checkpoint(const M3FASModel& model, const Config& cfg, double best_hter,
                                 int best_epoch);
void load_model_from_checkpoint(const Checkpoint& ckpt, M3FASModel& model);
Config config_from_checkpoint(const Checkpoint& ckpt);
M3FASModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace m3fas
