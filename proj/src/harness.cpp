#include "m3fas/harness.hpp"

#include "m3fas/adam.hpp"
#include "m3fas/echo_pipeline.hpp"
#include "m3fas/rng.hpp"
#include "m3fas/wav_io.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

namespace m3fas {

namespace {

double score_of_logit(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

Tensor batch_tensor(const std::vector<Eigen::ArrayXd>& rows, const Shape& per_sample,
                    const std::vector<std::size_t>& idx) {
    Shape shape;
    shape.push_back(Eigen::Index(idx.size()));
    for (Eigen::Index d : per_sample) shape.push_back(d);
    Tensor out = Tensor::zeros(shape);
    const Eigen::Index per = shape_numel(per_sample);
    for (std::size_t b = 0; b < idx.size(); ++b)
        out.value().segment(Eigen::Index(b) * per, per) = rows[idx[b]];
    return out;
}

}  // namespace

TrainingMode parse_training_mode(const std::string& name) {
    if (name == "joint") return TrainingMode::joint;
    if (name == "separate_vision") return TrainingMode::separate_vision;
    if (name == "separate_acoustic") return TrainingMode::separate_acoustic;
    throw InvalidInputError("unknown training mode: " + name);
}

Eigen::ArrayXd image_to_chw(const Image& img, Eigen::Index target_size) {
    const Image scaled = (img.height == target_size && img.width == target_size)
                             ? img
                             : downscale_area(img, target_size, target_size);
    Eigen::ArrayXd out(3 * target_size * target_size);
    for (int c = 0; c < 3; ++c)
        for (Eigen::Index y = 0; y < target_size; ++y)
            for (Eigen::Index x = 0; x < target_size; ++x)
                out[(c * target_size + y) * target_size + x] = scaled.at(y, x, c);
    return out;
}

Eigen::ArrayXd spectrogram_to_row_major(const Eigen::MatrixXd& magnitudes) {
    Eigen::ArrayXd out(magnitudes.size());
    for (Eigen::Index f = 0; f < magnitudes.rows(); ++f)
        for (Eigen::Index t = 0; t < magnitudes.cols(); ++t)
            out[f * magnitudes.cols() + t] = magnitudes(f, t);
    return out;
}

PreparedDataset prepare_rows(const DatasetManifest& manifest, const Config& cfg,
                             const std::vector<std::size_t>& rows) {
    namespace fs = std::filesystem;
    const PipelineConfig pipeline = make_pipeline_config(cfg);
    const Eigen::Index vs = cfg.model.vision_size;

    PreparedDataset out;
    out.image_shape = {3, vs, vs};
    out.images.resize(manifest.rows.size());
    out.specs.resize(manifest.rows.size());
    out.labels = Eigen::ArrayXd::Zero(Eigen::Index(manifest.rows.size()));
    out.devices.resize(manifest.rows.size());

    for (std::size_t i : rows) {
        const ManifestRow& row = manifest.rows[i];
        const Image img = read_png((fs::path(manifest.root) / row.image_path).string());
        out.images[i] = image_to_chw(img, vs);
        const Waveform rec = read_wav((fs::path(manifest.root) / row.wav_path).string());
        const Spectrogram spec = preprocess(rec, pipeline);
        if (out.spec_shape.empty())
            out.spec_shape = {1, spec.magnitudes.rows(), spec.magnitudes.cols()};
        out.specs[i] = spectrogram_to_row_major(spec.magnitudes);
        out.labels[Eigen::Index(i)] = row.label == SampleLabel::bonafide ? 1.0 : 0.0;
        out.devices[i] = row.device;
    }
    return out;
}

PreparedDataset prepare_dataset(const DatasetManifest& manifest, const Config& cfg) {
    std::vector<std::size_t> all(manifest.rows.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return prepare_rows(manifest, cfg, all);
}

int best_epoch_index(const std::vector<double>& val_hters) {
    require(!val_hters.empty(), "best_epoch_index: empty history");
    int best = 0;
    for (int i = 1; i < int(val_hters.size()); ++i)
        if (val_hters[std::size_t(i)] < val_hters[std::size_t(best)]) best = i;
    return best;
}

HeadScores score_rows(M3FASModel& model, const PreparedDataset& data,
                      const std::vector<std::size_t>& rows, int batch_size) {
    require(!rows.empty(), "score_rows: empty split");
    HeadScores out;
    const Eigen::Index n = Eigen::Index(rows.size());
    out.vision.scores.resize(n);
    out.acoustic.scores.resize(n);
    out.fusion.scores.resize(n);
    out.vision.labels.resize(n);

    for (std::size_t start = 0; start < rows.size(); start += std::size_t(batch_size)) {
        std::vector<std::size_t> chunk(
            rows.begin() + std::ptrdiff_t(start),
            rows.begin() + std::ptrdiff_t(std::min(rows.size(), start + std::size_t(batch_size))));
        Tensor images = batch_tensor(data.images, data.image_shape, chunk);
        Tensor specs = batch_tensor(data.specs, data.spec_shape, chunk);
        ModelOutput fwd = model_forward(model, &images, &specs, Route::fusion, false);
        for (std::size_t b = 0; b < chunk.size(); ++b) {
            const Eigen::Index i = Eigen::Index(start + b);
            out.vision.scores[i] = score_of_logit(fwd.logit_vision.value()[Eigen::Index(b)]);
            out.acoustic.scores[i] = score_of_logit(fwd.logit_acoustic.value()[Eigen::Index(b)]);
            out.fusion.scores[i] = score_of_logit(fwd.logit_fusion.value()[Eigen::Index(b)]);
            out.vision.labels[i] = int(data.labels[Eigen::Index(chunk[b])]);
        }
    }
    out.acoustic.labels = out.vision.labels;
    out.fusion.labels = out.vision.labels;
    return out;
}

namespace {

struct Snapshot {
    std::vector<Eigen::ArrayXd> params, state;
};

Snapshot take_snapshot(const M3FASModel& model) {
    Snapshot s;
    for (const auto& [name, t] : model.parameters) s.params.push_back(t.value());
    for (const auto& [name, t] : model.state) s.state.push_back(t.value());
    return s;
}

void restore_snapshot(M3FASModel& model, const Snapshot& s) {
    for (std::size_t i = 0; i < model.parameters.size(); ++i)
        model.parameters[i].second.value() = s.params[i];
    for (std::size_t i = 0; i < model.state.size(); ++i)
        model.state[i].second.value() = s.state[i];
}

// Validation HTERs per head. In joint mode all three are measured; in the
// separate modes only the trained head (the others stay at 0.5 sentinel).
struct ValHters {
    double vision = 0.5, acoustic = 0.5, fusion = 0.5;
};

ValHters validation_hters(M3FASModel& model, const PreparedDataset& data,
                          const std::vector<std::size_t>& val_rows, TrainingMode mode,
                          int batch_size, double threshold) {
    ValHters out;
    if (mode == TrainingMode::joint) {
        HeadScores hs = score_rows(model, data, val_rows, batch_size);
        out.vision = hter(confusion_at(hs.vision, threshold));
        out.acoustic = hter(confusion_at(hs.acoustic, threshold));
        out.fusion = hter(confusion_at(hs.fusion, threshold));
        return out;
    }
    ScoreSet scores;
    const Eigen::Index n = Eigen::Index(val_rows.size());
    scores.scores.resize(n);
    scores.labels.resize(n);
    {
        const bool vision = mode == TrainingMode::separate_vision;
        for (std::size_t start = 0; start < val_rows.size(); start += std::size_t(batch_size)) {
            std::vector<std::size_t> chunk(
                val_rows.begin() + std::ptrdiff_t(start),
                val_rows.begin() +
                    std::ptrdiff_t(std::min(val_rows.size(), start + std::size_t(batch_size))));
            Tensor in = vision ? batch_tensor(data.images, data.image_shape, chunk)
                               : batch_tensor(data.specs, data.spec_shape, chunk);
            ModelOutput fwd = vision
                                  ? model_forward(model, &in, nullptr, Route::vision, false)
                                  : model_forward(model, nullptr, &in, Route::acoustic, false);
            const Tensor& logit = vision ? fwd.logit_vision : fwd.logit_acoustic;
            for (std::size_t b = 0; b < chunk.size(); ++b) {
                scores.scores[Eigen::Index(start + b)] =
                    score_of_logit(logit.value()[Eigen::Index(b)]);
                scores.labels[Eigen::Index(start + b)] =
                    int(data.labels[Eigen::Index(chunk[b])]);
            }
        }
    }
    const double h = hter(confusion_at(scores, threshold));
    (mode == TrainingMode::separate_vision ? out.vision : out.acoustic) = h;
    return out;
}

}  // namespace

TrainResult train(const DatasetManifest& manifest, const Config& cfg) {
    const TrainingMode mode = parse_training_mode(cfg.train.mode);
    const SplitMode split_mode = cfg.train.split_mode == "cross_device"
                                     ? SplitMode::cross_device
                                     : SplitMode::random;
    require(cfg.train.split_mode == "random" || cfg.train.split_mode == "cross_device",
            "train.split_mode must be random or cross_device");
    const SplitIndices split =
        split_dataset(manifest, split_mode, cfg.train.split_train, cfg.train.split_val,
                      cfg.train.split_test, cfg.train.seed, cfg.train.holdout_device);
    if (split.train.empty() || split.val.empty())
        throw InvalidInputError("train: empty train or validation split");

    std::vector<std::size_t> needed = split.train;
    needed.insert(needed.end(), split.val.begin(), split.val.end());
    PreparedDataset data = prepare_rows(manifest, cfg, needed);

    ModelConfig model_cfg = make_model_config(cfg, mix_seed(cfg.train.seed, 0x1417ull));
    M3FASModel model = build_model(model_cfg);

    AdamConfig adam_cfg;
    adam_cfg.lr = cfg.train.lr;
    adam_cfg.weight_decay = cfg.train.weight_decay;
    Adam optimizer(model.trainable(), adam_cfg);

    TrainResult result;
    Snapshot best;
    Snapshot best_vision, best_acoustic;
    double best_vision_hter = 2.0, best_acoustic_hter = 2.0;
    int best_vision_epoch = 0, best_acoustic_epoch = 0;
    const int batch = cfg.train.batch_size;
    require(batch >= 1, "train.batch_size must be >= 1");

    for (int epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
        std::vector<std::size_t> order = split.train;
        Rng shuffle_rng(mix_seed(cfg.train.seed, 0xe90c4ull + std::uint64_t(epoch)));
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[std::size_t(shuffle_rng.randint(0, std::int64_t(i) - 1))]);

        double epoch_loss = 0.0;
        int n_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += std::size_t(batch)) {
            std::vector<std::size_t> chunk(
                order.begin() + std::ptrdiff_t(start),
                order.begin() + std::ptrdiff_t(std::min(order.size(), start + std::size_t(batch))));
            Eigen::ArrayXd labels(Eigen::Index(chunk.size()));
            for (std::size_t b = 0; b < chunk.size(); ++b)
                labels[Eigen::Index(b)] = data.labels[Eigen::Index(chunk[b])];

            Tape tape;
            TapeScope scope(tape);
            Tensor loss;
            if (mode == TrainingMode::joint) {
                Tensor images = batch_tensor(data.images, data.image_shape, chunk);
                Tensor specs = batch_tensor(data.specs, data.spec_shape, chunk);
                ModelOutput fwd = model_forward(model, &images, &specs, Route::fusion, true);
                loss = total_loss(fwd, labels, cfg.train.alpha);
            } else if (mode == TrainingMode::separate_vision) {
                Tensor images = batch_tensor(data.images, data.image_shape, chunk);
                ModelOutput fwd = model_forward(model, &images, nullptr, Route::vision, true);
                loss = bce_loss(fwd.logit_vision, labels);
            } else {
                Tensor specs = batch_tensor(data.specs, data.spec_shape, chunk);
                ModelOutput fwd = model_forward(model, nullptr, &specs, Route::acoustic, true);
                loss = bce_loss(fwd.logit_acoustic, labels);
            }
            const double loss_v = loss.item();
            if (!std::isfinite(loss_v)) {
                std::ostringstream os;
                os << "train: non-finite loss " << loss_v << " at epoch " << epoch << ", batch "
                   << n_batches + 1 << " (lr=" << cfg.train.lr << ", mode=" << cfg.train.mode
                   << ")";
                throw NumericFailureError(os.str());
            }
            epoch_loss += loss_v;
            ++n_batches;
            backward(loss);
            optimizer.step();
        }
        result.train_loss_history.push_back(epoch_loss / std::max(1, n_batches));

        const ValHters val =
            validation_hters(model, data, split.val, mode, batch, cfg.train.hter_threshold);
        const double selected = mode == TrainingMode::joint ? val.fusion
                                : mode == TrainingMode::separate_vision ? val.vision
                                                                        : val.acoustic;
        result.val_hter_history.push_back(selected);
        if (result.val_hter_history.size() == 1 || selected < result.best_hter) {
            result.best_hter = selected;
            result.best_epoch = epoch;
            best = take_snapshot(model);
        }
        if (mode == TrainingMode::joint) {
            // Track each auxiliary head at its own optimum as well, so joint
            // training can be compared per head against separate training.
            if (val.vision < best_vision_hter) {
                best_vision_hter = val.vision;
                best_vision_epoch = epoch;
                best_vision = take_snapshot(model);
            }
            if (val.acoustic < best_acoustic_hter) {
                best_acoustic_hter = val.acoustic;
                best_acoustic_epoch = epoch;
                best_acoustic = take_snapshot(model);
            }
        }
    }

    if (mode == TrainingMode::joint) {
        restore_snapshot(model, best_vision);
        result.checkpoint_vision_best =
            make_model_checkpoint(model, cfg, best_vision_hter, best_vision_epoch);
        restore_snapshot(model, best_acoustic);
        result.checkpoint_acoustic_best =
            make_model_checkpoint(model, cfg, best_acoustic_hter, best_acoustic_epoch);
    }
    restore_snapshot(model, best);
    result.checkpoint = make_model_checkpoint(model, cfg, result.best_hter, result.best_epoch);
    return result;
}

Checkpoint make_model_checkpoint(const M3FASModel& model, const Config& cfg, double best_hter,
                                 int best_epoch) {
    Checkpoint ckpt;
    ckpt.add_text("__meta__/config", config_to_text(cfg));
    ckpt.add_f64("__meta__/best_hter", Eigen::ArrayXd::Constant(1, best_hter), {1});
    ckpt.add_i64("__meta__/best_epoch", best_epoch);
    for (const auto& [name, t] : model.parameters) ckpt.add_f64("param/" + name, t.value(), t.shape());
    for (const auto& [name, t] : model.state) ckpt.add_f64("state/" + name, t.value(), t.shape());
    return ckpt;
}

Config config_from_checkpoint(const Checkpoint& ckpt) {
    return parse_config_text(ckpt.get_text("__meta__/config"));
}

void load_model_from_checkpoint(const Checkpoint& ckpt, M3FASModel& model) {
    auto load_into = [&ckpt](const std::string& full_name, Tensor& t) {
        const CheckpointRecord* rec = ckpt.find(full_name);
        require(rec != nullptr, "checkpoint record missing: " + full_name);
        if (rec->numel() != t.size())
            throw InvalidInputError("checkpoint shape mismatch for record " + full_name +
                                    ": file has " + std::to_string(rec->numel()) +
                                    " values, model expects " + std::to_string(t.size()));
        t.value() = ckpt.get_f64(full_name);
    };
    for (auto& [name, t] : model.parameters) load_into("param/" + name, t);
    for (auto& [name, t] : model.state) load_into("state/" + name, t);
}

M3FASModel model_from_checkpoint(const Checkpoint& ckpt) {
    const Config cfg = config_from_checkpoint(ckpt);
    M3FASModel model = build_model(make_model_config(cfg, mix_seed(cfg.train.seed, 0x1417ull)));
    load_model_from_checkpoint(ckpt, model);
    return model;
}

std::vector<EvalRow> evaluate(const Checkpoint& ckpt, const DatasetManifest& manifest,
                              const std::string& split_name) {
    const Config cfg = config_from_checkpoint(ckpt);
    M3FASModel model = model_from_checkpoint(ckpt);

    const SplitMode split_mode = cfg.train.split_mode == "cross_device"
                                     ? SplitMode::cross_device
                                     : SplitMode::random;
    const SplitIndices split =
        split_dataset(manifest, split_mode, cfg.train.split_train, cfg.train.split_val,
                      cfg.train.split_test, cfg.train.seed, cfg.train.holdout_device);
    const std::vector<std::size_t>* rows = nullptr;
    if (split_name == "train") rows = &split.train;
    else if (split_name == "val") rows = &split.val;
    else if (split_name == "test") rows = &split.test;
    else throw InvalidInputError("evaluate: unknown split '" + split_name + "'");
    if (rows->empty()) throw InvalidInputError("evaluate: split '" + split_name + "' is empty");

    const PreparedDataset data = prepare_rows(manifest, cfg, *rows);
    HeadScores scores = score_rows(model, data, *rows, cfg.train.batch_size);

    std::vector<EvalRow> report;
    const std::pair<std::string, const ScoreSet*> heads[3] = {
        {"vision", &scores.vision}, {"acoustic", &scores.acoustic}, {"fusion", &scores.fusion}};
    for (const auto& [head, set] : heads) {
        report.push_back({"auc", head, auc(*set)});
        report.push_back({"acc", head, acc(confusion_at(*set, cfg.train.hter_threshold))});
        report.push_back({"hter", head, hter(confusion_at(*set, cfg.train.hter_threshold))});
        report.push_back({"eer", head, eer(*set)});
    }
    return report;
}

std::string format_eval_tsv(const std::vector<EvalRow>& rows) {
    std::ostringstream os;
    os << "metric\thead\tvalue\n";
    os.precision(6);
    os << std::fixed;
    for (const auto& row : rows) os << row.metric << '\t' << row.head << '\t' << row.value << '\n';
    return os.str();
}

InferScores infer(const Checkpoint& ckpt, const Image* image, const Waveform* recording,
                  Route route) {
    const Config cfg = config_from_checkpoint(ckpt);
    M3FASModel model = model_from_checkpoint(ckpt);

    const bool need_vision = route != Route::acoustic;
    const bool need_acoustic = route != Route::vision;
    if (need_vision && image == nullptr)
        throw MissingModalityError("infer: this route requires an image");
    if (need_acoustic && recording == nullptr)
        throw MissingModalityError("infer: this route requires a recording");

    Tensor image_t, spec_t;
    if (need_vision) {
        Shape shape = {1, 3, cfg.model.vision_size, cfg.model.vision_size};
        image_t = Tensor::from_array(shape, image_to_chw(*image, cfg.model.vision_size));
    }
    if (need_acoustic) {
        const Spectrogram spec = preprocess(*recording, make_pipeline_config(cfg));
        Shape shape = {1, 1, spec.magnitudes.rows(), spec.magnitudes.cols()};
        spec_t = Tensor::from_array(shape, spectrogram_to_row_major(spec.magnitudes));
    }

    ModelOutput fwd = model_forward(model, need_vision ? &image_t : nullptr,
                                    need_acoustic ? &spec_t : nullptr, route, false);
    InferScores out;
    if (fwd.logit_vision.defined()) out.vision = score_of_logit(fwd.logit_vision.value()[0]);
    if (fwd.logit_acoustic.defined())
        out.acoustic = score_of_logit(fwd.logit_acoustic.value()[0]);
    if (fwd.logit_fusion.defined()) out.fusion = score_of_logit(fwd.logit_fusion.value()[0]);
    return out;
}

}  // namespace m3fas
