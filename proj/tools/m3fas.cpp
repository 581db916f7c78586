#include "m3fas/channel_sim.hpp"
#include "m3fas/checkpoint.hpp"
#include "m3fas/config.hpp"
#include "m3fas/harness.hpp"
#include "m3fas/signal_gen.hpp"
#include "m3fas/wav_io.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvalidInput = 2;
constexpr int kExitMissingModality = 3;
constexpr int kExitNumericFailure = 4;

m3fas::Config load_config_or_default(const std::string& path) {
    if (path.empty()) return m3fas::Config{};
    return m3fas::load_config(path);
}

m3fas::Route parse_route(const std::string& r) {
    if (r == "v" || r == "vision") return m3fas::Route::vision;
    if (r == "a" || r == "acoustic") return m3fas::Route::acoustic;
    if (r == "f" || r == "fusion") return m3fas::Route::fusion;
    throw m3fas::InvalidInputError("route must be one of v|a|f");
}

int run(int argc, char** argv) {
    CLI::App app{"Multimodal face anti-spoofing toolkit: probe synthesis, acoustic "
                 "channel simulation, echo extraction, training, and evaluation"};
    app.require_subcommand(1);

    std::string config_path, out_path, data_dir, wav_path, ckpt_path, image_path, split = "test",
                route_str = "f";
    int n_per_class = 10, n_devices = 1;
    std::uint64_t seed = 1;

    auto* gen = app.add_subcommand("gen-signal", "Write the emitted probe signal as WAV");
    gen->add_option("--config", config_path, "flat key=value config file");
    gen->add_option("--out", out_path, "output WAV path")->required();

    auto* sim = app.add_subcommand("simulate", "Generate a labeled synthetic dataset");
    sim->add_option("--config", config_path, "flat key=value config file");
    sim->add_option("--n", n_per_class, "samples per (class, device)")->required();
    sim->add_option("--devices", n_devices, "number of simulated devices");
    sim->add_option("--out", data_dir, "output dataset directory")->required();
    sim->add_option("--seed", seed, "root seed");

    auto* ext = app.add_subcommand("extract", "Run the echo pipeline on one recording");
    ext->add_option("--config", config_path, "flat key=value config file");
    ext->add_option("--wav", wav_path, "input recording")->required();
    ext->add_option("--out", out_path, "output spectrogram container")->required();

    auto* trn = app.add_subcommand("train", "Train on a simulated dataset");
    trn->add_option("--config", config_path, "flat key=value config file");
    trn->add_option("--data", data_dir, "dataset directory with manifest.tsv")->required();
    trn->add_option("--out", ckpt_path, "output checkpoint path")->required();

    auto* evl = app.add_subcommand("eval", "Evaluate a checkpoint; TSV report on stdout");
    evl->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    evl->add_option("--data", data_dir, "dataset directory")->required();
    evl->add_option("--split", split, "train|val|test");

    auto* inf = app.add_subcommand("infer", "Score one sample");
    inf->add_option("--ckpt", ckpt_path, "checkpoint path")->required();
    inf->add_option("--image", image_path, "face image (PNG)");
    inf->add_option("--wav", wav_path, "acoustic recording (WAV)");
    inf->add_option("--route", route_str, "v|a|f");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);  // --help exits 0
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitInvalidInput;
    }

    if (gen->parsed()) {
        const m3fas::Config cfg = load_config_or_default(config_path);
        m3fas::write_wav(m3fas::assemble_probe_signal(m3fas::make_probe_config(cfg)), out_path);
        std::cout << "wrote " << out_path << "\n";
        return kExitOk;
    }
    if (sim->parsed()) {
        const m3fas::Config cfg = load_config_or_default(config_path);
        std::vector<m3fas::DeviceResponse> devices;
        for (int d = 0; d < n_devices; ++d)
            devices.push_back(m3fas::DeviceResponse::random(d, seed));
        const m3fas::DatasetManifest manifest = m3fas::build_dataset(
            n_per_class, devices, m3fas::make_dataset_build_config(cfg), data_dir, seed);
        std::cout << "wrote " << manifest.rows.size() << " samples under " << data_dir << "\n";
        return kExitOk;
    }
    if (ext->parsed()) {
        const m3fas::Config cfg = load_config_or_default(config_path);
        const m3fas::Waveform rec = m3fas::read_wav(wav_path);
        const m3fas::Spectrogram spec =
            m3fas::preprocess(rec, m3fas::make_pipeline_config(cfg));
        m3fas::Checkpoint container;
        container.add_f64("spectrogram", m3fas::spectrogram_to_row_major(spec.magnitudes),
                          {spec.magnitudes.rows(), spec.magnitudes.cols()});
        m3fas::save_checkpoint(container, out_path);
        std::cout << "wrote " << out_path << " (" << spec.magnitudes.rows() << "x"
                  << spec.magnitudes.cols() << " spectrogram)\n";
        return kExitOk;
    }
    if (trn->parsed()) {
        const m3fas::Config cfg = load_config_or_default(config_path);
        const m3fas::DatasetManifest manifest = m3fas::read_manifest(data_dir);
        const m3fas::TrainResult result = m3fas::train(manifest, cfg);
        m3fas::save_checkpoint(result.checkpoint, ckpt_path);
        std::cout << "best validation hter " << result.best_hter << " at epoch "
                  << result.best_epoch << "; wrote " << ckpt_path << "\n";
        return kExitOk;
    }
    if (evl->parsed()) {
        const m3fas::Checkpoint ckpt = m3fas::load_checkpoint(ckpt_path);
        const m3fas::DatasetManifest manifest = m3fas::read_manifest(data_dir);
        std::cout << m3fas::format_eval_tsv(m3fas::evaluate(ckpt, manifest, split));
        return kExitOk;
    }
    if (inf->parsed()) {
        const m3fas::Route route = parse_route(route_str);
        const m3fas::Checkpoint ckpt = m3fas::load_checkpoint(ckpt_path);
        std::optional<m3fas::Image> image;
        std::optional<m3fas::Waveform> rec;
        if (!image_path.empty()) image = m3fas::read_png(image_path);
        if (!wav_path.empty()) rec = m3fas::read_wav(wav_path);
        const m3fas::InferScores scores =
            m3fas::infer(ckpt, image ? &*image : nullptr, rec ? &*rec : nullptr, route);
        std::printf("head\tscore\n");
        if (scores.vision) std::printf("vision\t%.6f\n", *scores.vision);
        if (scores.acoustic) std::printf("acoustic\t%.6f\n", *scores.acoustic);
        if (scores.fusion) std::printf("fusion\t%.6f\n", *scores.fusion);
        return kExitOk;
    }
    return kExitInvalidInput;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const m3fas::MissingModalityError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitMissingModality;
    } catch (const m3fas::NumericFailureError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumericFailure;
    } catch (const m3fas::InvalidInputError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalidInput;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInvalidInput;
    }
}
