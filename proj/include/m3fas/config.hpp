#pragma once

#include "m3fas/channel_sim.hpp"
#include "m3fas/echo_pipeline.hpp"
#include "m3fas/model.hpp"
#include "m3fas/signal_gen.hpp"

#include <cstdint>
#include <string>

namespace m3fas {

// Flat key=value configuration with section prefixes (signal., pipeline.,
// sim., model., train.). Unknown keys are rejected.

struct SignalSection {
    double sample_rate = 44100.0;
    double pilot_freq = 11025.0;
    Eigen::Index pilot_duration = 512;
    Eigen::Index gap_pilot_to_first_chirp = 8000;
    Eigen::Index gap_between_chirps = 3000;
    // Short chirps keep close-range echoes clear of the direct-path span.
    Eigen::Index chirp_duration = 48;
    double amplitude = 0.5;
    std::string window = "hamming";
    double group_f_start[3] = {12000.0, 14000.0, 16000.0};
    double group_f_end[3] = {17000.0, 19000.0, 21000.0};
};

struct PipelineSection {
    double highpass_cutoff = 10000.0;
    Eigen::Index echo_window = 60;
    Eigen::Index search_span = 600;
    Eigen::Index stft_window = 64;
    Eigen::Index stft_hop = 16;
    double adaptive_peak_ratio = 0.5;
    int highpass_taps = 255;
};

struct SimSection {
    double noise_snr_db = 15.0;
    Eigen::Index image_size = 128;
    double image_noise_sigma = 0.01;
    int image_blur_radius = 0;
};

struct ModelSection {
    Eigen::Index vision_size = 32;
    int block_layers[3] = {3, 3, 2};
    Eigen::Index channels[3] = {16, 32, 64};
    Eigen::Index fusion_grid[3] = {8, 4, 2};
    std::string fusion_levels = "123";  // subset of "123"
    std::string fusion_strategy = "ca";
};

struct TrainSection {
    int epochs = 20;
    int batch_size = 64;
    double lr = 1e-4;
    double weight_decay = 1e-5;
    double alpha = 0.5;
    std::string mode = "joint";  // joint | separate_vision | separate_acoustic
    std::uint64_t seed = 1;
    double split_train = 0.7;
    double split_val = 0.15;
    double split_test = 0.15;
    std::string split_mode = "random";  // random | cross_device
    int holdout_device = 0;
    double hter_threshold = 0.5;
};

struct Config {
    SignalSection signal;
    PipelineSection pipeline;
    SimSection sim;
    ModelSection model;
    TrainSection train;
};

Config parse_config_text(const std::string& text);
Config load_config(const std::string& path);
std::string config_to_text(const Config& cfg);

ProbeSignalConfig make_probe_config(const Config& cfg);
PipelineConfig make_pipeline_config(const Config& cfg);
ModelConfig make_model_config(const Config& cfg, std::uint64_t init_seed);
DatasetBuildConfig make_dataset_build_config(const Config& cfg);

}  // namespace m3fas
