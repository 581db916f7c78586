#pragma once

#include "m3fas/dataset.hpp"
#include "m3fas/image.hpp"
#include "m3fas/signal_gen.hpp"
#include "m3fas/types.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace m3fas {

// Smooth per-device gain curve over the probe band, fixed by the device id.
// Emulates speaker/microphone frequency-response diversity.
struct DeviceResponse {
    int id = 0;
    double band_lo = 10000.0;
    double band_hi = 22000.0;
    Eigen::ArrayXd knot_gains;  // linear gains at evenly spaced knots; empty = flat

    double gain_at(double freq_hz) const;
    static DeviceResponse flat(int id = 0);
    // Random +-6 dB curve drawn from the device id and a root seed.
    static DeviceResponse random(int id, std::uint64_t seed, int n_knots = 13);
};

// One acoustic capture: direct path, face echo (short impulse response),
// single-tap background echo, band-limited noise, device coloring.
struct ChannelScenario {
    Eigen::Index direct_path_delay = 400;
    double direct_path_gain = 0.9;
    Eigen::Index face_echo_delay = 90;  // samples after the direct path
    Eigen::ArrayXd face_impulse_response;  // length <= 60
    Eigen::Index background_echo_delay = 320;  // samples after the direct path
    double background_gain = 0.1;
    double noise_snr_db = std::numeric_limits<double>::infinity();
    DeviceResponse device_response = DeviceResponse::flat();
    Eigen::Index recording_length = 0;  // 0 = size automatically
};

void validate_scenario(const ChannelScenario& scenario);

enum class SurfaceKind { live_face, print_attack, replay_attack };

struct SurfaceModel {
    SurfaceKind kind = SurfaceKind::live_face;
    // Depth-profile coefficients steering the impulse-response draw.
    double relief_scale = 1.0;
};

// Impulse response of the presented surface: a live face yields several
// distinct taps (3-D relief), flat attack media at most two.
Eigen::ArrayXd make_face_impulse_response(const SurfaceModel& surface, std::uint64_t seed);

struct SyntheticSample {
    Image image;
    Waveform recording;
    SampleLabel label = SampleLabel::bonafide;
    ChannelScenario scenario;
};

// probe convolved with [direct tap + face IR + background tap], colored by
// the device response, plus band-limited noise at the requested SNR.
// Deterministic given the seed.
Waveform simulate_recording(const Waveform& probe, const ChannelScenario& scenario,
                            std::uint64_t seed);

struct FaceImageConfig {
    Eigen::Index size = 128;
    double pixel_noise_sigma = 0.01;
    int blur_radius = 0;  // optional box blur, 0 = off
};

Image synth_face_image(const SurfaceModel& surface, std::uint64_t seed,
                       const FaceImageConfig& cfg = {});

struct DatasetBuildConfig {
    ProbeSignalConfig probe;
    FaceImageConfig image;
    double noise_snr_db = 15.0;
    Eigen::Index min_face_delay = 65;
    Eigen::Index max_face_delay = 115;
};

// Draw a full labeled scenario + surface for one sample.
struct DrawnSample {
    ChannelScenario scenario;
    SurfaceModel surface;
    SampleLabel label = SampleLabel::bonafide;
};
DrawnSample draw_sample(const DatasetBuildConfig& cfg, const DeviceResponse& device, bool bonafide,
                        std::uint64_t seed);

// Write n_per_class samples per (class, device) under out_dir: PNG images,
// WAV recordings, and manifest.tsv. Deterministic given the seed.
DatasetManifest build_dataset(int n_per_class, const std::vector<DeviceResponse>& devices,
                              const DatasetBuildConfig& cfg, const std::string& out_dir,
                              std::uint64_t seed);

}  // namespace m3fas
