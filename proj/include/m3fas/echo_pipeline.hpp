#pragma once

#include "m3fas/signal_gen.hpp"
#include "m3fas/types.hpp"

#include <vector>

namespace m3fas {

// Settings for the recording -> spectrogram chain. Templates are the emitted
// pilot/chirps as the receiver knows them; the geometry fields must match the
// probe layout. echo_window is fixed at 60 samples.
struct PipelineConfig {
    double highpass_cutoff = 10000.0;
    Waveform pilot_template;
    std::vector<Waveform> chirp_templates;  // 9, in emission order
    Eigen::Index gap_pilot_to_first_chirp = 8000;
    Eigen::Index gap_between_chirps = 3000;
    Eigen::Index echo_window = 60;
    Eigen::Index search_span = 600;
    Eigen::Index stft_window = 64;
    Eigen::Index stft_hop = 16;
    // An adaptive-search iteration only counts when every clip's correlation
    // peak reaches this fraction of that clip's best peak over all iterations.
    double adaptive_peak_ratio = 0.5;
    // Direct-path confidence: the correlation peak must exceed this multiple
    // of the mean |correlation| or the clip is treated as having no chirp.
    double direct_peak_min_par = 8.0;
    int highpass_taps = 255;
};

PipelineConfig make_pipeline_config(const ProbeSignalConfig& probe);
void validate_pipeline_config(const PipelineConfig& cfg);

// Nine clips cut from a recording, one per emitted chirp. Each clip starts at
// the chirp's direct-path arrival and is chirp-length + search_span long.
// direct_peaks is filled by remove_direct_path and anchors echo positions,
// which are reported relative to the direct-path arrival.
struct ChirpClipSet {
    std::vector<Waveform> clips;
    std::vector<Eigen::Index> onsets;
    std::vector<Eigen::Index> direct_peaks;
};

struct AdaptiveIteration {
    Eigen::Index window_start = 0;
    double mean_position = 0.0;
    double std_dev = 0.0;
    bool valid = false;
};

// The concatenated face echoes (9 x echo_window samples) plus the shared
// window position and the per-iteration statistics that selected it.
struct FaceEcho {
    Waveform echo;
    Eigen::Index per_clip_position = 0;
    std::vector<AdaptiveIteration> position_std_history;
};

struct Spectrogram {
    Eigen::MatrixXd magnitudes;   // F x T, F = stft_window/2 + 1
    double freq_resolution = 0.0; // Hz per bin
    double time_resolution = 0.0; // samples per frame hop
};

// Linear-phase FIR high-pass; group delay is compensated so sample indices
// stay comparable with the input. Stopband (<= 8 kHz) attenuation >= 40 dB,
// passband (>= 12 kHz) ripple <= 1 dB with the default 255-tap design.
Waveform highpass_filter(const Waveform& w, double cutoff, int taps = 255);

// Valid-mode sliding dot product: out[i] = sum_j signal[i+j] * template[j].
Eigen::ArrayXd cross_correlate(const Waveform& signal, const Waveform& tmpl);

// Index of the pilot's direct-path arrival. The pilot tone is narrowband, so
// the raw correlation has carrier-period ambiguity under device coloring; the
// peak of the envelope (correlation against the analytic pilot) is refined
// against the first chirp's wideband direct-path peak.
Eigen::Index locate_pilot(const Waveform& rec, const PipelineConfig& cfg);

// Deterministic slicing of the nine chirp clips from the pilot location and
// the known gap layout.
ChirpClipSet segment_chirps(const Waveform& rec, Eigen::Index pilot_idx,
                            const PipelineConfig& cfg);

// Zero the chirp-length span at each clip's strongest correlation peak (the
// direct path), leaving face and background echoes in place.
ChirpClipSet remove_direct_path(const ChirpClipSet& clips, const PipelineConfig& cfg);

struct AdaptiveResult {
    Eigen::Index position = 0;
    std::vector<AdaptiveIteration> history;
};

// Slide an echo_window-sample window (stride 1) over each clip; each
// iteration correlates the window content against the chirp template to get
// nine candidate echo positions. The iteration with minimum position std-dev
// wins (ties: earliest window) and the rounded mean is the shared position.
AdaptiveResult locate_face_echo_adaptive(const ChirpClipSet& clips, const PipelineConfig& cfg);

// Cut echo_window samples at `position` from every clip and concatenate them
// in clip order.
FaceEcho extract_face_echoes(const ChirpClipSet& clips, Eigen::Index position,
                             const PipelineConfig& cfg);

// Magnitude STFT (Hann window), log1p compression, then min-max
// normalization of the whole grid to [0, 1].
Spectrogram compute_spectrogram(const FaceEcho& echo, const PipelineConfig& cfg);
Spectrogram compute_spectrogram(const Waveform& echo, const PipelineConfig& cfg);

struct PreprocessResult {
    Spectrogram spectrogram;
    FaceEcho face_echo;
    Eigen::Index pilot_index = 0;
};

// The full chain: high-pass, pilot location, chirp segmentation, direct-path
// removal, adaptive face-echo extraction, STFT.
PreprocessResult preprocess_full(const Waveform& rec, const PipelineConfig& cfg);
Spectrogram preprocess(const Waveform& rec, const PipelineConfig& cfg);

}  // namespace m3fas
