#pragma once

#include "m3fas/types.hpp"

#include <string>
#include <vector>

namespace m3fas {

enum class WindowKind { hamming, none };

// One linear frequency sweep. Frequencies in Hz, duration in samples,
// amplitude the peak value of the (unwindowed) sweep.
struct ChirpSpec {
    double f_start = 0.0;
    double f_end = 0.0;
    Eigen::Index duration_samples = 0;
    double amplitude = 0.5;
};

// Layout of the emitted probe: a pilot tone burst followed, after a long gap,
// by nine windowed chirps separated by shorter gaps. The chirp list must be
// three repetitions of the three-group sweep sequence.
struct ProbeSignalConfig {
    double sample_rate = 44100.0;
    double pilot_freq = 11025.0;
    Eigen::Index pilot_duration_samples = 512;
    Eigen::Index gap_pilot_to_first_chirp = 8000;
    Eigen::Index gap_between_chirps = 3000;
    std::vector<ChirpSpec> chirp_specs;  // exactly 9
    WindowKind window = WindowKind::hamming;
    Eigen::Index tail_samples = 1024;
};

// Default probe: three sweep groups 12-17 kHz, 14-19 kHz, 16-21 kHz, each
// repeated three times in sequence. Chirp duration defaults to 48 samples so
// that a face echo from typical capture distances clears the direct path
// before the next reflection arrives; see ProbeSignalConfig docs.
ProbeSignalConfig default_probe_config(double sample_rate = 44100.0,
                                       Eigen::Index chirp_duration = 48,
                                       double amplitude = 0.5);

void validate_chirp_spec(const ChirpSpec& spec, double sample_rate);
void validate_probe_config(const ProbeSignalConfig& config);

// Linear sweep from f_start to f_end over the requested duration.
// Instantaneous frequency increases linearly; phase starts at zero.
Waveform generate_chirp(const ChirpSpec& spec, double sample_rate);

// Pointwise product with a window of equal length. `none` is the identity.
Waveform apply_window(const Waveform& w, WindowKind window);

// Windowed sinusoidal tone burst at the pilot frequency.
Waveform generate_pilot(const ProbeSignalConfig& config);

// Silence-padded concatenation:
//   [pilot][gap 8000][chirp1][gap 3000][chirp2]...[chirp9][tail]
// Chirp onsets are deterministic; query them with probe_chirp_onset.
Waveform assemble_probe_signal(const ProbeSignalConfig& config);

// Onset (sample index into the assembled probe) of chirp k, 0-based.
Eigen::Index probe_chirp_onset(const ProbeSignalConfig& config, int k);

// Total length of the assembled probe in samples.
Eigen::Index probe_total_length(const ProbeSignalConfig& config);

// The windowed chirp templates in emission order, as the receiver will use
// them for matched filtering.
std::vector<Waveform> probe_chirp_templates(const ProbeSignalConfig& config);
Waveform probe_pilot_template(const ProbeSignalConfig& config);

}  // namespace m3fas
