#include "m3fas/signal_gen.hpp"

#include <cmath>
#include <numbers>

namespace m3fas {

namespace {

// Hamming window value at sample n of a length-N window.
double hamming_at(Eigen::Index n, Eigen::Index len) {
    if (len == 1) return 1.0;
    return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(n) / double(len - 1));
}

}  // namespace

ProbeSignalConfig default_probe_config(double sample_rate, Eigen::Index chirp_duration,
                                       double amplitude) {
    ProbeSignalConfig cfg;
    cfg.sample_rate = sample_rate;
    const double groups[3][2] = {{12000.0, 17000.0}, {14000.0, 19000.0}, {16000.0, 21000.0}};
    for (int rep = 0; rep < 3; ++rep) {
        for (int g = 0; g < 3; ++g) {
            ChirpSpec spec;
            spec.f_start = groups[g][0];
            spec.f_end = groups[g][1];
            spec.duration_samples = chirp_duration;
            spec.amplitude = amplitude;
            cfg.chirp_specs.push_back(spec);
        }
    }
    return cfg;
}

void validate_chirp_spec(const ChirpSpec& spec, double sample_rate) {
    const double nyquist = sample_rate / 2.0;
    require(sample_rate > 0, "sample rate must be positive");
    require(spec.f_start < spec.f_end, "chirp sweep must increase: f_start < f_end");
    require(spec.f_start > 0 && spec.f_end < nyquist,
            "chirp frequencies must lie in (0, sample_rate/2)");
    require(spec.duration_samples >= 16, "chirp duration must be at least 16 samples");
    require(spec.amplitude > 0 && spec.amplitude <= 1.0, "chirp amplitude must be in (0, 1]");
}

void validate_probe_config(const ProbeSignalConfig& config) {
    require(config.sample_rate > 0, "sample rate must be positive");
    require(!config.chirp_specs.empty(), "probe needs a non-empty chirp list");
    require(config.chirp_specs.size() == 9, "probe requires exactly 9 chirps (3 groups x 3)");
    double min_fstart = config.chirp_specs[0].f_start;
    Eigen::Index max_dur = 0;
    for (const auto& spec : config.chirp_specs) {
        validate_chirp_spec(spec, config.sample_rate);
        min_fstart = std::min(min_fstart, spec.f_start);
        max_dur = std::max(max_dur, spec.duration_samples);
    }
    // Three repetitions of the same three-group sequence.
    for (int k = 0; k < 6; ++k) {
        const auto& a = config.chirp_specs[k];
        const auto& b = config.chirp_specs[k + 3];
        require(a.f_start == b.f_start && a.f_end == b.f_end &&
                    a.duration_samples == b.duration_samples,
                "chirp list must repeat the 3-group sequence three times");
    }
    require(config.pilot_freq > 0 && config.pilot_freq < config.sample_rate / 2.0,
            "pilot frequency must be below Nyquist");
    require(config.pilot_freq < min_fstart, "pilot frequency must sit below all chirp sweeps");
    require(config.pilot_duration_samples > 0, "pilot duration must be positive");
    require(config.gap_pilot_to_first_chirp > max_dur && config.gap_between_chirps > max_dur,
            "gaps must exceed the chirp duration");
    require(config.tail_samples >= 0, "tail must be nonnegative");
}

Waveform generate_chirp(const ChirpSpec& spec, double sample_rate) {
    validate_chirp_spec(spec, sample_rate);
    const Eigen::Index n = spec.duration_samples;
    Waveform out;
    out.sample_rate = sample_rate;
    out.samples.resize(n);
    // Phase is the integral of the linearly increasing instantaneous
    // frequency: f(t) = f0 + (f1-f0) * t/T.
    const double f0 = spec.f_start;
    const double slope = (spec.f_end - spec.f_start) / (double(n) / sample_rate);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double t = double(i) / sample_rate;
        const double phase = 2.0 * std::numbers::pi * (f0 * t + 0.5 * slope * t * t);
        out.samples[i] = spec.amplitude * std::sin(phase);
    }
    return out;
}

Waveform apply_window(const Waveform& w, WindowKind window) {
    require(w.size() > 0, "cannot window an empty waveform");
    if (window == WindowKind::none) return w;
    Waveform out = w;
    const Eigen::Index n = w.size();
    for (Eigen::Index i = 0; i < n; ++i) out.samples[i] *= hamming_at(i, n);
    return out;
}

Waveform generate_pilot(const ProbeSignalConfig& config) {
    require(config.pilot_freq > 0 && config.pilot_freq < config.sample_rate / 2.0,
            "pilot frequency must be below Nyquist");
    require(config.pilot_duration_samples > 0, "pilot duration must be positive");
    const Eigen::Index n = config.pilot_duration_samples;
    double amp = config.chirp_specs.empty() ? 0.5 : config.chirp_specs[0].amplitude;
    Waveform tone;
    tone.sample_rate = config.sample_rate;
    tone.samples.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        tone.samples[i] =
            amp * std::sin(2.0 * std::numbers::pi * config.pilot_freq * double(i) / config.sample_rate);
    }
    return apply_window(tone, config.window);
}

Eigen::Index probe_chirp_onset(const ProbeSignalConfig& config, int k) {
    require(k >= 0 && k < int(config.chirp_specs.size()), "chirp index out of range");
    Eigen::Index onset = config.pilot_duration_samples + config.gap_pilot_to_first_chirp;
    for (int j = 0; j < k; ++j)
        onset += config.chirp_specs[j].duration_samples + config.gap_between_chirps;
    return onset;
}

Eigen::Index probe_total_length(const ProbeSignalConfig& config) {
    const int last = int(config.chirp_specs.size()) - 1;
    return probe_chirp_onset(config, last) + config.chirp_specs[last].duration_samples +
           config.tail_samples;
}

Waveform assemble_probe_signal(const ProbeSignalConfig& config) {
    validate_probe_config(config);
    Waveform out;
    out.sample_rate = config.sample_rate;
    out.samples = Eigen::ArrayXd::Zero(probe_total_length(config));

    const Waveform pilot = generate_pilot(config);
    out.samples.segment(0, pilot.size()) = pilot.samples;

    for (int k = 0; k < int(config.chirp_specs.size()); ++k) {
        const Waveform chirp =
            apply_window(generate_chirp(config.chirp_specs[k], config.sample_rate), config.window);
        out.samples.segment(probe_chirp_onset(config, k), chirp.size()) = chirp.samples;
    }
    require(out.samples.isFinite().all(), "assembled probe contains non-finite samples");
    require(out.samples.abs().maxCoeff() <= 1.0, "assembled probe exceeds unit amplitude");
    return out;
}

std::vector<Waveform> probe_chirp_templates(const ProbeSignalConfig& config) {
    std::vector<Waveform> out;
    out.reserve(config.chirp_specs.size());
    for (const auto& spec : config.chirp_specs)
        out.push_back(apply_window(generate_chirp(spec, config.sample_rate), config.window));
    return out;
}

Waveform probe_pilot_template(const ProbeSignalConfig& config) { return generate_pilot(config); }

}  // namespace m3fas
