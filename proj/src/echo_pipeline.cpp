#include "m3fas/echo_pipeline.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace m3fas {

namespace {

double sinc(double x) {
    if (std::abs(x) < 1e-12) return 1.0;
    return std::sin(std::numbers::pi * x) / (std::numbers::pi * x);
}

// Argmax by absolute value; first index wins on ties.
Eigen::Index abs_argmax(const Eigen::ArrayXd& v) {
    Eigen::Index best = 0;
    double best_val = -1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double a = std::abs(v[i]);
        if (a > best_val) {
            best_val = a;
            best = i;
        }
    }
    return best;
}

Eigen::Index layout_span(const PipelineConfig& cfg) {
    Eigen::Index span = cfg.pilot_template.size() + cfg.gap_pilot_to_first_chirp;
    for (std::size_t k = 0; k + 1 < cfg.chirp_templates.size(); ++k)
        span += cfg.chirp_templates[k].size() + cfg.gap_between_chirps;
    span += cfg.chirp_templates.back().size() + cfg.search_span;
    return span;
}

// Hilbert transform via the analytic signal (FFT method).
Eigen::ArrayXd hilbert_of(const Eigen::ArrayXd& x) {
    const Eigen::Index n = x.size();
    std::vector<std::complex<double>> time(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) time[std::size_t(i)] = x[i];
    std::vector<std::complex<double>> freq(static_cast<std::size_t>(n));
    Eigen::FFT<double> fft;
    fft.fwd(freq, time);
    for (Eigen::Index k = 1; k < n; ++k) {
        if (2 * k < n) freq[std::size_t(k)] *= 2.0;
        else if (2 * k > n) freq[std::size_t(k)] = 0.0;
    }
    fft.inv(time, freq);
    Eigen::ArrayXd out(n);
    for (Eigen::Index i = 0; i < n; ++i) out[i] = time[std::size_t(i)].imag();
    return out;
}

}  // namespace

PipelineConfig make_pipeline_config(const ProbeSignalConfig& probe) {
    validate_probe_config(probe);
    PipelineConfig cfg;
    cfg.pilot_template = probe_pilot_template(probe);
    cfg.chirp_templates = probe_chirp_templates(probe);
    cfg.gap_pilot_to_first_chirp = probe.gap_pilot_to_first_chirp;
    cfg.gap_between_chirps = probe.gap_between_chirps;
    validate_pipeline_config(cfg);
    return cfg;
}

void validate_pipeline_config(const PipelineConfig& cfg) {
    require(cfg.pilot_template.size() > 0, "pipeline config needs a pilot template");
    require(cfg.chirp_templates.size() == 9, "pipeline config needs 9 chirp templates");
    require(cfg.echo_window == 60, "echo window is fixed at 60 samples");
    require(cfg.search_span > cfg.echo_window, "search span must exceed the echo window");
    require(cfg.stft_hop > 0 && cfg.stft_hop <= cfg.stft_window,
            "stft hop must be in (0, stft_window]");
    require(cfg.adaptive_peak_ratio > 0.0 && cfg.adaptive_peak_ratio < 1.0,
            "adaptive peak ratio must lie in (0, 1)");
    require(cfg.highpass_taps >= 3 && cfg.highpass_taps % 2 == 1,
            "high-pass FIR length must be odd");
}

Waveform highpass_filter(const Waveform& w, double cutoff, int taps) {
    require(w.size() > 0, "cannot filter an empty waveform");
    require(cutoff > 0 && cutoff < w.sample_rate / 2.0, "cutoff must be below Nyquist");
    require(taps >= 3 && taps % 2 == 1, "FIR length must be odd");

    // Hamming-windowed sinc design: spectral inversion of the low-pass
    // prototype gives linear phase with group delay (taps-1)/2.
    const int m = (taps - 1) / 2;
    const double fc = cutoff / w.sample_rate;  // normalized (cycles/sample)
    Eigen::ArrayXd h(taps);
    for (int k = 0; k < taps; ++k) {
        const double lp = 2.0 * fc * sinc(2.0 * fc * (k - m));
        const double win =
            0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * double(k) / double(taps - 1));
        h[k] = -lp * win;
    }
    h[m] += 1.0;

    const Eigen::Index n = w.size();
    Waveform out;
    out.sample_rate = w.sample_rate;
    out.samples = Eigen::ArrayXd::Zero(n);
    // y[i] = sum_k h[k] x[i + m - k], zero-padded at the edges; the +m shift
    // removes the group delay.
    for (Eigen::Index i = 0; i < n; ++i) {
        const Eigen::Index lo = std::max<Eigen::Index>(0, i + m - (taps - 1));
        const Eigen::Index hi = std::min<Eigen::Index>(n - 1, i + m);
        double acc = 0.0;
        for (Eigen::Index j = lo; j <= hi; ++j) acc += h[i + m - j] * w.samples[j];
        out.samples[i] = acc;
    }
    return out;
}

Eigen::ArrayXd cross_correlate(const Waveform& signal, const Waveform& tmpl) {
    const Eigen::Index n = signal.size();
    const Eigen::Index mlen = tmpl.size();
    if (mlen > n) throw InvalidInputError("cross_correlate: template longer than signal");
    require(mlen > 0, "cross_correlate: empty template");
    Eigen::ArrayXd out(n - mlen + 1);
    const Eigen::VectorXd t = tmpl.samples.matrix();
    for (Eigen::Index i = 0; i + mlen <= n; ++i)
        out[i] = signal.samples.matrix().segment(i, mlen).dot(t);
    return out;
}

Eigen::Index locate_pilot(const Waveform& rec, const PipelineConfig& cfg) {
    validate_pipeline_config(cfg);
    if (rec.size() < layout_span(cfg))
        throw InvalidInputError("locate_pilot: recording too short for probe layout");

    // Envelope matched filter: correlate against the pilot and its Hilbert
    // pair, take the magnitude. This removes the carrier-period ambiguity of
    // the raw tone correlation.
    const Eigen::ArrayXd corr_i = cross_correlate(rec, cfg.pilot_template);
    Waveform quad;
    quad.sample_rate = cfg.pilot_template.sample_rate;
    quad.samples = hilbert_of(cfg.pilot_template.samples);
    const Eigen::ArrayXd corr_q = cross_correlate(rec, quad);
    const Eigen::ArrayXd envelope = (corr_i.square() + corr_q.square()).sqrt();
    const Eigen::Index coarse = abs_argmax(envelope);

    // Refine against the first chirp's direct path, which is wideband and
    // therefore has a sharp correlation peak.
    const Waveform& chirp1 = cfg.chirp_templates.front();
    const Eigen::Index head = cfg.pilot_template.size() + cfg.gap_pilot_to_first_chirp;
    const Eigen::Index expected = coarse + head;
    const Eigen::Index margin = std::min<Eigen::Index>(cfg.gap_pilot_to_first_chirp / 4, 400);
    const Eigen::Index lo = std::max<Eigen::Index>(0, expected - margin);
    const Eigen::Index hi =
        std::min<Eigen::Index>(rec.size(), expected + margin + chirp1.size());
    if (hi - lo < chirp1.size()) return coarse;
    Waveform window;
    window.sample_rate = rec.sample_rate;
    window.samples = rec.samples.segment(lo, hi - lo);
    const Eigen::ArrayXd corr_c = cross_correlate(window, chirp1);
    return lo + abs_argmax(corr_c) - head;
}

ChirpClipSet segment_chirps(const Waveform& rec, Eigen::Index pilot_idx,
                            const PipelineConfig& cfg) {
    validate_pipeline_config(cfg);
    require(pilot_idx >= 0, "segment_chirps: negative pilot index");
    ChirpClipSet set;
    Eigen::Index onset = pilot_idx + cfg.pilot_template.size() + cfg.gap_pilot_to_first_chirp;
    for (std::size_t k = 0; k < cfg.chirp_templates.size(); ++k) {
        const Eigen::Index chirp_len = cfg.chirp_templates[k].size();
        const Eigen::Index clip_len = chirp_len + cfg.search_span;
        if (onset + clip_len > rec.size())
            throw InvalidInputError("segment_chirps: clip " + std::to_string(k + 1) +
                                    " overruns the recording");
        Waveform clip;
        clip.sample_rate = rec.sample_rate;
        clip.samples = rec.samples.segment(onset, clip_len);
        set.clips.push_back(std::move(clip));
        set.onsets.push_back(onset);
        onset += chirp_len + cfg.gap_between_chirps;
    }
    return set;
}

ChirpClipSet remove_direct_path(const ChirpClipSet& clips, const PipelineConfig& cfg) {
    require(clips.clips.size() == cfg.chirp_templates.size(),
            "remove_direct_path: clip count does not match template count");
    ChirpClipSet out = clips;
    out.direct_peaks.assign(out.clips.size(), 0);
    for (std::size_t k = 0; k < out.clips.size(); ++k) {
        const Waveform& tmpl = cfg.chirp_templates[k];
        Waveform& clip = out.clips[k];
        const double clip_norm = clip.samples.matrix().norm();
        const double tmpl_norm = tmpl.samples.matrix().norm();
        if (clip_norm <= 0.0)
            throw PreprocessError("remove_direct_path: clip " + std::to_string(k + 1) +
                                  " has no signal (no peak)");
        const Eigen::ArrayXd corr = cross_correlate(clip, tmpl);
        const Eigen::Index peak = abs_argmax(corr);
        if (std::abs(corr[peak]) < 1e-9 * clip_norm * tmpl_norm)
            throw PreprocessError("remove_direct_path: correlation peak below threshold in clip " +
                                  std::to_string(k + 1));
        if (std::abs(corr[peak]) < cfg.direct_peak_min_par * corr.abs().mean())
            throw PreprocessError("remove_direct_path: no confident direct-path peak in clip " +
                                  std::to_string(k + 1));
        // Zero the span instead of trimming so absolute indices stay stable.
        clip.samples.segment(peak, tmpl.size()).setZero();
        out.direct_peaks[k] = peak;
    }
    return out;
}

AdaptiveResult locate_face_echo_adaptive(const ChirpClipSet& clips, const PipelineConfig& cfg) {
    require(clips.clips.size() == cfg.chirp_templates.size(),
            "locate_face_echo_adaptive: clip count does not match template count");
    const Eigen::Index w = cfg.echo_window;
    const std::size_t n_clips = clips.clips.size();

    Eigen::Index t_max = cfg.search_span;
    for (const auto& clip : clips.clips)
        t_max = std::min(t_max, clip.size() - w);
    if (t_max < 0) throw InvalidInputError("locate_face_echo_adaptive: empty search span");

    const Eigen::Index n_iter = t_max + 1;
    // positions(c, t): estimated template onset in clip c when the window
    // starts at t; peaks(c, t): the matching |correlation| peak.
    Eigen::MatrixXd positions(n_clips, n_iter);
    Eigen::MatrixXd peaks(n_clips, n_iter);

    for (std::size_t c = 0; c < n_clips; ++c) {
        const Waveform& clip = clips.clips[c];
        const Waveform& tmpl = cfg.chirp_templates[c];
        for (Eigen::Index t = 0; t < n_iter; ++t) {
            Waveform window;
            window.sample_rate = clip.sample_rate;
            window.samples = clip.samples.segment(t, w);
            Eigen::ArrayXd corr;
            double pos;
            if (tmpl.size() <= w) {
                // Template slides inside the window; the best lag gives the
                // template onset at t + lag.
                corr = cross_correlate(window, tmpl);
                const Eigen::Index j = abs_argmax(corr);
                pos = double(t + j);
                peaks(Eigen::Index(c), t) = std::abs(corr[j]);
            } else {
                // Window slides inside the template; the best lag i means the
                // window content starts i samples into the chirp, so the
                // chirp itself starts at t - i.
                corr = cross_correlate(tmpl, window);
                const Eigen::Index i = abs_argmax(corr);
                pos = double(t - i);
                peaks(Eigen::Index(c), t) = std::abs(corr[i]);
            }
            // Report positions relative to the clip's direct-path arrival so
            // residual sync error cancels out.
            if (!clips.direct_peaks.empty()) pos -= double(clips.direct_peaks[c]);
            positions(Eigen::Index(c), t) = pos;
        }
    }

    const Eigen::VectorXd best_peak = peaks.rowwise().maxCoeff();
    AdaptiveResult result;
    result.history.reserve(std::size_t(n_iter));
    Eigen::Index best_t = -1;
    double best_std = 0.0;
    for (Eigen::Index t = 0; t < n_iter; ++t) {
        AdaptiveIteration it;
        it.window_start = t;
        bool valid = true;
        for (std::size_t c = 0; c < n_clips; ++c)
            valid = valid && peaks(Eigen::Index(c), t) >=
                                 cfg.adaptive_peak_ratio * best_peak[Eigen::Index(c)];
        it.valid = valid;
        const Eigen::VectorXd col = positions.col(t);
        it.mean_position = col.mean();
        it.std_dev = std::sqrt((col.array() - it.mean_position).square().mean());
        result.history.push_back(it);
        if (valid && (best_t < 0 || it.std_dev < best_std)) {
            best_t = t;
            best_std = it.std_dev;
        }
    }
    if (best_t < 0)
        throw PreprocessError("locate_face_echo_adaptive: no window with a confident echo");
    // Round half-up.
    result.position = Eigen::Index(std::floor(result.history[std::size_t(best_t)].mean_position + 0.5));
    return result;
}

FaceEcho extract_face_echoes(const ChirpClipSet& clips, Eigen::Index position,
                             const PipelineConfig& cfg) {
    const Eigen::Index w = cfg.echo_window;
    require(!clips.clips.empty(), "extract_face_echoes: no clips");
    auto anchor = [&clips](std::size_t c) {
        return clips.direct_peaks.empty() ? Eigen::Index(0) : clips.direct_peaks[c];
    };
    for (std::size_t c = 0; c < clips.clips.size(); ++c) {
        const Eigen::Index start = anchor(c) + position;
        if (start < 0 || start + w > clips.clips[c].size())
            throw InvalidInputError("extract_face_echoes: position " + std::to_string(position) +
                                    " out of bounds for clip " + std::to_string(c + 1));
    }
    FaceEcho out;
    out.per_clip_position = position;
    out.echo.sample_rate = clips.clips[0].sample_rate;
    out.echo.samples.resize(Eigen::Index(clips.clips.size()) * w);
    for (std::size_t c = 0; c < clips.clips.size(); ++c)
        out.echo.samples.segment(Eigen::Index(c) * w, w) =
            clips.clips[c].samples.segment(anchor(c) + position, w);
    return out;
}

Spectrogram compute_spectrogram(const Waveform& echo, const PipelineConfig& cfg) {
    const Eigen::Index win = cfg.stft_window;
    const Eigen::Index hop = cfg.stft_hop;
    if (echo.size() < win)
        throw InvalidInputError("compute_spectrogram: signal shorter than the STFT window");

    const Eigen::Index n_bins = win / 2 + 1;
    const Eigen::Index n_frames = (echo.size() - win) / hop + 1;

    Eigen::ArrayXd hann(win);
    for (Eigen::Index i = 0; i < win; ++i)
        hann[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(win - 1));

    // Direct real DFT; the window is small enough that a radix FFT buys
    // nothing here.
    Eigen::MatrixXd cos_tab(n_bins, win), sin_tab(n_bins, win);
    for (Eigen::Index b = 0; b < n_bins; ++b)
        for (Eigen::Index i = 0; i < win; ++i) {
            const double ang = 2.0 * std::numbers::pi * double(b) * double(i) / double(win);
            cos_tab(b, i) = std::cos(ang);
            sin_tab(b, i) = -std::sin(ang);
        }

    Spectrogram spec;
    spec.magnitudes.resize(n_bins, n_frames);
    spec.freq_resolution = echo.sample_rate / double(win);
    spec.time_resolution = double(hop);
    Eigen::VectorXd frame(win);
    for (Eigen::Index f = 0; f < n_frames; ++f) {
        frame = (echo.samples.segment(f * hop, win) * hann).matrix();
        const Eigen::VectorXd re = cos_tab * frame;
        const Eigen::VectorXd im = sin_tab * frame;
        spec.magnitudes.col(f) = (re.array().square() + im.array().square()).sqrt();
    }

    spec.magnitudes = spec.magnitudes.array().log1p();
    const double lo = spec.magnitudes.minCoeff();
    const double hi = spec.magnitudes.maxCoeff();
    if (hi > lo)
        spec.magnitudes = (spec.magnitudes.array() - lo) / (hi - lo);
    return spec;
}

Spectrogram compute_spectrogram(const FaceEcho& echo, const PipelineConfig& cfg) {
    return compute_spectrogram(echo.echo, cfg);
}

PreprocessResult preprocess_full(const Waveform& rec, const PipelineConfig& cfg) {
    validate_pipeline_config(cfg);
    const Waveform filtered = highpass_filter(rec, cfg.highpass_cutoff, cfg.highpass_taps);
    const Eigen::Index pilot_idx = locate_pilot(filtered, cfg);
    const ChirpClipSet clips = segment_chirps(filtered, pilot_idx, cfg);
    const ChirpClipSet cleaned = remove_direct_path(clips, cfg);
    const AdaptiveResult located = locate_face_echo_adaptive(cleaned, cfg);

    PreprocessResult out;
    out.pilot_index = pilot_idx;
    out.face_echo = extract_face_echoes(cleaned, located.position, cfg);
    out.face_echo.position_std_history = located.history;
    out.spectrogram = compute_spectrogram(out.face_echo, cfg);
    return out;
}

Spectrogram preprocess(const Waveform& rec, const PipelineConfig& cfg) {
    return preprocess_full(rec, cfg).spectrogram;
}

}  // namespace m3fas
