#include "m3fas/channel_sim.hpp"

#include "m3fas/rng.hpp"
#include "m3fas/wav_io.hpp"

#include <nlohmann/json.hpp>
#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

namespace m3fas {

namespace {

Eigen::Index next_pow2(Eigen::Index n) {
    Eigen::Index p = 1;
    while (p < n) p <<= 1;
    return p;
}

std::vector<std::complex<double>> fft_of(const Eigen::ArrayXd& x, Eigen::Index nfft) {
    std::vector<std::complex<double>> time(static_cast<std::size_t>(nfft));
    for (Eigen::Index i = 0; i < x.size(); ++i) time[std::size_t(i)] = x[i];
    std::vector<std::complex<double>> freq(static_cast<std::size_t>(nfft));
    Eigen::FFT<double> fft;
    fft.fwd(freq, time);
    return freq;
}

Eigen::ArrayXd ifft_real(std::vector<std::complex<double>>& freq, Eigen::Index n_out) {
    std::vector<std::complex<double>> time(freq.size());
    Eigen::FFT<double> fft;
    fft.inv(time, freq);
    Eigen::ArrayXd out(n_out);
    for (Eigen::Index i = 0; i < n_out; ++i) out[i] = time[std::size_t(i)].real();
    return out;
}

double bin_freq(Eigen::Index k, Eigen::Index nfft, double fs) {
    const Eigen::Index kk = (k <= nfft / 2) ? k : nfft - k;
    return double(kk) * fs / double(nfft);
}

}  // namespace

double DeviceResponse::gain_at(double freq_hz) const {
    if (knot_gains.size() == 0) return 1.0;
    if (freq_hz <= band_lo || freq_hz >= band_hi) return 1.0;
    if (knot_gains.size() == 1) return knot_gains[0];
    const double u = (freq_hz - band_lo) / (band_hi - band_lo) * double(knot_gains.size() - 1);
    const Eigen::Index k = std::min<Eigen::Index>(knot_gains.size() - 2, Eigen::Index(u));
    const double frac = u - double(k);
    // Cosine interpolation keeps the curve smooth between knots.
    const double s = 0.5 - 0.5 * std::cos(std::numbers::pi * frac);
    return knot_gains[k] * (1.0 - s) + knot_gains[k + 1] * s;
}

DeviceResponse DeviceResponse::flat(int id) {
    DeviceResponse d;
    d.id = id;
    return d;
}

DeviceResponse DeviceResponse::random(int id, std::uint64_t seed, int n_knots) {
    DeviceResponse d;
    d.id = id;
    Rng rng(mix_seed(seed, 0xde71ce00ull + std::uint64_t(id)));
    d.knot_gains.resize(n_knots);
    for (int i = 0; i < n_knots; ++i) {
        const double db = rng.uniform(-6.0, 6.0);
        d.knot_gains[i] = std::pow(10.0, db / 20.0);
    }
    return d;
}

void validate_scenario(const ChannelScenario& scenario) {
    require(scenario.direct_path_delay >= 0, "direct path delay must be nonnegative");
    require(scenario.face_echo_delay > 0, "face echo delay must be positive");
    require(scenario.background_echo_delay > scenario.face_echo_delay,
            "background echo must arrive after the face echo");
    require(scenario.face_impulse_response.size() >= 1 &&
                scenario.face_impulse_response.size() <= 60,
            "face impulse response must have 1..60 taps");
    const double face_peak = scenario.face_impulse_response.abs().maxCoeff();
    require(scenario.direct_path_gain > face_peak,
            "direct path must outweigh the face echo");
    require(face_peak > scenario.background_gain,
            "face echo must outweigh the background echo");
}

Eigen::ArrayXd make_face_impulse_response(const SurfaceModel& surface, std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0xface1200ull));
    Eigen::ArrayXd ir = Eigen::ArrayXd::Zero(60);
    switch (surface.kind) {
        case SurfaceKind::live_face: {
            // Several distinct reflectors: nose tip, cheeks, forehead, chin.
            // Tap spacing stays beyond the chirp correlation mainlobe so the
            // leading tap remains the unambiguous arrival.
            const int n_taps = int(rng.randint(4, 5));
            ir[0] = 1.0;
            Eigen::Index pos = 0;
            for (int t = 1; t < n_taps; ++t) {
                pos += rng.randint(12, 18);
                if (pos >= 59) break;
                const double sign = rng.uniform() < 0.35 ? -1.0 : 1.0;
                ir[pos] = sign * rng.uniform(0.2, 0.45) * surface.relief_scale;
            }
            break;
        }
        case SurfaceKind::print_attack:
            ir[0] = 1.0;  // flat paper: a single specular tap
            break;
        case SurfaceKind::replay_attack: {
            // Screen front glass plus panel: two taps.
            ir[0] = 1.0;
            const Eigen::Index pos = rng.randint(10, 16);
            ir[pos] = rng.uniform(0.15, 0.35);
            break;
        }
    }
    return ir;
}

Waveform simulate_recording(const Waveform& probe, const ChannelScenario& scenario,
                            std::uint64_t seed) {
    validate_scenario(scenario);
    require(probe.size() > 0, "empty probe");

    const Eigen::Index ir_len = scenario.face_impulse_response.size();
    const Eigen::Index needed = scenario.direct_path_delay + probe.size() +
                                std::max(scenario.background_echo_delay,
                                         scenario.face_echo_delay + ir_len) +
                                600;
    Eigen::Index n = scenario.recording_length > 0 ? scenario.recording_length : needed;
    if (n < needed)
        throw InvalidInputError("simulate_recording: delays overflow the recording length");

    Eigen::ArrayXd clean = Eigen::ArrayXd::Zero(n);
    const Eigen::Index d = scenario.direct_path_delay;
    clean.segment(d, probe.size()) += scenario.direct_path_gain * probe.samples;
    for (Eigen::Index t = 0; t < ir_len; ++t) {
        const double g = scenario.face_impulse_response[t];
        if (g != 0.0)
            clean.segment(d + scenario.face_echo_delay + t, probe.size()) += g * probe.samples;
    }
    if (scenario.background_gain != 0.0)
        clean.segment(d + scenario.background_echo_delay, probe.size()) +=
            scenario.background_gain * probe.samples;

    const double fs = probe.sample_rate;
    const Eigen::Index nfft = next_pow2(n);

    if (scenario.device_response.knot_gains.size() > 0) {
        auto freq = fft_of(clean, nfft);
        for (Eigen::Index k = 0; k < nfft; ++k)
            freq[std::size_t(k)] *= scenario.device_response.gain_at(bin_freq(k, nfft, fs));
        clean = ifft_real(freq, n);
    }

    Waveform out;
    out.sample_rate = fs;
    out.samples = clean;

    if (std::isfinite(scenario.noise_snr_db)) {
        const double band_lo = scenario.device_response.band_lo;
        const double band_hi = scenario.device_response.band_hi;

        // Clean in-band energy via Parseval.
        auto cfreq = fft_of(clean, nfft);
        double sig_band = 0.0;
        for (Eigen::Index k = 0; k < nfft; ++k) {
            const double f = bin_freq(k, nfft, fs);
            if (f >= band_lo && f <= band_hi) sig_band += std::norm(cfreq[std::size_t(k)]);
        }
        sig_band /= double(nfft);

        Rng rng(mix_seed(seed, 0x9015eedull));
        Eigen::ArrayXd white(nfft);
        for (Eigen::Index i = 0; i < nfft; ++i) white[i] = rng.normal();
        auto nfreq = fft_of(white, nfft);
        for (Eigen::Index k = 0; k < nfft; ++k) {
            const double f = bin_freq(k, nfft, fs);
            if (f < band_lo || f > band_hi) nfreq[std::size_t(k)] = 0.0;
        }
        Eigen::ArrayXd noise = ifft_real(nfreq, n);
        const double e_noise = noise.square().sum();
        if (e_noise > 0.0 && sig_band > 0.0) {
            const double target = sig_band / std::pow(10.0, scenario.noise_snr_db / 10.0);
            noise *= std::sqrt(target / e_noise);
            out.samples += noise;
        }
    }
    return out;
}

Image synth_face_image(const SurfaceModel& surface, std::uint64_t seed,
                       const FaceImageConfig& cfg) {
    Rng rng(mix_seed(seed, 0x1face000ull));
    const Eigen::Index n = cfg.size;
    Image img = Image::zeros(n, n);

    const double cx = n / 2.0 + rng.uniform(-n * 0.03, n * 0.03);
    const double cy = n / 2.0 + rng.uniform(-n * 0.03, n * 0.03);
    const double rx = n * rng.uniform(0.30, 0.36);
    const double ry = n * rng.uniform(0.40, 0.46);
    const double skin[3] = {rng.uniform(0.70, 0.85), rng.uniform(0.52, 0.66),
                            rng.uniform(0.42, 0.55)};
    const double bg = rng.uniform(0.12, 0.25);
    const double lx = rng.uniform(-0.5, 0.5), ly = rng.uniform(-0.5, 0.2);
    const double lz = 1.0;
    const double lnorm = std::sqrt(lx * lx + ly * ly + lz * lz);

    const double eye_dx = rx * 0.38, eye_y = cy - ry * 0.22;
    const double eye_r = n * 0.035, mouth_y = cy + ry * 0.38;

    for (Eigen::Index y = 0; y < n; ++y) {
        for (Eigen::Index x = 0; x < n; ++x) {
            const double u = (double(x) - cx) / rx;
            const double v = (double(y) - cy) / ry;
            const double rr = u * u + v * v;
            double col[3];
            if (rr <= 1.0) {
                // Hemisphere shading with a fixed light direction.
                const double w = std::sqrt(std::max(0.0, 1.0 - rr));
                const double lam =
                    std::max(0.0, (u * lx + v * ly + w * lz) / lnorm);
                const double shade = 0.35 + 0.65 * lam;
                for (int c = 0; c < 3; ++c) col[c] = skin[c] * shade;
                const double de1 = std::hypot(double(x) - (cx - eye_dx), double(y) - eye_y);
                const double de2 = std::hypot(double(x) - (cx + eye_dx), double(y) - eye_y);
                if (de1 < eye_r || de2 < eye_r)
                    for (int c = 0; c < 3; ++c) col[c] *= 0.35;
                const double dm = std::hypot((double(x) - cx) / (rx * 0.45),
                                             (double(y) - mouth_y) / (n * 0.025));
                if (dm < 1.0)
                    for (int c = 0; c < 3; ++c) col[c] *= (c == 0 ? 0.85 : 0.55);
            } else {
                const double g = bg * (0.8 + 0.2 * double(y) / double(n));
                col[0] = col[1] = col[2] = g;
            }
            for (int c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
        }
    }

    if (surface.kind == SurfaceKind::print_attack) {
        // Halftone-style dot grid plus speckle, and slight desaturation.
        const double period = rng.uniform(9.0, 12.0);
        const double phase = rng.uniform(0.0, period);
        for (Eigen::Index y = 0; y < n; ++y)
            for (Eigen::Index x = 0; x < n; ++x) {
                const double dots =
                    std::sin(2.0 * std::numbers::pi * (double(x) + phase) / period) *
                    std::sin(2.0 * std::numbers::pi * (double(y) + phase) / period);
                const double speck = rng.normal(0.0, 0.02);
                const double grey = (img.at(y, x, 0) + img.at(y, x, 1) + img.at(y, x, 2)) / 3.0;
                for (int c = 0; c < 3; ++c) {
                    double v = 0.85 * img.at(y, x, c) + 0.15 * grey;
                    img.at(y, x, c) = v + 0.055 * dots + speck;
                }
            }
    } else if (surface.kind == SurfaceKind::replay_attack) {
        // Oblique interference bands plus row banding and a cool cast.
        const double lambda = rng.uniform(12.0, 20.0);
        const double theta = rng.uniform(0.3, 1.2);
        const double band_l = rng.uniform(22.0, 30.0);
        for (Eigen::Index y = 0; y < n; ++y)
            for (Eigen::Index x = 0; x < n; ++x) {
                const double s = double(x) * std::cos(theta) + double(y) * std::sin(theta);
                const double moire = 0.06 * std::sin(2.0 * std::numbers::pi * s / lambda);
                const double band =
                    0.035 * std::sin(2.0 * std::numbers::pi * double(y) / band_l);
                for (int c = 0; c < 3; ++c) img.at(y, x, c) += moire + band;
                img.at(y, x, 2) += 0.03;
            }
    }

    if (cfg.pixel_noise_sigma > 0.0)
        for (Eigen::Index i = 0; i < img.rgb.size(); ++i)
            img.rgb[i] += rng.normal(0.0, cfg.pixel_noise_sigma);

    if (cfg.blur_radius > 0) {
        const int r = cfg.blur_radius;
        Image tmp = img;
        for (Eigen::Index y = 0; y < n; ++y)
            for (Eigen::Index x = 0; x < n; ++x)
                for (int c = 0; c < 3; ++c) {
                    double acc = 0.0;
                    int cnt = 0;
                    for (int dy = -r; dy <= r; ++dy)
                        for (int dx = -r; dx <= r; ++dx) {
                            const Eigen::Index yy = y + dy, xx = x + dx;
                            if (yy < 0 || yy >= n || xx < 0 || xx >= n) continue;
                            acc += tmp.at(yy, xx, c);
                            ++cnt;
                        }
                    img.at(y, x, c) = acc / double(cnt);
                }
    }

    img.clamp01();
    return img;
}

DrawnSample draw_sample(const DatasetBuildConfig& cfg, const DeviceResponse& device, bool bonafide,
                        std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5ce40000ull));
    DrawnSample s;
    s.label = bonafide ? SampleLabel::bonafide : SampleLabel::attack;
    if (bonafide) {
        s.surface.kind = SurfaceKind::live_face;
    } else {
        s.surface.kind = rng.uniform() < 0.5 ? SurfaceKind::print_attack
                                             : SurfaceKind::replay_attack;
    }
    s.surface.relief_scale = rng.uniform(0.8, 1.2);

    ChannelScenario& sc = s.scenario;
    sc.direct_path_delay = rng.randint(200, 800);
    sc.direct_path_gain = rng.uniform(0.8, 1.0);
    sc.face_echo_delay = rng.randint(cfg.min_face_delay, cfg.max_face_delay);
    const double face_gain = rng.uniform(0.25, 0.4) * sc.direct_path_gain;
    sc.face_impulse_response = face_gain * make_face_impulse_response(s.surface, seed);
    sc.background_echo_delay = rng.randint(250, 450);
    sc.background_gain = rng.uniform(0.05, 0.45) * face_gain;
    sc.noise_snr_db = cfg.noise_snr_db;
    sc.device_response = device;
    return s;
}

DatasetManifest build_dataset(int n_per_class, const std::vector<DeviceResponse>& devices,
                              const DatasetBuildConfig& cfg, const std::string& out_dir,
                              std::uint64_t seed) {
    require(n_per_class >= 1, "n_per_class must be at least 1");
    require(!devices.empty(), "need at least one device");

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "img");
    fs::create_directories(fs::path(out_dir) / "wav");

    const Waveform probe = assemble_probe_signal(cfg.probe);

    DatasetManifest manifest;
    manifest.root = out_dir;
    for (std::size_t di = 0; di < devices.size(); ++di) {
        const DeviceResponse& device = devices[di];
        for (int cls = 0; cls < 2; ++cls) {
            const bool bonafide = (cls == 0);
            for (int i = 0; i < n_per_class; ++i) {
                const std::uint64_t sample_seed =
                    mix_seed(seed, (std::uint64_t(device.id) << 40) ^
                                       (std::uint64_t(cls) << 32) ^ std::uint64_t(i));
                DrawnSample drawn = draw_sample(cfg, device, bonafide, sample_seed);

                char id[64];
                std::snprintf(id, sizeof id, "d%02d_%s_%05d", device.id,
                              bonafide ? "bona" : "atk", i);

                const Image img =
                    synth_face_image(drawn.surface, mix_seed(sample_seed, 1), cfg.image);
                const Waveform rec =
                    simulate_recording(probe, drawn.scenario, mix_seed(sample_seed, 2));
                // Recordings can exceed unit amplitude after summing echoes;
                // normalize headroom like a capture front-end would.
                Waveform rec_out = rec;
                const double peak = rec_out.samples.abs().maxCoeff();
                if (peak > 0.999) rec_out.samples *= 0.999 / peak;

                ManifestRow row;
                row.id = id;
                row.label = drawn.label;
                row.device = device.id;
                row.image_path = std::string("img/") + id + ".png";
                row.wav_path = std::string("wav/") + id + ".wav";

                nlohmann::json j;
                j["direct_path_delay"] = drawn.scenario.direct_path_delay;
                j["direct_path_gain"] = drawn.scenario.direct_path_gain;
                j["face_echo_delay"] = drawn.scenario.face_echo_delay;
                std::vector<double> ir(drawn.scenario.face_impulse_response.data(),
                                       drawn.scenario.face_impulse_response.data() +
                                           drawn.scenario.face_impulse_response.size());
                j["face_impulse_response"] = ir;
                j["background_echo_delay"] = drawn.scenario.background_echo_delay;
                j["background_gain"] = drawn.scenario.background_gain;
                j["noise_snr_db"] = drawn.scenario.noise_snr_db;
                j["device"] = device.id;
                j["surface"] = drawn.surface.kind == SurfaceKind::live_face ? "live_face"
                               : drawn.surface.kind == SurfaceKind::print_attack
                                   ? "print_attack"
                                   : "replay_attack";
                row.scenario_json = j.dump();

                write_png(img, (fs::path(out_dir) / row.image_path).string());
                write_wav(rec_out, (fs::path(out_dir) / row.wav_path).string());
                manifest.rows.push_back(std::move(row));
            }
        }
    }
    write_manifest(manifest);
    return manifest;
}

}  // namespace m3fas
