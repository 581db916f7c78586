#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "m3fas/channel_sim.hpp"
#include "m3fas/config.hpp"
#include "m3fas/echo_pipeline.hpp"
#include "m3fas/rng.hpp"
#include "oracles.hpp"

#include <filesystem>
#include <limits>

using namespace m3fas;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

ChannelScenario two_tap(Eigen::Index d, Eigen::Index face, double face_gain) {
    ChannelScenario sc;
    sc.direct_path_delay = d;
    sc.direct_path_gain = 0.9;
    sc.face_echo_delay = face;
    sc.face_impulse_response = Eigen::ArrayXd::Zero(1);
    sc.face_impulse_response[0] = face_gain;
    sc.background_echo_delay = face + 200;
    sc.background_gain = 0.0;
    sc.noise_snr_db = kInf;
    return sc;
}

}  // namespace

TEST_CASE("simulate_recording two-tap channel is exactly two scaled copies") {
    const Waveform probe = assemble_probe_signal(make_probe_config(Config{}));
    const ChannelScenario sc = two_tap(300, 80, 0.3);
    const Waveform rec = simulate_recording(probe, sc, 1);

    Eigen::ArrayXd expected = Eigen::ArrayXd::Zero(rec.size());
    expected.segment(300, probe.size()) += 0.9 * probe.samples;
    expected.segment(380, probe.size()) += 0.3 * probe.samples;
    CHECK((rec.samples - expected).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("cross-correlation finds the face echo 30 samples after the direct path") {
    const ProbeSignalConfig probe_cfg = make_probe_config(Config{});
    const Waveform probe = assemble_probe_signal(probe_cfg);
    const ChannelScenario sc = two_tap(400, 30, 0.35);
    const Waveform rec = simulate_recording(probe, sc, 2);
    // Correlate against the first chirp template near its arrival; the chirp
    // is wideband, so both arrivals give sharp peaks.
    const Waveform tmpl = probe_chirp_templates(probe_cfg)[0];
    const Eigen::Index arrival = 400 + probe_chirp_onset(probe_cfg, 0);
    Waveform region;
    region.sample_rate = rec.sample_rate;
    region.samples = rec.samples.segment(arrival - 50, 400);
    const Eigen::ArrayXd corr = oracles::brute_xcorr(region.samples, tmpl.samples);
    Eigen::Index first = 0;
    corr.abs().maxCoeff(&first);
    CHECK(first == 50);
    Eigen::Index second = first + 10;
    for (Eigen::Index i = first + 10; i < std::min<Eigen::Index>(first + 120, corr.size()); ++i)
        if (std::abs(corr[i]) > std::abs(corr[second])) second = i;
    CHECK(second - first == 30);
}

TEST_CASE("component ordering: direct > face > background correlation peaks") {
    const Waveform probe = assemble_probe_signal(make_probe_config(Config{}));
    ChannelScenario sc = two_tap(350, 90, 0.3);
    sc.background_echo_delay = 320;
    sc.background_gain = 0.1;
    const Waveform rec = simulate_recording(probe, sc, 3);
    const Eigen::ArrayXd corr = oracles::brute_xcorr(rec.samples, probe.samples);
    const double direct = std::abs(corr[350]);
    const double face = std::abs(corr[350 + 90]);
    const double background = std::abs(corr[350 + 320]);
    CHECK(direct > face);
    CHECK(face > background);
}

TEST_CASE("simulate_recording is linear in probe amplitude without noise") {
    const Waveform probe = assemble_probe_signal(make_probe_config(Config{}));
    ChannelScenario sc = two_tap(250, 70, 0.3);
    sc.background_gain = 0.08;
    sc.device_response = DeviceResponse::random(1, 42);
    Waveform scaled_probe = probe;
    scaled_probe.samples *= 0.4;
    const Waveform a = simulate_recording(probe, sc, 4);
    const Waveform b = simulate_recording(scaled_probe, sc, 4);
    CHECK((b.samples - 0.4 * a.samples).abs().maxCoeff() <= 1e-9);
}

TEST_CASE("noise lands within half a dB of the requested SNR") {
    const Waveform probe = assemble_probe_signal(make_probe_config(Config{}));
    for (double snr : {0.0, 10.0, 20.0}) {
        ChannelScenario sc = two_tap(300, 85, 0.3);
        sc.device_response = DeviceResponse::random(0, 9);
        const Waveform clean = simulate_recording(probe, sc, 5);
        sc.noise_snr_db = snr;
        const Waveform noisy = simulate_recording(probe, sc, 5);
        const Eigen::ArrayXd noise = noisy.samples - clean.samples;
        const double sig_band =
            oracles::band_energy_fraction(clean.samples, 44100.0, 10000.0, 22000.0) *
            clean.samples.square().sum();
        const double noise_band =
            oracles::band_energy_fraction(noise, 44100.0, 10000.0, 22000.0) *
            noise.square().sum();
        const double measured = 10.0 * std::log10(sig_band / noise_band);
        CHECK(std::abs(measured - snr) <= 0.5);
    }
}

TEST_CASE("impulse responses separate live faces from flat attacks") {
    int live_ok = 0, attack_ok = 0;
    const int n = 60;
    for (int i = 0; i < n; ++i) {
        SurfaceModel live{SurfaceKind::live_face, 1.0};
        const Eigen::ArrayXd ir = make_face_impulse_response(live, mix_seed(8, i));
        const double peak = ir.abs().maxCoeff();
        int taps = 0;
        for (Eigen::Index t = 0; t < ir.size(); ++t)
            if (std::abs(ir[t]) > 0.1 * peak) ++taps;
        if (taps >= 3) ++live_ok;

        SurfaceModel attack{i % 2 ? SurfaceKind::print_attack : SurfaceKind::replay_attack, 1.0};
        const Eigen::ArrayXd air = make_face_impulse_response(attack, mix_seed(9, i));
        const double apeak = air.abs().maxCoeff();
        int ataps = 0;
        for (Eigen::Index t = 0; t < air.size(); ++t)
            if (std::abs(air[t]) > 0.1 * apeak) ++ataps;
        if (ataps <= 2) ++attack_ok;
    }
    CHECK(live_ok == n);
    CHECK(attack_ok == n);
}

TEST_CASE("scenario validation") {
    ChannelScenario sc = two_tap(300, 80, 0.3);
    SUBCASE("gain ordering is enforced") {
        sc.background_gain = 0.5;  // above the face peak
        CHECK_THROWS_AS(validate_scenario(sc), InvalidInputError);
        sc.background_gain = 0.05;
        sc.face_impulse_response[0] = 1.5;  // above the direct gain
        CHECK_THROWS_AS(validate_scenario(sc), InvalidInputError);
    }
    SUBCASE("background must trail the face echo") {
        sc.background_echo_delay = sc.face_echo_delay - 1;
        CHECK_THROWS_AS(validate_scenario(sc), InvalidInputError);
    }
    SUBCASE("delays must fit an explicit recording length") {
        const Waveform probe = assemble_probe_signal(make_probe_config(Config{}));
        sc.recording_length = probe.size();  // too small once delays are added
        CHECK_THROWS_AS(simulate_recording(probe, sc, 1), InvalidInputError);
    }
}

TEST_CASE("synth_face_image") {
    SUBCASE("deterministic per seed, pixels in range") {
        const SurfaceModel live{SurfaceKind::live_face, 1.0};
        const Image a = synth_face_image(live, 202);
        const Image b = synth_face_image(live, 202);
        CHECK((a.rgb == b.rgb).all());
        CHECK(a.rgb.minCoeff() >= 0.0);
        CHECK(a.rgb.maxCoeff() <= 1.0);
        const Image c = synth_face_image(live, 203);
        CHECK((a.rgb != c.rgb).any());
    }
    SUBCASE("replay image differs from live by mid/high-frequency content") {
        FaceImageConfig cfg;
        cfg.pixel_noise_sigma = 0.0;
        const Image live = synth_face_image({SurfaceKind::live_face, 1.0}, 77, cfg);
        const Image replay = synth_face_image({SurfaceKind::replay_attack, 1.0}, 77, cfg);
        // difference image row spectra should put energy above ~4 cycles/image
        double high = 0.0, total = 0.0;
        for (Eigen::Index y = 0; y < live.height; ++y) {
            Eigen::ArrayXd row(live.width);
            for (Eigen::Index x = 0; x < live.width; ++x)
                row[x] = replay.at(y, x, 1) - live.at(y, x, 1);
            const Eigen::ArrayXd mag = oracles::fft_magnitude(row, 128);
            for (Eigen::Index k = 0; k < mag.size(); ++k) {
                total += mag[k] * mag[k];
                if (k >= 4) high += mag[k] * mag[k];
            }
        }
        CHECK(total > 0.0);
        CHECK(high / total > 0.2);
    }
}

TEST_CASE("build_dataset writes a balanced, deterministic manifest") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "m3fas_ds_test").string();
    fs::remove_all(dir);

    Config cfg;
    DatasetBuildConfig build = make_dataset_build_config(cfg);
    build.image.size = 32;  // keep the test fast
    std::vector<DeviceResponse> devices = {DeviceResponse::random(0, 5),
                                           DeviceResponse::random(1, 5)};
    const DatasetManifest manifest = build_dataset(10, devices, build, dir, 123);

    SUBCASE("row count and balance") {
        CHECK(manifest.rows.size() == 40);  // 2 classes x 10 x 2 devices
        int counts[2][2] = {{0, 0}, {0, 0}};
        for (const auto& row : manifest.rows)
            counts[row.device][row.label == SampleLabel::bonafide ? 1 : 0]++;
        for (int d = 0; d < 2; ++d)
            for (int c = 0; c < 2; ++c) CHECK(counts[d][c] == 10);
    }
    SUBCASE("manifest reads back and files exist") {
        const DatasetManifest loaded = read_manifest(dir);
        CHECK(loaded.rows.size() == manifest.rows.size());
        for (std::size_t i = 0; i < loaded.rows.size(); ++i) {
            CHECK(loaded.rows[i].id == manifest.rows[i].id);
            CHECK(loaded.rows[i].scenario_json == manifest.rows[i].scenario_json);
        }
    }
    SUBCASE("different seeds draw different scenarios") {
        const std::string dir2 = (fs::temp_directory_path() / "m3fas_ds_test2").string();
        fs::remove_all(dir2);
        const DatasetManifest other = build_dataset(10, devices, build, dir2, 124);
        int diff = 0;
        for (std::size_t i = 0; i < manifest.rows.size(); ++i)
            if (manifest.rows[i].scenario_json != other.rows[i].scenario_json) ++diff;
        CHECK(diff == int(manifest.rows.size()));
        fs::remove_all(dir2);
    }
    fs::remove_all(dir);
}
