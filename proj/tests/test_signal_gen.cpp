#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "m3fas/signal_gen.hpp"
#include "m3fas/wav_io.hpp"
#include "oracles.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

using namespace m3fas;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("generate_chirp sweeps the group-1 range") {
    ChirpSpec spec{12000.0, 17000.0, 4410, 0.5};
    const Waveform w = generate_chirp(spec, 44100.0);
    CHECK(w.size() == 4410);
    // Nearly all energy inside the swept band (small leakage margin).
    CHECK(oracles::band_energy_fraction(w.samples, 44100.0, 11500.0, 17500.0) > 0.95);
}

TEST_CASE("generate_chirp rejects degenerate and aliased sweeps") {
    CHECK_THROWS_AS(generate_chirp({15000.0, 15000.0, 1000, 0.5}, 44100.0), InvalidInputError);
    CHECK_THROWS_AS(generate_chirp({16000.0, 23000.0, 1000, 0.5}, 44100.0), InvalidInputError);
    CHECK_THROWS_AS(generate_chirp({16000.0, 17000.0, 8, 0.5}, 44100.0), InvalidInputError);
}

TEST_CASE("generate_chirp band concentration (16-21 kHz, 1764 samples)") {
    ChirpSpec spec{16000.0, 21000.0, 1764, 0.5};
    const Waveform w = generate_chirp(spec, 44100.0);
    CHECK(oracles::band_energy_fraction(w.samples, 44100.0, 15500.0, 21500.0) >= 0.95);
}

TEST_CASE("apply_window") {
    Waveform w;
    w.samples = Eigen::ArrayXd::Ones(101);

    SUBCASE("none is the identity") {
        const Waveform out = apply_window(w, WindowKind::none);
        CHECK((out.samples == w.samples).all());
    }
    SUBCASE("constant input yields the window itself") {
        const Waveform out = apply_window(w, WindowKind::hamming);
        CHECK(out.samples[0] == doctest::Approx(0.08).epsilon(1e-12));
        CHECK(out.samples[100] == doctest::Approx(0.08).epsilon(1e-12));
        CHECK(out.samples[50] == doctest::Approx(1.0).epsilon(1e-12));
    }
    SUBCASE("chirp endpoints scale by the Hamming endpoint value") {
        const Waveform chirp = generate_chirp({12000.0, 17000.0, 441, 0.5}, 44100.0);
        const Waveform out = apply_window(chirp, WindowKind::hamming);
        CHECK(out.samples[0] == doctest::Approx(0.08 * chirp.samples[0]).epsilon(1e-12));
        CHECK(out.samples[440] == doctest::Approx(0.08 * chirp.samples[440]).epsilon(1e-12));
    }
    SUBCASE("empty waveform rejected") {
        Waveform empty;
        empty.samples.resize(0);
        CHECK_THROWS_AS(apply_window(empty, WindowKind::hamming), InvalidInputError);
    }
}

TEST_CASE("generate_pilot") {
    ProbeSignalConfig cfg = default_probe_config();

    SUBCASE("11025 Hz at 44100 Hz repeats every 4 samples") {
        cfg.window = WindowKind::none;
        const Waveform pilot = generate_pilot(cfg);
        for (Eigen::Index i = 0; i + 4 < 64; ++i)
            CHECK(pilot.samples[i + 4] == doctest::Approx(pilot.samples[i]).epsilon(1e-9));
    }
    SUBCASE("zero duration rejected") {
        cfg.pilot_duration_samples = 0;
        CHECK_THROWS_AS(generate_pilot(cfg), InvalidInputError);
    }
    SUBCASE("FFT peak bin within one bin of the pilot frequency") {
        const Waveform pilot = generate_pilot(cfg);
        Eigen::Index nfft = 4096;
        const Eigen::ArrayXd mag = oracles::fft_magnitude(pilot.samples, nfft);
        Eigen::Index peak = 0;
        mag.maxCoeff(&peak);
        const double bin_hz = 44100.0 / double(nfft);
        CHECK(std::abs(double(peak) * bin_hz - 11025.0) <= bin_hz);
    }
}

TEST_CASE("assemble_probe_signal layout") {
    ProbeSignalConfig cfg = default_probe_config();
    const Waveform probe = assemble_probe_signal(cfg);
    const Eigen::Index chirp_len = cfg.chirp_specs[0].duration_samples;

    SUBCASE("onset closed form") {
        const Eigen::Index pilot_end = cfg.pilot_duration_samples;
        for (int k = 0; k < 9; ++k)
            CHECK(probe_chirp_onset(cfg, k) ==
                  pilot_end + 8000 + Eigen::Index(k) * (3000 + chirp_len));
    }
    SUBCASE("configured gaps are 8000 and 3000 samples") {
        CHECK(cfg.gap_pilot_to_first_chirp == 8000);
        CHECK(cfg.gap_between_chirps == 3000);
        CHECK(probe_chirp_onset(cfg, 1) - probe_chirp_onset(cfg, 0) == 3000 + chirp_len);
    }
    SUBCASE("every chirp segment matches its windowed template bit-for-bit") {
        const auto templates = probe_chirp_templates(cfg);
        for (int k = 0; k < 9; ++k) {
            const auto segment = probe.samples.segment(probe_chirp_onset(cfg, k), chirp_len);
            CHECK((segment == templates[std::size_t(k)].samples).all());
        }
    }
    SUBCASE("length equals the closed-form sum for varied configs") {
        for (Eigen::Index dur : {48, 64, 200, 1764}) {
            ProbeSignalConfig c = default_probe_config(44100.0, dur);
            c.gap_between_chirps = 2000 + dur;
            const Waveform p = assemble_probe_signal(c);
            const Eigen::Index expected = c.pilot_duration_samples + c.gap_pilot_to_first_chirp +
                                          9 * dur + 8 * c.gap_between_chirps + c.tail_samples;
            CHECK(p.size() == expected);
        }
    }
    SUBCASE("empty chirp list rejected") {
        cfg.chirp_specs.clear();
        CHECK_THROWS_AS(assemble_probe_signal(cfg), InvalidInputError);
    }
    SUBCASE("wrong group repetition rejected") {
        ProbeSignalConfig bad = default_probe_config();
        bad.chirp_specs[4].f_start = 13000.0;
        CHECK_THROWS_AS(assemble_probe_signal(bad), InvalidInputError);
    }
}

TEST_CASE("assembled probe has under 1% energy below 10 kHz") {
    const Waveform probe = assemble_probe_signal(default_probe_config());
    CHECK(oracles::band_energy_fraction(probe.samples, 44100.0, 0.0, 10000.0) < 0.01);
}

TEST_CASE("wav round trip") {
    SUBCASE("random waveform survives within 16-bit quantization") {
        std::mt19937_64 gen(11);
        Waveform w;
        w.sample_rate = 44100.0;
        w.samples.resize(5000);
        for (Eigen::Index i = 0; i < w.size(); ++i)
            w.samples[i] = 2.0 * double(gen() >> 11) * 0x1.0p-53 - 1.0;
        const std::string path = temp_path("m3fas_wav_roundtrip.wav");
        write_wav(w, path);
        const Waveform r = read_wav(path);
        CHECK(r.size() == w.size());
        CHECK(r.sample_rate == w.sample_rate);
        CHECK((r.samples - w.samples).abs().maxCoeff() <= std::pow(2.0, -15.0));
    }
    SUBCASE("single-sample waveform round-trips") {
        Waveform w;
        w.samples = Eigen::ArrayXd::Constant(1, 0.25);
        const std::string path = temp_path("m3fas_wav_one.wav");
        write_wav(w, path);
        CHECK(read_wav(path).size() == 1);
    }
    SUBCASE("truncated file is rejected") {
        Waveform w;
        w.samples = Eigen::ArrayXd::Constant(100, 0.5);
        const std::string path = temp_path("m3fas_wav_trunc.wav");
        write_wav(w, path);
        std::ifstream in(path, std::ios::binary);
        std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                                std::istreambuf_iterator<char>());
        in.close();
        bytes.resize(bytes.size() / 2);
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), std::streamsize(bytes.size()));
        out.close();
        CHECK_THROWS_AS(read_wav(path), IoError);
    }
    SUBCASE("out-of-range samples are rejected on write") {
        Waveform w;
        w.samples = Eigen::ArrayXd::Constant(10, 1.5);
        CHECK_THROWS_AS(write_wav(w, temp_path("m3fas_wav_bad.wav")), InvalidInputError);
    }
}
