#include "m3fas/config.hpp"

#include <fstream>
#include <sstream>

namespace m3fas {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

double to_f(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InvalidInputError("config: bad numeric value for " + key + ": '" + v + "'");
    }
}

long long to_i(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw InvalidInputError("config: bad integer value for " + key + ": '" + v + "'");
    }
}

}  // namespace

Config parse_config_text(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        require(eq != std::string::npos, "config: missing '=' in line: " + line);
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));

        if (key == "signal.sample_rate") cfg.signal.sample_rate = to_f(key, val);
        else if (key == "signal.pilot_freq") cfg.signal.pilot_freq = to_f(key, val);
        else if (key == "signal.pilot_duration") cfg.signal.pilot_duration = to_i(key, val);
        else if (key == "signal.gap_pilot_to_first_chirp")
            cfg.signal.gap_pilot_to_first_chirp = to_i(key, val);
        else if (key == "signal.gap_between_chirps")
            cfg.signal.gap_between_chirps = to_i(key, val);
        else if (key == "signal.chirp_duration") cfg.signal.chirp_duration = to_i(key, val);
        else if (key == "signal.amplitude") cfg.signal.amplitude = to_f(key, val);
        else if (key == "signal.window") cfg.signal.window = val;
        else if (key == "signal.group1_f_start") cfg.signal.group_f_start[0] = to_f(key, val);
        else if (key == "signal.group1_f_end") cfg.signal.group_f_end[0] = to_f(key, val);
        else if (key == "signal.group2_f_start") cfg.signal.group_f_start[1] = to_f(key, val);
        else if (key == "signal.group2_f_end") cfg.signal.group_f_end[1] = to_f(key, val);
        else if (key == "signal.group3_f_start") cfg.signal.group_f_start[2] = to_f(key, val);
        else if (key == "signal.group3_f_end") cfg.signal.group_f_end[2] = to_f(key, val);
        else if (key == "pipeline.highpass_cutoff") cfg.pipeline.highpass_cutoff = to_f(key, val);
        else if (key == "pipeline.echo_window") cfg.pipeline.echo_window = to_i(key, val);
        else if (key == "pipeline.search_span") cfg.pipeline.search_span = to_i(key, val);
        else if (key == "pipeline.stft_window") cfg.pipeline.stft_window = to_i(key, val);
        else if (key == "pipeline.stft_hop") cfg.pipeline.stft_hop = to_i(key, val);
        else if (key == "pipeline.adaptive_peak_ratio")
            cfg.pipeline.adaptive_peak_ratio = to_f(key, val);
        else if (key == "pipeline.highpass_taps")
            cfg.pipeline.highpass_taps = int(to_i(key, val));
        else if (key == "sim.noise_snr_db") cfg.sim.noise_snr_db = to_f(key, val);
        else if (key == "sim.image_size") cfg.sim.image_size = to_i(key, val);
        else if (key == "sim.image_noise_sigma") cfg.sim.image_noise_sigma = to_f(key, val);
        else if (key == "sim.image_blur_radius")
            cfg.sim.image_blur_radius = int(to_i(key, val));
        else if (key == "model.vision_size") cfg.model.vision_size = to_i(key, val);
        else if (key == "model.block1_layers") cfg.model.block_layers[0] = int(to_i(key, val));
        else if (key == "model.block2_layers") cfg.model.block_layers[1] = int(to_i(key, val));
        else if (key == "model.block3_layers") cfg.model.block_layers[2] = int(to_i(key, val));
        else if (key == "model.block1_channels") cfg.model.channels[0] = to_i(key, val);
        else if (key == "model.block2_channels") cfg.model.channels[1] = to_i(key, val);
        else if (key == "model.block3_channels") cfg.model.channels[2] = to_i(key, val);
        else if (key == "model.grid1") cfg.model.fusion_grid[0] = to_i(key, val);
        else if (key == "model.grid2") cfg.model.fusion_grid[1] = to_i(key, val);
        else if (key == "model.grid3") cfg.model.fusion_grid[2] = to_i(key, val);
        else if (key == "model.fusion_levels") cfg.model.fusion_levels = val;
        else if (key == "model.fusion_strategy") cfg.model.fusion_strategy = val;
        else if (key == "train.epochs") cfg.train.epochs = int(to_i(key, val));
        else if (key == "train.batch_size") cfg.train.batch_size = int(to_i(key, val));
        else if (key == "train.lr") cfg.train.lr = to_f(key, val);
        else if (key == "train.weight_decay") cfg.train.weight_decay = to_f(key, val);
        else if (key == "train.alpha") cfg.train.alpha = to_f(key, val);
        else if (key == "train.mode") cfg.train.mode = val;
        else if (key == "train.seed") cfg.train.seed = std::uint64_t(to_i(key, val));
        else if (key == "train.split_train") cfg.train.split_train = to_f(key, val);
        else if (key == "train.split_val") cfg.train.split_val = to_f(key, val);
        else if (key == "train.split_test") cfg.train.split_test = to_f(key, val);
        else if (key == "train.split_mode") cfg.train.split_mode = val;
        else if (key == "train.holdout_device") cfg.train.holdout_device = int(to_i(key, val));
        else if (key == "train.hter_threshold") cfg.train.hter_threshold = to_f(key, val);
        else throw InvalidInputError("config: unknown key '" + key + "'");
    }
    return cfg;
}

Config load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_to_text(const Config& cfg) {
    std::ostringstream os;
    os.precision(17);
    os << "signal.sample_rate=" << cfg.signal.sample_rate << '\n'
       << "signal.pilot_freq=" << cfg.signal.pilot_freq << '\n'
       << "signal.pilot_duration=" << cfg.signal.pilot_duration << '\n'
       << "signal.gap_pilot_to_first_chirp=" << cfg.signal.gap_pilot_to_first_chirp << '\n'
       << "signal.gap_between_chirps=" << cfg.signal.gap_between_chirps << '\n'
       << "signal.chirp_duration=" << cfg.signal.chirp_duration << '\n'
       << "signal.amplitude=" << cfg.signal.amplitude << '\n'
       << "signal.window=" << cfg.signal.window << '\n';
    for (int g = 0; g < 3; ++g)
        os << "signal.group" << g + 1 << "_f_start=" << cfg.signal.group_f_start[g] << '\n'
           << "signal.group" << g + 1 << "_f_end=" << cfg.signal.group_f_end[g] << '\n';
    os << "pipeline.highpass_cutoff=" << cfg.pipeline.highpass_cutoff << '\n'
       << "pipeline.echo_window=" << cfg.pipeline.echo_window << '\n'
       << "pipeline.search_span=" << cfg.pipeline.search_span << '\n'
       << "pipeline.stft_window=" << cfg.pipeline.stft_window << '\n'
       << "pipeline.stft_hop=" << cfg.pipeline.stft_hop << '\n'
       << "pipeline.adaptive_peak_ratio=" << cfg.pipeline.adaptive_peak_ratio << '\n'
       << "pipeline.highpass_taps=" << cfg.pipeline.highpass_taps << '\n'
       << "sim.noise_snr_db=" << cfg.sim.noise_snr_db << '\n'
       << "sim.image_size=" << cfg.sim.image_size << '\n'
       << "sim.image_noise_sigma=" << cfg.sim.image_noise_sigma << '\n'
       << "sim.image_blur_radius=" << cfg.sim.image_blur_radius << '\n'
       << "model.vision_size=" << cfg.model.vision_size << '\n';
    for (int i = 0; i < 3; ++i)
        os << "model.block" << i + 1 << "_layers=" << cfg.model.block_layers[i] << '\n'
           << "model.block" << i + 1 << "_channels=" << cfg.model.channels[i] << '\n'
           << "model.grid" << i + 1 << "=" << cfg.model.fusion_grid[i] << '\n';
    os << "model.fusion_levels=" << cfg.model.fusion_levels << '\n'
       << "model.fusion_strategy=" << cfg.model.fusion_strategy << '\n'
       << "train.epochs=" << cfg.train.epochs << '\n'
       << "train.batch_size=" << cfg.train.batch_size << '\n'
       << "train.lr=" << cfg.train.lr << '\n'
       << "train.weight_decay=" << cfg.train.weight_decay << '\n'
       << "train.alpha=" << cfg.train.alpha << '\n'
       << "train.mode=" << cfg.train.mode << '\n'
       << "train.seed=" << cfg.train.seed << '\n'
       << "train.split_train=" << cfg.train.split_train << '\n'
       << "train.split_val=" << cfg.train.split_val << '\n'
       << "train.split_test=" << cfg.train.split_test << '\n'
       << "train.split_mode=" << cfg.train.split_mode << '\n'
       << "train.holdout_device=" << cfg.train.holdout_device << '\n'
       << "train.hter_threshold=" << cfg.train.hter_threshold << '\n';
    return os.str();
}

ProbeSignalConfig make_probe_config(const Config& cfg) {
    ProbeSignalConfig probe;
    probe.sample_rate = cfg.signal.sample_rate;
    probe.pilot_freq = cfg.signal.pilot_freq;
    probe.pilot_duration_samples = cfg.signal.pilot_duration;
    probe.gap_pilot_to_first_chirp = cfg.signal.gap_pilot_to_first_chirp;
    probe.gap_between_chirps = cfg.signal.gap_between_chirps;
    if (cfg.signal.window == "hamming") probe.window = WindowKind::hamming;
    else if (cfg.signal.window == "none") probe.window = WindowKind::none;
    else throw InvalidInputError("config: signal.window must be hamming or none");
    for (int rep = 0; rep < 3; ++rep)
        for (int g = 0; g < 3; ++g) {
            ChirpSpec spec;
            spec.f_start = cfg.signal.group_f_start[g];
            spec.f_end = cfg.signal.group_f_end[g];
            spec.duration_samples = cfg.signal.chirp_duration;
            spec.amplitude = cfg.signal.amplitude;
            probe.chirp_specs.push_back(spec);
        }
    validate_probe_config(probe);
    return probe;
}

PipelineConfig make_pipeline_config(const Config& cfg) {
    PipelineConfig p = make_pipeline_config(make_probe_config(cfg));
    p.highpass_cutoff = cfg.pipeline.highpass_cutoff;
    p.echo_window = cfg.pipeline.echo_window;
    p.search_span = cfg.pipeline.search_span;
    p.stft_window = cfg.pipeline.stft_window;
    p.stft_hop = cfg.pipeline.stft_hop;
    p.adaptive_peak_ratio = cfg.pipeline.adaptive_peak_ratio;
    p.highpass_taps = cfg.pipeline.highpass_taps;
    validate_pipeline_config(p);
    return p;
}

ModelConfig make_model_config(const Config& cfg, std::uint64_t init_seed) {
    ModelConfig m;
    m.vision_size = cfg.model.vision_size;
    m.spec_bins = cfg.pipeline.stft_window / 2 + 1;
    const Eigen::Index echo_len = 9 * cfg.pipeline.echo_window;
    m.spec_frames = (echo_len - cfg.pipeline.stft_window) / cfg.pipeline.stft_hop + 1;
    for (int i = 0; i < 3; ++i) {
        m.block_layers[std::size_t(i)] = cfg.model.block_layers[i];
        m.channels[std::size_t(i)] = cfg.model.channels[i];
        m.fusion_grid[std::size_t(i)] = cfg.model.fusion_grid[i];
        m.fusion_levels[std::size_t(i)] =
            cfg.model.fusion_levels.find(char('1' + i)) != std::string::npos;
    }
    m.fusion = parse_fusion_strategy(cfg.model.fusion_strategy);
    m.init_seed = init_seed;
    validate_model_config(m);
    return m;
}

DatasetBuildConfig make_dataset_build_config(const Config& cfg) {
    DatasetBuildConfig b;
    b.probe = make_probe_config(cfg);
    b.image.size = cfg.sim.image_size;
    b.image.pixel_noise_sigma = cfg.sim.image_noise_sigma;
    b.image.blur_radius = cfg.sim.image_blur_radius;
    b.noise_snr_db = cfg.sim.noise_snr_db;
    return b;
}

}  // namespace m3fas
