#pragma once

// Pipeline configuration and subcommand implementations behind the CLI.
// One JSON config drives every stage; artifacts are plain files in a run
// directory named by the config hash. Every stage is re-runnable from its
// persisted inputs and deterministic given the config's seeds.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikedet/edf.hpp"
#include "spikedet/encoding.hpp"
#include "spikedet/errors.hpp"
#include "spikedet/filters.hpp"
#include "spikedet/hwmap.hpp"
#include "spikedet/recording.hpp"
#include "spikedet/stream.hpp"
#include "spikedet/synth.hpp"
#include "spikedet/train.hpp"
#include "spikedet/wavesense.hpp"

namespace spikedet {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArtifactMissing : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SeizurePattern {
    double first_s = 5.0;
    double ictal_s = 5.0;
    double gap_s = 5.0;
    int count = 219;
};

struct PipelineConfig {
    int version = 1;
    std::uint64_t seed = 42;

    // data
    std::string data_source = "synth";  // "synth" | "edf"
    std::string edf_path;
    std::string annotations_path;
    std::vector<std::string> channels;  // empty = keep all
    double resample_hz = 256.0;
    bool rereference = false;

    // synth
    double synth_duration_s = 2200.0;
    int synth_channels = 2;
    double synth_sample_rate_hz = 256.0;
    double synth_background_rms_uv = 20.0;
    double synth_ictal_rel_amplitude = 3.0;
    double synth_ictal_band_low_hz = 4.0;
    double synth_ictal_band_high_hz = 10.0;
    SeizurePattern synth_pattern;
    std::vector<SeizureAnnotation> synth_seizures;  // used when pattern.count == 0

    FilterSpec filter;

    double window_s = 5.0;
    double overlap_threshold = 0.5;

    double encoder_step_uv = 0.0;  // 0 = derive from training-split IQR
    double iqr_fraction = 0.1;
    int per_step_cap = 15;

    // network (input channel count and dt are derived at build time)
    int n_blocks = 4;
    int neurons_per_block = 16;
    int readout_hidden = 16;
    int n_classes = 2;
    double tau_mem_s = 0.002;
    double threshold = 0.6;
    std::vector<double> dilation_taus_s;
    double tau_syn_readout_s = 0.0;
    double tau_syn_output_s = 0.0;

    TrainConfig train;
    double train_fraction = 0.8;  // the 4:1 split

    double decision_period_s = 0.5;
    QuantizeMode quantize_mode = QuantizeMode::per_layer;
    bool use_quantized = false;  // --quantized
};

namespace pipedetail {

inline void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                       const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            if (key == a) ok = true;
        if (!ok) throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

}  // namespace pipedetail

inline nlohmann::ordered_json pipeline_config_to_json(const PipelineConfig& c) {
    nlohmann::ordered_json j;
    j["version"] = c.version;
    j["seed"] = c.seed;
    j["data"] = {{"source", c.data_source},
                 {"edf_path", c.edf_path},
                 {"annotations_path", c.annotations_path},
                 {"channels", c.channels},
                 {"resample_hz", c.resample_hz},
                 {"rereference", c.rereference}};
    nlohmann::ordered_json seizures = nlohmann::ordered_json::array();
    for (const auto& s : c.synth_seizures) seizures.push_back({s.start_s, s.end_s});
    j["synth"] = {{"duration_s", c.synth_duration_s},
                  {"channels", c.synth_channels},
                  {"sample_rate_hz", c.synth_sample_rate_hz},
                  {"background_rms_uv", c.synth_background_rms_uv},
                  {"ictal_rel_amplitude", c.synth_ictal_rel_amplitude},
                  {"ictal_band_hz", {c.synth_ictal_band_low_hz, c.synth_ictal_band_high_hz}},
                  {"pattern",
                   {{"first_s", c.synth_pattern.first_s},
                    {"ictal_s", c.synth_pattern.ictal_s},
                    {"gap_s", c.synth_pattern.gap_s},
                    {"count", c.synth_pattern.count}}},
                  {"seizures", seizures}};
    j["filter"] = {{"band_low_hz", c.filter.band_low_hz},
                   {"band_high_hz", c.filter.band_high_hz},
                   {"notch_hz", c.filter.notch_hz},
                   {"notch_q", c.filter.notch_q}};
    j["window"] = {{"window_s", c.window_s}, {"overlap_threshold", c.overlap_threshold}};
    j["encoder"] = {{"step_uv", c.encoder_step_uv},
                    {"iqr_fraction", c.iqr_fraction},
                    {"per_step_cap", c.per_step_cap}};
    j["network"] = {{"n_blocks", c.n_blocks},
                    {"neurons_per_block", c.neurons_per_block},
                    {"readout_hidden", c.readout_hidden},
                    {"n_classes", c.n_classes},
                    {"tau_mem_s", c.tau_mem_s},
                    {"threshold", c.threshold},
                    {"dilation_taus_s", c.dilation_taus_s},
                    {"tau_syn_readout_s", c.tau_syn_readout_s},
                    {"tau_syn_output_s", c.tau_syn_output_s}};
    j["train"] = {{"epochs", c.train.epochs},
                  {"learning_rate", c.train.learning_rate},
                  {"batch_size", c.train.batch_size},
                  {"train_fraction", c.train_fraction},
                  {"reg_threshold_l", c.train.reg_threshold_l},
                  {"surrogate_slope", c.train.surrogate_slope},
                  {"rebalance_max_ratio", c.train.rebalance_max_ratio},
                  {"target_train_accuracy", c.train.target_train_accuracy},
                  {"threads", c.train.threads},
                  {"max_grad_norm", c.train.max_grad_norm}};
    j["stream"] = {{"decision_period_s", c.decision_period_s}};
    j["quantize"] = {{"mode", c.quantize_mode == QuantizeMode::per_layer ? "per_layer" : "per_neuron"}};
    return j;
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    using pipedetail::check_keys;
    using pipedetail::get_or;
    PipelineConfig c;
    check_keys(j, {"version", "seed", "data", "synth", "filter", "window", "encoder", "network",
                   "train", "stream", "quantize"},
               "config");
    if (get_or(j, "version", 1) != 1) throw ConfigError("unsupported config version");
    c.seed = get_or<std::uint64_t>(j, "seed", c.seed);

    if (j.contains("data")) {
        const auto& d = j.at("data");
        check_keys(d, {"source", "edf_path", "annotations_path", "channels", "resample_hz",
                       "rereference"},
                   "data");
        c.data_source = get_or<std::string>(d, "source", c.data_source);
        if (c.data_source != "synth" && c.data_source != "edf")
            throw ConfigError("data.source must be 'synth' or 'edf'");
        c.edf_path = get_or<std::string>(d, "edf_path", c.edf_path);
        c.annotations_path = get_or<std::string>(d, "annotations_path", c.annotations_path);
        c.channels = get_or<std::vector<std::string>>(d, "channels", c.channels);
        c.resample_hz = get_or(d, "resample_hz", c.resample_hz);
        c.rereference = get_or(d, "rereference", c.rereference);
        if (c.resample_hz <= 0) throw ConfigError("data.resample_hz must be positive");
    }
    if (j.contains("synth")) {
        const auto& s = j.at("synth");
        check_keys(s, {"duration_s", "channels", "sample_rate_hz", "background_rms_uv",
                       "ictal_rel_amplitude", "ictal_band_hz", "pattern", "seizures"},
                   "synth");
        c.synth_duration_s = get_or(s, "duration_s", c.synth_duration_s);
        c.synth_channels = get_or(s, "channels", c.synth_channels);
        c.synth_sample_rate_hz = get_or(s, "sample_rate_hz", c.synth_sample_rate_hz);
        c.synth_background_rms_uv = get_or(s, "background_rms_uv", c.synth_background_rms_uv);
        c.synth_ictal_rel_amplitude = get_or(s, "ictal_rel_amplitude", c.synth_ictal_rel_amplitude);
        if (s.contains("ictal_band_hz")) {
            const auto band = s.at("ictal_band_hz").get<std::vector<double>>();
            if (band.size() != 2 || !(band[0] < band[1]))
                throw ConfigError("synth.ictal_band_hz must be [low, high]");
            c.synth_ictal_band_low_hz = band[0];
            c.synth_ictal_band_high_hz = band[1];
        }
        if (s.contains("pattern")) {
            const auto& p = s.at("pattern");
            check_keys(p, {"first_s", "ictal_s", "gap_s", "count"}, "synth.pattern");
            c.synth_pattern.first_s = get_or(p, "first_s", c.synth_pattern.first_s);
            c.synth_pattern.ictal_s = get_or(p, "ictal_s", c.synth_pattern.ictal_s);
            c.synth_pattern.gap_s = get_or(p, "gap_s", c.synth_pattern.gap_s);
            c.synth_pattern.count = get_or(p, "count", c.synth_pattern.count);
        }
        if (s.contains("seizures")) {
            c.synth_seizures.clear();
            for (const auto& pair : s.at("seizures")) {
                if (pair.size() != 2) throw ConfigError("synth.seizures entries must be [start, end]");
                c.synth_seizures.push_back({pair[0].get<double>(), pair[1].get<double>()});
            }
        }
    }
    if (j.contains("filter")) {
        const auto& f = j.at("filter");
        check_keys(f, {"band_low_hz", "band_high_hz", "notch_hz", "notch_q"}, "filter");
        c.filter.band_low_hz = get_or(f, "band_low_hz", c.filter.band_low_hz);
        c.filter.band_high_hz = get_or(f, "band_high_hz", c.filter.band_high_hz);
        c.filter.notch_hz = get_or(f, "notch_hz", c.filter.notch_hz);
        c.filter.notch_q = get_or(f, "notch_q", c.filter.notch_q);
    }
    if (j.contains("window")) {
        const auto& w = j.at("window");
        check_keys(w, {"window_s", "overlap_threshold"}, "window");
        c.window_s = get_or(w, "window_s", c.window_s);
        c.overlap_threshold = get_or(w, "overlap_threshold", c.overlap_threshold);
        if (c.window_s <= 0 || c.overlap_threshold < 0 || c.overlap_threshold > 1)
            throw ConfigError("window requires window_s > 0 and overlap_threshold in [0,1]");
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        check_keys(e, {"step_uv", "iqr_fraction", "per_step_cap"}, "encoder");
        c.encoder_step_uv = get_or(e, "step_uv", c.encoder_step_uv);
        c.iqr_fraction = get_or(e, "iqr_fraction", c.iqr_fraction);
        c.per_step_cap = get_or(e, "per_step_cap", c.per_step_cap);
        if (c.per_step_cap < 1) throw ConfigError("encoder.per_step_cap must be >= 1");
    }
    if (j.contains("network")) {
        const auto& n = j.at("network");
        check_keys(n, {"n_blocks", "neurons_per_block", "readout_hidden", "n_classes", "tau_mem_s",
                       "threshold", "dilation_taus_s", "tau_syn_readout_s", "tau_syn_output_s"},
                   "network");
        c.n_blocks = get_or(n, "n_blocks", c.n_blocks);
        c.neurons_per_block = get_or(n, "neurons_per_block", c.neurons_per_block);
        c.readout_hidden = get_or(n, "readout_hidden", c.readout_hidden);
        c.n_classes = get_or(n, "n_classes", c.n_classes);
        c.tau_mem_s = get_or(n, "tau_mem_s", c.tau_mem_s);
        c.threshold = get_or(n, "threshold", c.threshold);
        c.dilation_taus_s = get_or(n, "dilation_taus_s", c.dilation_taus_s);
        c.tau_syn_readout_s = get_or(n, "tau_syn_readout_s", c.tau_syn_readout_s);
        c.tau_syn_output_s = get_or(n, "tau_syn_output_s", c.tau_syn_output_s);
    }
    if (j.contains("train")) {
        const auto& t = j.at("train");
        check_keys(t, {"epochs", "learning_rate", "batch_size", "train_fraction", "reg_threshold_l",
                       "surrogate_slope", "rebalance_max_ratio", "target_train_accuracy", "threads",
                       "max_grad_norm"},
                   "train");
        c.train.epochs = get_or(t, "epochs", c.train.epochs);
        c.train.learning_rate = get_or(t, "learning_rate", c.train.learning_rate);
        c.train.batch_size = get_or(t, "batch_size", c.train.batch_size);
        c.train_fraction = get_or(t, "train_fraction", c.train_fraction);
        c.train.reg_threshold_l = get_or(t, "reg_threshold_l", c.train.reg_threshold_l);
        c.train.surrogate_slope = get_or(t, "surrogate_slope", c.train.surrogate_slope);
        c.train.rebalance_max_ratio = get_or(t, "rebalance_max_ratio", c.train.rebalance_max_ratio);
        c.train.target_train_accuracy =
            get_or(t, "target_train_accuracy", c.train.target_train_accuracy);
        c.train.threads = get_or(t, "threads", c.train.threads);
        c.train.max_grad_norm = get_or(t, "max_grad_norm", c.train.max_grad_norm);
        if (c.train.epochs <= 0 || c.train.learning_rate < 0 || c.train.batch_size <= 0)
            throw ConfigError("train requires epochs > 0, learning_rate >= 0, batch_size > 0");
        if (c.train_fraction <= 0 || c.train_fraction >= 1)
            throw ConfigError("train.train_fraction must be in (0,1)");
    }
    if (j.contains("stream")) {
        const auto& s = j.at("stream");
        check_keys(s, {"decision_period_s"}, "stream");
        c.decision_period_s = get_or(s, "decision_period_s", c.decision_period_s);
        if (c.decision_period_s <= 0) throw ConfigError("stream.decision_period_s must be positive");
    }
    if (j.contains("quantize")) {
        const auto& q = j.at("quantize");
        check_keys(q, {"mode"}, "quantize");
        const std::string mode = get_or<std::string>(q, "mode", "per_layer");
        if (mode == "per_layer") c.quantize_mode = QuantizeMode::per_layer;
        else if (mode == "per_neuron") c.quantize_mode = QuantizeMode::per_neuron;
        else throw ConfigError("quantize.mode must be 'per_layer' or 'per_neuron'");
    }
    c.train.seed = c.seed;
    return c;
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::string config_hash(const PipelineConfig& c) {
    const std::uint64_t h = fnv1a64(pipeline_config_to_json(c).dump());
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%08llx", static_cast<unsigned long long>(h & 0xffffffffull));
    return buf;
}

// --- artifacts ------------------------------------------------------------------

struct RunPaths {
    std::filesystem::path dir;

    std::filesystem::path config() const { return dir / "config.json"; }
    std::filesystem::path synth_edf() const { return dir / "synth.edf"; }
    std::filesystem::path synth_ann() const { return dir / "synth.ann"; }
    std::filesystem::path preprocessed_edf() const { return dir / "preprocessed.edf"; }
    std::filesystem::path preprocessed_ann() const { return dir / "preprocessed.ann"; }
    std::filesystem::path split() const { return dir / "split.json"; }
    std::filesystem::path encoder() const { return dir / "encoder.json"; }
    std::filesystem::path train_set() const { return dir / "train_set.spk"; }
    std::filesystem::path test_set() const { return dir / "test_set.spk"; }
    std::filesystem::path model() const { return dir / "model.json"; }
    std::filesystem::path history() const { return dir / "history.tsv"; }
    std::filesystem::path quantized() const { return dir / "quantized.json"; }
    std::filesystem::path metrics(bool quantized) const {
        return dir / (quantized ? "metrics_quantized.json" : "metrics.json");
    }
    std::filesystem::path energy() const { return dir / "energy.json"; }
    std::filesystem::path timeline() const { return dir / "timeline.tsv"; }
    std::filesystem::path latency_tsv() const { return dir / "latency.tsv"; }
    std::filesystem::path latency_json() const { return dir / "latency.json"; }
    std::filesystem::path report() const { return dir / "report.txt"; }
};

inline RunPaths make_run_dir(const PipelineConfig& cfg, const std::string& out_override) {
    RunPaths paths;
    paths.dir = out_override.empty() ? std::filesystem::path("runs") / config_hash(cfg)
                                     : std::filesystem::path(out_override);
    std::filesystem::create_directories(paths.dir);
    std::ofstream f(paths.config());
    f << pipeline_config_to_json(cfg).dump(2) << "\n";
    return paths;
}

namespace pipedetail {

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw ArtifactMissing("missing artifact: " + p.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                     std::istreambuf_iterator<char>());
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw ArtifactMissing("missing artifact: " + p.string());
    nlohmann::json j;
    f >> j;
    return j;
}

inline Recording load_recording(const std::filesystem::path& edf,
                                const std::filesystem::path& ann) {
    Recording rec = parse_edf(read_bytes(edf));
    std::ifstream f(ann);
    if (f) rec.annotations = read_annotations(f);
    return rec;
}

inline double quantile(std::vector<double> v, double q) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double pos = q * static_cast<double>(v.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

}  // namespace pipedetail

struct EncodedTrial {
    SpikeRaster raster;
    int label = 0;
    double origin_s = 0.0;
};

inline void save_spikeset(std::ostream& out, const std::vector<EncodedTrial>& trials) {
    out << "spikeset version 1 count " << trials.size() << "\n";
    for (std::size_t i = 0; i < trials.size(); ++i) {
        out << "trial " << i << " label " << trials[i].label << " origin_s " << trials[i].origin_s
            << "\n";
        save_raster(out, trials[i].raster);
    }
}

inline std::vector<EncodedTrial> load_spikeset(std::istream& in) {
    std::string word;
    int version = 0;
    std::size_t count = 0;
    in >> word;
    if (word != "spikeset") throw std::invalid_argument("not a spikeset file");
    in >> word >> version >> word >> count;
    if (!in || version != 1) throw std::invalid_argument("unsupported spikeset header");
    std::vector<EncodedTrial> trials(count);
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t idx = 0;
        in >> word >> idx >> word >> trials[i].label >> word >> trials[i].origin_s;
        if (!in) throw std::invalid_argument("malformed spikeset trial header");
        trials[i].raster = load_raster(in);
    }
    return trials;
}

inline nlohmann::ordered_json metrics_to_json(const Metrics& m) {
    auto opt = [](const std::optional<double>& v) {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["tp"] = m.tp;
    j["fp"] = m.fp;
    j["tn"] = m.tn;
    j["fn"] = m.fn;
    j["accuracy"] = opt(m.accuracy);
    j["sensitivity"] = opt(m.sensitivity);
    j["specificity"] = opt(m.specificity);
    j["f1"] = opt(m.f1);
    return j;
}

// --- pipeline stages --------------------------------------------------------------

inline void cmd_synth(const PipelineConfig& cfg, const RunPaths& paths) {
    SynthParams params;
    params.duration_s = cfg.synth_duration_s;
    params.n_channels = cfg.synth_channels;
    params.sample_rate_hz = cfg.synth_sample_rate_hz;
    params.background_rms_uv = cfg.synth_background_rms_uv;
    params.ictal_rel_amplitude = cfg.synth_ictal_rel_amplitude;
    params.ictal_band_low_hz = cfg.synth_ictal_band_low_hz;
    params.ictal_band_high_hz = cfg.synth_ictal_band_high_hz;
    params.seizures = cfg.synth_pattern.count > 0
                          ? regular_seizure_schedule(cfg.synth_pattern.first_s,
                                                     cfg.synth_pattern.ictal_s,
                                                     cfg.synth_pattern.gap_s, cfg.synth_pattern.count)
                          : cfg.synth_seizures;
    for (const auto& s : params.seizures)
        if (s.end_s > cfg.synth_duration_s)
            throw ConfigError("seizure interval extends past synth duration");

    const Recording rec = synth_eeg(params, cfg.seed);
    pipedetail::write_bytes(paths.synth_edf(), write_edf(rec));
    std::ofstream ann(paths.synth_ann());
    write_annotations(ann, rec.annotations);
    std::cout << "synth: " << rec.n_channels() << " channels, " << rec.duration_s() << " s, "
              << params.seizures.size() << " seizures -> " << paths.synth_edf().string() << "\n";
}

inline void cmd_preprocess(const PipelineConfig& cfg, const RunPaths& paths) {
    Recording rec;
    if (cfg.data_source == "synth") {
        rec = pipedetail::load_recording(paths.synth_edf(), paths.synth_ann());
    } else {
        if (cfg.edf_path.empty()) throw ConfigError("data.edf_path required for data.source=edf");
        rec = pipedetail::load_recording(cfg.edf_path, cfg.annotations_path);
    }
    if (!cfg.channels.empty()) rec = select_channels(rec, cfg.channels);
    if (cfg.rereference) rec = rereference_common_average(rec);
    rec = apply_filters(rec, cfg.filter);
    if (cfg.resample_hz != rec.sample_rate_hz) rec = resample(rec, cfg.resample_hz);
    rec.ranges.clear();  // writer derives fresh physical ranges for filtered data
    pipedetail::write_bytes(paths.preprocessed_edf(), write_edf(rec));
    std::ofstream ann(paths.preprocessed_ann());
    write_annotations(ann, rec.annotations);
    std::cout << "preprocess: " << rec.n_channels() << " channels at " << rec.sample_rate_hz
              << " Hz -> " << paths.preprocessed_edf().string() << "\n";
}

inline void cmd_encode(const PipelineConfig& cfg, const RunPaths& paths) {
    const Recording rec =
        pipedetail::load_recording(paths.preprocessed_edf(), paths.preprocessed_ann());
    const std::vector<Trial> trials = segment_trials(rec, cfg.window_s, cfg.overlap_threshold);
    if (trials.empty()) throw ConfigError("recording too short for a single window");

    auto [train_idx, test_idx] = split_indices(trials.size(), cfg.train_fraction, cfg.seed);

    double step = cfg.encoder_step_uv;
    if (step <= 0) {
        // 0.1 x the median over channels of the per-channel IQR, training split only.
        std::vector<double> iqrs;
        for (std::size_t c = 0; c < rec.n_channels(); ++c) {
            std::vector<double> samples;
            for (auto i : train_idx)
                samples.insert(samples.end(), trials[i].data[c].begin(), trials[i].data[c].end());
            iqrs.push_back(pipedetail::quantile(samples, 0.75) -
                           pipedetail::quantile(samples, 0.25));
        }
        step = cfg.iqr_fraction * pipedetail::quantile(iqrs, 0.5);
        if (!(step > 0)) {
            std::cerr << "warning: degenerate signal statistics, falling back to step 1 uV\n";
            step = 1.0;
        }
    }

    const double dt = 1.0 / rec.sample_rate_hz;
    std::uint64_t clamped_total = 0;
    auto encode_split = [&](const std::vector<std::size_t>& idx) {
        std::vector<EncodedTrial> out;
        for (auto i : idx) {
            std::uint64_t clamped = 0;
            EncodedTrial et;
            et.raster = encode(trials[i].data, step, dt, cfg.per_step_cap, &clamped);
            et.label = trials[i].label == TrialLabel::ictal ? 1 : 0;
            et.origin_s = trials[i].origin_s;
            clamped_total += clamped;
            out.push_back(std::move(et));
        }
        return out;
    };
    const auto train_set = encode_split(train_idx);
    const auto test_set = encode_split(test_idx);
    if (clamped_total)
        std::cerr << "warning: encoder clamped " << clamped_total << " timesteps at cap "
                  << cfg.per_step_cap << "\n";

    {
        std::ofstream f(paths.train_set());
        save_spikeset(f, train_set);
    }
    {
        std::ofstream f(paths.test_set());
        save_spikeset(f, test_set);
    }
    {
        nlohmann::ordered_json j;
        j["version"] = 1;
        j["step_uv"] = step;
        j["per_step_cap"] = cfg.per_step_cap;
        j["dt"] = dt;
        j["n_eeg_channels"] = rec.n_channels();
        std::ofstream f(paths.encoder());
        f << j.dump(2) << "\n";
    }
    {
        nlohmann::ordered_json j;
        j["version"] = 1;
        j["train"] = train_idx;
        j["test"] = test_idx;
        std::ofstream f(paths.split());
        f << j.dump(2) << "\n";
    }
    std::size_t train_pos = 0, test_pos = 0;
    for (const auto& t : train_set) train_pos += static_cast<std::size_t>(t.label);
    for (const auto& t : test_set) test_pos += static_cast<std::size_t>(t.label);
    std::cout << "encode: step " << step << " uV; train " << train_set.size() << " trials ("
              << train_pos << " ictal), test " << test_set.size() << " trials (" << test_pos
              << " ictal)\n";
}

inline std::vector<LabeledRaster> as_labeled(const std::vector<EncodedTrial>& trials) {
    std::vector<LabeledRaster> out;
    out.reserve(trials.size());
    for (const auto& t : trials) out.emplace_back(t.raster, t.label);
    return out;
}

inline void cmd_train(const PipelineConfig& cfg, const RunPaths& paths) {
    std::ifstream ftrain(paths.train_set());
    if (!ftrain) throw ArtifactMissing("missing artifact: " + paths.train_set().string());
    std::ifstream ftest(paths.test_set());
    if (!ftest) throw ArtifactMissing("missing artifact: " + paths.test_set().string());
    const auto train_set = load_spikeset(ftrain);
    const auto test_set = load_spikeset(ftest);
    if (train_set.empty()) throw ConfigError("empty training set");
    const auto enc = pipedetail::read_json(paths.encoder());

    WaveSenseConfig ncfg;
    ncfg.n_input_channels = static_cast<int>(train_set.front().raster.channels);
    ncfg.n_classes = cfg.n_classes;
    ncfg.n_blocks = cfg.n_blocks;
    ncfg.neurons_per_block = cfg.neurons_per_block;
    ncfg.readout_hidden = cfg.readout_hidden;
    ncfg.dilation_taus = cfg.dilation_taus_s;
    ncfg.lif.dt = train_set.front().raster.dt;
    ncfg.lif.tau_mem = cfg.tau_mem_s;
    ncfg.lif.tau_syn = cfg.tau_mem_s;
    ncfg.lif.threshold = cfg.threshold;
    ncfg.tau_syn_readout_s = cfg.tau_syn_readout_s;
    ncfg.tau_syn_output_s = cfg.tau_syn_output_s;

    Network net = build_network(ncfg, cfg.seed);
    net.encoder_step_uv = enc.at("step_uv").get<double>();

    const auto train_trials = as_labeled(train_set);
    const auto test_trials = as_labeled(test_set);
    TrainConfig tcfg = cfg.train;
    tcfg.seed = cfg.seed;
    TrainResult result = train(std::move(net), train_trials, tcfg, &test_trials);

    {
        std::ofstream f(paths.model());
        f << network_to_json(result.net).dump() << "\n";
    }
    {
        std::ofstream f(paths.history());
        f << "epoch\tloss\taccuracy\tsensitivity\tspecificity\tf1\n";
        auto num = [](const std::optional<double>& v) {
            return v ? std::to_string(*v) : std::string("nan");
        };
        for (const auto& rec : result.history) {
            f << rec.epoch << '\t' << rec.mean_loss << '\t';
            if (rec.test) {
                f << num(rec.test->accuracy) << '\t' << num(rec.test->sensitivity) << '\t'
                  << num(rec.test->specificity) << '\t' << num(rec.test->f1) << '\n';
            } else {
                f << "nan\tnan\tnan\tnan\n";
            }
        }
    }
    const auto& last = result.history.back();
    std::cout << "train: " << result.history.size() << " epochs, final loss " << last.mean_loss;
    if (last.test && last.test->accuracy) std::cout << ", test accuracy " << *last.test->accuracy;
    std::cout << " -> " << paths.model().string() << "\n";
}

// Returns the violations (empty = deployable); writes the config only when valid.
inline std::vector<Violation> cmd_quantize(const PipelineConfig& cfg, const RunPaths& paths) {
    const Network net = network_from_json(pipedetail::read_json(paths.model()));
    const QuantizeResult qr = quantize(extract_graph(net), cfg.quantize_mode);
    for (const auto& w : qr.warnings) std::cerr << "warning: " << w << "\n";
    const auto violations = validate(qr.config);
    if (!violations.empty()) {
        for (const auto& v : violations) std::cerr << "violation: " << v.bound << ": " << v.message << "\n";
        return violations;
    }
    std::ofstream f(paths.quantized());
    f << quantized_to_json(qr.config).dump(2) << "\n";
    std::cout << "quantize: " << count_weights(net) << " weights, bus shift "
              << qr.config.bus_shift << " -> " << paths.quantized().string() << "\n";
    return violations;
}

inline std::vector<Violation> cmd_validate(const PipelineConfig&, const RunPaths& paths) {
    const QuantizedConfig q = quantized_from_json(pipedetail::read_json(paths.quantized()));
    const auto violations = validate(q);
    if (violations.empty()) {
        std::size_t weights = q.w_out.size() * (q.w_out.empty() ? 0 : q.w_out.front().size());
        for (const auto& b : q.blocks)
            weights += b.w_fast.size() * b.w_fast.front().size() +
                       b.w_slow.size() * b.w_slow.front().size() +
                       b.w_res.size() * b.w_res.front().size() +
                       b.w_skip.size() * b.w_skip.front().size();
        std::cout << "validate: deployable; " << weights << " weights, "
                  << q.blocks.size() * static_cast<std::size_t>(q.neurons_per_block) +
                         static_cast<std::size_t>(q.readout_hidden)
                  << " hidden neurons\n";
    } else {
        for (const auto& v : violations)
            std::cerr << "violation: " << v.bound << ": " << v.message << "\n";
    }
    return violations;
}

inline Metrics cmd_eval(const PipelineConfig& cfg, const RunPaths& paths) {
    std::ifstream ftest(paths.test_set());
    if (!ftest) throw ArtifactMissing("missing artifact: " + paths.test_set().string());
    const auto test_set = load_spikeset(ftest);
    if (test_set.empty()) throw ConfigError("empty test set");
    const Network net = network_from_json(pipedetail::read_json(paths.model()));

    std::vector<int> float_decisions;
    for (const auto& t : test_set)
        float_decisions.push_back(readout_decision(forward(net, t.raster)));

    Metrics metrics;
    if (!cfg.use_quantized) {
        long tp = 0, fp = 0, tn = 0, fn = 0;
        for (std::size_t i = 0; i < test_set.size(); ++i) {
            const bool pos = test_set[i].label == 1;
            const bool pred = float_decisions[i] == 1;
            (pos ? (pred ? tp : fn) : (pred ? fp : tn))++;
        }
        metrics = Metrics::from_counts(tp, fp, tn, fn);
        std::ofstream f(paths.metrics(false));
        auto j = metrics_to_json(metrics);
        j["n_trials"] = test_set.size();
        f << j.dump(2) << "\n";
    } else {
        const QuantizedConfig q = quantized_from_json(pipedetail::read_json(paths.quantized()));
        long tp = 0, fp = 0, tn = 0, fn = 0, agree = 0;
        std::uint64_t synops = 0, saturations = 0;
        for (std::size_t i = 0; i < test_set.size(); ++i) {
            const QSimResult sim = simulate_quantized(q, test_set[i].raster);
            const int decision = readout_decision(sim.trace);
            synops += sim.energy.total_synops;
            saturations += sim.energy.saturation_events;
            if (decision == float_decisions[i]) ++agree;
            const bool pos = test_set[i].label == 1;
            const bool pred = decision == 1;
            (pos ? (pred ? tp : fn) : (pred ? fp : tn))++;
        }
        metrics = Metrics::from_counts(tp, fp, tn, fn);
        const double agreement = static_cast<double>(agree) / static_cast<double>(test_set.size());
        {
            std::ofstream f(paths.metrics(true));
            auto j = metrics_to_json(metrics);
            j["n_trials"] = test_set.size();
            j["agreement_with_float"] = agreement;
            f << j.dump(2) << "\n";
        }
        {
            nlohmann::ordered_json j;
            j["total_synops"] = synops;
            j["synops_per_inference"] =
                static_cast<double>(synops) / static_cast<double>(test_set.size());
            j["saturation_events"] = saturations;
            std::ofstream f(paths.energy());
            f << j.dump(2) << "\n";
        }
        std::cout << "eval(quantized): agreement with float " << agreement << "\n";
    }
    if (metrics.accuracy) std::cout << "eval: accuracy " << *metrics.accuracy << "\n";
    return metrics;
}

inline StreamEngine make_engine(const PipelineConfig& cfg, const RunPaths& paths) {
    const auto enc = pipedetail::read_json(paths.encoder());
    const double step = enc.at("step_uv").get<double>();
    const int cap = enc.at("per_step_cap").get<int>();
    if (cfg.use_quantized) {
        const QuantizedConfig q = quantized_from_json(pipedetail::read_json(paths.quantized()));
        const double dt = enc.at("dt").get<double>();
        return StreamEngine(q, dt, step, cfg.decision_period_s, cap);
    }
    const Network net = network_from_json(pipedetail::read_json(paths.model()));
    return StreamEngine(net, step, cfg.decision_period_s, cap);
}

inline DetectionTimeline cmd_stream(const PipelineConfig& cfg, const RunPaths& paths) {
    const Recording rec =
        pipedetail::load_recording(paths.preprocessed_edf(), paths.preprocessed_ann());
    StreamEngine engine = make_engine(cfg, paths);
    const DetectionTimeline timeline = replay(rec, engine);
    {
        std::ofstream f(paths.timeline());
        write_timeline_tsv(f, timeline);
    }
    for (const auto& tr : timeline.transitions)
        std::cout << "alarm " << (tr.to == AlarmStatus::alarm ? "ON" : "off") << " at " << tr.time_s
                  << " s\n";
    std::cout << "stream: " << timeline.points.size() << " decisions, "
              << timeline.transitions.size() << " alarm transitions -> "
              << paths.timeline().string() << "\n";
    return timeline;
}

inline LatencyStat cmd_latency(const PipelineConfig& cfg, const RunPaths& paths) {
    const Recording rec =
        pipedetail::load_recording(paths.preprocessed_edf(), paths.preprocessed_ann());
    const auto trials = segment_trials(rec, cfg.window_s, cfg.overlap_threshold);
    const auto split = pipedetail::read_json(paths.split());
    std::vector<Trial> test_trials;
    for (auto i : split.at("test").get<std::vector<std::size_t>>()) {
        if (i >= trials.size()) throw ConfigError("split indices do not match recording");
        test_trials.push_back(trials[i]);
    }
    const LatencyStat stat =
        measure_latency([&] { return make_engine(cfg, paths); }, test_trials);
    {
        std::ofstream f(paths.latency_tsv());
        f << "trial\tlabel\tfirst_positive_s\n";
        for (std::size_t i = 0; i < stat.per_trial.size(); ++i) {
            f << i << '\t' << stat.per_trial[i].label << '\t';
            if (stat.per_trial[i].first_positive_s) f << *stat.per_trial[i].first_positive_s;
            else f << "nd";
            f << '\n';
        }
    }
    {
        nlohmann::ordered_json j;
        j["median_s"] = stat.median_s ? nlohmann::ordered_json(*stat.median_s)
                                      : nlohmann::ordered_json(nullptr);
        j["detection_rate"] = stat.detection_rate;
        j["n_positive"] = stat.n_positive;
        j["n_detected"] = stat.n_detected;
        j["n_negative"] = stat.n_negative;
        j["n_false_positive"] = stat.n_false_positive;
        std::ofstream f(paths.latency_json());
        f << j.dump(2) << "\n";
    }
    std::cout << "latency: median ";
    if (stat.median_s) std::cout << *stat.median_s << " s";
    else std::cout << "n/a";
    std::cout << ", detection rate " << stat.detection_rate << " (" << stat.n_detected << "/"
              << stat.n_positive << ")\n";
    return stat;
}

inline void cmd_report(const PipelineConfig&, const RunPaths& paths) {
    std::ostringstream report;
    report << "# run report: " << paths.dir.string() << "\n\n";
    auto embed_json = [&](const std::filesystem::path& p, const char* title) {
        std::ifstream f(p);
        if (!f) return;
        report << "## " << title << "\n";
        report << f.rdbuf() << "\n";
    };
    embed_json(paths.metrics(false), "float metrics");
    embed_json(paths.metrics(true), "quantized metrics");
    embed_json(paths.energy(), "energy proxy (SynOps)");
    embed_json(paths.latency_json(), "latency");
    {
        std::ifstream f(paths.history());
        if (f) {
            report << "## training curve (epoch, loss, test metrics)\n";
            std::string line;
            while (std::getline(f, line)) report << line << "\n";
        }
    }
    std::ofstream f(paths.report());
    f << report.str();
    std::cout << report.str();
}

}  // namespace spikedet
