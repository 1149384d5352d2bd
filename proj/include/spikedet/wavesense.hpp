#pragma once

// WaveSense-style stacked spiking network.
//
// Block b: bus input -> two parallel synaptic projections (w_fast/w_slow with
// per-block time constants) -> spiking hidden layer -> 1x1 dense (w_res) added
// back onto the bus. Every block also projects its hidden spikes through
// w_skip into the readout's hidden LIF layer. The readout is
// readout_hidden LIF -> n_classes output units that are pure synaptic
// integrators; their synaptic current traces are the classification signal.
//
// Every synaptic projection normalizes its per-step weighted input by its own
// DC gain, making each synapse unit-gain at steady state: the float path
// scales by (1 - exp(-dt/tau)), the integer path widens its arithmetic shift
// by dash (2^-dash is exactly 1 minus the bit-shift decay factor). Without
// this the accumulating synapse has gain ~tau/dt, and the slow dilations
// integrate multi-count spike inputs into currents hundreds of thresholds
// deep (pinning neurons at the 31-spike cap and saturating the 16-bit path);
// normalizing per-regime also keeps the two regimes' steady-state drive
// aligned instead of compounding the decay-factor gap across layers.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikedet/encoding.hpp"
#include "spikedet/errors.hpp"
#include "spikedet/lif.hpp"

namespace spikedet {

struct DenseMatrix {
    std::size_t rows = 0, cols = 0;
    std::vector<double> w;  // row-major

    DenseMatrix() = default;
    DenseMatrix(std::size_t r, std::size_t c) : rows(r), cols(c), w(r * c, 0.0) {}
    double& at(std::size_t r, std::size_t c) { return w[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return w[r * cols + c]; }
    bool operator==(const DenseMatrix&) const = default;
};

inline bool operator==(const LifParams& a, const LifParams& b) {
    return a.tau_mem == b.tau_mem && a.tau_syn == b.tau_syn && a.threshold == b.threshold &&
           a.v_reset == b.v_reset && a.dt == b.dt && a.bias == b.bias;
}

struct WaveSenseConfig {
    int n_input_channels = 4;  // spike channels (2x EEG channels)
    int n_classes = 2;
    int n_blocks = 4;
    int neurons_per_block = 16;
    int readout_hidden = 16;
    std::vector<double> dilation_taus;  // seconds, 2 per block; empty = default schedule
    LifParams lif;                      // shared neuron parameters (v_reset 0, bias 0)
    double tau_syn_readout_s = 0.0;     // 0 = default 8*dt
    double tau_syn_output_s = 0.0;      // 0 = default 32*dt

    bool operator==(const WaveSenseConfig&) const = default;
};

// The dilation schedule doubles along the list starting at 2*dt, two synapses
// per block: 2dt, 4dt, 8dt, ... (exact powers of two align with the bit-shift
// decay grid of the integer model).
inline std::vector<double> default_dilation_taus(int n_blocks, double dt) {
    std::vector<double> taus;
    for (int i = 0; i < 2 * n_blocks; ++i) taus.push_back(dt * std::ldexp(1.0, i + 1));
    return taus;
}

inline int total_hidden_neurons(const WaveSenseConfig& cfg) {
    return cfg.n_blocks * cfg.neurons_per_block + cfg.readout_hidden;
}

inline WaveSenseConfig finalize_config(WaveSenseConfig cfg) {
    if (cfg.dilation_taus.empty()) cfg.dilation_taus = default_dilation_taus(cfg.n_blocks, cfg.lif.dt);
    if (cfg.tau_syn_readout_s <= 0) cfg.tau_syn_readout_s = 8.0 * cfg.lif.dt;
    if (cfg.tau_syn_output_s <= 0) cfg.tau_syn_output_s = 32.0 * cfg.lif.dt;
    return cfg;
}

inline void validate_config(const WaveSenseConfig& cfg) {
    auto fail = [](const std::string& msg) { throw ConfigViolation(msg); };
    if (cfg.lif.dt <= 0) fail("dt must be positive");
    if (cfg.n_input_channels < 1 || cfg.n_input_channels > 16)
        fail("input channels must be in [1,16], got " + std::to_string(cfg.n_input_channels));
    if (cfg.n_classes < 1 || cfg.n_classes > 8)
        fail("classes must be in [1,8], got " + std::to_string(cfg.n_classes));
    if (cfg.n_blocks < 0) fail("block count must be non-negative");
    if (cfg.n_blocks > 0 && cfg.neurons_per_block < 1) fail("neurons per block must be positive");
    if (cfg.readout_hidden < 1) fail("readout hidden count must be positive");
    if (total_hidden_neurons(cfg) > 1000)
        fail("total hidden neurons must be <= 1000, got " + std::to_string(total_hidden_neurons(cfg)));
    if (static_cast<int>(cfg.dilation_taus.size()) != 2 * cfg.n_blocks)
        fail("dilation_taus must have exactly 2 entries per block");
    for (double tau : cfg.dilation_taus)
        if (tau < cfg.lif.dt) fail("dilation tau below dt");
    if (!(cfg.lif.threshold > cfg.lif.v_reset)) fail("threshold must exceed v_reset");
}

struct WaveBlock {
    DenseMatrix w_fast;  // H x C
    DenseMatrix w_slow;  // H x C
    DenseMatrix w_res;   // C x H (1x1 dense back onto the bus)
    DenseMatrix w_skip;  // readout_hidden x H
    double tau_fast = 0.0, tau_slow = 0.0;

    bool operator==(const WaveBlock&) const = default;
};

struct Network {
    WaveSenseConfig config;
    std::vector<WaveBlock> blocks;
    DenseMatrix w_out;  // n_classes x readout_hidden
    std::uint64_t seed = 0;
    double encoder_step_uv = 0.0;  // filled by the pipeline once known

    bool operator==(const Network&) const = default;
};

inline std::size_t count_weights(const Network& net) {
    std::size_t n = net.w_out.w.size();
    for (const auto& b : net.blocks)
        n += b.w_fast.w.size() + b.w_slow.w.size() + b.w_res.w.size() + b.w_skip.w.size();
    return n;
}

// Deterministic initialization: uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)],
// matrices drawn in topology order from a single seeded generator.
inline Network build_network(const WaveSenseConfig& config, std::uint64_t seed) {
    WaveSenseConfig cfg = finalize_config(config);
    validate_config(cfg);

    std::mt19937_64 rng(seed);
    auto init = [&rng](DenseMatrix& m) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(m.cols ? m.cols : 1));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : m.w) v = dist(rng);
    };

    Network net;
    net.config = cfg;
    net.seed = seed;
    const std::size_t C = static_cast<std::size_t>(cfg.n_input_channels);
    const std::size_t H = static_cast<std::size_t>(cfg.neurons_per_block);
    const std::size_t R = static_cast<std::size_t>(cfg.readout_hidden);

    for (int b = 0; b < cfg.n_blocks; ++b) {
        WaveBlock blk;
        blk.tau_fast = cfg.dilation_taus[2 * b];
        blk.tau_slow = cfg.dilation_taus[2 * b + 1];
        blk.w_fast = DenseMatrix(H, C);
        blk.w_slow = DenseMatrix(H, C);
        blk.w_res = DenseMatrix(C, H);
        blk.w_skip = DenseMatrix(R, H);
        init(blk.w_fast);
        init(blk.w_slow);
        init(blk.w_res);
        init(blk.w_skip);
        net.blocks.push_back(std::move(blk));
    }
    net.w_out = DenseMatrix(static_cast<std::size_t>(cfg.n_classes), R);
    init(net.w_out);
    return net;
}

// Time-stepped float execution state. forward(), the trainer's tape pass and
// the stream engine all advance the same runner, so there is a single float
// code path.
class FloatRunner {
public:
    explicit FloatRunner(const Network& net) : net_(&net) {
        const auto& cfg = net.config;
        const double dt = cfg.lif.dt;
        alpha_mem_ = std::exp(-dt / cfg.lif.tau_mem);
        alpha_ro_syn_ = std::exp(-dt / cfg.tau_syn_readout_s);
        alpha_out_ = std::exp(-dt / cfg.tau_syn_output_s);
        scale_ro_ = 1.0 - alpha_ro_syn_;
        scale_out_ = 1.0 - alpha_out_;
        for (const auto& b : net.blocks) {
            alpha_fast_.push_back(std::exp(-dt / b.tau_fast));
            alpha_slow_.push_back(std::exp(-dt / b.tau_slow));
            scale_fast_.push_back(1.0 - alpha_fast_.back());
            scale_slow_.push_back(1.0 - alpha_slow_.back());
        }
        reset();
    }

    void reset() {
        const auto& cfg = net_->config;
        const std::size_t H = static_cast<std::size_t>(cfg.neurons_per_block);
        i_fast_.assign(net_->blocks.size(), std::vector<double>(H, 0.0));
        i_slow_.assign(net_->blocks.size(), std::vector<double>(H, 0.0));
        v_.assign(net_->blocks.size(), std::vector<double>(H, 0.0));
        s_blocks_.assign(net_->blocks.size(), std::vector<int>(H, 0));
        w_pre_blocks_.assign(net_->blocks.size(), std::vector<double>(H, 0.0));
        bus_in_.assign(net_->blocks.size(),
                       std::vector<double>(static_cast<std::size_t>(cfg.n_input_channels), 0.0));
        i_ro_.assign(static_cast<std::size_t>(cfg.readout_hidden), 0.0);
        v_ro_.assign(static_cast<std::size_t>(cfg.readout_hidden), 0.0);
        s_ro_.assign(static_cast<std::size_t>(cfg.readout_hidden), 0);
        w_pre_ro_.assign(static_cast<std::size_t>(cfg.readout_hidden), 0.0);
        i_out_.assign(static_cast<std::size_t>(cfg.n_classes), 0.0);
        bus_.assign(static_cast<std::size_t>(cfg.n_input_channels), 0.0);
        skip_acc_.assign(static_cast<std::size_t>(cfg.readout_hidden), 0.0);
    }

    // Advance one timestep with per-channel input spike counts.
    void step(const std::uint16_t* counts) {
        const auto& cfg = net_->config;
        const std::size_t C = static_cast<std::size_t>(cfg.n_input_channels);
        const std::size_t H = static_cast<std::size_t>(cfg.neurons_per_block);
        const std::size_t R = static_cast<std::size_t>(cfg.readout_hidden);
        const double theta = cfg.lif.threshold;
        const double reset_step = cfg.lif.threshold - cfg.lif.v_reset;

        for (std::size_t c = 0; c < C; ++c) bus_[c] = static_cast<double>(counts[c]);
        std::fill(skip_acc_.begin(), skip_acc_.end(), 0.0);

        for (std::size_t b = 0; b < net_->blocks.size(); ++b) {
            const auto& blk = net_->blocks[b];
            bus_in_[b] = bus_;
            auto& ifa = i_fast_[b];
            auto& isl = i_slow_[b];
            auto& v = v_[b];
            auto& s = s_blocks_[b];
            for (std::size_t n = 0; n < H; ++n) {
                double uf = 0.0, us = 0.0;
                const double* wf = &blk.w_fast.w[n * C];
                const double* ws = &blk.w_slow.w[n * C];
                for (std::size_t c = 0; c < C; ++c) {
                    uf += wf[c] * bus_[c];
                    us += ws[c] * bus_[c];
                }
                ifa[n] = alpha_fast_[b] * ifa[n] + scale_fast_[b] * uf;
                isl[n] = alpha_slow_[b] * isl[n] + scale_slow_[b] * us;
                v[n] = alpha_mem_ * v[n] + ifa[n] + isl[n] + cfg.lif.bias;
                w_pre_blocks_[b][n] = v[n];
                s[n] = spike_count_float(v[n], theta);
                if (s[n]) v[n] -= s[n] * reset_step;
            }
            for (std::size_t n = 0; n < H; ++n) {
                if (!s[n]) continue;
                const double sn = static_cast<double>(s[n]);
                for (std::size_t j = 0; j < R; ++j) skip_acc_[j] += blk.w_skip.at(j, n) * sn;
                for (std::size_t c = 0; c < C; ++c) bus_[c] += blk.w_res.at(c, n) * sn;
            }
        }

        for (std::size_t j = 0; j < R; ++j) {
            i_ro_[j] = alpha_ro_syn_ * i_ro_[j] + scale_ro_ * skip_acc_[j];
            v_ro_[j] = alpha_mem_ * v_ro_[j] + i_ro_[j] + cfg.lif.bias;
            w_pre_ro_[j] = v_ro_[j];
            s_ro_[j] = spike_count_float(v_ro_[j], theta);
            if (s_ro_[j]) v_ro_[j] -= s_ro_[j] * reset_step;
        }
        for (std::size_t k = 0; k < i_out_.size(); ++k) {
            double u = 0.0;
            for (std::size_t j = 0; j < R; ++j)
                u += net_->w_out.at(k, j) * static_cast<double>(s_ro_[j]);
            i_out_[k] = alpha_out_ * i_out_[k] + scale_out_ * u;
        }
    }

    const std::vector<double>& readout_currents() const { return i_out_; }
    const std::vector<std::vector<int>>& block_spikes() const { return s_blocks_; }
    const std::vector<int>& readout_spikes() const { return s_ro_; }
    const std::vector<std::vector<double>>& block_membrane_pre() const { return w_pre_blocks_; }
    const std::vector<double>& readout_membrane_pre() const { return w_pre_ro_; }
    const std::vector<std::vector<double>>& block_bus_inputs() const { return bus_in_; }

    std::size_t state_bytes() const {
        std::size_t bytes = 0;
        for (const auto& v : i_fast_) bytes += v.size() * sizeof(double);
        for (const auto& v : i_slow_) bytes += v.size() * sizeof(double);
        for (const auto& v : v_) bytes += v.size() * sizeof(double);
        bytes += (i_ro_.size() + v_ro_.size() + i_out_.size()) * sizeof(double);
        return bytes;
    }

private:
    const Network* net_;
    double alpha_mem_ = 0, alpha_ro_syn_ = 0, alpha_out_ = 0;
    double scale_ro_ = 1, scale_out_ = 1;
    std::vector<double> alpha_fast_, alpha_slow_;
    std::vector<double> scale_fast_, scale_slow_;

    std::vector<std::vector<double>> i_fast_, i_slow_, v_;
    std::vector<std::vector<int>> s_blocks_;
    std::vector<std::vector<double>> w_pre_blocks_;
    std::vector<std::vector<double>> bus_in_;
    std::vector<double> i_ro_, v_ro_, w_pre_ro_;
    std::vector<int> s_ro_;
    std::vector<double> i_out_;
    std::vector<double> bus_, skip_acc_;
};

struct ForwardTrace {
    // One raster per spiking layer: blocks in order, then the readout hidden.
    std::vector<SpikeRaster> layer_spikes;
    std::vector<std::vector<double>> readout_currents;  // [class][t]
    std::vector<std::uint64_t> spikes_per_layer;

    std::size_t timesteps() const {
        return readout_currents.empty() ? 0 : readout_currents.front().size();
    }
};

inline ForwardTrace forward(const Network& net, const SpikeRaster& input) {
    const auto& cfg = net.config;
    if (input.channels != static_cast<std::size_t>(cfg.n_input_channels))
        throw ShapeMismatch("input raster has " + std::to_string(input.channels) +
                            " channels, network expects " + std::to_string(cfg.n_input_channels));

    const std::size_t T = input.timesteps;
    const std::size_t H = static_cast<std::size_t>(cfg.neurons_per_block);
    const std::size_t R = static_cast<std::size_t>(cfg.readout_hidden);

    ForwardTrace trace;
    for (std::size_t b = 0; b < net.blocks.size(); ++b) {
        SpikeRaster r;
        r.channels = H;
        r.timesteps = T;
        r.dt = cfg.lif.dt;
        r.counts.assign(H * T, 0);
        trace.layer_spikes.push_back(std::move(r));
    }
    {
        SpikeRaster r;
        r.channels = R;
        r.timesteps = T;
        r.dt = cfg.lif.dt;
        r.counts.assign(R * T, 0);
        trace.layer_spikes.push_back(std::move(r));
    }
    trace.readout_currents.assign(static_cast<std::size_t>(cfg.n_classes),
                                  std::vector<double>(T, 0.0));
    trace.spikes_per_layer.assign(net.blocks.size() + 1, 0);

    FloatRunner runner(net);
    for (std::size_t t = 0; t < T; ++t) {
        runner.step(input.step(t));
        for (std::size_t b = 0; b < net.blocks.size(); ++b) {
            const auto& s = runner.block_spikes()[b];
            for (std::size_t n = 0; n < H; ++n) {
                trace.layer_spikes[b].at(n, t) = static_cast<std::uint16_t>(s[n]);
                trace.spikes_per_layer[b] += static_cast<std::uint64_t>(s[n]);
            }
        }
        const auto& sro = runner.readout_spikes();
        for (std::size_t j = 0; j < R; ++j) {
            trace.layer_spikes.back().at(j, t) = static_cast<std::uint16_t>(sro[j]);
            trace.spikes_per_layer.back() += static_cast<std::uint64_t>(sro[j]);
        }
        for (std::size_t k = 0; k < trace.readout_currents.size(); ++k)
            trace.readout_currents[k][t] = runner.readout_currents()[k];
    }
    return trace;
}

// Per-class peak (max over time) of the readout currents.
inline std::vector<double> readout_peaks(const ForwardTrace& trace) {
    std::vector<double> peaks;
    for (const auto& series : trace.readout_currents) {
        double peak = series.empty() ? 0.0 : series.front();
        for (double v : series) peak = std::max(peak, v);
        peaks.push_back(peak);
    }
    return peaks;
}

// Class with the highest peak current; ties break toward the lowest index.
inline int readout_decision(const ForwardTrace& trace) {
    if (trace.readout_currents.empty() || trace.timesteps() == 0)
        throw std::invalid_argument("readout_decision requires a non-empty trace");
    const auto peaks = readout_peaks(trace);
    int best = 0;
    for (std::size_t k = 1; k < peaks.size(); ++k)
        if (peaks[k] > peaks[best]) best = static_cast<int>(k);
    return best;
}

// --- serialization -----------------------------------------------------------

inline nlohmann::json matrix_to_json(const DenseMatrix& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t r = 0; r < m.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (std::size_t c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

inline DenseMatrix matrix_from_json(const nlohmann::json& j) {
    DenseMatrix m(j.size(), j.empty() ? 0 : j.front().size());
    for (std::size_t r = 0; r < m.rows; ++r)
        for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = j[r][c].get<double>();
    return m;
}

inline nlohmann::json network_to_json(const Network& net) {
    nlohmann::json j;
    j["version"] = 1;
    j["seed"] = net.seed;
    j["encoder_step_uv"] = net.encoder_step_uv;
    const auto& cfg = net.config;
    j["config"] = {{"n_input_channels", cfg.n_input_channels},
                   {"n_classes", cfg.n_classes},
                   {"n_blocks", cfg.n_blocks},
                   {"neurons_per_block", cfg.neurons_per_block},
                   {"readout_hidden", cfg.readout_hidden},
                   {"dilation_taus", cfg.dilation_taus},
                   {"tau_syn_readout_s", cfg.tau_syn_readout_s},
                   {"tau_syn_output_s", cfg.tau_syn_output_s},
                   {"lif",
                    {{"tau_mem", cfg.lif.tau_mem},
                     {"tau_syn", cfg.lif.tau_syn},
                     {"threshold", cfg.lif.threshold},
                     {"v_reset", cfg.lif.v_reset},
                     {"dt", cfg.lif.dt},
                     {"bias", cfg.lif.bias}}}};
    j["blocks"] = nlohmann::json::array();
    for (const auto& b : net.blocks) {
        j["blocks"].push_back({{"tau_fast", b.tau_fast},
                               {"tau_slow", b.tau_slow},
                               {"w_fast", matrix_to_json(b.w_fast)},
                               {"w_slow", matrix_to_json(b.w_slow)},
                               {"w_res", matrix_to_json(b.w_res)},
                               {"w_skip", matrix_to_json(b.w_skip)}});
    }
    j["w_out"] = matrix_to_json(net.w_out);
    return j;
}

inline Network network_from_json(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported network version");
    Network net;
    net.seed = j["seed"].get<std::uint64_t>();
    net.encoder_step_uv = j["encoder_step_uv"].get<double>();
    const auto& jc = j["config"];
    net.config.n_input_channels = jc["n_input_channels"].get<int>();
    net.config.n_classes = jc["n_classes"].get<int>();
    net.config.n_blocks = jc["n_blocks"].get<int>();
    net.config.neurons_per_block = jc["neurons_per_block"].get<int>();
    net.config.readout_hidden = jc["readout_hidden"].get<int>();
    net.config.dilation_taus = jc["dilation_taus"].get<std::vector<double>>();
    net.config.tau_syn_readout_s = jc["tau_syn_readout_s"].get<double>();
    net.config.tau_syn_output_s = jc["tau_syn_output_s"].get<double>();
    const auto& jl = jc["lif"];
    net.config.lif.tau_mem = jl["tau_mem"].get<double>();
    net.config.lif.tau_syn = jl["tau_syn"].get<double>();
    net.config.lif.threshold = jl["threshold"].get<double>();
    net.config.lif.v_reset = jl["v_reset"].get<double>();
    net.config.lif.dt = jl["dt"].get<double>();
    net.config.lif.bias = jl["bias"].get<double>();
    for (const auto& jb : j["blocks"]) {
        WaveBlock b;
        b.tau_fast = jb["tau_fast"].get<double>();
        b.tau_slow = jb["tau_slow"].get<double>();
        b.w_fast = matrix_from_json(jb["w_fast"]);
        b.w_slow = matrix_from_json(jb["w_slow"]);
        b.w_res = matrix_from_json(jb["w_res"]);
        b.w_skip = matrix_from_json(jb["w_skip"]);
        net.blocks.push_back(std::move(b));
    }
    net.w_out = matrix_from_json(j["w_out"]);
    validate_config(net.config);
    return net;
}

}  // namespace spikedet
