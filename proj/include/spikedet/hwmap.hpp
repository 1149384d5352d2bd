#pragma once

// Lowering of a trained float network to the integer execution model:
// 8-bit weights, 16-bit saturating state, bit-shift decays, multi-spike cap.
//
// Scales follow the per-destination-group rule (scale = 127 / max incoming
// |w|, thresholds scaled identically) for every spiking group. The 1x1
// residual projections feed the inter-block bus rather than a neuron group,
// so they share one power-of-two scale 2^K ("bus_shift"): input counts enter
// as x << K and each hidden group's weighted sum over the bus is shifted
// right by K after the wide accumulate, which keeps the residual add
// scale-consistent without touching the threshold rule.

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "spikedet/encoding.hpp"
#include "spikedet/errors.hpp"
#include "spikedet/lif.hpp"
#include "spikedet/wavesense.hpp"

namespace spikedet {

// --- neuron graph -------------------------------------------------------------

enum class NeuronRole { block_hidden, readout_hidden, output };

struct NeuronRecord {
    int id = 0;
    NeuronRole role = NeuronRole::block_hidden;
    int block = -1;  // -1 for readout/output
    int index = 0;   // index within its layer
    double tau_mem = 0.0;
    std::vector<double> tau_syn;  // two entries for block neurons
    double threshold = 0.0;
};

struct NeuronGraph {
    WaveSenseConfig config;
    std::vector<NeuronRecord> neurons;
    std::vector<WaveBlock> weights;  // dense weight blocks, one entry per block
    DenseMatrix w_out;
    std::uint64_t seed = 0;
    double encoder_step_uv = 0.0;
};

inline NeuronGraph extract_graph(const Network& net) {
    NeuronGraph g;
    g.config = net.config;
    g.weights = net.blocks;
    g.w_out = net.w_out;
    g.seed = net.seed;
    g.encoder_step_uv = net.encoder_step_uv;

    int id = 0;
    for (int b = 0; b < net.config.n_blocks; ++b) {
        for (int n = 0; n < net.config.neurons_per_block; ++n) {
            NeuronRecord rec;
            rec.id = id++;
            rec.role = NeuronRole::block_hidden;
            rec.block = b;
            rec.index = n;
            rec.tau_mem = net.config.lif.tau_mem;
            rec.tau_syn = {net.blocks[static_cast<std::size_t>(b)].tau_fast,
                           net.blocks[static_cast<std::size_t>(b)].tau_slow};
            rec.threshold = net.config.lif.threshold;
            g.neurons.push_back(rec);
        }
    }
    for (int j = 0; j < net.config.readout_hidden; ++j) {
        NeuronRecord rec;
        rec.id = id++;
        rec.role = NeuronRole::readout_hidden;
        rec.index = j;
        rec.tau_mem = net.config.lif.tau_mem;
        rec.tau_syn = {net.config.tau_syn_readout_s};
        rec.threshold = net.config.lif.threshold;
        g.neurons.push_back(rec);
    }
    for (int k = 0; k < net.config.n_classes; ++k) {
        NeuronRecord rec;
        rec.id = id++;
        rec.role = NeuronRole::output;
        rec.index = k;
        rec.tau_syn = {net.config.tau_syn_output_s};
        rec.threshold = 0.0;  // non-spiking integrator
        g.neurons.push_back(rec);
    }
    return g;
}

inline Network network_from_graph(const NeuronGraph& g) {
    Network net;
    net.config = g.config;
    net.blocks = g.weights;
    net.w_out = g.w_out;
    net.seed = g.seed;
    net.encoder_step_uv = g.encoder_step_uv;
    validate_config(net.config);
    return net;
}

// --- quantized configuration ----------------------------------------------------

enum class QuantizeMode { per_layer, per_neuron };

using IntMatrix = std::vector<std::vector<int>>;

struct QuantizedBlock {
    IntMatrix w_fast, w_slow;  // H x C
    IntMatrix w_res;           // C x H
    IntMatrix w_skip;          // R x H
    std::vector<int> threshold;  // per neuron
    int dash_mem = 0, dash_fast = 0, dash_slow = 0;
    std::vector<long long> scale_in_micro;  // per-neuron input scales (uniform in layer mode)
    long long scale_res_micro = 0;
};

struct QuantizedConfig {
    int version = 1;
    int n_inputs = 0;
    int n_outputs = 0;
    int spike_cap = kMaxSpikesPerStep;
    int bus_shift = 0;  // K
    int neurons_per_block = 0;
    int readout_hidden = 0;
    std::vector<QuantizedBlock> blocks;

    std::vector<int> threshold_ro;
    int dash_mem_ro = 0, dash_syn_ro = 0, dash_out = 0;
    IntMatrix w_out;  // n_outputs x R
    std::vector<long long> scale_skip_micro;  // per readout-hidden neuron
    long long scale_out_micro = 0;
};

struct QuantizeResult {
    QuantizedConfig config;
    std::vector<std::string> warnings;
};

namespace hwdetail {

inline int round_half_away(double x) {
    return static_cast<int>(std::llround(x));  // llround rounds halves away from zero
}

inline int clamp_weight(int w) { return std::min(127, std::max(-128, w)); }

inline double max_abs(std::initializer_list<const DenseMatrix*> mats) {
    double m = 0.0;
    for (const auto* mat : mats)
        for (double v : mat->w) m = std::max(m, std::abs(v));
    return m;
}

inline IntMatrix quantize_matrix(const DenseMatrix& m, const std::vector<double>& row_scales,
                                 bool scale_per_row) {
    IntMatrix out(m.rows, std::vector<int>(m.cols, 0));
    for (std::size_t r = 0; r < m.rows; ++r) {
        const double s = scale_per_row ? row_scales[r] : row_scales[0];
        for (std::size_t c = 0; c < m.cols; ++c)
            out[r][c] = clamp_weight(round_half_away(m.at(r, c) * s));
    }
    return out;
}

inline long long micro(double scale) { return std::llround(scale * 1e6); }

// Per-neuron thresholds as recorded in the graph (falls back to the config
// value when the record list was trimmed).
inline double record_threshold(const NeuronGraph& g, NeuronRole role, int block, int index) {
    for (const auto& rec : g.neurons)
        if (rec.role == role && rec.block == (role == NeuronRole::block_hidden ? block : -1) &&
            rec.index == index)
            return rec.threshold;
    return g.config.lif.threshold;
}

}  // namespace hwdetail

inline QuantizeResult quantize(const NeuronGraph& graph, QuantizeMode mode = QuantizeMode::per_layer) {
    const auto& cfg = graph.config;
    const double dt = cfg.lif.dt;
    const std::size_t H = static_cast<std::size_t>(cfg.neurons_per_block);
    const std::size_t R = static_cast<std::size_t>(cfg.readout_hidden);

    QuantizeResult result;
    QuantizedConfig& q = result.config;
    q.n_inputs = cfg.n_input_channels;
    q.n_outputs = cfg.n_classes;
    q.neurons_per_block = cfg.neurons_per_block;
    q.readout_hidden = cfg.readout_hidden;

    // Global bus scale from the residual projections.
    double res_max = 0.0;
    for (const auto& b : graph.weights) res_max = std::max(res_max, hwdetail::max_abs({&b.w_res}));
    int K = 0;
    if (res_max > 0.0) {
        K = static_cast<int>(std::floor(std::log2(127.0 / res_max)));
        K = std::max(0, std::min(kMaxDash, K));
    }
    q.bus_shift = K;
    const double res_scale = std::ldexp(1.0, K);

    for (std::size_t bi = 0; bi < graph.weights.size(); ++bi) {
        const auto& blk = graph.weights[bi];
        QuantizedBlock qb;
        qb.dash_mem = dash_from_tau(cfg.lif.tau_mem, dt);
        qb.dash_fast = dash_from_tau(blk.tau_fast, dt);
        qb.dash_slow = dash_from_tau(blk.tau_slow, dt);

        std::vector<double> scales;
        if (mode == QuantizeMode::per_layer) {
            const double m = hwdetail::max_abs({&blk.w_fast, &blk.w_slow});
            double s = 1.0;
            if (m > 0.0) {
                s = 127.0 / m;
            } else {
                result.warnings.push_back("block " + std::to_string(bi) +
                                          ": all input weights zero, scale set to 1");
            }
            scales.assign(H, s);
        } else {
            scales.resize(H);
            for (std::size_t n = 0; n < H; ++n) {
                double m = 0.0;
                for (std::size_t c = 0; c < blk.w_fast.cols; ++c)
                    m = std::max({m, std::abs(blk.w_fast.at(n, c)), std::abs(blk.w_slow.at(n, c))});
                if (m > 0.0) {
                    scales[n] = 127.0 / m;
                } else {
                    scales[n] = 1.0;
                    result.warnings.push_back("block " + std::to_string(bi) + " neuron " +
                                              std::to_string(n) +
                                              ": all input weights zero, scale set to 1");
                }
            }
        }
        qb.w_fast = hwdetail::quantize_matrix(blk.w_fast, scales, true);
        qb.w_slow = hwdetail::quantize_matrix(blk.w_slow, scales, true);
        qb.w_res = hwdetail::quantize_matrix(blk.w_res, {res_scale}, false);
        for (std::size_t n = 0; n < H; ++n) {
            const double theta_n = hwdetail::record_threshold(graph, NeuronRole::block_hidden,
                                                              static_cast<int>(bi),
                                                              static_cast<int>(n));
            qb.threshold.push_back(std::max(1, hwdetail::round_half_away(theta_n * scales[n])));
            qb.scale_in_micro.push_back(hwdetail::micro(scales[n]));
        }
        qb.scale_res_micro = hwdetail::micro(res_scale);
        q.blocks.push_back(std::move(qb));
    }

    // Readout hidden group: all skip projections share its scale(s).
    {
        std::vector<double> scales(R, 1.0);
        if (mode == QuantizeMode::per_layer) {
            double m = 0.0;
            for (const auto& b : graph.weights) m = std::max(m, hwdetail::max_abs({&b.w_skip}));
            if (m > 0.0) {
                scales.assign(R, 127.0 / m);
            } else if (!graph.weights.empty()) {
                result.warnings.push_back("readout hidden: all skip weights zero, scale set to 1");
            }
        } else {
            for (std::size_t j = 0; j < R; ++j) {
                double m = 0.0;
                for (const auto& b : graph.weights)
                    for (std::size_t n = 0; n < b.w_skip.cols; ++n)
                        m = std::max(m, std::abs(b.w_skip.at(j, n)));
                if (m > 0.0) {
                    scales[j] = 127.0 / m;
                } else if (!graph.weights.empty()) {
                    result.warnings.push_back("readout neuron " + std::to_string(j) +
                                              ": all skip weights zero, scale set to 1");
                }
            }
        }
        for (std::size_t bi = 0; bi < graph.weights.size(); ++bi)
            q.blocks[bi].w_skip = hwdetail::quantize_matrix(graph.weights[bi].w_skip, scales, true);
        for (std::size_t j = 0; j < R; ++j) {
            const double theta_j = hwdetail::record_threshold(graph, NeuronRole::readout_hidden, -1,
                                                              static_cast<int>(j));
            q.threshold_ro.push_back(std::max(1, hwdetail::round_half_away(theta_j * scales[j])));
            q.scale_skip_micro.push_back(hwdetail::micro(scales[j]));
        }
        q.dash_mem_ro = dash_from_tau(cfg.lif.tau_mem, dt);
        q.dash_syn_ro = dash_from_tau(cfg.tau_syn_readout_s, dt);
    }

    // Output units are compared by argmax, so they always share one scale.
    {
        const double m = hwdetail::max_abs({&graph.w_out});
        double s = 1.0;
        if (m > 0.0) {
            s = 127.0 / m;
        } else {
            result.warnings.push_back("output: all readout weights zero, scale set to 1");
        }
        q.w_out = hwdetail::quantize_matrix(graph.w_out, {s}, false);
        q.scale_out_micro = hwdetail::micro(s);
        q.dash_out = dash_from_tau(cfg.tau_syn_output_s, dt);
    }
    return result;
}

// --- validation ----------------------------------------------------------------

struct Violation {
    std::string bound;    // short name, e.g. "hidden > 1000"
    std::string message;  // offending quantity
};

namespace hwdetail {

inline void check_weight_matrix(const IntMatrix& m, const std::string& where,
                                std::vector<Violation>& out) {
    for (const auto& row : m)
        for (int w : row)
            if (w < -128 || w > 127) {
                out.push_back({"weight out of 8-bit range",
                               where + " holds " + std::to_string(w)});
                return;
            }
}

inline void check_dash(int dash, const std::string& where, std::vector<Violation>& out) {
    if (dash < 0 || dash > kMaxDash)
        out.push_back({"dash out of range", where + " = " + std::to_string(dash)});
}

// Outgoing nonzero weight entries of one hidden neuron (bus taps + skip or
// output targets); the deployable fan-out measure.
inline int fanout_of_block_neuron(const QuantizedBlock& b, std::size_t n) {
    int fan = 0;
    for (const auto& row : b.w_res)
        if (n < row.size() && row[n] != 0) ++fan;
    for (const auto& row : b.w_skip)
        if (n < row.size() && row[n] != 0) ++fan;
    return fan;
}

inline int fanout_of_readout_neuron(const QuantizedConfig& q, std::size_t j) {
    int fan = 0;
    for (const auto& row : q.w_out)
        if (j < row.size() && row[j] != 0) ++fan;
    return fan;
}

}  // namespace hwdetail

// Every violated resource bound, with the offending quantity. Empty result
// means the configuration is deployable.
inline std::vector<Violation> validate(const QuantizedConfig& q) {
    std::vector<Violation> v;
    if (q.n_inputs < 1 || q.n_inputs > 16)
        v.push_back({"input > 16", "input channels = " + std::to_string(q.n_inputs)});
    if (q.n_outputs < 1 || q.n_outputs > 8)
        v.push_back({"output > 8", "output channels = " + std::to_string(q.n_outputs)});
    const long hidden = static_cast<long>(q.blocks.size()) * q.neurons_per_block + q.readout_hidden;
    if (hidden > 1000)
        v.push_back({"hidden > 1000", "hidden neurons = " + std::to_string(hidden)});
    if (q.spike_cap > kMaxSpikesPerStep || q.spike_cap < 1)
        v.push_back({"spike cap > 31", "spike cap = " + std::to_string(q.spike_cap)});
    if (q.bus_shift < 0 || q.bus_shift > kMaxDash)
        v.push_back({"bus shift out of range", "bus_shift = " + std::to_string(q.bus_shift)});

    for (std::size_t bi = 0; bi < q.blocks.size(); ++bi) {
        const auto& b = q.blocks[bi];
        const std::string tag = "block " + std::to_string(bi);
        hwdetail::check_weight_matrix(b.w_fast, tag + " w_fast", v);
        hwdetail::check_weight_matrix(b.w_slow, tag + " w_slow", v);
        hwdetail::check_weight_matrix(b.w_res, tag + " w_res", v);
        hwdetail::check_weight_matrix(b.w_skip, tag + " w_skip", v);
        hwdetail::check_dash(b.dash_mem, tag + " dash_mem", v);
        hwdetail::check_dash(b.dash_fast, tag + " dash_fast", v);
        hwdetail::check_dash(b.dash_slow, tag + " dash_slow", v);
        for (std::size_t n = 0; n < b.threshold.size(); ++n) {
            if (b.threshold[n] < 1)
                v.push_back({"threshold < 1", tag + " neuron " + std::to_string(n) +
                                                  " threshold = " + std::to_string(b.threshold[n])});
            if (b.threshold[n] > kStateMax)
                v.push_back({"threshold > state max",
                             tag + " neuron " + std::to_string(n) + " threshold = " +
                                 std::to_string(b.threshold[n]) + " cannot be reached in 16 bits"});
        }
        for (std::size_t n = 0; n < static_cast<std::size_t>(q.neurons_per_block); ++n) {
            const int fan = hwdetail::fanout_of_block_neuron(b, n);
            if (fan > 32)
                v.push_back({"fanout > 32", tag + " neuron " + std::to_string(n) +
                                                " fan-out = " + std::to_string(fan)});
        }
    }
    hwdetail::check_weight_matrix(q.w_out, "w_out", v);
    hwdetail::check_dash(q.dash_mem_ro, "readout dash_mem", v);
    hwdetail::check_dash(q.dash_syn_ro, "readout dash_syn", v);
    hwdetail::check_dash(q.dash_out, "output dash_syn", v);
    for (std::size_t j = 0; j < q.threshold_ro.size(); ++j) {
        if (q.threshold_ro[j] < 1)
            v.push_back({"threshold < 1", "readout neuron " + std::to_string(j) +
                                              " threshold = " + std::to_string(q.threshold_ro[j])});
        if (q.threshold_ro[j] > kStateMax)
            v.push_back({"threshold > state max",
                         "readout neuron " + std::to_string(j) + " threshold = " +
                             std::to_string(q.threshold_ro[j]) + " cannot be reached in 16 bits"});
    }
    for (std::size_t j = 0; j < static_cast<std::size_t>(q.readout_hidden); ++j) {
        const int fan = hwdetail::fanout_of_readout_neuron(q, j);
        if (fan > 32)
            v.push_back({"fanout > 32", "readout neuron " + std::to_string(j) +
                                            " fan-out = " + std::to_string(fan)});
    }
    return v;
}

// --- energy --------------------------------------------------------------------

struct EnergyReport {
    std::uint64_t total_synops = 0;
    std::uint64_t synops_per_inference = 0;
    // [input, block0.., readout hidden] spike totals
    std::vector<std::uint64_t> spikes_per_layer;
    std::uint64_t saturation_events = 0;
};

struct FanoutTable {
    std::vector<int> input;                   // per input channel
    std::vector<std::vector<int>> hidden;     // per block, per neuron
    std::vector<int> readout;                 // per readout-hidden neuron
};

inline FanoutTable fanout_table(const QuantizedConfig& q) {
    FanoutTable t;
    t.input.assign(static_cast<std::size_t>(q.n_inputs), 0);
    if (!q.blocks.empty()) {
        const auto& b0 = q.blocks.front();
        for (std::size_t c = 0; c < t.input.size(); ++c) {
            int fan = 0;
            for (const auto& row : b0.w_fast)
                if (c < row.size() && row[c] != 0) ++fan;
            for (const auto& row : b0.w_slow)
                if (c < row.size() && row[c] != 0) ++fan;
            t.input[c] = fan;
        }
    }
    for (const auto& b : q.blocks) {
        std::vector<int> fans;
        for (std::size_t n = 0; n < static_cast<std::size_t>(q.neurons_per_block); ++n)
            fans.push_back(hwdetail::fanout_of_block_neuron(b, n));
        t.hidden.push_back(std::move(fans));
    }
    for (std::size_t j = 0; j < static_cast<std::size_t>(q.readout_hidden); ++j)
        t.readout.push_back(hwdetail::fanout_of_readout_neuron(q, j));
    return t;
}

// SynOps = sum over spikes of spike_count x fan-out of the spiking unit.
// trace layers are [block0.., readout hidden]; the input raster contributes
// through its first-layer fan-out.
inline EnergyReport count_synops(const ForwardTrace& trace, const SpikeRaster& input,
                                 const FanoutTable& fans) {
    EnergyReport rep;
    std::uint64_t input_spikes = 0, synops = 0;
    for (std::size_t t = 0; t < input.timesteps; ++t)
        for (std::size_t c = 0; c < input.channels; ++c) {
            const std::uint64_t s = input.at(c, t);
            input_spikes += s;
            synops += s * static_cast<std::uint64_t>(c < fans.input.size() ? fans.input[c] : 0);
        }
    rep.spikes_per_layer.push_back(input_spikes);

    for (std::size_t layer = 0; layer < trace.layer_spikes.size(); ++layer) {
        const auto& raster = trace.layer_spikes[layer];
        const bool is_readout = layer + 1 == trace.layer_spikes.size();
        std::uint64_t layer_spikes = 0;
        for (std::size_t t = 0; t < raster.timesteps; ++t)
            for (std::size_t n = 0; n < raster.channels; ++n) {
                const std::uint64_t s = raster.at(n, t);
                if (!s) continue;
                layer_spikes += s;
                const int fan = is_readout ? fans.readout[n] : fans.hidden[layer][n];
                synops += s * static_cast<std::uint64_t>(fan);
            }
        rep.spikes_per_layer.push_back(layer_spikes);
    }
    rep.total_synops = synops;
    rep.synops_per_inference = synops;
    return rep;
}

// --- integer execution -----------------------------------------------------------

// Bit-exact integer stepper mirroring FloatRunner's wiring. Streaming and
// batch execution advance the same code.
class QuantRunner {
public:
    explicit QuantRunner(const QuantizedConfig& cfg) : cfg_(&cfg) { reset(); }

    void reset() {
        const std::size_t H = static_cast<std::size_t>(cfg_->neurons_per_block);
        const std::size_t R = static_cast<std::size_t>(cfg_->readout_hidden);
        i_fast_.assign(cfg_->blocks.size(), std::vector<std::int32_t>(H, 0));
        i_slow_.assign(cfg_->blocks.size(), std::vector<std::int32_t>(H, 0));
        v_.assign(cfg_->blocks.size(), std::vector<std::int32_t>(H, 0));
        s_blocks_.assign(cfg_->blocks.size(), std::vector<int>(H, 0));
        i_ro_.assign(R, 0);
        v_ro_.assign(R, 0);
        s_ro_.assign(R, 0);
        i_out_.assign(static_cast<std::size_t>(cfg_->n_outputs), 0);
        bus_.assign(static_cast<std::size_t>(cfg_->n_inputs), 0);
        tally_ = SaturationTally{};
    }

    void step(const std::uint16_t* counts) {
        const std::size_t C = static_cast<std::size_t>(cfg_->n_inputs);
        const std::size_t H = static_cast<std::size_t>(cfg_->neurons_per_block);
        const std::size_t R = static_cast<std::size_t>(cfg_->readout_hidden);
        const int K = cfg_->bus_shift;
        const int cap = cfg_->spike_cap;

        for (std::size_t c = 0; c < C; ++c)
            bus_[c] = sat16(static_cast<std::int64_t>(counts[c]) << K, &tally_);

        std::vector<std::int64_t> skip_acc(R, 0);
        for (std::size_t b = 0; b < cfg_->blocks.size(); ++b) {
            const auto& blk = cfg_->blocks[b];
            auto& ifa = i_fast_[b];
            auto& isl = i_slow_[b];
            auto& v = v_[b];
            auto& s = s_blocks_[b];
            for (std::size_t n = 0; n < H; ++n) {
                std::int64_t accf = 0, accs = 0;
                for (std::size_t c = 0; c < C; ++c) {
                    accf += static_cast<std::int64_t>(blk.w_fast[n][c]) * bus_[c];
                    accs += static_cast<std::int64_t>(blk.w_slow[n][c]) * bus_[c];
                }
                // bus realignment (K) plus the synapse's 2^-dash input attenuation
                const std::int32_t uf = sat16(accf >> (K + blk.dash_fast), &tally_);
                const std::int32_t us = sat16(accs >> (K + blk.dash_slow), &tally_);
                ifa[n] = sat16(static_cast<std::int64_t>(shift_decay(ifa[n], blk.dash_fast)) + uf,
                               &tally_);
                isl[n] = sat16(static_cast<std::int64_t>(shift_decay(isl[n], blk.dash_slow)) + us,
                               &tally_);
                v[n] = sat16(static_cast<std::int64_t>(shift_decay(v[n], blk.dash_mem)) + ifa[n] +
                                 isl[n],
                             &tally_);
                int spikes = 0;
                const std::int32_t theta = blk.threshold[n];
                if (v[n] >= theta) {
                    spikes = static_cast<int>(v[n] / theta);
                    if (spikes > cap) spikes = cap;
                    v[n] -= spikes * theta;
                }
                s[n] = spikes;
            }
            for (std::size_t n = 0; n < H; ++n) {
                if (!s[n]) continue;
                for (std::size_t j = 0; j < R; ++j)
                    skip_acc[j] += static_cast<std::int64_t>(blk.w_skip[j][n]) * s[n];
                for (std::size_t c = 0; c < C; ++c)
                    bus_[c] = sat16(static_cast<std::int64_t>(bus_[c]) +
                                        static_cast<std::int64_t>(blk.w_res[c][n]) * s[n],
                                    &tally_);
            }
        }

        for (std::size_t j = 0; j < R; ++j) {
            const std::int32_t u = sat16(skip_acc[j] >> cfg_->dash_syn_ro, &tally_);
            i_ro_[j] = sat16(static_cast<std::int64_t>(shift_decay(i_ro_[j], cfg_->dash_syn_ro)) + u,
                             &tally_);
            v_ro_[j] = sat16(static_cast<std::int64_t>(shift_decay(v_ro_[j], cfg_->dash_mem_ro)) +
                                 i_ro_[j],
                             &tally_);
            int spikes = 0;
            const std::int32_t theta = cfg_->threshold_ro[j];
            if (v_ro_[j] >= theta) {
                spikes = static_cast<int>(v_ro_[j] / theta);
                if (spikes > cap) spikes = cap;
                v_ro_[j] -= spikes * theta;
            }
            s_ro_[j] = spikes;
        }
        for (std::size_t k = 0; k < i_out_.size(); ++k) {
            std::int64_t acc = 0;
            for (std::size_t j = 0; j < R; ++j)
                acc += static_cast<std::int64_t>(cfg_->w_out[k][j]) * s_ro_[j];
            i_out_[k] = sat16(static_cast<std::int64_t>(shift_decay(i_out_[k], cfg_->dash_out)) +
                                  sat16(acc >> cfg_->dash_out, &tally_),
                              &tally_);
        }
    }

    const std::vector<std::int32_t>& readout_currents() const { return i_out_; }
    const std::vector<std::vector<int>>& block_spikes() const { return s_blocks_; }
    const std::vector<int>& readout_spikes() const { return s_ro_; }
    std::uint64_t saturation_events() const { return tally_.events; }

    std::size_t state_bytes() const {
        std::size_t bytes = 0;
        for (const auto& v : i_fast_) bytes += v.size() * sizeof(std::int32_t);
        for (const auto& v : i_slow_) bytes += v.size() * sizeof(std::int32_t);
        for (const auto& v : v_) bytes += v.size() * sizeof(std::int32_t);
        bytes += (i_ro_.size() + v_ro_.size() + i_out_.size()) * sizeof(std::int32_t);
        return bytes;
    }

private:
    const QuantizedConfig* cfg_;
    std::vector<std::vector<std::int32_t>> i_fast_, i_slow_, v_;
    std::vector<std::vector<int>> s_blocks_;
    std::vector<std::int32_t> i_ro_, v_ro_;
    std::vector<int> s_ro_;
    std::vector<std::int32_t> i_out_;
    std::vector<std::int32_t> bus_;
    SaturationTally tally_;
};

struct QSimResult {
    ForwardTrace trace;
    EnergyReport energy;
};

inline QSimResult simulate_quantized(const QuantizedConfig& cfg, const SpikeRaster& input) {
    if (input.channels != static_cast<std::size_t>(cfg.n_inputs))
        throw ShapeMismatch("input raster has " + std::to_string(input.channels) +
                            " channels, config expects " + std::to_string(cfg.n_inputs));
    const std::size_t T = input.timesteps;
    const std::size_t H = static_cast<std::size_t>(cfg.neurons_per_block);
    const std::size_t R = static_cast<std::size_t>(cfg.readout_hidden);

    QSimResult res;
    auto& trace = res.trace;
    for (std::size_t b = 0; b < cfg.blocks.size(); ++b) {
        SpikeRaster r;
        r.channels = H;
        r.timesteps = T;
        r.counts.assign(H * T, 0);
        trace.layer_spikes.push_back(std::move(r));
    }
    {
        SpikeRaster r;
        r.channels = R;
        r.timesteps = T;
        r.counts.assign(R * T, 0);
        trace.layer_spikes.push_back(std::move(r));
    }
    trace.readout_currents.assign(static_cast<std::size_t>(cfg.n_outputs),
                                  std::vector<double>(T, 0.0));
    trace.spikes_per_layer.assign(cfg.blocks.size() + 1, 0);

    QuantRunner runner(cfg);
    for (std::size_t t = 0; t < T; ++t) {
        runner.step(input.step(t));
        for (std::size_t b = 0; b < cfg.blocks.size(); ++b)
            for (std::size_t n = 0; n < H; ++n) {
                const int s = runner.block_spikes()[b][n];
                trace.layer_spikes[b].at(n, t) = static_cast<std::uint16_t>(s);
                trace.spikes_per_layer[b] += static_cast<std::uint64_t>(s);
            }
        for (std::size_t j = 0; j < R; ++j) {
            const int s = runner.readout_spikes()[j];
            trace.layer_spikes.back().at(j, t) = static_cast<std::uint16_t>(s);
            trace.spikes_per_layer.back() += static_cast<std::uint64_t>(s);
        }
        for (std::size_t k = 0; k < trace.readout_currents.size(); ++k)
            trace.readout_currents[k][t] = static_cast<double>(runner.readout_currents()[k]);
    }
    res.energy = count_synops(trace, input, fanout_table(cfg));
    res.energy.saturation_events = runner.saturation_events();
    return res;
}

// --- serialization ----------------------------------------------------------------

inline nlohmann::ordered_json quantized_to_json(const QuantizedConfig& q) {
    nlohmann::ordered_json j;
    j["version"] = q.version;
    j["n_inputs"] = q.n_inputs;
    j["n_outputs"] = q.n_outputs;
    j["spike_cap"] = q.spike_cap;
    j["bus_shift"] = q.bus_shift;
    j["neurons_per_block"] = q.neurons_per_block;
    j["readout_hidden"] = q.readout_hidden;
    j["blocks"] = nlohmann::ordered_json::array();
    for (const auto& b : q.blocks) {
        nlohmann::ordered_json jb;
        jb["dash_mem"] = b.dash_mem;
        jb["dash_fast"] = b.dash_fast;
        jb["dash_slow"] = b.dash_slow;
        jb["threshold"] = b.threshold;
        jb["w_fast"] = b.w_fast;
        jb["w_slow"] = b.w_slow;
        jb["w_res"] = b.w_res;
        jb["w_skip"] = b.w_skip;
        jb["scale_in_micro"] = b.scale_in_micro;
        jb["scale_res_micro"] = b.scale_res_micro;
        j["blocks"].push_back(std::move(jb));
    }
    j["readout"] = {{"threshold", q.threshold_ro},
                    {"dash_mem", q.dash_mem_ro},
                    {"dash_syn", q.dash_syn_ro},
                    {"dash_out", q.dash_out},
                    {"w_out", q.w_out},
                    {"scale_skip_micro", q.scale_skip_micro},
                    {"scale_out_micro", q.scale_out_micro}};
    return j;
}

inline QuantizedConfig quantized_from_json(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) throw std::invalid_argument("unsupported quantized config version");
    QuantizedConfig q;
    q.n_inputs = j["n_inputs"].get<int>();
    q.n_outputs = j["n_outputs"].get<int>();
    q.spike_cap = j["spike_cap"].get<int>();
    q.bus_shift = j["bus_shift"].get<int>();
    q.neurons_per_block = j["neurons_per_block"].get<int>();
    q.readout_hidden = j["readout_hidden"].get<int>();
    for (const auto& jb : j["blocks"]) {
        QuantizedBlock b;
        b.dash_mem = jb["dash_mem"].get<int>();
        b.dash_fast = jb["dash_fast"].get<int>();
        b.dash_slow = jb["dash_slow"].get<int>();
        b.threshold = jb["threshold"].get<std::vector<int>>();
        b.w_fast = jb["w_fast"].get<IntMatrix>();
        b.w_slow = jb["w_slow"].get<IntMatrix>();
        b.w_res = jb["w_res"].get<IntMatrix>();
        b.w_skip = jb["w_skip"].get<IntMatrix>();
        b.scale_in_micro = jb["scale_in_micro"].get<std::vector<long long>>();
        b.scale_res_micro = jb["scale_res_micro"].get<long long>();
        q.blocks.push_back(std::move(b));
    }
    const auto& jr = j["readout"];
    q.threshold_ro = jr["threshold"].get<std::vector<int>>();
    q.dash_mem_ro = jr["dash_mem"].get<int>();
    q.dash_syn_ro = jr["dash_syn"].get<int>();
    q.dash_out = jr["dash_out"].get<int>();
    q.w_out = jr["w_out"].get<IntMatrix>();
    q.scale_skip_micro = jr["scale_skip_micro"].get<std::vector<long long>>();
    q.scale_out_micro = jr["scale_out_micro"].get<long long>();
    return q;
}

}  // namespace spikedet
