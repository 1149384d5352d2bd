#pragma once

// Leaky integrate-and-fire cores in two interchangeable regimes:
//  - real-valued with exact per-step exponential decay (training/reference)
//  - saturating 16-bit integer with bit-shift decay (hardware-faithful)
// Both use subtractive reset and a multi-spike count capped at 31 per step.

#include <cmath>
#include <cstdint>
#include <limits>

namespace spikedet {

constexpr int kMaxSpikesPerStep = 31;
constexpr int kMaxDash = 15;
constexpr std::int32_t kStateMax = 32767;
constexpr std::int32_t kStateMin = -32767;  // symmetric saturation, no INT16_MIN

struct LifParams {
    double tau_mem = 0.002;
    double tau_syn = 0.002;
    double threshold = 0.6;
    double v_reset = 0.0;
    double dt = 1.0 / 256.0;
    double bias = 0.0;
};

struct LifStateF {
    double v_mem = 0.0;
    double i_syn = 0.0;
};

// One step of the real-valued neuron. Returns the spike count.
inline int lif_step_float(LifStateF& state, double input_current, const LifParams& p) {
    state.i_syn = state.i_syn * std::exp(-p.dt / p.tau_syn) + input_current;
    state.v_mem = state.v_mem * std::exp(-p.dt / p.tau_mem) + state.i_syn + p.bias;
    int spikes = 0;
    if (state.v_mem >= p.threshold) {
        spikes = static_cast<int>(std::floor(state.v_mem / p.threshold));
        if (spikes > kMaxSpikesPerStep) spikes = kMaxSpikesPerStep;
        state.v_mem -= spikes * (p.threshold - p.v_reset);
    }
    return spikes;
}

// Multi-spike count for a membrane value; shared by the network simulators.
inline int spike_count_float(double v_mem, double threshold) {
    if (v_mem < threshold) return 0;
    const int spikes = static_cast<int>(std::floor(v_mem / threshold));
    return spikes > kMaxSpikesPerStep ? kMaxSpikesPerStep : spikes;
}

struct SaturationTally {
    std::uint64_t events = 0;
};

inline std::int32_t sat16(std::int64_t v, SaturationTally* tally = nullptr) {
    if (v > kStateMax) {
        if (tally) ++tally->events;
        return kStateMax;
    }
    if (v < kStateMin) {
        if (tally) ++tally->events;
        return kStateMin;
    }
    return static_cast<std::int32_t>(v);
}

// Bit-shift leak: v - (v >> dash), i.e. per-step decay factor 1 - 2^-dash.
// Arithmetic shift; |result| never exceeds |v|.
inline std::int32_t shift_decay(std::int32_t v, int dash) {
    return v - (v >> dash);
}

struct LifStateQ {
    std::int32_t v_mem = 0;  // held within [kStateMin, kStateMax]
    std::int32_t i_syn = 0;
    int dash_mem = 0;
    int dash_syn = 0;
};

// One step of the saturating integer neuron. weighted_input must already be
// reduced to the 16-bit range by the caller's accumulator stage.
inline int lif_step_fixed(LifStateQ& state, std::int32_t weighted_input, std::int32_t threshold_q,
                          SaturationTally* tally = nullptr) {
    state.i_syn = sat16(static_cast<std::int64_t>(shift_decay(state.i_syn, state.dash_syn)) +
                            weighted_input,
                        tally);
    state.v_mem = sat16(static_cast<std::int64_t>(shift_decay(state.v_mem, state.dash_mem)) +
                            state.i_syn,
                        tally);
    int spikes = 0;
    if (state.v_mem >= threshold_q) {
        spikes = static_cast<int>(state.v_mem / threshold_q);
        if (spikes > kMaxSpikesPerStep) spikes = kMaxSpikesPerStep;
        state.v_mem = sat16(static_cast<std::int64_t>(state.v_mem) -
                                static_cast<std::int64_t>(spikes) * threshold_q,
                            tally);
    }
    return spikes;
}

// Nearest power-of-two decay exponent for a time constant, clamped to the
// hardware's [0, 15] range. Effective per-step decay is (1 - 2^-dash).
inline int dash_from_tau(double tau, double dt) {
    const long d = std::lround(std::log2(tau / dt));
    if (d < 0) return 0;
    if (d > kMaxDash) return kMaxDash;
    return static_cast<int>(d);
}

}  // namespace spikedet
