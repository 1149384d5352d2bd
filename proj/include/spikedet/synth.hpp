#pragma once

// Labeled surrogate EEG: band-limited 1/f-style background plus rhythmic
// 3-12 Hz bursts inside annotated seizure intervals. Deterministic for a
// given seed so dataset artifacts are reproducible byte for byte.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "spikedet/recording.hpp"

namespace spikedet {

struct SynthParams {
    double duration_s = 600.0;
    int n_channels = 2;
    double sample_rate_hz = 256.0;
    std::vector<SeizureAnnotation> seizures;

    double background_rms_uv = 20.0;
    // In-band (ictal_band) RMS of the seizure rhythm as a multiple of the
    // background's RMS in that band.
    double ictal_rel_amplitude = 3.0;
    double ictal_band_low_hz = 4.0;
    double ictal_band_high_hz = 10.0;

    std::vector<std::string> channel_labels;  // default SYN1..SYNn
};

// Regular on/off seizure schedule helper, aligned to window boundaries.
inline std::vector<SeizureAnnotation> regular_seizure_schedule(double first_s, double ictal_s,
                                                               double gap_s, int count) {
    std::vector<SeizureAnnotation> anns;
    double t = first_s;
    for (int i = 0; i < count; ++i) {
        anns.push_back({t, t + ictal_s});
        t += ictal_s + gap_s;
    }
    return anns;
}

inline Recording synth_eeg(const SynthParams& params, std::uint64_t seed) {
    if (params.duration_s <= 0 || params.n_channels <= 0 || params.sample_rate_hz <= 0)
        throw std::invalid_argument("synth params require positive duration, channels, rate");

    const std::size_t n = static_cast<std::size_t>(std::llround(params.duration_s * params.sample_rate_hz));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    Recording rec;
    rec.sample_rate_hz = params.sample_rate_hz;
    rec.annotations = params.seizures;

    // Background: sum of 1/f-weighted sinusoids on a jittered 1..45 Hz grid.
    constexpr int kComponents = 60;
    const double f_lo = 1.0, f_hi = 45.0;

    for (int ch = 0; ch < params.n_channels; ++ch) {
        std::vector<double> freqs(kComponents), phases(kComponents), amps(kComponents);
        double band_power = 0.0;  // background power inside the ictal band
        double total_power = 0.0;
        for (int k = 0; k < kComponents; ++k) {
            const double base = f_lo + (f_hi - f_lo) * (k + 0.5) / kComponents;
            freqs[k] = base + (unit(rng) - 0.5) * (f_hi - f_lo) / kComponents;
            phases[k] = unit(rng) * 2.0 * std::numbers::pi;
            amps[k] = 1.0 / freqs[k];
            total_power += amps[k] * amps[k] / 2.0;
            if (freqs[k] >= params.ictal_band_low_hz && freqs[k] <= params.ictal_band_high_hz)
                band_power += amps[k] * amps[k] / 2.0;
        }
        const double scale = params.background_rms_uv / std::sqrt(total_power);
        for (auto& a : amps) a *= scale;
        const double band_rms = std::sqrt(band_power) * scale;

        // Seizure rhythm parameters, per channel.
        const double burst_amp = params.ictal_rel_amplitude * band_rms * std::numbers::sqrt2;
        const double f_span = params.ictal_band_high_hz - params.ictal_band_low_hz;
        const double wander_phase = unit(rng) * 2.0 * std::numbers::pi;
        const double am_phase = unit(rng) * 2.0 * std::numbers::pi;
        const double carrier_phase = unit(rng) * 2.0 * std::numbers::pi;

        std::vector<double> series(n);
        double carrier_arg = carrier_phase;  // integrated instantaneous frequency
        const double dt = 1.0 / params.sample_rate_hz;
        for (std::size_t i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) * dt;
            double v = 0.0;
            for (int k = 0; k < kComponents; ++k)
                v += amps[k] * std::sin(2.0 * std::numbers::pi * freqs[k] * t + phases[k]);

            const double f_inst = params.ictal_band_low_hz +
                                  f_span * (0.5 + 0.5 * std::sin(2.0 * std::numbers::pi * 0.05 * t +
                                                                 wander_phase));
            carrier_arg += 2.0 * std::numbers::pi * f_inst * dt;

            double envelope = 0.0;
            for (const auto& a : params.seizures) {
                if (t >= a.start_s && t < a.end_s) {
                    const double ramp = std::min({1.0, (t - a.start_s) / 0.25, (a.end_s - t) / 0.25});
                    envelope = std::max(envelope, ramp);
                }
            }
            if (envelope > 0.0) {
                const double am = 0.75 + 0.25 * std::sin(2.0 * std::numbers::pi * 0.8 * t + am_phase);
                v += envelope * am * burst_amp *
                     (std::sin(carrier_arg) + 0.3 * std::sin(2.0 * carrier_arg));
            }
            series[i] = v;
        }
        rec.data.push_back(std::move(series));
        if (ch < static_cast<int>(params.channel_labels.size()))
            rec.channel_labels.push_back(params.channel_labels[ch]);
        else
            rec.channel_labels.push_back("SYN" + std::to_string(ch + 1));
    }
    return rec;
}

}  // namespace spikedet
