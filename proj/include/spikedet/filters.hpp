#pragma once

// Streaming IIR preprocessing: second-order sections designed with the
// bilinear transform (RBJ cookbook forms). The band-pass is a 2nd-order
// Butterworth high-pass cascaded with a 2nd-order Butterworth low-pass
// (4th-order band-pass overall), followed by a notch.

#include <cmath>
#include <numbers>
#include <vector>

#include "spikedet/errors.hpp"
#include "spikedet/recording.hpp"

namespace spikedet {

// One biquad in direct form II transposed; causal, constant memory.
struct Biquad {
    double b0 = 1, b1 = 0, b2 = 0;  // feedforward (a0-normalized)
    double a1 = 0, a2 = 0;          // feedback
    double z1 = 0, z2 = 0;

    double process(double x) {
        const double y = b0 * x + z1;
        z1 = b1 * x - a1 * y + z2;
        z2 = b2 * x - a2 * y;
        return y;
    }
    void reset() { z1 = z2 = 0; }
};

namespace dsp {

inline Biquad lowpass(double freq_hz, double sample_rate_hz, double q = std::numbers::sqrt2 / 2.0) {
    const double w0 = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad f;
    f.b0 = (1.0 - cw) / 2.0 / a0;
    f.b1 = (1.0 - cw) / a0;
    f.b2 = f.b0;
    f.a1 = -2.0 * cw / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
}

inline Biquad highpass(double freq_hz, double sample_rate_hz, double q = std::numbers::sqrt2 / 2.0) {
    const double w0 = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad f;
    f.b0 = (1.0 + cw) / 2.0 / a0;
    f.b1 = -(1.0 + cw) / a0;
    f.b2 = f.b0;
    f.a1 = -2.0 * cw / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
}

inline Biquad notch(double freq_hz, double sample_rate_hz, double q) {
    const double w0 = 2.0 * std::numbers::pi * freq_hz / sample_rate_hz;
    const double alpha = std::sin(w0) / (2.0 * q);
    const double cw = std::cos(w0);
    const double a0 = 1.0 + alpha;
    Biquad f;
    f.b0 = 1.0 / a0;
    f.b1 = -2.0 * cw / a0;
    f.b2 = 1.0 / a0;
    f.a1 = -2.0 * cw / a0;
    f.a2 = (1.0 - alpha) / a0;
    return f;
}

}  // namespace dsp

// A cascade of sections applied in order; one instance per channel stream.
struct SosCascade {
    std::vector<Biquad> sections;

    double process(double x) {
        for (auto& s : sections) x = s.process(x);
        return x;
    }
    void reset() {
        for (auto& s : sections) s.reset();
    }
};

inline void validate_filter_spec(const FilterSpec& spec, double sample_rate_hz) {
    const double nyquist = sample_rate_hz / 2.0;
    if (!(spec.band_low_hz > 0) || !(spec.band_low_hz < spec.band_high_hz) ||
        !(spec.band_high_hz < nyquist))
        throw InvalidBand("band edges must satisfy 0 < low < high < sample_rate/2 (got " +
                          std::to_string(spec.band_low_hz) + ".." + std::to_string(spec.band_high_hz) +
                          " Hz at " + std::to_string(sample_rate_hz) + " Hz)");
    if (!(spec.notch_hz > spec.band_low_hz) || !(spec.notch_hz < spec.band_high_hz))
        throw InvalidBand("notch frequency must lie inside the pass band");
    if (!(spec.notch_q > 0)) throw InvalidBand("notch Q must be positive");
}

inline SosCascade make_preprocess_cascade(const FilterSpec& spec, double sample_rate_hz) {
    validate_filter_spec(spec, sample_rate_hz);
    SosCascade c;
    c.sections.push_back(dsp::highpass(spec.band_low_hz, sample_rate_hz));
    c.sections.push_back(dsp::lowpass(spec.band_high_hz, sample_rate_hz));
    c.sections.push_back(dsp::notch(spec.notch_hz, sample_rate_hz, spec.notch_q));
    return c;
}

// Band-pass then notch, causally per channel.
inline Recording apply_filters(const Recording& rec, const FilterSpec& spec) {
    validate_recording(rec);
    Recording out = rec;
    out.ranges.clear();
    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
        SosCascade cascade = make_preprocess_cascade(spec, rec.sample_rate_hz);
        for (std::size_t t = 0; t < rec.n_samples(); ++t)
            out.data[c][t] = cascade.process(rec.data[c][t]);
    }
    return out;
}

// Resample to target_hz. Downsampling applies a 4th-order Butterworth
// anti-alias low-pass at 0.45 * target first; sample values are then taken by
// linear interpolation on the (filtered) source grid. target == source is the
// identity.
inline Recording resample(const Recording& rec, double target_hz) {
    if (!(target_hz > 0)) throw std::invalid_argument("target sample rate must be positive");
    validate_recording(rec);
    if (target_hz == rec.sample_rate_hz) return rec;

    Recording out;
    out.channel_labels = rec.channel_labels;
    out.annotations = rec.annotations;
    out.sample_rate_hz = target_hz;

    const double src_hz = rec.sample_rate_hz;
    const bool down = target_hz < src_hz;
    const std::size_t n_in = rec.n_samples();
    const std::size_t n_out =
        static_cast<std::size_t>(std::llround(static_cast<double>(n_in) * target_hz / src_hz));

    for (std::size_t c = 0; c < rec.n_channels(); ++c) {
        std::vector<double> src = rec.data[c];
        if (down) {
            const double cutoff = 0.45 * target_hz;
            SosCascade aa;
            // 4th-order Butterworth = two sections with these Q values.
            aa.sections.push_back(dsp::lowpass(cutoff, src_hz, 0.54119610));
            aa.sections.push_back(dsp::lowpass(cutoff, src_hz, 1.30656296));
            for (auto& v : src) v = aa.process(v);
        }
        std::vector<double> dst(n_out);
        for (std::size_t i = 0; i < n_out; ++i) {
            const double x = static_cast<double>(i) * src_hz / target_hz;
            const std::size_t lo = std::min(static_cast<std::size_t>(x), n_in - 1);
            const std::size_t hi = std::min(lo + 1, n_in - 1);
            const double frac = x - static_cast<double>(lo);
            dst[i] = src[lo] * (1.0 - frac) + src[hi] * frac;
        }
        out.data.push_back(std::move(dst));
    }
    return out;
}

}  // namespace spikedet
