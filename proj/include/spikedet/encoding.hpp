#pragma once

// Sigma-delta (level-crossing) spike encoding. Each source channel becomes
// two spike channels: even index = upward crossings, odd index = downward.
// Multiple events per timestep are stored as counts, matching the multi-spike
// timesteps of the integer execution model.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spikedet/errors.hpp"

namespace spikedet {

struct SpikeRaster {
    std::size_t channels = 0;
    std::size_t timesteps = 0;
    double dt = 0.0;
    // Timestep-major so one timestep's counts are contiguous for simulation.
    std::vector<std::uint16_t> counts;

    std::uint16_t& at(std::size_t channel, std::size_t t) { return counts[t * channels + channel]; }
    std::uint16_t at(std::size_t channel, std::size_t t) const { return counts[t * channels + channel]; }
    const std::uint16_t* step(std::size_t t) const { return counts.data() + t * channels; }

    std::uint64_t total_spikes() const {
        std::uint64_t sum = 0;
        for (auto c : counts) sum += c;
        return sum;
    }
};

// Running level of one channel's encoder. A single state must not be
// advanced concurrently; instances are independent values.
struct EncoderState {
    double step = 1.0;
    int per_step_cap = 15;
    double level = 0.0;
    bool initialized = false;
    std::uint64_t clamp_events = 0;

    // Returns (up, down) counts for one sample.
    std::pair<int, int> push(double x) {
        if (!std::isfinite(x)) throw NonFiniteSample(0, 0);
        if (!initialized) {
            level = x;
            initialized = true;
            return {0, 0};
        }
        int up = 0, down = 0;
        if (x >= level) {
            up = static_cast<int>(std::floor((x - level) / step));
            if (up > per_step_cap) {
                up = per_step_cap;
                ++clamp_events;
            }
            level += up * step;
        } else {
            down = static_cast<int>(std::floor((level - x) / step));
            if (down > per_step_cap) {
                down = per_step_cap;
                ++clamp_events;
            }
            level -= down * step;
        }
        return {up, down};
    }

    void reset() {
        level = 0.0;
        initialized = false;
        clamp_events = 0;
    }
};

// Encode a channels x samples matrix. Out channels = 2x in channels.
// clamp_events, when given, receives the number of capped timesteps.
inline SpikeRaster encode(const std::vector<std::vector<double>>& signal, double step, double dt,
                          int per_step_cap = 15, std::uint64_t* clamp_events = nullptr) {
    if (!(step > 0)) throw std::invalid_argument("encoder step must be positive");
    const std::size_t n_ch = signal.size();
    const std::size_t n_t = n_ch ? signal.front().size() : 0;
    for (std::size_t c = 0; c < n_ch; ++c) {
        if (signal[c].size() != n_t) throw ShapeMismatch("signal channels have unequal lengths");
        for (std::size_t t = 0; t < n_t; ++t)
            if (!std::isfinite(signal[c][t])) throw NonFiniteSample(c, t);
    }

    SpikeRaster raster;
    raster.channels = 2 * n_ch;
    raster.timesteps = n_t;
    raster.dt = dt;
    raster.counts.assign(raster.channels * n_t, 0);

    std::uint64_t clamped = 0;
    for (std::size_t c = 0; c < n_ch; ++c) {
        EncoderState state;
        state.step = step;
        state.per_step_cap = per_step_cap;
        for (std::size_t t = 0; t < n_t; ++t) {
            auto [up, down] = state.push(signal[c][t]);
            raster.at(2 * c, t) = static_cast<std::uint16_t>(up);
            raster.at(2 * c + 1, t) = static_cast<std::uint16_t>(down);
        }
        clamped += state.clamp_events;
    }
    if (clamp_events) *clamp_events = clamped;
    return raster;
}

// Reconstruction by cumulative sum; the verification oracle for the encoder.
inline std::vector<std::vector<double>> decode(const SpikeRaster& raster, double step,
                                               double initial_level) {
    if (raster.channels % 2 != 0)
        throw std::invalid_argument("raster channel count must be even (up/down pairs)");
    const std::size_t n_ch = raster.channels / 2;
    std::vector<std::vector<double>> out(n_ch, std::vector<double>(raster.timesteps));
    for (std::size_t c = 0; c < n_ch; ++c) {
        double level = initial_level;
        for (std::size_t t = 0; t < raster.timesteps; ++t) {
            level += step * (static_cast<double>(raster.at(2 * c, t)) -
                             static_cast<double>(raster.at(2 * c + 1, t)));
            out[c][t] = level;
        }
    }
    return out;
}

// Event-list serialization: header, then one "channel timestep count" triple
// per line for nonzero counts, then "end".
inline void save_raster(std::ostream& out, const SpikeRaster& raster) {
    char dt_buf[32];
    std::snprintf(dt_buf, sizeof(dt_buf), "%.17g", raster.dt);
    out << "raster channels " << raster.channels << " timesteps " << raster.timesteps << " dt "
        << dt_buf << "\n";
    for (std::size_t t = 0; t < raster.timesteps; ++t)
        for (std::size_t c = 0; c < raster.channels; ++c)
            if (raster.at(c, t))
                out << c << ' ' << t << ' ' << raster.at(c, t) << "\n";
    out << "end\n";
}

inline SpikeRaster load_raster(std::istream& in) {
    std::string word;
    SpikeRaster raster;
    in >> word;
    if (word != "raster") throw std::invalid_argument("expected 'raster' header, got '" + word + "'");
    std::size_t channels = 0, timesteps = 0;
    double dt = 0;
    in >> word >> channels >> word >> timesteps >> word >> dt;
    if (!in) throw std::invalid_argument("malformed raster header");
    raster.channels = channels;
    raster.timesteps = timesteps;
    raster.dt = dt;
    raster.counts.assign(channels * timesteps, 0);
    while (in >> word) {
        if (word == "end") return raster;
        std::size_t c = std::stoul(word), t = 0;
        unsigned count = 0;
        in >> t >> count;
        if (!in || c >= channels || t >= timesteps)
            throw std::invalid_argument("malformed raster event line");
        raster.at(c, t) = static_cast<std::uint16_t>(count);
    }
    throw std::invalid_argument("raster stream ended before 'end'");
}

}  // namespace spikedet
