#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "spikedet/errors.hpp"

namespace spikedet {

struct SeizureAnnotation {
    double start_s = 0.0;
    double end_s = 0.0;
};

// Multichannel EEG in physical units (microvolts).
struct Recording {
    // Digital/physical mapping of one channel as declared by an EDF header.
    // Kept so a parse -> write round trip reproduces the digital samples exactly.
    struct ChannelRange {
        double phys_min = -1000.0;
        double phys_max = 1000.0;
        int dig_min = -32768;
        int dig_max = 32767;
    };

    std::vector<std::string> channel_labels;
    double sample_rate_hz = 0.0;
    std::vector<std::vector<double>> data;  // [channel][sample], microvolts
    std::vector<SeizureAnnotation> annotations;
    std::vector<ChannelRange> ranges;  // empty unless parsed from / destined for EDF

    std::size_t n_channels() const { return data.size(); }
    std::size_t n_samples() const { return data.empty() ? 0 : data.front().size(); }
    double duration_s() const {
        return sample_rate_hz > 0 ? static_cast<double>(n_samples()) / sample_rate_hz : 0.0;
    }
};

inline void validate_recording(const Recording& rec) {
    if (rec.sample_rate_hz <= 0)
        throw std::invalid_argument("recording sample rate must be positive");
    if (rec.channel_labels.size() != rec.data.size())
        throw std::invalid_argument("channel label count does not match series count");
    for (const auto& series : rec.data)
        if (series.size() != rec.n_samples())
            throw std::invalid_argument("channel series lengths differ");
    for (const auto& ann : rec.annotations)
        if (!(ann.start_s >= 0.0 && ann.start_s < ann.end_s))
            throw std::invalid_argument("annotation must satisfy 0 <= start < end");
}

enum class TrialLabel { interictal = 0, ictal = 1 };

struct Trial {
    std::vector<std::vector<double>> data;  // [channel][sample], microvolts
    TrialLabel label = TrialLabel::interictal;
    double origin_s = 0.0;
};

struct FilterSpec {
    double band_low_hz = 1.0;
    double band_high_hz = 80.0;
    double notch_hz = 50.0;
    double notch_q = 30.0;
};

// Channel selection in the requested order.
inline Recording select_channels(const Recording& rec, const std::vector<std::string>& labels) {
    Recording out;
    out.sample_rate_hz = rec.sample_rate_hz;
    out.annotations = rec.annotations;
    for (const auto& want : labels) {
        auto it = std::find(rec.channel_labels.begin(), rec.channel_labels.end(), want);
        if (it == rec.channel_labels.end()) throw UnknownChannel(want);
        std::size_t idx = static_cast<std::size_t>(it - rec.channel_labels.begin());
        out.channel_labels.push_back(want);
        out.data.push_back(rec.data[idx]);
        if (idx < rec.ranges.size()) out.ranges.push_back(rec.ranges[idx]);
    }
    if (!out.ranges.empty() && out.ranges.size() != out.data.size()) out.ranges.clear();
    return out;
}

// Common-average re-reference: subtract the across-channel mean per sample.
// Off by default in the pipeline; intended for referential montages.
inline Recording rereference_common_average(const Recording& rec) {
    Recording out = rec;
    out.ranges.clear();
    const std::size_t n = rec.n_samples();
    const std::size_t c = rec.n_channels();
    if (c == 0) return out;
    for (std::size_t t = 0; t < n; ++t) {
        double mean = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) mean += rec.data[ch][t];
        mean /= static_cast<double>(c);
        for (std::size_t ch = 0; ch < c; ++ch) out.data[ch][t] -= mean;
    }
    return out;
}

namespace detail {

// Merge overlapping annotation intervals so the ictal-overlap fraction is
// computed against their union.
inline std::vector<SeizureAnnotation> merged_annotations(std::vector<SeizureAnnotation> anns) {
    std::sort(anns.begin(), anns.end(),
              [](const SeizureAnnotation& a, const SeizureAnnotation& b) { return a.start_s < b.start_s; });
    std::vector<SeizureAnnotation> merged;
    for (const auto& a : anns) {
        if (!merged.empty() && a.start_s <= merged.back().end_s)
            merged.back().end_s = std::max(merged.back().end_s, a.end_s);
        else
            merged.push_back(a);
    }
    return merged;
}

}  // namespace detail

// Consecutive non-overlapping windows; trailing partial window dropped.
// A window is ictal when the fraction of its duration inside the (merged)
// seizure annotations is >= overlap_threshold.
inline std::vector<Trial> segment_trials(const Recording& rec, double window_s,
                                         double overlap_threshold) {
    if (window_s <= 0) throw std::invalid_argument("window_s must be positive");
    if (overlap_threshold < 0 || overlap_threshold > 1)
        throw std::invalid_argument("overlap_threshold must be in [0,1]");
    validate_recording(rec);

    const auto merged = detail::merged_annotations(rec.annotations);
    const std::size_t win = static_cast<std::size_t>(std::llround(window_s * rec.sample_rate_hz));
    if (win == 0) throw std::invalid_argument("window shorter than one sample");

    std::vector<Trial> trials;
    const std::size_t total = rec.n_samples();
    for (std::size_t start = 0; start + win <= total; start += win) {
        Trial tr;
        tr.origin_s = static_cast<double>(start) / rec.sample_rate_hz;
        const double w0 = tr.origin_s;
        const double w1 = w0 + window_s;
        double inside = 0.0;
        for (const auto& a : merged)
            inside += std::max(0.0, std::min(w1, a.end_s) - std::max(w0, a.start_s));
        tr.label = (inside / window_s >= overlap_threshold) ? TrialLabel::ictal
                                                            : TrialLabel::interictal;
        tr.data.reserve(rec.n_channels());
        for (const auto& series : rec.data)
            tr.data.emplace_back(series.begin() + static_cast<std::ptrdiff_t>(start),
                                 series.begin() + static_cast<std::ptrdiff_t>(start + win));
        trials.push_back(std::move(tr));
    }
    return trials;
}

// Sidecar annotation file: one "start_s<TAB>end_s" pair per line.
inline std::vector<SeizureAnnotation> read_annotations(std::istream& in) {
    std::vector<SeizureAnnotation> anns;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        SeizureAnnotation a;
        if (!(ls >> a.start_s >> a.end_s) || !(a.start_s >= 0.0) || !(a.start_s < a.end_s))
            throw std::invalid_argument("bad annotation line " + std::to_string(lineno) + ": " + line);
        anns.push_back(a);
    }
    return anns;
}

inline void write_annotations(std::ostream& out, const std::vector<SeizureAnnotation>& anns) {
    char buf[80];
    for (const auto& a : anns) {
        std::snprintf(buf, sizeof(buf), "%.6g\t%.6g\n", a.start_s, a.end_s);
        out << buf;
    }
}

}  // namespace spikedet
