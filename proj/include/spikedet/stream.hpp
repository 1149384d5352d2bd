#pragma once

// Continuous inference over a live sample stream: per-sample sigma-delta
// encoding, one network step per sample, a class decision every decision
// period (argmax of the trailing period's peak readout current), and the
// 4-consecutive-vote alarm state machine. Constant memory in stream length.

#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <vector>

#include "spikedet/encoding.hpp"
#include "spikedet/errors.hpp"
#include "spikedet/hwmap.hpp"
#include "spikedet/recording.hpp"
#include "spikedet/wavesense.hpp"

namespace spikedet {

enum class AlarmStatus { silent, alarm };

struct AlarmState {
    AlarmStatus status = AlarmStatus::silent;
    int consecutive_positive = 0;
    int consecutive_negative = 0;
};

// Advance the alarm FSM by one decision. Four consecutive positives raise the
// alarm, four consecutive negatives clear it; any opposite decision resets the
// relevant counter. Returns true when the status changed.
inline bool alarm_update(AlarmState& state, bool positive) {
    if (state.status == AlarmStatus::silent) {
        state.consecutive_positive = positive ? state.consecutive_positive + 1 : 0;
        if (state.consecutive_positive >= 4) {
            state.status = AlarmStatus::alarm;
            state.consecutive_positive = 0;
            state.consecutive_negative = 0;
            return true;
        }
    } else {
        state.consecutive_negative = positive ? 0 : state.consecutive_negative + 1;
        if (state.consecutive_negative >= 4) {
            state.status = AlarmStatus::silent;
            state.consecutive_positive = 0;
            state.consecutive_negative = 0;
            return true;
        }
    }
    return false;
}

struct StreamDecision {
    double time_s = 0.0;
    int decision = 0;
    AlarmState alarm;
    bool transitioned = false;
};

// One engine per stream; advanced by a single caller at a time.
class StreamEngine {
public:
    // Float backend; the network is copied so the engine is self-contained.
    StreamEngine(const Network& net, double encoder_step_uv, double decision_period_s,
                 int per_step_cap = 15)
        : net_(std::make_unique<Network>(net)),
          dt_(net.config.lif.dt),
          n_eeg_channels_(static_cast<std::size_t>(net.config.n_input_channels) / 2),
          n_classes_(static_cast<std::size_t>(net.config.n_classes)) {
        float_runner_ = std::make_unique<FloatRunner>(*net_);
        init(encoder_step_uv, decision_period_s, per_step_cap);
    }

    // Quantized backend. dt is not part of the integer config, so it is
    // passed explicitly.
    StreamEngine(const QuantizedConfig& cfg, double dt, double encoder_step_uv,
                 double decision_period_s, int per_step_cap = 15)
        : quant_cfg_(std::make_unique<QuantizedConfig>(cfg)),
          dt_(dt),
          n_eeg_channels_(static_cast<std::size_t>(cfg.n_inputs) / 2),
          n_classes_(static_cast<std::size_t>(cfg.n_outputs)) {
        quant_runner_ = std::make_unique<QuantRunner>(*quant_cfg_);
        init(encoder_step_uv, decision_period_s, per_step_cap);
    }

    StreamEngine(StreamEngine&&) = default;
    StreamEngine& operator=(StreamEngine&&) = default;

    std::size_t n_eeg_channels() const { return n_eeg_channels_; }
    double decision_period_s() const { return static_cast<double>(period_steps_) * dt_; }
    std::size_t period_steps() const { return period_steps_; }
    const AlarmState& alarm() const { return alarm_; }

    // Feed one multichannel sample (microvolts). Returns a decision record
    // when this sample completes a decision period.
    std::optional<StreamDecision> push_sample(const std::vector<double>& sample) {
        if (sample.size() != n_eeg_channels_)
            throw ShapeMismatch("stream sample has " + std::to_string(sample.size()) +
                                " channels, engine expects " + std::to_string(n_eeg_channels_));
        for (std::size_t c = 0; c < n_eeg_channels_; ++c) {
            auto [up, down] = encoders_[c].push(sample[c]);
            counts_[2 * c] = static_cast<std::uint16_t>(up);
            counts_[2 * c + 1] = static_cast<std::uint16_t>(down);
        }
        if (float_runner_) {
            float_runner_->step(counts_.data());
            const auto& cur = float_runner_->readout_currents();
            for (std::size_t k = 0; k < n_classes_; ++k) peaks_[k] = std::max(peaks_[k], cur[k]);
        } else {
            quant_runner_->step(counts_.data());
            const auto& cur = quant_runner_->readout_currents();
            for (std::size_t k = 0; k < n_classes_; ++k)
                peaks_[k] = std::max(peaks_[k], static_cast<double>(cur[k]));
        }
        ++sample_index_;
        ++in_period_;
        if (in_period_ < period_steps_) return std::nullopt;

        StreamDecision out;
        int best = 0;
        for (std::size_t k = 1; k < n_classes_; ++k)
            if (peaks_[k] > peaks_[static_cast<std::size_t>(best)]) best = static_cast<int>(k);
        out.decision = best;
        out.time_s = static_cast<double>(sample_index_) * dt_;
        out.transitioned = alarm_update(alarm_, best == 1);
        out.alarm = alarm_;
        in_period_ = 0;
        std::fill(peaks_.begin(), peaks_.end(), -std::numeric_limits<double>::infinity());
        return out;
    }

    // State footprint; independent of how many samples have been consumed.
    std::size_t state_bytes() const {
        std::size_t bytes = encoders_.size() * sizeof(EncoderState) +
                            counts_.size() * sizeof(std::uint16_t) +
                            peaks_.size() * sizeof(double);
        if (float_runner_) bytes += float_runner_->state_bytes();
        if (quant_runner_) bytes += quant_runner_->state_bytes();
        return bytes;
    }

private:
    void init(double encoder_step_uv, double decision_period_s, int per_step_cap) {
        if (!(encoder_step_uv > 0)) throw std::invalid_argument("encoder step must be positive");
        const double steps = decision_period_s / dt_;
        period_steps_ = static_cast<std::size_t>(std::llround(steps));
        if (period_steps_ == 0 || std::abs(steps - static_cast<double>(period_steps_)) > 1e-6)
            throw std::invalid_argument("decision period must be an integer multiple of dt");
        encoders_.resize(n_eeg_channels_);
        for (auto& e : encoders_) {
            e.step = encoder_step_uv;
            e.per_step_cap = per_step_cap;
        }
        counts_.assign(2 * n_eeg_channels_, 0);
        peaks_.assign(n_classes_, -std::numeric_limits<double>::infinity());
    }

    std::unique_ptr<Network> net_;
    std::unique_ptr<QuantizedConfig> quant_cfg_;
    std::unique_ptr<FloatRunner> float_runner_;
    std::unique_ptr<QuantRunner> quant_runner_;
    double dt_ = 0.0;
    std::size_t n_eeg_channels_ = 0;
    std::size_t n_classes_ = 0;
    std::size_t period_steps_ = 0;
    std::size_t in_period_ = 0;
    std::uint64_t sample_index_ = 0;
    std::vector<EncoderState> encoders_;
    std::vector<std::uint16_t> counts_;
    std::vector<double> peaks_;
    AlarmState alarm_;
};

struct TimelinePoint {
    double time_s = 0.0;
    int decision = 0;
    AlarmStatus alarm = AlarmStatus::silent;
};

struct AlarmTransition {
    double time_s = 0.0;
    AlarmStatus to = AlarmStatus::silent;
};

struct DetectionTimeline {
    std::vector<TimelinePoint> points;
    std::vector<AlarmTransition> transitions;

    // Contiguous [start, end) intervals during which the alarm was raised.
    std::vector<std::pair<double, double>> alarm_intervals(double stream_end_s) const {
        std::vector<std::pair<double, double>> out;
        double open = -1.0;
        for (const auto& tr : transitions) {
            if (tr.to == AlarmStatus::alarm) {
                open = tr.time_s;
            } else if (open >= 0.0) {
                out.emplace_back(open, tr.time_s);
                open = -1.0;
            }
        }
        if (open >= 0.0) out.emplace_back(open, stream_end_s);
        return out;
    }
};

// Drives stream_step sample-by-sample over a recording; not a second code
// path. The recording must already be preprocessed and channel-matched.
inline DetectionTimeline replay(const Recording& rec, StreamEngine& engine) {
    validate_recording(rec);
    if (rec.n_channels() != engine.n_eeg_channels())
        throw ShapeMismatch("recording has " + std::to_string(rec.n_channels()) +
                            " channels, engine expects " + std::to_string(engine.n_eeg_channels()));
    DetectionTimeline timeline;
    std::vector<double> sample(rec.n_channels());
    for (std::size_t t = 0; t < rec.n_samples(); ++t) {
        for (std::size_t c = 0; c < rec.n_channels(); ++c) sample[c] = rec.data[c][t];
        if (auto d = engine.push_sample(sample)) {
            timeline.points.push_back({d->time_s, d->decision, d->alarm.status});
            if (d->transitioned) timeline.transitions.push_back({d->time_s, d->alarm.status});
        }
    }
    return timeline;
}

struct LatencyStat {
    struct TrialResult {
        int label = 0;
        // First positive decision: detection latency for positive trials,
        // false-positive time for negative ones. Empty = none inside the trial.
        std::optional<double> first_positive_s;
    };
    std::vector<TrialResult> per_trial;
    std::optional<double> median_s;  // over detected positive trials
    double detection_rate = 0.0;
    long n_positive = 0, n_detected = 0;
    long n_negative = 0, n_false_positive = 0;
};

// Latency per trial using a fresh engine per trial (factory). Positive trials
// are 5 s windows with seizure onset at t = 0; latency is the time of the
// first positive decision.
template <typename EngineFactory>
LatencyStat measure_latency(EngineFactory&& make_engine, const std::vector<Trial>& trials) {
    LatencyStat stat;
    std::vector<double> latencies;
    for (const auto& trial : trials) {
        StreamEngine engine = make_engine();
        LatencyStat::TrialResult res;
        res.label = trial.label == TrialLabel::ictal ? 1 : 0;
        const std::size_t n = trial.data.empty() ? 0 : trial.data.front().size();
        std::vector<double> sample(trial.data.size());
        for (std::size_t t = 0; t < n; ++t) {
            for (std::size_t c = 0; c < trial.data.size(); ++c) sample[c] = trial.data[c][t];
            if (auto d = engine.push_sample(sample)) {
                if (d->decision == 1 && !res.first_positive_s) res.first_positive_s = d->time_s;
            }
        }
        if (res.label == 1) {
            ++stat.n_positive;
            if (res.first_positive_s) {
                ++stat.n_detected;
                latencies.push_back(*res.first_positive_s);
            }
        } else {
            ++stat.n_negative;
            if (res.first_positive_s) ++stat.n_false_positive;
        }
        stat.per_trial.push_back(std::move(res));
    }
    if (stat.n_positive > 0)
        stat.detection_rate = static_cast<double>(stat.n_detected) / static_cast<double>(stat.n_positive);
    if (!latencies.empty()) {
        std::sort(latencies.begin(), latencies.end());
        const std::size_t n = latencies.size();
        stat.median_s = n % 2 ? latencies[n / 2] : 0.5 * (latencies[n / 2 - 1] + latencies[n / 2]);
    }
    return stat;
}

// Line-delimited timeline records (time_s, decision, alarm) for plotting.
inline void write_timeline_tsv(std::ostream& out, const DetectionTimeline& timeline) {
    out << "time_s\tdecision\talarm\n";
    char buf[96];
    for (const auto& p : timeline.points) {
        std::snprintf(buf, sizeof(buf), "%.6g\t%d\t%d\n", p.time_s, p.decision,
                      p.alarm == AlarmStatus::alarm ? 1 : 0);
        out << buf;
    }
}

}  // namespace spikedet
