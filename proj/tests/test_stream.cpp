#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spikedet/stream.hpp"
#include "spikedet/synth.hpp"
#include "test_support.hpp"

using namespace spikedet;

namespace {

// Independent alarm reference: scan the raw decision string for the first
// window of four consecutive identical values after the previous transition.
// Structurally different from the counter FSM it checks.
std::vector<AlarmStatus> alarm_reference(const std::vector<int>& decisions) {
    std::vector<AlarmStatus> out;
    AlarmStatus status = AlarmStatus::silent;
    std::size_t window_start = 0;  // first index usable after the last transition
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const int want = status == AlarmStatus::silent ? 1 : 0;
        if (i + 1 >= window_start + 4) {
            bool all = true;
            for (std::size_t k = i - 3; k <= i; ++k) all = all && decisions[k] == want;
            if (all) {
                status = status == AlarmStatus::silent ? AlarmStatus::alarm : AlarmStatus::silent;
                window_start = i + 1;
            }
        }
        out.push_back(status);
    }
    return out;
}

// Handcrafted detector: class 1 peaks whenever input spikes arrive, class 0
// wins ties on silence.
Network positive_detector() {
    WaveSenseConfig cfg;
    cfg.n_input_channels = 2;  // one EEG channel
    cfg.n_classes = 2;
    cfg.n_blocks = 1;
    cfg.neurons_per_block = 1;
    cfg.readout_hidden = 1;
    cfg.lif.dt = 1.0 / 256.0;
    Network net = build_network(cfg, 1);
    net.blocks[0].w_fast.at(0, 0) = 2.0;
    net.blocks[0].w_fast.at(0, 1) = 2.0;
    net.blocks[0].w_slow.at(0, 0) = 0.0;
    net.blocks[0].w_slow.at(0, 1) = 0.0;
    net.blocks[0].w_res.w.assign(net.blocks[0].w_res.w.size(), 0.0);
    net.blocks[0].w_skip.at(0, 0) = 2.0;
    net.w_out.at(0, 0) = 0.0;
    net.w_out.at(1, 0) = 1.0;
    return net;
}

Recording constant_recording(std::size_t channels, std::size_t samples, double rate, double value) {
    Recording rec;
    rec.sample_rate_hz = rate;
    for (std::size_t c = 0; c < channels; ++c) {
        rec.channel_labels.push_back("CH" + std::to_string(c));
        rec.data.emplace_back(samples, value);
    }
    return rec;
}

}  // namespace

TEST_CASE("alarm FSM follows the four-consecutive rule", "[stream]") {
    AlarmState st;
    for (int i = 0; i < 3; ++i) {
        REQUIRE_FALSE(alarm_update(st, true));
        REQUIRE(st.status == AlarmStatus::silent);
    }
    REQUIRE(alarm_update(st, true));  // 4th consecutive positive
    REQUIRE(st.status == AlarmStatus::alarm);

    AlarmState st2;
    for (bool d : {true, true, false, true, true, true}) alarm_update(st2, d);
    REQUIRE(st2.status == AlarmStatus::silent);  // reset at the 0

    AlarmState st3;
    st3.status = AlarmStatus::alarm;
    for (int i = 0; i < 3; ++i) REQUIRE_FALSE(alarm_update(st3, false));
    REQUIRE(alarm_update(st3, false));
    REQUIRE(st3.status == AlarmStatus::silent);
}

TEST_CASE("alarm FSM matches the brute-force reference on all 2^10 strings", "[stream]") {
    for (unsigned mask = 0; mask < (1u << 10); ++mask) {
        std::vector<int> decisions;
        for (int i = 0; i < 10; ++i) decisions.push_back((mask >> i) & 1u);
        const auto expected = alarm_reference(decisions);
        AlarmState st;
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            alarm_update(st, decisions[i] == 1);
            REQUIRE(st.status == expected[i]);
            REQUIRE(st.consecutive_positive <= 4);
            REQUIRE(st.consecutive_negative <= 4);
        }
    }
}

TEST_CASE("zero stream: all decisions class 0, alarm stays silent", "[stream]") {
    const Network net = positive_detector();
    StreamEngine engine(net, 1.0, 0.5);
    const Recording rec = constant_recording(1, 512, 256.0, 0.0);
    const DetectionTimeline timeline = replay(rec, engine);
    REQUIRE(timeline.points.size() == 4);  // a decision every 128 samples
    for (const auto& p : timeline.points) {
        REQUIRE(p.decision == 0);
        REQUIRE(p.alarm == AlarmStatus::silent);
    }
    REQUIRE(timeline.points[0].time_s == Catch::Approx(0.5));
    REQUIRE(timeline.points[3].time_s == Catch::Approx(2.0));
}

TEST_CASE("decision period must be an integer multiple of dt", "[stream]") {
    const Network net = positive_detector();
    REQUIRE_THROWS_AS(StreamEngine(net, 1.0, 0.3e-3), std::invalid_argument);
    REQUIRE_NOTHROW(StreamEngine(net, 1.0, 0.25));
}

TEST_CASE("engine state size does not grow with stream length", "[stream]") {
    const Network net = positive_detector();
    StreamEngine engine(net, 1.0, 0.5);
    std::vector<double> sample = {10.0};
    for (int i = 0; i < 128; ++i) engine.push_sample(sample);
    const std::size_t after_one_period = engine.state_bytes();
    for (int i = 0; i < 128 * 40; ++i) engine.push_sample(sample);
    REQUIRE(engine.state_bytes() == after_one_period);
}

TEST_CASE("latency semantics on handcrafted trials", "[stream]") {
    const Network net = positive_detector();
    auto factory = [&] { return StreamEngine(net, 1.0, 0.5); };

    auto make_trial = [](TrialLabel label, bool active) {
        Trial t;
        t.label = label;
        t.data.assign(1, std::vector<double>(1280, 0.0));
        if (active)
            for (std::size_t i = 0; i < 1280; ++i)
                t.data[0][i] = 5.0 * std::sin(2.0 * std::numbers::pi * 8.0 * i / 256.0);
        return t;
    };
    const std::vector<Trial> trials = {
        make_trial(TrialLabel::ictal, true),        // detected in the first period
        make_trial(TrialLabel::ictal, false),       // silent positive: not detected
        make_trial(TrialLabel::interictal, false),  // correct rejection
        make_trial(TrialLabel::interictal, true),   // false positive with a time
    };
    const LatencyStat stat = measure_latency(factory, trials);
    REQUIRE(stat.n_positive == 2);
    REQUIRE(stat.n_detected == 1);
    REQUIRE(stat.detection_rate == Catch::Approx(0.5));
    REQUIRE(stat.per_trial[0].first_positive_s.has_value());
    REQUIRE(*stat.per_trial[0].first_positive_s == Catch::Approx(0.5));  // step 1 at 0.5 s
    REQUIRE_FALSE(stat.per_trial[1].first_positive_s.has_value());       // not-detected marker
    REQUIRE_FALSE(stat.per_trial[2].first_positive_s.has_value());
    REQUIRE(stat.n_false_positive == 1);
    REQUIRE(*stat.median_s == Catch::Approx(0.5));

    // latencies are multiples of the decision period
    for (const auto& r : stat.per_trial)
        if (r.first_positive_s) {
            const double k = *r.first_positive_s / 0.5;
            REQUIRE(k == Catch::Approx(std::round(k)));
        }
}

TEST_CASE("recording shorter than one decision period yields an empty timeline", "[stream]") {
    const Network net = positive_detector();
    StreamEngine engine(net, 1.0, 0.5);
    const Recording rec = constant_recording(1, 100, 256.0, 1.0);  // < 128 samples
    const DetectionTimeline timeline = replay(rec, engine);
    REQUIRE(timeline.points.empty());
}

TEST_CASE("streaming equals batched forward plus periodic peak extraction", "[stream]") {
    SynthParams p;
    p.duration_s = 6.0;
    p.n_channels = 1;
    p.sample_rate_hz = 256.0;
    p.seizures = {{2.0, 4.0}};
    const Recording rec = synth_eeg(p, 31);
    const double step_uv = 5.0;
    const double period = 0.5;

    const Network net = build_network(testsupport::toy_config(2, 4, 4), 41);

    // batch route: encode everything, run forward, extract per-period peaks
    const SpikeRaster raster = encode(rec.data, step_uv, 1.0 / rec.sample_rate_hz);
    const ForwardTrace trace = forward(net, raster);
    const std::size_t period_steps = 128;
    std::vector<int> batch_decisions;
    for (std::size_t start = 0; start + period_steps <= trace.timesteps(); start += period_steps) {
        int best = 0;
        double best_peak = -1e300;
        for (std::size_t k = 0; k < trace.readout_currents.size(); ++k) {
            double peak = -1e300;
            for (std::size_t t = start; t < start + period_steps; ++t)
                peak = std::max(peak, trace.readout_currents[k][t]);
            if (peak > best_peak) {
                best_peak = peak;
                best = static_cast<int>(k);
            }
        }
        batch_decisions.push_back(best);
    }

    StreamEngine engine(net, step_uv, period);
    const DetectionTimeline timeline = replay(rec, engine);
    REQUIRE(timeline.points.size() == batch_decisions.size());
    for (std::size_t i = 0; i < batch_decisions.size(); ++i)
        REQUIRE(timeline.points[i].decision == batch_decisions[i]);

    // quantized route, bit-exact
    const QuantizedConfig q = quantize(extract_graph(net)).config;
    const ForwardTrace qtrace = simulate_quantized(q, raster).trace;
    std::vector<int> q_batch;
    for (std::size_t start = 0; start + period_steps <= qtrace.timesteps(); start += period_steps) {
        int best = 0;
        double best_peak = -1e300;
        for (std::size_t k = 0; k < qtrace.readout_currents.size(); ++k) {
            double peak = -1e300;
            for (std::size_t t = start; t < start + period_steps; ++t)
                peak = std::max(peak, qtrace.readout_currents[k][t]);
            if (peak > best_peak) {
                best_peak = peak;
                best = static_cast<int>(k);
            }
        }
        q_batch.push_back(best);
    }
    StreamEngine qengine(q, 1.0 / rec.sample_rate_hz, step_uv, period);
    const DetectionTimeline qtimeline = replay(rec, qengine);
    REQUIRE(qtimeline.points.size() == q_batch.size());
    for (std::size_t i = 0; i < q_batch.size(); ++i)
        REQUIRE(qtimeline.points[i].decision == q_batch[i]);
}

TEST_CASE("timeline TSV is line-oriented with a header", "[stream]") {
    DetectionTimeline t;
    t.points = {{0.5, 0, AlarmStatus::silent}, {1.0, 1, AlarmStatus::alarm}};
    std::ostringstream ss;
    write_timeline_tsv(ss, t);
    REQUIRE(ss.str() == "time_s\tdecision\talarm\n0.5\t0\t0\n1\t1\t1\n");
}

TEST_CASE("alarm intervals pair transitions", "[stream]") {
    DetectionTimeline t;
    t.transitions = {{2.0, AlarmStatus::alarm}, {5.0, AlarmStatus::silent}, {7.5, AlarmStatus::alarm}};
    const auto intervals = t.alarm_intervals(10.0);
    REQUIRE(intervals.size() == 2);
    REQUIRE(intervals[0] == std::pair<double, double>{2.0, 5.0});
    REQUIRE(intervals[1] == std::pair<double, double>{7.5, 10.0});
}
