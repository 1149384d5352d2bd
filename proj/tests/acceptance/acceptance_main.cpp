// Acceptance suite: runs every gate the repository commits to and prints one
// PASS/FAIL line per criterion. Exit code is the number of failed criteria.
//
// Criterion 5 documents a known limitation: at tau/dt = 2 the best integer
// bit-shift decay factor is 1 - 2^-1 = 0.5 while exp(-1/2) = 0.6065, a gap of
// 0.1065 that no integer dash can bring under the 0.05 tolerance. The check
// runs at its stated tolerance anyway and reports the honest failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <vector>

#include "spikedet/pipeline.hpp"

using namespace spikedet;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("criterion %2d: %s — %s\n", id, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

void report_extra(const std::string& name, bool pass, const std::string& detail) {
    std::printf("extra        : %s — %s (%s)\n", pass ? "PASS" : "FAIL", name.c_str(),
                detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4g", v);
    return buf;
}

PipelineConfig acceptance_config() {
    PipelineConfig cfg;
    cfg.seed = 2025;
    cfg.synth_duration_s = 2200.0;
    cfg.synth_pattern = {5.0, 5.0, 5.0, 219};  // 440 five-second windows, ~balanced
    // No early stop: a few extra epochs past convergence widen the decision
    // margins, which the quantized agreement gate benefits from.
    cfg.train.epochs = 12;
    cfg.train.learning_rate = 0.0005;
    cfg.train.batch_size = 16;
    cfg.train.threads = 0;  // hardware
    return cfg;
}

SpikeRaster random_raster(std::size_t channels, std::size_t timesteps, std::uint64_t seed,
                          int max_count = 3) {
    SpikeRaster r;
    r.channels = channels;
    r.timesteps = timesteps;
    r.dt = 1.0 / 256.0;
    r.counts.assign(channels * timesteps, 0);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> dist(0, max_count);
    for (auto& c : r.counts) c = static_cast<std::uint16_t>(dist(rng));
    return r;
}

// Counts confined to an early burst so readout currents have a strict
// interior peak (keeps the finite-difference oracle on smooth ground).
SpikeRaster burst_raster(std::size_t channels, std::size_t timesteps, std::uint64_t seed) {
    SpikeRaster r = random_raster(channels, timesteps, seed);
    for (std::size_t t = timesteps / 3; t < timesteps; ++t)
        for (std::size_t c = 0; c < channels; ++c) r.at(c, t) = 0;
    return r;
}

WaveSenseConfig small_config(int blocks, int per_block, int readout) {
    WaveSenseConfig cfg;
    cfg.n_input_channels = 2;
    cfg.n_classes = 2;
    cfg.n_blocks = blocks;
    cfg.neurons_per_block = per_block;
    cfg.readout_hidden = readout;
    return cfg;
}

// Window-scan alarm reference, independent of the engine's counter FSM.
std::vector<AlarmStatus> alarm_reference(const std::vector<int>& decisions) {
    std::vector<AlarmStatus> out;
    AlarmStatus status = AlarmStatus::silent;
    std::size_t window_start = 0;
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

struct TrainedArtifacts {
    PipelineConfig cfg;
    RunPaths paths;
    Metrics float_metrics;
    double train_seconds = 0.0;
    std::size_t n_trials = 0;
    std::size_t n_ictal = 0;
    bool ready = false;
};

TrainedArtifacts run_pipeline() {
    TrainedArtifacts art;
    art.cfg = acceptance_config();
    art.paths.dir = fs::path("acceptance_run");
    fs::remove_all(art.paths.dir);
    fs::create_directories(art.paths.dir);
    {
        std::ofstream f(art.paths.config());
        f << pipeline_config_to_json(art.cfg).dump(2) << "\n";
    }

    const auto t0 = std::chrono::steady_clock::now();
    cmd_synth(art.cfg, art.paths);
    cmd_preprocess(art.cfg, art.paths);
    cmd_encode(art.cfg, art.paths);
    {
        std::ifstream a(art.paths.train_set()), b(art.paths.test_set());
        const auto train_set = load_spikeset(a);
        const auto test_set = load_spikeset(b);
        art.n_trials = train_set.size() + test_set.size();
        for (const auto& t : train_set) art.n_ictal += static_cast<std::size_t>(t.label);
        for (const auto& t : test_set) art.n_ictal += static_cast<std::size_t>(t.label);
    }
    cmd_train(art.cfg, art.paths);
    art.train_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    art.float_metrics = cmd_eval(art.cfg, art.paths);
    art.ready = true;
    return art;
}

void criterion_1(const TrainedArtifacts& art) {
    const auto& m = art.float_metrics;
    const double balance =
        static_cast<double>(art.n_ictal) / static_cast<double>(art.n_trials);
    const bool corpus_ok = art.n_trials >= 400 && balance > 0.4 && balance < 0.6;
    const bool time_ok = art.train_seconds <= 900.0;
    const bool metrics_ok = m.accuracy && *m.accuracy >= 0.85 && m.sensitivity &&
                            *m.sensitivity >= 0.80 && m.specificity && *m.specificity >= 0.80;
    report(1, corpus_ok && time_ok && metrics_ok,
           "float test accuracy " + fmt(m.accuracy.value_or(0)) + ", sensitivity " +
               fmt(m.sensitivity.value_or(0)) + ", specificity " + fmt(m.specificity.value_or(0)) +
               " on " + std::to_string(art.n_trials) + " trials (" + fmt(balance * 100) +
               "% ictal); pipeline time " + fmt(art.train_seconds) + " s (budget 900 s)");
}

void criterion_2(const TrainedArtifacts& art) {
    std::ifstream f(art.paths.test_set());
    const auto test_set = load_spikeset(f);
    const Network net = network_from_json(pipedetail::read_json(art.paths.model()));
    const auto violations = cmd_quantize(art.cfg, art.paths);
    if (!violations.empty()) {
        report(2, false, "quantized config not deployable");
        return;
    }
    const QuantizedConfig q = quantized_from_json(pipedetail::read_json(art.paths.quantized()));

    long agree = 0, f_tp = 0, f_fp = 0, f_tn = 0, f_fn = 0, q_tp = 0, q_fp = 0, q_tn = 0,
         q_fn = 0;
    for (const auto& trial : test_set) {
        const int fd = readout_decision(forward(net, trial.raster));
        const int qd = readout_decision(simulate_quantized(q, trial.raster).trace);
        agree += fd == qd;
        const bool pos = trial.label == 1;
        (pos ? (fd == 1 ? f_tp : f_fn) : (fd == 1 ? f_fp : f_tn))++;
        (pos ? (qd == 1 ? q_tp : q_fn) : (qd == 1 ? q_fp : q_tn))++;
    }
    const double agreement = static_cast<double>(agree) / static_cast<double>(test_set.size());
    const double facc = *Metrics::from_counts(f_tp, f_fp, f_tn, f_fn).accuracy;
    const double qacc = *Metrics::from_counts(q_tp, q_fp, q_tn, q_fn).accuracy;
    const double drop = facc - qacc;

    PipelineConfig qcfg = art.cfg;  // leave the quantized-eval artifacts behind too
    qcfg.use_quantized = true;
    cmd_eval(qcfg, art.paths);

    report(2, agreement >= 0.90 && drop <= 0.05,
           "quantized/float agreement " + fmt(agreement) + " (need >= 0.9); accuracy " +
               fmt(facc) + " -> " + fmt(qacc) + ", drop " + fmt(drop) + " (need <= 0.05)");
}

void criterion_3(const TrainedArtifacts& art) {
    const LatencyStat stat = cmd_latency(art.cfg, art.paths);
    bool multiples = true;
    for (const auto& r : stat.per_trial)
        if (r.first_positive_s) {
            const double k = *r.first_positive_s / 0.5;
            multiples = multiples && std::abs(k - std::round(k)) < 1e-9;
        }
    const bool ok = stat.median_s && *stat.median_s <= 1.0 && multiples && stat.n_detected > 0;
    report(3, ok,
           "median latency " + (stat.median_s ? fmt(*stat.median_s) + " s" : std::string("n/a")) +
               " (need <= 1.0 s), detection rate " + fmt(stat.detection_rate) + " (" +
               std::to_string(stat.n_detected) + "/" + std::to_string(stat.n_positive) +
               "), latencies on the 0.5 s grid: " + (multiples ? "yes" : "no"));
}

// stream-detect module example: one embedded seizure, replay raises exactly
// one alarm interval overlapping >= 80% of the annotation.
void extra_replay_overlap(const TrainedArtifacts& art) {
    PipelineConfig cfg = art.cfg;
    cfg.synth_duration_s = 120.0;
    cfg.synth_pattern.count = 0;
    cfg.synth_seizures = {{30.0, 70.0}};

    SynthParams params;
    params.duration_s = cfg.synth_duration_s;
    params.n_channels = cfg.synth_channels;
    params.sample_rate_hz = cfg.synth_sample_rate_hz;
    params.background_rms_uv = cfg.synth_background_rms_uv;
    params.ictal_rel_amplitude = cfg.synth_ictal_rel_amplitude;
    params.ictal_band_low_hz = cfg.synth_ictal_band_low_hz;
    params.ictal_band_high_hz = cfg.synth_ictal_band_high_hz;
    params.seizures = cfg.synth_seizures;
    Recording rec = synth_eeg(params, 4321);
    rec = apply_filters(rec, cfg.filter);

    StreamEngine engine = make_engine(cfg, art.paths);
    const DetectionTimeline timeline = replay(rec, engine);
    const auto intervals = timeline.alarm_intervals(rec.duration_s());

    double overlap = 0.0;
    for (const auto& [a, b] : intervals)
        overlap += std::max(0.0, std::min(b, 70.0) - std::max(a, 30.0));
    const double fraction = overlap / 40.0;
    report_extra("replay alarm overlap",
                 intervals.size() == 1 && fraction >= 0.8,
                 std::to_string(intervals.size()) + " alarm interval(s), overlap " +
                     fmt(fraction * 100) + "% of the annotation (need >= 80%, exactly 1 interval)");
}

void criterion_4() {
    // Scaled weights + losing-class label keep the softmax in its active
    // regime so the comparison cannot pass on vanishing gradients.
    double worst = 0.0;
    double weakest_grad = 1e300;
    std::mt19937_64 seeds(7);
    for (int k = 0; k < 5; ++k) {
        Network net = build_network(small_config(2, 3, 3), seeds());
        for (auto& b : net.blocks)
            for (auto* m : {&b.w_fast, &b.w_slow, &b.w_res, &b.w_skip})
                for (auto& w : m->w) w *= 0.25;
        for (auto& w : net.w_out.w) w *= 0.25;
        const auto raster = burst_raster(2, 48, seeds());
        const auto fwd = graded_forward_tape(net, raster, 0);
        const int label = fwd.peaks[0] <= fwd.peaks[1] ? 0 : 1;
        const GradientSet g = graded_gradients(net, raster, label);
        double gmax = 0.0;
        for (double v : g.w_out.w) gmax = std::max(gmax, std::abs(v));
        weakest_grad = std::min(weakest_grad, gmax);
        worst = std::max(worst, grad_check(net, raster, 1e-5, label));
    }
    report(4, worst < 1e-4 && weakest_grad > 1e-6,
           "max relative BPTT-vs-central-difference error " + fmt(worst) +
               " over 5 random nets (need < 1e-4; weakest gradient " + fmt(weakest_grad) + ")");
}

void criterion_5() {
    std::ostringstream detail;
    bool decay_ok = true;
    for (int ratio = 2; ratio <= 128; ratio *= 2) {
        const int dash = dash_from_tau(static_cast<double>(ratio), 1.0);
        const double gap =
            std::abs((1.0 - std::ldexp(1.0, -dash)) - std::exp(-1.0 / static_cast<double>(ratio)));
        if (gap >= 0.05) {
            decay_ok = false;
            detail << "tau/dt=" << ratio << " gap " << fmt(gap) << " >= 0.05; ";
        }
    }

    const Network net = build_network(small_config(2, 4, 4), 5);
    const QuantizedConfig q = quantize(extract_graph(net)).config;
    const auto raster = random_raster(2, 500, 99);
    const QSimResult a = simulate_quantized(q, raster);
    const QSimResult b = simulate_quantized(q, raster);
    const bool repeatable = a.trace.readout_currents == b.trace.readout_currents &&
                            a.energy.total_synops == b.energy.total_synops;
    if (!repeatable) detail << "fixed-point reruns differ; ";
    if (decay_ok && repeatable) detail << "all grid points within 0.05 and reruns bit-identical";
    report(5, decay_ok && repeatable, detail.str());
}

void criterion_6() {
    std::mt19937_64 seeds(12345);
    bool bound_ok = true;
    for (int k = 0; k < 1000 && bound_ok; ++k) {
        std::mt19937_64 rng(seeds());
        std::uniform_real_distribution<double> step_dist(0.05, 2.0);
        const double step = step_dist(rng);
        std::uniform_real_distribution<double> amp(-6.0 * step, 6.0 * step);
        std::vector<double> signal(256);
        for (auto& v : signal) v = amp(rng);
        const auto raster = encode({signal}, step, 1.0 / 256.0);
        const auto decoded = decode(raster, step, signal.front());
        for (std::size_t i = 0; i < signal.size(); ++i)
            if (std::abs(decoded[0][i] - signal[i]) >= step) bound_ok = false;
    }
    bool polarity_ok = true;
    for (int k = 0; k < 100 && polarity_ok; ++k) {
        std::mt19937_64 rng(seeds());
        std::uniform_real_distribution<double> inc(0.0, 1.0);
        std::vector<double> mono(256);
        double acc = 0.0;
        for (auto& v : mono) {
            acc += inc(rng);
            v = acc;
        }
        const bool falling = k % 2;
        if (falling) {
            for (auto& v : mono) v = -v;
        }
        const auto raster = encode({mono}, 0.4, 1.0 / 256.0);
        for (std::size_t t = 0; t < raster.timesteps; ++t)
            if (raster.at(falling ? 0 : 1, t) != 0) polarity_ok = false;
    }
    report(6, bound_ok && polarity_ok,
           std::string("sup-norm reconstruction error < step on 1000 random signals: ") +
               (bound_ok ? "yes" : "no") + "; monotone signals single-polarity: " +
               (polarity_ok ? "yes" : "no"));
}

void criterion_7() {
    bool ok = true;
    for (unsigned mask = 0; mask < (1u << 10) && ok; ++mask) {
        std::vector<int> decisions;
        for (int i = 0; i < 10; ++i) decisions.push_back((mask >> i) & 1u);
        const auto expected = alarm_reference(decisions);
        AlarmState st;
        for (std::size_t i = 0; i < decisions.size(); ++i) {
            alarm_update(st, decisions[i] == 1);
            if (st.status != expected[i]) ok = false;
        }
    }
    report(7, ok, "alarm FSM equals the brute-force reference on all 1024 length-10 strings");
}

void criterion_8() {
    bool ok = true;
    std::ostringstream detail;
    auto expect_bound = [&](const QuantizedConfig& q, const std::string& bound) {
        for (const auto& v : validate(q))
            if (v.bound == bound) return;
        ok = false;
        detail << "missing violation '" << bound << "'; ";
    };

    QuantizedConfig base = quantize(extract_graph(build_network(small_config(1, 2, 2), 1))).config;
    {
        QuantizedConfig q = base;
        q.n_inputs = 17;
        expect_bound(q, "input > 16");
    }
    {
        QuantizedConfig q = base;
        q.n_outputs = 9;
        expect_bound(q, "output > 8");
    }
    {
        QuantizedConfig q = base;
        q.neurons_per_block = 1001;
        q.readout_hidden = 0;
        expect_bound(q, "hidden > 1000");
    }
    {
        QuantizedConfig q = base;
        q.blocks[0].w_fast[0][0] = 300;
        expect_bound(q, "weight out of 8-bit range");
    }
    {
        QuantizedConfig q = base;
        q.spike_cap = 32;
        expect_bound(q, "spike cap > 31");
    }
    {
        QuantizedConfig q = base;
        q.blocks[0].w_skip.assign(33, std::vector<int>(q.neurons_per_block, 1));
        expect_bound(q, "fanout > 32");
    }

    const Network def = build_network(WaveSenseConfig{}, 4);
    const QuantizedConfig qdef = quantize(extract_graph(def)).config;
    if (!validate(qdef).empty()) {
        ok = false;
        detail << "default config rejected; ";
    }
    const double count = static_cast<double>(count_weights(def));
    if (std::abs(count - 2400.0) / 2400.0 > 0.25) {
        ok = false;
        detail << "weight count " << count << " outside 2.4K +-25%; ";
    }
    if (ok)
        detail << "all six bounds rejected by name; default config deployable with "
               << static_cast<long>(count) << " weights (within 25% of 2.4K)";
    report(8, ok, detail.str());
}

void criterion_9() {
    const Network net = build_network(small_config(2, 5, 4), 77);
    const QuantizedConfig q = quantize(extract_graph(net)).config;

    SpikeRaster zero;
    zero.channels = 2;
    zero.timesteps = 200;
    zero.counts.assign(400, 0);
    const bool zero_ok = simulate_quantized(q, zero).energy.total_synops == 0;

    bool deterministic = true, monotone = true;
    std::mt19937_64 seeds(55);
    for (int k = 0; k < 10; ++k) {
        const auto raster = random_raster(2, 300, seeds());
        const auto a = simulate_quantized(q, raster).energy;
        const auto b = simulate_quantized(q, raster).energy;
        deterministic = deterministic && a.total_synops == b.total_synops &&
                        a.spikes_per_layer == b.spikes_per_layer;
        SpikeRaster doubled = raster;
        for (auto& c : doubled.counts) c = static_cast<std::uint16_t>(c * 2);
        monotone =
            monotone && simulate_quantized(q, doubled).energy.total_synops >= a.total_synops;
    }
    report(9, zero_ok && deterministic && monotone,
           std::string("SynOps proxy: zero input -> 0 (") + (zero_ok ? "yes" : "no") +
               "), deterministic (" + (deterministic ? "yes" : "no") + "), monotone under count doubling (" +
               (monotone ? "yes" : "no") + ")");
}

void criterion_10() {
    std::mt19937_64 seeds(9001);
    bool ok = true;
    int recordings = 0;
    for (int k = 0; k < 50; ++k) {
        SynthParams p;
        p.duration_s = 3.0;
        p.n_channels = 1;
        p.sample_rate_hz = 256.0;
        if (k % 2) p.seizures = {{1.0, 2.0}};
        const Recording rec = synth_eeg(p, seeds());
        const Network net = build_network(small_config(1 + k % 3, 3 + k % 4, 4), seeds());
        const QuantizedConfig q = quantize(extract_graph(net)).config;
        const double step_uv = 4.0;

        const SpikeRaster raster = encode(rec.data, step_uv, 1.0 / 256.0);
        const ForwardTrace trace = simulate_quantized(q, raster).trace;
        std::vector<int> batch;
        const std::size_t period_steps = 128;
        for (std::size_t start = 0; start + period_steps <= trace.timesteps();
             start += period_steps) {
            int best = 0;
            double best_peak = -1e300;
            for (std::size_t c = 0; c < trace.readout_currents.size(); ++c) {
                double peak = -1e300;
                for (std::size_t t = start; t < start + period_steps; ++t)
                    peak = std::max(peak, trace.readout_currents[c][t]);
                if (peak > best_peak) {
                    best_peak = peak;
                    best = static_cast<int>(c);
                }
            }
            batch.push_back(best);
        }

        StreamEngine engine(q, 1.0 / 256.0, step_uv, 0.5);
        const DetectionTimeline timeline = replay(rec, engine);
        if (timeline.points.size() != batch.size()) {
            ok = false;
            break;
        }
        for (std::size_t i = 0; i < batch.size(); ++i)
            if (timeline.points[i].decision != batch[i]) ok = false;
        ++recordings;
    }
    report(10, ok,
           "streaming replay decisions equal batched forward + periodic peak extraction, "
           "bit-exact in quantized mode, on " +
               std::to_string(recordings) + "/50 random recordings");
}

}  // namespace

int main() {
    std::printf("spikedet acceptance suite\n");
    TrainedArtifacts art;
    try {
        art = run_pipeline();
    } catch (const std::exception& e) {
        std::printf("pipeline setup failed: %s\n", e.what());
        report(1, false, std::string("pipeline failed: ") + e.what());
        report(2, false, "skipped (pipeline failed)");
        report(3, false, "skipped (pipeline failed)");
    }
    if (art.ready) {
        criterion_1(art);
        criterion_2(art);
        criterion_3(art);
    }
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    criterion_10();
    if (art.ready) extra_replay_overlap(art);

    std::printf("%d criterion(s) failed\n", g_failures);
    return g_failures;
}
