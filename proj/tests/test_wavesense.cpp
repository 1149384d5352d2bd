#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "spikedet/wavesense.hpp"
#include "test_support.hpp"

using namespace spikedet;

TEST_CASE("build_network rejects configs violating stated bounds", "[wavesense]") {
    WaveSenseConfig over;
    over.n_blocks = 1;
    over.neurons_per_block = 985;
    over.readout_hidden = 16;  // 1001 total hidden
    over.dilation_taus = {0.01, 0.02};
    REQUIRE_THROWS_WITH(build_network(over, 1), Catch::Matchers::ContainsSubstring("1000"));

    WaveSenseConfig wide;
    wide.n_input_channels = 17;
    REQUIRE_THROWS_AS(build_network(wide, 1), ConfigViolation);

    WaveSenseConfig classes;
    classes.n_classes = 9;
    REQUIRE_THROWS_AS(build_network(classes, 1), ConfigViolation);

    WaveSenseConfig taus;
    taus.dilation_taus = {0.01};  // needs 2 per block
    REQUIRE_THROWS_AS(build_network(taus, 1), ConfigViolation);
}

TEST_CASE("default config weight count lands near 2.4K", "[wavesense]") {
    const Network net = build_network(WaveSenseConfig{}, 7);
    const std::size_t count = count_weights(net);
    REQUIRE(count == 1824);  // 4 blocks x (2*16*4 + 4*16 + 16*16) + 2*16
    REQUIRE(std::abs(static_cast<double>(count) - 2400.0) / 2400.0 <= 0.25);
}

TEST_CASE("initialization is seed-deterministic", "[wavesense]") {
    const Network a = build_network(WaveSenseConfig{}, 42);
    const Network b = build_network(WaveSenseConfig{}, 42);
    REQUIRE(a == b);
    const Network c = build_network(WaveSenseConfig{}, 43);
    REQUIRE_FALSE(a == c);
}

TEST_CASE("weights are bounded by 1/sqrt(fan_in)", "[wavesense]") {
    const Network net = build_network(WaveSenseConfig{}, 3);
    const double bound_in = 1.0 / std::sqrt(4.0);
    for (double w : net.blocks[0].w_fast.w) REQUIRE(std::abs(w) <= bound_in);
    const double bound_skip = 1.0 / std::sqrt(16.0);
    for (double w : net.blocks[0].w_skip.w) REQUIRE(std::abs(w) <= bound_skip);
}

TEST_CASE("zero raster propagates to exactly zero readout currents", "[wavesense]") {
    const Network net = build_network(WaveSenseConfig{}, 11);
    SpikeRaster zero;
    zero.channels = 4;
    zero.timesteps = 300;
    zero.dt = net.config.lif.dt;
    zero.counts.assign(4 * 300, 0);
    const ForwardTrace trace = forward(net, zero);
    for (const auto& series : trace.readout_currents)
        for (double v : series) REQUIRE(v == 0.0);
    for (auto n : trace.spikes_per_layer) REQUIRE(n == 0);
}

TEST_CASE("forward shape contract: 4 x 1280 in, 2 x 1280 out", "[wavesense]") {
    const Network net = build_network(WaveSenseConfig{}, 5);
    const auto raster = testsupport::random_raster(4, 1280, 99);
    const ForwardTrace trace = forward(net, raster);
    REQUIRE(trace.readout_currents.size() == 2);
    REQUIRE(trace.readout_currents[0].size() == 1280);
    REQUIRE(trace.timesteps() == 1280);

    SpikeRaster wrong = testsupport::random_raster(3, 64, 1);
    REQUIRE_THROWS_AS(forward(net, wrong), ShapeMismatch);
}

TEST_CASE("single spike through unit path yields the output synaptic kernel", "[wavesense]") {
    // One input channel, one hidden neuron, one readout neuron: every
    // intermediate stage passes exactly one spike, so the class-0 current is
    // w * exp(-(t - t0) * dt / tau_out), the closed-form synapse kernel.
    WaveSenseConfig cfg;
    cfg.n_input_channels = 1;
    cfg.n_classes = 2;
    cfg.n_blocks = 1;
    cfg.neurons_per_block = 1;
    cfg.readout_hidden = 1;
    cfg.lif.dt = 1.0 / 256.0;
    cfg.dilation_taus = {cfg.lif.dt, cfg.lif.dt};
    cfg.tau_syn_readout_s = cfg.lif.dt;
    cfg.tau_syn_output_s = 16.0 * cfg.lif.dt;
    Network net = build_network(cfg, 1);
    // unit-gain synapses at tau = dt inject (1 - e^-1) * w per spike, so
    // w = 1.1 puts exactly one crossing above the 0.6 threshold
    net.blocks[0].w_fast.at(0, 0) = 1.1;
    net.blocks[0].w_slow.at(0, 0) = 0.0;
    net.blocks[0].w_res.at(0, 0) = 0.0;
    net.blocks[0].w_skip.at(0, 0) = 1.1;
    const double w = 0.9;
    net.w_out.at(0, 0) = w;
    net.w_out.at(1, 0) = 0.0;

    SpikeRaster input;
    input.channels = 1;
    input.timesteps = 64;
    input.dt = cfg.lif.dt;
    input.counts.assign(64, 0);
    const std::size_t t0 = 5;
    input.at(0, t0) = 1;

    const ForwardTrace trace = forward(net, input);
    REQUIRE(trace.spikes_per_layer[0] == 1);  // hidden fired exactly once
    REQUIRE(trace.spikes_per_layer[1] == 1);  // readout hidden too
    const double alpha = std::exp(-cfg.lif.dt / cfg.tau_syn_output_s);
    const double gain = 1.0 - alpha;  // unit-DC synapse input normalization
    for (std::size_t t = 0; t < 64; ++t) {
        const double expected =
            t < t0 ? 0.0 : w * gain * std::pow(alpha, static_cast<double>(t - t0));
        REQUIRE(trace.readout_currents[0][t] == Catch::Approx(expected).margin(1e-12));
        REQUIRE(trace.readout_currents[1][t] == 0.0);
    }
}

TEST_CASE("readout_decision picks the highest peak, ties to lowest index", "[wavesense]") {
    ForwardTrace trace;
    trace.readout_currents = {{0, 1, 0}, {0, 0, 0.5}};
    REQUIRE(readout_decision(trace) == 0);
    trace.readout_currents = {{0, 0, 0}, {0, 0, 0}};
    REQUIRE(readout_decision(trace) == 0);
    trace.readout_currents = {{0, 2, 0}, {3, 0, 0}};
    REQUIRE(readout_decision(trace) == 1);
    // argmax invariance under positive scaling
    trace.readout_currents = {{0, 2, 0}, {3, 0, 0}};
    for (auto& series : trace.readout_currents)
        for (auto& v : series) v *= 17.5;
    REQUIRE(readout_decision(trace) == 1);
}

TEST_CASE("hidden-neuron permutation leaves readout currents unchanged", "[wavesense]") {
    WaveSenseConfig cfg = testsupport::toy_config(2, 5, 4);
    const Network net = build_network(cfg, 21);
    const auto raster = testsupport::random_raster(2, 128, 8);
    const ForwardTrace base = forward(net, raster);

    // permute block 1's hidden neurons: rows of w_fast/w_slow, cols of w_res/w_skip
    Network permuted = net;
    const std::vector<std::size_t> perm = {3, 0, 4, 1, 2};
    auto& blk = permuted.blocks[1];
    const auto& src = net.blocks[1];
    for (std::size_t n = 0; n < perm.size(); ++n) {
        for (std::size_t c = 0; c < blk.w_fast.cols; ++c) {
            blk.w_fast.at(n, c) = src.w_fast.at(perm[n], c);
            blk.w_slow.at(n, c) = src.w_slow.at(perm[n], c);
        }
        for (std::size_t c = 0; c < blk.w_res.rows; ++c) blk.w_res.at(c, n) = src.w_res.at(c, perm[n]);
        for (std::size_t j = 0; j < blk.w_skip.rows; ++j)
            blk.w_skip.at(j, n) = src.w_skip.at(j, perm[n]);
    }
    const ForwardTrace permuted_trace = forward(permuted, raster);
    for (std::size_t k = 0; k < base.readout_currents.size(); ++k)
        for (std::size_t t = 0; t < base.readout_currents[k].size(); ++t)
            REQUIRE(permuted_trace.readout_currents[k][t] ==
                    Catch::Approx(base.readout_currents[k][t]).margin(1e-12));
}

TEST_CASE("forward is deterministic", "[wavesense]") {
    const Network net = build_network(testsupport::toy_config(2, 6, 4), 9);
    const auto raster = testsupport::random_raster(2, 256, 33);
    const ForwardTrace a = forward(net, raster);
    const ForwardTrace b = forward(net, raster);
    REQUIRE(a.readout_currents == b.readout_currents);
    for (std::size_t i = 0; i < a.layer_spikes.size(); ++i)
        REQUIRE(a.layer_spikes[i].counts == b.layer_spikes[i].counts);
}

TEST_CASE("zeroed blocks behave like a zero-block (skip-only) network", "[wavesense]") {
    WaveSenseConfig cfg = testsupport::toy_config(2, 4, 4);
    Network zeroed = build_network(cfg, 13);
    for (auto& b : zeroed.blocks)
        for (auto* m : {&b.w_fast, &b.w_slow, &b.w_res, &b.w_skip})
            for (auto& w : m->w) w = 0.0;

    WaveSenseConfig none = cfg;
    none.n_blocks = 0;
    none.dilation_taus.clear();
    Network skip_only = build_network(none, 13);
    skip_only.w_out = zeroed.w_out;

    const auto raster = testsupport::random_raster(2, 96, 3);
    const ForwardTrace a = forward(zeroed, raster);
    const ForwardTrace b = forward(skip_only, raster);
    REQUIRE(a.readout_currents == b.readout_currents);
}

TEST_CASE("network JSON round trip is bit-exact", "[wavesense]") {
    Network net = build_network(WaveSenseConfig{}, 17);
    net.encoder_step_uv = 3.14159265358979;
    const auto j = network_to_json(net);
    const std::string dumped = j.dump();
    const Network back = network_from_json(nlohmann::json::parse(dumped));
    REQUIRE(back == net);
}
