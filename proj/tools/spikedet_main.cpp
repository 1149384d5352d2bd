// spikedet: train a spiking seizure detector, lower it to the integer
// execution model, and run streaming detection. See README.md for the
// artifact formats each subcommand reads and writes.

#include <CLI11.hpp>
#include <iostream>

#include "spikedet/pipeline.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitConfig = 2;
constexpr int kExitArtifact = 3;
constexpr int kExitValidation = 4;

int error_line(const char* code, const std::string& message, int exit_code) {
    nlohmann::ordered_json j;
    j["error"] = code;
    j["message"] = message;
    std::cerr << j.dump() << "\n";
    return exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"spiking-network EEG seizure detection toolchain"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::int64_t seed_override = -1;
    bool quantized = false;
    double decision_period = 0.0;

    app.add_option("--config", config_path, "pipeline config JSON (defaults used when omitted)");
    app.add_option("--seed", seed_override, "override the config seed");
    app.add_option("--out", out_dir, "run directory (default: runs/<config hash>)");
    app.add_flag("--quantized", quantized, "use the fixed-point engine for eval/stream/latency");
    app.add_option("--decision-period", decision_period, "decision period override, seconds");

    const std::vector<std::string> commands = {"synth",    "preprocess", "encode", "train",
                                               "quantize", "validate",   "eval",   "stream",
                                               "latency",  "report"};
    for (const auto& name : commands) app.add_subcommand(name);

    CLI11_PARSE(app, argc, argv);
    const std::string command = app.get_subcommands().front()->get_name();

    try {
        spikedet::PipelineConfig cfg;
        if (!config_path.empty()) {
            std::ifstream f(config_path);
            if (!f) throw spikedet::ConfigError("cannot open config: " + config_path);
            nlohmann::json j;
            try {
                f >> j;
            } catch (const nlohmann::json::exception& e) {
                throw spikedet::ConfigError(std::string("config is not valid JSON: ") + e.what());
            }
            cfg = spikedet::pipeline_config_from_json(j);
        }
        if (seed_override >= 0) {
            cfg.seed = static_cast<std::uint64_t>(seed_override);
            cfg.train.seed = cfg.seed;
        }
        if (quantized) cfg.use_quantized = true;
        if (decision_period > 0) cfg.decision_period_s = decision_period;

        const spikedet::RunPaths paths = spikedet::make_run_dir(cfg, out_dir);

        if (command == "synth") {
            spikedet::cmd_synth(cfg, paths);
        } else if (command == "preprocess") {
            spikedet::cmd_preprocess(cfg, paths);
        } else if (command == "encode") {
            spikedet::cmd_encode(cfg, paths);
        } else if (command == "train") {
            spikedet::cmd_train(cfg, paths);
        } else if (command == "quantize") {
            if (!spikedet::cmd_quantize(cfg, paths).empty())
                return error_line("ValidationFailed", "network violates deployment bounds",
                                  kExitValidation);
        } else if (command == "validate") {
            if (!spikedet::cmd_validate(cfg, paths).empty())
                return error_line("ValidationFailed", "configuration violates deployment bounds",
                                  kExitValidation);
        } else if (command == "eval") {
            spikedet::cmd_eval(cfg, paths);
        } else if (command == "stream") {
            spikedet::cmd_stream(cfg, paths);
        } else if (command == "latency") {
            spikedet::cmd_latency(cfg, paths);
        } else if (command == "report") {
            spikedet::cmd_report(cfg, paths);
        }
        return kExitOk;
    } catch (const spikedet::ConfigError& e) {
        return error_line("ConfigError", e.what(), kExitConfig);
    } catch (const spikedet::ArtifactMissing& e) {
        return error_line("ArtifactMissing", e.what(), kExitArtifact);
    } catch (const std::exception& e) {
        return error_line("Error", e.what(), kExitError);
    }
}
