// nof1: config-driven analysis of image-based N-of-1 trials.
//
//   nof1 run    --config cfg.json [--seed N]   train + embed + test, emit report
//   nof1 synth  --spec spec.json --out DIR     generate a synthetic trial dataset
//   nof1 report --in DIR                       re-render tables/plots from report.json
//
// Exit codes: 0 success, 1 config error, 2 data error, 3 numeric error.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "nof1/nof1.hpp"

namespace fs = std::filesystem;

namespace {

void print_pvalue_table(const nof1::Report& report) {
    if (report.participants.empty()) return;
    std::cout << "\np-values\n  " << "participant";
    for (const auto& t : report.participants.front().tests) std::cout << "  " << t.test_name;
    std::cout << '\n';
    for (const auto& p : report.participants) {
        std::cout << "  " << p.id;
        for (const auto& t : p.tests) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "  %.4f", t.p_value);
            std::cout << buf;
        }
        std::cout << '\n';
    }
}

int cmd_run(const std::string& config_path, bool seed_override, std::uint64_t seed) {
    nof1::PipelineConfig config = nof1::load_pipeline_config(config_path);
    if (seed_override) {
        config.seed = seed;
        config.seed_set = true;
    }
    const auto t0 = std::chrono::steady_clock::now();
    nof1::Report report = nof1::run_pipeline(config);
    nof1::emit_report(report, config.output_dir);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::cout << "wrote " << config.output_dir << "/report.json (config hash " << report.config_hash << ")\n";
    std::cout << "autoencoder parameters: " << report.ae_parameter_count << '\n';
    if (!report.loss_history.train.empty())
        std::cout << "train loss: first epoch " << report.loss_history.train.front() << ", last epoch "
                  << report.loss_history.train.back() << '\n';
    if (!report.explained_variance_ratio.empty())
        std::cout << "PC1 explained variance ratio: " << report.explained_variance_ratio.front() << '\n';
    for (const auto& w : report.warnings) std::cout << "warning: " << w << '\n';
    print_pvalue_table(report);
    std::cout << "\nwall time: " << secs << " s\n";
    return 0;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, bool seed_override, std::uint64_t seed) {
    std::ifstream f(spec_path);
    if (!f) throw nof1::ConfigError("cannot open spec file " + spec_path);
    nof1::json j;
    try {
        f >> j;
    } catch (const nof1::json::exception& e) {
        throw nof1::ConfigError("spec " + spec_path + " is not valid JSON: " + e.what());
    }

    int participants = j.value("participants", 5);
    nof1::TrialDesign design;
    if (j.contains("design")) {
        const auto& d = j["design"];
        design.n_days = d.value("n_days", design.n_days);
        design.measurements_per_day = d.value("measurements_per_day", design.measurements_per_day);
        design.block_length_days = d.value("block_length_days", design.block_length_days);
        design.first_block = d.value("first_block", std::string("A"))[0];
    }
    nof1::SynthSpec spec;
    if (j.contains("synth")) {
        const auto& sy = j["synth"];
        if (sy.contains("base_skin_tone"))
            for (int i = 0; i < 3; ++i) spec.base_skin_tone[static_cast<std::size_t>(i)] = sy["base_skin_tone"][i].get<double>();
        spec.lesion_count_off = sy.value("lesion_count_off", spec.lesion_count_off);
        spec.lesion_count_on = sy.value("lesion_count_on", spec.lesion_count_on);
        spec.lesion_radius_min_px = sy.value("lesion_radius_min_px", spec.lesion_radius_min_px);
        spec.lesion_radius_max_px = sy.value("lesion_radius_max_px", spec.lesion_radius_max_px);
        spec.noise_sd = sy.value("noise_sd", spec.noise_sd);
        spec.image_h = sy.value("image_h", spec.image_h);
        spec.image_w = sy.value("image_w", spec.image_w);
    }
    std::uint64_t base_seed = j.value("seed", 0ull);
    if (seed_override) base_seed = seed;

    std::vector<nof1::ImageSample> all;
    for (int p = 0; p < participants; ++p) {
        nof1::TrialDesign d = design;
        d.participant_id = "P" + std::to_string(p + 1);
        nof1::SynthSpec sp = spec;
        sp.seed = nof1::derive_seed(base_seed, 0x100u + static_cast<std::uint64_t>(p));
        auto part = nof1::synth_generate(d, sp);
        std::move(part.begin(), part.end(), std::back_inserter(all));
    }
    nof1::write_trial(out_dir, all);
    std::cout << "wrote " << all.size() << " images + metadata.csv to " << out_dir << '\n';
    return 0;
}

int cmd_report(const std::string& in_dir) {
    const fs::path path = fs::path(in_dir) / "report.json";
    std::ifstream f(path);
    if (!f) throw nof1::DataError("cannot open " + path.string());
    nof1::json j;
    try {
        f >> j;
    } catch (const nof1::json::exception& e) {
        throw nof1::DataError(path.string() + " is not valid JSON: " + std::string(e.what()));
    }
    nof1::Report report = nof1::report_from_json(j);
    nof1::emit_report(report, in_dir);
    std::cout << "re-rendered tables and plots in " << in_dir << " (config hash " << report.config_hash << ")\n";
    print_pvalue_table(report);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"label-free analysis pipeline for image-based N-of-1 trials"};
    app.require_subcommand(1);

    std::string config_path, spec_path, out_dir, in_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;

    CLI::App* run = app.add_subcommand("run", "run the full pipeline from a config file");
    run->add_option("--config", config_path, "pipeline config JSON")->required();
    CLI::Option* run_seed = run->add_option("--seed", seed, "override the config seed");

    CLI::App* synth = app.add_subcommand("synth", "generate a synthetic trial dataset");
    synth->add_option("--spec", spec_path, "synthetic trial spec JSON")->required();
    synth->add_option("--out", out_dir, "output directory")->required();
    CLI::Option* synth_seed = synth->add_option("--seed", seed, "override the spec seed");

    CLI::App* rep = app.add_subcommand("report", "re-render outputs from an existing report.json");
    rep->add_option("--in", in_dir, "directory containing report.json")->required();

    try {
        app.parse(argc, argv);
        seed_set = (run_seed->count() > 0) || (synth_seed->count() > 0);
        if (run->parsed()) return cmd_run(config_path, seed_set, seed);
        if (synth->parsed()) return cmd_synth(spec_path, out_dir, seed_set, seed);
        if (rep->parsed()) return cmd_report(in_dir);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const nof1::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const nof1::UsageError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 1;
    } catch (const nof1::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 2;
    } catch (const nof1::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
