#ifndef NOF1_PIPELINE_HPP
#define NOF1_PIPELINE_HPP

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "nof1/autoencoder.hpp"
#include "nof1/common.hpp"
#include "nof1/dataio.hpp"
#include "nof1/pca.hpp"
#include "nof1/stats.hpp"
#include "nof1/trial.hpp"

namespace nof1 {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

enum class DirectionPolicy { as_is, align_with_reference, two_sided };

inline DirectionPolicy direction_policy_from_string(const std::string& s) {
    if (s == "as_is") return DirectionPolicy::as_is;
    if (s == "align_with_reference") return DirectionPolicy::align_with_reference;
    if (s == "two_sided" || s == "two-sided") return DirectionPolicy::two_sided;
    throw ConfigError("unknown direction policy '" + s + "'");
}

inline const char* to_string(DirectionPolicy p) {
    switch (p) {
        case DirectionPolicy::as_is: return "as_is";
        case DirectionPolicy::align_with_reference: return "align_with_reference";
        case DirectionPolicy::two_sided: return "two_sided";
    }
    return "?";
}

/// One entry of the test menu.
struct TestSpec {
    std::string name;  // t | welch_t | lm_ar1 | scrt | mc_rt
    Alternative alternative = Alternative::less;
    AssignmentScheme scheme;       // scrt / mc_rt
    int mc_samples = 10000;        // mc_rt
    Pairing pairing = Pairing::chronological;  // t
    bool use_covariates = false;   // lm_ar1: temperature + lotion columns
};

struct SynthTrialConfig {
    int participants = 5;
    SynthSpec spec;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    bool seed_set = false;

    std::string data_kind = "synth";  // synth | path
    std::string data_path;
    SynthTrialConfig synth;

    TrialDesign design;
    AEConfig ae;

    double train_flip_prob = 0.5;
    double train_brightness = 1.1;
    double val_flip_prob = 0.5;

    bool pca_per_participant = false;

    std::vector<TestSpec> tests;

    DirectionPolicy direction_policy = DirectionPolicy::two_sided;
    std::string reference_csv;  // align_with_reference only

    std::string output_dir = "out";

    void validate() const {
        if (!seed_set) throw ConfigError("config: 'seed' is mandatory");
        if (tests.empty()) throw ConfigError("config: at least one test must be selected");
        if (data_kind != "synth" && data_kind != "path")
            throw ConfigError("config: data.kind must be 'synth' or 'path'");
        if (data_kind == "path" && data_path.empty())
            throw ConfigError("config: data.kind 'path' needs data.path");
        if (direction_policy == DirectionPolicy::align_with_reference && reference_csv.empty())
            throw ConfigError("config: align_with_reference needs direction.reference_csv");
        design.validate();
        ae.validate();
        for (const auto& t : tests) {
            static const std::set<std::string> known{"t", "welch_t", "lm_ar1", "scrt", "mc_rt"};
            if (!known.count(t.name)) throw ConfigError("config: unknown test '" + t.name + "'");
            if (t.name == "mc_rt" && t.mc_samples < 1) throw ConfigError("config: mc_rt needs M >= 1");
        }
    }
};

namespace detail {

inline const json* find(const json& j, const char* key) {
    auto it = j.find(key);
    return it == j.end() ? nullptr : &*it;
}

}  // namespace detail

inline PipelineConfig parse_pipeline_config(const json& j) {
    PipelineConfig c;
    if (const json* v = detail::find(j, "seed")) {
        c.seed = v->get<std::uint64_t>();
        c.seed_set = true;
    }
    if (const json* data = detail::find(j, "data")) {
        c.data_kind = data->value("kind", c.data_kind);
        c.data_path = data->value("path", c.data_path);
        if (const json* sy = detail::find(*data, "synth")) {
            c.synth.participants = sy->value("participants", c.synth.participants);
            SynthSpec& sp = c.synth.spec;
            if (const json* tone = detail::find(*sy, "base_skin_tone")) {
                if (tone->size() != 3) throw ConfigError("config: base_skin_tone must have 3 values");
                for (int i = 0; i < 3; ++i) sp.base_skin_tone[static_cast<std::size_t>(i)] = (*tone)[i].get<double>();
            }
            sp.lesion_count_off = sy->value("lesion_count_off", sp.lesion_count_off);
            sp.lesion_count_on = sy->value("lesion_count_on", sp.lesion_count_on);
            sp.lesion_radius_min_px = sy->value("lesion_radius_min_px", sp.lesion_radius_min_px);
            sp.lesion_radius_max_px = sy->value("lesion_radius_max_px", sp.lesion_radius_max_px);
            sp.noise_sd = sy->value("noise_sd", sp.noise_sd);
            sp.image_h = sy->value("image_h", sp.image_h);
            sp.image_w = sy->value("image_w", sp.image_w);
        }
    }
    if (const json* d = detail::find(j, "design")) {
        c.design.n_days = d->value("n_days", c.design.n_days);
        c.design.measurements_per_day = d->value("measurements_per_day", c.design.measurements_per_day);
        c.design.block_length_days = d->value("block_length_days", c.design.block_length_days);
        const std::string fb = d->value("first_block", std::string(1, c.design.first_block));
        if (fb.size() != 1) throw ConfigError("config: first_block must be 'A' or 'B'");
        c.design.first_block = fb[0];
    }
    if (const json* a = detail::find(j, "autoencoder")) {
        if (const json* hw = detail::find(*a, "input_hw")) {
            if (hw->size() != 2) throw ConfigError("config: input_hw must be [H, W]");
            c.ae.input_hw = {(*hw)[0].get<int>(), (*hw)[1].get<int>()};
        }
        c.ae.latent_dim = a->value("latent_dim", c.ae.latent_dim);
        c.ae.epochs = a->value("epochs", c.ae.epochs);
        c.ae.batch_size = a->value("batch_size", c.ae.batch_size);
        c.ae.learning_rate = a->value("learning_rate", c.ae.learning_rate);
        c.ae.init_gain = a->value("init_gain", c.ae.init_gain);
        if (const json* ch = detail::find(*a, "encoder_channels"))
            c.ae.encoder_channels = ch->get<std::vector<int>>();
        if (const json* st = detail::find(*a, "encoder_strides"))
            c.ae.encoder_strides = st->get<std::vector<int>>();
        if (const json* ch = detail::find(*a, "decoder_channels"))
            c.ae.decoder_channels = ch->get<std::vector<int>>();
    }
    if (const json* ag = detail::find(j, "augment")) {
        c.train_flip_prob = ag->value("train_flip_prob", c.train_flip_prob);
        c.train_brightness = ag->value("train_brightness", c.train_brightness);
        c.val_flip_prob = ag->value("val_flip_prob", c.val_flip_prob);
    }
    if (const json* p = detail::find(j, "pca")) {
        c.pca_per_participant = p->value("per_participant", c.pca_per_participant);
    }
    if (const json* tests = detail::find(j, "tests")) {
        for (const json& t : *tests) {
            TestSpec ts;
            ts.name = t.at("name").get<std::string>();
            ts.alternative = alternative_from_string(t.value("alternative", std::string("less")));
            ts.scheme.kind = scheme_kind_from_string(t.value("scheme", std::string("block_permutation")));
            ts.scheme.max_run_length = t.value("max_run_length", ts.scheme.max_run_length);
            ts.mc_samples = t.value("M", ts.mc_samples);
            if (t.value("pairing", std::string("chronological")) == "block_means")
                ts.pairing = Pairing::block_means;
            ts.use_covariates = t.value("use_covariates", ts.use_covariates);
            c.tests.push_back(std::move(ts));
        }
    }
    if (const json* d = detail::find(j, "direction")) {
        c.direction_policy = direction_policy_from_string(d->value("policy", std::string("two_sided")));
        c.reference_csv = d->value("reference_csv", c.reference_csv);
    }
    c.output_dir = j.value("output_dir", c.output_dir);
    c.validate();
    return c;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path);
    json j;
    try {
        f >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config " + path + " is not valid JSON: " + e.what());
    }
    return parse_pipeline_config(j);
}

/// Canonical JSON echo of the configuration; hashed into the report for
/// provenance and re-serialized verbatim on reruns.
inline json config_to_json(const PipelineConfig& c) {
    json j;
    j["seed"] = c.seed;
    j["data"]["kind"] = c.data_kind;
    if (!c.data_path.empty()) j["data"]["path"] = c.data_path;
    if (c.data_kind == "synth") {
        json sy;
        sy["participants"] = c.synth.participants;
        sy["base_skin_tone"] = c.synth.spec.base_skin_tone;
        sy["lesion_count_off"] = c.synth.spec.lesion_count_off;
        sy["lesion_count_on"] = c.synth.spec.lesion_count_on;
        sy["lesion_radius_min_px"] = c.synth.spec.lesion_radius_min_px;
        sy["lesion_radius_max_px"] = c.synth.spec.lesion_radius_max_px;
        sy["noise_sd"] = c.synth.spec.noise_sd;
        sy["image_h"] = c.synth.spec.image_h;
        sy["image_w"] = c.synth.spec.image_w;
        j["data"]["synth"] = sy;
    }
    j["design"] = {{"n_days", c.design.n_days},
                   {"measurements_per_day", c.design.measurements_per_day},
                   {"block_length_days", c.design.block_length_days},
                   {"first_block", std::string(1, c.design.first_block)}};
    j["autoencoder"] = {{"input_hw", {c.ae.input_hw.first, c.ae.input_hw.second}},
                        {"latent_dim", c.ae.latent_dim},
                        {"encoder_channels", c.ae.encoder_channels},
                        {"encoder_strides", c.ae.encoder_strides},
                        {"decoder_channels", c.ae.decoder_channels},
                        {"epochs", c.ae.epochs},
                        {"batch_size", c.ae.batch_size},
                        {"learning_rate", c.ae.learning_rate},
                        {"init_gain", c.ae.init_gain}};
    j["augment"] = {{"train_flip_prob", c.train_flip_prob},
                    {"train_brightness", c.train_brightness},
                    {"val_flip_prob", c.val_flip_prob}};
    j["pca"] = {{"per_participant", c.pca_per_participant}};
    json tests = json::array();
    for (const auto& t : c.tests) {
        json tj;
        tj["name"] = t.name;
        tj["alternative"] = to_string(t.alternative);
        if (t.name == "scrt" || t.name == "mc_rt") {
            const char* k = "block_permutation";
            switch (t.scheme.kind) {
                case AssignmentScheme::Kind::block_permutation: k = "block_permutation"; break;
                case AssignmentScheme::Kind::restricted_alternation: k = "restricted_alternation"; break;
                case AssignmentScheme::Kind::systematic_alternation: k = "systematic_alternation"; break;
                case AssignmentScheme::Kind::observation_permutation: k = "observation_permutation"; break;
            }
            tj["scheme"] = k;
            if (t.scheme.kind == AssignmentScheme::Kind::restricted_alternation)
                tj["max_run_length"] = t.scheme.max_run_length;
        }
        if (t.name == "mc_rt") tj["M"] = t.mc_samples;
        if (t.name == "t") tj["pairing"] = t.pairing == Pairing::block_means ? "block_means" : "chronological";
        if (t.name == "lm_ar1") tj["use_covariates"] = t.use_covariates;
        tests.push_back(tj);
    }
    j["tests"] = tests;
    j["direction"]["policy"] = to_string(c.direction_policy);
    if (!c.reference_csv.empty()) j["direction"]["reference_csv"] = c.reference_csv;
    j["output_dir"] = c.output_dir;
    return j;
}

inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

struct ParticipantReport {
    std::string id;
    std::vector<int> day;
    std::vector<int> slot;
    std::vector<double> timestamp;
    std::vector<bool> intervention;
    std::vector<double> pc_score;
    std::vector<double> reference_score;  // empty unless a reference was given
    bool direction_flipped = false;
    std::vector<TestResult> tests;
};

struct Report {
    std::string config_hash;
    json config;
    TrialDesign design;
    std::vector<ParticipantReport> participants;
    LossHistory loss_history;
    std::size_t ae_parameter_count = 0;
    std::vector<double> explained_variance_ratio;  // from the joint fit (or first per-participant fit)
    std::vector<std::string> warnings;
    std::string direction_policy;
};

inline json report_to_json(const Report& r) {
    json j;
    j["format"] = "nof1-report-v1";
    j["config_hash"] = r.config_hash;
    j["config"] = r.config;
    j["direction_policy"] = r.direction_policy;
    j["loss_history"] = {{"train", r.loss_history.train}, {"val", r.loss_history.val}};
    j["ae_parameter_count"] = r.ae_parameter_count;
    j["pca"] = {{"explained_variance_ratio", r.explained_variance_ratio}};
    j["warnings"] = r.warnings;
    json parts = json::array();
    for (const auto& p : r.participants) {
        json pj;
        pj["id"] = p.id;
        pj["day"] = p.day;
        pj["slot"] = p.slot;
        pj["timestamp"] = p.timestamp;
        pj["intervention"] = p.intervention;
        pj["pc_score"] = p.pc_score;
        if (!p.reference_score.empty()) pj["reference_score"] = p.reference_score;
        pj["direction_flipped"] = p.direction_flipped;
        json tests = json::array();
        for (const auto& t : p.tests) {
            json tj;
            tj["test"] = t.test_name;
            tj["statistic"] = t.statistic;
            tj["p_value"] = t.p_value;
            tj["alternative"] = t.alternative;
            tj["params"] = t.params;
            if (!t.notes.empty()) tj["notes"] = t.notes;
            tests.push_back(tj);
        }
        pj["tests"] = tests;
        parts.push_back(pj);
    }
    j["participants"] = parts;
    return j;
}

inline Report report_from_json(const json& j) {
    if (j.value("format", std::string()) != "nof1-report-v1")
        throw DataError("report_from_json: not a nof1-report-v1 document");
    Report r;
    r.config_hash = j.at("config_hash").get<std::string>();
    r.config = j.at("config");
    r.direction_policy = j.value("direction_policy", std::string("two_sided"));
    r.loss_history.train = j.at("loss_history").at("train").get<std::vector<double>>();
    r.loss_history.val = j.at("loss_history").at("val").get<std::vector<double>>();
    r.ae_parameter_count = j.value("ae_parameter_count", std::size_t{0});
    r.explained_variance_ratio = j.at("pca").at("explained_variance_ratio").get<std::vector<double>>();
    r.warnings = j.value("warnings", std::vector<std::string>{});
    if (j.contains("config") && j["config"].contains("design")) {
        const json& d = j["config"]["design"];
        r.design.n_days = d.value("n_days", 16);
        r.design.measurements_per_day = d.value("measurements_per_day", 3);
        r.design.block_length_days = d.value("block_length_days", 2);
        r.design.first_block = d.value("first_block", std::string("A"))[0];
    }
    for (const json& pj : j.at("participants")) {
        ParticipantReport p;
        p.id = pj.at("id").get<std::string>();
        p.day = pj.at("day").get<std::vector<int>>();
        p.slot = pj.at("slot").get<std::vector<int>>();
        p.timestamp = pj.at("timestamp").get<std::vector<double>>();
        p.intervention = pj.at("intervention").get<std::vector<bool>>();
        p.pc_score = pj.at("pc_score").get<std::vector<double>>();
        if (pj.contains("reference_score"))
            p.reference_score = pj.at("reference_score").get<std::vector<double>>();
        p.direction_flipped = pj.value("direction_flipped", false);
        for (const json& tj : pj.at("tests")) {
            TestResult t;
            t.test_name = tj.at("test").get<std::string>();
            t.statistic = tj.at("statistic").get<double>();
            t.p_value = tj.at("p_value").get<double>();
            t.alternative = tj.at("alternative").get<std::string>();
            if (tj.contains("params")) t.params = tj.at("params").get<std::map<std::string, double>>();
            t.notes = tj.value("notes", std::string());
            p.tests.push_back(std::move(t));
        }
        r.participants.push_back(std::move(p));
    }
    return r;
}

// ---------------------------------------------------------------------------
// Direction resolution
// ---------------------------------------------------------------------------

/// as_is keeps the PCA sign convention; align_with_reference flips the score
/// series when its correlation with the reference column is negative;
/// two_sided leaves values alone and forces two-sided tests downstream.
inline bool resolve_direction(std::vector<double>& scores, DirectionPolicy policy,
                              const std::vector<double>& reference) {
    if (policy != DirectionPolicy::align_with_reference) return false;
    if (reference.size() != scores.size())
        throw ConfigError("resolve_direction: reference column missing or length mismatch (" +
                          std::to_string(reference.size()) + " vs " + std::to_string(scores.size()) + ")");
    const std::size_t n = scores.size();
    double ms = 0, mr = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ms += scores[i];
        mr += reference[i];
    }
    ms /= n;
    mr /= n;
    double cov = 0;
    for (std::size_t i = 0; i < n; ++i) cov += (scores[i] - ms) * (reference[i] - mr);
    if (cov < 0) {
        for (double& v : scores) v = -v;
        return true;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

namespace detail {

struct ReferenceKey {
    std::string pid;
    int day;
    int slot;
    bool operator<(const ReferenceKey& o) const {
        return std::tie(pid, day, slot) < std::tie(o.pid, o.day, o.slot);
    }
};

/// Optional side table for direction alignment and side-by-side reporting:
/// CSV with header participant_id,day,slot,score.
inline std::map<ReferenceKey, double> read_reference_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("reference csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("reference csv: empty file " + path);
    while (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "participant_id,day,slot,score")
        throw DataError("reference csv: header must be participant_id,day,slot,score");
    std::map<ReferenceKey, double> out;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        if (f.size() != 4) throw DataError("reference csv row " + std::to_string(row) + ": expected 4 fields");
        try {
            out[{f[0], std::stoi(f[1]), std::stoi(f[2])}] = std::stod(f[3]);
        } catch (const std::exception&) {
            throw DataError("reference csv row " + std::to_string(row) + ": bad number");
        }
    }
    return out;
}

}  // namespace detail

/// Runs the full label-free analysis: load or synthesize the trial, train the
/// autoencoder on augmented copies, embed, reduce to PC1, and test each
/// participant's series. Deterministic: identical (config, seed) give a
/// byte-identical report.
inline Report run_pipeline(const PipelineConfig& config) {
    config.validate();
    Report report;
    report.config = config_to_json(config);
    report.config_hash = fnv1a_hex(report.config.dump());
    report.design = config.design;
    report.direction_policy = to_string(config.direction_policy);

    // stage 1: data
    std::vector<ImageSample> raw;
    if (config.data_kind == "path") {
        TrialData loaded = load_trial(config.data_path, config.design);
        raw = std::move(loaded.samples);
        report.warnings = std::move(loaded.warnings);
    } else {
        for (int p = 0; p < config.synth.participants; ++p) {
            TrialDesign d = config.design;
            d.participant_id = "P" + std::to_string(p + 1);
            SynthSpec sp = config.synth.spec;
            sp.seed = derive_seed(config.seed, 0x100u + static_cast<std::uint64_t>(p));
            auto part = synth_generate(d, sp);
            std::move(part.begin(), part.end(), std::back_inserter(raw));
        }
    }
    if (raw.empty()) throw DataError("pipeline: no samples in the data source");

    // stage 2: preprocessing + augmentation
    std::vector<ImageSample> base;
    base.reserve(raw.size());
    for (const auto& s : raw) base.push_back(preprocess(s, config.ae.input_hw));
    raw.clear();

    Rng train_rng(derive_seed(config.seed, 1));
    Rng val_rng(derive_seed(config.seed, 2));
    std::vector<ImageSample> train_set, val_set;
    train_set.reserve(base.size());
    val_set.reserve(base.size());
    for (const auto& s : base) {
        train_set.push_back(augment(s, config.train_flip_prob, config.train_brightness, train_rng));
        // validation: independently augmented copy, flips at 0.5, all else equal
        val_set.push_back(augment(s, config.val_flip_prob, config.train_brightness, val_rng));
    }

    // stage 3: autoencoder
    AEConfig ae = config.ae;
    ae.seed = derive_seed(config.seed, 3);
    AEModel model = train(build(ae), train_set, val_set, ae);
    report.loss_history = model.history();
    report.ae_parameter_count = model.total_parameters();
    train_set.clear();
    val_set.clear();

    // stage 4: embeddings of the unaugmented images
    EmbeddingMatrix emb = embed(model, base);

    // stage 5: PC1 scores
    std::vector<std::string> pids;
    for (const auto& s : base) pids.push_back(s.record.participant_id);
    std::vector<std::string> unique_pids = pids;
    std::sort(unique_pids.begin(), unique_pids.end());
    unique_pids.erase(std::unique(unique_pids.begin(), unique_pids.end()), unique_pids.end());

    std::vector<double> scores(base.size(), 0.0);
    if (config.pca_per_participant) {
        for (const auto& pid : unique_pids) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < base.size(); ++i)
                if (pids[i] == pid) rows.push_back(i);
            Eigen::MatrixXd X(rows.size(), emb.cols);
            for (std::size_t r = 0; r < rows.size(); ++r)
                for (std::size_t c = 0; c < emb.cols; ++c) X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = emb.at(rows[r], c);
            PCAModel pca = pca_fit(X);
            if (report.explained_variance_ratio.empty())
                report.explained_variance_ratio = pca.explained_variance_ratio;
            if (!pca.warning.empty()) report.warnings.push_back(pid + ": " + pca.warning);
            const auto part_scores = first_component_scores(pca, X);
            for (std::size_t r = 0; r < rows.size(); ++r) scores[rows[r]] = part_scores[r];
        }
    } else {
        PCAModel pca = pca_fit(emb);
        report.explained_variance_ratio = pca.explained_variance_ratio;
        if (!pca.warning.empty()) report.warnings.push_back(pca.warning);
        scores = first_component_scores(pca, emb);
    }

    // optional reference scores (direction alignment / side-by-side reporting)
    std::map<detail::ReferenceKey, double> reference;
    if (!config.reference_csv.empty()) reference = detail::read_reference_csv(config.reference_csv);

    // stage 6: per-participant statistics
    for (const auto& pid : unique_pids) {
        ParticipantReport part;
        part.id = pid;
        PhaseSeries series;
        series.block_length = config.design.observations_per_block();
        for (std::size_t i = 0; i < base.size(); ++i) {
            if (pids[i] != pid) continue;
            const ObservationRecord& rec = base[i].record;
            part.day.push_back(rec.day_index);
            part.slot.push_back(rec.slot_index);
            part.timestamp.push_back(rec.timestamp(config.design.measurements_per_day));
            part.intervention.push_back(rec.intervention);
            part.pc_score.push_back(scores[i]);
            series.values.push_back(scores[i]);
            series.intervention.push_back(rec.intervention);
            series.timestamps.push_back(rec.timestamp(config.design.measurements_per_day));
            series.block_index.push_back(config.design.block_of_day(rec.day_index));
        }
        if (config.direction_policy == DirectionPolicy::align_with_reference) {
            std::vector<double> ref;
            for (std::size_t k = 0; k < part.day.size(); ++k) {
                const detail::ReferenceKey key{pid, part.day[k], part.slot[k]};
                auto it = reference.find(key);
                if (it == reference.end())
                    throw ConfigError("resolve_direction: reference score missing for " + pid + " day " +
                                      std::to_string(part.day[k]) + " slot " + std::to_string(part.slot[k]));
                ref.push_back(it->second);
            }
            part.reference_score = ref;
            part.direction_flipped = resolve_direction(series.values, config.direction_policy, ref);
            if (part.direction_flipped)
                for (double& v : part.pc_score) v = -v;
        } else if (!reference.empty()) {
            for (std::size_t k = 0; k < part.day.size(); ++k) {
                auto it = reference.find({pid, part.day[k], part.slot[k]});
                part.reference_score.push_back(it == reference.end() ? std::nan("") : it->second);
            }
        }
        series.finalize();

        std::vector<std::vector<double>> covariates;
        auto covariates_for = [&]() {
            if (!covariates.empty()) return;
            std::vector<double> temp, lotion;
            for (std::size_t i = 0; i < base.size(); ++i) {
                if (pids[i] != pid) continue;
                temp.push_back(base[i].record.temperature);
                lotion.push_back(base[i].record.lotion ? 1.0 : 0.0);
            }
            covariates.push_back(std::move(temp));
            covariates.push_back(std::move(lotion));
        };

        for (const auto& ts : config.tests) {
            const Alternative alt = config.direction_policy == DirectionPolicy::two_sided
                                        ? Alternative::two_sided
                                        : ts.alternative;
            try {
                TestResult r;
                if (ts.name == "t") {
                    r = paired_t_test(series, alt, ts.pairing);
                } else if (ts.name == "welch_t") {
                    r = welch_t_test(series, alt);
                } else if (ts.name == "lm_ar1") {
                    Ar1Options opt;
                    opt.alternative = alt;
                    if (ts.use_covariates) {
                        covariates_for();
                        r = lm_ar1(series, covariates, opt);
                    } else {
                        r = lm_ar1(series, {}, opt);
                    }
                } else if (ts.name == "scrt") {
                    r = scrt_exact(series, ts.scheme, alt);
                } else {
                    // participant-keyed substream; fnv keeps it platform-stable
                    std::uint64_t pid_h = 1469598103934665603ULL;
                    for (unsigned char ch : pid) pid_h = (pid_h ^ ch) * 1099511628211ULL;
                    r = randomization_test_mc(series, ts.scheme, alt, ts.mc_samples,
                                              derive_seed(config.seed, 0x200u + pid_h));
                }
                part.tests.push_back(std::move(r));
            } catch (const std::exception& e) {
                throw std::runtime_error("stats stage, participant " + pid + ", test " + ts.name + ": " + e.what());
            }
        }
        report.participants.push_back(std::move(part));
    }
    return report;
}

// ---------------------------------------------------------------------------
// Emission: report.json, pvalues.csv, scores.csv, per-participant SVG
// ---------------------------------------------------------------------------

namespace detail {

inline std::string fmt(double v, const char* spec = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), spec, v);
    return buf;
}

}  // namespace detail

/// Time-series plot: shaded design blocks (blue = intervention, orange =
/// non-intervention) under the PC score polyline.
inline std::string render_timeseries_svg(const ParticipantReport& p, const TrialDesign& design) {
    const int width = 840, height = 300;
    const double ml = 60, mr = 20, mt = 40, mb = 40;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    double lo = p.pc_score.empty() ? -1 : p.pc_score[0];
    double hi = lo;
    for (double v : p.pc_score) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi - lo < 1e-9) {
        lo -= 1;
        hi += 1;
    }
    const double pad = 0.08 * (hi - lo);
    lo -= pad;
    hi += pad;
    const double t_max = static_cast<double>(design.n_days);

    auto X = [&](double t) { return ml + plot_w * t / t_max; };
    auto Y = [&](double v) { return mt + plot_h * (1.0 - (v - lo) / (hi - lo)); };

    std::string svg;
    svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + std::to_string(width) + "\" height=\"" +
           std::to_string(height) + "\" viewBox=\"0 0 " + std::to_string(width) + " " + std::to_string(height) + "\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + detail::fmt(ml) + "\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\">PC scores, participant " +
           p.id + "</text>\n";

    // per-observation intervention flags resolved to design blocks
    std::map<int, bool> block_flag;
    for (std::size_t i = 0; i < p.day.size(); ++i)
        block_flag[design.block_of_day(p.day[i])] = p.intervention[i];
    for (int b = 0; b < design.block_count(); ++b) {
        const double x0 = X(b * design.block_length_days);
        const double x1 = X((b + 1) * design.block_length_days);
        const bool treat = block_flag.count(b) ? block_flag[b] : design.intervention_on_day(b * design.block_length_days);
        svg += "<rect class=\"phase\" x=\"" + detail::fmt(x0) + "\" y=\"" + detail::fmt(mt) + "\" width=\"" +
               detail::fmt(x1 - x0) + "\" height=\"" + detail::fmt(plot_h) + "\" fill=\"" +
               (treat ? "#aecdea" : "#f6c998") + "\" opacity=\"0.55\"/>\n";
    }

    svg += "<polyline fill=\"none\" stroke=\"#1f3552\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < p.pc_score.size(); ++i) {
        if (i) svg += " ";
        svg += detail::fmt(X(p.timestamp[i])) + "," + detail::fmt(Y(p.pc_score[i]));
    }
    svg += "\"/>\n";
    for (std::size_t i = 0; i < p.pc_score.size(); ++i)
        svg += "<circle cx=\"" + detail::fmt(X(p.timestamp[i])) + "\" cy=\"" + detail::fmt(Y(p.pc_score[i])) +
               "\" r=\"2.2\" fill=\"#1f3552\"/>\n";

    // frame + y extremes + x label
    svg += "<rect x=\"" + detail::fmt(ml) + "\" y=\"" + detail::fmt(mt) + "\" width=\"" + detail::fmt(plot_w) +
           "\" height=\"" + detail::fmt(plot_h) + "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg += "<text x=\"8\" y=\"" + detail::fmt(Y(hi - pad)) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
           detail::fmt(hi - pad, "%.2f") + "</text>\n";
    svg += "<text x=\"8\" y=\"" + detail::fmt(Y(lo + pad)) + "\" font-family=\"sans-serif\" font-size=\"11\">" +
           detail::fmt(lo + pad, "%.2f") + "</text>\n";
    svg += "<text x=\"" + detail::fmt(ml + plot_w / 2 - 14) + "\" y=\"" + detail::fmt(height - 12) +
           "\" font-family=\"sans-serif\" font-size=\"12\">day</text>\n";
    svg += "<text x=\"" + detail::fmt(ml) + "\" y=\"" + detail::fmt(height - 12) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#7a5a2e\">orange = non-intervention</text>\n";
    svg += "<text x=\"" + detail::fmt(ml + plot_w - 180) + "\" y=\"" + detail::fmt(height - 12) +
           "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#2e4a7a\">blue = intervention</text>\n";
    svg += "</svg>\n";
    return svg;
}

/// Writes report.json plus the derived tables and plots.
inline void emit_report(const Report& report, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    {
        std::ofstream f(fs::path(dir) / "report.json", std::ios::binary);
        if (!f) throw DataError("emit_report: cannot write report.json in " + dir);
        f << report_to_json(report).dump(2) << '\n';
    }
    {
        std::ofstream f(fs::path(dir) / "pvalues.csv", std::ios::binary);
        f << "participant_id";
        if (!report.participants.empty())
            for (const auto& t : report.participants.front().tests) f << ',' << t.test_name;
        f << '\n';
        for (const auto& p : report.participants) {
            f << p.id;
            for (const auto& t : p.tests) f << ',' << detail::fmt(t.p_value, "%.6g");
            f << '\n';
        }
    }
    {
        std::ofstream f(fs::path(dir) / "scores.csv", std::ios::binary);
        f << "timestamp,participant,intervention,pc_score\n";
        for (const auto& p : report.participants)
            for (std::size_t i = 0; i < p.pc_score.size(); ++i)
                f << detail::fmt(p.timestamp[i], "%.17g") << ',' << p.id << ',' << (p.intervention[i] ? 1 : 0)
                  << ',' << detail::fmt(p.pc_score[i], "%.17g") << '\n';
    }
    for (const auto& p : report.participants) {
        std::ofstream f(fs::path(dir) / ("timeseries_" + p.id + ".svg"), std::ios::binary);
        f << render_timeseries_svg(p, report.design);
    }
}

}  // namespace nof1

#endif
