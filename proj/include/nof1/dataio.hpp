#ifndef NOF1_DATAIO_HPP
#define NOF1_DATAIO_HPP

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nof1/common.hpp"
#include "nof1/image.hpp"
#include "nof1/rng.hpp"
#include "nof1/tensor.hpp"
#include "nof1/trial.hpp"

namespace nof1 {

/// One metadata row: where and when an image was taken and under which
/// condition.
struct ObservationRecord {
    std::string participant_id;
    int day_index = 0;   // 0-based
    int slot_index = 0;  // 0-based within day
    bool intervention = false;
    double temperature = 0.0;  // degrees C at capture time
    bool lotion = false;       // lotion or make-up applied
    std::string image_ref;     // path relative to the metadata table

    double timestamp(int measurements_per_day) const {
        return static_cast<double>(day_index) +
               static_cast<double>(slot_index) / static_cast<double>(measurements_per_day);
    }
};

struct ImageSample {
    Tensor pixels;  // [3,H,W] in [0,1]
    ObservationRecord record;
};

/// Parameters of the synthetic acne-like trial generator. Identical seeds
/// reproduce identical datasets bitwise.
struct SynthSpec {
    std::array<double, 3> base_skin_tone{0.80, 0.62, 0.52};
    double lesion_count_off = 12.0;  // Poisson mean without treatment
    double lesion_count_on = 4.0;    // Poisson mean under treatment
    double lesion_radius_min_px = 2.0;
    double lesion_radius_max_px = 4.0;
    double noise_sd = 0.02;
    std::uint64_t seed = 0;
    int image_h = 64;
    int image_w = 64;

    void validate() const {
        if (lesion_count_off < 0 || lesion_count_on < 0)
            throw ConfigError("SynthSpec: lesion means must be >= 0");
        if (lesion_radius_min_px <= 0 || lesion_radius_max_px < lesion_radius_min_px)
            throw ConfigError("SynthSpec: lesion radius range must be positive and ordered");
        if (noise_sd < 0) throw ConfigError("SynthSpec: noise_sd must be >= 0");
        if (image_h < 1 || image_w < 1) throw ConfigError("SynthSpec: image size must be positive");
    }
};

inline constexpr const char* kMetadataHeader =
    "participant_id,day,slot,intervention,temperature,lotion,filename";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) {
        while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
        std::size_t b = 0;
        while (b < field.size() && field[b] == ' ') ++b;
        out.push_back(field.substr(b));
    }
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

inline bool parse_bool01(const std::string& s, const std::string& what, int row) {
    if (s == "1") return true;
    if (s == "0") return false;
    throw DataError("metadata row " + std::to_string(row) + ": " + what + " must be 0 or 1, got '" + s + "'");
}

}  // namespace detail

/// Reads the trial metadata table. Header must match kMetadataHeader.
inline std::vector<ObservationRecord> read_metadata_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("read_metadata_csv: cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("read_metadata_csv: " + path + " is empty (missing header)");
    while (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetadataHeader)
        throw DataError("read_metadata_csv: unexpected header '" + line + "', want '" + kMetadataHeader + "'");

    std::vector<ObservationRecord> records;
    int row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv_line(line);
        if (f.size() != 7)
            throw DataError("metadata row " + std::to_string(row) + ": expected 7 fields, got " +
                            std::to_string(f.size()));
        ObservationRecord r;
        r.participant_id = f[0];
        try {
            r.day_index = std::stoi(f[1]);
            r.slot_index = std::stoi(f[2]);
            r.temperature = std::stod(f[4]);
        } catch (const std::exception&) {
            throw DataError("metadata row " + std::to_string(row) + ": non-numeric day/slot/temperature");
        }
        r.intervention = detail::parse_bool01(f[3], "intervention", row);
        r.lotion = detail::parse_bool01(f[5], "lotion", row);
        r.image_ref = f[6];
        if (r.day_index < 0 || r.slot_index < 0)
            throw DataError("metadata row " + std::to_string(row) + ": negative day or slot");
        records.push_back(std::move(r));
    }
    return records;
}

inline void write_metadata_csv(const std::string& path, const std::vector<ObservationRecord>& records) {
    std::ofstream out(path);
    if (!out) throw DataError("write_metadata_csv: cannot open " + path + " for writing");
    out << kMetadataHeader << '\n';
    for (const auto& r : records) {
        std::ostringstream temp;
        temp.precision(17);
        temp << r.temperature;
        out << r.participant_id << ',' << r.day_index << ',' << r.slot_index << ','
            << (r.intervention ? 1 : 0) << ',' << temp.str() << ',' << (r.lotion ? 1 : 0) << ','
            << r.image_ref << '\n';
    }
    if (!out) throw DataError("write_metadata_csv: write failed for " + path);
}

struct TrialData {
    std::vector<ImageSample> samples;          // chronological (participant, day, slot)
    std::vector<std::string> warnings;
};

/// Loads images + metadata from a trial directory. Rows are sorted
/// chronologically per participant; duplicates and intra-block intervention
/// flips are errors, a different-but-consistent start label only warns.
inline TrialData load_trial(const std::string& root_path, const TrialDesign& design) {
    design.validate();
    namespace fs = std::filesystem;
    const fs::path root(root_path);
    TrialData out;

    auto records = read_metadata_csv((root / "metadata.csv").string());
    if (!design.participant_id.empty()) {
        std::erase_if(records, [&](const ObservationRecord& r) { return r.participant_id != design.participant_id; });
    }
    std::stable_sort(records.begin(), records.end(), [](const ObservationRecord& a, const ObservationRecord& b) {
        return std::tie(a.participant_id, a.day_index, a.slot_index) <
               std::tie(b.participant_id, b.day_index, b.slot_index);
    });

    std::set<std::tuple<std::string, int, int>> seen;
    for (const auto& r : records) {
        if (!seen.insert({r.participant_id, r.day_index, r.slot_index}).second)
            throw DataError("load_trial: duplicate observation (participant=" + r.participant_id +
                            ", day=" + std::to_string(r.day_index) + ", slot=" + std::to_string(r.slot_index) + ")");
        if (r.day_index >= design.n_days)
            throw DataError("load_trial: participant " + r.participant_id + " day " +
                            std::to_string(r.day_index) + " outside the " + std::to_string(design.n_days) +
                            "-day design");
        if (r.slot_index >= design.measurements_per_day)
            throw DataError("load_trial: participant " + r.participant_id + " slot " +
                            std::to_string(r.slot_index) + " outside " +
                            std::to_string(design.measurements_per_day) + " measurements/day");
    }

    // intervention must be constant within each design block; a participant
    // whose alternation starts on the other label is tolerated with a warning
    std::map<std::string, std::map<int, bool>> block_flag;
    std::vector<std::string> offending;
    for (const auto& r : records) {
        const int blk = design.block_of_day(r.day_index);
        auto& flags = block_flag[r.participant_id];
        auto it = flags.find(blk);
        if (it == flags.end()) {
            flags[blk] = r.intervention;
        } else if (it->second != r.intervention) {
            offending.push_back("participant=" + r.participant_id + " day=" + std::to_string(r.day_index) +
                                " slot=" + std::to_string(r.slot_index));
        }
    }
    if (!offending.empty()) {
        std::string msg = "load_trial: intervention flag changes inside a design block:";
        for (const auto& s : offending) msg += " [" + s + "]";
        throw DataError(msg);
    }
    for (const auto& [pid, flags] : block_flag) {
        bool alternates = true;
        std::optional<bool> prev;
        int prev_blk = -1;
        for (const auto& [blk, flag] : flags) {
            if (prev.has_value() && (blk - prev_blk) % 2 == 1 && flag == *prev) alternates = false;
            if (prev.has_value() && (blk - prev_blk) % 2 == 0 && flag != *prev) alternates = false;
            prev = flag;
            prev_blk = blk;
        }
        if (!alternates) {
            out.warnings.push_back("participant " + pid + ": intervention flags do not alternate per design");
        } else if (!flags.empty()) {
            const auto& [blk0, flag0] = *flags.begin();
            const bool expected = design.intervention_on_day(blk0 * design.block_length_days);
            if (flag0 != expected)
                out.warnings.push_back("participant " + pid + ": alternation starts with " +
                                       (flag0 ? "intervention" : "non-intervention") +
                                       ", design says " + (expected ? "intervention" : "non-intervention"));
        }
    }

    out.samples.reserve(records.size());
    for (const auto& r : records) {
        const fs::path img = root / r.image_ref;
        if (!fs::exists(img))
            throw DataError("load_trial: missing image file '" + r.image_ref + "' (participant=" +
                            r.participant_id + ", day=" + std::to_string(r.day_index) +
                            ", slot=" + std::to_string(r.slot_index) + ")");
        out.samples.push_back({decode_image(img.string()), r});
    }
    return out;
}

/// Bilinear resize to the model input size; values stay in [0,1].
inline ImageSample preprocess(const ImageSample& sample, std::pair<int, int> target_hw) {
    ImageSample out = sample;
    out.pixels = bilinear_resize(sample.pixels, static_cast<std::size_t>(target_hw.first),
                                 static_cast<std::size_t>(target_hw.second));
    return out;
}

/// Random horizontal flip followed by multiplicative brightness, clamped to
/// [0,1]. One uniform draw is consumed per call regardless of flip_prob so
/// the stream stays aligned across configurations.
inline ImageSample augment(const ImageSample& sample, double flip_prob, double brightness_factor, Rng& rng) {
    if (brightness_factor <= 0) throw UsageError("augment: brightness_factor must be positive");
    if (flip_prob < 0 || flip_prob > 1) throw UsageError("augment: flip_prob must be a probability");
    const Shape& s = sample.pixels.shape();
    const std::size_t C = s[0], H = s[1], W = s[2];
    ImageSample out = sample;
    out.pixels = sample.pixels.clone();
    double* d = out.pixels.data().data();
    const bool flip = rng.uniform() < flip_prob;
    if (flip) {
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t y = 0; y < H; ++y) {
                double* row = d + c * H * W + y * W;
                std::reverse(row, row + W);
            }
    }
    if (brightness_factor != 1.0) {
        for (std::size_t i = 0; i < out.pixels.size(); ++i) d[i] = std::clamp(d[i] * brightness_factor, 0.0, 1.0);
    }
    return out;
}

/// Generates one participant's synthetic trial: uniform skin background,
/// Poisson-many red disks (mean picked by the slot's treatment flag),
/// Gaussian pixel noise. The pixel-count oracle in the tests recovers the
/// injected effect from these images without the learned pipeline.
inline std::vector<ImageSample> synth_generate(const TrialDesign& design, const SynthSpec& spec) {
    design.validate();
    spec.validate();
    Rng rng(spec.seed);
    const std::size_t H = static_cast<std::size_t>(spec.image_h);
    const std::size_t W = static_cast<std::size_t>(spec.image_w);
    const std::array<double, 3> lesion_color{0.62, 0.20, 0.20};

    std::vector<ImageSample> out;
    out.reserve(static_cast<std::size_t>(design.n_days) * design.measurements_per_day);
    for (int day = 0; day < design.n_days; ++day) {
        for (int slot = 0; slot < design.measurements_per_day; ++slot) {
            const bool treat = design.intervention_on_day(day);
            Tensor img = Tensor::zeros({3, H, W});
            double* d = img.data().data();
            for (std::size_t c = 0; c < 3; ++c)
                std::fill(d + c * H * W, d + (c + 1) * H * W, spec.base_skin_tone[c]);

            const int lesions = rng.poisson(treat ? spec.lesion_count_on : spec.lesion_count_off);
            for (int k = 0; k < lesions; ++k) {
                const double cx = rng.uniform(0.0, static_cast<double>(W));
                const double cy = rng.uniform(0.0, static_cast<double>(H));
                const double rad = rng.uniform(spec.lesion_radius_min_px, spec.lesion_radius_max_px);
                const long y0 = std::max(0L, static_cast<long>(cy - rad) - 1);
                const long y1 = std::min(static_cast<long>(H) - 1, static_cast<long>(cy + rad) + 1);
                const long x0 = std::max(0L, static_cast<long>(cx - rad) - 1);
                const long x1 = std::min(static_cast<long>(W) - 1, static_cast<long>(cx + rad) + 1);
                for (long y = y0; y <= y1; ++y) {
                    for (long x = x0; x <= x1; ++x) {
                        const double dx = (static_cast<double>(x) + 0.5) - cx;
                        const double dy = (static_cast<double>(y) + 0.5) - cy;
                        if (dx * dx + dy * dy > rad * rad) continue;
                        for (std::size_t c = 0; c < 3; ++c) d[c * H * W + y * W + x] = lesion_color[c];
                    }
                }
            }
            if (spec.noise_sd > 0) {
                for (std::size_t i = 0; i < img.size(); ++i)
                    d[i] = std::clamp(d[i] + rng.normal(0.0, spec.noise_sd), 0.0, 1.0);
            }

            ObservationRecord r;
            r.participant_id = design.participant_id.empty() ? "P1" : design.participant_id;
            r.day_index = day;
            r.slot_index = slot;
            r.intervention = treat;
            r.temperature = 20.0 + 2.0 * std::sin(0.3 * day);  // mild covariate drift
            r.lotion = false;
            std::ostringstream name;
            name << r.participant_id << "_d" << day << "_s" << slot << ".png";
            r.image_ref = name.str();
            out.push_back({std::move(img), std::move(r)});
        }
    }
    return out;
}

/// Writes samples as PNG files plus metadata.csv, the same layout load_trial
/// reads back.
inline void write_trial(const std::string& dir, const std::vector<ImageSample>& samples) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::vector<ObservationRecord> records;
    records.reserve(samples.size());
    for (const auto& s : samples) {
        write_png((fs::path(dir) / s.record.image_ref).string(), s.pixels);
        records.push_back(s.record);
    }
    write_metadata_csv((fs::path(dir) / "metadata.csv").string(), records);
}

/// Counts pixels whose red channel dominates green and blue by more than
/// `margin`. Independent of the learned pipeline; used as the ground-truth
/// check that a synthetic effect actually exists in the pixels.
inline std::size_t count_red_dominant_pixels(const Tensor& image, double margin = 0.28) {
    const Shape& s = image.shape();
    if (s.size() != 3 || s[0] != 3) throw UsageError("count_red_dominant_pixels: image must be [3,H,W]");
    const std::size_t hw = s[1] * s[2];
    const double* d = image.data().data();
    std::size_t count = 0;
    for (std::size_t i = 0; i < hw; ++i) {
        const double r = d[i], g = d[hw + i], b = d[2 * hw + i];
        if (r - std::max(g, b) > margin) ++count;
    }
    return count;
}

}  // namespace nof1

#endif
