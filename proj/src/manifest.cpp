#include "avbr/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "avbr/errors.hpp"
#include "avbr/rng.hpp"
#include "json.hpp"

namespace avbr {

using nlohmann::ordered_json;

std::string_view to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "train";
}

std::optional<Split> parse_split(std::string_view s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    return std::nullopt;
}

const ClipRecord* DatasetManifest::find(std::string_view clip_id) const {
    for (const auto& c : clips) {
        if (c.clip_id == clip_id) return &c;
    }
    return nullptr;
}

std::vector<const ClipRecord*> DatasetManifest::split_clips(Split s) const {
    std::vector<const ClipRecord*> out;
    for (const auto& c : clips) {
        if (c.split == s) out.push_back(&c);
    }
    return out;
}

namespace {

constexpr double kMinClipSeconds = 1.0;
constexpr double kDurationEps = 1e-9;

void validate_record(const ClipRecord& c) {
    if (c.clip_id.empty()) throw ValidationError("clip with empty clip_id");
    if (c.start_s < 0.0) {
        throw ValidationError("clip " + c.clip_id + ": start_s must be >= 0");
    }
    if (c.end_s <= c.start_s) {
        throw ValidationError("clip " + c.clip_id + ": end_s must be > start_s");
    }
    if (c.duration() < kMinClipSeconds - kDurationEps) {
        throw ValidationError("clip " + c.clip_id + ": duration below 1.0 s minimum");
    }
    if (c.labels.empty()) {
        throw ValidationError("clip " + c.clip_id + ": label set must be non-empty");
    }
    if (c.labels.contains(kBackgroundId) && c.labels.count() != 1) {
        throw ValidationError("clip " + c.clip_id +
                              ": Background excludes all other labels");
    }
}

}  // namespace

void validate_manifest(const DatasetManifest& m) {
    std::set<std::string_view> seen;
    for (const auto& c : m.clips) {
        validate_record(c);
        if (!seen.insert(c.clip_id).second) {
            throw ValidationError("duplicate clip_id " + c.clip_id);
        }
    }
}

namespace {

ClipRecord record_from_json(const nlohmann::json& obj, int line_no) {
    static const std::set<std::string> kKeys = {"clip_id", "video_id", "start_s",
                                                "end_s",   "labels",   "split"};
    std::set<std::string> got;
    for (auto it = obj.begin(); it != obj.end(); ++it) got.insert(it.key());
    if (got != kKeys) {
        throw ParseError("line " + std::to_string(line_no) +
                         ": record keys must be exactly "
                         "{clip_id, video_id, start_s, end_s, labels, split}");
    }
    ClipRecord c;
    try {
        c.clip_id = obj.at("clip_id").get<std::string>();
        c.video_id = obj.at("video_id").get<std::string>();
        c.start_s = obj.at("start_s").get<double>();
        c.end_s = obj.at("end_s").get<double>();
        const auto& labels = obj.at("labels");
        if (!labels.is_array()) {
            throw ParseError("line " + std::to_string(line_no) + ": labels must be an array");
        }
        for (const auto& l : labels) {
            const auto name = l.get<std::string>();
            const BehaviorCategory* cat = find_category(name);
            if (cat == nullptr) {
                throw ValidationError("clip " + c.clip_id + ": unknown label \"" + name + "\"");
            }
            c.labels.add(cat->id);
        }
        const auto split_str = obj.at("split").get<std::string>();
        const auto split = parse_split(split_str);
        if (!split) {
            throw ValidationError("clip " + c.clip_id + ": unknown split \"" + split_str + "\"");
        }
        c.split = *split;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    return c;
}

}  // namespace

DatasetManifest parse_manifest(const std::string& text) {
    DatasetManifest m;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
        }
        if (!obj.is_object()) {
            throw ParseError("line " + std::to_string(line_no) + ": expected an object");
        }
        m.clips.push_back(record_from_json(obj, line_no));
    }
    validate_manifest(m);
    return m;
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open manifest " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_manifest(ss.str());
}

std::string to_jsonl(const DatasetManifest& m) {
    std::string out;
    for (const auto& c : m.clips) {
        ordered_json obj;
        obj["clip_id"] = c.clip_id;
        obj["video_id"] = c.video_id;
        obj["start_s"] = c.start_s;
        obj["end_s"] = c.end_s;
        obj["labels"] = c.labels.names();
        obj["split"] = std::string(to_string(c.split));
        out += obj.dump();
        out += '\n';
    }
    return out;
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write manifest " + path);
    out << to_jsonl(m);
}

// ---- statistics -------------------------------------------------------------

StatisticsExpectations reference_expectations() {
    StatisticsExpectations e;
    e.category_counts = {161, 126, 108, 129, 110, 166, 42, 113, 296, 177};
    e.split_sizes = {553, 193, 182};
    e.total_clips = 928;
    e.label_sum = 1428;
    e.mean_labels = 1.54;
    e.mean_duration = 25.88;
    e.median_duration = 10.00;
    return e;
}

namespace {

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string fmt2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

template <typename T>
std::string join_counts(const T& arr) {
    std::string out;
    for (auto v : arr) {
        if (!out.empty()) out += ",";
        out += std::to_string(v);
    }
    return out;
}

}  // namespace

StatisticsReport validate_statistics(const DatasetManifest& m,
                                     const StatisticsExpectations& expect) {
    StatisticsReport r;
    r.total_clips = static_cast<int>(m.clips.size());
    std::vector<double> durations;
    durations.reserve(m.clips.size());
    for (const auto& c : m.clips) {
        for (int id : c.labels.ids()) ++r.category_counts[id];
        r.label_sum += c.labels.count();
        ++r.split_sizes[static_cast<int>(c.split)];
        durations.push_back(c.duration());
    }
    if (!durations.empty()) {
        r.mean_labels = static_cast<double>(r.label_sum) / r.total_clips;
        r.mean_duration =
            std::accumulate(durations.begin(), durations.end(), 0.0) / durations.size();
        std::sort(durations.begin(), durations.end());
        const size_t n = durations.size();
        r.median_duration = (n % 2 == 1) ? durations[n / 2]
                                         : 0.5 * (durations[n / 2 - 1] + durations[n / 2]);
        r.min_duration = durations.front();
        r.max_duration = durations.back();
    }

    auto check = [&](const std::string& name, const std::string& expected,
                     const std::string& actual) {
        r.checks.push_back({name, expected, actual, expected == actual});
    };
    if (expect.category_counts) {
        check("category_counts", join_counts(*expect.category_counts),
              join_counts(r.category_counts));
    }
    if (expect.split_sizes) {
        check("split_sizes", join_counts(*expect.split_sizes), join_counts(r.split_sizes));
    }
    if (expect.total_clips) {
        check("total_clips", std::to_string(*expect.total_clips),
              std::to_string(r.total_clips));
    }
    if (expect.label_sum) {
        check("label_sum", std::to_string(*expect.label_sum), std::to_string(r.label_sum));
    }
    if (expect.mean_labels) {
        check("mean_labels", fmt2(*expect.mean_labels), fmt2(round2(r.mean_labels)));
    }
    if (expect.mean_duration) {
        check("mean_duration_s", fmt2(*expect.mean_duration), fmt2(round2(r.mean_duration)));
    }
    if (expect.median_duration) {
        check("median_duration_s", fmt2(*expect.median_duration),
              fmt2(round2(r.median_duration)));
    }
    r.all_pass = !r.checks.empty() &&
                 std::all_of(r.checks.begin(), r.checks.end(),
                             [](const StatisticsCheck& c) { return c.pass; });
    return r;
}

std::string StatisticsReport::to_json() const {
    ordered_json obj;
    obj["total_clips"] = total_clips;
    obj["category_counts"] = category_counts;
    obj["split_sizes"] = {{"train", split_sizes[0]}, {"val", split_sizes[1]},
                          {"test", split_sizes[2]}};
    obj["label_sum"] = label_sum;
    obj["mean_labels"] = mean_labels;
    obj["mean_duration_s"] = mean_duration;
    obj["median_duration_s"] = median_duration;
    obj["min_duration_s"] = min_duration;
    obj["max_duration_s"] = max_duration;
    ordered_json checks_json = ordered_json::array();
    for (const auto& c : checks) {
        checks_json.push_back({{"name", c.name},
                               {"expected", c.expected},
                               {"actual", c.actual},
                               {"pass", c.pass}});
    }
    obj["checks"] = checks_json;
    obj["all_pass"] = all_pass;
    return obj.dump(2) + "\n";
}

std::string StatisticsReport::to_text() const {
    std::ostringstream out;
    out << "clips: " << total_clips << "  labels: " << label_sum << "  mean labels/clip: "
        << fmt2(mean_labels) << "\n";
    out << "splits: train=" << split_sizes[0] << " val=" << split_sizes[1]
        << " test=" << split_sizes[2] << "\n";
    out << "duration: mean=" << fmt2(mean_duration) << "s median=" << fmt2(median_duration)
        << "s min=" << fmt2(min_duration) << "s max=" << fmt2(max_duration) << "s\n";
    out << "per-category counts:\n";
    for (int id = 0; id < kNumCategories; ++id) {
        out << "  [" << id << "] " << taxonomy()[id].name << ": " << category_counts[id]
            << "\n";
    }
    for (const auto& c : checks) {
        out << (c.pass ? "PASS" : "FAIL") << " " << c.name << " expected=" << c.expected
            << " actual=" << c.actual << "\n";
    }
    return out.str();
}

// ---- segment label propagation ----------------------------------------------

LabelMask SegmentLabelTable::at(const std::string& clip_id, int segment_index) const {
    auto it = segments.find(clip_id);
    if (it == segments.end() || segment_index < 1 ||
        segment_index > static_cast<int>(it->second.size())) {
        throw Error("segment label lookup failed for clip " + clip_id + " segment " +
                    std::to_string(segment_index));
    }
    return it->second[segment_index - 1];
}

SegmentLabelTable propagate_segment_labels(const DatasetManifest& m,
                                           const std::map<std::string, int>& segmentation) {
    SegmentLabelTable table;
    for (const auto& c : m.clips) {
        auto it = segmentation.find(c.clip_id);
        if (it == segmentation.end()) {
            throw ValidationError("segmentation missing clip " + c.clip_id);
        }
        if (it->second < 1) {
            throw ValidationError("segmentation for clip " + c.clip_id +
                                  " must have count >= 1");
        }
        table.segments[c.clip_id].assign(static_cast<size_t>(it->second), c.labels);
    }
    return table;
}

// ---- synthesis ----------------------------------------------------------------

SynthesisSpec reference_synthesis_spec() {
    SynthesisSpec s;
    s.category_counts = {161, 126, 108, 129, 110, 166, 42, 113, 296, 177};
    s.total_clips = 928;
    s.split_fractions = {553.0 / 928.0, 193.0 / 928.0, 182.0 / 928.0};
    s.durations.kind = DurationModel::Kind::stat_targets;
    return s;
}

namespace {

// Largest-remainder apportionment of n into parts proportional to fractions.
std::array<int, 3> apportion_splits(int n, const std::array<double, 3>& fractions) {
    std::array<int, 3> out{};
    std::array<double, 3> rema{};
    int assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double exact = fractions[i] * n;
        out[i] = static_cast<int>(std::floor(exact));
        rema[i] = exact - out[i];
        assigned += out[i];
    }
    std::array<int, 3> order = {0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (rema[a] != rema[b]) return rema[a] > rema[b];
        return a < b;
    });
    for (int k = 0; assigned < n; ++k) {
        ++out[order[static_cast<size_t>(k) % 3]];
        ++assigned;
    }
    return out;
}

// Durations hitting the requested mean/median/min/max to 2 decimals:
// one clip at min, enough clips at the median to pin it, the rest lifted
// uniformly above the median, one clip at max.
std::vector<double> stat_target_durations(int n, const DurationModel& d) {
    std::vector<double> out;
    if (n <= 0) return out;
    if (n == 1) return {d.median_s};
    if (n == 2) return {d.median_s, d.median_s};
    if (n == 3) return {d.min_s, d.median_s, 3.0 * d.mean_s - d.min_s - d.median_s};
    const int at_median = std::min(n / 2 + 1, n - 2);  // with the min clip, pins the median
    const int boosted = n - 2 - at_median;
    const double base_sum = d.min_s + at_median * d.median_s + d.max_s;
    const double target_sum = d.mean_s * n;
    double extra = target_sum - base_sum - boosted * d.median_s;
    if (extra < 0) extra = 0;  // degenerate targets; keep durations valid
    out.push_back(d.min_s);
    for (int i = 0; i < at_median; ++i) out.push_back(d.median_s);
    for (int i = 0; i < boosted; ++i) out.push_back(d.median_s + extra / boosted);
    out.push_back(d.max_s);
    return out;
}

}  // namespace

DatasetManifest synthesize_manifest(uint64_t seed, const SynthesisSpec& spec) {
    const int n = spec.total_clips;
    if (n < 0) throw ConfigError("total_clips must be >= 0");
    for (int c : spec.category_counts) {
        if (c < 0) throw ConfigError("category counts must be >= 0");
    }
    const double frac_sum =
        spec.split_fractions[0] + spec.split_fractions[1] + spec.split_fractions[2];
    if (std::abs(frac_sum - 1.0) > 1e-9) {
        throw ConfigError("split fractions must sum to 1");
    }

    const int background_clips = spec.category_counts[kBackgroundId];
    const int behavior_clips = n - background_clips;
    int behavior_labels = 0;
    for (int id = 0; id < kBackgroundId; ++id) behavior_labels += spec.category_counts[id];
    if (behavior_clips < 0) {
        throw ConfigError("Background count exceeds total_clips");
    }
    if (behavior_clips == 0 && behavior_labels > 0) {
        throw ConfigError("behavior labels requested but no non-Background clips");
    }
    if (behavior_clips > 0 && behavior_labels < behavior_clips) {
        throw ConfigError("not enough behavior labels to give every clip one");
    }
    if (behavior_labels > behavior_clips * (kNumCategories - 1)) {
        throw ConfigError("more behavior labels than distinct slots");
    }
    for (int id = 0; id < kBackgroundId; ++id) {
        if (spec.category_counts[id] > behavior_clips) {
            throw ConfigError("category " + std::string(taxonomy()[id].name) +
                              " count exceeds available clips");
        }
    }

    Rng rng(hash_seed(seed, "manifest-synthesis"));

    // Per-clip label capacity: every behavior clip carries >= 1 label; extras
    // are dealt round-robin over a shuffled clip order, capped at 9.
    std::vector<int> capacity(static_cast<size_t>(behavior_clips), 1);
    std::vector<int> order(static_cast<size_t>(behavior_clips));
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    int extra = behavior_labels - behavior_clips;
    for (size_t i = 0; extra > 0; i = (i + 1) % order.size()) {
        if (capacity[order[i]] < kNumCategories - 1) {
            ++capacity[order[i]];
            --extra;
        }
    }

    // Assign categories to distinct clips, largest category first, always
    // to the clips with the most remaining capacity (stable by index).
    std::vector<LabelMask> labels(static_cast<size_t>(behavior_clips));
    std::vector<int> remaining = capacity;
    std::vector<int> category_order;
    for (int id = 0; id < kBackgroundId; ++id) category_order.push_back(id);
    std::sort(category_order.begin(), category_order.end(), [&](int a, int b) {
        if (spec.category_counts[a] != spec.category_counts[b]) {
            return spec.category_counts[a] > spec.category_counts[b];
        }
        return a < b;
    });
    std::vector<int> slots(static_cast<size_t>(behavior_clips));
    for (int id : category_order) {
        const int need = spec.category_counts[id];
        if (need == 0) continue;
        std::iota(slots.begin(), slots.end(), 0);
        std::stable_sort(slots.begin(), slots.end(),
                         [&](int a, int b) { return remaining[a] > remaining[b]; });
        if (need > behavior_clips || remaining[slots[static_cast<size_t>(need) - 1]] < 1) {
            throw ConfigError("infeasible category counts");
        }
        for (int k = 0; k < need; ++k) {
            labels[slots[k]].add(id);
            --remaining[slots[k]];
        }
    }

    // Durations, shuffled so stats are uncorrelated with category.
    std::vector<double> durations;
    if (spec.durations.kind == DurationModel::Kind::constant) {
        durations.assign(static_cast<size_t>(n), spec.durations.constant_s);
    } else {
        durations = stat_target_durations(n, spec.durations);
        rng.shuffle(durations);
    }

    // Splits by largest remainder, assigned over a shuffled clip order.
    const auto split_counts = apportion_splits(n, spec.split_fractions);
    std::vector<Split> split_of(static_cast<size_t>(n));
    {
        std::vector<int> idx(static_cast<size_t>(n));
        std::iota(idx.begin(), idx.end(), 0);
        rng.shuffle(idx);
        int cursor = 0;
        for (int s = 0; s < 3; ++s) {
            for (int k = 0; k < split_counts[s]; ++k) {
                split_of[idx[cursor++]] = static_cast<Split>(s);
            }
        }
    }

    DatasetManifest m;
    m.clips.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        ClipRecord c;
        char buf[32];
        std::snprintf(buf, sizeof(buf), "syn%05d", i);
        c.clip_id = buf;
        std::snprintf(buf, sizeof(buf), "vid%05d", i / 2);
        c.video_id = buf;
        c.start_s = 0.0;
        c.end_s = durations[static_cast<size_t>(i)];
        c.labels = (i < behavior_clips) ? labels[static_cast<size_t>(i)]
                                        : LabelMask::background();
        c.split = split_of[static_cast<size_t>(i)];
        m.clips.push_back(std::move(c));
    }
    validate_manifest(m);
    return m;
}

}  // namespace avbr
