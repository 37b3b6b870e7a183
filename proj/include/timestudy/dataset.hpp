// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "timestudy/common.hpp"
#include "timestudy/rng.hpp"

namespace ts {

// Fixed label set; the four active classes are the modeling subset, with the
// model class index equal to the position in active().
class ClassVocabulary {
public:
    static const std::vector<std::string>& full() {
        static const std::vector<std::string> v{"crane_out", "cutting_and_to_processing", "processing",
                                                "driving", "non_productive", "other_crane_movement"};
        return v;
    }

    static const std::vector<std::string>& active() {
        static const std::vector<std::string> v{"crane_out", "cutting_and_to_processing", "driving",
                                                "processing"};
        return v;
    }

    // Case-insensitive (the source material itself mixes "Driving"/"driving").
    static std::string normalize(const std::string& label) {
        std::string lower = label;
        std::transform(lower.begin(), lower.end(), lower.begin(),
                       [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        for (const auto& l : full())
            if (l == lower) return l;
        throw data_error("unknown class label: \"" + label + "\"");
    }

    static bool is_active(const std::string& label) {
        const auto& a = active();
        return std::find(a.begin(), a.end(), label) != a.end();
    }

    static std::size_t active_index(const std::string& label) {
        const auto& a = active();
        auto it = std::find(a.begin(), a.end(), label);
        if (it == a.end()) throw data_error("label not in active vocabulary: " + label);
        return static_cast<std::size_t>(it - a.begin());
    }
};

struct ManifestEntry {
    std::string clip_path;
    std::string label;  // normalized, member of the full vocabulary
    std::size_t frame_count = 0;
    double fps = 0.0;
    std::string split;  // "train" or "val"
};

// ---------------------------------------------------------------------------
// Manifest CSV: header clip_path,label,frame_count,fps,split
// ---------------------------------------------------------------------------

inline std::vector<ManifestEntry> load_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("manifest: cannot open " + path);

    std::string line;
    if (!std::getline(is, line)) throw data_error("manifest: empty file " + path);
    // tolerate trailing \r from CRLF files
    auto strip = [](std::string& s) {
        if (!s.empty() && s.back() == '\r') s.pop_back();
    };
    strip(line);
    if (line != "clip_path,label,frame_count,fps,split")
        throw data_error("manifest: bad header in " + path + ": \"" + line + "\"");

    std::vector<ManifestEntry> entries;
    std::unordered_set<std::string> seen_paths;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        strip(line);
        if (line.empty()) continue;
        std::vector<std::string> cols;
        std::stringstream ss(line);
        std::string col;
        while (std::getline(ss, col, ',')) cols.push_back(col);
        if (cols.size() != 5)
            throw data_error("manifest: line " + std::to_string(lineno) + ": expected 5 columns, got " +
                             std::to_string(cols.size()));
        ManifestEntry e;
        e.clip_path = cols[0];
        try {
            e.label = ClassVocabulary::normalize(cols[1]);
        } catch (const data_error& ex) {
            throw data_error("manifest: line " + std::to_string(lineno) + ": " + ex.what());
        }
        try {
            long long fc = std::stoll(cols[2]);
            if (fc <= 0) throw std::invalid_argument("non-positive");
            e.frame_count = static_cast<std::size_t>(fc);
            e.fps = std::stod(cols[3]);
            if (e.fps <= 0) throw std::invalid_argument("non-positive fps");
        } catch (const std::exception&) {
            throw data_error("manifest: line " + std::to_string(lineno) + ": bad frame_count/fps");
        }
        e.split = cols[4];
        if (e.split != "train" && e.split != "val")
            throw data_error("manifest: line " + std::to_string(lineno) + ": split must be train or val");
        if (!seen_paths.insert(e.clip_path).second)
            throw data_error("manifest: line " + std::to_string(lineno) + ": duplicate clip_path " + e.clip_path);
        entries.push_back(std::move(e));
    }
    return entries;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
    std::ofstream os(path);
    if (!os) throw data_error("manifest: cannot write " + path);
    os << "clip_path,label,frame_count,fps,split\n";
    for (const auto& e : entries)
        os << e.clip_path << "," << e.label << "," << e.frame_count << "," << e.fps << "," << e.split << "\n";
}

inline std::vector<ManifestEntry> filter_active(const std::vector<ManifestEntry>& entries) {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries)
        if (ClassVocabulary::is_active(e.label)) out.push_back(e);
    return out;
}

// ---------------------------------------------------------------------------
// Clip-window sampling
// ---------------------------------------------------------------------------

struct FrameWindow {
    std::size_t start = 0;
    std::size_t length = 0;
};

// Window of round(clip_seconds * fps) frames; shorter clips are used whole.
inline FrameWindow sample_clip_window(const ManifestEntry& entry, double clip_seconds, bool random,
                                      Rng* rng = nullptr) {
    if (entry.fps <= 0) throw data_error("sample_clip_window: fps must be positive");
    std::size_t len = static_cast<std::size_t>(std::llround(clip_seconds * entry.fps));
    if (len < 1) len = 1;
    if (entry.frame_count <= len) return {0, entry.frame_count};
    std::size_t max_start = entry.frame_count - len;
    std::size_t start = random && rng
                            ? static_cast<std::size_t>(rng->next_int(0, static_cast<std::int64_t>(max_start)))
                            : max_start / 2;
    return {start, len};
}

// ---------------------------------------------------------------------------
// Dataset statistics (clip counts + frame-count histograms per class)
// ---------------------------------------------------------------------------

struct ClassStats {
    std::size_t count = 0;
    std::vector<std::size_t> histogram;  // right-open bins [k*w, (k+1)*w)
};

struct DatasetStats {
    std::size_t bin_width = 0;
    std::map<std::string, ClassStats> per_class;  // keyed by label
};

inline DatasetStats compute_stats(const std::vector<ManifestEntry>& entries, std::size_t bin_width) {
    if (bin_width < 1) throw std::invalid_argument("compute_stats: bin_width must be >= 1");
    DatasetStats stats;
    stats.bin_width = bin_width;
    for (const auto& label : ClassVocabulary::full()) stats.per_class[label] = {};
    for (const auto& e : entries) {
        auto& cs = stats.per_class[e.label];
        ++cs.count;
        std::size_t bin = e.frame_count / bin_width;
        if (cs.histogram.size() <= bin) cs.histogram.resize(bin + 1, 0);
        ++cs.histogram[bin];
    }
    return stats;
}

inline nlohmann::json stats_to_json(const DatasetStats& stats) {
    nlohmann::json j;
    for (const auto& [label, cs] : stats.per_class)
        j[label] = {{"count", cs.count},
                    {"histogram", {{"bin_width", stats.bin_width}, {"counts", cs.histogram}}}};
    return j;
}

// ---------------------------------------------------------------------------
// Batching
// ---------------------------------------------------------------------------

// Seeded shuffle for training; pass no rng for original (validation) order.
// The final partial batch is kept.
inline std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size,
                                                          Rng* rng = nullptr) {
    if (batch_size < 1) throw std::invalid_argument("make_batches: batch_size must be >= 1");
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    if (rng) rng->shuffle(order);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        std::size_t end = std::min(n, i + batch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

// Seeded 80/20 per-class split helper for manifests missing the column;
// guarantees at least one val clip per class (needs >= 2 clips per class).
inline void assign_split(std::vector<ManifestEntry>& entries, std::uint64_t seed) {
    std::map<std::string, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < entries.size(); ++i) by_class[entries[i].label].push_back(i);
    Rng rng(seed);
    for (auto& [label, idx] : by_class) {
        rng.shuffle(idx);
        std::size_t val_n = std::max<std::size_t>(1, idx.size() / 5);
        for (std::size_t i = 0; i < idx.size(); ++i)
            entries[idx[i]].split = i < val_n ? "val" : "train";
    }
}

}  // namespace ts
