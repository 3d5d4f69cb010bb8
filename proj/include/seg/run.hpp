#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "seg/config.hpp"
#include "seg/kg.hpp"
#include "seg/matcher.hpp"
#include "seg/text_embed.hpp"
#include "seg/trainer.hpp"

#ifndef SEG_VERSION
#define SEG_VERSION "0.1.0"
#endif

namespace seg {

inline constexpr const char* kToolVersion = SEG_VERSION;

// FNV-1a over a file's bytes; directories hash their regular files in name order.
inline std::string file_digest(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto feed = [&](const fs::path& f) {
        std::ifstream in(f, std::ios::binary);
        if (!in) throw DataError("cannot open " + f.string());
        std::ostringstream ss;
        ss << in.rdbuf();
        h = fnv1a(f.filename().string(), h);
        h = fnv1a(ss.str(), h);
    };
    if (fs::is_directory(path)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(path))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) feed(f);
    } else {
        feed(path);
    }
    return hex64(h);
}

struct RunManifest {
    TrainConfig config;
    std::map<std::string, std::string> inputs;  // role -> digest
    std::string version = kToolVersion;
};

inline nlohmann::json manifest_json(const RunManifest& m) {
    nlohmann::json inputs = nlohmann::json::object();
    for (const auto& [k, v] : m.inputs) inputs[k] = v;
    return {{"tool", "seg"},
            {"version", m.version},
            {"rng_seed", m.config.rng_seed},
            {"config", m.config},
            {"config_digest", config_digest(m.config)},
            {"inputs", inputs}};
}

inline nlohmann::json epoch_json(const EpochRecord& r) {
    return {{"epoch", r.epoch}, {"loss", r.loss}, {"val_hit1", r.val_hit1}, {"n_pseudo", r.n_pseudo}};
}

inline void write_trace(const std::vector<EpochRecord>& history, const std::filesystem::path& file) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw DataError("cannot write " + file.string());
    for (const EpochRecord& r : history) out << epoch_json(r).dump() << '\n';
}

inline std::string hit_key(std::size_t k) { return "hit" + std::to_string(k); }

inline nlohmann::json metrics_json(const Metrics& m, const std::string& digest) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : m.hits) j[hit_key(k)] = v;
    j["mrr"] = m.mrr;
    j["n_test"] = m.n;
    j["config_digest"] = digest;
    return j;
}

// Mean and population standard deviation of hit@k and MRR across folds.
inline nlohmann::json summarize_folds(const std::vector<nlohmann::json>& reports) {
    nlohmann::json mean = nlohmann::json::object(), stddev = nlohmann::json::object();
    if (reports.empty()) return {{"folds", 0}, {"mean", mean}, {"stddev", stddev}};
    for (const auto& [key, value] : reports.front().items()) {
        if (!value.is_number() || !(key == "mrr" || key.starts_with("hit"))) continue;
        double s = 0.0;
        for (const auto& r : reports) s += r.at(key).get<double>();
        const double mu = s / static_cast<double>(reports.size());
        double v = 0.0;
        for (const auto& r : reports) v += std::pow(r.at(key).get<double>() - mu, 2);
        mean[key] = mu;
        stddev[key] = std::sqrt(v / static_cast<double>(reports.size()));
    }
    return {{"folds", reports.size()}, {"per_fold", reports}, {"mean", mean}, {"stddev", stddev}};
}

}  // namespace seg
