#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "config.hpp"

namespace nrba::cli {

inline constexpr const char* kToolkitVersion = "0.1.0";

/// 64-bit FNV-1a as 16 hex digits.
std::string fnv1a_hex(std::string_view bytes);
std::string file_digest(const std::filesystem::path& path);

/// Stage-by-stage runner. Each stage is keyed by its configuration and
/// upstream keys; a stage whose key and output digests match the manifest in
/// the output directory is loaded from disk instead of recomputed.
class Pipeline {
public:
    Pipeline(RunConfig config, unsigned threads);

    void pattern();
    void weights();
    void impute();
    void sensitivity();
    void estimate();
    void report();
    void simulate();

    /// Writes manifest.json and the timestamp log.
    void finish(const std::string& command);

    /// Stages reused from disk in this run, in order.
    const std::vector<std::string>& reused() const { return reused_; }

private:
    struct StageResult {
        std::vector<std::string> outputs;  ///< relative to the output directory
        std::vector<std::string> warnings;
    };

    void run_stage(const std::string& name, const std::string& key, const std::function<StageResult()>& compute,
                   const std::function<void()>& load);
    void load_data();
    std::string data_key() const;
    std::filesystem::path out(const std::string& rel) const { return config_.output / rel; }
    std::vector<Method> weight_methods() const;
    bool wants(Method m) const;

    RunConfig config_;
    unsigned threads_ = 1;
    std::uint64_t seed_ = 0;

    std::optional<PanelDataset> data_;
    std::string data_digest_;
    std::optional<std::vector<WeightSet>> weights_;
    std::optional<ImputationSet> mi_;
    std::optional<std::vector<ImputationSet>> offsets_;

    std::map<std::string, std::string> keys_;  ///< stage keys computed this run
    nlohmann::json manifest_;
    std::vector<std::string> reused_;
    std::vector<std::pair<std::string, std::string>> log_;  ///< (stage, ran|reused)
    std::string started_;
};

}  // namespace nrba::cli
