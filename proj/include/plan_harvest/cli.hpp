#pragma once

#include "plan_harvest/backend.hpp"
#include "plan_harvest/corpus.hpp"
#include "plan_harvest/prompt.hpp"
#include "plan_harvest/scorer.hpp"

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace plan_harvest::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitPartial = 1;
inline constexpr int kExitConfig = 2;

enum class BackendMode { Live, Replay, Record };

struct RunConfig {
    std::string corpus_path;
    std::string dataset;
    ShotStrategy strategy;
    // Unset means the dataset default; a set value of nullopt means no cap.
    std::optional<std::optional<std::size_t>> sentence_cap;
    BackendMode mode = BackendMode::Replay;
    std::filesystem::path cache_path;
    CompletionParams params;
    std::filesystem::path out_dir = "out";
    std::filesystem::path extractions_dir; // score input; defaults to out_dir/extractions
    std::string base_url = "https://api.openai.com";
    std::string endpoint = "/v1/completions";
    std::size_t jobs = 4;
    std::chrono::milliseconds timeout{60000};
    int max_attempts = 5;
    ScoringOptions scoring;
    std::vector<int> shots_list{1, 2, 3, 4};
};

using TransportFactory =
    std::function<std::unique_ptr<Transport>(const std::string& base_url, std::chrono::milliseconds timeout)>;

/// Process-facing dependencies, swappable in tests.
struct Environment {
    std::ostream& out;
    std::ostream& err;
    TransportFactory transport_factory = make_http_transport;
    std::function<std::optional<std::string>()> api_key = api_key_from_env;
    // Used by live and record modes; replaces the real sleep between retries.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Configuration or input problems; mapped to exit code 2.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

int cmd_stats(const RunConfig& config, Environment& env);
int cmd_extract(const RunConfig& config, Environment& env);
int cmd_score(const RunConfig& config, Environment& env);
int cmd_sweep(const RunConfig& config, Environment& env);

/// Full command line without the program name, e.g. {"stats", "--corpus", ...}.
int run(const std::vector<std::string>& args, Environment& env);

/// File name used for a text's extraction record.
std::string record_file_name(const std::string& id);

} // namespace plan_harvest::cli
