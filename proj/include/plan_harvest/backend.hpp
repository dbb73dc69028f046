#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace plan_harvest {

inline constexpr const char* kApiKeyEnv = "PLAN_HARVEST_API_KEY";

/// Decoding parameters sent with every completion request. Defaults are the
/// settings used for all reported experiments (greedy, single completion).
struct CompletionParams {
    int max_tokens = 100;
    double temperature = 0.0;
    double top_p = 1.0;
    double frequency_penalty = 0.0;
    double presence_penalty = 0.0;
    int best_of = 1;
    std::string engine = "davinci";

    void validate() const;
};

/// Compact JSON of the params with sorted keys; the digest input.
std::string canonical_params(const CompletionParams& params);

std::string sha256_hex(std::string_view data);

/// SHA-256 over canonical_params(params) + "\n" + prompt bytes.
std::string prompt_digest(std::string_view prompt, const CompletionParams& params);

struct CompletionRecord {
    std::string prompt_digest;
    std::string completion;
    std::string timestamp; // ISO 8601, UTC
    std::string engine;

    bool operator==(const CompletionRecord&) const = default;
};

class BackendError : public std::runtime_error {
public:
    enum class Kind {
        Transport,      // connection failure, timeout or 5xx
        Authentication, // missing or rejected credential
        RateLimit,
        BadRequest,     // other 4xx, or a response that does not parse
        CacheMiss,
        CacheFormat,
        CacheWrite,
    };

    BackendError(Kind kind, const std::string& what, std::string digest = {})
        : std::runtime_error(what), kind_(kind), digest_(std::move(digest)) {}

    Kind kind() const noexcept { return kind_; }
    const std::string& digest() const noexcept { return digest_; }
    bool retryable() const noexcept { return kind_ == Kind::Transport || kind_ == Kind::RateLimit; }

private:
    Kind kind_;
    std::string digest_;
};

class CompletionBackend {
public:
    virtual ~CompletionBackend() = default;

    /// Raw completion text for `prompt`; must be safe to call concurrently.
    virtual std::string complete(std::string_view prompt, const CompletionParams& params) = 0;
};

struct HttpRequest {
    std::string path;
    std::vector<std::pair<std::string, std::string>> headers;
    std::string body;
};

struct HttpResponse {
    int status = 0;
    std::string body;
};

/// One POST round trip. Implementations throw BackendError(Transport) when no
/// response arrives.
class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// cpp-httplib transport. `base_url` is scheme://host[:port][/prefix]; the
/// prefix is prepended to every request path.
std::unique_ptr<Transport> make_http_transport(const std::string& base_url, std::chrono::milliseconds timeout);

struct LiveOptions {
    std::string endpoint_path = "/v1/completions";
    std::string api_key;
    std::size_t max_in_flight = 4;
    int max_attempts = 5;
    std::chrono::milliseconds initial_backoff{500};
    // Replaced in tests to avoid real sleeping.
    std::function<void(std::chrono::milliseconds)> sleep;
};

/// Completion-style HTTP endpoint client: the prompt and the six decoding
/// params go out verbatim, `choices[0].text` comes back. Rate limits and
/// transport failures are retried with exponential backoff up to
/// `max_attempts`; authentication failures are not.
class LiveBackend : public CompletionBackend {
public:
    LiveBackend(std::shared_ptr<Transport> transport, LiveOptions options);

    std::string complete(std::string_view prompt, const CompletionParams& params) override;

private:
    std::string attempt(const HttpRequest& request);

    std::shared_ptr<Transport> transport_;
    LiveOptions options_;
    std::mutex slots_mutex_;
    std::condition_variable slots_cv_;
    std::size_t in_flight_ = 0;
};

std::optional<std::string> api_key_from_env();

/// Completions keyed by prompt digest, persisted as line-delimited JSON with
/// a header line naming the digest algorithm. Reads are concurrent; writes
/// are serialized and rewrite the file atomically.
class ReplayCache {
public:
    /// Opens `path`, loading it when it exists; a missing file is an empty
    /// cache that is created on first insert.
    explicit ReplayCache(std::filesystem::path path);

    /// Like the constructor but a missing file is an error.
    static std::unique_ptr<ReplayCache> load_existing(const std::filesystem::path& path);

    std::optional<std::string> lookup(const std::string& digest) const;
    bool contains(const std::string& digest) const;
    void insert(CompletionRecord record);
    std::size_t size() const;
    const std::filesystem::path& path() const noexcept { return path_; }

    static constexpr std::string_view kFormat = "plan-harvest-completions";
    static constexpr std::string_view kDigestAlgorithm = "sha256";

private:
    void load();
    void save() const;

    std::filesystem::path path_;
    mutable std::shared_mutex mutex_;
    std::vector<CompletionRecord> records_;
    std::unordered_map<std::string, std::size_t> index_;
};

/// Serves completions from a cache only; a miss carries the digest.
class ReplayBackend : public CompletionBackend {
public:
    explicit ReplayBackend(std::shared_ptr<const ReplayCache> cache) : cache_(std::move(cache)) {}

    std::string complete(std::string_view prompt, const CompletionParams& params) override;

private:
    std::shared_ptr<const ReplayCache> cache_;
};

/// Forwards to a live backend and stores every completion in the cache.
class RecordingBackend : public CompletionBackend {
public:
    RecordingBackend(std::shared_ptr<CompletionBackend> live, std::shared_ptr<ReplayCache> cache)
        : live_(std::move(live)), cache_(std::move(cache)) {}

    std::string complete(std::string_view prompt, const CompletionParams& params) override;

private:
    std::shared_ptr<CompletionBackend> live_;
    std::shared_ptr<ReplayCache> cache_;
};

std::string record_run(std::string_view prompt, const CompletionParams& params, ReplayCache& cache,
                       CompletionBackend& live);

std::string utc_timestamp();

} // namespace plan_harvest
