#include "plan_harvest/backend.hpp"

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <httplib.h>

#include <cmath>
#include <cstdlib>
#include <ctime>
#include <fstream>

namespace plan_harvest {

using json = nlohmann::json;

void CompletionParams::validate() const {
    const auto fail = [](const std::string& msg) { throw std::invalid_argument("invalid completion params: " + msg); };
    if (max_tokens < 1) fail("max_tokens must be positive");
    if (!(temperature >= 0.0 && temperature <= 1.0)) fail("temperature must be in [0, 1]");
    if (!(top_p > 0.0 && top_p <= 1.0)) fail("top_p must be in (0, 1]");
    if (!std::isfinite(frequency_penalty)) fail("frequency_penalty must be finite");
    if (!std::isfinite(presence_penalty)) fail("presence_penalty must be finite");
    if (best_of < 1) fail("best_of must be at least 1");
    if (engine.empty()) fail("engine must be named");
}

namespace {

double canonical(double v) { return v == 0.0 ? 0.0 : v; }

json params_json(const CompletionParams& p) {
    json j;
    j["best_of"] = p.best_of;
    j["engine"] = p.engine;
    j["frequency_penalty"] = canonical(p.frequency_penalty);
    j["max_tokens"] = p.max_tokens;
    j["presence_penalty"] = canonical(p.presence_penalty);
    j["temperature"] = canonical(p.temperature);
    j["top_p"] = canonical(p.top_p);
    return j;
}

std::string dump_lenient(const json& j) {
    return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

} // namespace

std::string canonical_params(const CompletionParams& params) { return params_json(params).dump(); }

std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("SHA-256 computation failed");
    }
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0x0F]);
    }
    return out;
}

std::string prompt_digest(std::string_view prompt, const CompletionParams& params) {
    std::string input = canonical_params(params);
    input.push_back('\n');
    input.append(prompt);
    return sha256_hex(input);
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::optional<std::string> api_key_from_env() {
    const char* key = std::getenv(kApiKeyEnv);
    if (key == nullptr || *key == '\0') {
        return std::nullopt;
    }
    return std::string(key);
}

// ---------------------------------------------------------------------------
// HTTP transport

namespace {

class HttpTransport : public Transport {
public:
    HttpTransport(std::string origin, std::string prefix, std::chrono::milliseconds timeout)
        : origin_(std::move(origin)), prefix_(std::move(prefix)), timeout_(timeout) {}

    HttpResponse post(const HttpRequest& request) override {
        httplib::Client client(origin_);
        client.set_connection_timeout(timeout_);
        client.set_read_timeout(timeout_);
        client.set_write_timeout(timeout_);
        httplib::Headers headers;
        for (const auto& [k, v] : request.headers) {
            headers.emplace(k, v);
        }
        auto res = client.Post(prefix_ + request.path, headers, request.body, "application/json");
        if (!res) {
            throw BackendError(BackendError::Kind::Transport,
                               "request to " + origin_ + prefix_ + request.path + " failed: " +
                                   httplib::to_string(res.error()));
        }
        return {res->status, res->body};
    }

private:
    std::string origin_;
    std::string prefix_;
    std::chrono::milliseconds timeout_;
};

} // namespace

std::unique_ptr<Transport> make_http_transport(const std::string& base_url, std::chrono::milliseconds timeout) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw std::invalid_argument("base URL must include a scheme: " + base_url);
    }
    const auto path_start = base_url.find('/', scheme_end + 3);
    std::string origin = base_url.substr(0, path_start);
    std::string prefix = path_start == std::string::npos ? "" : base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') {
        prefix.pop_back();
    }
    return std::make_unique<HttpTransport>(std::move(origin), std::move(prefix), timeout);
}

// ---------------------------------------------------------------------------
// Live backend

LiveBackend::LiveBackend(std::shared_ptr<Transport> transport, LiveOptions options)
    : transport_(std::move(transport)), options_(std::move(options)) {
    if (options_.api_key.empty()) {
        throw BackendError(BackendError::Kind::Authentication,
                           std::string("no API key configured; set ") + kApiKeyEnv);
    }
    if (options_.max_in_flight == 0) {
        options_.max_in_flight = 1;
    }
    if (options_.max_attempts < 1) {
        options_.max_attempts = 1;
    }
    if (!options_.sleep) {
        options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
    }
}

std::string LiveBackend::attempt(const HttpRequest& request) {
    const auto res = transport_->post(request);
    if (res.status == 401 || res.status == 403) {
        throw BackendError(BackendError::Kind::Authentication,
                           "credential rejected (HTTP " + std::to_string(res.status) + "); check " + kApiKeyEnv);
    }
    if (res.status == 429) {
        throw BackendError(BackendError::Kind::RateLimit, "rate limited (HTTP 429)");
    }
    if (res.status >= 500) {
        throw BackendError(BackendError::Kind::Transport, "server error (HTTP " + std::to_string(res.status) + ")");
    }
    if (res.status < 200 || res.status >= 300) {
        throw BackendError(BackendError::Kind::BadRequest,
                           "request rejected (HTTP " + std::to_string(res.status) + "): " + res.body);
    }
    try {
        const auto body = json::parse(res.body);
        return body.at("choices").at(0).at("text").get<std::string>();
    } catch (const json::exception& e) {
        throw BackendError(BackendError::Kind::BadRequest, std::string("unexpected completion response: ") + e.what());
    }
}

std::string LiveBackend::complete(std::string_view prompt, const CompletionParams& params) {
    if (prompt.empty()) {
        throw std::invalid_argument("prompt must not be empty");
    }
    params.validate();

    json body;
    body["model"] = params.engine;
    body["prompt"] = std::string(prompt);
    body["max_tokens"] = params.max_tokens;
    body["temperature"] = params.temperature;
    body["top_p"] = params.top_p;
    body["frequency_penalty"] = params.frequency_penalty;
    body["presence_penalty"] = params.presence_penalty;
    body["best_of"] = params.best_of;

    HttpRequest request;
    request.path = options_.endpoint_path;
    request.headers = {{"Authorization", "Bearer " + options_.api_key}};
    request.body = dump_lenient(body);

    {
        std::unique_lock lock(slots_mutex_);
        slots_cv_.wait(lock, [&] { return in_flight_ < options_.max_in_flight; });
        ++in_flight_;
    }
    struct Release {
        LiveBackend& self;
        ~Release() {
            {
                std::lock_guard lock(self.slots_mutex_);
                --self.in_flight_;
            }
            self.slots_cv_.notify_one();
        }
    } release{*this};

    auto backoff = options_.initial_backoff;
    for (int n = 1;; ++n) {
        try {
            return attempt(request);
        } catch (const BackendError& e) {
            if (!e.retryable() || n >= options_.max_attempts) {
                if (e.retryable()) {
                    throw BackendError(e.kind(), std::string(e.what()) + " after " + std::to_string(n) + " attempts");
                }
                throw;
            }
        }
        options_.sleep(backoff);
        backoff *= 2;
    }
}

// ---------------------------------------------------------------------------
// Replay cache

ReplayCache::ReplayCache(std::filesystem::path path) : path_(std::move(path)) {
    if (std::filesystem::exists(path_)) {
        load();
    }
}

std::unique_ptr<ReplayCache> ReplayCache::load_existing(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) {
        throw BackendError(BackendError::Kind::CacheFormat, "completion cache " + path.string() + " does not exist");
    }
    return std::make_unique<ReplayCache>(path);
}

void ReplayCache::load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) {
        throw BackendError(BackendError::Kind::CacheFormat, "cannot read completion cache " + path_.string());
    }
    const auto fail = [&](std::size_t record, const std::string& why) {
        throw BackendError(BackendError::Kind::CacheFormat,
                           path_.string() + ": record " + std::to_string(record) + ": " + why);
    };
    std::string line;
    bool header_seen = false;
    std::size_t record = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        if (header_seen) {
            ++record;
        }
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(record, std::string("malformed JSON: ") + e.what());
        }
        if (!header_seen) {
            if (!j.is_object() || j.value("format", "") != kFormat || j.value("digest", "") != kDigestAlgorithm) {
                fail(0, "missing or unsupported header line");
            }
            header_seen = true;
            continue;
        }
        CompletionRecord rec;
        try {
            rec.prompt_digest = j.at("prompt_digest").get<std::string>();
            rec.completion = j.at("completion").get<std::string>();
            rec.timestamp = j.at("timestamp").get<std::string>();
            rec.engine = j.at("engine").get<std::string>();
        } catch (const json::exception& e) {
            fail(record, e.what());
        }
        if (!index_.emplace(rec.prompt_digest, records_.size()).second) {
            fail(record, "duplicate digest " + rec.prompt_digest);
        }
        records_.push_back(std::move(rec));
    }
}

void ReplayCache::save() const {
    auto tmp = path_;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw BackendError(BackendError::Kind::CacheWrite, "cannot write completion cache " + tmp.string());
        }
        json header;
        header["format"] = kFormat;
        header["version"] = 1;
        header["digest"] = kDigestAlgorithm;
        out << header.dump() << '\n';
        for (const auto& r : records_) {
            nlohmann::ordered_json j;
            j["prompt_digest"] = r.prompt_digest;
            j["engine"] = r.engine;
            j["timestamp"] = r.timestamp;
            j["completion"] = r.completion;
            out << j.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
        }
        if (!out.flush()) {
            throw BackendError(BackendError::Kind::CacheWrite, "failed writing completion cache " + tmp.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) {
        throw BackendError(BackendError::Kind::CacheWrite,
                           "cannot replace completion cache " + path_.string() + ": " + ec.message());
    }
}

std::optional<std::string> ReplayCache::lookup(const std::string& digest) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(digest);
    if (it == index_.end()) {
        return std::nullopt;
    }
    return records_[it->second].completion;
}

bool ReplayCache::contains(const std::string& digest) const {
    std::shared_lock lock(mutex_);
    return index_.count(digest) != 0;
}

void ReplayCache::insert(CompletionRecord record) {
    std::unique_lock lock(mutex_);
    if (auto it = index_.find(record.prompt_digest); it != index_.end()) {
        records_[it->second] = std::move(record);
    } else {
        index_.emplace(record.prompt_digest, records_.size());
        records_.push_back(std::move(record));
    }
    save();
}

std::size_t ReplayCache::size() const {
    std::shared_lock lock(mutex_);
    return records_.size();
}

std::string ReplayBackend::complete(std::string_view prompt, const CompletionParams& params) {
    const auto digest = prompt_digest(prompt, params);
    if (auto hit = cache_->lookup(digest)) {
        return *hit;
    }
    throw BackendError(BackendError::Kind::CacheMiss,
                       "no cached completion for digest " + digest + " in " + cache_->path().string(), digest);
}

std::string record_run(std::string_view prompt, const CompletionParams& params, ReplayCache& cache,
                       CompletionBackend& live) {
    auto completion = live.complete(prompt, params);
    cache.insert({prompt_digest(prompt, params), completion, utc_timestamp(), params.engine});
    return completion;
}

std::string RecordingBackend::complete(std::string_view prompt, const CompletionParams& params) {
    return record_run(prompt, params, *cache_, *live_);
}

} // namespace plan_harvest
