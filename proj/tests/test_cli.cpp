#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "plan_harvest/cli.hpp"
#include "plan_harvest/notation.hpp"
#include "support/temp_dir.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

using namespace plan_harvest;
using namespace plan_harvest::testing;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = PLAN_HARVEST_FIXTURES;

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << content;
}

std::vector<std::string> lines_of(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string line; std::getline(in, line);) {
        out.push_back(line);
    }
    return out;
}

std::string test_text(const std::string& prompt) { return prompt.substr(prompt.rfind("TEXT\n\n") + 6); }

// Answers like a model that has learned the fixture corpus, keyed on the first
// sentence of the test text.
std::string fixture_answer(const std::string& prompt) {
    static const std::map<std::string, std::string> answers{
        {"Click Start.", " click(start) open(control panel)"},
        {"Click Internet Options.", " click(internet, options) click(advanced)"},
        {"Restart the computer.", " restart(computer) hold(shift)\nTEXT\nwait()"},
        {"Delete the file.", " Sure: delete(files) empty(recycle bin) remove(file)"},
        {"Select Display.", " I am not sure."},
        {"Type your password.", " type(password) press(enter)"}};
    const auto test = test_text(prompt);
    for (const auto& [first, answer] : answers) {
        if (test.starts_with(first)) {
            return answer;
        }
    }
    return "";
}

HttpResponse completion_response(const std::string& text) {
    return {200, nlohmann::json{{"choices", {{{"text", text}}}}}.dump()};
}

// Shared by every transport a harness hands out. `respond` sees the prompt and
// the 1-based attempt number for that prompt.
struct FakeService {
    std::function<HttpResponse(const std::string& prompt, int attempt)> respond = [](const std::string& p, int) {
        return completion_response(fixture_answer(p));
    };
    std::mutex mutex;
    std::map<std::string, int> attempts;
    int requests = 0;
    int factory_calls = 0;
};

class FakeTransport : public Transport {
public:
    explicit FakeTransport(FakeService& service) : service_(service) {}

    HttpResponse post(const HttpRequest& request) override {
        const auto prompt = nlohmann::json::parse(request.body).at("prompt").get<std::string>();
        int attempt = 0;
        {
            std::lock_guard lock(service_.mutex);
            ++service_.requests;
            attempt = ++service_.attempts[prompt];
        }
        return service_.respond(prompt, attempt);
    }

private:
    FakeService& service_;
};

struct Harness {
    std::ostringstream out;
    std::ostringstream err;
    FakeService service;
    std::vector<std::chrono::milliseconds> sleeps;
    std::mutex sleep_mutex;
    std::optional<std::string> key = "test-key";
    cli::Environment env{out, err};
    TempDir dir{"ph-cli"};

    Harness() {
        env.transport_factory = [this](const std::string&, std::chrono::milliseconds) {
            ++service.factory_calls;
            return std::make_unique<FakeTransport>(service);
        };
        env.api_key = [this] { return key; };
        env.sleep = [this](std::chrono::milliseconds d) {
            std::lock_guard lock(sleep_mutex);
            sleeps.push_back(d);
        };
    }

    int run(std::vector<std::string> args) { return cli::run(args, env); }

    fs::path out_dir() const { return dir.path / "out"; }
};

std::string corpus_path() { return (kFixtures / "corpus.jsonl").string(); }
std::string cache_path() { return (kFixtures / "completions.jsonl").string(); }

std::vector<std::string> replay_args(const std::string& cmd, const Harness& h) {
    return {cmd, "--corpus", corpus_path(), "--cache", cache_path(), "--out", h.out_dir().string()};
}

} // namespace

TEST_CASE("stats on the fixture corpus") {
    Harness h;
    REQUIRE(h.run({"stats", "--corpus", corpus_path(), "--dataset", "WHS", "--out", h.out_dir().string()}) ==
            cli::kExitOk);
    const auto j = nlohmann::json::parse(slurp(h.out_dir() / "stats.jsonl"));
    CHECK(j["dataset"] == "WHS");
    CHECK(j["labeled_texts"] == 6);
    // Counted by hand: 5 + 6 + 15 + 7 + 5 + 5 words; 14 name words; 16 argument words.
    CHECK(j["total_words"] == 43);
    CHECK(j["action_name_rate"].get<double>() == doctest::Approx(100.0 * 14 / 43));
    CHECK(j["action_argument_rate"].get<double>() == doctest::Approx(100.0 * 16 / 43));
    CHECK(h.out.str().find("32.56") != std::string::npos);
}

TEST_CASE("stats input errors exit 2") {
    Harness h;
    CHECK(h.run({"stats", "--corpus", "/no/such/corpus.jsonl", "--out", h.out_dir().string()}) == cli::kExitConfig);
    CHECK(h.err.str().find("/no/such/corpus.jsonl") != std::string::npos);

    const auto empty = h.dir.path / "empty.jsonl";
    spit(empty, "");
    CHECK(h.run({"stats", "--corpus", empty.string(), "--out", h.out_dir().string()}) == cli::kExitConfig);

    CHECK(h.run({"stats", "--corpus", corpus_path(), "--dataset", "CT", "--out", h.out_dir().string()}) ==
          cli::kExitConfig);
}

TEST_CASE("command line errors exit 2, help exits 0") {
    Harness h;
    CHECK(h.run({}) == cli::kExitConfig);
    CHECK(h.run({"frobnicate"}) == cli::kExitConfig);
    CHECK(h.run({"stats"}) == cli::kExitConfig);
    CHECK(h.run({"extract", "--corpus", corpus_path(), "--shots", "5"}) == cli::kExitConfig);
    CHECK(h.run({"extract", "--corpus", corpus_path(), "--mode", "telepathy"}) == cli::kExitConfig);
    CHECK(h.run({"--help"}) == cli::kExitOk);
    CHECK(h.out.str().find("sweep") != std::string::npos);
}

TEST_CASE("extract from a warm replay cache makes no requests") {
    Harness h;
    REQUIRE(h.run(replay_args("extract", h)) == cli::kExitOk);
    CHECK(h.service.factory_calls == 0);
    CHECK(h.service.requests == 0);

    const auto dir = h.out_dir() / "extractions";
    for (const char* id : {"whs-01", "whs-02", "whs-03", "whs-04", "whs-05", "whs-06"}) {
        REQUIRE(fs::exists(dir / (std::string(id) + ".json")));
    }
    const auto rec = nlohmann::json::parse(slurp(dir / "whs-04.json"));
    CHECK(rec["test_id"] == "whs-04");
    CHECK(rec["status"] == "ok");
    CHECK(rec["example_ids"].size() == 2);
    CHECK(rec["prompt_digest"].get<std::string>().size() == 64);
    CHECK(rec["plan_text"] == "delete(files) empty(recycle bin) remove(file)");
    CHECK(rec["diagnostics"]["skipped_spans"].size() == 1);
    CHECK(rec["diagnostics"]["truncated"] == false);

    const auto stopped = nlohmann::json::parse(slurp(dir / "whs-03.json"));
    CHECK(stopped["plan_text"] == "restart(computer) hold(shift)");
}

TEST_CASE("extract from a cold cache exits 2 and lists the digests") {
    Harness h;
    const auto cold = h.dir.path / "cold.jsonl";
    spit(cold, lines_of(slurp(kFixtures / "completions.jsonl"))[0] + "\n");
    CHECK(h.run({"extract", "--corpus", corpus_path(), "--cache", cold.string(), "--out", h.out_dir().string()}) ==
          cli::kExitConfig);
    CHECK(h.err.str().find("missing 6 digest(s)") != std::string::npos);
    CHECK(h.err.str().find("(whs-05)") != std::string::npos);
    CHECK(h.service.requests == 0);

    CHECK(h.run({"extract", "--corpus", corpus_path(), "--cache", (h.dir.path / "nope.jsonl").string()}) ==
          cli::kExitConfig);
    CHECK(h.run({"extract", "--corpus", corpus_path()}) == cli::kExitConfig);
}

TEST_CASE("live extraction retries transient failures with backoff") {
    Harness h;
    h.service.respond = [](const std::string& p, int attempt) {
        if (attempt == 1) {
            return HttpResponse{503, "busy"};
        }
        if (attempt == 2 && test_text(p).starts_with("Delete the file.")) {
            return HttpResponse{429, "slow down"};
        }
        return completion_response(fixture_answer(p));
    };
    REQUIRE(h.run({"extract", "--corpus", corpus_path(), "--mode", "live", "--jobs", "3", "--out",
                   h.out_dir().string()}) == cli::kExitOk);
    CHECK(h.service.requests == 13);
    CHECK(h.sleeps.size() == 7);
    CHECK(std::count(h.sleeps.begin(), h.sleeps.end(), std::chrono::milliseconds(1000)) == 1);

    // Same plans as the replayed run.
    Harness replay;
    REQUIRE(replay.run(replay_args("extract", replay)) == cli::kExitOk);
    for (const auto& entry : fs::directory_iterator(h.out_dir() / "extractions")) {
        const auto live = nlohmann::json::parse(slurp(entry.path()));
        const auto cached = nlohmann::json::parse(slurp(replay.out_dir() / "extractions" / entry.path().filename()));
        CHECK(live["plan"] == cached["plan"]);
        CHECK(live["prompt_digest"] == cached["prompt_digest"]);
    }
}

TEST_CASE("a text that keeps failing is recorded and makes the run partial") {
    Harness h;
    h.service.respond = [](const std::string& p, int) {
        if (test_text(p).starts_with("Select Display.")) {
            return HttpResponse{500, "boom"};
        }
        return completion_response(fixture_answer(p));
    };
    CHECK(h.run({"extract", "--corpus", corpus_path(), "--mode", "live", "--max-attempts", "3", "--out",
                 h.out_dir().string()}) == cli::kExitPartial);
    const auto rec = nlohmann::json::parse(slurp(h.out_dir() / "extractions" / "whs-05.json"));
    CHECK(rec["status"] == "failed");
    CHECK(rec["error"].get<std::string>().find("after 3 attempts") != std::string::npos);
    CHECK(h.err.str().find("whs-05") != std::string::npos);

    // Scored as an empty plan; the run is flagged partial.
    CHECK(h.run({"score", "--corpus", corpus_path(), "--out", h.out_dir().string()}) == cli::kExitPartial);
    CHECK(slurp(h.out_dir() / "score.json") == slurp(kFixtures / "expected_score.json"));
}

TEST_CASE("authentication failure aborts the run and names the variable") {
    Harness h;
    h.service.respond = [](const std::string&, int) { return HttpResponse{401, "bad key"}; };
    CHECK(h.run({"extract", "--corpus", corpus_path(), "--mode", "live", "--out", h.out_dir().string()}) ==
          cli::kExitConfig);
    CHECK(h.err.str().find(kApiKeyEnv) != std::string::npos);
    CHECK(h.service.requests <= 4);
    CHECK(h.sleeps.empty());

    Harness none;
    none.key.reset();
    CHECK(none.run({"extract", "--corpus", corpus_path(), "--mode", "live"}) == cli::kExitConfig);
    CHECK(none.err.str().find(kApiKeyEnv) != std::string::npos);
    CHECK(none.service.factory_calls == 0);
}

TEST_CASE("record mode fills a cache that replay then serves") {
    Harness h;
    const auto cache = h.dir.path / "recorded.jsonl";
    REQUIRE(h.run({"extract", "--corpus", corpus_path(), "--mode", "record", "--cache", cache.string(), "--out",
                   (h.dir.path / "a").string()}) == cli::kExitOk);
    CHECK(h.service.requests == 6);
    CHECK(lines_of(slurp(cache)).size() == 7);

    REQUIRE(h.run({"extract", "--corpus", corpus_path(), "--mode", "record", "--cache", cache.string(), "--out",
                   (h.dir.path / "b").string()}) == cli::kExitOk);
    // Recording always asks the service; entries are replaced, not duplicated.
    CHECK(h.service.requests == 12);
    CHECK(lines_of(slurp(cache)).size() == 7);

    Harness replay;
    REQUIRE(replay.run({"extract", "--corpus", corpus_path(), "--cache", cache.string(), "--out",
                        (h.dir.path / "c").string()}) == cli::kExitOk);
    CHECK(replay.service.factory_calls == 0);
    for (const auto& entry : fs::directory_iterator(h.dir.path / "a" / "extractions")) {
        const auto first = nlohmann::json::parse(slurp(entry.path()));
        const auto again = nlohmann::json::parse(slurp(h.dir.path / "c" / "extractions" / entry.path().filename()));
        CHECK(first["completion"] == again["completion"]);
    }
}

TEST_CASE("score reproduces the hand-computed report") {
    Harness h;
    REQUIRE(h.run(replay_args("extract", h)) == cli::kExitOk);
    REQUIRE(h.run({"score", "--corpus", corpus_path(), "--dataset", "WHS", "--out", h.out_dir().string()}) ==
            cli::kExitOk);
    CHECK(slurp(h.out_dir() / "score.json") == slurp(kFixtures / "expected_score.json"));

    const auto table = slurp(h.out_dir() / "score_table.txt");
    CHECK(table.find("83.33") != std::string::npos);
    CHECK(table.find("80.00") != std::string::npos);
    CHECK(h.out.str().find(table) != std::string::npos);

    const auto rows = lines_of(slurp(h.out_dir() / "per_text.jsonl"));
    REQUIRE(rows.size() == 6);
    const auto row = nlohmann::json::parse(rows[3]);
    CHECK(row["id"] == "whs-04");
    CHECK(row["name_precision"].get<double>() == doctest::Approx(2.0 / 3.0));
    CHECK(row["arg_f1"].get<double>() == doctest::Approx(0.4));
    CHECK_FALSE(row.contains("order"));
}

TEST_CASE("score with optional_lenient drops the unmatched optional slot") {
    Harness h;
    REQUIRE(h.run(replay_args("extract", h)) == cli::kExitOk);
    REQUIRE(h.run({"score", "--corpus", corpus_path(), "--optional-lenient", "--out", h.out_dir().string()}) ==
            cli::kExitOk);
    const auto j = nlohmann::json::parse(slurp(h.out_dir() / "score.json"));
    CHECK(j["name_total_truth"] == 12);
    CHECK(j["name_f1"].get<double>() == doctest::Approx(20.0 / 23.0));
}

TEST_CASE("perfect extraction records score 1.0") {
    Harness h;
    const auto records = h.dir.path / "perfect";
    const auto corpus = load_corpus(corpus_path(), "");
    for (const auto& t : corpus) {
        nlohmann::json plan = nlohmann::json::array();
        for (const auto& a : reference_plan(t).actions) {
            plan.push_back({{"name", a.name}, {"args", a.args}});
        }
        spit(records / cli::record_file_name(t.id), nlohmann::json{{"test_id", t.id}, {"plan", plan}}.dump());
    }
    REQUIRE(h.run({"score", "--corpus", corpus_path(), "--extractions", records.string(), "--out",
                   h.out_dir().string()}) == cli::kExitOk);
    const auto j = nlohmann::json::parse(slurp(h.out_dir() / "score.json"));
    CHECK(j["name_f1"] == 1.0);
    CHECK(j["arg_f1"] == 1.0);
}

TEST_CASE("score input errors") {
    Harness h;
    fs::create_directories(h.dir.path / "empty");
    CHECK(h.run({"score", "--corpus", corpus_path(), "--extractions", (h.dir.path / "empty").string(), "--out",
                 h.out_dir().string()}) == cli::kExitConfig);
    CHECK(h.err.str().find("no extraction records") != std::string::npos);

    const auto partial = h.dir.path / "partial";
    spit(partial / "whs-01.json", R"J({"test_id":"whs-01","completion":"click(start)"})J");
    spit(partial / "whs-02.json", R"J({"test_id":"whs-02","completion":""})J");
    CHECK(h.run({"score", "--corpus", corpus_path(), "--extractions", partial.string(), "--out",
                 h.out_dir().string()}) == cli::kExitConfig);
    CHECK(h.err.str().find("whs-03, whs-04, whs-05, whs-06") != std::string::npos);
    CHECK_FALSE(fs::exists(h.out_dir() / "score.json"));
}

TEST_CASE("per-text rows carry order agreement when ranks are explicit") {
    Harness h;
    REQUIRE(h.run({"score", "--corpus", (kFixtures / "ordering.jsonl").string(), "--extractions",
                   (kFixtures / "ordering_extractions").string(), "--out", h.out_dir().string()}) == cli::kExitOk);
    const auto rows = lines_of(slurp(h.out_dir() / "per_text.jsonl"));
    REQUIRE(rows.size() == 3);
    for (const auto& line : rows) {
        const auto row = nlohmann::json::parse(line);
        CAPTURE(row["id"]);
        REQUIRE(row.contains("order"));
        CHECK(row["order"]["kendall_tau"] == 1.0);
        CHECK(row["order"]["exact_order_match"] == true);
        CHECK(row["name_f1"] == 1.0);
    }
}

TEST_CASE("sweep over all shot counts") {
    Harness h;
    REQUIRE(h.run(replay_args("sweep", h)) == cli::kExitOk);
    const auto rows = lines_of(slurp(h.out_dir() / "sweep.tsv"));
    REQUIRE(rows.size() == 5);
    CHECK(rows[0] == "shots\tstatus\tname_f1\targ_f1");
    for (int s = 1; s <= 4; ++s) {
        CHECK(rows[static_cast<std::size_t>(s)] == std::to_string(s) + "\tok\t0.8333\t0.8000");
        CHECK(fs::exists(h.out_dir() / ("shots-" + std::to_string(s)) / "score.json"));
    }
    CHECK(h.service.factory_calls == 0);
    CHECK(slurp(h.out_dir() / "shots-2" / "score.json") == slurp(kFixtures / "expected_score.json"));
}

TEST_CASE("sweep with a single shot count") {
    Harness h;
    auto args = replay_args("sweep", h);
    args.insert(args.end(), {"--shots-list", "2"});
    REQUIRE(h.run(args) == cli::kExitOk);
    CHECK(lines_of(slurp(h.out_dir() / "sweep.tsv")).size() == 2);
    CHECK_FALSE(fs::exists(h.out_dir() / "shots-1"));

    auto bad = replay_args("sweep", h);
    bad.insert(bad.end(), {"--shots-list", "2,7"});
    CHECK(h.run(bad) == cli::kExitConfig);
}

TEST_CASE("sweep marks a shot count without cached completions as failed") {
    Harness h;
    const auto corpus = load_corpus(corpus_path(), "");
    std::vector<std::string> three_shot;
    for (const auto& t : corpus) {
        const auto shots = select_shots(corpus, {3, 0}, t.id);
        three_shot.push_back(prompt_digest(render_prompt(shots, t, std::nullopt).rendered, CompletionParams{}));
    }
    std::string kept;
    std::size_t dropped = 0;
    for (const auto& line : lines_of(slurp(kFixtures / "completions.jsonl"))) {
        const auto j = nlohmann::json::parse(line);
        if (j.contains("prompt_digest") &&
            std::find(three_shot.begin(), three_shot.end(), j["prompt_digest"]) != three_shot.end()) {
            ++dropped;
            continue;
        }
        kept += line + "\n";
    }
    REQUIRE(dropped == 6);
    const auto cache = h.dir.path / "no-three.jsonl";
    spit(cache, kept);

    CHECK(h.run({"sweep", "--corpus", corpus_path(), "--cache", cache.string(), "--out", h.out_dir().string()}) ==
          cli::kExitPartial);
    const auto rows = lines_of(slurp(h.out_dir() / "sweep.tsv"));
    REQUIRE(rows.size() == 5);
    CHECK(rows[3] == "3\tfailed\tnan\tnan");
    CHECK(rows[4] == "4\tok\t0.8333\t0.8000");
    CHECK(h.service.requests == 0);
}

TEST_CASE("sweep aborts entirely on an authentication failure") {
    Harness h;
    h.service.respond = [](const std::string&, int) { return HttpResponse{403, "forbidden"}; };
    CHECK(h.run({"sweep", "--corpus", corpus_path(), "--mode", "live", "--out", h.out_dir().string()}) ==
          cli::kExitConfig);
    CHECK_FALSE(fs::exists(h.out_dir() / "sweep.tsv"));
}

TEST_CASE("record file names are sanitized") {
    CHECK(cli::record_file_name("whs-01") == "whs-01.json");
    CHECK(cli::record_file_name("a/b c") == "a_b_c.json");
    CHECK(cli::record_file_name("..") == "_...json");
}
