#include "plan_harvest/cli.hpp"

#include "plan_harvest/notation.hpp"
#include "plan_harvest/ordering.hpp"
#include "plan_harvest/text.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace plan_harvest::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

// Auth failures stop the whole run, even inside a sweep.
class AbortError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<AnnotatedText> load_input(const RunConfig& config) {
    if (config.corpus_path.empty()) {
        throw ConfigError("--corpus is required");
    }
    if (!fs::exists(config.corpus_path)) {
        throw ConfigError("corpus file not found: " + config.corpus_path);
    }
    try {
        return load_corpus(config.corpus_path, config.dataset);
    } catch (const CorpusError& e) {
        throw ConfigError(e.what());
    }
}

std::string dataset_of(const RunConfig& config, const std::vector<AnnotatedText>& corpus) {
    if (!config.dataset.empty()) {
        return config.dataset;
    }
    return corpus.empty() ? std::string() : corpus.front().dataset;
}

std::optional<std::size_t> cap_for(const RunConfig& config, const std::vector<AnnotatedText>& corpus) {
    if (config.sentence_cap) {
        return *config.sentence_cap;
    }
    return default_sentence_cap(dataset_of(config, corpus));
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << content;
    if (!out.flush()) {
        throw ConfigError("failed writing " + path.string());
    }
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------
// Backend construction

struct BackendSetup {
    std::shared_ptr<CompletionBackend> backend;
    std::shared_ptr<const ReplayCache> replay_cache; // replay mode only
};

BackendSetup make_backend(const RunConfig& config, Environment& env) {
    BackendSetup setup;
    if (config.mode == BackendMode::Replay) {
        if (config.cache_path.empty()) {
            throw ConfigError("replay mode needs --cache");
        }
        if (!fs::exists(config.cache_path)) {
            throw ConfigError("completion cache not found: " + config.cache_path.string());
        }
        try {
            std::shared_ptr<const ReplayCache> cache = ReplayCache::load_existing(config.cache_path);
            setup.replay_cache = cache;
            setup.backend = std::make_shared<ReplayBackend>(cache);
        } catch (const BackendError& e) {
            throw ConfigError(e.what());
        }
        return setup;
    }

    if (config.mode == BackendMode::Record && config.cache_path.empty()) {
        throw ConfigError("record mode needs --cache");
    }
    const auto key = env.api_key ? env.api_key() : std::nullopt;
    if (!key) {
        throw ConfigError(std::string("live and record modes need credentials; set ") + kApiKeyEnv);
    }
    LiveOptions options;
    options.endpoint_path = config.endpoint;
    options.api_key = *key;
    options.max_in_flight = config.jobs;
    options.max_attempts = config.max_attempts;
    options.sleep = env.sleep;
    std::shared_ptr<Transport> transport = env.transport_factory(config.base_url, config.timeout);
    auto live = std::make_shared<LiveBackend>(std::move(transport), std::move(options));
    if (config.mode == BackendMode::Live) {
        setup.backend = live;
    } else {
        try {
            setup.backend = std::make_shared<RecordingBackend>(live, std::make_shared<ReplayCache>(config.cache_path));
        } catch (const BackendError& e) {
            throw ConfigError(e.what());
        }
    }
    return setup;
}

// ---------------------------------------------------------------------------
// Extraction

struct Extraction {
    const AnnotatedText* text = nullptr;
    std::optional<PromptBundle> bundle;
    std::string digest;
    std::string completion;
    ParseResult parsed;
    std::string error;
    bool ok = false;
};

ojson plan_json(const Plan& plan) {
    ojson actions = ojson::array();
    for (const auto& a : plan.actions) {
        ojson j;
        j["name"] = a.name;
        j["args"] = a.args;
        actions.push_back(std::move(j));
    }
    return actions;
}

ojson record_json(const Extraction& e) {
    ojson j;
    j["test_id"] = e.text->id;
    j["status"] = e.ok ? "ok" : "failed";
    if (!e.ok) {
        j["error"] = e.error;
    }
    j["example_ids"] = e.bundle ? e.bundle->example_ids : std::vector<std::string>{};
    j["prompt_digest"] = e.digest;
    j["token_estimate"] = e.bundle ? e.bundle->token_estimate : 0;
    j["truncation_applied"] = e.bundle ? e.bundle->truncation_applied : false;
    j["completion"] = e.completion;
    j["plan"] = plan_json(e.parsed.plan);
    j["plan_text"] = render_plan(e.parsed.plan);
    ojson spans = ojson::array();
    for (const auto& s : e.parsed.diagnostics.skipped_spans) {
        ojson sj;
        sj["start"] = s.start;
        sj["end"] = s.end;
        sj["reason"] = s.reason;
        spans.push_back(std::move(sj));
    }
    j["diagnostics"]["skipped_spans"] = std::move(spans);
    j["diagnostics"]["truncated"] = e.parsed.diagnostics.truncated;
    return j;
}

void check_file_names(const std::vector<AnnotatedText>& corpus) {
    std::map<std::string, std::string> seen;
    for (const auto& t : corpus) {
        auto [it, fresh] = seen.emplace(record_file_name(t.id), t.id);
        if (!fresh) {
            throw ConfigError("ids '" + it->second + "' and '" + t.id + "' map to the same record file");
        }
    }
}

// Returns kExitOk or kExitPartial; throws ConfigError / AbortError.
int extract_into(const RunConfig& config, Environment& env, const std::vector<AnnotatedText>& corpus,
                 const BackendSetup& setup, const fs::path& dir) {
    check_file_names(corpus);
    config.params.validate();
    const auto cap = cap_for(config, corpus);

    std::vector<Extraction> runs(corpus.size());
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        auto& run = runs[i];
        run.text = &corpus[i];
        try {
            const auto shots = select_shots(corpus, config.strategy, corpus[i].id);
            run.bundle = render_prompt(shots, corpus[i], cap);
            run.digest = prompt_digest(run.bundle->rendered, config.params);
        } catch (const PromptError& e) {
            run.error = e.what();
        }
    }

    if (setup.replay_cache) {
        std::vector<std::string> missing;
        for (const auto& run : runs) {
            if (run.bundle && !setup.replay_cache->contains(run.digest)) {
                missing.push_back(run.digest + " (" + run.text->id + ")");
            }
        }
        if (!missing.empty()) {
            throw ConfigError("completion cache " + setup.replay_cache->path().string() + " is missing " +
                              std::to_string(missing.size()) + " digest(s): " + text::join(missing, ", "));
        }
    }

    std::atomic<std::size_t> next{0};
    std::atomic<bool> aborted{false};
    std::mutex abort_mutex;
    std::string abort_message;
    const auto worker = [&] {
        while (!aborted) {
            const auto i = next.fetch_add(1);
            if (i >= runs.size()) {
                return;
            }
            auto& run = runs[i];
            if (!run.bundle) {
                continue;
            }
            try {
                run.completion = setup.backend->complete(run.bundle->rendered, config.params);
                run.parsed = parse_plan(run.completion);
                run.ok = true;
            } catch (const BackendError& e) {
                if (e.kind() == BackendError::Kind::Authentication) {
                    std::lock_guard lock(abort_mutex);
                    abort_message = e.what();
                    aborted = true;
                    return;
                }
                run.error = e.what();
            } catch (const std::exception& e) {
                run.error = e.what();
            }
        }
    };
    const auto workers = std::max<std::size_t>(1, std::min(config.jobs, runs.size()));
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(worker);
        }
    }
    if (aborted) {
        throw AbortError(abort_message);
    }

    std::size_t failed = 0;
    for (const auto& run : runs) {
        write_file(dir / record_file_name(run.text->id), record_json(run).dump(2) + "\n");
        if (!run.ok) {
            ++failed;
            env.err << "extraction failed for " << run.text->id << ": " << run.error << "\n";
        }
    }
    env.out << "extracted " << (runs.size() - failed) << "/" << runs.size() << " texts into " << dir.string()
            << "\n";
    return failed == 0 ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------
// Scoring

Plan plan_from_record(const nlohmann::json& rec, const std::string& source) {
    Plan plan;
    if (auto it = rec.find("plan"); it != rec.end()) {
        if (!it->is_array()) {
            throw ConfigError(source + ": 'plan' must be an array");
        }
        for (const auto& a : *it) {
            ActionInstance action;
            action.name = text::normalize_phrase(a.at("name").get<std::string>());
            for (const auto& arg : a.value("args", nlohmann::json::array())) {
                action.args.push_back(text::normalize_phrase(arg.get<std::string>()));
            }
            plan.actions.push_back(std::move(action));
        }
        return plan;
    }
    if (auto it = rec.find("completion"); it != rec.end()) {
        return parse_plan(it->get<std::string>()).plan;
    }
    throw ConfigError(source + ": record has neither 'plan' nor 'completion'");
}

std::string score_table(const std::string& engine, const std::string& dataset, const ScoreReport& r) {
    const auto model_width = std::max<std::size_t>(8, engine.size() + 2);
    const auto pad = [](std::string s, std::size_t w) {
        if (s.size() < w) {
            s.append(w - s.size(), ' ');
        }
        return s;
    };
    const auto tag = dataset.empty() ? std::string("-") : dataset;
    std::ostringstream os;
    os << pad("", model_width) << pad("Action names", 16) << "Action arguments\n";
    os << pad("Model", model_width) << pad(tag, 16) << tag << "\n";
    os << pad(engine, model_width) << pad(fixed(100.0 * r.name_f1, 2), 16) << fixed(100.0 * r.arg_f1, 2) << "\n";
    os << "\n";
    const auto counts = [&](const char* label, const MatchCounts& c, double p, double rc, double f) {
        os << label << ": right=" << c.total_right << " tagged=" << c.total_tagged << " truth=" << c.total_truth
           << "  P=" << fixed(p, 4) << " R=" << fixed(rc, 4) << " F1=" << fixed(f, 4) << "\n";
    };
    counts("names", r.name_counts, r.name_precision, r.name_recall, r.name_f1);
    counts("args ", r.arg_counts, r.arg_precision, r.arg_recall, r.arg_f1);
    return os.str();
}

struct ScoreOutcome {
    ScoreReport report;
    bool partial = false;
};

ScoreOutcome score_into(const RunConfig& config, Environment& env, const std::vector<AnnotatedText>& corpus,
                        const fs::path& records_dir, const fs::path& out_dir) {
    if (!fs::is_directory(records_dir) || fs::is_empty(records_dir)) {
        throw ConfigError("no extraction records in " + records_dir.string());
    }
    std::vector<std::string> missing;
    for (const auto& t : corpus) {
        if (!fs::exists(records_dir / record_file_name(t.id))) {
            missing.push_back(t.id);
        }
    }
    if (!missing.empty()) {
        throw ConfigError("missing extraction records for: " + text::join(missing, ", "));
    }

    ScoreOutcome outcome;
    std::vector<std::pair<AnnotatedText, Plan>> pairs;
    std::string rows;
    for (const auto& t : corpus) {
        const auto path = records_dir / record_file_name(t.id);
        nlohmann::json rec;
        try {
            std::ifstream in(path, std::ios::binary);
            rec = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ": " + e.what());
        }
        if (rec.value("test_id", t.id) != t.id) {
            throw ConfigError(path.string() + ": test_id does not match '" + t.id + "'");
        }
        const bool ok = rec.value("status", "ok") == "ok";
        Plan plan;
        if (ok) {
            try {
                plan = plan_from_record(rec, path.string());
            } catch (const nlohmann::json::exception& e) {
                throw ConfigError(path.string() + ": " + e.what());
            }
        } else {
            outcome.partial = true;
        }

        const auto per_text = score_text(t, plan, config.scoring);
        ojson row;
        row["id"] = t.id;
        row["status"] = ok ? "ok" : "failed";
        const auto per_text_json = to_json(per_text);
        for (const auto& [k, v] : per_text_json.items()) {
            if (k.find("total") == std::string::npos) {
                row[k] = v;
            }
        }
        if (t.explicit_order) {
            row["order"] = to_json(order_agreement(t.gold, plan));
        }
        rows += row.dump() + "\n";
        pairs.emplace_back(t, std::move(plan));
    }
    outcome.report = score_corpus(pairs, config.scoring);

    const auto table = score_table(config.params.engine, dataset_of(config, corpus), outcome.report);
    write_file(out_dir / "score.json", to_json(outcome.report).dump(2) + "\n");
    write_file(out_dir / "per_text.jsonl", rows);
    write_file(out_dir / "score_table.txt", table);
    env.out << table;
    return outcome;
}

template <class Fn>
int guarded(Environment& env, Fn&& fn) {
    try {
        return fn();
    } catch (const AbortError& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ConfigError& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const CorpusError& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const PromptError& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BackendError& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::invalid_argument& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    }
}

} // namespace

std::string record_file_name(const std::string& id) {
    std::string name;
    for (const char c : id) {
        const bool safe = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '-' ||
                          c == '_' || c == '.';
        name.push_back(safe ? c : '_');
    }
    if (name.empty() || name.front() == '.') {
        name.insert(name.begin(), '_');
    }
    return name + ".json";
}

int cmd_stats(const RunConfig& config, Environment& env) {
    return guarded(env, [&] {
        const auto corpus = load_input(config);
        const auto stats = compute_stats(corpus);
        ojson j;
        j["dataset"] = dataset_of(config, corpus);
        j["labeled_texts"] = stats.labeled_texts;
        j["total_words"] = stats.total_words;
        j["action_name_rate"] = stats.action_name_rate;
        j["action_argument_rate"] = stats.action_argument_rate;
        write_file(config.out_dir / "stats.jsonl", j.dump() + "\n");
        env.out << "dataset               " << j["dataset"].get<std::string>() << "\n"
                << "labeled texts         " << stats.labeled_texts << "\n"
                << "total words           " << stats.total_words << "\n"
                << "action name rate (%)  " << fixed(stats.action_name_rate, 2) << "\n"
                << "action arg rate (%)   " << fixed(stats.action_argument_rate, 2) << "\n";
        return kExitOk;
    });
}

int cmd_extract(const RunConfig& config, Environment& env) {
    return guarded(env, [&] {
        const auto corpus = load_input(config);
        const auto setup = make_backend(config, env);
        return extract_into(config, env, corpus, setup, config.out_dir / "extractions");
    });
}

int cmd_score(const RunConfig& config, Environment& env) {
    return guarded(env, [&] {
        const auto corpus = load_input(config);
        const auto dir = config.extractions_dir.empty() ? config.out_dir / "extractions" : config.extractions_dir;
        const auto outcome = score_into(config, env, corpus, dir, config.out_dir);
        return outcome.partial ? kExitPartial : kExitOk;
    });
}

int cmd_sweep(const RunConfig& config, Environment& env) {
    return guarded(env, [&] {
        if (config.shots_list.empty()) {
            throw ConfigError("--shots-list is empty");
        }
        for (const int s : config.shots_list) {
            if (s < 1 || s > 4) {
                throw ConfigError("shot counts must be between 1 and 4, got " + std::to_string(s));
            }
        }
        const auto corpus = load_input(config);
        const auto setup = make_backend(config, env);

        std::string table = "shots\tstatus\tname_f1\targ_f1\n";
        bool any_failed = false;
        for (const int shots : config.shots_list) {
            auto run_config = config;
            run_config.strategy.shots = shots;
            const auto dir = config.out_dir / ("shots-" + std::to_string(shots));
            std::string status = "ok";
            std::optional<ScoreReport> report;
            try {
                if (extract_into(run_config, env, corpus, setup, dir / "extractions") != kExitOk) {
                    status = "partial";
                }
                report = score_into(run_config, env, corpus, dir / "extractions", dir).report;
            } catch (const ConfigError& e) {
                env.err << "sweep: " << shots << "-shot run failed: " << e.what() << "\n";
                status = "failed";
            } catch (const PromptError& e) {
                env.err << "sweep: " << shots << "-shot run failed: " << e.what() << "\n";
                status = "failed";
            }
            any_failed = any_failed || status != "ok";
            table += std::to_string(shots) + "\t" + status + "\t" + (report ? fixed(report->name_f1, 4) : "nan") +
                     "\t" + (report ? fixed(report->arg_f1, 4) : "nan") + "\n";
        }
        write_file(config.out_dir / "sweep.tsv", table);
        env.out << table;
        return any_failed ? kExitPartial : kExitOk;
    });
}

int run(const std::vector<std::string>& args, Environment& env) {
    CLI::App app{"plan-harvest: few-shot plan extraction and scoring harness", "plan-harvest"};
    app.require_subcommand(1);

    RunConfig config;
    int cap = -1;
    std::string mode = "replay";
    std::string out_dir = config.out_dir.string();
    std::string cache;
    std::string extractions;
    int timeout_ms = static_cast<int>(config.timeout.count());

    const auto add_common = [&](CLI::App* cmd, bool runs_backend) {
        cmd->add_option("--corpus", config.corpus_path, "Canonical corpus file (one JSON record per line)")
            ->required();
        cmd->add_option("--dataset", config.dataset, "Dataset tag records must carry (WHS, CT, WHG, ...)");
        cmd->add_option("--out", out_dir, "Output directory")->capture_default_str();
        if (!runs_backend) {
            return;
        }
        cmd->add_option("--shots", config.strategy.shots, "Few-shot examples per prompt (1-4)")
            ->check(CLI::Range(1, 4))
            ->capture_default_str();
        cmd->add_option("--seed", config.strategy.seed, "Seed for random shot draws")->capture_default_str();
        cmd->add_option("--cap", cap, "Sentences kept per text (0 = no cap; default per dataset)")
            ->check(CLI::NonNegativeNumber);
        cmd->add_option("--mode", mode, "Completion backend")
            ->check(CLI::IsMember({"live", "replay", "record"}))
            ->capture_default_str();
        cmd->add_option("--cache", cache, "Completion cache file (replay/record)");
        cmd->add_option("--engine", config.params.engine, "Model identifier")->capture_default_str();
        cmd->add_option("--max-tokens", config.params.max_tokens)->capture_default_str();
        cmd->add_option("--temperature", config.params.temperature)->capture_default_str();
        cmd->add_option("--top-p", config.params.top_p)->capture_default_str();
        cmd->add_option("--freq-penalty", config.params.frequency_penalty)->capture_default_str();
        cmd->add_option("--pres-penalty", config.params.presence_penalty)->capture_default_str();
        cmd->add_option("--best-of", config.params.best_of)->capture_default_str();
        cmd->add_option("--base-url", config.base_url, "Completion API base URL")->capture_default_str();
        cmd->add_option("--endpoint", config.endpoint, "Completion endpoint path")->capture_default_str();
        cmd->add_option("--jobs", config.jobs, "Maximum requests in flight")->capture_default_str();
        cmd->add_option("--timeout-ms", timeout_ms, "Per-request timeout")->capture_default_str();
        cmd->add_option("--max-attempts", config.max_attempts, "Attempts per request")->capture_default_str();
    };
    const auto add_scoring = [&](CLI::App* cmd) {
        cmd->add_flag("--optional-lenient", config.scoring.optional_lenient,
                      "Drop unmatched optional actions from the ground-truth count");
    };

    auto* stats = app.add_subcommand("stats", "Dataset statistics");
    add_common(stats, false);

    auto* extract = app.add_subcommand("extract", "Prompt, complete and parse every text");
    add_common(extract, true);

    auto* score = app.add_subcommand("score", "Score extraction records against the gold plans");
    add_common(score, false);
    score->add_option("--engine", config.params.engine, "Model name shown in the report")->capture_default_str();
    score->add_option("--extractions", extractions, "Extraction record directory (default OUT/extractions)");
    add_scoring(score);

    auto* sweep = app.add_subcommand("sweep", "Extract and score for several shot counts");
    add_common(sweep, true);
    sweep->add_option("--shots-list", config.shots_list, "Shot counts to run")->delimiter(',')->capture_default_str();
    add_scoring(sweep);

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::CallForHelp&) {
        env.out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        env.out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        env.err << "error: " << e.what() << "\n";
        return kExitConfig;
    }

    config.out_dir = out_dir;
    config.cache_path = cache;
    config.extractions_dir = extractions;
    config.timeout = std::chrono::milliseconds(timeout_ms);
    if (cap == 0) {
        config.sentence_cap = std::optional<std::size_t>{};
    } else if (cap > 0) {
        config.sentence_cap = std::optional<std::size_t>{static_cast<std::size_t>(cap)};
    }
    config.mode = mode == "live" ? BackendMode::Live : mode == "record" ? BackendMode::Record : BackendMode::Replay;

    if (stats->parsed()) return cmd_stats(config, env);
    if (extract->parsed()) return cmd_extract(config, env);
    if (score->parsed()) return cmd_score(config, env);
    return cmd_sweep(config, env);
}

} // namespace plan_harvest::cli
