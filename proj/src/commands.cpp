// Copyright (c) 2026, The cptkit Authors
// SPDX-License-Identifier: Apache-2.0

#include "cptkit/commands.hpp"

#include <unistd.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "cptkit/digest.hpp"

namespace cptkit {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code_for(ErrorCode code) noexcept {
    switch (code) {
        case ErrorCode::Io:
        case ErrorCode::MissingInventory:
        case ErrorCode::MissingDocument:
            return 3;
        case ErrorCode::UnreachableTarget:
            return 4;
        default:
            return 2;
    }
}

std::string error_record(ErrorCode code, std::string_view message) {
    return json{{"error", error_name(code)}, {"exit_code", exit_code_for(code)}, {"message", message}}.dump();
}

namespace {

// Outputs are staged in memory and committed once every computation has succeeded.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : mDir(std::move(dir)) {}

    void add(const std::string& name, std::string content) { mFiles.emplace_back(name, std::move(content)); }

    [[nodiscard]] json digests() const {
        json j = json::object();
        for (const auto& [name, content] : mFiles) {
            j[name] = sha256_hex(content);
        }
        return j;
    }

    void commit() const {
        std::error_code ec;
        fs::create_directories(mDir, ec);
        if (ec) {
            throw Error(ErrorCode::Io, fmt::format("cannot create output directory '{}': {}", mDir.string(), ec.message()));
        }
        for (const auto& [name, content] : mFiles) {
            const auto target = mDir / name;
            const auto tmp = mDir / fmt::format(".{}.tmp.{}", name, ::getpid());
            {
                std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
                f.write(content.data(), static_cast<std::streamsize>(content.size()));
                if (!f) {
                    throw Error(ErrorCode::Io, fmt::format("cannot write '{}'", tmp.string()));
                }
            }
            fs::rename(tmp, target, ec);
            if (ec) {
                fs::remove(tmp, ec);
                throw Error(ErrorCode::Io, fmt::format("cannot rename into '{}'", target.string()));
            }
        }
    }

private:
    fs::path mDir;
    std::vector<std::pair<std::string, std::string>> mFiles;
};

json epoch_json(const EpochReport& report) {
    json entries = json::array();
    for (const auto& e : report.entries) {
        entries.push_back({{"source", e.source},
                           {"weight", e.weight},
                           {"phase_tokens_assigned", e.phase_tokens_assigned},
                           {"epochs", e.epochs}});
    }
    return {{"phase_tokens", report.phase_tokens}, {"entries", entries}};
}

std::string read_text(const fs::path& path, ErrorCode missing = ErrorCode::Io) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(missing, fmt::format("cannot open '{}'", path.string()));
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::set<std::string> plan_sources(const BlendPlan& plan) {
    std::set<std::string> names;
    for (const auto* phase : {&plan.gb, &plan.qb}) {
        for (const auto& [name, _] : phase->weights()) {
            names.insert(name);
        }
    }
    return names;
}

}  // namespace

json PlanReport::to_json() const {
    json curve = json::array();
    for (const auto& [t, lr] : lr_curve) {
        curve.push_back({t, lr});
    }
    return {{"format", "cptkit-plan"},
            {"version", 1},
            {"config_digest", config_digest},
            {"plan_digest", plan_digest},
            {"switch_token", switch_token},
            {"switch_lr", switch_lr},
            {"gb_tokens", gb_tokens},
            {"qb_tokens", qb_tokens},
            {"epochs", {{"gb", epoch_json(gb_epochs)}, {"qb", epoch_json(qb_epochs)}}},
            {"lr_curve_points", lr_curve.size()},
            {"notes", notes},
            {"plan", plan}};
}

std::string PlanReport::digest() const { return sha256_hex(to_json().dump()); }

PlanReport cmd_plan(const RunConfig& config, const fs::path& out) {
    const auto resolved = resolve_plan(config);
    const auto& plan = resolved.plan;
    PlanReport r;
    r.config_digest = config.digest;
    r.plan_digest = plan_digest(plan);
    r.switch_token = plan.switch_token;
    r.switch_lr = resolved.switch_solution.achieved_lr;
    r.gb_tokens = plan.gb_tokens();
    r.qb_tokens = plan.qb_tokens();
    r.gb_epochs = epochs(plan.gb, resolved.registry, r.gb_tokens);
    r.qb_epochs = epochs(plan.qb, resolved.registry, r.qb_tokens);
    r.lr_curve = sample_curve(plan.schedule, config.lr_curve_stride);
    r.notes = resolved.notes;
    r.plan = to_json(plan);
    r.plan["sources"] = to_json(resolved.registry);

    OutputSet files(out);
    std::string curve;
    for (const auto& [t, lr] : r.lr_curve) {
        curve += json{{"token_index", t}, {"lr", lr}}.dump();
        curve += '\n';
    }
    std::string epoch_lines;
    for (const auto& [label, report] : {std::pair{"GB", &r.gb_epochs}, std::pair{"QB", &r.qb_epochs}}) {
        for (const auto& e : report->entries) {
            epoch_lines += json{{"phase", label},
                                {"source", e.source},
                                {"weight", e.weight},
                                {"phase_tokens_assigned", e.phase_tokens_assigned},
                                {"epochs", e.epochs}}
                               .dump();
            epoch_lines += '\n';
        }
    }
    files.add("lr_curve.jsonl", std::move(curve));
    files.add("epochs.jsonl", std::move(epoch_lines));
    auto report = r.to_json();
    report["report_digest"] = r.digest();
    report["outputs"] = files.digests();
    files.add("plan.json", report.dump(2) + "\n");
    files.commit();
    return r;
}

ResolvedPlan validate(const RunConfig& config) {
    auto resolved = resolve_plan(config);
    (void)load_inventories(config);
    return resolved;
}

SampleReport cmd_sample(const RunConfig& config, const fs::path& out, double tolerance) {
    const auto resolved = resolve_plan(config);
    const auto names = plan_sources(resolved.plan);
    const auto docs = load_inventories(config, {names.begin(), names.end()});

    SampleReport r;
    r.manifest = generate_manifest(resolved.plan, docs, config.seed, config.sampler);
    r.proportions = verify_proportions(r.manifest, resolved.plan, tolerance);

    json phases = json::array();
    for (const auto& p : r.proportions.phases) {
        json sources = json::array();
        for (const auto& s : p.sources) {
            sources.push_back({{"source", s.source},
                               {"weight", s.weight},
                               {"emitted", s.emitted},
                               {"share", s.share},
                               {"deviation", s.deviation},
                               {"pass", s.pass}});
        }
        phases.push_back({{"phase", to_string(p.phase)},
                          {"phase_tokens", p.phase_tokens},
                          {"max_doc_len", p.max_doc_len},
                          {"allowed", p.allowed},
                          {"sources", sources}});
    }
    const json proportions{{"config_digest", config.digest},
                           {"tolerance", tolerance},
                           {"pass", r.proportions.pass},
                           {"max_deviation", r.proportions.max_deviation},
                           {"failures", r.proportions.failures},
                           {"phases", phases}};

    OutputSet files(out);
    std::ostringstream manifest;
    write_manifest(manifest, r.manifest);
    files.add("manifest.jsonl", manifest.str());
    files.add("proportions.json", proportions.dump(2) + "\n");
    const json summary{{"format", "cptkit-sample"},
                       {"config_digest", config.digest},
                       {"plan_digest", r.manifest.header.plan_digest},
                       {"registry_digest", r.manifest.header.registry_digest},
                       {"seed", config.seed},
                       {"records", r.manifest.records.size()},
                       {"manifest_digest", manifest_digest(r.manifest)},
                       {"outputs", files.digests()}};
    files.add("sample.json", summary.dump(2) + "\n");
    files.commit();
    return r;
}

QualityManifest cmd_score(const RunConfig& config, const ScoreInputs& inputs, const fs::path& out) {
    (void)resolve_plan(config);
    const auto& q = config.quality;

    // Corpus first: an empty corpus fails before any model work.
    std::vector<std::pair<std::string, Sentences>> documents;
    std::map<std::string, std::string> groups;
    {
        std::istringstream in(read_text(inputs.corpus));
        std::string line;
        std::size_t lineno = 0;
        std::set<std::string> seen;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.find_first_not_of(" \t\r") == std::string::npos) {
                continue;
            }
            json j;
            try {
                j = json::parse(line);
                auto id = j.at("id").get<std::string>();
                const auto text = j.at("text").get<std::string>();
                if (!seen.insert(id).second) {
                    throw Error(ErrorCode::InvalidParameter, fmt::format("duplicate document id '{}'", id));
                }
                Sentences sentences = q.per_line ? tokenize_lines(text, q.lowercase) : Sentences{tokenize(text, q.lowercase)};
                if (j.contains("group")) {
                    groups[id] = j.at("group").get<std::string>();
                }
                documents.emplace_back(std::move(id), std::move(sentences));
            } catch (const json::exception& e) {
                throw Error(ErrorCode::Format, fmt::format("{}:{}: {}", inputs.corpus.string(), lineno, e.what()));
            }
        }
    }
    if (documents.empty()) {
        throw Error(ErrorCode::EmptyCorpus, fmt::format("corpus '{}' has no documents", inputs.corpus.string()));
    }

    NgramModel model;
    if (inputs.model) {
        std::istringstream in(read_text(*inputs.model));
        model = read_model(in);
        if (model.options().order != q.ngram.order || model.options().sentence_end != q.ngram.sentence_end) {
            throw Error(ErrorCode::DigestMismatch,
                        fmt::format("model '{}' has order {} but the config asks for {}", inputs.model->string(),
                                    model.options().order, q.ngram.order));
        }
    } else {
        if (q.reference_corpus.empty()) {
            throw Error(ErrorCode::InvalidParameter, "no --model given and quality.reference_corpus is not configured");
        }
        model = train_ngram(tokenize_lines(read_text(q.reference_corpus), q.lowercase), q.ngram);
    }
    if (!q.model_digest.empty() && model.digest() != q.model_digest) {
        throw Error(ErrorCode::DigestMismatch,
                    fmt::format("model digest {} does not match configured {}", model.digest(), q.model_digest));
    }

    auto scores = score_documents(model, documents, q.threads);
    for (auto& s : scores) {
        if (auto it = groups.find(s.id); it != groups.end()) {
            s.group = it->second;
        }
    }
    auto manifest = q.per_group ? quartile_filter_grouped(scores, q.quartile) : quartile_filter(scores, q.quartile);
    manifest.model_digest = model.digest();

    OutputSet files(out);
    std::ostringstream model_bytes;
    write_model(model_bytes, model);
    files.add("model.bin", model_bytes.str());
    std::ostringstream manifest_text;
    write_quality_manifest(manifest_text, manifest);
    files.add("quality_manifest.jsonl", manifest_text.str());
    const json summary{{"format", "cptkit-score"},
                       {"config_digest", config.digest},
                       {"model_digest", manifest.model_digest},
                       {"quartile", manifest.quartile},
                       {"threshold", manifest.threshold},
                       {"documents", manifest.scores.size()},
                       {"selected", manifest.selected.size()},
                       {"manifest_digest", quality_manifest_digest(manifest)},
                       {"outputs", files.digests()}};
    files.add("score.json", summary.dump(2) + "\n");
    files.commit();
    return manifest;
}

MiningResult cmd_mine(const RunConfig& config, const MineInputs& inputs, const fs::path& out) {
    const auto resolved = resolve_plan(config);
    const auto& registry = resolved.registry;

    std::vector<std::string> corpus_sources;
    std::set<std::string> qa_sources;
    for (const auto& s : config.sources) {
        if (s.source.domain == Domain::QaCategory) {
            qa_sources.insert(s.source.name);
        } else if (!s.inventory.empty()) {
            corpus_sources.push_back(s.source.name);
        }
    }
    if (corpus_sources.empty()) {
        throw Error(ErrorCode::MissingInventory, "mining needs at least one non-QA source with an inventory");
    }
    const auto docs = index_documents(load_inventories(config, corpus_sources), qa_sources);

    const auto qa = read_embeddings_file(inputs.qa_embeddings, default_ids_path(inputs.qa_embeddings));
    const auto corpus = read_embeddings_file(inputs.corpus_embeddings, default_ids_path(inputs.corpus_embeddings));
    const auto result = mine(qa, corpus, config.mining.k, docs, config.mining.metric, config.mining.threads);
    const auto mined = emit_mined_blend(result, resolved.plan.qb, registry);

    OutputSet files(out);
    std::ostringstream neighbors;
    write_neighbors(neighbors, result);
    files.add("neighbors.jsonl", neighbors.str());
    std::ostringstream inventory;
    write_inventory(inventory, mined_documents(result, docs));
    files.add("mined.jsonl", inventory.str());

    json source{{"name", mined.mined_source.name},
                {"domain", to_string(mined.mined_source.domain)},
                {"token_count", mined.mined_source.token_count},
                {"inventory", "mined.jsonl"}};
    const json qb{{"config_digest", config.digest}, {"source", source}, {"qb", to_json(mined.phase)}, {"warnings", mined.warnings}};
    files.add("qb_mined.json", qb.dump(2) + "\n");
    const json summary{{"format", "cptkit-mine"},
                       {"config_digest", config.digest},
                       {"k", config.mining.k},
                       {"metric", config.mining.metric == Metric::Cosine ? "cosine" : "inner_product"},
                       {"queries", result.per_query.size()},
                       {"mined_documents", result.mined_set.size()},
                       {"mined_tokens", result.mined_tokens},
                       {"mined_set_digest", result.mined_set_digest()},
                       {"warnings", mined.warnings},
                       {"outputs", files.digests()}};
    files.add("mining.json", summary.dump(2) + "\n");
    files.commit();
    return result;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"cptkit: continued-pretraining data planning toolkit", "cptkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string preset;
    std::optional<std::uint64_t> seed;
    std::optional<double> switch_fraction;
    std::optional<double> quartile;
    std::optional<std::size_t> k;
    std::optional<std::string> total_tokens_text;
    double tolerance = 1e-3;
    std::string corpus_path;
    std::string model_path;
    std::string qa_path;
    std::string corpus_embeddings_path;

    const auto common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Run configuration (JSON)")->required();
        cmd->add_option("--preset", preset, "Preset layered under the config")->check(CLI::IsMember({"recipe"}));
        cmd->add_option("--seed", seed, "Sampler seed");
        cmd->add_option("--switch-fraction", switch_fraction, "Switch when LR reaches this fraction of its start");
        cmd->add_option("--total-tokens", total_tokens_text, "Continued-pretraining horizon in tokens");
        cmd->add_option("--quartile", quartile, "Fraction of lowest-perplexity documents kept");
        cmd->add_option("--k", k, "Neighbours per QA example");
    };
    const auto with_out = [&](CLI::App* cmd) {
        common(cmd);
        cmd->add_option("--out", out_dir, fmt::format("Output directory (default ${} or ./{})", kOutDirEnv, kDefaultOutDir));
    };

    auto* plan = app.add_subcommand("plan", "Resolve the schedule, switch token and blends; write reports");
    with_out(plan);
    auto* sample = app.add_subcommand("sample", "Write the token manifest for the planned run");
    with_out(sample);
    sample->add_option("--tolerance", tolerance, "Proportion check tolerance");
    auto* score = app.add_subcommand("score", "Score a corpus with the reference n-gram model and filter by quartile");
    with_out(score);
    score->add_option("--corpus", corpus_path, "Documents to score (JSONL with id, text, optional group)")->required();
    score->add_option("--model", model_path, "Cached model file");
    auto* mine_cmd = app.add_subcommand("mine", "Mine nearest-neighbour documents of the QA examples");
    with_out(mine_cmd);
    mine_cmd->add_option("--qa-embeddings", qa_path, "QA embedding file")->required();
    mine_cmd->add_option("--corpus-embeddings", corpus_embeddings_path, "Corpus embedding file")->required();
    auto* validate_cmd = app.add_subcommand("validate", "Check the configuration and inventories");
    common(validate_cmd);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << error_record(ErrorCode::InvalidParameter, e.what()) << '\n';
        return exit_code_for(ErrorCode::InvalidParameter);
    }

    try {
        ConfigOverrides overrides;
        if (!preset.empty()) {
            overrides.preset = preset;
        }
        overrides.seed = seed;
        overrides.switch_fraction = switch_fraction;
        overrides.quartile = quartile;
        overrides.k = k;
        if (total_tokens_text) {
            // Accepts "300000000000" as well as "300e9".
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(*total_tokens_text, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != total_tokens_text->size() || !(v >= 0.0) || v >= 1.8e19 || std::floor(v) != v) {
                throw Error(ErrorCode::InvalidParameter, fmt::format("--total-tokens '{}' is not a token count", *total_tokens_text));
            }
            overrides.total_tokens = static_cast<TokenCount>(v);
        }
        const auto config = load_config(config_path, overrides);

        fs::path out_path = out_dir;
        if (out_path.empty()) {
            const char* env = std::getenv(kOutDirEnv);
            out_path = (env != nullptr && *env != '\0') ? fs::path(env) : fs::path(kDefaultOutDir);
        }

        if (plan->parsed()) {
            const auto r = cmd_plan(config, out_path);
            out << json{{"command", "plan"},
                        {"config_digest", r.config_digest},
                        {"switch_token", r.switch_token},
                        {"gb_tokens", r.gb_tokens},
                        {"qb_tokens", r.qb_tokens},
                        {"report_digest", r.digest()},
                        {"notes", r.notes},
                        {"out", out_path.string()}}
                       .dump()
                << '\n';
        } else if (sample->parsed()) {
            const auto r = cmd_sample(config, out_path, tolerance);
            if (!r.proportions.pass) {
                err << json{{"warning", "proportions"}, {"failures", r.proportions.failures}}.dump() << '\n';
            }
            out << json{{"command", "sample"},
                        {"config_digest", config.digest},
                        {"records", r.manifest.records.size()},
                        {"manifest_digest", manifest_digest(r.manifest)},
                        {"proportions_pass", r.proportions.pass},
                        {"out", out_path.string()}}
                       .dump()
                << '\n';
        } else if (score->parsed()) {
            ScoreInputs inputs{corpus_path, std::nullopt};
            if (!model_path.empty()) {
                inputs.model = model_path;
            }
            const auto m = cmd_score(config, inputs, out_path);
            out << json{{"command", "score"},
                        {"config_digest", config.digest},
                        {"model_digest", m.model_digest},
                        {"documents", m.scores.size()},
                        {"selected", m.selected.size()},
                        {"manifest_digest", quality_manifest_digest(m)},
                        {"out", out_path.string()}}
                       .dump()
                << '\n';
        } else if (mine_cmd->parsed()) {
            const auto m = cmd_mine(config, {qa_path, corpus_embeddings_path}, out_path);
            out << json{{"command", "mine"},
                        {"config_digest", config.digest},
                        {"queries", m.per_query.size()},
                        {"mined_documents", m.mined_set.size()},
                        {"mined_tokens", m.mined_tokens},
                        {"out", out_path.string()}}
                       .dump()
                << '\n';
        } else {
            const auto r = validate(config);
            out << json{{"command", "validate"},
                        {"config_digest", config.digest},
                        {"switch_token", r.plan.switch_token},
                        {"notes", r.notes}}
                       .dump()
                << '\n';
        }
    } catch (const Error& e) {
        err << error_record(e.code(), e.what()) << '\n';
        return exit_code_for(e.code());
    } catch (const fs::filesystem_error& e) {
        err << error_record(ErrorCode::Io, e.what()) << '\n';
        return exit_code_for(ErrorCode::Io);
    } catch (const std::exception& e) {
        err << error_record(ErrorCode::InvalidParameter, e.what()) << '\n';
        return exit_code_for(ErrorCode::InvalidParameter);
    }
    return 0;
}

}  // namespace cptkit
