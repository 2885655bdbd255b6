#include "lsae/cli.hpp"

#include "lsae/autointerp.hpp"
#include "lsae/checkpoint.hpp"
#include "lsae/diagnostics.hpp"
#include "lsae/embedding_store.hpp"
#include "lsae/styling.hpp"
#include "lsae/train.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <optional>
#include <ostream>

namespace lsae::cli {

namespace {

using json = nlohmann::ordered_json;

InferenceMode parse_mode(const std::string& mode) {
    if (mode == "topk") return InferenceMode::PerSampleTopK;
    if (mode == "threshold") return InferenceMode::Threshold;
    throw DataError("unknown inference mode: " + mode);
}

json report_json(const DiagnosticsReport& r) {
    json j;
    j["r2"] = r.r2;
    j["mean_l0"] = r.mean_l0;
    j["dead_fraction"] = r.dead_fraction;
    j["stable_rank"] = r.stable_rank;
    j["frob_norm_sq"] = r.frob_norm_sq;
    j["spectral_norm"] = r.spectral_norm;
    return j;
}

json exemplar_json(const ExemplarSet& set) {
    json j;
    j["concept"] = set.index;
    j["k"] = set.k;
    auto entries = json::array();
    for (const auto& e : set.entries) {
        json item;
        item["id"] = e.id;
        item["uri"] = e.uri ? json(*e.uri) : json(nullptr);
        item["activation"] = e.activation;
        entries.push_back(std::move(item));
    }
    j["entries"] = std::move(entries);
    return j;
}

// Rows from a JSON-lines file of {"id", "uri"?, "embedding": [...]}.
EmbeddingDataset read_jsonl_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<float>> rows;
    std::vector<RecordMeta> manifest;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto where = path + ":" + std::to_string(lineno);
        try {
            const auto j = nlohmann::json::parse(line);
            RecordMeta rec;
            rec.row = rows.size();
            rec.id = j.at("id").get<std::string>();
            if (j.contains("uri") && !j["uri"].is_null()) rec.uri = j["uri"].get<std::string>();
            auto values = j.at("embedding").get<std::vector<double>>();
            std::vector<float> row;
            row.reserve(values.size());
            for (double v : values) {
                if (!std::isfinite(v)) throw DataError(where + ": non-finite embedding value");
                row.push_back(static_cast<float>(v));
            }
            if (!rows.empty() && row.size() != rows.front().size()) throw DataError(where + ": dimension mismatch");
            rows.push_back(std::move(row));
            manifest.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw DataError(where + ": " + e.what());
        }
    }
    if (rows.empty()) throw DataError(path + ": no embeddings");
    EmbeddingDataset ds;
    ds.dim = rows.front().size();
    ds.data.resize(static_cast<Index>(rows.size()), static_cast<Index>(ds.dim));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < ds.dim; ++c) ds.data(static_cast<Index>(i), static_cast<Index>(c)) = rows[i][c];
    ds.manifest = std::move(manifest);
    return ds;
}

EmbeddingDataset concat(const std::vector<EmbeddingDataset>& parts) {
    EmbeddingDataset out;
    out.dim = parts.front().dim;
    Index total = 0;
    for (const auto& p : parts) {
        if (p.dim != out.dim) throw DataError("inputs have different embedding dimensions");
        total += p.data.rows();
    }
    out.data.resize(total, static_cast<Index>(out.dim));
    Index at = 0;
    for (const auto& p : parts) {
        out.data.middleRows(at, p.data.rows()) = p.data;
        for (const auto& rec : p.manifest) out.manifest.push_back({out.manifest.size(), rec.id, rec.uri});
        at += p.data.rows();
    }
    return out;
}

struct IngestArgs {
    std::vector<std::string> inputs;
    std::string out;
    bool no_dedup = false;
};

struct TrainArgs {
    std::string data;
    std::string out;
    std::string history;
    std::string config;
    std::optional<Index> dict;
    std::optional<Index> k;
    std::optional<double> lr;
    std::optional<std::size_t> batch;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> warmup;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda;
    std::optional<double> beta1;
    std::optional<double> beta2;
    std::optional<double> weight_decay;
    std::optional<std::size_t> dead_window;
    std::optional<std::size_t> log_every;
    bool normalize = false;
    bool renorm = false;
};

struct ModelDataArgs {
    std::string model;
    std::string data;
    std::string mode = "topk";
    std::string out;
};

struct ProfileBuildArgs {
    std::string codes;
    double presence = kDefaultPresence;
    double strength = kDefaultStrength;
    std::string out;
};

struct ProfileDiffArgs {
    std::string a;
    std::string b;
};

struct SteerArgs {
    std::string model;
    std::vector<std::string> profiles;
    std::vector<double> weights;
    std::optional<Index> concept_index;
    std::string codes;
    std::string content;
    double alpha = kDefaultAlpha;
    std::string out;
};

struct InterpArgs {
    std::string codes;
    std::vector<Index> concepts;
    std::optional<std::size_t> top_n;
    std::size_t k = kDefaultExemplarCount;
    std::string endpoint;
    bool mock = false;
    long timeout_ms = 30000;
    std::size_t max_in_flight = 4;
    std::string out;
};

std::vector<Index> selected_concepts(const ConceptMatrix& codes, const InterpArgs& a) {
    if (!a.concepts.empty()) return a.concepts;
    return rank_by_mean_activation(codes, a.top_n.value_or(kDefaultRankedConcepts));
}

int do_ingest(const IngestArgs& a, std::ostream& out, std::ostream& err) {
    std::vector<EmbeddingDataset> parts;
    for (const auto& path : a.inputs) {
        const bool jsonl = path.size() >= 6 && path.substr(path.size() - 6) == ".jsonl";
        parts.push_back(jsonl ? read_jsonl_embeddings(path) : read_dataset(path));
        err << "[ingest] " << path << ": " << parts.back().count() << " rows\n";
    }
    auto merged = concat(parts);
    const auto before = merged.count();
    if (!a.no_dedup) merged = dedup(merged);
    write_dataset(merged, a.out);
    json j;
    j["count"] = merged.count();
    j["dim"] = merged.dim;
    j["dropped"] = before - merged.count();
    j["out"] = a.out;
    out << j.dump() << '\n';
    return kOk;
}

int do_train(const TrainArgs& a, std::ostream& out, std::ostream& err) {
    TrainConfig cfg;
    if (!a.config.empty()) apply_config_file(cfg, a.config);
    if (a.dict) cfg.dict_size = *a.dict;
    if (a.k) cfg.k = *a.k;
    if (a.lr) cfg.lr = *a.lr;
    if (a.batch) cfg.batch_size = *a.batch;
    if (a.epochs) cfg.epochs = *a.epochs;
    if (a.warmup) cfg.warmup_steps = *a.warmup;
    if (a.seed) cfg.seed = *a.seed;
    if (a.lambda) cfg.lambda = *a.lambda;
    if (a.beta1) cfg.beta1 = *a.beta1;
    if (a.beta2) cfg.beta2 = *a.beta2;
    if (a.weight_decay) cfg.weight_decay = *a.weight_decay;
    if (a.dead_window) cfg.dead_window_batches = *a.dead_window;
    if (a.log_every) cfg.log_every = *a.log_every;
    if (a.normalize) cfg.normalize_inputs = true;
    if (a.renorm) cfg.renormalize_decoder = true;
    validate(cfg);

    const auto dataset = read_dataset(a.data);
    err << "[train] " << dataset.count() << " x " << dataset.dim << ", M=" << (cfg.dict_size ? cfg.dict_size : 16 * static_cast<Index>(dataset.dim))
        << " k=" << cfg.k << " lr=" << cfg.lr << " B=" << cfg.batch_size << " E=" << cfg.epochs << '\n';
    const auto progress_every = std::max<std::size_t>(cfg.log_every, 100);
    const auto result = train(dataset, cfg, [&](const StepRecord& s) {
        if (s.step % progress_every == 0)
            err << "[train] step " << s.step << " loss " << s.total << " mse " << s.mse << " dead " << s.dead_count << '\n';
    });
    save_checkpoint(result.model, a.out);
    if (!a.history.empty()) write_history(result.history, a.history);

    json j;
    j["out"] = a.out;
    j["steps"] = result.history.steps.empty() ? 0 : result.history.steps.back().step + 1;
    j["theta"] = result.model.theta;
    j["dict_size"] = result.model.dict_size;
    j["k"] = result.model.k;
    j["final"] = result.history.final ? report_json(*result.history.final) : json(nullptr);
    j["dead_fraction_cumulative"] = result.history.dead_fraction_cumulative;
    out << j.dump() << '\n';
    return kOk;
}

int do_diag(const ModelDataArgs& a, std::ostream& out) {
    const auto model = load_checkpoint(a.model);
    const auto dataset = read_dataset(a.data);
    out << report_json(evaluate(model, dataset, parse_mode(a.mode))).dump() << '\n';
    return kOk;
}

int do_encode(const ModelDataArgs& a, std::ostream& out) {
    const auto model = load_checkpoint(a.model);
    const auto dataset = read_dataset(a.data);
    const auto codes = collect_codes(model, dataset, parse_mode(a.mode));
    save_concepts(codes, a.out);
    json j;
    j["rows"] = codes.codes.rows();
    j["dict_size"] = codes.dict_size();
    j["mean_l0"] = mean_l0(codes.codes);
    j["out"] = a.out;
    out << j.dump() << '\n';
    return kOk;
}

int do_profile_build(const ProfileBuildArgs& a, std::ostream& out) {
    const auto codes = load_concepts(a.codes);
    const auto profile = build_profile(codes, a.presence, a.strength);
    save_profile(profile, a.out);
    json j;
    j["concepts"] = profile.values.size();
    j["presence_threshold"] = profile.presence_threshold;
    j["strength"] = profile.strength;
    j["references"] = profile.ref_ids.size();
    j["out"] = a.out;
    out << j.dump() << '\n';
    return kOk;
}

int do_profile_diff(const ProfileDiffArgs& a, std::ostream& out) {
    const auto report = profile_diff(load_profile(a.a), load_profile(a.b));
    json j;
    auto shared = json::array();
    for (const auto& s : report.shared) {
        json item;
        item["concept"] = s.index;
        item["value_a"] = s.value_a;
        item["value_b"] = s.value_b;
        item["delta"] = s.delta;
        shared.push_back(std::move(item));
    }
    auto pairs = [](const std::vector<std::pair<Index, double>>& v) {
        auto arr = json::array();
        for (const auto& [idx, val] : v) arr.push_back({idx, val});
        return arr;
    };
    j["shared"] = std::move(shared);
    j["only_a"] = pairs(report.only_a);
    j["only_b"] = pairs(report.only_b);
    out << j.dump() << '\n';
    return kOk;
}

int do_steer(const SteerArgs& a, std::ostream& out, std::ostream& err) {
    const auto model = load_checkpoint(a.model);
    StyleProfile profile;
    if (a.concept_index) {
        if (!a.profiles.empty()) throw DataError("--concept and --profile are mutually exclusive");
        if (a.codes.empty()) throw DataError("--concept requires --codes");
        profile = single_concept_profile(*a.concept_index, load_concepts(a.codes));
        if (a.alpha < kSingleConceptAlphaMin || a.alpha > kSingleConceptAlphaMax)
            err << "[steer] warning: alpha " << a.alpha << " is outside the usual single-concept range ["
                << kSingleConceptAlphaMin << ", " << kSingleConceptAlphaMax << "]\n";
    } else {
        if (a.profiles.empty()) throw DataError("steer needs --profile or --concept");
        if (!a.weights.empty() && a.weights.size() != a.profiles.size())
            throw DataError("--weight must be given once per --profile");
        std::vector<std::pair<StyleProfile, double>> weighted;
        for (std::size_t i = 0; i < a.profiles.size(); ++i)
            weighted.emplace_back(load_profile(a.profiles[i]), a.weights.empty() ? 1.0 : a.weights[i]);
        profile = weighted.size() == 1 && weighted.front().second == 1.0 ? weighted.front().first
                                                                          : compose_profiles(weighted);
    }
    const Vector<float> residual = decode_residual(model, profile);
    auto content = read_dataset(a.content);
    if (content.dim != static_cast<std::size_t>(model.dim_in)) throw DataError("content dimension does not match model");
    content.data = steer_rows(content.data, residual, a.alpha);
    write_dataset(content, a.out);

    json j;
    j["rows"] = content.count();
    j["alpha"] = a.alpha;
    j["residual_l2"] = residual.cast<double>().norm();
    j["profile_concepts"] = profile.values.size();
    j["out"] = a.out;
    out << j.dump() << '\n';
    return kOk;
}

int do_interp_exemplars(const InterpArgs& a, std::ostream& out) {
    const auto codes = load_concepts(a.codes);
    auto arr = json::array();
    for (Index j : selected_concepts(codes, a)) arr.push_back(exemplar_json(top_exemplars(codes, j, a.k)));
    json j;
    j["concepts"] = std::move(arr);
    out << j.dump() << '\n';
    return kOk;
}

int do_interp_label(const InterpArgs& a, std::ostream& out, std::ostream& err) {
    if (a.mock == !a.endpoint.empty()) throw DataError("interp-label needs exactly one of --mock or --endpoint");
    const auto codes = load_concepts(a.codes);
    std::vector<ExemplarSet> sets;
    std::size_t skipped = 0;
    for (Index j : selected_concepts(codes, a)) {
        auto set = top_exemplars(codes, j, a.k);
        if (set.entries.empty()) {
            ++skipped;
            continue;
        }
        sets.push_back(std::move(set));
    }
    std::unique_ptr<LabelClient> client;
    if (a.mock)
        client = std::make_unique<MockLabelClient>();
    else
        client = std::make_unique<HttpLabelClient>(a.endpoint, std::chrono::milliseconds(a.timeout_ms));
    err << "[interp-label] requesting " << sets.size() << " labels\n";
    const auto labels = request_labels(*client, sets, a.max_in_flight);
    export_labels(labels, a.out);
    json j;
    j["labeled"] = labels.size();
    j["skipped_inactive"] = skipped;
    j["source"] = to_string(client->source());
    j["out"] = a.out;
    out << j.dump() << '\n';
    return kOk;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Sparse-autoencoder style profiling and embedding steering", "sae-steer"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* s_ingest = app.add_subcommand("ingest", "Merge embedding files into one dataset (deduplicated by id/uri)");
    s_ingest->add_option("--input", ingest.inputs, "Input .emb file or JSON-lines file of {id, uri, embedding}")->required();
    s_ingest->add_option("--out", ingest.out, "Output embedding file")->required();
    s_ingest->add_flag("--no-dedup", ingest.no_dedup, "Keep duplicate ids/uris");

    TrainArgs tr;
    auto* s_train = app.add_subcommand("train", "Train a BatchTopK sparse autoencoder");
    s_train->add_option("--data", tr.data, "Training embeddings")->required();
    s_train->add_option("--out", tr.out, "Output checkpoint")->required();
    s_train->add_option("--history", tr.history, "Write per-step history as JSON lines");
    s_train->add_option("--config", tr.config, "key = value config file; explicit flags take precedence");
    s_train->add_option("--dict", tr.dict, "Dictionary size M (default 16 x D)");
    s_train->add_option("--k", tr.k, "Target per-sample sparsity (default 32)");
    s_train->add_option("--lr", tr.lr, "Adam learning rate (default 5e-5)");
    s_train->add_option("--batch", tr.batch, "Batch size B (default 8192)");
    s_train->add_option("--epochs", tr.epochs, "Epochs E (default 30)");
    s_train->add_option("--warmup", tr.warmup, "Linear warmup steps (default 100)");
    s_train->add_option("--seed", tr.seed, "Seed for initialization and shuffling (default 0)");
    s_train->add_option("--lambda", tr.lambda, "Reanimation coefficient (default 1e-3)");
    s_train->add_option("--beta1", tr.beta1, "Adam beta1 (default 0.9)");
    s_train->add_option("--beta2", tr.beta2, "Adam beta2 (default 0.999)");
    s_train->add_option("--weight-decay", tr.weight_decay, "Decoupled weight decay (default 0)");
    s_train->add_option("--dead-window", tr.dead_window, "Consecutive inactive batches before a feature counts as dead (default 1)");
    s_train->add_option("--log-every", tr.log_every, "History record interval in steps (default 1)");
    s_train->add_flag("--normalize", tr.normalize, "Subtract the dataset mean before training");
    s_train->add_flag("--renorm-decoder", tr.renorm, "Project decoder rows to unit norm after each step");

    ModelDataArgs dg;
    auto* s_diag = app.add_subcommand("diag", "R^2, L0, dead fraction and decoder stable rank");
    s_diag->add_option("--model", dg.model, "Checkpoint")->required();
    s_diag->add_option("--data", dg.data, "Evaluation embeddings")->required();
    s_diag->add_option("--mode", dg.mode, "Inference mode: topk or threshold")->check(CLI::IsMember({"topk", "threshold"}));

    ModelDataArgs en;
    auto* s_encode = app.add_subcommand("encode", "Encode embeddings into a concept matrix");
    s_encode->add_option("--model", en.model, "Checkpoint")->required();
    s_encode->add_option("--data", en.data, "Reference embeddings")->required();
    s_encode->add_option("--mode", en.mode, "Inference mode: topk or threshold")->check(CLI::IsMember({"topk", "threshold"}));
    s_encode->add_option("--out", en.out, "Output concept matrix")->required();

    ProfileBuildArgs pb;
    auto* s_pb = app.add_subcommand("profile-build", "Build a style profile from a concept matrix");
    s_pb->add_option("--codes", pb.codes, "Concept matrix from `encode`")->required();
    s_pb->add_option("--presence", pb.presence, "Presence threshold P in (0, 1] (default 0.6)");
    s_pb->add_option("--strength", pb.strength, "Strength multiplier S (default 5)");
    s_pb->add_option("--out", pb.out, "Output profile JSON")->required();

    ProfileDiffArgs pd;
    auto* s_pd = app.add_subcommand("profile-diff", "Compare two style profiles");
    s_pd->add_option("--a", pd.a, "First profile")->required();
    s_pd->add_option("--b", pd.b, "Second profile")->required();

    SteerArgs st;
    auto* s_steer = app.add_subcommand("steer", "Add a decoded style residual to content embeddings");
    s_steer->add_option("--model", st.model, "Checkpoint")->required();
    s_steer->add_option("--profile", st.profiles, "Style profile (repeat to compose)");
    s_steer->add_option("--weight", st.weights, "Weight per --profile (default 1)");
    s_steer->add_option("--concept", st.concept_index, "Steer along a single concept instead of a profile");
    s_steer->add_option("--codes", st.codes, "Concept matrix used to size a single-concept profile");
    s_steer->add_option("--content", st.content, "Content embeddings")->required();
    s_steer->add_option("--alpha", st.alpha, "Steering gain (default 2)");
    s_steer->add_option("--out", st.out, "Output steered embeddings")->required();

    InterpArgs ie;
    auto* s_ie = app.add_subcommand("interp-exemplars", "Top activating references per concept");
    s_ie->add_option("--codes", ie.codes, "Concept matrix")->required();
    s_ie->add_option("--concept", ie.concepts, "Concept index (repeatable)");
    s_ie->add_option("--top-n", ie.top_n, "Use the top-n concepts by mean activation (default 1000)");
    s_ie->add_option("--k", ie.k, "Exemplars per concept (default 12)");

    InterpArgs il;
    auto* s_il = app.add_subcommand("interp-label", "Request concept labels from a label service");
    s_il->add_option("--codes", il.codes, "Concept matrix")->required();
    s_il->add_option("--concept", il.concepts, "Concept index (repeatable)");
    s_il->add_option("--top-n", il.top_n, "Use the top-n concepts by mean activation (default 1000)");
    s_il->add_option("--k", il.k, "Exemplars per concept (default 12)");
    s_il->add_option("--endpoint", il.endpoint, "http:// URL of the label service");
    s_il->add_flag("--mock", il.mock, "Use the offline mock labeler");
    s_il->add_option("--timeout-ms", il.timeout_ms, "Request timeout in milliseconds (default 30000)");
    s_il->add_option("--max-in-flight", il.max_in_flight, "Concurrent requests (default 4)");
    s_il->add_option("--out", il.out, "Output labels JSON lines")->required();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kUsage;
    }

    try {
        if (s_ingest->parsed()) return do_ingest(ingest, out, err);
        if (s_train->parsed()) return do_train(tr, out, err);
        if (s_diag->parsed()) return do_diag(dg, out);
        if (s_encode->parsed()) return do_encode(en, out);
        if (s_pb->parsed()) return do_profile_build(pb, out);
        if (s_pd->parsed()) return do_profile_diff(pd, out);
        if (s_steer->parsed()) return do_steer(st, out, err);
        if (s_ie->parsed()) return do_interp_exemplars(ie, out);
        if (s_il->parsed()) return do_interp_label(il, out, err);
    } catch (const DataError& e) {
        err << "error: " << e.what() << '\n';
        return kData;
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kIo;
    }
    err << app.help();
    return kUsage;
}

} // namespace lsae::cli
