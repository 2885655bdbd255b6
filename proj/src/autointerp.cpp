#include "lsae/autointerp.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace lsae {

std::optional<std::string> canonical_category(std::string_view category) {
    if (category == "Artistic Aesthetic") return std::string(kTaxonomy[0]);
    for (auto c : kTaxonomy)
        if (c == category) return std::string(c);
    return std::nullopt;
}

std::string_view to_string(LabelSource source) {
    switch (source) {
    case LabelSource::ExternalService: return "external-service";
    case LabelSource::Manual: return "manual";
    case LabelSource::Mock: return "mock";
    }
    return "mock";
}

LabelSource label_source_from_string(std::string_view text) {
    if (text == "external-service") return LabelSource::ExternalService;
    if (text == "manual") return LabelSource::Manual;
    if (text == "mock") return LabelSource::Mock;
    throw DataError("unknown label source: " + std::string(text));
}

ExemplarSet top_exemplars(const ConceptMatrix& codes, Index j, std::size_t k) {
    if (j < 0 || j >= codes.codes.cols()) throw DataError("concept index out of range");
    require_shape(codes.ref_ids.size() == static_cast<std::size_t>(codes.codes.rows()), "codes vs ref ids");
    ExemplarSet out;
    out.index = j;
    out.k = k;
    for (Index i = 0; i < codes.codes.rows(); ++i) {
        const float v = codes.codes(i, j);
        if (v > 0) {
            const auto row = static_cast<std::size_t>(i);
            out.entries.push_back({codes.ref_ids[row], codes.ref_uris.empty() ? std::nullopt : codes.ref_uris[row],
                                   static_cast<double>(v)});
        }
    }
    auto before = [](const Exemplar& a, const Exemplar& b) {
        if (a.activation != b.activation) return a.activation > b.activation;
        return a.id < b.id;
    };
    const auto keep = std::min(k, out.entries.size());
    std::partial_sort(out.entries.begin(), out.entries.begin() + static_cast<std::ptrdiff_t>(keep), out.entries.end(),
                      before);
    out.entries.resize(keep);
    return out;
}

std::vector<Index> rank_by_mean_activation(const ConceptMatrix& codes, std::size_t top_n) {
    const Index m = codes.codes.cols();
    const Index n = codes.codes.rows();
    std::vector<double> mean(static_cast<std::size_t>(m), 0.0);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < m; ++j) mean[static_cast<std::size_t>(j)] += codes.codes(i, j);
    if (n > 0)
        for (auto& v : mean) v /= static_cast<double>(n);

    std::vector<Index> order(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) order[static_cast<std::size_t>(j)] = j;
    const auto keep = std::min(top_n, order.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep), order.end(),
                      [&](Index a, Index b) {
                          const double ma = mean[static_cast<std::size_t>(a)];
                          const double mb = mean[static_cast<std::size_t>(b)];
                          if (ma != mb) return ma > mb;
                          return a < b;
                      });
    order.resize(keep);
    return order;
}

const std::string& assemble_prompt() {
    // Verbatim, including the original spelling of "protoype".
    static const std::string prompt =
        "The grid of images represents a visual concept or feature. Your task is to concisely label this "
        "feature. The top row contains a protoype of this concept: a blank white sphere followed by "
        "increasingly powerful expressions of the feature. The images underneath are those which contain "
        "the described feature. Use this information to provide a label for the feature. Do not give a "
        "complete sentence, just your label for the feature.";
    return prompt;
}

std::string to_wire_json(const LabelRequest& request) {
    nlohmann::ordered_json j;
    j["prompt"] = request.prompt;
    j["concept"] = request.index;
    auto exemplars = nlohmann::ordered_json::array();
    for (const auto& e : request.exemplars) {
        nlohmann::ordered_json item;
        item["id"] = e.id;
        item["uri"] = e.uri ? nlohmann::ordered_json(*e.uri) : nlohmann::ordered_json(nullptr);
        item["activation"] = e.activation;
        exemplars.push_back(std::move(item));
    }
    j["exemplars"] = std::move(exemplars);
    return j.dump();
}

LabelReply parse_label_reply(const std::string& body) {
    if (body.empty()) throw DataError("empty label");
    if (body.size() > kMaxReplyBytes) throw DataError("oversized response");
    LabelReply reply;
    try {
        const auto j = nlohmann::json::parse(body);
        if (!j.is_object() || !j.contains("label") || !j["label"].is_string()) throw DataError("missing label");
        reply.label = j["label"].get<std::string>();
        if (j.contains("category") && !j["category"].is_null()) {
            reply.category = canonical_category(j["category"].get<std::string>());
            if (!reply.category) throw DataError("unknown category: " + j["category"].get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed label response: ") + e.what());
    }
    if (reply.label.empty()) throw DataError("empty label");
    if (reply.label.size() > kMaxLabelLength) throw DataError("oversized label");
    return reply;
}

LabelReply MockLabelClient::send(const LabelRequest& request) {
    LabelReply reply;
    reply.label = "mock-concept-" + std::to_string(request.index);
    reply.category = std::string(kTaxonomy[static_cast<std::size_t>(request.index) % kTaxonomy.size()]);
    return reply;
}

HttpLabelClient::HttpLabelClient(std::string endpoint, std::chrono::milliseconds timeout) : timeout_(timeout) {
    const auto scheme = endpoint.find("://");
    if (scheme == std::string::npos || endpoint.substr(0, scheme) != "http")
        throw DataError("label endpoint must be an http:// URL: " + endpoint);
    const auto slash = endpoint.find('/', scheme + 3);
    base_ = endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : endpoint.substr(slash);
}

LabelReply HttpLabelClient::send(const LabelRequest& request) {
    httplib::Client client(base_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    auto res = client.Post(path_, to_wire_json(request), "application/json");
    if (!res) throw IoError("transport failure: " + httplib::to_string(res.error()));
    if (res->status != 200) throw IoError("label service returned HTTP " + std::to_string(res->status));
    return parse_label_reply(res->body);
}

ConceptLabel request_label(LabelClient& client, Index index, const ExemplarSet& exemplars, const std::string& prompt) {
    const auto tag = "concept " + std::to_string(index) + ": ";
    if (exemplars.entries.empty()) throw DataError(tag + "no exemplars");
    LabelReply reply;
    try {
        reply = client.send({prompt, index, exemplars.entries});
    } catch (const IoError& e) {
        throw IoError(tag + e.what());
    } catch (const DataError& e) {
        throw DataError(tag + e.what());
    }
    return {index, reply.label, reply.category, client.source()};
}

std::vector<ConceptLabel> request_labels(LabelClient& client, const std::vector<ExemplarSet>& sets,
                                         std::size_t max_in_flight, const std::string& prompt) {
    std::vector<ConceptLabel> out(sets.size());
    std::vector<std::exception_ptr> errors(sets.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < sets.size(); i = next++) {
            try {
                out[i] = request_label(client, sets[i].index, sets[i], prompt);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::max<std::size_t>(1, std::min(max_in_flight, sets.size()));
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
    return out;
}

void export_labels(std::vector<ConceptLabel> labels, const std::filesystem::path& path) {
    std::stable_sort(labels.begin(), labels.end(),
                     [](const ConceptLabel& a, const ConceptLabel& b) { return a.index < b.index; });
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& l : labels) {
        if (l.label.empty()) throw DataError("concept " + std::to_string(l.index) + ": empty label");
        if (l.category && !canonical_category(*l.category))
            throw DataError("concept " + std::to_string(l.index) + ": unknown category");
        nlohmann::ordered_json j;
        j["concept"] = l.index;
        j["label"] = l.label;
        j["category"] = l.category ? nlohmann::ordered_json(*l.category) : nlohmann::ordered_json(nullptr);
        j["source"] = to_string(l.source);
        out << j.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<ConceptLabel> import_labels(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<ConceptLabel> labels;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            ConceptLabel l;
            l.index = j.at("concept").get<Index>();
            l.label = j.at("label").get<std::string>();
            if (!j.at("category").is_null()) {
                l.category = canonical_category(j["category"].get<std::string>());
                if (!l.category) throw DataError("unknown category in " + path.string());
            }
            l.source = label_source_from_string(j.at("source").get<std::string>());
            labels.push_back(std::move(l));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed label line in " + path.string() + ": " + e.what());
        }
    }
    return labels;
}

} // namespace lsae
