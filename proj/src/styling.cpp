#include "lsae/styling.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace lsae {

void validate(const StyleProfile& profile) {
    if (profile.dict_size <= 0) throw DataError("profile dict_size must be positive");
    if (!(profile.presence_threshold > 0 && profile.presence_threshold <= 1))
        throw DataError("presence threshold must be in (0, 1]");
    if (!(profile.strength > 0)) throw DataError("strength must be positive");
    for (const auto& [j, v] : profile.values) {
        if (j < 0 || j >= profile.dict_size) throw DataError("profile concept index out of range");
        if (!(v > 0) || !std::isfinite(v)) throw DataError("profile values must be finite and positive");
    }
}

ConceptMatrix collect_codes(const SaeModel<float>& model, const EmbeddingDataset& refs, InferenceMode mode) {
    if (refs.dim != static_cast<std::size_t>(model.dim_in)) throw DataError("dimension mismatch");
    ConceptMatrix c;
    c.codes = encode(model, refs.data, mode);
    c.ref_ids.reserve(refs.manifest.size());
    for (const auto& rec : refs.manifest) {
        c.ref_ids.push_back(rec.id);
        c.ref_uris.push_back(rec.uri);
    }
    return c;
}

StyleProfile build_profile(const ConceptMatrix& c, double presence, double strength) {
    if (!(presence > 0 && presence <= 1)) throw DataError("presence threshold must be in (0, 1]");
    if (!(strength > 0)) throw DataError("strength must be positive");
    const Index n = c.codes.rows();
    if (n == 0) throw DataError("empty concept matrix");

    StyleProfile profile;
    profile.dict_size = c.codes.cols();
    profile.presence_threshold = presence;
    profile.strength = strength;
    profile.ref_ids = c.ref_ids;

    for (Index j = 0; j < c.codes.cols(); ++j) {
        double sum = 0;
        Index active = 0;
        for (Index i = 0; i < n; ++i) {
            const float v = c.codes(i, j);
            if (v > 0) {
                sum += static_cast<double>(v);
                ++active;
            }
        }
        if (active == 0) continue;
        const double frequency = static_cast<double>(active) / static_cast<double>(n);
        if (frequency >= presence) profile.values.emplace(j, strength * (sum / static_cast<double>(active)));
    }
    return profile;
}

DiffReport profile_diff(const StyleProfile& a, const StyleProfile& b) {
    if (a.dict_size != b.dict_size) throw DataError("dictionary-size mismatch");
    DiffReport out;
    for (const auto& [j, va] : a.values) {
        if (auto it = b.values.find(j); it != b.values.end())
            out.shared.push_back({j, va, it->second, va - it->second});
        else
            out.only_a.emplace_back(j, va);
    }
    for (const auto& [j, vb] : b.values)
        if (!a.values.count(j)) out.only_b.emplace_back(j, vb);
    std::sort(out.shared.begin(), out.shared.end(), [](const SharedConcept& x, const SharedConcept& y) {
        const double dx = std::abs(x.delta);
        const double dy = std::abs(y.delta);
        if (dx != dy) return dx > dy;
        return x.index < y.index;
    });
    return out;
}

StyleProfile compose_profiles(const std::vector<std::pair<StyleProfile, double>>& weighted) {
    if (weighted.empty()) throw DataError("no profiles to compose");
    const auto& first = weighted.front().first;
    StyleProfile out;
    out.dict_size = first.dict_size;
    out.presence_threshold = first.presence_threshold;
    out.strength = first.strength;

    std::map<Index, double> sum;
    std::unordered_set<std::string> seen;
    for (const auto& [profile, weight] : weighted) {
        if (profile.dict_size != out.dict_size) throw DataError("dictionary-size mismatch");
        for (const auto& [j, v] : profile.values) sum[j] += weight * v;
        for (const auto& id : profile.ref_ids)
            if (seen.insert(id).second) out.ref_ids.push_back(id);
    }
    for (const auto& [j, v] : sum)
        if (v > 0) out.values.emplace(j, v);
    return out;
}

StyleProfile single_concept_profile(Index j, const ConceptMatrix& c) {
    if (j < 0 || j >= c.codes.cols()) throw DataError("concept index out of range");
    float peak = 0;
    Index active = 0;
    for (Index i = 0; i < c.codes.rows(); ++i) {
        const float v = c.codes(i, j);
        if (v > 0) ++active;
        peak = std::max(peak, v);
    }
    if (active == 0) throw DataError("no observed activation for concept " + std::to_string(j));

    StyleProfile out;
    out.dict_size = c.codes.cols();
    out.presence_threshold = static_cast<double>(active) / static_cast<double>(c.codes.rows());
    out.strength = 1.0;
    out.ref_ids = c.ref_ids;
    out.values.emplace(j, static_cast<double>(peak));
    return out;
}

RowMatrixXf steer_rows(const RowMatrixXf& content, const Vector<float>& residual, double alpha) {
    require_shape(content.cols() == residual.size(), "content vs residual");
    RowMatrixXf out = content;
    out.rowwise() += (static_cast<float>(alpha) * residual).transpose();
    return out;
}

std::string profile_to_json(const StyleProfile& profile) {
    validate(profile);
    nlohmann::ordered_json j;
    j["dict_size"] = profile.dict_size;
    j["presence_threshold"] = profile.presence_threshold;
    j["strength"] = profile.strength;
    j["ref_ids"] = profile.ref_ids;
    auto values = nlohmann::ordered_json::array();
    for (const auto& [idx, v] : profile.values) values.push_back({idx, v});
    j["values"] = std::move(values);
    return j.dump();
}

StyleProfile profile_from_json(const std::string& text) {
    StyleProfile p;
    try {
        const auto j = nlohmann::json::parse(text);
        p.dict_size = j.at("dict_size").get<Index>();
        p.presence_threshold = j.at("presence_threshold").get<double>();
        p.strength = j.at("strength").get<double>();
        p.ref_ids = j.at("ref_ids").get<std::vector<std::string>>();
        for (const auto& entry : j.at("values")) {
            if (!entry.is_array() || entry.size() != 2) throw DataError("profile values must be [index, value] pairs");
            if (!p.values.emplace(entry[0].get<Index>(), entry[1].get<double>()).second)
                throw DataError("duplicate concept in profile");
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed profile: ") + e.what());
    }
    validate(p);
    return p;
}

void save_profile(const StyleProfile& profile, const std::filesystem::path& path) {
    const auto text = profile_to_json(profile);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

StyleProfile load_profile(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return profile_from_json(ss.str());
}

void save_concepts(const ConceptMatrix& c, const std::filesystem::path& path) {
    require_shape(static_cast<std::size_t>(c.codes.rows()) == c.ref_ids.size(), "codes vs ref ids");
    if ((c.codes.array() < 0).any()) throw DataError("concept codes must be nonnegative");
    EmbeddingDataset ds;
    ds.dim = static_cast<std::size_t>(c.codes.cols());
    ds.data = c.codes;
    require_shape(c.ref_uris.empty() || c.ref_uris.size() == c.ref_ids.size(), "ref uris");
    for (std::size_t i = 0; i < c.ref_ids.size(); ++i)
        ds.manifest.push_back({i, c.ref_ids[i], c.ref_uris.empty() ? std::nullopt : c.ref_uris[i]});
    write_dataset(ds, path);
}

ConceptMatrix load_concepts(const std::filesystem::path& path) {
    auto ds = read_dataset(path);
    if ((ds.data.array() < 0).any()) throw DataError("concept codes must be nonnegative");
    ConceptMatrix c;
    c.codes = std::move(ds.data);
    for (const auto& rec : ds.manifest) {
        c.ref_ids.push_back(rec.id);
        c.ref_uris.push_back(rec.uri);
    }
    return c;
}

} // namespace lsae
