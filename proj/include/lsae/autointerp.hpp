#ifndef LSAE_AUTOINTERP_HPP
#define LSAE_AUTOINTERP_HPP

#include "lsae/styling.hpp"

#include <array>
#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace lsae {

/// Concept categories used to organize labels.
inline constexpr std::array<std::string_view, 8> kTaxonomy = {
    "Artistic Aesthetics",
    "Style & Cultural / Artistic Aesthetics",
    "Form, Volume, Geometry",
    "Color & Chromatic Qualities",
    "Texture & Material Properties",
    "Reflectivity & Specular Light Behavior",
    "General Lighting & Shading",
    "Objects & Semantic Concepts",
};

/// Maps a category string to its canonical taxonomy spelling ("Artistic
/// Aesthetic" is accepted for "Artistic Aesthetics"). Returns nullopt when the
/// string is not a taxonomy category.
std::optional<std::string> canonical_category(std::string_view category);

inline constexpr std::size_t kDefaultExemplarCount = 12;
inline constexpr std::size_t kDefaultRankedConcepts = 1000;

struct Exemplar {
    std::string id;
    std::optional<std::string> uri;
    double activation = 0;

    bool operator==(const Exemplar&) const = default;
};

struct ExemplarSet {
    Index index = 0;
    std::vector<Exemplar> entries;  // activation descending, then id ascending
    std::size_t k = 0;
};

enum class LabelSource { ExternalService, Manual, Mock };

std::string_view to_string(LabelSource source);
LabelSource label_source_from_string(std::string_view text);

struct ConceptLabel {
    Index index = 0;
    std::string label;
    std::optional<std::string> category;  // unset until categorized
    LabelSource source = LabelSource::Mock;

    bool operator==(const ConceptLabel&) const = default;
};

ExemplarSet top_exemplars(const ConceptMatrix& codes, Index j, std::size_t k = kDefaultExemplarCount);

/// Concepts by mean activation over all rows (zeros included), descending,
/// ties by index; the first top_n.
std::vector<Index> rank_by_mean_activation(const ConceptMatrix& codes, std::size_t top_n = kDefaultRankedConcepts);

/// The fixed VLM labeling prompt.
const std::string& assemble_prompt();

struct LabelRequest {
    std::string prompt;
    Index index = 0;
    std::vector<Exemplar> exemplars;
};

/// {"prompt": ..., "concept": ..., "exemplars": [{"id", "uri", "activation"}]}
std::string to_wire_json(const LabelRequest& request);

struct LabelReply {
    std::string label;
    std::optional<std::string> category;
};

/// Parses and validates {"label": <nonempty string>[, "category": ...]}.
LabelReply parse_label_reply(const std::string& body);

inline constexpr std::size_t kMaxReplyBytes = 64 * 1024;
inline constexpr std::size_t kMaxLabelLength = 256;

class LabelClient {
public:
    virtual ~LabelClient() = default;
    virtual LabelReply send(const LabelRequest& request) = 0;
    virtual LabelSource source() const = 0;
};

/// Offline client: "mock-concept-<j>" with category taxonomy[j mod 8].
class MockLabelClient : public LabelClient {
public:
    LabelReply send(const LabelRequest& request) override;
    LabelSource source() const override { return LabelSource::Mock; }
};

/// POSTs the wire JSON to an http:// endpoint. One connection per request, so
/// a single instance can be shared across threads.
class HttpLabelClient : public LabelClient {
public:
    explicit HttpLabelClient(std::string endpoint, std::chrono::milliseconds timeout = std::chrono::seconds(30));
    LabelReply send(const LabelRequest& request) override;
    LabelSource source() const override { return LabelSource::ExternalService; }

private:
    std::string base_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

/// Errors carry the concept index in their message.
ConceptLabel request_label(LabelClient& client, Index index, const ExemplarSet& exemplars,
                           const std::string& prompt = assemble_prompt());

/// Labels many concepts with at most max_in_flight outstanding requests.
/// Results are ordered like `sets`; the first failure is rethrown.
std::vector<ConceptLabel> request_labels(LabelClient& client, const std::vector<ExemplarSet>& sets,
                                         std::size_t max_in_flight, const std::string& prompt = assemble_prompt());

void export_labels(std::vector<ConceptLabel> labels, const std::filesystem::path& path);
std::vector<ConceptLabel> import_labels(const std::filesystem::path& path);

} // namespace lsae

#endif // LSAE_AUTOINTERP_HPP
