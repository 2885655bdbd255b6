#ifndef LSAE_STYLING_HPP
#define LSAE_STYLING_HPP

#include "lsae/embedding_store.hpp"
#include "lsae/sae.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace lsae {

inline constexpr double kDefaultPresence = 0.6;
inline constexpr double kDefaultStrength = 5.0;
inline constexpr double kDefaultAlpha = 2.0;
inline constexpr double kSingleConceptAlphaMin = 0.5;
inline constexpr double kSingleConceptAlphaMax = 3.5;

/// N x M nonnegative codes of a reference set, one row per reference.
struct ConceptMatrix {
    RowMatrixXf codes;
    std::vector<std::string> ref_ids;
    std::vector<std::optional<std::string>> ref_uris;  // empty or aligned to rows

    Index dict_size() const { return codes.cols(); }
};

/// Sparse vector of characteristic concept intensities.
struct StyleProfile {
    std::map<Index, double> values;  // concept -> intensity (> 0), ascending
    Index dict_size = 0;
    double presence_threshold = kDefaultPresence;
    double strength = kDefaultStrength;
    std::vector<std::string> ref_ids;

    bool operator==(const StyleProfile&) const = default;
};

struct SharedConcept {
    Index index = 0;
    double value_a = 0;
    double value_b = 0;
    double delta = 0;  // value_a - value_b
};

struct DiffReport {
    std::vector<SharedConcept> shared;               // |delta| descending, then index
    std::vector<std::pair<Index, double>> only_a;    // ascending index
    std::vector<std::pair<Index, double>> only_b;
};

template <typename Scalar>
struct SteeringResult {
    Vector<Scalar> residual;
    double alpha = kDefaultAlpha;
    Vector<Scalar> steered;
    Vector<Scalar> content;
};

void validate(const StyleProfile& profile);

ConceptMatrix collect_codes(const SaeModel<float>& model, const EmbeddingDataset& refs,
                            InferenceMode mode = InferenceMode::PerSampleTopK);

/// A concept is kept when it is active in at least a P share of the rows; its
/// value is S times its mean over the rows where it is active.
StyleProfile build_profile(const ConceptMatrix& c, double presence = kDefaultPresence,
                           double strength = kDefaultStrength);

DiffReport profile_diff(const StyleProfile& a, const StyleProfile& b);

/// Sparse weighted sum; entries that end up nonpositive are dropped. The
/// result takes P and S from the first profile and the union of ref ids.
StyleProfile compose_profiles(const std::vector<std::pair<StyleProfile, double>>& weighted);

/// One-hot profile at the concept's largest observed activation.
StyleProfile single_concept_profile(Index j, const ConceptMatrix& c);

/// sum_j V[j] * w_dec[j]; the decoder bias is not added.
template <typename Scalar>
Vector<Scalar> decode_residual(const SaeModel<Scalar>& model, const StyleProfile& profile) {
    if (profile.dict_size != model.dict_size) throw DataError("profile dictionary size does not match model");
    Vector<double> acc = Vector<double>::Zero(model.dim_in);
    for (const auto& [j, v] : profile.values) {
        if (j < 0 || j >= model.dict_size) throw DataError("profile concept index out of range");
        acc += v * model.w_dec.row(j).transpose().template cast<double>();
    }
    return acc.cast<Scalar>();
}

template <typename Scalar>
SteeringResult<Scalar> steer(const Vector<Scalar>& content, const Vector<Scalar>& residual,
                             double alpha = kDefaultAlpha) {
    require_shape(content.size() == residual.size(), "content vs residual");
    SteeringResult<Scalar> out;
    out.residual = residual;
    out.alpha = alpha;
    out.content = content;
    out.steered = content + static_cast<Scalar>(alpha) * residual;
    return out;
}

/// Steers every row of a content matrix by the same residual.
RowMatrixXf steer_rows(const RowMatrixXf& content, const Vector<float>& residual, double alpha);

void save_profile(const StyleProfile& profile, const std::filesystem::path& path);
StyleProfile load_profile(const std::filesystem::path& path);
std::string profile_to_json(const StyleProfile& profile);
StyleProfile profile_from_json(const std::string& text);

/// Concept matrices reuse the embedding file format with D = M.
void save_concepts(const ConceptMatrix& c, const std::filesystem::path& path);
ConceptMatrix load_concepts(const std::filesystem::path& path);

} // namespace lsae

#endif // LSAE_STYLING_HPP
