#ifndef LSAE_EMBEDDING_STORE_HPP
#define LSAE_EMBEDDING_STORE_HPP

#include "lsae/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace lsae {

struct RecordMeta {
    std::size_t row = 0;
    std::string id;
    std::optional<std::string> uri;

    bool operator==(const RecordMeta&) const = default;
};

/// N embeddings of dimension D plus a manifest aligned to the rows.
struct EmbeddingDataset {
    std::size_t dim = 0;
    RowMatrixXf data;  // N x dim
    std::vector<RecordMeta> manifest;

    std::size_t count() const { return static_cast<std::size_t>(data.rows()); }
};

struct DatasetStats {
    Vector<double> mean;
    Vector<double> variance;  // population variance
    std::size_t count = 0;
};

/// Builds a dataset with ids "0".."N-1" and no uris.
EmbeddingDataset make_dataset(RowMatrixXf data);

/// Throws DataError naming the first violated invariant.
void validate(const EmbeddingDataset& dataset);

inline constexpr char kEmbeddingMagic[8] = {'L', 'S', 'A', 'E', 'E', 'M', 'B', '1'};
inline constexpr std::uint32_t kEmbeddingVersion = 1;
inline constexpr std::size_t kEmbeddingHeaderBytes = 24;

std::filesystem::path manifest_path(const std::filesystem::path& path);

void write_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& path);
EmbeddingDataset read_dataset(const std::filesystem::path& path);

/// First occurrence wins, keyed by id and (when present) by uri.
EmbeddingDataset dedup(const EmbeddingDataset& dataset);

/// Row indices of every batch in one epoch. The permutation is a function of
/// (seed, epoch) only.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool drop_last);

RowMatrixXf gather_rows(const RowMatrixXf& data, const std::vector<std::size_t>& rows);

/// Materialized batches for one epoch.
std::vector<RowMatrixXf> batch_iter(const EmbeddingDataset& dataset, std::size_t batch_size,
                                    std::uint64_t seed, bool drop_last, std::uint64_t epoch = 0);

DatasetStats compute_stats(const EmbeddingDataset& dataset);

} // namespace lsae

#endif // LSAE_EMBEDDING_STORE_HPP
