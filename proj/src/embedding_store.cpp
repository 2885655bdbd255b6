#include "lsae/embedding_store.hpp"

#include "lsae/prng.hpp"

#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_set>

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace lsae {

namespace {

template <typename T>
void put(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
    T value{};
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    return value;
}

void write_manifest(const std::vector<RecordMeta>& manifest, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& rec : manifest) {
        nlohmann::ordered_json line;
        line["row"] = rec.row;
        line["id"] = rec.id;
        line["uri"] = rec.uri ? nlohmann::ordered_json(*rec.uri) : nlohmann::ordered_json(nullptr);
        out << line.dump() << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<RecordMeta> read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open manifest " + path.string());
    std::vector<RecordMeta> manifest;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
            RecordMeta rec;
            rec.row = j.at("row").get<std::size_t>();
            rec.id = j.at("id").get<std::string>();
            if (j.contains("uri") && !j["uri"].is_null()) rec.uri = j["uri"].get<std::string>();
            manifest.push_back(std::move(rec));
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed manifest line in " + path.string() + ": " + e.what());
        }
    }
    return manifest;
}

} // namespace

EmbeddingDataset make_dataset(RowMatrixXf data) {
    EmbeddingDataset ds;
    ds.dim = static_cast<std::size_t>(data.cols());
    ds.data = std::move(data);
    ds.manifest.reserve(ds.count());
    for (std::size_t i = 0; i < ds.count(); ++i) ds.manifest.push_back({i, std::to_string(i), std::nullopt});
    return ds;
}

void validate(const EmbeddingDataset& dataset) {
    if (dataset.dim == 0) throw DataError("embedding dimension must be positive");
    if (static_cast<std::size_t>(dataset.data.cols()) != dataset.dim)
        throw DataError("data column count does not match dim");
    if (!dataset.data.allFinite()) throw DataError("non-finite value in embedding data");
    if (dataset.manifest.size() != dataset.count())
        throw DataError("manifest/row-count mismatch");
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < dataset.manifest.size(); ++i) {
        const auto& rec = dataset.manifest[i];
        if (rec.row != i) throw DataError("manifest row index out of order at " + std::to_string(i));
        if (rec.id.empty()) throw DataError("empty record id at row " + std::to_string(i));
        if (!ids.insert(rec.id).second) throw DataError("duplicate record id: " + rec.id);
    }
}

std::filesystem::path manifest_path(const std::filesystem::path& path) {
    return std::filesystem::path(path.string() + ".manifest.jsonl");
}

void write_dataset(const EmbeddingDataset& dataset, const std::filesystem::path& path) {
    validate(dataset);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kEmbeddingMagic, sizeof(kEmbeddingMagic));
    put<std::uint32_t>(out, kEmbeddingVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(dataset.dim));
    put<std::uint64_t>(out, static_cast<std::uint64_t>(dataset.count()));
    out.write(reinterpret_cast<const char*>(dataset.data.data()),
              static_cast<std::streamsize>(dataset.data.size() * sizeof(float)));
    if (!out) throw IoError("write failed: " + path.string());
    out.close();
    write_manifest(dataset.manifest, manifest_path(path));
}

EmbeddingDataset read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kEmbeddingMagic, sizeof(magic)) != 0)
        throw DataError("bad magic in " + path.string());
    const auto version = get<std::uint32_t>(in);
    const auto dim = get<std::uint32_t>(in);
    const auto n = get<std::uint64_t>(in);
    if (!in) throw DataError("truncated header in " + path.string());
    if (version != kEmbeddingVersion) throw DataError("unsupported version " + std::to_string(version));
    if (dim == 0) throw DataError("embedding dimension must be positive");

    const auto file_size = std::filesystem::file_size(path);
    const auto expected = kEmbeddingHeaderBytes + n * dim * sizeof(float);
    if (file_size < expected) throw DataError("truncated payload in " + path.string());
    if (file_size > expected) throw DataError("trailing bytes after payload in " + path.string());

    EmbeddingDataset ds;
    ds.dim = dim;
    ds.data.resize(static_cast<Index>(n), static_cast<Index>(dim));
    in.read(reinterpret_cast<char*>(ds.data.data()), static_cast<std::streamsize>(n * dim * sizeof(float)));
    if (!in) throw DataError("truncated payload in " + path.string());
    if (!ds.data.allFinite()) throw DataError("non-finite value in " + path.string());

    ds.manifest = read_manifest(manifest_path(path));
    if (ds.manifest.size() != n) throw DataError("manifest/row-count mismatch for " + path.string());
    validate(ds);
    return ds;
}

EmbeddingDataset dedup(const EmbeddingDataset& dataset) {
    std::unordered_set<std::string> seen_ids;
    std::unordered_set<std::string> seen_uris;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < dataset.manifest.size(); ++i) {
        const auto& rec = dataset.manifest[i];
        if (seen_ids.count(rec.id)) continue;
        if (rec.uri && seen_uris.count(*rec.uri)) continue;
        seen_ids.insert(rec.id);
        if (rec.uri) seen_uris.insert(*rec.uri);
        keep.push_back(i);
    }

    EmbeddingDataset out;
    out.dim = dataset.dim;
    out.data = gather_rows(dataset.data, keep);
    out.manifest.reserve(keep.size());
    for (std::size_t r = 0; r < keep.size(); ++r) {
        RecordMeta rec = dataset.manifest[keep[r]];
        rec.row = r;
        out.manifest.push_back(std::move(rec));
    }
    return out;
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch_size,
                                                    std::uint64_t seed, std::uint64_t epoch,
                                                    bool drop_last) {
    if (batch_size == 0) throw DataError("batch size must be positive");
    Xoshiro256 rng(seed, epoch);
    const auto order = permutation(n, rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < n; start += batch_size) {
        const std::size_t end = std::min(n, start + batch_size);
        if (drop_last && end - start < batch_size) break;
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                             order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

RowMatrixXf gather_rows(const RowMatrixXf& data, const std::vector<std::size_t>& rows) {
    RowMatrixXf out(static_cast<Index>(rows.size()), data.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) out.row(static_cast<Index>(r)) = data.row(static_cast<Index>(rows[r]));
    return out;
}

std::vector<RowMatrixXf> batch_iter(const EmbeddingDataset& dataset, std::size_t batch_size,
                                    std::uint64_t seed, bool drop_last, std::uint64_t epoch) {
    std::vector<RowMatrixXf> out;
    for (const auto& rows : epoch_batches(dataset.count(), batch_size, seed, epoch, drop_last))
        out.push_back(gather_rows(dataset.data, rows));
    return out;
}

DatasetStats compute_stats(const EmbeddingDataset& dataset) {
    const auto n = dataset.count();
    if (n == 0) throw DataError("empty dataset");
    const auto d = static_cast<Index>(dataset.dim);

    // Two passes in double: mean first, then centered squares.
    DatasetStats stats;
    stats.count = n;
    stats.mean = Vector<double>::Zero(d);
    for (Index i = 0; i < dataset.data.rows(); ++i) stats.mean += dataset.data.row(i).cast<double>().transpose();
    stats.mean /= static_cast<double>(n);

    stats.variance = Vector<double>::Zero(d);
    for (Index i = 0; i < dataset.data.rows(); ++i) {
        const Vector<double> centered = dataset.data.row(i).cast<double>().transpose() - stats.mean;
        stats.variance += centered.cwiseAbs2();
    }
    stats.variance /= static_cast<double>(n);
    return stats;
}

} // namespace lsae
