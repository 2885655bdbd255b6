#include "lsae/embedding_store.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cstring>
#include <fstream>
#include <random>

using namespace lsae;

namespace {

EmbeddingDataset random_dataset(Index n, Index d, std::uint64_t seed) {
    std::mt19937_64 gen(seed);
    std::normal_distribution<float> dist;
    RowMatrixXf m(n, d);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(gen);
    return make_dataset(std::move(m));
}

} // namespace

TEST_CASE("empty dataset writes a 24-byte header") {
    oracle::TempDir tmp;
    EmbeddingDataset ds = make_dataset(RowMatrixXf(0, 4));
    write_dataset(ds, tmp / "e.emb");
    CHECK(std::filesystem::file_size(tmp / "e.emb") == 24);
    CHECK(std::filesystem::file_size(manifest_path(tmp / "e.emb")) == 0);
    const auto back = read_dataset(tmp / "e.emb");
    CHECK(back.count() == 0);
    CHECK(back.dim == 4);
}

TEST_CASE("single row encodes little-endian floats after the header") {
    oracle::TempDir tmp;
    RowMatrixXf m(1, 2);
    m << 1.0f, -2.5f;
    write_dataset(make_dataset(m), tmp / "one.emb");
    const auto bytes = oracle::read_bytes(tmp / "one.emb");
    // Hand-encoded: "LSAEEMB1", u32 1, u32 2, u64 1, 0x3f800000, 0xc0200000.
    const unsigned char expected[] = {'L', 'S', 'A', 'E', 'E', 'M', 'B', '1', 1, 0, 0, 0, 2, 0, 0, 0,
                                      1,   0,   0,   0,   0,   0,   0,   0,   0, 0, 0x80, 0x3f, 0, 0, 0x20, 0xc0};
    REQUIRE(bytes.size() == sizeof(expected));
    CHECK(std::memcmp(bytes.data(), expected, sizeof(expected)) == 0);
    CHECK(oracle::read_bytes(manifest_path(tmp / "one.emb")) == "{\"row\":0,\"id\":\"0\",\"uri\":null}\n");
}

TEST_CASE("round trip is bitwise exact") {
    oracle::TempDir tmp;
    auto ds = random_dataset(100, 1280, 3);
    ds.manifest[5].uri = "https://example.org/5.jpg";
    write_dataset(ds, tmp / "r.emb");
    const auto back = read_dataset(tmp / "r.emb");
    REQUIRE(back.data.rows() == 100);
    CHECK(std::memcmp(back.data.data(), ds.data.data(), sizeof(float) * ds.data.size()) == 0);
    CHECK(back.manifest == ds.manifest);
}

TEST_CASE("write rejects NaN before touching the file") {
    oracle::TempDir tmp;
    auto ds = random_dataset(3, 2, 1);
    ds.data(1, 1) = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(write_dataset(ds, tmp / "bad.emb"), DataError);
    CHECK_FALSE(std::filesystem::exists(tmp / "bad.emb"));
}

TEST_CASE("read guards: magic, truncation, manifest, non-finite") {
    oracle::TempDir tmp;
    const auto path = tmp / "g.emb";
    write_dataset(random_dataset(4, 3, 9), path);
    const auto good = oracle::read_bytes(path);

    auto rewrite = [&](const std::string& bytes) {
        std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    };

    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        rewrite(bytes);
        CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("bad magic"), DataError);
    }
    SUBCASE("one float short") {
        rewrite(good.substr(0, good.size() - 4));
        CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("truncated"), DataError);
    }
    SUBCASE("manifest row count mismatch") {
        std::ofstream(manifest_path(path), std::ios::trunc) << "{\"row\":0,\"id\":\"a\",\"uri\":null}\n";
        CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("manifest"), DataError);
    }
    SUBCASE("infinity in payload") {
        auto bytes = good;
        const float inf = std::numeric_limits<float>::infinity();
        std::memcpy(bytes.data() + 24, &inf, 4);
        rewrite(bytes);
        CHECK_THROWS_WITH_AS(read_dataset(path), doctest::Contains("non-finite"), DataError);
    }
}

TEST_CASE("dedup keeps first occurrence by id then uri") {
    RowMatrixXf m(4, 1);
    m << 0, 1, 2, 3;
    auto ds = make_dataset(m);
    ds.manifest[0].id = "a";
    ds.manifest[1].id = "b";
    ds.manifest[2].id = "a";
    ds.manifest[3].id = "c";
    ds.manifest[3].uri = "u";
    ds.manifest[1].uri = "u";

    const auto out = dedup(ds);
    REQUIRE(out.count() == 2);
    CHECK(out.data(0, 0) == 0);
    CHECK(out.data(1, 0) == 1);
    CHECK(out.manifest[1].row == 1);
    CHECK(out.manifest[1].id == "b");
    validate(out);
}

TEST_CASE("dedup: all-same ids keep only row 0; unique ids are untouched; idempotent") {
    auto ds = random_dataset(3, 2, 4);
    for (auto& r : ds.manifest) r.id = "a";
    const auto out = dedup(ds);
    REQUIRE(out.count() == 1);
    CHECK(out.data.row(0) == ds.data.row(0));

    const auto uniq = random_dataset(10, 3, 5);
    const auto same = dedup(uniq);
    CHECK(same.data == uniq.data);
    CHECK(same.manifest == uniq.manifest);

    // Idempotence on a random id pattern.
    auto mixed = random_dataset(50, 2, 6);
    std::mt19937 gen(1);
    for (auto& r : mixed.manifest) r.id = std::to_string(gen() % 17);
    const auto once = dedup(mixed);
    const auto twice = dedup(once);
    CHECK(twice.data == once.data);
    CHECK(twice.manifest == once.manifest);
}

TEST_CASE("batch_iter is deterministic and respects drop_last") {
    const auto ds = random_dataset(4, 2, 1);
    const auto a = batch_iter(ds, 2, 42, true);
    const auto b = batch_iter(ds, 2, 42, true);
    REQUIRE(a.size() == 2);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

    const auto five = random_dataset(5, 2, 1);
    const auto dropped = batch_iter(five, 2, 7, true);
    CHECK(dropped.size() == 2);
    for (const auto& m : dropped) CHECK(m.rows() == 2);
    CHECK(batch_iter(five, 2, 7, false).size() == 3);
    CHECK(batch_iter(five, 6, 7, true).empty());
    CHECK_THROWS_AS(batch_iter(five, 0, 7, true), DataError);
}

TEST_CASE("one epoch without drop_last partitions the rows") {
    for (std::uint64_t seed : {0ull, 1ull, 99ull}) {
        for (std::size_t n : {1u, 7u, 64u, 1001u}) {
            for (std::size_t bs : {1u, 3u, 64u}) {
                std::vector<int> hits(n, 0);
                for (const auto& batch : epoch_batches(n, bs, seed, 2, false))
                    for (auto r : batch) ++hits[r];
                CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
            }
        }
    }
}

TEST_CASE("epochs reshuffle") {
    const auto e0 = epoch_batches(100, 100, 5, 0, false);
    const auto e1 = epoch_batches(100, 100, 5, 1, false);
    CHECK(e0 != e1);
    CHECK(e0 == epoch_batches(100, 100, 5, 0, false));
}

TEST_CASE("compute_stats") {
    SUBCASE("single row") {
        RowMatrixXf m(1, 3);
        m << 1, -2, 3;
        const auto s = compute_stats(make_dataset(m));
        CHECK(s.mean[1] == -2);
        CHECK(s.variance.isZero());
    }
    SUBCASE("hand arithmetic") {
        RowMatrixXf m(2, 1);
        m << 0, 2;
        const auto s = compute_stats(make_dataset(m));
        CHECK(s.mean[0] == 1.0);
        CHECK(s.variance[0] == 1.0);
    }
    SUBCASE("empty") { CHECK_THROWS_WITH(compute_stats(make_dataset(RowMatrixXf(0, 2))), "empty dataset"); }
    SUBCASE("brute-force two-pass oracle") {
        auto ds = random_dataset(1000, 8, 11);
        ds.data.array() += 100.0f;  // large offset stresses cancellation
        const auto s = compute_stats(ds);
        for (Index c = 0; c < 8; ++c) {
            long double mean = 0;
            for (Index r = 0; r < 1000; ++r) mean += ds.data(r, c);
            mean /= 1000;
            long double var = 0;
            for (Index r = 0; r < 1000; ++r) var += (ds.data(r, c) - mean) * (ds.data(r, c) - mean);
            var /= 1000;
            CHECK(std::abs(s.mean[c] - static_cast<double>(mean)) <= 1e-6 * std::abs(static_cast<double>(mean)));
            CHECK(std::abs(s.variance[c] - static_cast<double>(var)) <= 1e-6 * static_cast<double>(var));
            CHECK(s.variance[c] >= 0);
        }
    }
}
