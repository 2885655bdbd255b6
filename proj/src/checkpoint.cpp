#include "lsae/checkpoint.hpp"

#include <cstring>
#include <fstream>

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

template <typename Dense>
void put_block(std::ostream& os, const Dense& m) {
    os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

template <typename Dense>
void get_block(std::istream& is, Dense& m) {
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
}

} // namespace

void save_checkpoint(const SaeModel<float>& model, const std::filesystem::path& path) {
    validate(model);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    put<std::uint32_t>(out, kCheckpointVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.dim_in));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.dict_size));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(model.k));
    put<float>(out, model.theta);
    put_block(out, model.w_enc);
    put_block(out, model.b_enc);
    put_block(out, model.w_dec);
    put_block(out, model.b_dec);
    if (!out) throw IoError("write failed: " + path.string());
}

SaeModel<float> load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw DataError("bad magic in " + path.string());
    const auto version = get<std::uint32_t>(in);
    if (version != kCheckpointVersion) throw DataError("unsupported checkpoint version " + std::to_string(version));

    SaeModel<float> model;
    model.dim_in = get<std::uint32_t>(in);
    model.dict_size = get<std::uint32_t>(in);
    model.k = get<std::uint32_t>(in);
    model.theta = get<float>(in);
    if (!in) throw DataError("truncated checkpoint header in " + path.string());

    const auto d = static_cast<std::uintmax_t>(model.dim_in);
    const auto m = static_cast<std::uintmax_t>(model.dict_size);
    const std::uintmax_t expected = 28 + 4 * (2 * m * d + m + d);
    const auto size = std::filesystem::file_size(path);
    if (size < expected) throw DataError("truncated checkpoint " + path.string());
    if (size > expected) throw DataError("trailing bytes in checkpoint " + path.string());

    model.w_enc.resize(model.dict_size, model.dim_in);
    model.b_enc.resize(model.dict_size);
    model.w_dec.resize(model.dict_size, model.dim_in);
    model.b_dec.resize(model.dim_in);
    get_block(in, model.w_enc);
    get_block(in, model.b_enc);
    get_block(in, model.w_dec);
    get_block(in, model.b_dec);
    if (!in) throw DataError("truncated checkpoint " + path.string());
    validate(model);
    return model;
}

} // namespace lsae
