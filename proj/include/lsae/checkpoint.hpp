#ifndef LSAE_CHECKPOINT_HPP
#define LSAE_CHECKPOINT_HPP

#include "lsae/sae.hpp"

#include <filesystem>

namespace lsae {

inline constexpr char kCheckpointMagic[8] = {'L', 'S', 'A', 'E', 'S', 'A', 'E', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout: magic, u32 version, u32 D, u32 M, u32 k, f32 theta, then w_enc,
// b_enc, w_dec, b_dec as row-major f32. Little-endian.
void save_checkpoint(const SaeModel<float>& model, const std::filesystem::path& path);
SaeModel<float> load_checkpoint(const std::filesystem::path& path);

} // namespace lsae

#endif // LSAE_CHECKPOINT_HPP
