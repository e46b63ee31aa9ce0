#include "eqsae/rng.hpp"

namespace eqsae {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ull;

std::uint64_t fnv_bytes(std::uint64_t h, const void* data, std::size_t n) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::uint64_t fnv_u64(std::uint64_t h, std::uint64_t v) {
  unsigned char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
  return fnv_bytes(h, bytes, 8);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
  std::uint64_t h = fnv_u64(kFnvOffset, root);
  h = fnv_bytes(h, stage.data(), stage.size());
  // A zero seed would make SplitMix64's first outputs low-entropy; avoid it.
  return h == 0 ? kFnvPrime : h;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stage,
                          std::string_view detail, std::uint64_t index) {
  std::uint64_t h = fnv_u64(kFnvOffset, root);
  h = fnv_bytes(h, stage.data(), stage.size());
  h = fnv_bytes(h, detail.data(), detail.size());
  h = fnv_u64(h, index);
  return h == 0 ? kFnvPrime : h;
}

}  // namespace eqsae
