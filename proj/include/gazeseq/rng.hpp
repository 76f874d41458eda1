#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace gazeseq {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Combines a base seed with stream identifiers into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> stream) {
    std::uint64_t h = splitmix64(base);
    for (std::uint64_t s : stream) h = splitmix64(h ^ splitmix64(s + 0x632be59bd9b4e019ULL));
    return h;
}

// Stream tags keep per-purpose seeds apart.
enum class SeedStream : std::uint64_t {
    kStimulus = 1,
    kScanpath = 2,
    kSubject = 3,
    kFrameNoise = 4,
    kSequencePick = 5,
    kSplit = 6,
    kInit = 7,
    kShuffle = 8,
};

inline std::uint64_t tag(SeedStream s) { return static_cast<std::uint64_t>(s); }

/// FNV-1a, used for content digests of generated artifacts.
class Fnv1a64 {
public:
    void update(const void* data, std::size_t size) {
        const auto* bytes = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            hash_ ^= bytes[i];
            hash_ *= 0x100000001b3ULL;
        }
    }
    std::uint64_t digest() const { return hash_; }

private:
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

}  // namespace gazeseq
