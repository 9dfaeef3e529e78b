#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace phasekit {

// splitmix64 step; the standard finalizer used to spread seed entropy.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derive an independent stream seed from a root seed and a list of salts
// (module tag, grid indices, trial number...). Sweeps derive every
// per-run stream through this function so results are reproducible no
// matter how work is distributed over threads.
inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> salts) {
    std::uint64_t s = root;
    splitmix64(s);
    for (std::uint64_t salt : salts) {
        s ^= salt + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
        splitmix64(s);
    }
    std::uint64_t t = s;
    return splitmix64(t);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace phasekit
