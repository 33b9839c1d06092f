#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace tdmr {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seeded random stream. All value transformations (uniform, gaussian,
// bounded int) are done on raw mt19937_64 draws with fixed arithmetic,
// so identical (seed, draw sequence) reproduces identical values
// bit-for-bit on any platform.
class RngStream {
public:
    static constexpr const char* kAlgorithm = "mt19937_64";

    explicit RngStream(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }
    std::uint64_t draw_count() const { return draws_; }

    std::uint64_t next_u64() {
        ++draws_;
        return engine_();
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi], inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard gaussian via Box-Muller; always consumes exactly two draws.
    double normal() {
        const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // Independent child stream; used to give each sample/batch its own
    // replayable stream (seed mixed with a stream id).
    RngStream derive(std::uint64_t stream_id) const {
        return RngStream(splitmix64(seed_ ^ splitmix64(stream_id)));
    }

    std::string save_state() const {
        std::ostringstream os;
        os << seed_ << ' ' << draws_ << ' ' << engine_;
        return os.str();
    }

    void load_state(const std::string& state) {
        std::istringstream is(state);
        is >> seed_ >> draws_ >> engine_;
    }

private:
    std::uint64_t seed_ = 0;
    std::uint64_t draws_ = 0;
    std::mt19937_64 engine_;
};

}  // namespace tdmr
