#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>

namespace volshift {

// Error taxonomy. The CLI maps these onto exit codes: ConfigError -> 1,
// ShapeError/ParseError/IoError -> 2, NumericError -> 3.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error(msg) {}
};
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Small string builder for error messages: strf("bad axis ", i, " of ", n).
template <typename... Args>
std::string strf(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline uint64_t hash_combine(uint64_t a, uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ull));
}

inline uint64_t fnv1a64(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = 0xcbf29ce484222325ull;
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// Deterministic RNG used throughout. Hand-rolled draws so that streams do
// not depend on the standard library's distribution implementations.
class Rng {
  public:
    explicit Rng(uint64_t seed = 0) : state_(splitmix64(seed ^ 0x6a09e667f3bcc909ull)) {}

    uint64_t next_u64() {
        state_ = splitmix64(state_);
        return state_;
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // uniform integer in [0, n)
    uint64_t uniform_int(uint64_t n) { return n ? next_u64() % n : 0; }

    // standard normal via Box-Muller, with cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    bool bernoulli(double p) { return uniform() < p; }

    Rng fork(uint64_t stream) { return Rng(hash_combine(state_, stream)); }

  private:
    uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Worker-thread cap for data-parallel kernels. 1 disables parallelism.
void set_thread_count(int n);
int thread_count();

// Splits [0, n) into contiguous chunks, one per worker. Each index is
// processed by exactly one worker and chunks are internally sequential, so
// results do not depend on the thread count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& chunk_fn);

}  // namespace volshift
