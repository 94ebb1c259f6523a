#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace lvd {

// 64-bit FNV-1a, used to derive per-purpose stream seeds from (master seed, name).
uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 14695981039346656037ull);
uint64_t derive_seed(uint64_t master, const std::string& name);

// A single random stream. Gaussian draws use Box-Muller on top of mt19937_64 so
// the sequence does not depend on the standard library's normal_distribution.
class RngStream {
public:
    RngStream() : RngStream(0) {}
    explicit RngStream(uint64_t seed) : eng_(seed) {}

    double uniform();                       // [0, 1)
    double gaussian();                      // N(0, 1)
    int64_t randint(int64_t n);             // [0, n)
    uint64_t bits() { return eng_(); }

    std::string serialize() const;
    static RngStream deserialize(const std::string& s);

private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Named streams derived from one master seed. Each purpose (weight init, noise,
// timestep draws, dropout, data shuffling, ...) pulls from its own stream so that
// adding draws to one purpose never perturbs another.
class RngSuite {
public:
    RngSuite() : master_(0) {}
    explicit RngSuite(uint64_t master) : master_(master) {}

    RngStream& stream(const std::string& name);
    uint64_t master() const { return master_; }

    std::map<std::string, std::string> serialize() const;
    void deserialize(const std::map<std::string, std::string>& m);

private:
    uint64_t master_;
    std::map<std::string, RngStream> streams_;
};

}  // namespace lvd
