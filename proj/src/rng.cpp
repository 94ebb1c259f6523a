#include "lvd/rng.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace lvd {

uint64_t fnv1a64(const void* data, size_t len, uint64_t h) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t derive_seed(uint64_t master, const std::string& name) {
    uint64_t h = fnv1a64(&master, sizeof(master));
    return fnv1a64(name.data(), name.size(), h);
}

double RngStream::uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
}

double RngStream::gaussian() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // u1 in (0,1] keeps the log finite
    double u1 = 1.0 - uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
}

int64_t RngStream::randint(int64_t n) {
    // rejection sampling for an unbiased draw
    uint64_t un = static_cast<uint64_t>(n);
    uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
        x = eng_();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
}

std::string RngStream::serialize() const {
    std::ostringstream os;
    uint64_t bits = 0;
    static_assert(sizeof(bits) == sizeof(spare_));
    std::memcpy(&bits, &spare_, sizeof(bits));
    os << eng_ << " " << (has_spare_ ? 1 : 0) << " " << bits;
    return os.str();
}

RngStream RngStream::deserialize(const std::string& s) {
    RngStream r;
    std::istringstream is(s);
    is >> r.eng_;
    int hs = 0;
    uint64_t bits = 0;
    is >> hs >> bits;
    r.has_spare_ = hs != 0;
    std::memcpy(&r.spare_, &bits, sizeof(bits));
    return r;
}

RngStream& RngSuite::stream(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end()) {
        it = streams_.emplace(name, RngStream(derive_seed(master_, name))).first;
    }
    return it->second;
}

std::map<std::string, std::string> RngSuite::serialize() const {
    std::map<std::string, std::string> m;
    for (const auto& [k, v] : streams_) m[k] = v.serialize();
    return m;
}

void RngSuite::deserialize(const std::map<std::string, std::string>& m) {
    streams_.clear();
    for (const auto& [k, v] : m) streams_.emplace(k, RngStream::deserialize(v));
}

}  // namespace lvd
