// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Counter-based random streams. Every stream is addressed by a 64-bit key and
// a position, so work units can draw from independent substreams without any
// shared generator state.

#pragma once

#include <cstdint>
#include <initializer_list>
#include <limits>
#include <string_view>

namespace fuselab {

constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Derives a child key from a parent key and a list of integer tags.
constexpr std::uint64_t derive_seed(std::uint64_t parent, std::initializer_list<std::uint64_t> tags) {
    std::uint64_t key = mix64(parent ^ 0x6a09e667f3bcc909ULL);
    for (std::uint64_t t : tags) {
        key = mix64(key ^ mix64(t + 0x3c6ef372fe94f82bULL));
    }
    return key;
}

// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t stable_hash(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Satisfies UniformRandomBitGenerator; value n of stream `key` is mix64(key, n).
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t key, std::uint64_t counter = 0) : key_(key), counter_(counter) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return at(counter_++); }

    result_type at(std::uint64_t position) const { return mix64(key_ ^ mix64(position)); }

    // Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

} // namespace fuselab
