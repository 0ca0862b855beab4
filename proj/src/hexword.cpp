// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/hexword.hpp"

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>

namespace fuselab {

std::string to_hex_word(double value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(std::bit_cast<std::uint64_t>(value)));
    return std::string(buf, 16);
}

std::optional<double> from_hex_word(std::string_view text) {
    if (text.size() != 16) return std::nullopt;
    for (char c : text) {
        const bool ok = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
        if (!ok) return std::nullopt;
    }
    std::uint64_t bits = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), bits, 16);
    if (ec != std::errc() || ptr != text.data() + text.size()) return std::nullopt;
    return std::bit_cast<double>(bits);
}

} // namespace fuselab
