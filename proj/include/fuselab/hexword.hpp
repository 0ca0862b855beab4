// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace fuselab {

// 16 lowercase hex digits of the IEEE-754 binary64 bit pattern.
std::string to_hex_word(double value);

// Inverse of to_hex_word; nullopt unless exactly 16 hex digits.
std::optional<double> from_hex_word(std::string_view text);

} // namespace fuselab
