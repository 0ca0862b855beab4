// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <gtest/gtest.h>

#include <string>
#include <vector>

#include "fuselab/core.hpp"
#include "fuselab/error.hpp"

namespace fuselab::testing {

inline RewardedResponse rr(double reward, std::int32_t index, TokenSeq tokens = {1, 2, kEndToken},
                           std::string source = "s") {
    return {{std::move(tokens), std::move(source), index}, reward};
}

inline std::vector<RewardedResponse> scored(const std::vector<double>& rewards, const std::string& source = "s") {
    std::vector<RewardedResponse> out;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        out.push_back(rr(rewards[i], static_cast<std::int32_t>(i), {static_cast<Token>(1 + i), kEndToken}, source));
    }
    return out;
}

} // namespace fuselab::testing

#define EXPECT_FUSELAB_ERROR(stmt, k)                                                                  \
    do {                                                                                               \
        try {                                                                                          \
            stmt;                                                                                      \
            ADD_FAILURE() << "expected " << ::fuselab::to_string(k) << " error";                       \
        } catch (const ::fuselab::Error& e_) {                                                         \
            EXPECT_EQ(e_.kind(), k) << e_.what();                                                      \
        }                                                                                              \
    } while (0)
