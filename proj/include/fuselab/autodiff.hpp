// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Vector-valued reverse-mode tape. A tape is bound to one flat parameter
// vector; parameter-reading ops (embedding gather, affine) route their
// adjoints into a gradient of the same length. Everything else on the tape is
// either derived from those reads or a constant.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace fuselab::ad {

struct Var {
    std::uint32_t id = 0;
};

enum class Op : std::uint8_t {
    constant,
    gather,
    affine,
    tanh,
    log_softmax,
    pick,
    scale,
    weighted_sum,
    log_sigmoid,
};

const char* to_string(Op op);

class Tape {
public:
    explicit Tape(std::span<const double> params);

    Var constant(double value);
    Var constant(std::vector<double> value);

    // Concatenation of rows of a row-major table stored at `table_offset`.
    Var gather(std::size_t table_offset, std::size_t row_width, std::span<const std::size_t> rows);

    // W x + b, W row-major out_dim x in_dim at weight_offset, b at bias_offset.
    Var affine(std::size_t weight_offset, std::size_t bias_offset, std::size_t out_dim, Var x);

    Var tanh(Var x);
    Var log_softmax(Var x);
    Var pick(Var x, std::size_t index);
    Var add(Var a, Var b);
    Var sub(Var a, Var b) { return weighted_sum({a, b}, {1.0, -1.0}); }
    Var scale(Var x, double c);
    Var neg(Var x) { return scale(x, -1.0); }
    Var sum(std::span<const Var> xs);
    Var weighted_sum(std::span<const Var> xs, std::span<const double> coeffs);
    Var weighted_sum(std::initializer_list<Var> xs, std::initializer_list<double> coeffs) {
        return weighted_sum(std::span(xs.begin(), xs.size()), std::span(coeffs.begin(), coeffs.size()));
    }
    // log(sigmoid(x)) of a scalar.
    Var log_sigmoid(Var x);

    const std::vector<double>& value(Var v) const { return nodes_.at(v.id).value; }
    double scalar(Var v) const;

    // Reverse pass from a scalar node; returns d(loss)/d(params).
    // Throws a numeric Error naming the first non-finite node.
    std::vector<double> gradient(Var loss) const;

    std::size_t size() const { return nodes_.size(); }
    std::size_t param_count() const { return params_.size(); }

private:
    struct Node {
        Op op = Op::constant;
        std::vector<double> value;
        std::vector<std::uint32_t> inputs;
        std::vector<double> coeffs;
        std::vector<std::size_t> rows;
        std::size_t offset_a = 0;
        std::size_t offset_b = 0;
        std::size_t width = 0;
    };

    Var push(Node node);
    [[noreturn]] void non_finite(std::uint32_t id, const char* what) const;

    std::span<const double> params_;
    std::vector<Node> nodes_;
};

} // namespace fuselab::ad
