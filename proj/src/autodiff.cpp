// Copyright (c) 2026 The fuselab Authors
// SPDX-License-Identifier: Apache-2.0

#include "fuselab/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "fuselab/error.hpp"

namespace fuselab::ad {

const char* to_string(Op op) {
    switch (op) {
    case Op::constant: return "constant";
    case Op::gather: return "gather";
    case Op::affine: return "affine";
    case Op::tanh: return "tanh";
    case Op::log_softmax: return "log_softmax";
    case Op::pick: return "pick";
    case Op::scale: return "scale";
    case Op::weighted_sum: return "weighted_sum";
    case Op::log_sigmoid: return "log_sigmoid";
    }
    return "?";
}

Tape::Tape(std::span<const double> params) : params_(params) { nodes_.reserve(256); }

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

double Tape::scalar(Var v) const {
    const auto& val = value(v);
    if (val.size() != 1) fail(ErrorKind::size, "node is not a scalar");
    return val.front();
}

Var Tape::constant(double value) { return constant(std::vector<double>{value}); }

Var Tape::constant(std::vector<double> value) {
    Node n;
    n.op = Op::constant;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::gather(std::size_t table_offset, std::size_t row_width, std::span<const std::size_t> rows) {
    Node n;
    n.op = Op::gather;
    n.offset_a = table_offset;
    n.width = row_width;
    n.rows.assign(rows.begin(), rows.end());
    n.value.resize(rows.size() * row_width);
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const double* src = params_.data() + table_offset + rows[k] * row_width;
        std::copy(src, src + row_width, n.value.begin() + static_cast<std::ptrdiff_t>(k * row_width));
    }
    return push(std::move(n));
}

Var Tape::affine(std::size_t weight_offset, std::size_t bias_offset, std::size_t out_dim, Var x) {
    const auto& in = value(x);
    const std::size_t in_dim = in.size();
    if (weight_offset + out_dim * in_dim > params_.size() || bias_offset + out_dim > params_.size()) {
        fail(ErrorKind::size, "affine map reads past the parameter vector");
    }
    Node n;
    n.op = Op::affine;
    n.offset_a = weight_offset;
    n.offset_b = bias_offset;
    n.width = in_dim;
    n.inputs = {x.id};
    n.value.resize(out_dim);
    const double* w = params_.data() + weight_offset;
    const double* b = params_.data() + bias_offset;
    for (std::size_t o = 0; o < out_dim; ++o) {
        double acc = b[o];
        const double* row = w + o * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) acc += row[i] * in[i];
        n.value[o] = acc;
    }
    return push(std::move(n));
}

Var Tape::tanh(Var x) {
    Node n;
    n.op = Op::tanh;
    n.inputs = {x.id};
    n.value = value(x);
    for (double& v : n.value) v = std::tanh(v);
    return push(std::move(n));
}

Var Tape::log_softmax(Var x) {
    Node n;
    n.op = Op::log_softmax;
    n.inputs = {x.id};
    n.value = value(x);
    if (n.value.empty()) fail(ErrorKind::size, "log_softmax of an empty vector");
    const double top = *std::max_element(n.value.begin(), n.value.end());
    double z = 0.0;
    for (double v : n.value) z += std::exp(v - top);
    const double lse = top + std::log(z);
    for (double& v : n.value) v -= lse;
    return push(std::move(n));
}

Var Tape::pick(Var x, std::size_t index) {
    const auto& in = value(x);
    if (index >= in.size()) fail(ErrorKind::size, "pick index out of range");
    Node n;
    n.op = Op::pick;
    n.inputs = {x.id};
    n.width = index;
    n.value = {in[index]};
    return push(std::move(n));
}

Var Tape::add(Var a, Var b) { return weighted_sum({a, b}, {1.0, 1.0}); }

Var Tape::scale(Var x, double c) {
    Node n;
    n.op = Op::scale;
    n.inputs = {x.id};
    n.coeffs = {c};
    n.value = value(x);
    for (double& v : n.value) v *= c;
    return push(std::move(n));
}

Var Tape::sum(std::span<const Var> xs) {
    const std::vector<double> ones(xs.size(), 1.0);
    return weighted_sum(xs, ones);
}

Var Tape::weighted_sum(std::span<const Var> xs, std::span<const double> coeffs) {
    if (xs.size() != coeffs.size()) fail(ErrorKind::size, "weighted_sum needs one coefficient per input");
    if (xs.empty()) return constant(0.0);
    Node n;
    n.op = Op::weighted_sum;
    n.value.assign(value(xs.front()).size(), 0.0);
    for (std::size_t k = 0; k < xs.size(); ++k) {
        const auto& v = value(xs[k]);
        if (v.size() != n.value.size()) fail(ErrorKind::size, "weighted_sum inputs differ in size");
        for (std::size_t i = 0; i < v.size(); ++i) n.value[i] += coeffs[k] * v[i];
        n.inputs.push_back(xs[k].id);
    }
    n.coeffs.assign(coeffs.begin(), coeffs.end());
    return push(std::move(n));
}

Var Tape::log_sigmoid(Var x) {
    const double v = scalar(x);
    Node n;
    n.op = Op::log_sigmoid;
    n.inputs = {x.id};
    n.value = {v >= 0.0 ? -std::log1p(std::exp(-v)) : v - std::log1p(std::exp(v))};
    return push(std::move(n));
}

void Tape::non_finite(std::uint32_t id, const char* what) const {
    fail(ErrorKind::numeric, std::string("non-finite ") + what + " at node #" + std::to_string(id) + " (" +
                                 to_string(nodes_[id].op) + ")");
}

std::vector<double> Tape::gradient(Var loss) const {
    if (value(loss).size() != 1) fail(ErrorKind::size, "gradient needs a scalar loss node");
    for (std::uint32_t id = 0; id <= loss.id; ++id) {
        for (double v : nodes_[id].value) {
            if (!std::isfinite(v)) non_finite(id, "value");
        }
    }

    std::vector<double> grad(params_.size(), 0.0);
    std::vector<std::vector<double>> adj(loss.id + 1);
    adj[loss.id] = {1.0};

    auto adj_of = [&](std::uint32_t id) -> std::vector<double>& {
        auto& a = adj[id];
        if (a.empty()) a.assign(nodes_[id].value.size(), 0.0);
        return a;
    };

    for (std::uint32_t id = loss.id + 1; id-- > 0;) {
        if (adj[id].empty()) continue;
        const Node& n = nodes_[id];
        const std::vector<double>& g = adj[id];
        for (double v : g) {
            if (!std::isfinite(v)) non_finite(id, "adjoint");
        }
        switch (n.op) {
        case Op::constant:
            break;
        case Op::gather:
            for (std::size_t k = 0; k < n.rows.size(); ++k) {
                double* dst = grad.data() + n.offset_a + n.rows[k] * n.width;
                for (std::size_t j = 0; j < n.width; ++j) dst[j] += g[k * n.width + j];
            }
            break;
        case Op::affine: {
            const auto& x = nodes_[n.inputs[0]].value;
            auto& gx = adj_of(n.inputs[0]);
            const double* w = params_.data() + n.offset_a;
            double* gw = grad.data() + n.offset_a;
            double* gb = grad.data() + n.offset_b;
            for (std::size_t o = 0; o < g.size(); ++o) {
                const double go = g[o];
                if (go == 0.0) continue;
                gb[o] += go;
                const double* row = w + o * n.width;
                double* grow = gw + o * n.width;
                for (std::size_t i = 0; i < n.width; ++i) {
                    grow[i] += go * x[i];
                    gx[i] += go * row[i];
                }
            }
            break;
        }
        case Op::tanh: {
            auto& gx = adj_of(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
            break;
        }
        case Op::log_softmax: {
            auto& gx = adj_of(n.inputs[0]);
            double total = 0.0;
            for (double v : g) total += v;
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] - std::exp(n.value[i]) * total;
            break;
        }
        case Op::pick:
            adj_of(n.inputs[0])[n.width] += g[0];
            break;
        case Op::scale: {
            auto& gx = adj_of(n.inputs[0]);
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.coeffs[0] * g[i];
            break;
        }
        case Op::weighted_sum:
            for (std::size_t k = 0; k < n.inputs.size(); ++k) {
                auto& gx = adj_of(n.inputs[k]);
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += n.coeffs[k] * g[i];
            }
            break;
        case Op::log_sigmoid: {
            const double x = nodes_[n.inputs[0]].value[0];
            // d/dx log sigmoid(x) = sigmoid(-x)
            const double s = x >= 0.0 ? std::exp(-x) / (1.0 + std::exp(-x)) : 1.0 / (1.0 + std::exp(x));
            adj_of(n.inputs[0])[0] += g[0] * s;
            break;
        }
        }
    }
    for (std::size_t i = 0; i < grad.size(); ++i) {
        if (!std::isfinite(grad[i])) fail(ErrorKind::numeric, "non-finite gradient at parameter " + std::to_string(i));
    }
    return grad;
}

} // namespace fuselab::ad
