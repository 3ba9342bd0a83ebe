#include "l3doc/ops.hpp"

#include <algorithm>
#include <cmath>

#include "l3doc/errors.hpp"

namespace l3doc::ops {

namespace {

[[noreturn]] void mismatch(const char* op, const Tensor& a, const Tensor& b) {
    throw DimensionError(std::string(op) + ": incompatible shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()));
}

void require_rank(const char* op, const Tensor& t, std::size_t rank) {
    if (t.rank() != rank) {
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                             shape_to_string(t.shape()));
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) mismatch("matmul", a, b);
    Tensor out({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        double* row = po + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = pa[i * k + p];
            const double* brow = pb + p * n;
            for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
        }
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
        return out;
    }
    if (b.rank() == 1 && b.dim(0) == a.shape().back()) {
        const std::size_t n = b.size();
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % n];
        return out;
    }
    mismatch("add", a, b);
}

Tensor scale(const Tensor& a, double factor) {
    Tensor out = a;
    for (auto& v : out.data()) v *= factor;
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return out;
}

double mean(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return s / static_cast<double>(a.size());
}

Tensor channel_contract(const Tensor& c, const Tensor& d) {
    require_rank("channel_contract", c, 3);
    require_rank("channel_contract", d, 3);
    const std::size_t n = c.dim(2);
    if (c.dim(0) != 1 || c.dim(1) != 1 || d.dim(0) != n) mismatch("channel_contract", c, d);
    const std::size_t plane = d.dim(1) * d.dim(2);
    Tensor out({1, 1, d.dim(1), d.dim(2)});
    for (std::size_t k = 0; k < n; ++k) {
        const double ck = c[k];
        const double* dk = d.data().data() + k * plane;
        for (std::size_t j = 0; j < plane; ++j) out[j] += ck * dk[j];
    }
    return out;
}

Tensor transposed_conv2d(const Tensor& input, const Tensor& kernel) {
    require_rank("transposed_conv2d", input, 3);
    require_rank("transposed_conv2d", kernel, 4);
    const std::size_t h = input.dim(0), w = input.dim(1), c_in = input.dim(2);
    const std::size_t s = kernel.dim(0), c_out = kernel.dim(2);
    if (kernel.dim(1) != s || kernel.dim(3) != c_in) mismatch("transposed_conv2d", input, kernel);
    Tensor out({h, w, c_out});
    // Scatter each input pixel into the s x s window below/right of it, dropping
    // contributions that land outside the cropped H x W block.
    for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
            const double* in = input.data().data() + (y * w + x) * c_in;
            for (std::size_t dy = 0; dy < s && y + dy < h; ++dy) {
                for (std::size_t dx = 0; dx < s && x + dx < w; ++dx) {
                    double* o = out.data().data() + ((y + dy) * w + (x + dx)) * c_out;
                    const double* k = kernel.data().data() + (dy * s + dx) * c_out * c_in;
                    for (std::size_t oc = 0; oc < c_out; ++oc) {
                        double acc = 0.0;
                        for (std::size_t ic = 0; ic < c_in; ++ic) acc += in[ic] * k[oc * c_in + ic];
                        o[oc] += acc;
                    }
                }
            }
        }
    }
    return out;
}

Tensor max_pool_points(const Tensor& features) {
    require_rank("max_pool_points", features, 2);
    Tensor pooled = max_pool_groups(features, features.dim(0));
    return pooled.reshaped({features.dim(1)});
}

Tensor max_pool_groups(const Tensor& features, std::size_t points_per_object, std::vector<std::size_t>* argmax) {
    require_rank("max_pool_points", features, 2);
    const std::size_t rows = features.dim(0), f = features.dim(1);
    if (points_per_object == 0 || rows % points_per_object != 0) {
        throw DimensionError("max_pool_points: " + std::to_string(rows) + " rows do not split into groups of " +
                             std::to_string(points_per_object));
    }
    const std::size_t b = rows / points_per_object;
    Tensor out({b, f});
    if (argmax) argmax->assign(b * f, 0);
    for (std::size_t obj = 0; obj < b; ++obj) {
        const std::size_t first = obj * points_per_object;
        for (std::size_t j = 0; j < f; ++j) {
            std::size_t best = first;
            double m = features[first * f + j];
            for (std::size_t r = first + 1; r < first + points_per_object; ++r) {
                const double v = features[r * f + j];
                if (v > m) {
                    m = v;
                    best = r;
                }
            }
            out[obj * f + j] = m;
            if (argmax) (*argmax)[obj * f + j] = best;
        }
    }
    return out;
}

double sq_l2_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) mismatch("sq_l2_diff", a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

Tensor softmax(const Tensor& v) {
    if (v.rank() > 2) throw DimensionError("softmax: expected rank 1 or 2, got " + shape_to_string(v.shape()));
    const std::size_t n = v.shape().back();
    const std::size_t rows = v.size() / n;
    Tensor out = v;
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data().data() + r * n;
        const double m = *std::max_element(row, row + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            row[j] = std::exp(row[j] - m);
            z += row[j];
        }
        for (std::size_t j = 0; j < n; ++j) row[j] /= z;
    }
    return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& m) {
    const std::size_t n = m.shape().back();
    const std::size_t rows = m.size() / n;
    std::vector<std::size_t> out(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < n; ++j) {
            if (m[r * n + j] > m[r * n + best]) best = j;
        }
        out[r] = best;
    }
    return out;
}

}  // namespace l3doc::ops
