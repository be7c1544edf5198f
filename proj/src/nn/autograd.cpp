#include "paracolor/nn/autograd.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <unordered_set>

#include "paracolor/error.hpp"

namespace paracolor::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;
using StridedMap = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

thread_local bool t_grad_enabled = true;

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    bool needs = false;
    if (t_grad_enabled)
        for (const Var& in : inputs) needs = needs || in.requires_grad();
    if (needs) {
        node->requires_grad = true;
        node->inputs.reserve(inputs.size());
        for (const Var& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.shape() != b.shape())
        throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
}

void require_rank(const Var& a, std::size_t rank, const char* op) {
    if (a.value().rank() != rank)
        throw UsageError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
    Tensor out(a.shape());
    const double* x = a.value().data();
    double* y = out.data();
    for (std::int64_t i = 0; i < out.size(); ++i) y[i] = f(x[i]);
    return make_result(std::move(out), {a}, [df](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        const double* x = in.value.data();
        const double* y = self.value.data();
        const double* gy = self.grad.data();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += gy[i] * df(x[i], y[i]);
    });
}

}  // namespace

Tensor& detail::Node::grad_buffer() {
    if (grad.empty()) grad = Tensor(value.shape(), 0.0);
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_ && !node_->grad.empty()) node_->grad.fill(0.0);
}

void Var::backward() const {
    if (!node_ || node_->value.size() != 1) throw UsageError("backward() requires a scalar variable");
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    visited.insert(node_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    node_->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) node->backward(*node);
    }
}

Var Var::detach() const { return Var(node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() noexcept { return t_grad_enabled; }

// ---------------------------------------------------------------------------
// Elementwise binary

Var add(const Var& a, const Var& b) {
    require_same_shape(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return make_result(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k)
            if (input(self, k).requires_grad) input(self, k).grad_buffer().add_(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a.value();
    const double* y = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] -= y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        if (input(self, 0).requires_grad) input(self, 0).grad_buffer().add_(self.grad);
        if (input(self, 1).requires_grad) {
            Tensor& g = input(self, 1).grad_buffer();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a.value();
    const double* y = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] *= y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& na = input(self, 0);
        Node& nb = input(self, 1);
        if (na.requires_grad) {
            Tensor& g = na.grad_buffer();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * nb.value[i];
        }
        if (nb.requires_grad) {
            Tensor& g = nb.grad_buffer();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * na.value[i];
        }
    });
}

Var div(const Var& a, const Var& b) {
    require_same_shape(a, b, "div");
    Tensor out = a.value();
    const double* y = b.value().data();
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] /= y[i];
    return make_result(std::move(out), {a, b}, [](Node& self) {
        Node& na = input(self, 0);
        Node& nb = input(self, 1);
        if (na.requires_grad) {
            Tensor& g = na.grad_buffer();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / nb.value[i];
        }
        if (nb.requires_grad) {
            Tensor& g = nb.grad_buffer();
            for (std::int64_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i] * self.value[i] / nb.value[i];
        }
    });
}

Var scale(const Var& a, double factor) {
    return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Var add_scalar(const Var& a, double offset) {
    return unary(a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

Var gate(const Var& g, const Var& x) {
    if (g.value().size() != 1) throw UsageError("gate: gate variable must hold one element");
    const double s = g.item();
    Tensor out = x.value();
    out.scale_(s);
    return make_result(std::move(out), {g, x}, [](Node& self) {
        Node& ng = input(self, 0);
        Node& nx = input(self, 1);
        if (ng.requires_grad) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * nx.value[i];
            ng.grad_buffer()[0] += acc;
        }
        if (nx.requires_grad) {
            const double s = ng.value[0];
            Tensor& gx = nx.grad_buffer();
            for (std::int64_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * s;
        }
    });
}

// ---------------------------------------------------------------------------
// Elementwise unary

Var relu(const Var& a) {
    return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                 [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var leaky_relu(const Var& a, double slope) {
    return unary(a, [slope](double x) { return x > 0.0 ? x : slope * x; },
                 [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Var tanh(const Var& a) {
    return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
    return unary(
        a,
        [](double x) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        },
        [](double, double y) { return y * (1.0 - y); });
}

Var softplus(const Var& a) {
    return unary(
        a, [](double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); },
        [](double x, double) {
            if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
            const double e = std::exp(x);
            return e / (1.0 + e);
        });
}

Var abs(const Var& a) {
    return unary(a, [](double x) { return std::abs(x); },
                 [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
    return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt_eps(const Var& a, double eps) {
    return unary(a, [eps](double x) { return std::sqrt(x + eps); }, [](double, double y) { return 0.5 / y; });
}

// ---------------------------------------------------------------------------
// Reductions and reshaping

Var sum(const Var& a) {
    double acc = 0.0;
    for (double v : a.value().values()) acc += v;
    return make_result(Tensor::scalar(acc), {a}, [](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        const double g = self.grad[0];
        for (double& v : in.grad_buffer().values()) v += g;
    });
}

Var mean(const Var& a) {
    const auto n = static_cast<double>(a.value().size());
    if (n == 0) throw UsageError("mean of empty tensor");
    return scale(sum(a), 1.0 / n);
}

Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return make_result(std::move(out), {a}, [](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var concat_channels(const std::vector<Var>& parts) {
    if (parts.empty()) throw UsageError("concat_channels: no inputs");
    const Shape& s0 = parts.front().shape();
    if (s0.size() != 4) throw UsageError("concat_channels: rank-4 inputs required");
    int channels = 0;
    for (const Var& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
            throw UsageError("concat_channels: incompatible shape " + shape_string(s));
        channels += s[1];
    }
    const int n = s0[0];
    const std::int64_t plane = static_cast<std::int64_t>(s0[2]) * s0[3];
    Tensor out(Shape{n, channels, s0[2], s0[3]});
    std::vector<int> offsets;
    int offset = 0;
    for (const Var& p : parts) {
        offsets.push_back(offset);
        const int c = p.dim(1);
        for (int b = 0; b < n; ++b)
            std::copy_n(p.value().data() + b * c * plane, c * plane, out.data() + (b * channels + offset) * plane);
        offset += c;
    }
    return make_result(std::move(out), parts, [offsets, channels, n, plane](Node& self) {
        for (std::size_t k = 0; k < self.inputs.size(); ++k) {
            Node& in = input(self, k);
            if (!in.requires_grad) continue;
            const int c = in.value.dim(1);
            Tensor& g = in.grad_buffer();
            for (int b = 0; b < n; ++b) {
                const double* src = self.grad.data() + (b * channels + offsets[k]) * plane;
                double* dst = g.data() + b * c * plane;
                for (std::int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
            }
        }
    });
}

Var slice_channels(const Var& a, int begin, int count) {
    require_rank(a, 4, "slice_channels");
    const int n = a.dim(0), channels = a.dim(1);
    if (begin < 0 || count < 0 || begin + count > channels) throw UsageError("slice_channels: range out of bounds");
    const std::int64_t plane = static_cast<std::int64_t>(a.dim(2)) * a.dim(3);
    Tensor out(Shape{n, count, a.dim(2), a.dim(3)});
    for (int b = 0; b < n; ++b)
        std::copy_n(a.value().data() + (b * channels + begin) * plane, count * plane, out.data() + b * count * plane);
    return make_result(std::move(out), {a}, [=](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (int b = 0; b < n; ++b) {
            const double* src = self.grad.data() + b * count * plane;
            double* dst = g.data() + (b * channels + begin) * plane;
            for (std::int64_t i = 0; i < count * plane; ++i) dst[i] += src[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Convolution

namespace {

struct ConvGeometry {
    int channels, height, width, kernel, stride, padding, out_h, out_w;
    std::int64_t patch() const { return static_cast<std::int64_t>(channels) * kernel * kernel; }
    std::int64_t positions() const { return static_cast<std::int64_t>(out_h) * out_w; }
};

// Output rows [row0, row1) of one sample as a (C*k*k) x ((row1-row0)*out_w) matrix.
void im2col(const double* x, const ConvGeometry& g, int row0, int row1, double* cols) {
    const std::int64_t tile = static_cast<std::int64_t>(row1 - row0) * g.out_w;
    std::int64_t r = 0;
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx, ++r) {
                double* dst = cols + r * tile;
                const double* plane = x + static_cast<std::int64_t>(c) * g.height * g.width;
                for (int oy = row0; oy < row1; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky;
                    double* row = dst + static_cast<std::int64_t>(oy - row0) * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill_n(row, g.out_w, 0.0);
                        continue;
                    }
                    const double* src = plane + static_cast<std::int64_t>(iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx;
                        row[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
                    }
                }
            }
}

void col2im_add(const double* cols, const ConvGeometry& g, int row0, int row1, double* dx) {
    const std::int64_t tile = static_cast<std::int64_t>(row1 - row0) * g.out_w;
    std::int64_t r = 0;
    for (int c = 0; c < g.channels; ++c)
        for (int ky = 0; ky < g.kernel; ++ky)
            for (int kx = 0; kx < g.kernel; ++kx, ++r) {
                const double* src = cols + r * tile;
                double* plane = dx + static_cast<std::int64_t>(c) * g.height * g.width;
                for (int oy = row0; oy < row1; ++oy) {
                    const int iy = oy * g.stride - g.padding + ky;
                    if (iy < 0 || iy >= g.height) continue;
                    const double* row = src + static_cast<std::int64_t>(oy - row0) * g.out_w;
                    double* dst = plane + static_cast<std::int64_t>(iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ++ox) {
                        const int ix = ox * g.stride - g.padding + kx;
                        if (ix >= 0 && ix < g.width) dst[ix] += row[ox];
                    }
                }
            }
}

int rows_per_tile(const ConvGeometry& g) {
    constexpr std::int64_t budget = 1 << 21;  // doubles in the column buffer
    const std::int64_t per_row = g.patch() * g.out_w;
    return static_cast<int>(std::clamp<std::int64_t>(budget / std::max<std::int64_t>(per_row, 1), 1, g.out_h));
}

bool is_pointwise(const ConvGeometry& g) { return g.kernel == 1 && g.stride == 1 && g.padding == 0; }

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding) {
    require_rank(x, 4, "conv2d");
    require_rank(weight, 4, "conv2d weight");
    const int n = x.dim(0), out_c = weight.dim(0);
    ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2), stride, padding, 0, 0};
    if (weight.dim(1) != g.channels || weight.dim(3) != g.kernel)
        throw UsageError("conv2d: weight " + shape_string(weight.shape()) + " incompatible with input " +
                         shape_string(x.shape()));
    if (stride < 1 || padding < 0) throw UsageError("conv2d: invalid stride/padding");
    g.out_h = (g.height + 2 * padding - g.kernel) / stride + 1;
    g.out_w = (g.width + 2 * padding - g.kernel) / stride + 1;
    if (g.out_h < 1 || g.out_w < 1) throw UsageError("conv2d: input " + shape_string(x.shape()) + " too small");
    if (bias.defined() && bias.value().size() != out_c) throw UsageError("conv2d: bias size mismatch");

    const std::int64_t K = g.patch(), P = g.positions();
    const std::int64_t in_stride = static_cast<std::int64_t>(g.channels) * g.height * g.width;
    Tensor out(Shape{n, out_c, g.out_h, g.out_w});
    ConstMatMap W(weight.value().data(), out_c, K);
    const int tile_rows = rows_per_tile(g);
    std::vector<double> cols;
    for (int b = 0; b < n; ++b) {
        const double* xb = x.value().data() + b * in_stride;
        double* yb = out.data() + b * out_c * P;
        if (is_pointwise(g)) {
            MatMap(yb, out_c, P).noalias() = W * ConstMatMap(xb, K, P);
        } else {
            for (int r0 = 0; r0 < g.out_h; r0 += tile_rows) {
                const int r1 = std::min(g.out_h, r0 + tile_rows);
                const std::int64_t T = static_cast<std::int64_t>(r1 - r0) * g.out_w;
                cols.resize(static_cast<std::size_t>(K * T));
                im2col(xb, g, r0, r1, cols.data());
                StridedMap(yb + static_cast<std::int64_t>(r0) * g.out_w, out_c, T, Eigen::OuterStride<>(P)).noalias() =
                    W * ConstMatMap(cols.data(), K, T);
            }
        }
        if (bias.defined())
            for (int o = 0; o < out_c; ++o) {
                const double bv = bias.value()[o];
                double* row = yb + o * P;
                for (std::int64_t p = 0; p < P; ++p) row[p] += bv;
            }
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined()) inputs.push_back(bias);
    return make_result(std::move(out), inputs, [g, n, out_c, K, P, in_stride, tile_rows](Node& self) {
        Node& nx = input(self, 0);
        Node& nw = input(self, 1);
        ConstMatMap W(nw.value.data(), out_c, K);
        if (self.inputs.size() > 2 && input(self, 2).requires_grad) {
            Tensor& gb = input(self, 2).grad_buffer();
            for (int b = 0; b < n; ++b)
                for (int o = 0; o < out_c; ++o) {
                    const double* row = self.grad.data() + (b * out_c + o) * P;
                    double acc = 0.0;
                    for (std::int64_t p = 0; p < P; ++p) acc += row[p];
                    gb[o] += acc;
                }
        }
        const bool want_x = nx.requires_grad, want_w = nw.requires_grad;
        if (!want_x && !want_w) return;
        double* gx_data = want_x ? nx.grad_buffer().data() : nullptr;
        std::optional<MatMap> gW;
        if (want_w) gW.emplace(nw.grad_buffer().data(), out_c, K);
        std::vector<double> cols, dcols;
        for (int b = 0; b < n; ++b) {
            const double* xb = nx.value.data() + b * in_stride;
            const double* gyb = self.grad.data() + b * out_c * P;
            if (is_pointwise(g)) {
                ConstMatMap dY(gyb, out_c, P);
                if (want_w) gW->noalias() += dY * ConstMatMap(xb, K, P).transpose();
                if (want_x) MatMap(gx_data + b * in_stride, K, P).noalias() += W.transpose() * dY;
                continue;
            }
            for (int r0 = 0; r0 < g.out_h; r0 += tile_rows) {
                const int r1 = std::min(g.out_h, r0 + tile_rows);
                const std::int64_t T = static_cast<std::int64_t>(r1 - r0) * g.out_w;
                ConstStridedMap dY(gyb + static_cast<std::int64_t>(r0) * g.out_w, out_c, T, Eigen::OuterStride<>(P));
                if (want_w) {
                    cols.resize(static_cast<std::size_t>(K * T));
                    im2col(xb, g, r0, r1, cols.data());
                    gW->noalias() += dY * ConstMatMap(cols.data(), K, T).transpose();
                }
                if (want_x) {
                    dcols.resize(static_cast<std::size_t>(K * T));
                    MatMap(dcols.data(), K, T).noalias() = W.transpose() * dY;
                    col2im_add(dcols.data(), g, r0, r1, gx_data + b * in_stride);
                }
            }
        }
    });
}

Var depthwise_fixed(const Var& x, const Tensor& kernel) {
    require_rank(x, 4, "depthwise_fixed");
    if (kernel.rank() != 2 || kernel.dim(0) != kernel.dim(1)) throw UsageError("depthwise_fixed: square kernel required");
    const int k = kernel.dim(0);
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h - k + 1, ow = w - k + 1;
    if (oh < 1 || ow < 1) throw UsageError("depthwise_fixed: input smaller than kernel");
    Tensor out(Shape{n, c, oh, ow});
    for (int p = 0; p < n * c; ++p) {
        const double* src = x.value().data() + static_cast<std::int64_t>(p) * h * w;
        double* dst = out.data() + static_cast<std::int64_t>(p) * oh * ow;
        for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j) {
                const double kv = kernel[i * k + j];
                if (kv == 0.0) continue;
                for (int y = 0; y < oh; ++y) {
                    const double* row = src + static_cast<std::int64_t>(y + i) * w + j;
                    double* orow = dst + static_cast<std::int64_t>(y) * ow;
                    for (int xx = 0; xx < ow; ++xx) orow[xx] += kv * row[xx];
                }
            }
    }
    return make_result(std::move(out), {x}, [kernel, n, c, h, w, oh, ow, k](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (int p = 0; p < n * c; ++p) {
            const double* gy = self.grad.data() + static_cast<std::int64_t>(p) * oh * ow;
            double* gx = g.data() + static_cast<std::int64_t>(p) * h * w;
            for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j) {
                    const double kv = kernel[i * k + j];
                    if (kv == 0.0) continue;
                    for (int y = 0; y < oh; ++y) {
                        double* row = gx + static_cast<std::int64_t>(y + i) * w + j;
                        const double* grow = gy + static_cast<std::int64_t>(y) * ow;
                        for (int xx = 0; xx < ow; ++xx) row[xx] += kv * grow[xx];
                    }
                }
        }
    });
}

Var pad_replicate(const Var& x, int pad) {
    require_rank(x, 4, "pad_replicate");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const int oh = h + 2 * pad, ow = w + 2 * pad;
    Tensor out(Shape{n, c, oh, ow});
    auto src_index = [=](int y, int xx) {
        return std::clamp(y - pad, 0, h - 1) * w + std::clamp(xx - pad, 0, w - 1);
    };
    for (int p = 0; p < n * c; ++p) {
        const double* src = x.value().data() + static_cast<std::int64_t>(p) * h * w;
        double* dst = out.data() + static_cast<std::int64_t>(p) * oh * ow;
        for (int y = 0; y < oh; ++y)
            for (int xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[src_index(y, xx)];
    }
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (int p = 0; p < n * c; ++p) {
            const double* gy = self.grad.data() + static_cast<std::int64_t>(p) * oh * ow;
            double* gx = g.data() + static_cast<std::int64_t>(p) * h * w;
            for (int y = 0; y < oh; ++y)
                for (int xx = 0; xx < ow; ++xx) gx[src_index(y, xx)] += gy[y * ow + xx];
        }
    });
}

Var upsample_nearest2x(const Var& x) {
    require_rank(x, 4, "upsample_nearest2x");
    const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor out(Shape{n, c, 2 * h, 2 * w});
    for (int p = 0; p < n * c; ++p) {
        const double* src = x.value().data() + static_cast<std::int64_t>(p) * h * w;
        double* dst = out.data() + static_cast<std::int64_t>(p) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y)
            for (int xx = 0; xx < 2 * w; ++xx) dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
    }
    return make_result(std::move(out), {x}, [=](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (int p = 0; p < n * c; ++p) {
            const double* gy = self.grad.data() + static_cast<std::int64_t>(p) * 4 * h * w;
            double* gx = g.data() + static_cast<std::int64_t>(p) * h * w;
            for (int y = 0; y < 2 * h; ++y)
                for (int xx = 0; xx < 2 * w; ++xx) gx[(y / 2) * w + xx / 2] += gy[y * 2 * w + xx];
        }
    });
}

// ---------------------------------------------------------------------------
// Normalization

namespace {

// Normalizes groups of `count` elements spaced as (outer, channel, inner).
// Batch norm: groups are channels spanning all samples; instance norm: one
// group per (sample, channel).
struct NormLayout {
    int n, c;
    std::int64_t plane;
    bool per_instance;
};

template <class Visit>
void for_group(const NormLayout& L, int group, Visit visit) {
    if (L.per_instance) {
        visit(static_cast<std::int64_t>(group) * L.plane, L.plane);
    } else {
        for (int b = 0; b < L.n; ++b) visit((static_cast<std::int64_t>(b) * L.c + group) * L.plane, L.plane);
    }
}

Var normalize(const Var& x, const Var& gamma, const Var& beta, const NormLayout& L, const std::vector<double>& means,
              const std::vector<double>& inv_std, bool batch_stats) {
    const int groups = L.per_instance ? L.n * L.c : L.c;
    Tensor out(x.shape());
    Tensor xhat(x.shape());
    for (int gi = 0; gi < groups; ++gi) {
        const int ch = gi % L.c;
        const double gm = gamma.value()[ch], bt = beta.value()[ch];
        for_group(L, gi, [&](std::int64_t off, std::int64_t len) {
            for (std::int64_t i = off; i < off + len; ++i) {
                xhat[i] = (x.value()[i] - means[gi]) * inv_std[gi];
                out[i] = gm * xhat[i] + bt;
            }
        });
    }
    return make_result(std::move(out), {x, gamma, beta}, [L, groups, inv_std, batch_stats, xhat](Node& self) {
        Node& nx = input(self, 0);
        Node& ng = input(self, 1);
        Node& nb = input(self, 2);
        for (int gi = 0; gi < groups; ++gi) {
            const int ch = gi % L.c;
            double sum_dy = 0.0, sum_dy_xhat = 0.0;
            std::int64_t m = 0;
            for_group(L, gi, [&](std::int64_t off, std::int64_t len) {
                for (std::int64_t i = off; i < off + len; ++i) {
                    sum_dy += self.grad[i];
                    sum_dy_xhat += self.grad[i] * xhat[i];
                }
                m += len;
            });
            if (ng.requires_grad) ng.grad_buffer()[ch] += sum_dy_xhat;
            if (nb.requires_grad) nb.grad_buffer()[ch] += sum_dy;
            if (!nx.requires_grad) continue;
            Tensor& gx = nx.grad_buffer();
            const double gm = ng.value[ch];
            const double k = gm * inv_std[gi];
            const double md = static_cast<double>(m);
            for_group(L, gi, [&](std::int64_t off, std::int64_t len) {
                for (std::int64_t i = off; i < off + len; ++i) {
                    if (batch_stats)
                        gx[i] += k * (self.grad[i] - sum_dy / md - xhat[i] * sum_dy_xhat / md);
                    else
                        gx[i] += k * self.grad[i];
                }
            });
        }
    });
}

void group_moments(const Tensor& x, const NormLayout& L, int groups, std::vector<double>& mean,
                   std::vector<double>& var) {
    mean.assign(groups, 0.0);
    var.assign(groups, 0.0);
    for (int gi = 0; gi < groups; ++gi) {
        double s = 0.0;
        std::int64_t m = 0;
        for_group(L, gi, [&](std::int64_t off, std::int64_t len) {
            for (std::int64_t i = off; i < off + len; ++i) s += x[i];
            m += len;
        });
        const double mu = s / static_cast<double>(m);
        double v = 0.0;
        for_group(L, gi, [&](std::int64_t off, std::int64_t len) {
            for (std::int64_t i = off; i < off + len; ++i) v += (x[i] - mu) * (x[i] - mu);
        });
        mean[gi] = mu;
        var[gi] = v / static_cast<double>(m);
    }
}

}  // namespace

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, Var& running_mean, Var& running_var, bool training,
               double momentum, double eps) {
    require_rank(x, 4, "batch_norm");
    const NormLayout L{x.dim(0), x.dim(1), static_cast<std::int64_t>(x.dim(2)) * x.dim(3), false};
    std::vector<double> mu, var, inv_std(L.c);
    if (training) {
        group_moments(x.value(), L, L.c, mu, var);
        const double m = static_cast<double>(L.n) * static_cast<double>(L.plane);
        for (int ch = 0; ch < L.c; ++ch) {
            const double unbiased = m > 1 ? var[ch] * m / (m - 1) : var[ch];
            running_mean.mutable_value()[ch] = (1 - momentum) * running_mean.value()[ch] + momentum * mu[ch];
            running_var.mutable_value()[ch] = (1 - momentum) * running_var.value()[ch] + momentum * unbiased;
        }
    } else {
        mu.assign(running_mean.value().values().begin(), running_mean.value().values().end());
        var.assign(running_var.value().values().begin(), running_var.value().values().end());
    }
    for (int ch = 0; ch < L.c; ++ch) inv_std[ch] = 1.0 / std::sqrt(var[ch] + eps);
    return normalize(x, gamma, beta, L, mu, inv_std, training);
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank(x, 4, "instance_norm");
    const NormLayout L{x.dim(0), x.dim(1), static_cast<std::int64_t>(x.dim(2)) * x.dim(3), true};
    std::vector<double> mu, var;
    group_moments(x.value(), L, L.n * L.c, mu, var);
    std::vector<double> inv_std(mu.size());
    for (std::size_t i = 0; i < mu.size(); ++i) inv_std[i] = 1.0 / std::sqrt(var[i] + eps);
    return normalize(x, gamma, beta, L, mu, inv_std, true);
}

Var dropout(const Var& x, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return x;
    if (p >= 1.0) throw UsageError("dropout probability must be < 1");
    const double keep_scale = 1.0 / (1.0 - p);
    auto mask = std::make_shared<std::vector<double>>(static_cast<std::size_t>(x.value().size()));
    Tensor out(x.shape());
    for (std::int64_t i = 0; i < out.size(); ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        (*mask)[i] = u < p ? 0.0 : keep_scale;
        out[i] = x.value()[i] * (*mask)[i];
    }
    return make_result(std::move(out), {x}, [mask](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (std::int64_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * (*mask)[i];
    });
}

// ---------------------------------------------------------------------------
// Attention helpers

Var bmm(const Var& a, const Var& b, bool transpose_a, bool transpose_b) {
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    const int batch = a.dim(0);
    if (b.dim(0) != batch) throw UsageError("bmm: batch mismatch");
    const int ar = a.dim(1), ac = a.dim(2), br = b.dim(1), bc = b.dim(2);
    const int m = transpose_a ? ac : ar, k = transpose_a ? ar : ac;
    const int kb = transpose_b ? bc : br, nn = transpose_b ? br : bc;
    if (k != kb) throw UsageError("bmm: inner dimension mismatch");
    Tensor out(Shape{batch, m, nn});
    for (int i = 0; i < batch; ++i) {
        ConstMatMap A(a.value().data() + static_cast<std::int64_t>(i) * ar * ac, ar, ac);
        ConstMatMap B(b.value().data() + static_cast<std::int64_t>(i) * br * bc, br, bc);
        MatMap C(out.data() + static_cast<std::int64_t>(i) * m * nn, m, nn);
        if (transpose_a && transpose_b)
            C.noalias() = A.transpose() * B.transpose();
        else if (transpose_a)
            C.noalias() = A.transpose() * B;
        else if (transpose_b)
            C.noalias() = A * B.transpose();
        else
            C.noalias() = A * B;
    }
    return make_result(std::move(out), {a, b}, [=](Node& self) {
        Node& na = input(self, 0);
        Node& nb = input(self, 1);
        for (int i = 0; i < batch; ++i) {
            ConstMatMap dC(self.grad.data() + static_cast<std::int64_t>(i) * m * nn, m, nn);
            ConstMatMap A(na.value.data() + static_cast<std::int64_t>(i) * ar * ac, ar, ac);
            ConstMatMap B(nb.value.data() + static_cast<std::int64_t>(i) * br * bc, br, bc);
            if (na.requires_grad) {
                MatMap dA(na.grad_buffer().data() + static_cast<std::int64_t>(i) * ar * ac, ar, ac);
                // dOpA = dC * OpB^T
                if (!transpose_a) {
                    if (transpose_b) dA.noalias() += dC * B; else dA.noalias() += dC * B.transpose();
                } else {
                    if (transpose_b) dA.noalias() += B.transpose() * dC.transpose();
                    else dA.noalias() += B * dC.transpose();
                }
            }
            if (nb.requires_grad) {
                MatMap dB(nb.grad_buffer().data() + static_cast<std::int64_t>(i) * br * bc, br, bc);
                // dOpB = OpA^T * dC
                if (!transpose_b) {
                    if (transpose_a) dB.noalias() += A * dC; else dB.noalias() += A.transpose() * dC;
                } else {
                    if (transpose_a) dB.noalias() += dC.transpose() * A.transpose();
                    else dB.noalias() += dC.transpose() * A;
                }
            }
        }
    });
}

Var softmax_axis1(const Var& a) {
    require_rank(a, 3, "softmax_axis1");
    const int batch = a.dim(0), rows = a.dim(1), cols = a.dim(2);
    Tensor out(a.shape());
    for (int b = 0; b < batch; ++b) {
        const double* x = a.value().data() + static_cast<std::int64_t>(b) * rows * cols;
        double* y = out.data() + static_cast<std::int64_t>(b) * rows * cols;
        for (int j = 0; j < cols; ++j) {
            double mx = -std::numeric_limits<double>::infinity();
            for (int i = 0; i < rows; ++i) mx = std::max(mx, x[i * cols + j]);
            double s = 0.0;
            for (int i = 0; i < rows; ++i) s += (y[i * cols + j] = std::exp(x[i * cols + j] - mx));
            for (int i = 0; i < rows; ++i) y[i * cols + j] /= s;
        }
    }
    return make_result(std::move(out), {a}, [=](Node& self) {
        Node& in = input(self, 0);
        if (!in.requires_grad) return;
        Tensor& g = in.grad_buffer();
        for (int b = 0; b < batch; ++b) {
            const std::int64_t off = static_cast<std::int64_t>(b) * rows * cols;
            const double* y = self.value.data() + off;
            const double* gy = self.grad.data() + off;
            double* gx = g.data() + off;
            for (int j = 0; j < cols; ++j) {
                double dot = 0.0;
                for (int i = 0; i < rows; ++i) dot += y[i * cols + j] * gy[i * cols + j];
                for (int i = 0; i < rows; ++i) gx[i * cols + j] += y[i * cols + j] * (gy[i * cols + j] - dot);
            }
        }
    });
}

}  // namespace paracolor::nn
