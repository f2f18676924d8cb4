#include "frontal/autodiff.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <stdexcept>

namespace frontal {

namespace {

std::atomic<long> g_next_id{1};
thread_local int g_no_grad_depth = 0;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;

[[noreturn]] void fail(const std::string& op, const std::string& msg) {
    throw std::invalid_argument(op + ": " + msg);
}

// Pad a shape on the left with ones to rank 4.
std::array<long, 4> pad4(const std::vector<int>& s) {
    std::array<long, 4> d{1, 1, 1, 1};
    size_t off = 4 - s.size();
    for (size_t i = 0; i < s.size(); ++i) d[off + i] = s[i];
    return d;
}

std::array<long, 4> strides4(const std::array<long, 4>& dims) {
    std::array<long, 4> st;
    st[3] = 1;
    for (int i = 2; i >= 0; --i) st[i] = st[i + 1] * dims[i + 1];
    return st;
}

template <class F>
Tensor ew_binary(const char* op, const Tensor& a, const Tensor& b, F f) {
    if (a.shape() == b.shape()) {
        Tensor out(a.shape());
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = out.data();
        long n = a.size();
        for (long i = 0; i < n; ++i) po[i] = f(pa[i], pb[i]);
        return out;
    }
    if (a.rank() != b.rank() || a.rank() > 4)
        fail(op, "incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
    std::vector<int> oshape(a.shape().size());
    for (size_t i = 0; i < oshape.size(); ++i) {
        int da = a.dim(static_cast<int>(i));
        int db = b.dim(static_cast<int>(i));
        if (da != db && da != 1 && db != 1)
            fail(op, "incompatible shapes " + a.shape_str() + " vs " + b.shape_str());
        oshape[i] = std::max(da, db);
    }
    Tensor out(oshape);
    auto od = pad4(oshape);
    auto ad = pad4(a.shape());
    auto bd = pad4(b.shape());
    auto as = strides4(ad);
    auto bs = strides4(bd);
    for (int i = 0; i < 4; ++i) {
        if (ad[i] == 1) as[i] = 0;
        if (bd[i] == 1) bs[i] = 0;
    }
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = out.data();
    long o = 0;
    for (long i0 = 0; i0 < od[0]; ++i0)
        for (long i1 = 0; i1 < od[1]; ++i1)
            for (long i2 = 0; i2 < od[2]; ++i2) {
                const double* ra = pa + i0 * as[0] + i1 * as[1] + i2 * as[2];
                const double* rb = pb + i0 * bs[0] + i1 * bs[1] + i2 * bs[2];
                if (as[3] == 1 && bs[3] == 1) {
                    for (long i3 = 0; i3 < od[3]; ++i3) po[o++] = f(ra[i3], rb[i3]);
                } else {
                    for (long i3 = 0; i3 < od[3]; ++i3)
                        po[o++] = f(ra[i3 * as[3]], rb[i3 * bs[3]]);
                }
            }
    return out;
}

template <class F>
Tensor ew_unary(const Tensor& a, F f) {
    Tensor out(a.shape());
    const double* pa = a.data();
    double* po = out.data();
    long n = a.size();
    for (long i = 0; i < n; ++i) po[i] = f(pa[i]);
    return out;
}

// Reduces grad over the axes that were broadcast to reach `shape`.
Var sum_to(const Var& g, const std::vector<int>& shape) {
    if (g.shape() == shape) return g;
    std::vector<int> axes;
    for (size_t i = 0; i < shape.size(); ++i)
        if (shape[i] == 1 && g.shape()[i] != 1) axes.push_back(static_cast<int>(i));
    return sum_axes(g, axes, true);
}

// Unary op whose derivative is a constant elementwise mask of the input.
Var masked_unary(const char* name, const Var& x, Tensor value, Tensor mask) {
    return make_op(name, std::move(value), {x},
                   [m = std::move(mask)](const Var& g, const std::vector<Var>&,
                                         const Var&, const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = mul(g, Var::leaf(m, false));
                       return r;
                   });
}

}  // namespace

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var Var::leaf(Tensor value, bool requires_grad) {
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->id = g_next_id.fetch_add(1);
    return Var(std::move(n));
}

Var make_op(const char* name, Tensor value, std::vector<Var> inputs,
            detail::BackwardFn backward, bool force_grad) {
    bool needs = force_grad && grad_enabled();
    if (grad_enabled() && !needs)
        for (const auto& in : inputs)
            if (in.requires_grad()) { needs = true; break; }
    if (!needs) return Var::leaf(std::move(value), false);
    auto n = std::make_shared<detail::Node>();
    n->value = std::move(value);
    n->inputs = std::move(inputs);
    n->backward = std::move(backward);
    n->requires_grad = true;
    n->id = g_next_id.fetch_add(1);
    n->op = name;
    return Var(std::move(n));
}

Var GradMap::get(const Var& v) const {
    auto it = grads_.find(v.node());
    return it == grads_.end() ? Var() : it->second;
}

Var GradMap::get_or_zero(const Var& v) const {
    Var g = get(v);
    return g.defined() ? g : Var::leaf(Tensor::zeros(v.shape()), false);
}

void GradMap::add(const Var& key, const Var& g) {
    auto it = grads_.find(key.node());
    if (it == grads_.end())
        grads_.emplace(key.node(), g);
    else
        it->second = frontal::add(it->second, g);
}

GradMap backward(const Var& root, const std::vector<Var>& targets) {
    if (!root.defined()) throw std::invalid_argument("backward: undefined root");

    // Reachable differentiable subgraph, with a live handle per node.
    std::vector<detail::Node*> order;
    std::unordered_map<detail::Node*, Var> handle;
    {
        std::vector<Var> stack{root};
        while (!stack.empty()) {
            Var v = stack.back();
            stack.pop_back();
            detail::Node* n = v.node();
            if (!n || !n->requires_grad || handle.count(n)) continue;
            handle.emplace(n, v);
            order.push_back(n);
            for (const auto& in : n->inputs) stack.push_back(in);
        }
    }
    std::sort(order.begin(), order.end(),
              [](detail::Node* a, detail::Node* b) { return a->id > b->id; });

    // Nodes that can reach a target; every consumer of a needed node is
    // itself needed, so pruning never drops a gradient contribution.
    std::unordered_map<const detail::Node*, char> needed;
    if (!targets.empty()) {
        for (const auto& t : targets)
            if (t.defined()) needed[t.node()] = 1;
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            detail::Node* n = *it;
            if (needed.count(n)) continue;
            for (const auto& in : n->inputs)
                if (needed.count(in.node())) { needed[n] = 1; break; }
        }
    }
    auto is_needed = [&](const detail::Node* n) {
        return targets.empty() || needed.count(n) > 0;
    };

    GradMap grads;
    grads.add(root, Var::leaf(Tensor::full(root.shape(), 1.0), false));
    for (detail::Node* n : order) {
        if (!n->backward) continue;
        if (!is_needed(n)) continue;
        const Var& self = handle.at(n);
        Var g = grads.get(self);
        if (!g.defined()) continue;
        std::vector<char> wanted(n->inputs.size(), 0);
        bool any = false;
        for (size_t i = 0; i < n->inputs.size(); ++i) {
            wanted[i] = n->inputs[i].requires_grad() && is_needed(n->inputs[i].node());
            any = any || wanted[i];
        }
        if (!any) continue;
        std::vector<Var> gs = n->backward(g, n->inputs, self, wanted);
        for (size_t i = 0; i < gs.size(); ++i)
            if (wanted[i] && gs[i].defined()) grads.add(n->inputs[i], gs[i]);
    }
    return grads;
}

Var grad_of(const Var& root, const Var& wrt) {
    GradMap m = backward(root, {wrt});
    return m.get_or_zero(wrt);
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    Tensor v = ew_binary("add", a.value(), b.value(), [](double x, double y) { return x + y; });
    return make_op("add", std::move(v), {a, b},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = sum_to(g, in[0].shape());
                       if (w[1]) r[1] = sum_to(g, in[1].shape());
                       return r;
                   });
}

Var sub(const Var& a, const Var& b) {
    Tensor v = ew_binary("sub", a.value(), b.value(), [](double x, double y) { return x - y; });
    return make_op("sub", std::move(v), {a, b},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = sum_to(g, in[0].shape());
                       if (w[1]) r[1] = neg(sum_to(g, in[1].shape()));
                       return r;
                   });
}

Var mul(const Var& a, const Var& b) {
    Tensor v = ew_binary("mul", a.value(), b.value(), [](double x, double y) { return x * y; });
    return make_op("mul", std::move(v), {a, b},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = sum_to(mul(g, in[1]), in[0].shape());
                       if (w[1]) r[1] = sum_to(mul(g, in[0]), in[1].shape());
                       return r;
                   });
}

Var div(const Var& a, const Var& b) {
    Tensor v = ew_binary("div", a.value(), b.value(), [](double x, double y) { return x / y; });
    return make_op("div", std::move(v), {a, b},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = sum_to(div(g, in[1]), in[0].shape());
                       if (w[1])
                           r[1] = neg(sum_to(div(mul(g, in[0]), mul(in[1], in[1])),
                                             in[1].shape()));
                       return r;
                   });
}

Var neg(const Var& x) { return scale(x, -1.0); }

Var scale(const Var& x, double c) {
    Tensor v = ew_unary(x.value(), [c](double a) { return a * c; });
    return make_op("scale", std::move(v), {x},
                   [c](const Var& g, const std::vector<Var>&, const Var&,
                       const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = scale(g, c);
                       return r;
                   });
}

Var add_scalar(const Var& x, double c) {
    Tensor v = ew_unary(x.value(), [c](double a) { return a + c; });
    return make_op("add_scalar", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>&, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = g;
                       return r;
                   });
}

Var exp(const Var& x) {
    Tensor v = ew_unary(x.value(), [](double a) { return std::exp(a); });
    return make_op("exp", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>&, const Var& out,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = mul(g, out);
                       return r;
                   });
}

Var log(const Var& x) {
    Tensor v = ew_unary(x.value(), [](double a) { return std::log(a); });
    return make_op("log", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = div(g, in[0]);
                       return r;
                   });
}

Var sqrt(const Var& x) {
    Tensor v = ew_unary(x.value(), [](double a) { return std::sqrt(a); });
    return make_op("sqrt", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>&, const Var& out,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = div(scale(g, 0.5), out);
                       return r;
                   });
}

Var sqrt_safe(const Var& x) {
    Tensor v = ew_unary(x.value(), [](double a) { return std::sqrt(a); });
    Tensor mask = ew_unary(v, [](double s) { return s > 1e-12 ? 0.5 / s : 0.0; });
    return masked_unary("sqrt_safe", x, std::move(v), std::move(mask));
}

Var abs(const Var& x) {
    Tensor mask = ew_unary(x.value(), [](double a) { return a > 0 ? 1.0 : (a < 0 ? -1.0 : 0.0); });
    Tensor v = ew_unary(x.value(), [](double a) { return std::fabs(a); });
    return masked_unary("abs", x, std::move(v), std::move(mask));
}

Var square(const Var& x) { return mul(x, x); }

Var relu(const Var& x) {
    Tensor mask = ew_unary(x.value(), [](double a) { return a > 0 ? 1.0 : 0.0; });
    Tensor v = ew_unary(x.value(), [](double a) { return a > 0 ? a : 0.0; });
    return masked_unary("relu", x, std::move(v), std::move(mask));
}

Var leaky_relu(const Var& x, double slope) {
    Tensor mask = ew_unary(x.value(), [slope](double a) { return a > 0 ? 1.0 : slope; });
    Tensor v = ew_unary(x.value(), [slope](double a) { return a > 0 ? a : slope * a; });
    return masked_unary("leaky_relu", x, std::move(v), std::move(mask));
}

Var sigmoid(const Var& x) {
    Tensor v = ew_unary(x.value(), [](double a) {
        return a >= 0 ? 1.0 / (1.0 + std::exp(-a)) : std::exp(a) / (1.0 + std::exp(a));
    });
    return make_op("sigmoid", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>&, const Var& out,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = mul(g, mul(out, add_scalar(neg(out), 1.0)));
                       return r;
                   });
}

Var tanh(const Var& x) {
    Tensor v = ew_unary(x.value(), [](double a) { return std::tanh(a); });
    return make_op("tanh", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>&, const Var& out,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = mul(g, add_scalar(neg(mul(out, out)), 1.0));
                       return r;
                   });
}

Var clamp(const Var& x, double lo, double hi) {
    Tensor mask = ew_unary(x.value(), [lo, hi](double a) { return (a >= lo && a <= hi) ? 1.0 : 0.0; });
    Tensor v = ew_unary(x.value(), [lo, hi](double a) { return std::min(hi, std::max(lo, a)); });
    return masked_unary("clamp", x, std::move(v), std::move(mask));
}

// ---------------------------------------------------------------------- shape

Var reshape(const Var& x, std::vector<int> shape) {
    Tensor v = x.value().reshaped(shape);
    return make_op("reshape", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = reshape(g, in[0].shape());
                       return r;
                   });
}

Var broadcast_to(const Var& x, std::vector<int> shape) {
    if (x.shape() == shape) return x;
    if (x.shape().size() != shape.size())
        fail("broadcast_to", "rank mismatch " + x.value().shape_str() + " -> " +
                                 Tensor::shape_str(shape));
    Tensor ones = Tensor::full(shape, 1.0);
    Tensor v = ew_binary("broadcast_to", x.value(), ones, [](double a, double) { return a; });
    return make_op("broadcast_to", std::move(v), {x},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = sum_to(g, in[0].shape());
                       return r;
                   });
}

Var concat_ch(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.rank() != 4 || tb.rank() != 4 || ta.dim(0) != tb.dim(0) ||
        ta.dim(2) != tb.dim(2) || ta.dim(3) != tb.dim(3))
        fail("concat_ch", ta.shape_str() + " vs " + tb.shape_str());
    int B = ta.dim(0), Ca = ta.dim(1), Cb = tb.dim(1), H = ta.dim(2), W = ta.dim(3);
    Tensor v({B, Ca + Cb, H, W});
    long plane = static_cast<long>(H) * W;
    for (int i = 0; i < B; ++i) {
        std::copy_n(ta.data() + static_cast<long>(i) * Ca * plane, Ca * plane,
                    v.data() + static_cast<long>(i) * (Ca + Cb) * plane);
        std::copy_n(tb.data() + static_cast<long>(i) * Cb * plane, Cb * plane,
                    v.data() + static_cast<long>(i) * (Ca + Cb) * plane + Ca * plane);
    }
    return make_op("concat_ch", std::move(v), {a, b},
                   [Ca, Cb](const Var& g, const std::vector<Var>&, const Var&,
                            const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = slice_axis(g, 1, 0, Ca);
                       if (w[1]) r[1] = slice_axis(g, 1, Ca, Cb);
                       return r;
                   });
}

Var slice_axis(const Var& x, int axis, int start, int len) {
    const Tensor& t = x.value();
    if (axis < 0 || axis >= t.rank() || start < 0 || len < 1 ||
        start + len > t.dim(axis))
        fail("slice_axis", "axis " + std::to_string(axis) + " [" + std::to_string(start) +
                               "," + std::to_string(start + len) + ") of " + t.shape_str());
    std::vector<int> oshape = t.shape();
    oshape[static_cast<size_t>(axis)] = len;
    Tensor v(oshape);
    auto id = pad4(t.shape());
    auto is = strides4(id);
    int paxis = axis + (4 - t.rank());
    auto od = pad4(oshape);
    const double* pi = t.data();
    double* po = v.data();
    long o = 0;
    std::array<long, 4> base{0, 0, 0, 0};
    base[static_cast<size_t>(paxis)] = start;
    for (long i0 = 0; i0 < od[0]; ++i0)
        for (long i1 = 0; i1 < od[1]; ++i1)
            for (long i2 = 0; i2 < od[2]; ++i2) {
                const double* ri = pi + (i0 + base[0]) * is[0] + (i1 + base[1]) * is[1] +
                                   (i2 + base[2]) * is[2] + base[3];
                for (long i3 = 0; i3 < od[3]; ++i3) po[o++] = ri[i3];
            }
    int full = t.dim(axis);
    return make_op("slice_axis", std::move(v), {x},
                   [axis, start, full](const Var& g, const std::vector<Var>&, const Var&,
                                       const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = embed_axis(g, axis, start, full);
                       return r;
                   });
}

Var embed_axis(const Var& x, int axis, int start, int full) {
    const Tensor& t = x.value();
    if (axis < 0 || axis >= t.rank() || start < 0 || start + t.dim(axis) > full)
        fail("embed_axis", "axis " + std::to_string(axis) + " start " +
                               std::to_string(start) + " full " + std::to_string(full));
    std::vector<int> oshape = t.shape();
    oshape[static_cast<size_t>(axis)] = full;
    Tensor v(oshape);
    auto od = pad4(oshape);
    auto os = strides4(od);
    int paxis = axis + (4 - t.rank());
    auto id = pad4(t.shape());
    const double* pi = t.data();
    double* po = v.data();
    long i = 0;
    std::array<long, 4> base{0, 0, 0, 0};
    base[static_cast<size_t>(paxis)] = start;
    for (long i0 = 0; i0 < id[0]; ++i0)
        for (long i1 = 0; i1 < id[1]; ++i1)
            for (long i2 = 0; i2 < id[2]; ++i2) {
                double* ro = po + (i0 + base[0]) * os[0] + (i1 + base[1]) * os[1] +
                             (i2 + base[2]) * os[2] + base[3];
                for (long i3 = 0; i3 < id[3]; ++i3) ro[i3] = pi[i++];
            }
    int len = t.dim(axis);
    return make_op("embed_axis", std::move(v), {x},
                   [axis, start, len](const Var& g, const std::vector<Var>&, const Var&,
                                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = slice_axis(g, axis, start, len);
                       return r;
                   });
}

// ----------------------------------------------------------------- reductions

Var sum_axes(const Var& x, std::vector<int> axes, bool keepdims) {
    const Tensor& t = x.value();
    std::array<char, 4> red{0, 0, 0, 0};
    for (int a : axes) {
        if (a < 0 || a >= t.rank()) fail("sum_axes", "axis " + std::to_string(a));
        red[static_cast<size_t>(a + (4 - t.rank()))] = 1;
    }
    auto id = pad4(t.shape());
    std::array<long, 4> od = id;
    for (int i = 0; i < 4; ++i)
        if (red[static_cast<size_t>(i)]) od[i] = 1;
    auto osAll = strides4(od);
    std::array<long, 4> os = osAll;
    for (int i = 0; i < 4; ++i)
        if (od[i] == 1) os[i] = 0;

    std::vector<int> kshape = t.shape();
    for (int a : axes) kshape[static_cast<size_t>(a)] = 1;
    Tensor v(kshape);
    const double* pi = t.data();
    double* po = v.data();
    long i = 0;
    for (long i0 = 0; i0 < id[0]; ++i0)
        for (long i1 = 0; i1 < id[1]; ++i1)
            for (long i2 = 0; i2 < id[2]; ++i2) {
                double* ro = po + i0 * os[0] + i1 * os[1] + i2 * os[2];
                if (os[3] == 1) {
                    for (long i3 = 0; i3 < id[3]; ++i3) ro[i3] += pi[i++];
                } else {
                    double acc = 0;
                    for (long i3 = 0; i3 < id[3]; ++i3) acc += pi[i++];
                    *ro += acc;
                }
            }

    std::vector<int> oshape;
    if (keepdims) {
        oshape = kshape;
    } else {
        for (size_t d = 0; d < kshape.size(); ++d) {
            bool dropped = false;
            for (int a : axes)
                if (static_cast<size_t>(a) == d) dropped = true;
            if (!dropped) oshape.push_back(kshape[d]);
        }
        if (oshape.empty()) oshape = {1};
        v = v.reshaped(oshape);
    }
    return make_op("sum_axes", std::move(v), {x},
                   [kshape](const Var& g, const std::vector<Var>& in, const Var&,
                            const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) {
                           Var gk = g.shape() == kshape ? g : reshape(g, kshape);
                           r[0] = broadcast_to(gk, in[0].shape());
                       }
                       return r;
                   });
}

Var sum(const Var& x) {
    std::vector<int> axes(x.shape().size());
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return sum_axes(x, axes, false);
}

Var mean(const Var& x) { return scale(sum(x), 1.0 / static_cast<double>(x.value().size())); }

Var mean_axes(const Var& x, std::vector<int> axes, bool keepdims) {
    long n = 1;
    for (int a : axes) n *= x.value().dim(a);
    return scale(sum_axes(x, std::move(axes), keepdims), 1.0 / static_cast<double>(n));
}

// ------------------------------------------------------------- linear algebra

Var matmul(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(0))
        fail("matmul", ta.shape_str() + " x " + tb.shape_str());
    int M = ta.dim(0), K = ta.dim(1), N = tb.dim(1);
    Tensor v({M, N});
    MapConstMat ma(ta.data(), M, K);
    MapConstMat mb(tb.data(), K, N);
    MapMat mo(v.data(), M, N);
    mo.noalias() = ma * mb;
    return make_op("matmul", std::move(v), {a, b},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = matmul(g, transpose(in[1]));
                       if (w[1]) r[1] = matmul(transpose(in[0]), g);
                       return r;
                   });
}

Var transpose(const Var& a) {
    const Tensor& t = a.value();
    if (t.rank() != 2) fail("transpose", t.shape_str());
    int M = t.dim(0), N = t.dim(1);
    Tensor v({N, M});
    MapConstMat mi(t.data(), M, N);
    MapMat mo(v.data(), N, M);
    mo = mi.transpose();
    return make_op("transpose", std::move(v), {a},
                   [](const Var& g, const std::vector<Var>&, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = transpose(g);
                       return r;
                   });
}

Var bmm(const Var& a, const Var& b) {
    const Tensor& ta = a.value();
    const Tensor& tb = b.value();
    if (ta.rank() != 3 || tb.rank() != 3 || ta.dim(0) != tb.dim(0) ||
        ta.dim(2) != tb.dim(1))
        fail("bmm", ta.shape_str() + " x " + tb.shape_str());
    int B = ta.dim(0), M = ta.dim(1), K = ta.dim(2), N = tb.dim(2);
    Tensor v({B, M, N});
    for (int i = 0; i < B; ++i) {
        MapConstMat ma(ta.data() + static_cast<long>(i) * M * K, M, K);
        MapConstMat mb(tb.data() + static_cast<long>(i) * K * N, K, N);
        MapMat mo(v.data() + static_cast<long>(i) * M * N, M, N);
        mo.noalias() = ma * mb;
    }
    return make_op("bmm", std::move(v), {a, b},
                   [](const Var& g, const std::vector<Var>& in, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(2);
                       if (w[0]) r[0] = bmm(g, btranspose(in[1]));
                       if (w[1]) r[1] = bmm(btranspose(in[0]), g);
                       return r;
                   });
}

Var btranspose(const Var& a) {
    const Tensor& t = a.value();
    if (t.rank() != 3) fail("btranspose", t.shape_str());
    int B = t.dim(0), M = t.dim(1), N = t.dim(2);
    Tensor v({B, N, M});
    for (int i = 0; i < B; ++i) {
        MapConstMat mi(t.data() + static_cast<long>(i) * M * N, M, N);
        MapMat mo(v.data() + static_cast<long>(i) * M * N, N, M);
        mo = mi.transpose();
    }
    return make_op("btranspose", std::move(v), {a},
                   [](const Var& g, const std::vector<Var>&, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = btranspose(g);
                       return r;
                   });
}

// ------------------------------------------------------------------- specials

Var grl(const Var& x, double lambda) {
    Tensor v = x.value();
    return make_op("grl", std::move(v), {x},
                   [lambda](const Var& g, const std::vector<Var>&, const Var&,
                            const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = scale(g, -lambda);
                       return r;
                   });
}

Var detach(const Var& x) { return Var::leaf(x.value(), false); }

Var require_grad(const Var& x) {
    return make_op("require_grad", x.value(), {x},
                   [](const Var& g, const std::vector<Var>&, const Var&,
                      const std::vector<char>& w) {
                       std::vector<Var> r(1);
                       if (w[0]) r[0] = g;
                       return r;
                   },
                   /*force_grad=*/true);
}

Var softmax_lastdim(const Var& x) {
    const Tensor& t = x.value();
    int last = t.rank() - 1;
    int n = t.dim(last);
    long rows = t.size() / n;
    // Subtracting the row max leaves the softmax (and its gradient) unchanged,
    // so the shift enters as a constant.
    std::vector<int> mshape = t.shape();
    mshape[static_cast<size_t>(last)] = 1;
    Tensor m(mshape);
    for (long r = 0; r < rows; ++r) {
        const double* p = t.data() + r * n;
        double mx = p[0];
        for (int i = 1; i < n; ++i) mx = std::max(mx, p[i]);
        m.data()[r] = mx;
    }
    Var e = exp(sub(x, Var::leaf(std::move(m), false)));
    Var s = sum_axes(e, {last}, true);
    return div(e, s);
}

}  // namespace frontal
