#include "diffsfm/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace dsfm {

namespace {

thread_local Tape* t_active_tape = nullptr;
thread_local KinkWatch* t_active_kink = nullptr;
std::atomic<std::uint64_t> g_tape_counter{1};

enum class OpKind : std::uint8_t {
    Leaf,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Abs,
    Exp,
    Log,
    Sqrt,
    SincSqrt,
    VercSqrt,
    Min,
    Max,
    Clamp,
    Sum,
    Mean,
    MeanLast,
    GradX,
    GradY,
    BoxFilter,
    Gather,
    StackLast,
    StackFirst,
    SliceLast,
    SliceFirst,
    Select,
    Reshape,
};

const char* op_name(OpKind k) {
    switch (k) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Add: return "add";
        case OpKind::Sub: return "sub";
        case OpKind::Mul: return "mul";
        case OpKind::Div: return "div";
        case OpKind::Neg: return "neg";
        case OpKind::Abs: return "abs";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sqrt: return "sqrt";
        case OpKind::SincSqrt: return "sinc_sqrt";
        case OpKind::VercSqrt: return "verc_sqrt";
        case OpKind::Min: return "minimum";
        case OpKind::Max: return "maximum";
        case OpKind::Clamp: return "clamp";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::MeanLast: return "mean_last";
        case OpKind::GradX: return "gradient_x";
        case OpKind::GradY: return "gradient_y";
        case OpKind::BoxFilter: return "box_filter";
        case OpKind::Gather: return "gather_bilinear";
        case OpKind::StackLast: return "stack_last";
        case OpKind::StackFirst: return "stack_first";
        case OpKind::SliceLast: return "slice_last";
        case OpKind::SliceFirst: return "slice_first";
        case OpKind::Select: return "select";
        case OpKind::Reshape: return "reshape";
    }
    return "?";
}

using DataPtr = std::shared_ptr<const std::vector<double>>;

void check_shape_valid(const Shape& s, const char* who) {
    if (s.empty()) throw std::invalid_argument(std::string(who) + ": empty shape");
    for (int d : s)
        if (d <= 0)
            throw std::invalid_argument(std::string(who) + ": non-positive dim in " + shape_str(s));
}

void check_finite(OpKind k, const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x))
            throw NumericError(std::string(op_name(k)) + ": non-finite value produced");
}

void kink_report(double dist) {
    if (KinkWatch* kw = KinkWatch::active()) kw->report(dist);
}

void kink_branch(std::uint64_t v) {
    if (KinkWatch* kw = KinkWatch::active()) kw->report_branch(v);
}

bool kink_active() { return KinkWatch::active() != nullptr; }

// Strides of `in` aligned to the trailing dims of `out`; 0 where broadcast.
std::vector<std::size_t> bcast_strides(const Shape& out, const Shape& in) {
    const int r = static_cast<int>(out.size());
    const int ri = static_cast<int>(in.size());
    std::vector<std::size_t> st(r, 0);
    std::size_t stride = 1;
    for (int d = ri - 1; d >= 0; --d) {
        const int od = d + (r - ri);
        if (in[d] == out[od])
            st[od] = (in[d] == 1) ? 0 : stride;
        else
            st[od] = 0;  // in[d] == 1, broadcast
        stride *= static_cast<std::size_t>(in[d]);
    }
    return st;
}

template <class F>
void for_each_bcast2(const Shape& out, const Shape& sa, const Shape& sb, F&& f) {
    const std::size_t n = shape_numel(out);
    if (sa == out && sb == out) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    if (sa == out && shape_numel(sb) == 1) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, 0);
        return;
    }
    if (shape_numel(sa) == 1 && sb == out) {
        for (std::size_t i = 0; i < n; ++i) f(i, 0, i);
        return;
    }
    const int r = static_cast<int>(out.size());
    const auto sta = bcast_strides(out, sa);
    const auto stb = bcast_strides(out, sb);
    std::vector<int> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            ia += sta[d];
            ib += stb[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            ia -= sta[d] * static_cast<std::size_t>(out[d]);
            ib -= stb[d] * static_cast<std::size_t>(out[d]);
        }
    }
}

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const int r = std::max(a.size(), b.size());
    Shape out(r);
    for (int d = 0; d < r; ++d) {
        const int da = d - (r - static_cast<int>(a.size()));
        const int db = d - (r - static_cast<int>(b.size()));
        const int va = da >= 0 ? a[da] : 1;
        const int vb = db >= 0 ? b[db] : 1;
        if (va == vb || va == 1 || vb == 1)
            out[d] = std::max(va, vb);
        else
            throw std::invalid_argument("shape mismatch: " + shape_str(a) + " vs " + shape_str(b));
    }
    return out;
}

struct Node {
    OpKind kind = OpKind::Leaf;
    Shape shape;
    DataPtr out;
    std::vector<int> in_nodes;
    std::vector<DataPtr> in_vals;
    std::vector<Shape> in_shapes;
    std::vector<double> aux;
};

}  // namespace

struct TensorAccess {
    static Tensor make(Shape shape, DataPtr data, int node, std::uint64_t tape_id) {
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(data);
        t.node_ = node;
        t.tape_id_ = tape_id;
        return t;
    }
    static const DataPtr& ptr(const Tensor& t) { return t.data_; }
};

struct Tape::Impl {
    std::vector<Node> nodes;
};

struct TapeAccess {
    static std::vector<Node>& nodes(Tape& t) { return t.impl_->nodes; }
    static const std::vector<Node>& nodes(const Tape& t) { return t.impl_->nodes; }
};

// ---- Tensor ----

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
    check_shape_valid(shape, "full");
    std::vector<double> d(shape_numel(shape), value);
    return TensorAccess::make(std::move(shape), std::make_shared<const std::vector<double>>(std::move(d)), -1, 0);
}

Tensor Tensor::scalar(double value) { return full({1}, value); }

Tensor Tensor::of(Shape shape, std::vector<double> data) {
    check_shape_valid(shape, "of");
    if (shape_numel(shape) != data.size())
        throw std::invalid_argument("of: shape " + shape_str(shape) + " expects " +
                                    std::to_string(shape_numel(shape)) + " values, got " +
                                    std::to_string(data.size()));
    return TensorAccess::make(std::move(shape), std::make_shared<const std::vector<double>>(std::move(data)), -1, 0);
}

const std::vector<double>& Tensor::data() const {
    static const std::vector<double> kEmpty;
    return data_ ? *data_ : kEmpty;
}

double Tensor::value() const {
    if (size() != 1)
        throw std::invalid_argument("value(): tensor has shape " + shape_str(shape_) + ", want a single element");
    return (*data_)[0];
}

double Tensor::at(int i, int j) const {
    if (rank() != 2) throw std::invalid_argument("at(i,j): tensor has shape " + shape_str(shape_));
    return (*data_)[static_cast<std::size_t>(i) * shape_[1] + j];
}

double Tensor::at(int i, int j, int c) const {
    if (rank() != 3) throw std::invalid_argument("at(i,j,c): tensor has shape " + shape_str(shape_));
    return (*data_)[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + c];
}

Tensor Tensor::detach() const { return TensorAccess::make(shape_, data_, -1, 0); }

// ---- GradientMap ----

const Tensor& GradientMap::at(const Tensor& param) const {
    auto it = by_node_.find(param.node());
    if (param.node() < 0 || param.tape_id() != tape_id_ || it == by_node_.end())
        throw std::invalid_argument("GradientMap: parameter was not requested in this backward pass");
    return it->second;
}

bool GradientMap::contains(const Tensor& param) const {
    return param.node() >= 0 && param.tape_id() == tape_id_ && by_node_.count(param.node()) > 0;
}

// ---- KinkWatch ----

KinkWatch::KinkWatch()
    : min_dist_(std::numeric_limits<double>::infinity()), hash_(1469598103934665603ull), prev_(t_active_kink) {
    t_active_kink = this;
}

KinkWatch::~KinkWatch() { t_active_kink = prev_; }

KinkWatch* KinkWatch::active() { return t_active_kink; }

void KinkWatch::report(double dist) {
    if (dist < min_dist_) min_dist_ = dist;
}

void KinkWatch::report_branch(std::uint64_t v) { hash_ = (hash_ ^ v) * 1099511628211ull; }

// ---- Tape ----

Tape::Tape() : impl_(std::make_unique<Impl>()), id_(g_tape_counter.fetch_add(1)), prev_(t_active_tape) {
    t_active_tape = this;
}

Tape::~Tape() { t_active_tape = prev_; }

Tape* Tape::active() { return t_active_tape; }

std::size_t Tape::num_nodes() const { return impl_->nodes.size(); }

Tensor Tape::watch(const Tensor& init) {
    if (init.empty()) throw std::invalid_argument("watch: empty tensor");
    Node nd;
    nd.kind = OpKind::Leaf;
    nd.shape = init.shape();
    nd.out = TensorAccess::ptr(init);
    impl_->nodes.push_back(std::move(nd));
    return TensorAccess::make(init.shape(), TensorAccess::ptr(init), static_cast<int>(impl_->nodes.size() - 1), id_);
}

namespace {

// Shared op construction: finiteness scan, then node recording when the
// active tape is connected through any input.
Tensor make_result(OpKind kind, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, std::vector<double> aux = {}) {
    check_finite(kind, data);
    DataPtr dp = std::make_shared<const std::vector<double>>(std::move(data));
    Tape* tape = Tape::active();
    if (tape) {
        bool connected = false;
        for (const Tensor* t : inputs)
            if (t->node() >= 0 && t->tape_id() == tape->id()) {
                connected = true;
                break;
            }
        if (connected) {
            Node nd;
            nd.kind = kind;
            nd.shape = shape;
            nd.out = dp;
            nd.aux = std::move(aux);
            for (const Tensor* t : inputs) {
                nd.in_nodes.push_back(t->node() >= 0 && t->tape_id() == tape->id() ? t->node() : -1);
                nd.in_vals.push_back(TensorAccess::ptr(*t));
                nd.in_shapes.push_back(t->shape());
            }
            auto& nodes = TapeAccess::nodes(*tape);
            nodes.push_back(std::move(nd));
            return TensorAccess::make(std::move(shape), std::move(dp), static_cast<int>(nodes.size() - 1), tape->id());
        }
    }
    return TensorAccess::make(std::move(shape), std::move(dp), -1, 0);
}

Tensor make_result_vec(OpKind kind, Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                       std::vector<double> aux = {}) {
    check_finite(kind, data);
    DataPtr dp = std::make_shared<const std::vector<double>>(std::move(data));
    Tape* tape = Tape::active();
    if (tape) {
        bool connected = false;
        for (const Tensor& t : inputs)
            if (t.node() >= 0 && t.tape_id() == tape->id()) {
                connected = true;
                break;
            }
        if (connected) {
            Node nd;
            nd.kind = kind;
            nd.shape = shape;
            nd.out = dp;
            nd.aux = std::move(aux);
            for (const Tensor& t : inputs) {
                nd.in_nodes.push_back(t.node() >= 0 && t.tape_id() == tape->id() ? t.node() : -1);
                nd.in_vals.push_back(TensorAccess::ptr(t));
                nd.in_shapes.push_back(t.shape());
            }
            auto& nodes = TapeAccess::nodes(*tape);
            nodes.push_back(std::move(nd));
            return TensorAccess::make(std::move(shape), std::move(dp), static_cast<int>(nodes.size() - 1), tape->id());
        }
    }
    return TensorAccess::make(std::move(shape), std::move(dp), -1, 0);
}

void require_nonempty(const Tensor& t, const char* who) {
    if (t.empty()) throw std::invalid_argument(std::string(who) + ": empty tensor");
}

Tensor binary_op(OpKind kind, const Tensor& a, const Tensor& b,
                 double (*f)(double, double)) {
    require_nonempty(a, op_name(kind));
    require_nonempty(b, op_name(kind));
    Shape out_shape = broadcast_shape(a.shape(), b.shape());
    std::vector<double> out(shape_numel(out_shape));
    const auto& va = a.data();
    const auto& vb = b.data();
    for_each_bcast2(out_shape, a.shape(), b.shape(),
                    [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = f(va[ia], vb[ib]); });
    return make_result(kind, std::move(out_shape), std::move(out), {&a, &b});
}

// [H,W] and [H,W,C] handled uniformly as (H, W, C) with C = 1 for rank 2.
void hw_dims(const Tensor& t, const char* who, int& H, int& W, int& C) {
    if (t.rank() == 2) {
        H = t.shape()[0];
        W = t.shape()[1];
        C = 1;
    } else if (t.rank() == 3) {
        H = t.shape()[0];
        W = t.shape()[1];
        C = t.shape()[2];
    } else {
        throw std::invalid_argument(std::string(who) + ": want [H,W] or [H,W,C], got " + shape_str(t.shape()));
    }
}

}  // namespace

// ---- elementwise ----

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(OpKind::Add, a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(OpKind::Sub, a, b, [](double x, double y) { return x - y; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(OpKind::Mul, a, b, [](double x, double y) { return x * y; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(OpKind::Div, a, b, [](double x, double y) { return x / y; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    if (kink_active()) {
        Shape os = broadcast_shape(a.shape(), b.shape());
        const auto& va = a.data();
        const auto& vb = b.data();
        for_each_bcast2(os, a.shape(), b.shape(), [&](std::size_t, std::size_t ia, std::size_t ib) {
            const double d = std::fabs(va[ia] - vb[ib]);
            if (d > 0.0) kink_report(d);
            kink_branch(va[ia] < vb[ib] ? 1 : (va[ia] > vb[ib] ? 2 : 3));
        });
    }
    return binary_op(OpKind::Min, a, b, [](double x, double y) { return x < y ? x : y; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    if (kink_active()) {
        Shape os = broadcast_shape(a.shape(), b.shape());
        const auto& va = a.data();
        const auto& vb = b.data();
        for_each_bcast2(os, a.shape(), b.shape(), [&](std::size_t, std::size_t ia, std::size_t ib) {
            const double d = std::fabs(va[ia] - vb[ib]);
            if (d > 0.0) kink_report(d);
            kink_branch(va[ia] < vb[ib] ? 1 : (va[ia] > vb[ib] ? 2 : 3));
        });
    }
    return binary_op(OpKind::Max, a, b, [](double x, double y) { return x > y ? x : y; });
}

Tensor neg(const Tensor& a) {
    require_nonempty(a, "neg");
    std::vector<double> out(a.size());
    const auto& v = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = -v[i];
    return make_result(OpKind::Neg, a.shape(), std::move(out), {&a});
}

Tensor abs(const Tensor& a) {
    require_nonempty(a, "abs");
    std::vector<double> out(a.size());
    const auto& v = a.data();
    const bool kw = kink_active();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::fabs(v[i]);
        if (kw) {
            if (out[i] > 0.0) kink_report(out[i]);  // exact zeros: branch hash decides
            kink_branch(v[i] > 0 ? 1 : (v[i] < 0 ? 2 : 3));
        }
    }
    return make_result(OpKind::Abs, a.shape(), std::move(out), {&a});
}

Tensor exp(const Tensor& a) {
    require_nonempty(a, "exp");
    std::vector<double> out(a.size());
    const auto& v = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(v[i]);
    return make_result(OpKind::Exp, a.shape(), std::move(out), {&a});
}

Tensor log(const Tensor& a) {
    require_nonempty(a, "log");
    const auto& v = a.data();
    for (double x : v)
        if (!(x > 0.0))
            throw std::domain_error("log: non-positive input (" + std::to_string(x) + ")");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(v[i]);
    return make_result(OpKind::Log, a.shape(), std::move(out), {&a});
}

Tensor sqrt(const Tensor& a) {
    require_nonempty(a, "sqrt");
    const auto& v = a.data();
    for (double x : v)
        if (x < 0.0) throw std::domain_error("sqrt: negative input (" + std::to_string(x) + ")");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(v[i]);
    return make_result(OpKind::Sqrt, a.shape(), std::move(out), {&a});
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    require_nonempty(a, "clamp");
    if (!(lo <= hi)) throw std::invalid_argument("clamp: lo > hi");
    std::vector<double> out(a.size());
    const auto& v = a.data();
    const bool kw = kink_active();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::min(std::max(v[i], lo), hi);
        if (kw) {
            const double d = std::min(std::fabs(v[i] - lo), std::fabs(v[i] - hi));
            if (d > 0.0) kink_report(d);
            kink_branch(v[i] < lo ? 1 : (v[i] > hi ? 2 : 3));
        }
    }
    return make_result(OpKind::Clamp, a.shape(), std::move(out), {&a}, {lo, hi});
}

namespace {

// sin(sqrt(s))/sqrt(s) and its derivative in s. The series branch is wide
// enough (s < 4e-3) that the trigonometric forms never run inside their
// cancellation zone, keeping value and derivative smooth through s = 0 and
// accurate to ~1e-15 on both sides of the switch.
constexpr double kRotSeries = 4e-3;

double sinc_sqrt_val(double s) {
    if (s < kRotSeries) return 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0 + s * s * s * s / 362880.0;
    const double t = std::sqrt(s);
    return std::sin(t) / t;
}

double sinc_sqrt_deriv(double s) {
    if (s < kRotSeries) return -1.0 / 6.0 + s / 60.0 - s * s / 1680.0 + s * s * s / 90720.0;
    const double t = std::sqrt(s);
    return (t * std::cos(t) - std::sin(t)) / (2.0 * t * t * t);
}

double verc_sqrt_val(double s) {
    if (s < kRotSeries) return 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0 + s * s * s * s / 3628800.0;
    return (1.0 - std::cos(std::sqrt(s))) / s;
}

double verc_sqrt_deriv(double s) {
    if (s < kRotSeries) return -1.0 / 24.0 + s / 360.0 - s * s / 13440.0 + s * s * s / 907200.0;
    const double t = std::sqrt(s);
    return (t * std::sin(t) - 2.0 * (1.0 - std::cos(t))) / (2.0 * s * s);
}

}  // namespace

Tensor sinc_sqrt(const Tensor& a) {
    require_nonempty(a, "sinc_sqrt");
    const auto& v = a.data();
    for (double x : v)
        if (x < 0.0) throw std::domain_error("sinc_sqrt: negative input");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sinc_sqrt_val(v[i]);
    return make_result(OpKind::SincSqrt, a.shape(), std::move(out), {&a});
}

Tensor verc_sqrt(const Tensor& a) {
    require_nonempty(a, "verc_sqrt");
    const auto& v = a.data();
    for (double x : v)
        if (x < 0.0) throw std::domain_error("verc_sqrt: negative input");
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = verc_sqrt_val(v[i]);
    return make_result(OpKind::VercSqrt, a.shape(), std::move(out), {&a});
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    require_nonempty(a, "sum");
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result(OpKind::Sum, {1}, {s}, {&a});
}

Tensor mean(const Tensor& a) {
    require_nonempty(a, "mean");
    double s = 0.0;
    for (double x : a.data()) s += x;
    return make_result(OpKind::Mean, {1}, {s / static_cast<double>(a.size())}, {&a});
}

Tensor median(const Tensor& a) {
    require_nonempty(a, "median");
    std::vector<double> v = a.data();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    const double m = (n % 2 == 1) ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    return Tensor::scalar(m);  // evaluation-only; never joins the graph
}

Tensor mean_last(const Tensor& a) {
    require_nonempty(a, "mean_last");
    if (a.rank() < 2) throw std::invalid_argument("mean_last: want rank >= 2, got " + shape_str(a.shape()));
    Shape os(a.shape().begin(), a.shape().end() - 1);
    const int C = a.shape().back();
    const std::size_t n = shape_numel(os);
    std::vector<double> out(n, 0.0);
    const auto& v = a.data();
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += v[i * C + c];
        out[i] = s / C;
    }
    return make_result(OpKind::MeanLast, std::move(os), std::move(out), {&a});
}

// ---- structured ----

Tensor gradient_x(const Tensor& a) {
    int H, W, C;
    hw_dims(a, "gradient_x", H, W, C);
    std::vector<double> out(a.size(), 0.0);
    const auto& v = a.data();
    for (int i = 0; i < H; ++i)
        for (int j = 0; j + 1 < W; ++j)
            for (int c = 0; c < C; ++c) {
                const std::size_t p = (static_cast<std::size_t>(i) * W + j) * C + c;
                out[p] = v[p + C] - v[p];
            }
    return make_result(OpKind::GradX, a.shape(), std::move(out), {&a});
}

Tensor gradient_y(const Tensor& a) {
    int H, W, C;
    hw_dims(a, "gradient_y", H, W, C);
    std::vector<double> out(a.size(), 0.0);
    const auto& v = a.data();
    const std::size_t row = static_cast<std::size_t>(W) * C;
    for (int i = 0; i + 1 < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int c = 0; c < C; ++c) {
                const std::size_t p = (static_cast<std::size_t>(i) * W + j) * C + c;
                out[p] = v[p + row] - v[p];
            }
    return make_result(OpKind::GradY, a.shape(), std::move(out), {&a});
}

Tensor box_filter(const Tensor& a, int k) {
    int H, W, C;
    hw_dims(a, "box_filter", H, W, C);
    if (k < 1 || k % 2 == 0) throw std::invalid_argument("box_filter: window must be odd and >= 1");
    const int r = k / 2;
    std::vector<double> out(a.size(), 0.0);
    const auto& v = a.data();
    for (int i = 0; i < H; ++i) {
        const int y0 = std::max(0, i - r), y1 = std::min(H - 1, i + r);
        for (int j = 0; j < W; ++j) {
            const int x0 = std::max(0, j - r), x1 = std::min(W - 1, j + r);
            const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
            for (int c = 0; c < C; ++c) {
                double s = 0.0;
                for (int y = y0; y <= y1; ++y)
                    for (int x = x0; x <= x1; ++x) s += v[(static_cast<std::size_t>(y) * W + x) * C + c];
                out[(static_cast<std::size_t>(i) * W + j) * C + c] = s * inv;
            }
        }
    }
    return make_result(OpKind::BoxFilter, a.shape(), std::move(out), {&a}, {static_cast<double>(k)});
}

namespace {

double lattice_dist(double x) { return std::fabs(x - std::round(x)); }

}  // namespace

Tensor gather_bilinear(const Tensor& src, const Tensor& x, const Tensor& y) {
    int H, W, C;
    hw_dims(src, "gather_bilinear", H, W, C);
    if (x.shape() != y.shape() || x.rank() != 2)
        throw std::invalid_argument("gather_bilinear: coordinate shapes " + shape_str(x.shape()) + " vs " +
                                    shape_str(y.shape()) + " must be equal rank-2");
    const int Ho = x.shape()[0], Wo = x.shape()[1];
    Shape os = src.rank() == 3 ? Shape{Ho, Wo, C} : Shape{Ho, Wo};
    std::vector<double> out(shape_numel(os), 0.0);
    const auto& vs = src.data();
    const auto& vx = x.data();
    const auto& vy = y.data();
    const bool kw = kink_active();
    const std::size_t np = static_cast<std::size_t>(Ho) * Wo;
    for (std::size_t p = 0; p < np; ++p) {
        const double xx = vx[p], yy = vy[p];
        const bool inb = xx >= -kCoordEdgeTolerance && xx <= W - 1 + kCoordEdgeTolerance &&
                         yy >= -kCoordEdgeTolerance && yy <= H - 1 + kCoordEdgeTolerance;
        if (kw) {
            if (lattice_dist(xx) > 0.0) kink_report(lattice_dist(xx));
            if (lattice_dist(yy) > 0.0) kink_report(lattice_dist(yy));
            std::uint64_t br = inb ? 1 : 0;
            if (inb) {
                br = br * 1000003 + static_cast<std::uint64_t>(std::max(0, std::min(static_cast<int>(std::floor(xx)), W - 2)));
                br = br * 1000003 + static_cast<std::uint64_t>(std::max(0, std::min(static_cast<int>(std::floor(yy)), H - 2)));
            }
            kink_branch(br);
        }
        if (!inb) continue;
        const int x0 = std::max(0, std::min(static_cast<int>(std::floor(xx)), W - 2));
        const int y0 = std::max(0, std::min(static_cast<int>(std::floor(yy)), H - 2));
        const int x1 = std::min(x0 + 1, W - 1);
        const int y1 = std::min(y0 + 1, H - 1);
        const double dx = xx - x0, dy = yy - y0;
        for (int c = 0; c < C; ++c) {
            const double v00 = vs[(static_cast<std::size_t>(y0) * W + x0) * C + c];
            const double v01 = vs[(static_cast<std::size_t>(y0) * W + x1) * C + c];
            const double v10 = vs[(static_cast<std::size_t>(y1) * W + x0) * C + c];
            const double v11 = vs[(static_cast<std::size_t>(y1) * W + x1) * C + c];
            out[p * C + c] = (1 - dy) * ((1 - dx) * v00 + dx * v01) + dy * ((1 - dx) * v10 + dx * v11);
        }
    }
    return make_result(OpKind::Gather, std::move(os), std::move(out), {&src, &x, &y});
}

Tensor gather_in_bounds(const Tensor& x, const Tensor& y, int width, int height) {
    if (x.shape() != y.shape()) throw std::invalid_argument("gather_in_bounds: coordinate shapes differ");
    std::vector<double> out(x.size());
    const auto& vx = x.data();
    const auto& vy = y.data();
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = (vx[i] >= -kCoordEdgeTolerance && vx[i] <= width - 1 + kCoordEdgeTolerance &&
                  vy[i] >= -kCoordEdgeTolerance && vy[i] <= height - 1 + kCoordEdgeTolerance)
                     ? 1.0
                     : 0.0;
    return Tensor::of(x.shape(), std::move(out));  // constant: masks carry no gradient
}

Tensor stack_last(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("stack_last: no inputs");
    const Shape& s0 = parts[0].shape();
    for (const Tensor& t : parts)
        if (t.shape() != s0)
            throw std::invalid_argument("stack_last: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    const int k = static_cast<int>(parts.size());
    Shape os = s0;
    os.push_back(k);
    const std::size_t n = shape_numel(s0);
    std::vector<double> out(n * k);
    for (int m = 0; m < k; ++m) {
        const auto& v = parts[m].data();
        for (std::size_t i = 0; i < n; ++i) out[i * k + m] = v[i];
    }
    return make_result_vec(OpKind::StackLast, std::move(os), std::move(out), parts);
}

Tensor stack_first(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("stack_first: no inputs");
    const Shape& s0 = parts[0].shape();
    for (const Tensor& t : parts)
        if (t.shape() != s0)
            throw std::invalid_argument("stack_first: shape mismatch " + shape_str(t.shape()) + " vs " + shape_str(s0));
    const int k = static_cast<int>(parts.size());
    Shape os;
    os.push_back(k);
    os.insert(os.end(), s0.begin(), s0.end());
    const std::size_t n = shape_numel(s0);
    std::vector<double> out(n * k);
    for (int m = 0; m < k; ++m) {
        const auto& v = parts[m].data();
        std::copy(v.begin(), v.end(), out.begin() + static_cast<std::ptrdiff_t>(m * n));
    }
    return make_result_vec(OpKind::StackFirst, std::move(os), std::move(out), parts);
}

Tensor slice_last(const Tensor& a, int index) {
    require_nonempty(a, "slice_last");
    if (a.rank() < 2) throw std::invalid_argument("slice_last: want rank >= 2");
    const int C = a.shape().back();
    if (index < 0 || index >= C) throw std::invalid_argument("slice_last: index out of range");
    Shape os(a.shape().begin(), a.shape().end() - 1);
    const std::size_t n = shape_numel(os);
    std::vector<double> out(n);
    const auto& v = a.data();
    for (std::size_t i = 0; i < n; ++i) out[i] = v[i * C + index];
    return make_result(OpKind::SliceLast, std::move(os), std::move(out), {&a}, {static_cast<double>(index)});
}

Tensor slice_first(const Tensor& a, int index) {
    require_nonempty(a, "slice_first");
    if (a.rank() < 2) throw std::invalid_argument("slice_first: want rank >= 2");
    const int P = a.shape().front();
    if (index < 0 || index >= P) throw std::invalid_argument("slice_first: index out of range");
    Shape os(a.shape().begin() + 1, a.shape().end());
    const std::size_t n = shape_numel(os);
    std::vector<double> out(n);
    const auto& v = a.data();
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(index * n), v.begin() + static_cast<std::ptrdiff_t>((index + 1) * n),
              out.begin());
    return make_result(OpKind::SliceFirst, std::move(os), std::move(out), {&a}, {static_cast<double>(index)});
}

Tensor select(const Tensor& a, int flat_index) {
    require_nonempty(a, "select");
    if (flat_index < 0 || static_cast<std::size_t>(flat_index) >= a.size())
        throw std::invalid_argument("select: index " + std::to_string(flat_index) + " out of range for " +
                                    shape_str(a.shape()));
    return make_result(OpKind::Select, {1}, {a.data()[flat_index]}, {&a}, {static_cast<double>(flat_index)});
}

Tensor reshape(const Tensor& a, Shape shape) {
    require_nonempty(a, "reshape");
    check_shape_valid(shape, "reshape");
    if (shape_numel(shape) != a.size())
        throw std::invalid_argument("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape) +
                                    " changes element count");
    std::vector<double> out = a.data();
    return make_result(OpKind::Reshape, std::move(shape), std::move(out), {&a});
}

// ---- backward ----

namespace {

std::vector<double>& acc_buffer(std::vector<std::vector<double>>& adj, int node, const Shape& shape) {
    auto& v = adj[node];
    if (v.empty()) v.assign(shape_numel(shape), 0.0);
    return v;
}

void backward_node(const Node& nd, const std::vector<double>& g, std::vector<std::vector<double>>& adj) {
    auto dst = [&](int k) -> double* {
        return nd.in_nodes[k] >= 0 ? acc_buffer(adj, nd.in_nodes[k], nd.in_shapes[k]).data() : nullptr;
    };
    switch (nd.kind) {
        case OpKind::Leaf:
            break;
        case OpKind::Add: {
            double* da = dst(0);
            double* db = dst(1);
            for_each_bcast2(nd.shape, nd.in_shapes[0], nd.in_shapes[1],
                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                if (da) da[ia] += g[i];
                                if (db) db[ib] += g[i];
                            });
            break;
        }
        case OpKind::Sub: {
            double* da = dst(0);
            double* db = dst(1);
            for_each_bcast2(nd.shape, nd.in_shapes[0], nd.in_shapes[1],
                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                if (da) da[ia] += g[i];
                                if (db) db[ib] -= g[i];
                            });
            break;
        }
        case OpKind::Mul: {
            double* da = dst(0);
            double* db = dst(1);
            const auto& va = *nd.in_vals[0];
            const auto& vb = *nd.in_vals[1];
            for_each_bcast2(nd.shape, nd.in_shapes[0], nd.in_shapes[1],
                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                if (da) da[ia] += g[i] * vb[ib];
                                if (db) db[ib] += g[i] * va[ia];
                            });
            break;
        }
        case OpKind::Div: {
            double* da = dst(0);
            double* db = dst(1);
            const auto& va = *nd.in_vals[0];
            const auto& vb = *nd.in_vals[1];
            for_each_bcast2(nd.shape, nd.in_shapes[0], nd.in_shapes[1],
                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                if (da) da[ia] += g[i] / vb[ib];
                                if (db) db[ib] -= g[i] * va[ia] / (vb[ib] * vb[ib]);
                            });
            break;
        }
        case OpKind::Min: {
            double* da = dst(0);
            double* db = dst(1);
            const auto& va = *nd.in_vals[0];
            const auto& vb = *nd.in_vals[1];
            for_each_bcast2(nd.shape, nd.in_shapes[0], nd.in_shapes[1],
                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                if (da && va[ia] < vb[ib]) da[ia] += g[i];
                                if (db && vb[ib] < va[ia]) db[ib] += g[i];
                            });
            break;
        }
        case OpKind::Max: {
            double* da = dst(0);
            double* db = dst(1);
            const auto& va = *nd.in_vals[0];
            const auto& vb = *nd.in_vals[1];
            for_each_bcast2(nd.shape, nd.in_shapes[0], nd.in_shapes[1],
                            [&](std::size_t i, std::size_t ia, std::size_t ib) {
                                if (da && va[ia] > vb[ib]) da[ia] += g[i];
                                if (db && vb[ib] > va[ia]) db[ib] += g[i];
                            });
            break;
        }
        case OpKind::Neg: {
            double* da = dst(0);
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] -= g[i];
            break;
        }
        case OpKind::Abs: {
            double* da = dst(0);
            const auto& va = *nd.in_vals[0];
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i)
                    da[i] += va[i] > 0 ? g[i] : (va[i] < 0 ? -g[i] : 0.0);
            break;
        }
        case OpKind::Exp: {
            double* da = dst(0);
            const auto& out = *nd.out;
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * out[i];
            break;
        }
        case OpKind::Log: {
            double* da = dst(0);
            const auto& va = *nd.in_vals[0];
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] / va[i];
            break;
        }
        case OpKind::Sqrt: {
            double* da = dst(0);
            const auto& out = *nd.out;
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * 0.5 / out[i];
            break;
        }
        case OpKind::SincSqrt: {
            double* da = dst(0);
            const auto& va = *nd.in_vals[0];
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * sinc_sqrt_deriv(va[i]);
            break;
        }
        case OpKind::VercSqrt: {
            double* da = dst(0);
            const auto& va = *nd.in_vals[0];
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * verc_sqrt_deriv(va[i]);
            break;
        }
        case OpKind::Clamp: {
            double* da = dst(0);
            const auto& va = *nd.in_vals[0];
            const double lo = nd.aux[0], hi = nd.aux[1];
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (va[i] > lo && va[i] < hi) da[i] += g[i];
            break;
        }
        case OpKind::Sum: {
            double* da = dst(0);
            if (da) {
                const std::size_t n = shape_numel(nd.in_shapes[0]);
                for (std::size_t i = 0; i < n; ++i) da[i] += g[0];
            }
            break;
        }
        case OpKind::Mean: {
            double* da = dst(0);
            if (da) {
                const std::size_t n = shape_numel(nd.in_shapes[0]);
                const double gi = g[0] / static_cast<double>(n);
                for (std::size_t i = 0; i < n; ++i) da[i] += gi;
            }
            break;
        }
        case OpKind::MeanLast: {
            double* da = dst(0);
            if (da) {
                const int C = nd.in_shapes[0].back();
                for (std::size_t i = 0; i < g.size(); ++i) {
                    const double gi = g[i] / C;
                    for (int c = 0; c < C; ++c) da[i * C + c] += gi;
                }
            }
            break;
        }
        case OpKind::GradX: {
            double* da = dst(0);
            if (da) {
                int H = nd.shape[0], W = nd.shape[1], C = nd.shape.size() == 3 ? nd.shape[2] : 1;
                for (int i = 0; i < H; ++i)
                    for (int j = 0; j + 1 < W; ++j)
                        for (int c = 0; c < C; ++c) {
                            const std::size_t p = (static_cast<std::size_t>(i) * W + j) * C + c;
                            da[p + C] += g[p];
                            da[p] -= g[p];
                        }
            }
            break;
        }
        case OpKind::GradY: {
            double* da = dst(0);
            if (da) {
                int H = nd.shape[0], W = nd.shape[1], C = nd.shape.size() == 3 ? nd.shape[2] : 1;
                const std::size_t row = static_cast<std::size_t>(W) * C;
                for (int i = 0; i + 1 < H; ++i)
                    for (int j = 0; j < W; ++j)
                        for (int c = 0; c < C; ++c) {
                            const std::size_t p = (static_cast<std::size_t>(i) * W + j) * C + c;
                            da[p + row] += g[p];
                            da[p] -= g[p];
                        }
            }
            break;
        }
        case OpKind::BoxFilter: {
            double* da = dst(0);
            if (da) {
                int H = nd.shape[0], W = nd.shape[1], C = nd.shape.size() == 3 ? nd.shape[2] : 1;
                const int r = static_cast<int>(nd.aux[0]) / 2;
                for (int i = 0; i < H; ++i) {
                    const int y0 = std::max(0, i - r), y1 = std::min(H - 1, i + r);
                    for (int j = 0; j < W; ++j) {
                        const int x0 = std::max(0, j - r), x1 = std::min(W - 1, j + r);
                        const double inv = 1.0 / ((y1 - y0 + 1) * (x1 - x0 + 1));
                        for (int c = 0; c < C; ++c) {
                            const double gi = g[(static_cast<std::size_t>(i) * W + j) * C + c] * inv;
                            for (int y = y0; y <= y1; ++y)
                                for (int x = x0; x <= x1; ++x)
                                    da[(static_cast<std::size_t>(y) * W + x) * C + c] += gi;
                        }
                    }
                }
            }
            break;
        }
        case OpKind::Gather: {
            double* dsrc = dst(0);
            double* dx = dst(1);
            double* dy = dst(2);
            const auto& vs = *nd.in_vals[0];
            const auto& vx = *nd.in_vals[1];
            const auto& vy = *nd.in_vals[2];
            const Shape& ss = nd.in_shapes[0];
            const int H = ss[0], W = ss[1], C = ss.size() == 3 ? ss[2] : 1;
            const std::size_t np = vx.size();
            for (std::size_t p = 0; p < np; ++p) {
                const double xx = vx[p], yy = vy[p];
                if (!(xx >= -kCoordEdgeTolerance && xx <= W - 1 + kCoordEdgeTolerance &&
                      yy >= -kCoordEdgeTolerance && yy <= H - 1 + kCoordEdgeTolerance))
                    continue;
                const int x0 = std::max(0, std::min(static_cast<int>(std::floor(xx)), W - 2));
                const int y0 = std::max(0, std::min(static_cast<int>(std::floor(yy)), H - 2));
                const int x1 = std::min(x0 + 1, W - 1);
                const int y1 = std::min(y0 + 1, H - 1);
                const double fx = xx - x0, fy = yy - y0;
                double gx = 0.0, gy = 0.0;
                for (int c = 0; c < C; ++c) {
                    const double gi = g[p * C + c];
                    const std::size_t i00 = (static_cast<std::size_t>(y0) * W + x0) * C + c;
                    const std::size_t i01 = (static_cast<std::size_t>(y0) * W + x1) * C + c;
                    const std::size_t i10 = (static_cast<std::size_t>(y1) * W + x0) * C + c;
                    const std::size_t i11 = (static_cast<std::size_t>(y1) * W + x1) * C + c;
                    const double v00 = vs[i00], v01 = vs[i01], v10 = vs[i10], v11 = vs[i11];
                    if (dsrc) {
                        dsrc[i00] += gi * (1 - fx) * (1 - fy);
                        dsrc[i01] += gi * fx * (1 - fy);
                        dsrc[i10] += gi * (1 - fx) * fy;
                        dsrc[i11] += gi * fx * fy;
                    }
                    gx += gi * ((v01 - v00) * (1 - fy) + (v11 - v10) * fy);
                    gy += gi * ((v10 - v00) * (1 - fx) + (v11 - v01) * fx);
                }
                if (dx) dx[p] += gx;
                if (dy) dy[p] += gy;
            }
            break;
        }
        case OpKind::StackLast: {
            const int k = static_cast<int>(nd.in_nodes.size());
            const std::size_t n = shape_numel(nd.in_shapes[0]);
            for (int m = 0; m < k; ++m) {
                double* da = dst(m);
                if (!da) continue;
                for (std::size_t i = 0; i < n; ++i) da[i] += g[i * k + m];
            }
            break;
        }
        case OpKind::StackFirst: {
            const int k = static_cast<int>(nd.in_nodes.size());
            const std::size_t n = shape_numel(nd.in_shapes[0]);
            for (int m = 0; m < k; ++m) {
                double* da = dst(m);
                if (!da) continue;
                const std::size_t off = static_cast<std::size_t>(m) * n;
                for (std::size_t i = 0; i < n; ++i) da[i] += g[off + i];
            }
            break;
        }
        case OpKind::SliceLast: {
            double* da = dst(0);
            if (da) {
                const int C = nd.in_shapes[0].back();
                const int idx = static_cast<int>(nd.aux[0]);
                for (std::size_t i = 0; i < g.size(); ++i) da[i * C + idx] += g[i];
            }
            break;
        }
        case OpKind::SliceFirst: {
            double* da = dst(0);
            if (da) {
                const std::size_t n = g.size();
                const std::size_t off = static_cast<std::size_t>(nd.aux[0]) * n;
                for (std::size_t i = 0; i < n; ++i) da[off + i] += g[i];
            }
            break;
        }
        case OpKind::Select: {
            double* da = dst(0);
            if (da) da[static_cast<std::size_t>(nd.aux[0])] += g[0];
            break;
        }
        case OpKind::Reshape: {
            double* da = dst(0);
            if (da)
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            break;
        }
    }
}

}  // namespace

GradientMap Tape::backward(const Tensor& loss, std::span<const Tensor> params) {
    if (loss.size() != 1)
        throw std::invalid_argument("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    if (loss.node() >= 0 && loss.tape_id() != id_)
        throw std::invalid_argument("backward: loss was recorded on a different tape");
    for (const Tensor& p : params) {
        if (p.node() >= 0 && p.tape_id() == id_ && impl_->nodes[p.node()].kind != OpKind::Leaf)
            throw std::invalid_argument("backward: parameter is not a watched leaf");
    }

    const auto& nodes = impl_->nodes;
    std::vector<std::vector<double>> adj(loss.node() >= 0 ? loss.node() + 1 : 0);
    if (loss.node() >= 0) {
        adj[loss.node()] = {1.0};
        for (int i = loss.node(); i >= 0; --i) {
            if (adj[i].empty()) continue;
            backward_node(nodes[i], adj[i], adj);
            if (nodes[i].kind != OpKind::Leaf) adj[i].clear();  // free as we go
        }
    }

    GradientMap gm;
    gm.tape_id_ = id_;
    for (const Tensor& p : params) {
        Tensor grad;
        if (p.node() >= 0 && p.tape_id() == id_ && p.node() < static_cast<int>(adj.size()) && !adj[p.node()].empty()) {
            auto& buf = adj[p.node()];
            for (double x : buf)
                if (!std::isfinite(x)) throw NumericError("backward: non-finite gradient");
            grad = Tensor::of(p.shape(), buf);
        } else {
            grad = Tensor::zeros(p.shape());
        }
        gm.by_node_.emplace(p.node(), std::move(grad));
    }
    return gm;
}

GradientMap Tape::backward(const Tensor& loss, std::initializer_list<Tensor> params) {
    return backward(loss, std::span<const Tensor>(params.begin(), params.size()));
}

// ---- finite differences ----

FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& loss, const Tensor& at, double step,
                                   double tolerance, std::uint64_t seed, int min_samples) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");
    std::vector<double> analytic;
    {
        Tape tape;
        Tensor p = tape.watch(at);
        Tensor value = loss(p);
        if (value.size() != 1)
            throw std::invalid_argument("finite_diff_check: loss must return a scalar");
        analytic = tape.backward(value, {p}).at(p).data();
    }

    const std::size_t n = at.size();
    const std::size_t want = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(32, min_samples)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(order.begin(), order.end(), rng);

    FiniteDiffReport rep;
    rep.sampled = static_cast<int>(want);
    const std::vector<double>& base = at.data();
    for (std::size_t s = 0; s < want; ++s) {
        const std::size_t c = order[s];
        auto probe = [&](double v, double& f, double& kd, std::uint64_t& kh) {
            std::vector<double> d = base;
            d[c] = v;
            KinkWatch kw;
            f = loss(Tensor::of(at.shape(), std::move(d))).value();
            kd = kw.min_distance();
            kh = kw.branch_hash();
        };
        double fm, fp, kdm, kdp;
        std::uint64_t khm, khp;
        probe(base[c] - step, fm, kdm, khm);
        probe(base[c] + step, fp, kdp, khp);
        // Every kink in the op set is C0, so the secant is trustworthy
        // exactly when both passes agree on every branch decision; a hash
        // mismatch means the stencil straddles a kink.
        if (khm != khp) {
            ++rep.skipped;  // non-smooth point skipped
            continue;
        }
        const double fd = (fp - fm) / (2.0 * step);
        const double an = analytic[c];
        // the 1e-3 denominator floor absorbs central-difference roundoff
        // (~eps*|loss|/step) on near-zero gradients
        const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-3});
        ++rep.checked;
        if (rel > rep.max_rel_error) {
            rep.max_rel_error = rel;
            rep.worst_index = static_cast<int>(c);
        }
    }
    rep.pass = rep.max_rel_error <= tolerance;
    return rep;
}

std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) r += ",";
        r += std::to_string(s[i]);
    }
    return r + "]";
}

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) n *= static_cast<std::size_t>(d);
    return n;
}

}  // namespace dsfm
