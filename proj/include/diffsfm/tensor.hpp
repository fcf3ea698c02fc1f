#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace dsfm {

using Shape = std::vector<int>;

/// Thrown when an engine operation produces or would propagate a
/// non-finite value (NaN/Inf). Everything else throws std exceptions:
/// std::invalid_argument for usage/shape errors, std::domain_error for
/// math-domain violations.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

/// Slack on sampling-bounds tests: coordinates this close to the image
/// border still count as inside, absorbing the rounding of coordinate
/// arithmetic that would otherwise flip border pixels invalid.
constexpr double kCoordEdgeTolerance = 1e-9;

class Tape;

/// Dense 64-bit float tensor. Immutable after creation; copies share the
/// underlying buffer. A tensor created while a Tape is active and derived
/// from a watched parameter carries a node id into that tape's graph.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, double value);
    static Tensor scalar(double value);
    static Tensor of(Shape shape, std::vector<double> data);

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    std::size_t size() const { return data_ ? data_->size() : 0; }
    bool empty() const { return size() == 0; }

    const std::vector<double>& data() const;
    double operator[](std::size_t flat) const { return data()[flat]; }
    /// Value of a single-element tensor; throws otherwise.
    double value() const;

    /// 2-D / 3-D element access, row-major [H,W] / [H,W,C].
    double at(int i, int j) const;
    double at(int i, int j, int c) const;

    int node() const { return node_; }
    std::uint64_t tape_id() const { return tape_id_; }
    /// Drop the graph connection; value-identical constant tensor.
    Tensor detach() const;

  private:
    friend struct TensorAccess;

    Shape shape_;
    std::shared_ptr<const std::vector<double>> data_;
    int node_ = -1;
    std::uint64_t tape_id_ = 0;
};

/// Gradients from one backward pass, keyed by parameter (graph leaf).
class GradientMap {
  public:
    const Tensor& at(const Tensor& param) const;
    bool contains(const Tensor& param) const;
    std::size_t size() const { return by_node_.size(); }

  private:
    friend class Tape;
    std::unordered_map<int, Tensor> by_node_;
    std::uint64_t tape_id_ = 0;
};

/// Reverse-mode differentiation session. While a Tape is alive it is the
/// active graph for the constructing thread; operations on tensors that
/// descend from watch()ed parameters are recorded. One tape records at a
/// time per thread (they nest as a stack); independent tapes on different
/// threads are fine.
class Tape {
  public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Register a parameter leaf. Gradients are reported per watched tensor.
    Tensor watch(const Tensor& init);

    /// d(loss)/d(param) for each param. Loss must be a scalar. Parameters
    /// that never influenced the loss get zero gradients of their shape.
    /// Does not consume the graph; may be called repeatedly.
    GradientMap backward(const Tensor& loss, std::span<const Tensor> params);
    GradientMap backward(const Tensor& loss, std::initializer_list<Tensor> params);

    static Tape* active();
    std::uint64_t id() const { return id_; }
    std::size_t num_nodes() const;

  private:
    friend struct TapeAccess;
    struct Impl;
    std::unique_ptr<Impl> impl_;
    std::uint64_t id_;
    Tape* prev_;
};

/// While alive, records two things from every kinked operation it sees
/// (abs/min/max/clamp at their switch points, bilinear gather near the
/// integer lattice): the minimum distance to a kink, and a running hash of
/// all branch decisions. finite_diff_check compares the hashes of the two
/// perturbed evaluations to detect a kink crossing inside the stencil.
class KinkWatch {
  public:
    KinkWatch();
    ~KinkWatch();
    KinkWatch(const KinkWatch&) = delete;
    KinkWatch& operator=(const KinkWatch&) = delete;

    double min_distance() const { return min_dist_; }
    std::uint64_t branch_hash() const { return hash_; }
    void report(double dist);
    void report_branch(std::uint64_t v);
    static KinkWatch* active();

  private:
    double min_dist_;
    std::uint64_t hash_;
    KinkWatch* prev_;
};

// ---- elementwise ops (NumPy-style trailing-dim broadcasting) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor clamp(const Tensor& a, double lo, double hi);

/// sin(sqrt(s))/sqrt(s), smooth through s = 0 (series-evaluated near 0).
Tensor sinc_sqrt(const Tensor& s);
/// (1 - cos(sqrt(s)))/s, smooth through s = 0.
Tensor verc_sqrt(const Tensor& s);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double b) { return add(a, Tensor::scalar(b)); }
inline Tensor operator-(const Tensor& a, double b) { return sub(a, Tensor::scalar(b)); }
inline Tensor operator*(const Tensor& a, double b) { return mul(a, Tensor::scalar(b)); }
inline Tensor operator/(const Tensor& a, double b) { return div(a, Tensor::scalar(b)); }
inline Tensor operator+(double a, const Tensor& b) { return add(Tensor::scalar(a), b); }
inline Tensor operator-(double a, const Tensor& b) { return sub(Tensor::scalar(a), b); }
inline Tensor operator*(double a, const Tensor& b) { return mul(Tensor::scalar(a), b); }
inline Tensor operator/(double a, const Tensor& b) { return div(Tensor::scalar(a), b); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

// ---- reductions ----

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Forward-only (never joins the graph). Even length: mean of the two
/// central values.
Tensor median(const Tensor& a);
/// Mean over the last axis: [..., C] -> [...]. Rank >= 2.
Tensor mean_last(const Tensor& a);

// ---- structured ops ----

/// Forward differences along x (columns) / y (rows) on [H,W] or [H,W,C];
/// same shape, last column/row zero.
Tensor gradient_x(const Tensor& a);
Tensor gradient_y(const Tensor& a);

/// k x k window mean with cropped (renormalized) windows at borders.
Tensor box_filter(const Tensor& a, int k);

/// Bilinear gather of src [H,W] or [H,W,C] at coordinates (x, y), both
/// [Ho,Wo]. Samples whose four corner pixels are not all inside src are
/// zero (no edge clamping).
Tensor gather_bilinear(const Tensor& src, const Tensor& x, const Tensor& y);
/// Constant 0/1 mask: 1 where (x, y) lies in [0, W-1] x [0, H-1].
Tensor gather_in_bounds(const Tensor& x, const Tensor& y, int width, int height);

Tensor stack_last(std::span<const Tensor> parts);
Tensor stack_first(std::span<const Tensor> parts);
Tensor slice_last(const Tensor& a, int index);
Tensor slice_first(const Tensor& a, int index);
Tensor select(const Tensor& a, int flat_index);
Tensor reshape(const Tensor& a, Shape shape);

// ---- gradient verification ----

struct FiniteDiffReport {
    int sampled = 0;
    int checked = 0;
    int skipped = 0;  // non-smooth points (kink inside the stencil)
    double max_rel_error = 0.0;
    int worst_index = -1;
    bool pass = false;
};

/// Central-difference check of the engine gradient of `loss` at `at`.
/// `loss` must be deterministic. Samples min(size, max(32, min_samples))
/// coordinates. The kink guard: a coordinate is skipped when the two
/// perturbed passes disagree on any branch decision, i.e. the stencil
/// straddles an abs/min/max/clamp kink or a sampling-lattice cell edge.
FiniteDiffReport finite_diff_check(const std::function<Tensor(const Tensor&)>& loss,
                                   const Tensor& at, double step, double tolerance,
                                   std::uint64_t seed = 0, int min_samples = 32);

}  // namespace dsfm
