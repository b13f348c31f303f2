#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ogrg {

// Error taxonomy. Shape disagreements, bad parameters, numeric failures
// (NaN/Inf where finite values are required), violated call contracts and
// malformed user input are kept distinct so callers can map them to exit
// codes.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct ParameterError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct ContractError : std::logic_error {
    using std::logic_error::logic_error;
};
struct InputError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw DimensionError("negative dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << "]";
    return os.str();
}

template <typename S>
struct TensorData {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated lazily, same length as value
    bool requires_grad = false;

    std::size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
    }
};

// Shared-storage handle. Copies are cheap and alias the same buffer; ops
// produce fresh tensors. Gradients accumulate additively across uses.
template <typename S>
class Tensor {
  public:
    Tensor() : d_(std::make_shared<TensorData<S>>()) {}

    explicit Tensor(Shape shape, bool requires_grad = false)
        : d_(std::make_shared<TensorData<S>>()) {
        d_->shape = std::move(shape);
        d_->value.assign(shape_numel(d_->shape), S(0));
        d_->requires_grad = requires_grad;
    }

    Tensor(Shape shape, std::vector<S> values, bool requires_grad = false)
        : d_(std::make_shared<TensorData<S>>()) {
        if (shape_numel(shape) != values.size())
            throw DimensionError("tensor init: " + shape_str(shape) + " does not hold " +
                                 std::to_string(values.size()) + " values");
        d_->shape = std::move(shape);
        d_->value = std::move(values);
        d_->requires_grad = requires_grad;
    }

    static Tensor scalar(S v, bool requires_grad = false) {
        return Tensor(Shape{}, std::vector<S>{v}, requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return Tensor(std::move(shape), requires_grad);
    }
    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        Tensor t(std::move(shape), requires_grad);
        std::fill(t.d_->value.begin(), t.d_->value.end(), v);
        return t;
    }

    const Shape& shape() const { return d_->shape; }
    int dim(int i) const { return d_->shape.at(static_cast<std::size_t>(i)); }
    int ndim() const { return static_cast<int>(d_->shape.size()); }
    std::size_t numel() const { return d_->value.size(); }
    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool r) { d_->requires_grad = r; }

    std::vector<S>& values() { return d_->value; }
    const std::vector<S>& values() const { return d_->value; }
    std::vector<S>& grad() {
        d_->ensure_grad();
        return d_->grad;
    }
    const std::vector<S>& grad_view() const { return d_->grad; }
    void zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), S(0)); }

    S& operator[](std::size_t i) { return d_->value[i]; }
    const S& operator[](std::size_t i) const { return d_->value[i]; }

    // Row-major element access for up to 4 axes.
    S& at(int i0) { return d_->value[idx({i0})]; }
    S& at(int i0, int i1) { return d_->value[idx({i0, i1})]; }
    S& at(int i0, int i1, int i2) { return d_->value[idx({i0, i1, i2})]; }
    S& at(int i0, int i1, int i2, int i3) { return d_->value[idx({i0, i1, i2, i3})]; }
    S at(int i0) const { return d_->value[idx({i0})]; }
    S at(int i0, int i1) const { return d_->value[idx({i0, i1})]; }
    S at(int i0, int i1, int i2) const { return d_->value[idx({i0, i1, i2})]; }
    S at(int i0, int i1, int i2, int i3) const { return d_->value[idx({i0, i1, i2, i3})]; }

    bool same_storage(const Tensor& o) const { return d_ == o.d_; }
    std::shared_ptr<TensorData<S>> data_ptr() const { return d_; }

    Tensor detached_copy() const {
        Tensor t;
        t.d_->shape = d_->shape;
        t.d_->value = d_->value;
        return t;
    }

    bool all_finite() const {
        for (S v : d_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

  private:
    std::size_t idx(std::initializer_list<int> ix) const {
        const Shape& s = d_->shape;
        if (ix.size() != s.size()) throw DimensionError("index rank mismatch");
        std::size_t lin = 0;
        std::size_t a = 0;
        for (int i : ix) {
            lin = lin * static_cast<std::size_t>(s[a]) + static_cast<std::size_t>(i);
            ++a;
        }
        return lin;
    }

    std::shared_ptr<TensorData<S>> d_;
};

// Reverse-mode tape. Ops executed while a tape is active push one closure
// each; backward() replays them in reverse execution order. After an entry
// propagates into its inputs it zeroes its output's gradient, so leaf
// gradients survive the replay and repeated backward() calls over freshly
// recorded entries keep accumulating.
//
// Single writer: one training context records and differentiates on one
// logical thread. The active tape is thread-local; construction activates,
// destruction restores the previous one.
template <typename S>
class Tape {
  public:
    Tape() : prev_(current_) { current_ = this; }
    ~Tape() {
        if (current_ == this) current_ = prev_;
    }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_; }

    void record(std::function<void()> backward) { entries_.push_back(std::move(backward)); }
    std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    void backward(Tensor<S>& loss) {
        if (loss.numel() != 1)
            throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
        if (entries_.empty()) throw ContractError("backward: tape is empty");
        loss.grad()[0] += S(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

  private:
    static thread_local Tape* current_;
    Tape* prev_;
    std::vector<std::function<void()>> entries_;
};

template <typename S>
thread_local Tape<S>* Tape<S>::current_ = nullptr;

// Suppresses recording inside a scope (inference over tensors that carry
// requires_grad, numeric probes in finite differences).
template <typename S>
class NoGrad {
  public:
    NoGrad() { ++depth_; }
    ~NoGrad() { --depth_; }
    NoGrad(const NoGrad&) = delete;
    NoGrad& operator=(const NoGrad&) = delete;
    static bool active() { return depth_ > 0; }

  private:
    static thread_local int depth_;
};

template <typename S>
thread_local int NoGrad<S>::depth_ = 0;

template <typename S>
inline bool grad_enabled_for(const Tensor<S>& t) {
    return t.requires_grad() && !NoGrad<S>::active() && Tape<S>::current() != nullptr;
}

// Deterministic RNG. All sampling goes through these helpers so dataset
// and init bytes do not depend on libstdc++ distribution internals.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    std::uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) throw ParameterError("Rng::below: n must be positive");
        std::uint64_t threshold = (0ull - n) % n;
        for (;;) {
            std::uint64_t r = eng_();
            if (r >= threshold) return r % n;
        }
    }

    int irange(int lo, int hi_inclusive) {
        return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi_inclusive - lo + 1)));
    }

    double normal() {
        // Box-Muller, cached second value.
        if (has_cache_) {
            has_cache_ = false;
            return cache_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        cache_ = r * std::sin(a);
        has_cache_ = true;
        return r * std::cos(a);
    }

    // Normal(0, sigma) truncated to +-2 sigma by resampling.
    double trunc_normal(double sigma) {
        for (;;) {
            double v = normal();
            if (std::abs(v) <= 2.0) return v * sigma;
        }
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Derive an independent stream, stable across platforms.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

  private:
    std::mt19937_64 eng_;
    bool has_cache_ = false;
    double cache_ = 0.0;
};

// Worker-thread cap: OGRG_THREADS, strict mode forces 1.
int worker_threads();
void set_worker_threads(int n);

}  // namespace ogrg
