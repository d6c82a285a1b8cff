#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>

namespace deconf {

template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Arr = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Bad inputs: wrong shapes, out-of-range parameters, malformed data.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// The inputs were well formed but the computation could not be carried out
// (singular systems, separation, collinear directions, ...).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline void require(bool cond, const std::string& msg)
{
    if (!cond) throw ValidationError(msg);
}

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m)
{
    return m.derived().array().isFinite().all();
}

/// Numerically stable logistic function, kept strictly inside (0, 1).
template <class Scalar>
Scalar inv_logit(Scalar x)
{
    using std::exp;
    Scalar p;
    if (x >= Scalar(0)) {
        p = Scalar(1) / (Scalar(1) + exp(-x));
    } else {
        const Scalar ex = exp(x);
        p = ex / (Scalar(1) + ex);
    }
    constexpr Scalar lo = std::numeric_limits<Scalar>::min();
    constexpr Scalar hi = Scalar(1) - std::numeric_limits<Scalar>::epsilon() / Scalar(2);
    return p < lo ? lo : (p > hi ? hi : p);
}

template <class Scalar>
Scalar logit(Scalar p)
{
    using std::log;
    return log(p / (Scalar(1) - p));
}

// log(1 + exp(x)) without overflow.
template <class Scalar>
Scalar log1p_exp(Scalar x)
{
    using std::exp;
    using std::log1p;
    return x > Scalar(0) ? x + log1p(exp(-x)) : log1p(exp(x));
}

// splitmix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t mix_seed(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0)
{
    return mix_seed(mix_seed(mix_seed(base) ^ a) ^ (b * 0xd1b54a32d192ed03ULL));
}

} // namespace deconf
