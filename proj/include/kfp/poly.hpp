#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace kfp {

using MultiIndex = std::vector<int>;

inline int total_degree(const MultiIndex& a) {
    int s = 0;
    for (int e : a) s += e;
    return s;
}

/// Sparse multivariate polynomial with exact coefficient arithmetic.
/// Variables are addressed by position; the number of variables is fixed at construction.
template <class T>
class BasicPolynomial {
public:
    using Terms = std::map<MultiIndex, T>;

    BasicPolynomial() = default;
    explicit BasicPolynomial(int nvars) : nvars_(nvars) {}

    static BasicPolynomial constant(int nvars, T c) {
        BasicPolynomial p(nvars);
        p.add_term(MultiIndex(nvars, 0), c);
        return p;
    }
    static BasicPolynomial variable(int nvars, int i, T c = T(1)) {
        MultiIndex a(nvars, 0);
        a.at(i) = 1;
        BasicPolynomial p(nvars);
        p.add_term(a, c);
        return p;
    }
    static BasicPolynomial monomial(const MultiIndex& a, T c) {
        BasicPolynomial p(static_cast<int>(a.size()));
        p.add_term(a, c);
        return p;
    }

    int nvars() const { return nvars_; }
    const Terms& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }
    std::size_t size() const { return terms_.size(); }

    void add_term(const MultiIndex& a, T c) {
        if (static_cast<int>(a.size()) != nvars_) throw std::invalid_argument("polynomial: multi-index arity mismatch");
        for (int e : a)
            if (e < 0) throw std::invalid_argument("polynomial: negative exponent");
        if (c == T(0)) return;
        auto it = terms_.find(a);
        if (it == terms_.end()) {
            terms_.emplace(a, c);
        } else {
            it->second += c;
            if (it->second == T(0)) terms_.erase(it);
        }
    }

    T coeff(const MultiIndex& a) const {
        auto it = terms_.find(a);
        return it == terms_.end() ? T(0) : it->second;
    }
    void set_coeff(const MultiIndex& a, T c) {
        terms_.erase(a);
        add_term(a, c);
    }

    int degree() const {
        int d = -1;
        for (const auto& [a, c] : terms_) d = std::max(d, total_degree(a));
        return d;
    }
    int degree_in(int var) const {
        int d = -1;
        for (const auto& [a, c] : terms_) d = std::max(d, a[var]);
        return d;
    }

    template <class U>
    U eval(const std::vector<U>& x) const {
        if (static_cast<int>(x.size()) != nvars_) throw std::invalid_argument("polynomial: evaluation point arity mismatch");
        U s = U(0);
        for (const auto& [a, c] : terms_) {
            U t = U(c);
            for (int i = 0; i < nvars_; ++i)
                for (int k = 0; k < a[i]; ++k) t *= x[i];
            s += t;
        }
        return s;
    }

    BasicPolynomial diff(int var) const {
        BasicPolynomial r(nvars_);
        for (const auto& [a, c] : terms_) {
            if (a[var] == 0) continue;
            MultiIndex b = a;
            b[var] -= 1;
            r.add_term(b, c * T(a[var]));
        }
        return r;
    }

    BasicPolynomial& operator+=(const BasicPolynomial& o) {
        check_arity(o);
        for (const auto& [a, c] : o.terms_) add_term(a, c);
        return *this;
    }
    BasicPolynomial& operator-=(const BasicPolynomial& o) {
        check_arity(o);
        for (const auto& [a, c] : o.terms_) add_term(a, -c);
        return *this;
    }
    BasicPolynomial& operator*=(T s) {
        if (s == T(0)) {
            terms_.clear();
            return *this;
        }
        for (auto& [a, c] : terms_) c *= s;
        return *this;
    }
    friend BasicPolynomial operator+(BasicPolynomial a, const BasicPolynomial& b) { return a += b; }
    friend BasicPolynomial operator-(BasicPolynomial a, const BasicPolynomial& b) { return a -= b; }
    friend BasicPolynomial operator*(BasicPolynomial a, T s) { return a *= s; }
    friend BasicPolynomial operator*(T s, BasicPolynomial a) { return a *= s; }
    BasicPolynomial operator-() const { return (*this) * T(-1); }

    friend BasicPolynomial operator*(const BasicPolynomial& p, const BasicPolynomial& q) {
        return p.mul_truncated(q, [](const MultiIndex&) { return true; });
    }

    /// Product keeping only monomials accepted by `keep`.
    template <class Keep>
    BasicPolynomial mul_truncated(const BasicPolynomial& q, Keep keep) const {
        check_arity(q);
        BasicPolynomial r(nvars_);
        MultiIndex s(nvars_);
        for (const auto& [a, c] : terms_)
            for (const auto& [b, d] : q.terms_) {
                for (int i = 0; i < nvars_; ++i) s[i] = a[i] + b[i];
                if (keep(s)) r.add_term(s, c * d);
            }
        return r;
    }

    /// Keeps only monomials accepted by `keep`.
    template <class Keep>
    BasicPolynomial filtered(Keep keep) const {
        BasicPolynomial r(nvars_);
        for (const auto& [a, c] : terms_)
            if (keep(a)) r.terms_.emplace(a, c);
        return r;
    }

    /// p(y) = this(y + shift), expanded exactly.
    BasicPolynomial shifted(const std::vector<T>& shift) const {
        if (static_cast<int>(shift.size()) != nvars_) throw std::invalid_argument("polynomial: shift arity mismatch");
        BasicPolynomial r = *this;
        for (int i = 0; i < nvars_; ++i) {
            if (shift[i] == T(0)) continue;
            BasicPolynomial lin = variable(nvars_, i) + constant(nvars_, shift[i]);
            BasicPolynomial acc(nvars_);
            for (const auto& [a, c] : r.terms_) {
                MultiIndex rest = a;
                int e = rest[i];
                rest[i] = 0;
                BasicPolynomial t = monomial(rest, c);
                for (int k = 0; k < e; ++k) t = t * lin;
                acc += t;
            }
            r = acc;
        }
        return r;
    }

    /// Re-indexes variables: variable i of this becomes variable map[i] of a polynomial in `new_nvars` variables.
    BasicPolynomial embed(int new_nvars, const std::vector<int>& map) const {
        if (static_cast<int>(map.size()) != nvars_) throw std::invalid_argument("polynomial: embed map arity mismatch");
        BasicPolynomial r(new_nvars);
        for (const auto& [a, c] : terms_) {
            MultiIndex b(new_nvars, 0);
            for (int i = 0; i < nvars_; ++i) b.at(map[i]) += a[i];
            r.add_term(b, c);
        }
        return r;
    }

    template <class U>
    BasicPolynomial<U> cast() const {
        BasicPolynomial<U> r(nvars_);
        for (const auto& [a, c] : terms_) r.add_term(a, U(c));
        return r;
    }

    bool operator==(const BasicPolynomial& o) const { return nvars_ == o.nvars_ && terms_ == o.terms_; }

private:
    void check_arity(const BasicPolynomial& o) const {
        if (o.nvars_ != nvars_) throw std::invalid_argument("polynomial: arity mismatch");
    }
    int nvars_ = 0;
    Terms terms_;
};

using Polynomial = BasicPolynomial<double>;

/// Flat evaluator for hot loops (SDE stepping, grid assembly).
class CompiledPolynomial {
public:
    CompiledPolynomial() = default;
    explicit CompiledPolynomial(const Polynomial& p) : nvars_(p.nvars()) {
        for (const auto& [a, c] : p.terms()) {
            coef_.push_back(c);
            exps_.insert(exps_.end(), a.begin(), a.end());
        }
    }
    double operator()(const double* x) const {
        double s = 0.0;
        const int* e = exps_.data();
        for (double c : coef_) {
            double t = c;
            for (int i = 0; i < nvars_; ++i, ++e)
                for (int k = 0; k < *e; ++k) t *= x[i];
            s += t;
        }
        return s;
    }
    int nvars() const { return nvars_; }

private:
    int nvars_ = 0;
    std::vector<double> coef_;
    std::vector<int> exps_;
};

std::string to_string(const Polynomial& p, const std::vector<std::string>& names = {});

}  // namespace kfp
