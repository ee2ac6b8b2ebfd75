// SPDX-License-Identifier: Apache-2.0
#include "bprune/rational.h"

#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace bprune {

namespace {

__int128 gcd_wide(__int128 a, __int128 b) {
    if (a < 0) a = -a;
    if (b < 0) b = -b;
    while (b != 0) {
        const __int128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

bool fits_i64(__int128 v) {
    return v >= std::numeric_limits<std::int64_t>::min() && v <= std::numeric_limits<std::int64_t>::max();
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) {
    *this = from_wide(num, den);
}

Rational Rational::from_wide(__int128 num, __int128 den) {
    if (den == 0) {
        throw std::domain_error("rational: zero denominator");
    }
    if (den < 0) {
        num = -num;
        den = -den;
    }
    const __int128 g = gcd_wide(num, den);
    if (g > 1) {
        num /= g;
        den /= g;
    }
    if (!fits_i64(num) || !fits_i64(den)) {
        throw std::overflow_error("rational: value does not fit in 64 bits");
    }
    Rational r;
    r.num_ = static_cast<std::int64_t>(num);
    r.den_ = static_cast<std::int64_t>(den);
    return r;
}

Rational Rational::parse(std::string_view text) {
    const auto bad = [&] { return std::invalid_argument("cannot parse rational '" + std::string(text) + "'"); };
    if (text.empty()) throw bad();

    if (const auto slash = text.find('/'); slash != std::string_view::npos) {
        const Rational a = parse(text.substr(0, slash));
        const Rational b = parse(text.substr(slash + 1));
        return a / b;
    }

    std::size_t pos = 0;
    bool negative = false;
    if (text[pos] == '+' || text[pos] == '-') {
        negative = text[pos] == '-';
        ++pos;
    }
    __int128 num = 0;
    __int128 den = 1;
    bool seen_digit = false;
    bool in_fraction = false;
    for (; pos < text.size(); ++pos) {
        const char c = text[pos];
        if (c >= '0' && c <= '9') {
            num = num * 10 + (c - '0');
            if (in_fraction) den *= 10;
            seen_digit = true;
            if (num > (static_cast<__int128>(1) << 100) || den > (static_cast<__int128>(1) << 100)) throw bad();
        } else if (c == '.' && !in_fraction) {
            in_fraction = true;
        } else if (c == 'e' || c == 'E') {
            break;
        } else {
            throw bad();
        }
    }
    if (!seen_digit) throw bad();
    if (pos < text.size()) {
        const std::string exp_str(text.substr(pos + 1));
        if (exp_str.empty()) throw bad();
        std::size_t used = 0;
        const int exponent = std::stoi(exp_str, &used);
        if (used != exp_str.size() || exponent > 18 || exponent < -18) throw bad();
        for (int i = 0; i < std::abs(exponent); ++i) {
            if (exponent > 0) {
                num *= 10;
            } else {
                den *= 10;
            }
        }
    }
    return from_wide(negative ? -num : num, den);
}

Rational Rational::from_double(double value, std::int64_t max_den) {
    if (!std::isfinite(value)) {
        throw std::domain_error("rational: non-finite value");
    }
    const double scaled = std::round(value * static_cast<double>(max_den));
    if (std::fabs(scaled) > 9.0e18) {
        throw std::overflow_error("rational: value too large");
    }
    return Rational(static_cast<std::int64_t>(scaled), max_den);
}

std::int64_t Rational::floor() const {
    std::int64_t q = num_ / den_;
    if ((num_ % den_ != 0) && (num_ < 0)) --q;
    return q;
}

std::string Rational::str() const {
    if (den_ == 1) return std::to_string(num_);
    return std::to_string(num_) + "/" + std::to_string(den_);
}

Rational operator+(const Rational& a, const Rational& b) {
    return Rational::from_wide(static_cast<__int128>(a.num_) * b.den_ + static_cast<__int128>(b.num_) * a.den_,
                               static_cast<__int128>(a.den_) * b.den_);
}

Rational operator-(const Rational& a, const Rational& b) {
    return a + (-b);
}

Rational operator*(const Rational& a, const Rational& b) {
    return Rational::from_wide(static_cast<__int128>(a.num_) * b.num_, static_cast<__int128>(a.den_) * b.den_);
}

Rational operator/(const Rational& a, const Rational& b) {
    return Rational::from_wide(static_cast<__int128>(a.num_) * b.den_, static_cast<__int128>(a.den_) * b.num_);
}

std::strong_ordering operator<=>(const Rational& a, const Rational& b) {
    const __int128 lhs = static_cast<__int128>(a.num_) * b.den_;
    const __int128 rhs = static_cast<__int128>(b.num_) * a.den_;
    if (lhs < rhs) return std::strong_ordering::less;
    if (lhs > rhs) return std::strong_ordering::greater;
    return std::strong_ordering::equal;
}

std::ostream& operator<<(std::ostream& os, const Rational& r) {
    return os << r.str();
}

std::int64_t lcm_checked(std::int64_t a, std::int64_t b) {
    const __int128 l = static_cast<__int128>(a / std::gcd(a, b)) * b;
    if (!fits_i64(l)) throw std::overflow_error("lcm overflow");
    return static_cast<std::int64_t>(l);
}

}  // namespace bprune
