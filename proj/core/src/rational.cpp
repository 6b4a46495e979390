#include "abstrakt/rational.hpp"

#include "abstrakt/error.hpp"

#include <cctype>

namespace abstrakt {

namespace {

bool all_digits(const std::string& s) {
    if (s.empty()) return false;
    for (char c : s)
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    return true;
}

[[noreturn]] void bad(const std::string& text) {
    throw Error(ErrorKind::ParseError, "not a rational or decimal literal: '" + text + "'");
}

}  // namespace

Rational parse_rational(const std::string& raw) {
    std::string text;
    for (char c : raw)
        if (!std::isspace(static_cast<unsigned char>(c))) text += c;
    if (text.empty()) bad(raw);

    bool neg = false;
    std::string body = text;
    if (body[0] == '-' || body[0] == '+') {
        neg = body[0] == '-';
        body = body.substr(1);
    }

    Rational q;
    auto slash = body.find('/');
    auto dot = body.find('.');
    if (slash != std::string::npos) {
        std::string num = body.substr(0, slash), den = body.substr(slash + 1);
        if (!all_digits(num) || !all_digits(den)) bad(raw);
        mpz_class d(den, 10);
        if (d == 0) bad(raw);
        q = Rational(mpz_class(num, 10), d);
    } else if (dot != std::string::npos) {
        std::string ip = body.substr(0, dot), fp = body.substr(dot + 1);
        if (ip.empty()) ip = "0";
        if (fp.empty() || !all_digits(ip) || !all_digits(fp)) bad(raw);
        mpz_class den;
        mpz_ui_pow_ui(den.get_mpz_t(), 10, fp.size());
        q = Rational(mpz_class(ip + fp, 10), den);
    } else {
        if (!all_digits(body)) bad(raw);
        q = Rational(mpz_class(body, 10));
    }
    q.canonicalize();
    return neg ? Rational(-q) : q;
}

std::string to_string(const Rational& q) {
    if (q.get_den() == 1) return q.get_num().get_str();
    return q.get_str();
}

std::string to_decimal(const Rational& q, int digits) {
    mpz_class scale;
    mpz_ui_pow_ui(scale.get_mpz_t(), 10, static_cast<unsigned long>(digits));
    Rational scaled = abs(q) * scale + Rational(1, 2);
    mpz_class n = scaled.get_num() / scaled.get_den();  // floor, value is non-negative
    std::string s = n.get_str();
    if (static_cast<int>(s.size()) <= digits) s.insert(0, digits + 1 - s.size(), '0');
    std::string ip = s.substr(0, s.size() - digits), fp = s.substr(s.size() - digits);
    while (!fp.empty() && fp.back() == '0') fp.pop_back();
    std::string out = ip;
    if (!fp.empty()) out += "." + fp;
    if (q < 0 && out != "0") out = "-" + out;
    return out;
}

}  // namespace abstrakt
