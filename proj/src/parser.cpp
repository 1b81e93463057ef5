#include <cctype>
#include <charconv>
#include <map>

#include "phs/expr.hpp"

// Recursive-descent parser for the expression language:
//
//   expr     := term (("+" | "-") term)*
//   term     := factor (("*" | "/") factor)*
//   factor   := "-" factor | base ("^" exponent)?
//   base     := number | ident | "(" expr ")" | func "(" expr ")"
//   func     := "sqrt" | "sin" | "cos" | "exp" | "log"
//   exponent := ["-"] integer | "(" ["-"] integer ("/" integer)? ")"
//
// Unary minus binds weaker than "^", so -x^2 reads as -(x^2). Only declared
// identifiers are accepted; all errors carry 1-based line/column positions.

namespace phs {

namespace {

enum class Tok { number, ident, plus, minus, star, slash, caret, lparen, rparen, end };

struct Token {
  Tok type;
  std::string text;
  int line;
  int col;
};

class Lexer {
 public:
  explicit Lexer(const std::string& s) : s_(s) {}

  Token next() {
    skip_space();
    int line = line_, col = col_;
    if (pos_ >= s_.size()) return {Tok::end, "", line, col};
    char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') return lex_number();
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') return lex_ident();
    advance();
    switch (c) {
      case '+': return {Tok::plus, "+", line, col};
      case '-': return {Tok::minus, "-", line, col};
      case '*': return {Tok::star, "*", line, col};
      case '/': return {Tok::slash, "/", line, col};
      case '^': return {Tok::caret, "^", line, col};
      case '(': return {Tok::lparen, "(", line, col};
      case ')': return {Tok::rparen, ")", line, col};
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", line, col);
    }
  }

 private:
  void advance() {
    if (s_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  void skip_space() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) advance();
  }

  Token lex_number() {
    int line = line_, col = col_;
    std::string text;
    bool saw_dot = false, saw_exp = false;
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (std::isdigit(static_cast<unsigned char>(c))) {
        text += c;
        advance();
      } else if (c == '.' && !saw_dot && !saw_exp) {
        saw_dot = true;
        text += c;
        advance();
      } else if ((c == 'e' || c == 'E') && !saw_exp && !text.empty() &&
                 std::isdigit(static_cast<unsigned char>(text.back()))) {
        saw_exp = true;
        text += c;
        advance();
        if (pos_ < s_.size() && (s_[pos_] == '+' || s_[pos_] == '-')) {
          text += s_[pos_];
          advance();
        }
        if (pos_ >= s_.size() || !std::isdigit(static_cast<unsigned char>(s_[pos_])))
          throw ParseError("malformed number literal '" + text + "'", line, col);
      } else {
        break;
      }
    }
    if (text == "." || text.empty())
      throw ParseError("malformed number literal", line, col);
    return {Tok::number, text, line, col};
  }

  Token lex_ident() {
    int line = line_, col = col_;
    std::string text;
    while (pos_ < s_.size() &&
           (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) {
      text += s_[pos_];
      advance();
    }
    return {Tok::ident, text, line, col};
  }

  const std::string& s_;
  size_t pos_ = 0;
  int line_ = 1;
  int col_ = 1;
};

bool is_func_name(const std::string& s) {
  return s == "sqrt" || s == "sin" || s == "cos" || s == "exp" || s == "log";
}

class Parser {
 public:
  Parser(const std::string& text, const std::vector<VarId>& declared) : lex_(text) {
    for (const auto& v : declared) vars_.emplace(v.name, v);
    cur_ = lex_.next();
  }

  Expr parse() {
    Expr e = parse_expr();
    if (cur_.type != Tok::end)
      throw ParseError("unexpected trailing input '" + cur_.text + "'", cur_.line, cur_.col);
    return e;
  }

 private:
  void consume() { cur_ = lex_.next(); }

  void expect(Tok t, const std::string& what) {
    if (cur_.type != t)
      throw ParseError("expected " + what +
                           (cur_.type == Tok::end ? " before end of input"
                                                  : ", found '" + cur_.text + "'"),
                       cur_.line, cur_.col);
    consume();
  }

  Expr parse_expr() {
    Expr e = parse_term();
    while (cur_.type == Tok::plus || cur_.type == Tok::minus) {
      bool neg = cur_.type == Tok::minus;
      consume();
      Expr rhs = parse_term();
      e = neg ? e - rhs : e + rhs;
    }
    return e;
  }

  Expr parse_term() {
    Expr e = parse_factor();
    while (cur_.type == Tok::star || cur_.type == Tok::slash) {
      bool div = cur_.type == Tok::slash;
      consume();
      Expr rhs = parse_factor();
      e = div ? e / rhs : e * rhs;
    }
    return e;
  }

  Expr parse_factor() {
    if (cur_.type == Tok::minus) {
      consume();
      return -parse_factor();
    }
    Expr b = parse_base();
    if (cur_.type == Tok::caret) {
      consume();
      Rational e = parse_exponent();
      return pow(b, e);
    }
    return b;
  }

  Expr parse_base() {
    switch (cur_.type) {
      case Tok::number: {
        Expr e = number_to_expr(cur_);
        consume();
        return e;
      }
      case Tok::ident: {
        Token name = cur_;
        consume();
        if (is_func_name(name.text)) {
          expect(Tok::lparen, "'(' after function name '" + name.text + "'");
          Expr arg = parse_expr();
          expect(Tok::rparen, "')'");
          if (name.text == "sqrt") return sqrt(arg);
          if (name.text == "sin") return sin(arg);
          if (name.text == "cos") return cos(arg);
          if (name.text == "exp") return exp(arg);
          return log(arg);
        }
        auto it = vars_.find(name.text);
        if (it == vars_.end())
          throw ParseError("undeclared identifier '" + name.text + "'", name.line, name.col);
        return Expr::variable(it->second);
      }
      case Tok::lparen: {
        consume();
        Expr e = parse_expr();
        expect(Tok::rparen, "')'");
        return e;
      }
      default:
        throw ParseError(cur_.type == Tok::end
                             ? "unexpected end of input"
                             : "unexpected token '" + cur_.text + "'",
                         cur_.line, cur_.col);
    }
  }

  // Exponents are restricted to integers and rationals (p/q); a fractional
  // literal like 2.5 is rejected here by the grammar.
  Rational parse_exponent() {
    if (cur_.type == Tok::number || cur_.type == Tok::minus) {
      bool neg = cur_.type == Tok::minus;
      if (neg) consume();
      long long n = integer_token("exponent");
      return Rational{neg ? -n : n};
    }
    if (cur_.type == Tok::lparen) {
      consume();
      bool neg = false;
      if (cur_.type == Tok::minus) {
        neg = true;
        consume();
      }
      long long num = integer_token("exponent numerator");
      long long den = 1;
      if (cur_.type == Tok::slash) {
        consume();
        den = integer_token("exponent denominator");
      }
      expect(Tok::rparen, "')'");
      auto r = Rational::make(neg ? -num : num, den);
      if (!r) throw ParseError("exponent out of range", cur_.line, cur_.col);
      return *r;
    }
    throw ParseError("exponent must be an integer or (p/q)", cur_.line, cur_.col);
  }

  long long integer_token(const std::string& what) {
    if (cur_.type != Tok::number)
      throw ParseError(what + " must be an integer", cur_.line, cur_.col);
    for (char c : cur_.text)
      if (!std::isdigit(static_cast<unsigned char>(c)))
        throw ParseError(what + " must be an integer, found '" + cur_.text + "'", cur_.line,
                         cur_.col);
    long long v = 0;
    auto [p, ec] = std::from_chars(cur_.text.data(), cur_.text.data() + cur_.text.size(), v);
    if (ec != std::errc{} || p != cur_.text.data() + cur_.text.size())
      throw ParseError(what + " out of range '" + cur_.text + "'", cur_.line, cur_.col);
    consume();
    return v;
  }

  Expr number_to_expr(const Token& t) {
    bool integral = t.text.find_first_of(".eE") == std::string::npos;
    if (integral) {
      long long v = 0;
      auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), v);
      if (ec == std::errc{} && p == t.text.data() + t.text.size()) return Expr::constant(v);
      // Falls through to double for out-of-range integer literals.
    }
    double d = 0;
    auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), d);
    if (ec != std::errc{} || p != t.text.data() + t.text.size())
      throw ParseError("malformed number literal '" + t.text + "'", t.line, t.col);
    return Expr::constant(d);
  }

  Lexer lex_;
  Token cur_;
  std::map<std::string, VarId> vars_;
};

}  // namespace

Expr parse_expr(const std::string& text, const std::vector<VarId>& declared) {
  return Parser(text, declared).parse();
}

}  // namespace phs
