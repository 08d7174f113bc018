#include "gpmm/kernel_dsl.hpp"

#include "gpmm/landmarks.hpp"
#include "gpmm/regression.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace gpmm {

bool KernelExpr::operator==(const KernelExpr& other) const {
    if (kind != other.kind) return false;
    switch (kind) {
        case Kind::Number:
            return number == other.number;
        case Kind::String:
            return text == other.text;
        case Kind::Call:
            return text == other.text && args == other.args;
    }
    return false;
}

// ---------------------------------------------------------------------------
// Parser

namespace {

struct Token {
    enum class Type { Ident, Number, String, LParen, RParen, Comma, End };
    Type type;
    std::string text;
    double number = 0.0;
    int line = 1, col = 1;
};

class Lexer {
public:
    explicit Lexer(const std::string& src) : src_(src) {}

    Token next() {
        skip_space();
        Token tok;
        tok.line = line_;
        tok.col = col_;
        if (pos_ >= src_.size()) {
            tok.type = Token::Type::End;
            return tok;
        }
        const char ch = src_[pos_];
        if (ch == '(') return simple(Token::Type::LParen);
        if (ch == ')') return simple(Token::Type::RParen);
        if (ch == ',') return simple(Token::Type::Comma);
        if (ch == '"') return string_token();
        if (std::isalpha(static_cast<unsigned char>(ch)) || ch == '_') return ident_token();
        if (std::isdigit(static_cast<unsigned char>(ch)) || ch == '-' || ch == '+' || ch == '.')
            return number_token();
        fail("unexpected character '" + std::string(1, ch) + "'", line_, col_);
    }

    [[noreturn]] static void fail(const std::string& msg, int line, int col) {
        throw UsageError("syntax error at line " + std::to_string(line) + ", column " +
                         std::to_string(col) + ": " + msg);
    }

private:
    void skip_space() {
        while (pos_ < src_.size()) {
            const char ch = src_[pos_];
            if (ch == '#') {  // comment to end of line
                while (pos_ < src_.size() && src_[pos_] != '\n') advance();
            } else if (std::isspace(static_cast<unsigned char>(ch))) {
                advance();
            } else {
                break;
            }
        }
    }
    void advance() {
        if (src_[pos_] == '\n') {
            ++line_;
            col_ = 1;
        } else {
            ++col_;
        }
        ++pos_;
    }
    Token simple(Token::Type type) {
        Token tok{type, std::string(1, src_[pos_]), 0.0, line_, col_};
        advance();
        return tok;
    }
    Token ident_token() {
        Token tok{Token::Type::Ident, "", 0.0, line_, col_};
        while (pos_ < src_.size() &&
               (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
            tok.text += src_[pos_];
            advance();
        }
        return tok;
    }
    Token number_token() {
        Token tok{Token::Type::Number, "", 0.0, line_, col_};
        const std::size_t start = pos_;
        while (pos_ < src_.size() &&
               (std::isdigit(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '.' ||
                src_[pos_] == '-' || src_[pos_] == '+' || src_[pos_] == 'e' || src_[pos_] == 'E')) {
            // sign only at the start or right after an exponent marker
            if ((src_[pos_] == '-' || src_[pos_] == '+') && pos_ != start &&
                !(src_[pos_ - 1] == 'e' || src_[pos_ - 1] == 'E'))
                break;
            tok.text += src_[pos_];
            advance();
        }
        const auto res =
            std::from_chars(tok.text.data(), tok.text.data() + tok.text.size(), tok.number);
        if (res.ec != std::errc() || res.ptr != tok.text.data() + tok.text.size())
            fail("malformed number '" + tok.text + "'", tok.line, tok.col);
        return tok;
    }
    Token string_token() {
        Token tok{Token::Type::String, "", 0.0, line_, col_};
        advance();  // opening quote
        while (pos_ < src_.size() && src_[pos_] != '"') {
            tok.text += src_[pos_];
            advance();
        }
        if (pos_ >= src_.size()) fail("unterminated string", tok.line, tok.col);
        advance();  // closing quote
        return tok;
    }

    const std::string& src_;
    std::size_t pos_ = 0;
    int line_ = 1, col_ = 1;
};

class Parser {
public:
    explicit Parser(const std::string& src) : lexer_(src) { tok_ = lexer_.next(); }

    KernelExpr parse() {
        KernelExpr expr = expression();
        if (tok_.type != Token::Type::End)
            Lexer::fail("trailing input after expression", tok_.line, tok_.col);
        return expr;
    }

private:
    KernelExpr expression() {
        KernelExpr node;
        node.line = tok_.line;
        node.col = tok_.col;
        switch (tok_.type) {
            case Token::Type::Number:
                node.kind = KernelExpr::Kind::Number;
                node.number = tok_.number;
                consume();
                return node;
            case Token::Type::String:
                node.kind = KernelExpr::Kind::String;
                node.text = tok_.text;
                consume();
                return node;
            case Token::Type::Ident: {
                node.kind = KernelExpr::Kind::Call;
                node.text = tok_.text;
                consume();
                expect(Token::Type::LParen, "expected '(' after identifier");
                if (tok_.type != Token::Type::RParen) {
                    node.args.push_back(expression());
                    while (tok_.type == Token::Type::Comma) {
                        consume();
                        node.args.push_back(expression());
                    }
                }
                expect(Token::Type::RParen, "expected ')' or ','");
                return node;
            }
            default:
                Lexer::fail("expected expression", tok_.line, tok_.col);
        }
    }

    void expect(Token::Type type, const std::string& msg) {
        if (tok_.type != type) Lexer::fail(msg, tok_.line, tok_.col);
        consume();
    }
    void consume() { tok_ = lexer_.next(); }

    Lexer lexer_;
    Token tok_;
};

std::string fmt_number(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

KernelExpr parse_kernel(const std::string& text) { return Parser(text).parse(); }

std::string print_kernel(const KernelExpr& expr) {
    switch (expr.kind) {
        case KernelExpr::Kind::Number:
            return fmt_number(expr.number);
        case KernelExpr::Kind::String:
            return '"' + expr.text + '"';
        case KernelExpr::Kind::Call: {
            std::string out = expr.text + "(";
            for (std::size_t i = 0; i < expr.args.size(); ++i) {
                if (i) out += ", ";
                out += print_kernel(expr.args[i]);
            }
            out += ")";
            return out;
        }
    }
    return {};
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

struct Value {
    enum class Type { Number, String, Scalar, Weight, Matrix };
    Type type = Type::Number;
    double number = 0.0;
    std::string str;
    ScalarKernelPtr scalar;
    WeightFunction weight;
    MatrixKernelPtr matrix;
    MeanFunction mean;  // optional, Matrix values only
};

[[noreturn]] void eval_fail(const KernelExpr& at, const std::string& msg) {
    throw UsageError("at line " + std::to_string(at.line) + ", column " + std::to_string(at.col) +
                     ": " + msg);
}

class Evaluator {
public:
    explicit Evaluator(std::filesystem::path base_dir) : base_dir_(std::move(base_dir)) {}

    Value eval(const KernelExpr& expr) {
        switch (expr.kind) {
            case KernelExpr::Kind::Number: {
                Value v;
                v.type = Value::Type::Number;
                v.number = expr.number;
                return v;
            }
            case KernelExpr::Kind::String: {
                Value v;
                v.type = Value::Type::String;
                v.str = expr.text;
                return v;
            }
            case KernelExpr::Kind::Call:
                return call(expr);
        }
        throw std::logic_error("unreachable");
    }

private:
    Value call(const KernelExpr& expr) {
        const std::string& name = expr.text;
        std::vector<Value> args;
        args.reserve(expr.args.size());
        for (const auto& a : expr.args) args.push_back(eval(a));

        auto arity = [&](std::size_t n) {
            if (args.size() != n)
                eval_fail(expr, name + " expects " + std::to_string(n) + " argument(s), got " +
                                    std::to_string(args.size()));
        };
        auto num = [&](std::size_t i) -> double {
            if (args[i].type != Value::Type::Number)
                eval_fail(expr.args[i], name + ": argument " + std::to_string(i + 1) +
                                            " must be a number");
            return args[i].number;
        };
        auto str = [&](std::size_t i) -> const std::string& {
            if (args[i].type != Value::Type::String)
                eval_fail(expr.args[i], name + ": argument " + std::to_string(i + 1) +
                                            " must be a string");
            return args[i].str;
        };
        auto mat = [&](std::size_t i) -> Value& {
            if (args[i].type != Value::Type::Matrix)
                eval_fail(expr.args[i], name + ": argument " + std::to_string(i + 1) +
                                            " must be a matrix kernel");
            return args[i];
        };
        auto wgt = [&](std::size_t i) -> WeightFunction {
            if (args[i].type != Value::Type::Weight)
                eval_fail(expr.args[i], name + ": argument " + std::to_string(i + 1) +
                                            " must be a weight function");
            return args[i].weight;
        };
        auto guard = [&](auto&& fn) -> Value {
            try {
                return fn();
            } catch (const UsageError& e) {
                eval_fail(expr, e.what());
            }
        };

        if (name == "gauss") {
            arity(2);
            return guard([&] { return matrix_value(gauss_kernel(num(0), num(1))); });
        }
        if (name == "sgauss") {
            arity(1);
            return guard([&] { return scalar_value(scalar_gauss(num(0))); });
        }
        if (name == "sconst") {
            arity(1);
            return scalar_value(scalar_const(num(0)));
        }
        if (name == "diag") {
            arity(10);
            Matrix3 A;
            for (int i = 0; i < 9; ++i) A(i / 3, i % 3) = num(i);
            if (args[9].type != Value::Type::Scalar)
                eval_fail(expr, "diag: last argument must be a scalar kernel");
            return guard([&] { return matrix_value(diag_kernel(A, args[9].scalar)); });
        }
        if (name == "sum") {
            if (args.empty()) eval_fail(expr, "sum needs at least one operand");
            std::vector<MatrixKernelPtr> terms;
            std::vector<MeanFunction> means;
            for (std::size_t i = 0; i < args.size(); ++i) {
                terms.push_back(mat(i).matrix);
                if (args[i].mean) means.push_back(args[i].mean);
            }
            return matrix_value(sum_kernel(std::move(terms)), combine_means(means));
        }
        if (name == "scale") {
            arity(2);
            return guard(
                [&] { return matrix_value(scale_kernel(num(0), mat(1).matrix), mat(1).mean); });
        }
        if (name == "product") {
            arity(2);
            std::vector<MeanFunction> means;
            if (mat(0).mean) means.push_back(args[0].mean);
            if (mat(1).mean) means.push_back(args[1].mean);
            return matrix_value(product_kernel(args[0].matrix, args[1].matrix),
                                combine_means(means));
        }
        if (name == "anisotropic") {
            arity(13);
            Matrix3 R;
            for (int i = 0; i < 9; ++i) R(i / 3, i % 3) = num(i);
            const Vector3 S(num(9), num(10), num(11));
            return guard(
                [&] { return matrix_value(anisotropic_kernel(R, S, mat(12).matrix), mat(12).mean); });
        }
        if (name == "multiscale") {
            arity(3);
            const double levels = num(2);
            if (levels < 1.0 || levels != std::floor(levels))
                eval_fail(expr.args[2], "multiscale: levels must be a positive integer");
            return guard([&] {
                return matrix_value(multiscale_kernel(num(0), num(1), static_cast<int>(levels)));
            });
        }
        if (name == "localize") {
            arity(2);
            return matrix_value(localize_kernel(wgt(0), mat(1).matrix), mat(1).mean);
        }
        if (name == "spatially_varying") {
            if (args.size() < 2 || args.size() % 2 != 0)
                eval_fail(expr, "spatially_varying expects weight/kernel pairs");
            std::vector<KernelRegion> regions;
            std::vector<MeanFunction> means;
            for (std::size_t i = 0; i < args.size(); i += 2) {
                regions.push_back(KernelRegion{wgt(i), mat(i + 1).matrix});
                if (args[i + 1].mean) means.push_back(args[i + 1].mean);
            }
            return matrix_value(spatially_varying_kernel(std::move(regions)),
                                combine_means(means));
        }
        if (name == "wconst") {
            arity(1);
            return weight_value(weight_const(num(0)));
        }
        if (name == "wplane") {
            arity(5);
            return weight_value(weight_plane(Vector3(num(0), num(1), num(2)), num(3), num(4)));
        }
        if (name == "winv") {
            arity(1);
            return weight_value(weight_complement(wgt(0)));
        }
        if (name == "empirical") {
            arity(1);
            return guard([&] {
                const auto set = load_deformation_set(resolve(str(0)));
                return matrix_value(empirical_kernel(set), empirical_mean(set));
            });
        }
        if (name == "posterior") {
            arity(4);
            Value& inner = mat(0);
            const double sigma2 = num(3);
            return guard([&] {
                const auto ref = read_landmarks(resolve(str(1)));
                const auto tgt = read_landmarks(resolve(str(2)));
                const auto matched = match_landmarks(ref, tgt);
                std::vector<Point3> ref_pts, tgt_pts;
                for (const auto& [a, b] : matched) {
                    ref_pts.push_back(a.point);
                    tgt_pts.push_back(b.point);
                }
                const auto obs = observations_from_landmarks(ref_pts, tgt_pts, sigma2);
                const auto post = posterior_full(inner.mean, inner.matrix, obs);
                return matrix_value(post.kernel, post.mean);
            });
        }
        eval_fail(expr, "unknown identifier '" + name + "'");
    }

    static Value matrix_value(MatrixKernelPtr k, MeanFunction mean = {}) {
        Value v;
        v.type = Value::Type::Matrix;
        v.matrix = std::move(k);
        v.mean = std::move(mean);
        return v;
    }
    static Value scalar_value(ScalarKernelPtr k) {
        Value v;
        v.type = Value::Type::Scalar;
        v.scalar = std::move(k);
        return v;
    }
    static Value weight_value(WeightFunction w) {
        Value v;
        v.type = Value::Type::Weight;
        v.weight = std::move(w);
        return v;
    }
    static MeanFunction combine_means(std::vector<MeanFunction> means) {
        if (means.empty()) return {};
        if (means.size() == 1) return means[0];
        return [means = std::move(means)](const Point3& x) {
            Vector3 m = Vector3::Zero();
            for (const auto& f : means) m += f(x);
            return m;
        };
    }
    std::string resolve(const std::string& path) const {
        const std::filesystem::path p(path);
        return p.is_absolute() ? p.string() : (base_dir_ / p).string();
    }

    std::filesystem::path base_dir_;
};

}  // namespace

GpExprModel evaluate_kernel_expr(const KernelExpr& expr, const std::string& base_dir) {
    Evaluator evaluator(base_dir);
    Value v = evaluator.eval(expr);
    if (v.type != Value::Type::Matrix)
        throw UsageError("kernel expression must evaluate to a matrix kernel");
    return GpExprModel{std::move(v.mean), std::move(v.matrix)};
}

GpExprModel load_kernel_file(const std::string& kdsl_path) {
    std::ifstream in(kdsl_path);
    if (!in) throw UsageError("cannot open kernel file: " + kdsl_path);
    std::stringstream buffer;
    buffer << in.rdbuf();
    const KernelExpr expr = parse_kernel(buffer.str());
    return evaluate_kernel_expr(expr, std::filesystem::path(kdsl_path).parent_path().string());
}

}  // namespace gpmm
