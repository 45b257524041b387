#pragma once

// File formats of the command-line tool: key = value configs, the
// grouped CSV data layout, null specifications and a JSON writer with
// sorted keys and 17 significant digits.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "eivtest/montecarlo.hpp"

namespace eiv::io {

using Json = nlohmann::json;

// Malformed input: bad syntax, unknown keys, schema violations. `line`
// and `column` are 1-based, 0 when not applicable.
class InputError : public Error {
public:
    InputError(const std::string& source, int line, int column, const std::string& msg)
        : Error(format(source, line, column, msg)), line_(line), column_(column) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    static std::string format(const std::string& source, int line, int column, const std::string& msg) {
        std::string out = source;
        if (line > 0) out += ":" + std::to_string(line);
        if (column > 0) out += ":" + std::to_string(column);
        return out.empty() ? msg : out + ": " + msg;
    }

    int line_;
    int column_;
};

inline std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = s.find(sep, start);
        out.push_back(std::string(s.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

// Locale-independent; the whole token must be consumed.
inline std::optional<double> parse_double(std::string_view s) {
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    const char* first = t.data();
    if (*first == '+') ++first;
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(first, t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

inline std::optional<long long> parse_int(std::string_view s) {
    const std::string t = trim(s);
    if (t.empty()) return std::nullopt;
    long long v = 0;
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size()) return std::nullopt;
    return v;
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError(path, 0, 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// 64-bit FNV-1a, as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// key = value files

class KeyValues {
public:
    static KeyValues parse(std::string_view text, std::string source) {
        KeyValues kv;
        kv.source_ = std::move(source);
        int line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            std::string line = raw;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            if (trim(line).empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw InputError(kv.source_, line_no, 1, "expected key = value");
            const std::string key = trim(std::string_view(line).substr(0, eq));
            const std::string value = trim(std::string_view(line).substr(eq + 1));
            if (key.empty()) throw InputError(kv.source_, line_no, 1, "empty key");
            if (kv.entries_.count(key)) throw InputError(kv.source_, line_no, 1, "duplicate key '" + key + "'");
            kv.entries_[key] = {value, line_no, static_cast<int>(eq + 2)};
        }
        return kv;
    }

    static KeyValues load(const std::string& path) { return parse(read_file(path), path); }

    const std::string& source() const noexcept { return source_; }
    bool has(const std::string& key) const { return entries_.count(key) > 0; }

    std::string string(const std::string& key) const { return entry(key).value; }
    std::optional<std::string> optional_string(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return string(key);
    }

    double number(const std::string& key) const {
        const Entry& e = entry(key);
        const auto v = parse_double(e.value);
        if (!v || !std::isfinite(*v)) fail(key, "'" + e.value + "' is not a finite number");
        return *v;
    }
    std::optional<double> optional_number(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return number(key);
    }

    long long integer(const std::string& key) const {
        const Entry& e = entry(key);
        const auto v = parse_int(e.value);
        if (!v) fail(key, "'" + e.value + "' is not an integer");
        return *v;
    }

    std::vector<double> numbers(const std::string& key) const {
        std::vector<double> out;
        for (const auto& tok : split(entry(key).value, ',')) {
            const auto v = parse_double(tok);
            if (!v || !std::isfinite(*v)) fail(key, "'" + trim(tok) + "' is not a finite number");
            out.push_back(*v);
        }
        return out;
    }

    std::vector<long long> integers(const std::string& key) const {
        std::vector<long long> out;
        for (const auto& tok : split(entry(key).value, ',')) {
            const auto v = parse_int(tok);
            if (!v) fail(key, "'" + trim(tok) + "' is not an integer");
            out.push_back(*v);
        }
        return out;
    }

    [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) throw InputError(source_, 0, 0, key + ": " + msg);
        throw InputError(source_, it->second.line, it->second.column, key + ": " + msg);
    }

    // Rejects keys outside `allowed` (typos would otherwise be silently ignored).
    void require_only(const std::set<std::string>& allowed) const {
        for (const auto& [key, e] : entries_) {
            if (!allowed.count(key)) throw InputError(source_, e.line, 1, "unknown key '" + key + "'");
        }
    }

private:
    struct Entry {
        std::string value;
        int line = 0;
        int column = 0;
    };

    const Entry& entry(const std::string& key) const {
        const auto it = entries_.find(key);
        if (it == entries_.end()) throw InputError(source_, 0, 0, "missing key '" + key + "'");
        return it->second;
    }

    std::string source_;
    std::map<std::string, Entry> entries_;
};

// ---------------------------------------------------------------------------
// model configuration

struct ModelConfig {
    CaseKind kind = CaseKind::LambdaXKnown;
    int l = 1;
    int p = 1;
    // Flattened per-group constants: p values (lambda_x) or p * l values.
    std::vector<double> known;
    Family family = Family::Normal;
    double nu = 0.0;

    DensityGenerator generator() const {
        return family == Family::Normal ? DensityGenerator::normal(l + 1) : DensityGenerator::student_t(l + 1, nu);
    }

    ModelSpec spec(std::vector<int> sizes) const {
        switch (kind) {
            case CaseKind::LambdaXKnown: return ModelSpec(l, std::move(sizes), LambdaXKnown{known});
            case CaseKind::LambdaEKnown: return ModelSpec(l, std::move(sizes), LambdaEKnown{per_group()});
            case CaseKind::InterceptKnown: return ModelSpec(l, std::move(sizes), InterceptKnown{per_group()});
        }
        throw DomainError("unknown case");
    }

private:
    std::vector<std::vector<double>> per_group() const {
        std::vector<std::vector<double>> out(p);
        for (int k = 0; k < p; ++k) out[k].assign(known.begin() + k * l, known.begin() + (k + 1) * l);
        return out;
    }
};

inline const std::set<std::string> kModelKeys{"case", "l", "p", "lambda_x", "lambda_e", "intercept", "family", "nu"};

inline const char* known_key(CaseKind kind) {
    switch (kind) {
        case CaseKind::LambdaXKnown: return "lambda_x";
        case CaseKind::LambdaEKnown: return "lambda_e";
        case CaseKind::InterceptKnown: return "intercept";
    }
    return "";
}

inline CaseKind parse_case(const KeyValues& kv) {
    const std::string c = kv.string("case");
    if (c == "lambda_x") return CaseKind::LambdaXKnown;
    if (c == "lambda_e") return CaseKind::LambdaEKnown;
    if (c == "intercept") return CaseKind::InterceptKnown;
    kv.fail("case", "expected lambda_x, lambda_e or intercept, got '" + c + "'");
}

// A single value is broadcast; otherwise one value per group (lambda_x)
// or l values shared by all groups or p * l values (lambda_e, intercept).
inline std::vector<double> expand_known(const KeyValues& kv, CaseKind kind, int l, int p,
                                        std::optional<std::vector<double>> fallback = std::nullopt) {
    const std::string key = known_key(kind);
    std::vector<double> v;
    if (kv.has(key)) {
        v = kv.numbers(key);
    } else if (fallback) {
        v = *fallback;
    } else {
        kv.fail(key, "missing key '" + key + "' required by case = " + to_string(kind));
    }
    const auto width = static_cast<std::size_t>(kind == CaseKind::LambdaXKnown ? 1 : l);
    const auto total = width * static_cast<std::size_t>(p);
    std::vector<double> out;
    if (v.size() == 1) {
        out.assign(total, v[0]);
    } else if (v.size() == width) {
        for (int k = 0; k < p; ++k) out.insert(out.end(), v.begin(), v.end());
    } else if (v.size() == total) {
        out = v;
    } else {
        kv.fail(key, "expected 1, " + std::to_string(width) + " or " + std::to_string(total) + " values, got " +
                         std::to_string(v.size()));
    }
    if (kind != CaseKind::InterceptKnown) {
        for (double x : out) {
            if (!(x > 0.0)) kv.fail(key, "values must be positive");
        }
    }
    return out;
}

inline ModelConfig parse_model_config(const KeyValues& kv, std::optional<std::vector<double>> known_fallback = {}) {
    ModelConfig cfg;
    cfg.kind = parse_case(kv);
    const long long l = kv.has("l") ? kv.integer("l") : 1;
    if (l < 1 || l + 1 > kMaxObsDim) kv.fail("l", "must be between 1 and " + std::to_string(kMaxObsDim - 1));
    cfg.l = static_cast<int>(l);
    const long long p = kv.integer("p");
    if (p < 1 || p > 10000) kv.fail("p", "must be between 1 and 10000");
    cfg.p = static_cast<int>(p);
    for (CaseKind other : {CaseKind::LambdaXKnown, CaseKind::LambdaEKnown, CaseKind::InterceptKnown}) {
        if (other != cfg.kind && kv.has(known_key(other))) {
            kv.fail(known_key(other), "not used by case = " + to_string(cfg.kind));
        }
    }
    cfg.known = expand_known(kv, cfg.kind, cfg.l, cfg.p, std::move(known_fallback));
    const std::string fam = kv.has("family") ? kv.string("family") : "normal";
    if (fam == "normal") {
        cfg.family = Family::Normal;
        if (kv.has("nu")) kv.fail("nu", "only used with family = student_t");
    } else if (fam == "student_t") {
        cfg.family = Family::StudentT;
        cfg.nu = kv.number("nu");
        if (!(cfg.nu > 0.0)) kv.fail("nu", "must be positive");
    } else {
        kv.fail("family", "expected normal or student_t, got '" + fam + "'");
    }
    return cfg;
}

inline std::optional<RhoExponent> parse_rho_exponent(std::string_view text) {
    for (RhoExponent e : {RhoExponent::QHalf, RhoExponent::PHalf, RhoExponent::MHalf}) {
        if (trim(text) == to_string(e)) return e;
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// CSV data: header group,y1,...,yl,x; group labels 1..p

inline constexpr int kMinGroupSize = 3;

inline Dataset parse_csv(std::string_view text, const std::string& source, int l, int p) {
    std::vector<std::string> expected{"group"};
    for (int i = 1; i <= l; ++i) expected.push_back("y" + std::to_string(i));
    expected.push_back("x");

    const auto lines = split(text, '\n');
    std::size_t idx = 0;
    auto next_nonblank = [&]() -> std::optional<std::size_t> {
        while (idx < lines.size() && trim(lines[idx]).empty()) ++idx;
        if (idx == lines.size()) return std::nullopt;
        return idx++;
    };

    const auto header_at = next_nonblank();
    if (!header_at) throw InputError(source, 0, 0, "empty file");
    std::string header_line = lines[*header_at];
    if (header_line.rfind("\xEF\xBB\xBF", 0) == 0) header_line.erase(0, 3);
    const auto header = split(header_line, ',');
    std::vector<int> column_of(expected.size(), -1);
    for (std::size_t c = 0; c < header.size(); ++c) {
        const std::string name = trim(header[c]);
        bool found = false;
        for (std::size_t e = 0; e < expected.size(); ++e) {
            if (name == expected[e]) {
                if (column_of[e] >= 0) {
                    throw InputError(source, static_cast<int>(*header_at) + 1, static_cast<int>(c) + 1,
                                     "duplicate column '" + name + "'");
                }
                column_of[e] = static_cast<int>(c);
                found = true;
            }
        }
        if (!found) {
            throw InputError(source, static_cast<int>(*header_at) + 1, static_cast<int>(c) + 1,
                             "unexpected column '" + name + "'");
        }
    }
    for (std::size_t e = 0; e < expected.size(); ++e) {
        if (column_of[e] < 0) throw InputError(source, static_cast<int>(*header_at) + 1, 0, "missing column '" + expected[e] + "'");
    }

    std::vector<std::vector<Vector>> rows(p);
    while (const auto at = next_nonblank()) {
        const int line_no = static_cast<int>(*at) + 1;
        const auto cells = split(lines[*at], ',');
        if (cells.size() != header.size()) {
            throw InputError(source, line_no, 0,
                             "expected " + std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
        }
        const int gcol = column_of[0];
        const auto g = parse_int(cells[gcol]);
        if (!g || *g < 1 || *g > p) {
            throw InputError(source, line_no, gcol + 1,
                             "group label '" + trim(cells[gcol]) + "' is not an integer in 1.." + std::to_string(p));
        }
        Vector z(l + 1);
        for (int i = 0; i <= l; ++i) {
            const int col = column_of[1 + i];
            const auto v = parse_double(cells[col]);
            if (!v || !std::isfinite(*v)) {
                throw InputError(source, line_no, col + 1, "'" + trim(cells[col]) + "' is not a finite number");
            }
            z[i] = *v;
        }
        rows[*g - 1].push_back(std::move(z));
    }

    Dataset data;
    for (int k = 0; k < p; ++k) {
        const int n = static_cast<int>(rows[k].size());
        if (n < kMinGroupSize) {
            throw InputError(source, 0, 0,
                             "group " + std::to_string(k + 1) + " too small: " + std::to_string(n) + " observations, need at least " +
                                 std::to_string(kMinGroupSize));
        }
        Matrix m(n, l + 1);
        for (int j = 0; j < n; ++j) m.row(j) = rows[k][j].transpose();
        data.groups.push_back(std::move(m));
    }
    return data;
}

inline Dataset load_csv(const std::string& path, int l, int p) { return parse_csv(read_file(path), path, l, p); }

inline std::string format_csv(const Dataset& data) {
    std::ostringstream out;
    const int l = static_cast<int>(data.groups.at(0).cols()) - 1;
    out << "group";
    for (int i = 1; i <= l; ++i) out << ",y" << i;
    out << ",x\n";
    char buf[32];
    for (int k = 0; k < data.p(); ++k) {
        for (Eigen::Index j = 0; j < data.groups[k].rows(); ++j) {
            out << k + 1;
            for (int c = 0; c <= l; ++c) {
                std::snprintf(buf, sizeof buf, "%.17g", data.groups[k](j, c));
                out << ',' << buf;
            }
            out << '\n';
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// coordinate names and null specifications

// "beta1@2": local coordinate name, '@', 1-based group.
inline std::string coordinate_name(const ModelSpec& spec, int flat) {
    return spec.layout().name(flat % spec.s()) + "@" + std::to_string(flat / spec.s() + 1);
}

inline int parse_coordinate(const ModelSpec& spec, std::string_view text) {
    const std::string t = trim(text);
    const auto at = t.find('@');
    if (at == std::string::npos) throw DomainError("coordinate '" + t + "' lacks '@group'");
    const auto local = spec.layout().find(trim(std::string_view(t).substr(0, at)));
    if (!local) throw DomainError("unknown coordinate '" + t.substr(0, at) + "' for case " + to_string(spec.kind()));
    const auto g = parse_int(std::string_view(t).substr(at + 1));
    if (!g || *g < 1 || *g > spec.p()) {
        throw DomainError("group in '" + t + "' must be an integer in 1.." + std::to_string(spec.p()));
    }
    return spec.flat_index(static_cast<int>(*g - 1), *local);
}

// Comma-separated name@group=value items, e.g. "beta1@1=0,beta1@2=0".
inline Hypothesis parse_null_spec(const ModelSpec& spec, std::string_view text) {
    std::vector<Constraint> cs;
    for (const auto& item : split(text, ',')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw DomainError("null item '" + trim(item) + "' lacks '=value'");
        const int index = parse_coordinate(spec, std::string_view(item).substr(0, eq));
        const auto v = parse_double(std::string_view(item).substr(eq + 1));
        if (!v || !std::isfinite(*v)) throw DomainError("null item '" + trim(item) + "' has no finite value");
        cs.push_back({index, *v});
    }
    Hypothesis h(std::move(cs));
    h.validate(spec);
    return h;
}

// ---------------------------------------------------------------------------
// simulation configuration: the model keys plus a grid of (q, n) cells

struct SimCell {
    int q = 0;
    int n = 0;
    SimConfig config;
};

struct SimPlan {
    ModelConfig model;
    std::vector<SimCell> cells;
    std::string name;
};

inline const std::set<std::string> kSimKeys{"name",     "case",     "l",          "p",          "lambda_x",  "lambda_e",
                                             "intercept", "family",  "nu",         "q",          "n",         "replications",
                                             "seed",     "levels",   "null_value", "beta_untested", "alpha", "mu_x",
                                             "sigma2_x", "sigma2_u", "sigma2_e", "rho_exponent"};

// Missing constants are derived from the truth (lambda_x = sigma2_x / sigma2_u,
// lambda_e = sigma2_e / sigma2_u, known intercept = alpha, default 0); the
// truth defaults to the reference values.
inline SimPlan parse_sim_config(const KeyValues& kv) {
    kv.require_only(kSimKeys);
    SimPlan plan;
    plan.name = kv.has("name") ? kv.string("name") : "simulation";
    const CaseKind kind = parse_case(kv);

    const bool icpt = kind == CaseKind::InterceptKnown;
    const double sigma2_x = kv.optional_number("sigma2_x").value_or(1.5);
    const double sigma2_u = kv.optional_number("sigma2_u").value_or(0.5);
    const double sigma2_e = kv.optional_number("sigma2_e").value_or(2.0);
    for (const char* key : {"sigma2_x", "sigma2_u", "sigma2_e"}) {
        if (kv.has(key) && !(kv.number(key) > 0.0)) kv.fail(key, "must be positive");
    }
    std::optional<std::vector<double>> derived;
    if (kind == CaseKind::LambdaXKnown) derived = std::vector<double>{sigma2_x / sigma2_u};
    if (kind == CaseKind::LambdaEKnown) derived = std::vector<double>{sigma2_e / sigma2_u};
    if (icpt) derived = std::vector<double>{kv.optional_number("alpha").value_or(0.0)};
    plan.model = parse_model_config(kv, derived);

    const double null_value = kv.optional_number("null_value").value_or(null_slope(kind));
    const double untested = kv.optional_number("beta_untested").value_or(null_value);
    const long long reps = kv.has("replications") ? kv.integer("replications") : 1000;
    if (reps < 1) kv.fail("replications", "must be positive");
    const long long seed = kv.has("seed") ? kv.integer("seed") : 1;
    if (seed < 0) kv.fail("seed", "must be non-negative");
    std::vector<double> levels{0.01, 0.05, 0.10};
    if (kv.has("levels")) {
        levels = kv.numbers("levels");
        for (double g : levels) {
            if (!(g > 0.0 && g < 1.0)) kv.fail("levels", "levels must lie in (0, 1)");
        }
    }

    TestOptions test;
    if (kv.has("rho_exponent")) {
        const auto e = parse_rho_exponent(kv.string("rho_exponent"));
        if (!e) kv.fail("rho_exponent", "expected q-half, p-half or m-half");
        test.exponent = *e;
    }

    const auto qs = kv.integers("q");
    const auto ns = kv.integers("n");
    for (auto q : qs) {
        if (q < 1 || q > plan.model.p) kv.fail("q", "must be between 1 and p = " + std::to_string(plan.model.p));
    }
    for (auto n : ns) {
        if (n < kMinGroupSize || n > 1000000) kv.fail("n", "group size must be at least " + std::to_string(kMinGroupSize));
    }

    for (auto n : ns) {
        for (auto q : qs) {
            ModelSpec spec = plan.model.spec(std::vector<int>(plan.model.p, static_cast<int>(n)));
            const ParamLayout& lay = spec.layout();
            ParamVector truth = ParamVector::zeros(spec);
            for (int k = 0; k < spec.p(); ++k) {
                auto at = [&](int i) -> double& { return truth[spec.flat_index(k, i)]; };
                for (int i = 0; i < spec.l(); ++i) at(i) = k < q ? null_value : untested;
                if (lay.alpha >= 0) at(lay.alpha) = kv.optional_number("alpha").value_or(0.5);
                at(lay.mu_x) = kv.optional_number("mu_x").value_or(icpt ? 5.0 : 0.5);
                if (lay.sigma2_x >= 0) at(lay.sigma2_x) = sigma2_x;
                at(lay.sigma2_u) = sigma2_u;
                if (lay.sigma2_e >= 0) {
                    for (int i = 0; i < spec.l(); ++i) at(lay.sigma2_e + i) = sigma2_e;
                }
            }
            std::vector<Constraint> cs;
            for (int k = 0; k < q; ++k) {
                for (int i = 0; i < spec.l(); ++i) cs.push_back({spec.flat_index(k, i), null_value});
            }
            SimConfig cfg{spec, plan.model.generator(), truth, Hypothesis(std::move(cs))};
            cfg.replications = static_cast<int>(reps);
            cfg.master_seed = static_cast<std::uint64_t>(seed);
            cfg.levels = levels;
            cfg.test = test;
            plan.cells.push_back({static_cast<int>(q), static_cast<int>(n), std::move(cfg)});
        }
    }
    return plan;
}

// ---------------------------------------------------------------------------
// JSON output

namespace detail {

inline void write_number(std::ostream& out, double v) {
    if (!std::isfinite(v)) {
        out << "null";
        return;
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out << buf;
}

inline void write_json(std::ostream& out, const Json& j, int indent, int depth) {
    const std::string pad(static_cast<std::size_t>(indent) * (depth + 1), ' ');
    const std::string close(static_cast<std::size_t>(indent) * depth, ' ');
    switch (j.type()) {
        case Json::value_t::object: {
            if (j.empty()) {
                out << "{}";
                return;
            }
            out << "{\n";
            bool first = true;
            for (auto it = j.begin(); it != j.end(); ++it) {
                if (!first) out << ",\n";
                first = false;
                out << pad << Json(it.key()).dump() << ": ";
                write_json(out, it.value(), indent, depth + 1);
            }
            out << "\n" << close << "}";
            return;
        }
        case Json::value_t::array: {
            if (j.empty()) {
                out << "[]";
                return;
            }
            out << "[\n";
            for (std::size_t i = 0; i < j.size(); ++i) {
                if (i) out << ",\n";
                out << pad;
                write_json(out, j[i], indent, depth + 1);
            }
            out << "\n" << close << "]";
            return;
        }
        case Json::value_t::number_float: write_number(out, j.get<double>()); return;
        default: out << j.dump(); return;
    }
}

}  // namespace detail

// Keys come out sorted (nlohmann::json objects are ordered maps).
inline std::string dump_json(const Json& j) {
    std::ostringstream out;
    detail::write_json(out, j, 2, 0);
    out << "\n";
    return out.str();
}

inline Json named_vector(const ModelSpec& spec, const ParamVector& theta) {
    Json out = Json::object();
    for (int i = 0; i < spec.m(); ++i) out[coordinate_name(spec, i)] = theta[i];
    return out;
}

inline Json fit_json(const LikelihoodContext& ctx, const FitResult& fit) {
    Json j;
    j["theta"] = named_vector(ctx.spec(), fit.theta);
    j["loglik"] = fit.loglik;
    j["converged"] = fit.converged;
    j["on_boundary"] = fit.on_boundary;
    j["iterations"] = fit.iterations;
    j["restarts_used"] = fit.restarts_used;
    j["grad_inf_norm"] = fit.grad_inf_norm;
    j["score_inf_norm"] = fit.score_inf_norm;
    try {
        const Matrix info = observed_info(ctx, fit.theta);
        const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(info, Eigen::EigenvaluesOnly).eigenvalues();
        Json e;
        e["min"] = ev.minCoeff();
        e["max"] = ev.maxCoeff();
        e["positive_definite"] = ev.minCoeff() > 0.0;
        e["condition"] = ev.minCoeff() > 0.0 ? ev.maxCoeff() / ev.minCoeff() : std::numeric_limits<double>::infinity();
        j["information_eigenvalues"] = e;
    } catch (const EvaluationError&) {
        j["information_eigenvalues"] = nullptr;
    }
    return j;
}

inline Json test_json(const ModelSpec& spec, const Hypothesis& h, const TestResult& t) {
    Json j;
    Json nul = Json::object();
    for (const auto& c : h.constraints()) nul[coordinate_name(spec, c.index)] = c.value;
    j["null"] = nul;
    j["q"] = t.q;
    j["lr"] = t.lr;
    j["lr_star"] = t.lr_star;
    j["lr_star_star"] = t.lr_star_star;
    j["rho"] = t.rho;
    j["log_rho"] = t.log_rho;
    j["p_lr"] = t.p_lr;
    j["p_star"] = t.p_star;
    j["p_star_star"] = t.p_star_star;
    j["degeneracy"] = to_string(t.degenerate);
    j["negative_determinant"] = t.negative_determinant;
    return j;
}

// Deterministic body of a simulation report: no timings, no thread count.
inline Json sim_cell_json(const SimCell& cell, const SimReport& rep) {
    Json j;
    j["q"] = cell.q;
    j["n"] = cell.n;
    j["replications"] = rep.replications;
    j["used"] = rep.used;
    j["not_converged"] = rep.not_converged;
    j["boundary"] = rep.boundary;
    j["failed"] = rep.failed;
    j["degenerate"] = rep.degenerate;
    j["tiny_lr"] = rep.tiny_lr;
    j["non_positive_rho"] = rep.non_positive_rho;
    j["negative_determinant"] = rep.negative_determinant;
    Json levels = Json::array();
    for (const auto& lv : rep.levels) {
        Json l;
        l["level"] = lv.level;
        l["critical_value"] = lv.critical_value;
        for (int s = 0; s < kStatistics; ++s) {
            Json st;
            st["rate"] = lv.rate[s];
            st["rate_excluding_degenerate"] = lv.rate_excluding[s];
            st["rejections"] = lv.rejections[s];
            st["rejections_excluding_degenerate"] = lv.rejections_excluding[s];
            l[statistic_name(s)] = st;
        }
        levels.push_back(l);
    }
    j["levels"] = levels;
    return j;
}

// Rows are cells, column groups are level x statistic.
inline std::string sim_table(const std::vector<SimCell>& cells, const std::vector<SimReport>& reports) {
    std::ostringstream out;
    if (cells.empty()) return {};
    const auto& levels = cells.front().config.levels;
    out << std::setw(4) << "q" << std::setw(6) << "n_k";
    for (double g : levels) {
        std::ostringstream head;
        head << "gamma=" << 100.0 * g << "%";
        out << " | " << std::left << std::setw(20) << head.str() << std::right;
    }
    out << " | " << std::setw(6) << "used" << std::setw(6) << "nconv" << std::setw(6) << "degen" << "\n";
    out << std::setw(10) << "";
    for (std::size_t i = 0; i < levels.size(); ++i) {
        out << " | ";
        for (int s = 0; s < kStatistics; ++s) out << std::setw(s == 0 ? 6 : 7) << statistic_name(s);
    }
    out << " |\n";
    out << std::fixed << std::setprecision(1);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        out << std::setw(4) << cells[c].q << std::setw(6) << cells[c].n;
        for (const auto& lv : reports[c].levels) {
            out << " | ";
            for (int s = 0; s < kStatistics; ++s) out << std::setw(s == 0 ? 6 : 7) << lv.rate[s];
        }
        out << " | " << std::setw(6) << reports[c].used << std::setw(6) << reports[c].not_converged << std::setw(6)
            << reports[c].degenerate << "\n";
    }
    return out.str();
}

}  // namespace eiv::io
