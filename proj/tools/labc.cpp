#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "lab/eval.hpp"
#include "lab/translate.hpp"

using namespace lab;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kOk = 0;        // accepted / safe / evaluation finished
constexpr int kRejected = 1;  // semantic rejection, fail-reachable, failing run
constexpr int kUsage = 2;     // bad flags, unreadable input, parse error
constexpr int kInternal = 3;  // broken invariant inside the tool

struct RunConfig {
    std::string path;
    std::string calc = "refl";
    std::string out;
    long fuel = 100000;
    std::vector<long> choices;
    long choiceDefault = 0;
    bool jsonOut = false;
    bool trace = false;
    unsigned seed = 1;  // generative commands draw everything from this
    std::vector<std::string> envSpec;
    std::vector<std::string> effectSpec;
};

int usageError(const std::string& msg) {
    std::cerr << "labc: " << msg << "\n";
    return kUsage;
}

bool readFile(const std::string& path, std::string& out) {
    std::ifstream in(path);
    if (!in.good()) return false;
    std::stringstream ss;
    ss << in.rdbuf();
    out = ss.str();
    return true;
}

bool calcOf(const std::string& name, Calculus& calc, HandlerStyle& style) {
    style = HandlerStyle::Deep;
    if (name == "refl") calc = Calculus::RefL;
    else if (name == "ref") calc = Calculus::Ref;
    else if (name == "core") calc = Calculus::Core;
    else if (name == "exn") calc = Calculus::Exn;
    else if (name == "alg-deep") calc = Calculus::AlgEff;
    else if (name == "alg-shallow") {
        calc = Calculus::AlgEff;
        style = HandlerStyle::Shallow;
    } else if (name == "sym") calc = Calculus::Sym;
    else return false;
    return true;
}

// name:type with type ::= ref* (bool|int|unit)
bool parseEnvEntry(const std::string& spec, std::string& name, FullTypePtr& ty, BaseKind base) {
    auto colon = spec.find(':');
    if (colon == std::string::npos) return false;
    name = spec.substr(0, colon);
    std::istringstream ss(spec.substr(colon + 1));
    std::vector<std::string> words;
    std::string w;
    while (ss >> w) words.push_back(w);
    if (words.empty()) return false;
    int refs = 0;
    size_t i = 0;
    while (i < words.size() && words[i] == "ref") {
        refs++;
        i++;
    }
    if (i + 1 != words.size()) return false;
    FullTypePtr t;
    if (words[i] == "unit") t = ft_unit();
    else if (words[i] == "bool" && base == BaseKind::Bool) t = ft_base();
    else if (words[i] == "int" && base == BaseKind::Int) t = ft_base();
    else return false;
    for (int k = 0; k < refs; k++) t = ft_ref(t);
    ty = t;
    return !name.empty();
}

// op:payload->reply with both sides in {unit, bool, int}
bool parseEffectEntry(const std::string& spec, std::string& op, TypeExprPtr& payload,
                      TypeExprPtr& reply) {
    auto colon = spec.find(':');
    auto arrow = spec.find("->", colon == std::string::npos ? 0 : colon);
    if (colon == std::string::npos || arrow == std::string::npos) return false;
    op = spec.substr(0, colon);
    auto word = [](std::string s) -> TypeExprPtr {
        s.erase(0, s.find_first_not_of(" \t"));
        s.erase(s.find_last_not_of(" \t") + 1);
        if (s == "unit") return ty_unit();
        if (s == "bool") return ty_bool();
        if (s == "int") return ty_int();
        return nullptr;
    };
    payload = word(spec.substr(colon + 1, arrow - colon - 1));
    reply = word(spec.substr(arrow + 2));
    return !op.empty() && payload && reply;
}

std::string baseName(BaseKind b) { return b == BaseKind::Bool ? "bool" : "int"; }

void emit(const RunConfig& cfg, const Json& j, const std::string& text) {
    if (cfg.jsonOut)
        std::cout << j.dump(2) << "\n";
    else
        std::cout << text << "\n";
}

// ---- check ----

int cmdCheck(const RunConfig& cfg) {
    Calculus calc;
    HandlerStyle style;
    if (!calcOf(cfg.calc, calc, style) || calc == Calculus::Ref)
        return usageError("check accepts --calc refl|core|exn|alg-deep|alg-shallow|sym");
    std::string text;
    if (!readFile(cfg.path, text)) return usageError("cannot read " + cfg.path);

    ParseResult pr;
    try {
        pr = parse_program(text, calc);
    } catch (const LabError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kUsage;
    }

    Json j;
    j["schema"] = "labc/1";
    j["command"] = "check";
    j["path"] = cfg.path;
    j["calculus"] = cfg.calc;
    j["base"] = baseName(pr.base);

    if (calc == Calculus::RefL) {
        TypeEnv g;
        for (auto& s : cfg.envSpec) {
            std::string n;
            FullTypePtr t;
            if (!parseEnvEntry(s, n, t, pr.base)) return usageError("bad --env entry: " + s);
            g.push(n, t);
        }
        ReflResult r = typecheck_refl(g, pr.term, pr.base);
        j["ok"] = r.ok;
        if (r.ok) {
            j["type"] = print_fulltype(r.judgment.type);
            Json post = Json::array();
            for (auto& [x, t] : r.judgment.post.items)
                post.push_back(x + " : " + print_fulltype(t));
            j["post"] = post;
            emit(cfg, j, "accepted : " + print_fulltype(r.judgment.type));
            return kOk;
        }
        j["rule"] = r.diag.rule;
        j["message"] = r.diag.str();
        emit(cfg, j, "rejected [" + r.diag.rule + "] " + r.diag.str());
        return kRejected;
    }

    EffectSignature sig;
    for (auto& s : cfg.effectSpec) {
        std::string op;
        TypeExprPtr p, q;
        if (!parseEffectEntry(s, op, p, q)) return usageError("bad --effect entry: " + s);
        sig.ops[op] = {p, q};
    }
    SimpleCheckResult r = calc == Calculus::Core
                              ? typecheck_target({}, pr.term, pr.base)
                              : typecheck_ext(pr.term, calc, pr.base, sig, style);
    j["ok"] = r.ok;
    if (r.ok) {
        j["type"] = print_type(r.type);
        emit(cfg, j, "accepted : " + print_type(r.type));
        return kOk;
    }
    j["rule"] = r.diag.rule;
    j["message"] = r.diag.str();
    emit(cfg, j, "rejected [" + r.diag.rule + "] " + r.diag.str());
    return kRejected;
}

// ---- translate ----

int cmdTranslate(const RunConfig& cfg) {
    std::string text;
    if (!readFile(cfg.path, text)) return usageError("cannot read " + cfg.path);
    ParseResult pr;
    try {
        pr = parse_program(text, Calculus::RefL);
    } catch (const LabError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kUsage;
    }
    TypeEnv g;
    for (auto& s : cfg.envSpec) {
        std::string n;
        FullTypePtr t;
        if (!parseEnvEntry(s, n, t, pr.base)) return usageError("bad --env entry: " + s);
        g.push(n, t);
    }

    TranslateResult r = translate(g, pr.term, pr.base);
    Json j;
    j["schema"] = "labc/1";
    j["command"] = "translate";
    j["path"] = cfg.path;
    j["base"] = baseName(pr.base);
    j["ok"] = r.ok;
    if (!r.ok) {
        j["rule"] = r.diag.rule;
        j["message"] = r.diag.str();
        emit(cfg, j, "rejected [" + r.diag.rule + "] " + r.diag.str());
        return kRejected;
    }

    // the output must typecheck at the translated judgment type
    SimpleCheckResult back =
        typecheck_target(translate_env(g, pr.base), r.target, pr.base, r.targetType);
    if (!back.ok) {
        std::cerr << "internal: translated program does not re-typecheck: " << back.diag.str()
                  << "\n";
        return kInternal;
    }

    std::string prog = print_term(r.target);
    j["type"] = print_fulltype(r.type);
    j["targetType"] = print_type(r.targetType);
    j["target"] = prog;
    if (!cfg.out.empty()) {
        std::ofstream outF(cfg.out);
        if (!outF.good()) return usageError("cannot write " + cfg.out);
        outF << prog << "\n";
    }
    emit(cfg, j, cfg.out.empty() ? prog : "wrote " + cfg.out);
    return kOk;
}

// ---- run ----

int cmdRun(const RunConfig& cfg) {
    Calculus calc;
    HandlerStyle style;
    if (!calcOf(cfg.calc, calc, style))
        return usageError("run accepts --lang refl|ref|core|exn|alg-deep|alg-shallow|sym");
    std::string text;
    if (!readFile(cfg.path, text)) return usageError("cannot read " + cfg.path);
    ParseResult pr;
    try {
        pr = parse_program(text, calc);
    } catch (const LabError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return kUsage;
    }

    ChoiceOracle oracle;
    oracle.forced = cfg.choices;
    oracle.fallback = cfg.choiceDefault;

    Json j;
    j["schema"] = "labc/1";
    j["command"] = "run";
    j["path"] = cfg.path;
    j["lang"] = cfg.calc;
    j["base"] = baseName(pr.base);
    j["fuel"] = cfg.fuel;

    Outcome o;
    switch (calc) {
        case Calculus::RefL: {
            ReflResult r = typecheck_refl({}, pr.term, pr.base);
            if (!r.ok) {
                j["ok"] = false;
                j["rule"] = r.diag.rule;
                j["message"] = r.diag.str();
                emit(cfg, j, "rejected [" + r.diag.rule + "] " + r.diag.str());
                return kRejected;
            }
            o = eval_source(r.judgment.term, {}, {}, cfg.fuel, oracle, pr.base, r.info.get());
            break;
        }
        case Calculus::Ref:
            o = eval_source(pr.term, {}, {}, cfg.fuel, oracle, pr.base);
            break;
        case Calculus::Core:
            o = eval_target(pr.term, {}, cfg.fuel, oracle, pr.base);
            break;
        case Calculus::Exn:
            o = eval_exn(pr.term, cfg.fuel, oracle);
            break;
        case Calculus::AlgEff:
            o = eval_alg(pr.term, style, cfg.fuel, oracle);
            break;
        case Calculus::Sym:
            o = eval_sym(pr.term, cfg.fuel, oracle);
            break;
    }

    j["choicesUsed"] = oracle.used;
    if (cfg.trace) {
        Json tr = Json::array();
        for (long d : oracle.trace) tr.push_back(d);
        j["choiceTrace"] = tr;
    }
    switch (o.k) {
        case Outcome::K::Val:
            j["outcome"] = "val";
            j["value"] = print_value(o.value);
            emit(cfg, j, print_value(o.value));
            return kOk;
        case Outcome::K::Fail:
            j["outcome"] = "fail";
            emit(cfg, j, "fail");
            return kRejected;
        case Outcome::K::OutOfFuel:
            j["outcome"] = "out-of-fuel";
            emit(cfg, j, "out-of-fuel");
            return kOk;
        case Outcome::K::Stuck:
            j["outcome"] = "stuck";
            j["reason"] = o.reason;
            emit(cfg, j, "stuck: " + o.reason);
            return kRejected;
        case Outcome::K::Exn:
            j["outcome"] = "exception";
            j["value"] = print_value(o.value);
            j["exceptionType"] = print_type(o.exnTy);
            emit(cfg, j,
                 "uncaught exception: " + print_value(o.value) + " : " + print_type(o.exnTy));
            return kRejected;
    }
    return kInternal;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"compiler laboratory for a reference-owning PCF and its encodings"};
    app.require_subcommand(1);
    RunConfig cfg;

    auto addCommon = [&](CLI::App* c, bool langFlag) {
        c->add_option("path", cfg.path, "program file")->required();
        c->add_option(langFlag ? "--lang" : "--calc", cfg.calc,
                      "calculus: refl|ref|core|exn|alg-deep|alg-shallow|sym");
        c->add_flag("--json", cfg.jsonOut, "machine-readable report");
    };

    CLI::App* check = app.add_subcommand("check", "typecheck a program");
    addCommon(check, false);
    check->add_option("--env", cfg.envSpec, "free variable as name:type (type: ref* bool|int|unit)");
    check->add_option("--effect", cfg.effectSpec, "effect as op:payload->reply");

    CLI::App* translate = app.add_subcommand("translate", "compile references away");
    addCommon(translate, false);
    translate->add_option("--out", cfg.out, "write the target program here");
    translate->add_option("--env", cfg.envSpec, "free variable as name:type");

    CLI::App* run = app.add_subcommand("run", "evaluate a program");
    addCommon(run, true);
    run->add_option("--fuel", cfg.fuel, "step budget")->check(CLI::PositiveNumber);
    run->add_option("--choices", cfg.choices, "forced decisions for *, in evaluation order");
    run->add_option("--choice-default", cfg.choiceDefault,
                    "decision once the forced list is spent");
    run->add_flag("--trace", cfg.trace, "include the consumed choice trace in the report");
    run->add_option("--seed", cfg.seed, "seed for randomized commands");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (check->parsed()) return cmdCheck(cfg);
        if (translate->parsed()) return cmdTranslate(cfg);
        if (run->parsed()) return cmdRun(cfg);
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kUsage;
}
