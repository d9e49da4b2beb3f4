#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "lab/eval.hpp"
#include "lab/translate.hpp"

using namespace lab;

namespace {

std::string slurp(const std::string& rel) {
    std::ifstream in(std::string(LAB_CORPUS_DIR) + "/" + rel);
    REQUIRE_MESSAGE(in.good(), "missing corpus file " << rel);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

TermPtr refl(const std::string& text) { return parse_program(text, Calculus::RefL).term; }
TermPtr core(const std::string& text) { return parse_program(text, Calculus::Core).term; }

FullTypePtr refBool() { return ft_ref(ft_base()); }

TypeEnv envY() {
    TypeEnv g;
    g.push("y", refBool());
    return g;
}

TypeEnv envYZ() {
    TypeEnv g;
    g.push("y", refBool());
    g.push("z", refBool());
    return g;
}

void matchGolden(const TranslateResult& r, const std::string& goldenRel) {
    REQUIRE_MESSAGE(r.ok, r.diag.str());
    TermPtr mine = normalize_admin(r.target);
    TermPtr want = normalize_admin(core(slurp(goldenRel)));
    bool same = alpha_eq(mine, want);
    CHECK_MESSAGE(same, "got:  " << print_term(mine) << "\nwant: " << print_term(want));
}

bool hasClosureRebind(const TermPtr& t, const std::string& f) {
    if (t->k == Term::K::Let && t->names.size() == 1 && t->names[0] == f) {
        const TermPtr& r = t->kids[0];
        if (r->k == Term::K::Tuple && r->kids.size() == 2 && r->kids[1]->k == Term::K::Proj &&
            r->kids[1]->idx == 2 && r->kids[1]->kids[0]->k == Term::K::Var &&
            r->kids[1]->kids[0]->name == f)
            return true;
    }
    for (auto& k : t->kids)
        if (hasClosureRebind(k, f)) return true;
    return false;
}

}  // namespace

TEST_CASE("type translation maps cells to values and closures to store/code pairs") {
    TypeExprPtr b = ty_bool();
    CHECK(type_eq(translate_type(ft_unit(), BaseKind::Bool), ty_unit()));
    CHECK(type_eq(translate_type(ft_base(), BaseKind::Bool), b));
    CHECK(type_eq(translate_type(ft_any(), BaseKind::Int), ty_int()));
    CHECK(type_eq(translate_type(ft_ref(ft_base()), BaseKind::Bool), b));
    CHECK(type_eq(translate_type(ft_ref(ft_ref(ft_base())), BaseKind::Bool), b));

    FullTypePtr f1 = ft_fun({refBool()}, 1, ft_unit());
    TypeExprPtr want1 = ty_tuple({b, ty_fun(ty_tuple({b, b}), ty_tuple({ty_unit(), b, b}))});
    CHECK(type_eq(translate_type(f1, BaseKind::Bool), want1));

    // a two-cell store is one component of width two on both sides of the code
    FullTypePtr f2 = ft_fun({refBool()}, 2, ft_unit());
    TypeExprPtr bb = ty_tuple({b, b});
    TypeExprPtr want2 = ty_tuple({bb, ty_fun(ty_tuple({b, bb}), ty_tuple({ty_unit(), b, bb}))});
    CHECK(type_eq(translate_type(f2, BaseKind::Bool), want2));

    // store-0 closures still pair up, with a unit store
    FullTypePtr f0 = ft_fun({ft_unit()}, 0, ft_base());
    TypeExprPtr want0 = ty_tuple(
        {ty_unit(), ty_fun(ty_tuple({ty_unit(), ty_unit()}), ty_tuple({b, ty_unit(), ty_unit()}))});
    CHECK(type_eq(translate_type(f0, BaseKind::Bool), want0));

    // the self variable of a recursive function is bare code
    TypeEnv d = envYZ();
    FullTypePtr rf = ft_recfun({refBool()}, d, ft_unit());
    TypeExprPtr wantR = ty_fun(ty_tuple({b, bb}), ty_tuple({ty_unit(), b, bb}));
    CHECK(type_eq(translate_type(rf, BaseKind::Bool), wantR));
}

TEST_CASE("pack lists cells in binding order, destructuring wide closures") {
    TypeEnv g;
    g.push("x", refBool());
    g.push("y", ft_base());
    g.push("f", ft_fun({ft_unit()}, 2, ft_base()));
    CHECK(alpha_eq(pack_env(g), core("let (u, v) = f.1 in (x, u, v)")));

    CHECK(term_eq(pack_env(TypeEnv{}), t_unit()));
    TypeEnv gx;
    gx.push("x", refBool());
    CHECK(alpha_eq(pack_env(gx), t_var("x")));

    TypeEnv g1;
    g1.push("f", ft_fun({ft_unit()}, 1, ft_base()));
    CHECK(alpha_eq(pack_env(g1), core("f.1")));
}

TEST_CASE("unpack rebinds cells and rebuilds owned closures around the body") {
    TypeEnv g;
    g.push("x", refBool());
    g.push("y", ft_base());
    g.push("f", ft_fun({ft_unit()}, 2, ft_base()));
    TermPtr got = unpack_env(g, "h", core("k"));
    CHECK(alpha_eq(got, core("let (x, u, v) = h in let f = ((u, v), f.2) in k")));

    CHECK(alpha_eq(unpack_env(TypeEnv{}, "h", core("k")), core("k")));
    TypeEnv gx;
    gx.push("x", refBool());
    CHECK(alpha_eq(unpack_env(gx, "h", core("x")), core("let x = h in x")));
}

TEST_CASE("translation matches the worked examples") {
    matchGolden(translate(envY(), refl(slurp("golden/ex45.refl")), BaseKind::Bool),
                "golden/ex45.target");
    matchGolden(translate(envYZ(), refl(slurp("golden/ex46.refl")), BaseKind::Bool),
                "golden/ex46.target");
    matchGolden(translate(envYZ(), refl(slurp("golden/ex47.refl")), BaseKind::Bool),
                "golden/ex47.target");
    matchGolden(translate({}, refl(slurp("typing/m_ok1.refl")), BaseKind::Bool),
                "golden/m_ok1.target");
}

TEST_CASE("closed alias program reduces to a pure toggle") {
    TranslateResult r = translate({}, refl(slurp("typing/m_ok1.refl")), BaseKind::Bool);
    REQUIRE(r.ok);
    // the alias cell dies with y, so the store half of the result is empty
    TermPtr want =
        t_let("t", t_prim("not", {t_bool(true)}), t_tuple({t_var("t"), t_unit()}));
    CHECK(alpha_eq(normalize_admin(r.target), want));
    CHECK(type_eq(r.targetType, ty_tuple({ty_bool(), ty_unit()})));
}

TEST_CASE("translations typecheck at the translated judgment type") {
    struct Case {
        const char* file;
        TypeEnv env;
    };
    std::vector<Case> cases = {
        {"typing/m_ok1.refl", {}},
        {"typing/m_ok2.refl", {}},
        {"typing/m_ok3.refl", {}},
        {"typing/m_ok4.refl", {}},
        {"typing/ex_recfix.refl", {}},
        {"golden/ex45.refl", envY()},
        {"golden/ex46.refl", envYZ()},
        {"golden/ex47.refl", envYZ()},
    };
    for (auto& c : cases) {
        INFO("case ", c.file);
        TranslateResult r = translate(c.env, refl(slurp(c.file)), BaseKind::Bool);
        REQUIRE_MESSAGE(r.ok, r.diag.str());
        auto env2 = translate_env(c.env, BaseKind::Bool);
        SimpleCheckResult t = typecheck_target(env2, r.target, BaseKind::Bool, r.targetType);
        CHECK_MESSAGE(t.ok, c.file << ": " << t.diag.str());
        if (t.ok) CHECK(type_eq(t.type, r.targetType));
        if (c.env.empty()) CHECK(is_closed(r.target));
    }
}

TEST_CASE("a binder that outlives its body's store is trimmed at the let") {
    TranslateResult r = translate({}, refl("let x = ref true in !x"), BaseKind::Bool);
    REQUIRE(r.ok);
    CHECK(store_size(r.post) == 0);
    CHECK(type_eq(r.targetType, ty_tuple({ty_bool(), ty_unit()})));
    auto t = typecheck_target({}, r.target, BaseKind::Bool, r.targetType);
    CHECK_MESSAGE(t.ok, t.diag.str());
    CHECK(alpha_eq(normalize_admin(r.target), core("(true, ())")));
}

TEST_CASE("calls rebuild the closure around its returned store even when sharable") {
    TranslateResult r = translate({}, refl(slurp("typing/m_ok3.refl")), BaseKind::Bool);
    REQUIRE(r.ok);
    CHECK(hasClosureRebind(r.target, "f"));
    CHECK(hasClosureRebind(r.target, "g"));
}

TEST_CASE("store padding widens a translated closure") {
    TranslateResult r = translate({}, refl("fun (z: unit) -> true"), BaseKind::Bool);
    REQUIRE(r.ok);
    TermPtr wide = subsume_fun(r.target, r.type, 2, BaseKind::Bool);
    FullTypePtr f2 = ft_fun({ft_unit()}, 2, ft_base());
    TypeExprPtr want = ty_tuple({translate_type(f2, BaseKind::Bool), ty_unit()});
    auto t = typecheck_target({}, wide, BaseKind::Bool, want);
    CHECK_MESSAGE(t.ok, t.diag.str());

    // widening from a nonempty store keeps the old cells in front
    TranslateResult r1 = translate(
        {}, refl("let y = ref true in fun (z: unit) -> (y := not !y; !y)"), BaseKind::Bool);
    REQUIRE(r1.ok);
    TermPtr wide3 = subsume_fun(r1.target, r1.type, 3, BaseKind::Bool);
    FullTypePtr f3 = ft_fun({ft_unit()}, 3, ft_base());
    TypeExprPtr want3 = ty_tuple({translate_type(f3, BaseKind::Bool), ty_unit()});
    auto t3 = typecheck_target({}, wide3, BaseKind::Bool, want3);
    CHECK_MESSAGE(t3.ok, t3.diag.str());

    CHECK_THROWS_AS(subsume_fun(r.target, r.type, 0, BaseKind::Bool), LabError);
    CHECK_THROWS_AS(subsume_fun(r.target, ft_base(), 1, BaseKind::Bool), LabError);
}

TEST_CASE("translation is deterministic") {
    std::string text = slurp("typing/m_ok4.refl");
    TranslateResult a = translate({}, refl(text), BaseKind::Bool);
    TranslateResult b = translate({}, refl(text), BaseKind::Bool);
    REQUIRE(a.ok);
    REQUIRE(b.ok);
    CHECK(term_eq(a.target, b.target));
    CHECK(type_eq(a.targetType, b.targetType));
}

TEST_CASE("rejected programs do not translate") {
    TranslateResult r = translate({}, refl(slurp("typing/m_ng2.refl")), BaseKind::Bool);
    CHECK(!r.ok);
    CHECK(r.diag.rule == "T-App");
    CHECK(r.diag.binding == "f");
}

TEST_CASE("an owner cannot be passed twice in one call") {
    auto viaLet = typecheck_refl(
        {},
        refl("let x = ref true in let f = fix f (a: bool ref, b: bool ref) = !a in f x x"),
        BaseKind::Bool);
    CHECK(!viaLet.ok);
    CHECK(viaLet.diag.rule == "T-App");
    CHECK(viaLet.diag.msg.find("aliases") != std::string::npos);

    auto viaSelf = typecheck_refl(
        {}, refl("let g = fix g (a: bool ref, b: bool ref) : bool = g a a in true"),
        BaseKind::Bool);
    CHECK(!viaSelf.ok);
    CHECK(viaSelf.diag.rule == "T-RApp");
}

TEST_CASE("translation output is pinned for the rest of the typing corpus") {
    matchGolden(translate({}, refl(slurp("typing/m_ok2.refl")), BaseKind::Bool),
                "golden/m_ok2.target");
    matchGolden(translate({}, refl(slurp("typing/m_ok3.refl")), BaseKind::Bool),
                "golden/m_ok3.target");
    matchGolden(translate({}, refl(slurp("typing/m_ok4.refl")), BaseKind::Bool),
                "golden/m_ok4.target");
    matchGolden(translate({}, refl(slurp("typing/ex_recfix.refl")), BaseKind::Bool),
                "golden/ex_recfix.target");
}

TEST_CASE("pack then unpack reproduces the store tuple on every value assignment") {
    // f's two cells are destructured into the flat store tuple and rebuilt
    TypeEnv g;
    g.push("b", ft_base());
    g.push("x", ft_ref(ft_base()));
    g.push("f", ft_fun({ft_unit()}, 2, ft_base()));
    g.push("y", ft_ref(ft_base()));

    ChoiceOracle dummy;
    Outcome closR = eval_target(core("fun (z, h) -> (true, z, h)"), {}, 100, dummy);
    REQUIRE(closR.k == Outcome::K::Val);

    TermPtr packT = pack_env(g);
    TermPtr round = t_let("hh", pack_env(g), unpack_env(g, "hh", pack_env(g)));

    for (int bits = 0; bits < 16; bits++) {
        Env s{{"b", v_bool(true)},
              {"x", v_bool(bits & 1)},
              {"y", v_bool(bits & 2)},
              {"f", v_tuple({v_tuple({v_bool(bits & 4), v_bool(bits & 8)}), closR.value})}};
        ChoiceOracle o1, o2;
        Outcome direct = eval_target(packT, s, 1000, o1);
        Outcome twice = eval_target(round, s, 1000, o2);
        REQUIRE(direct.k == Outcome::K::Val);
        REQUIRE(twice.k == Outcome::K::Val);
        CHECK(value_eq(direct.value, twice.value));
    }
}

TEST_CASE("padding a store-free closure does not change what calls return") {
    // subsume_fun reads a judgment-shaped pair: (closure value, outer store)
    FullTypePtr f0 = ft_fun({ft_unit()}, 0, ft_base());
    TermPtr plain = core("(((), fun (z, h) -> (true, z, ())), ())");
    TermPtr padded = subsume_fun(plain, f0, 1, BaseKind::Bool);
    TermPtr call = core("let f = j.1 in f.2 ((), f.1)");
    for (auto& e : {plain, padded}) {
        ChoiceOracle o;
        Outcome r = eval_target(t_let("j", e, call), {}, 1000, o);
        REQUIRE_MESSAGE(r.k == Outcome::K::Val, r.reason);
        REQUIRE(r.value->k == Value::K::Tuple);
        CHECK(r.value->elems[0]->bval == true);   // the returned value
        CHECK(r.value->elems[1]->k == Value::K::Unit);  // the argument travels back
    }
}
