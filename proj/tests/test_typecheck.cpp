#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <fstream>
#include <sstream>

#include "lab/typecheck.hpp"

using namespace lab;

namespace {

std::string slurp(const std::string& rel) {
    std::ifstream in(std::string(LAB_CORPUS_DIR) + "/" + rel);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

ReflResult checkText(const std::string& src, TypeEnv env = {}) {
    auto p = parse_program(src, Calculus::RefL);
    return typecheck_refl(env, p.term, p.base);
}

ReflResult checkFile(const std::string& name) { return checkText(slurp("typing/" + name)); }

FullTypePtr refBool() { return ft_ref(ft_base()); }

} // namespace

TEST_CASE("sharable: base data and storeless functions, nothing that owns cells") {
    CHECK(sharable(ft_base()));
    CHECK(sharable(ft_unit()));
    CHECK(sharable(ft_fun({ft_unit()}, 0, ft_base())));
    CHECK(sharable(ft_recfun({ft_unit()}, {}, ft_base())));
    CHECK_FALSE(sharable(refBool()));
    CHECK_FALSE(sharable(ft_ref(refBool())));
    CHECK_FALSE(sharable(ft_fun({ft_unit()}, 1, ft_base())));
}

TEST_CASE("store sizes count owned cells") {
    CHECK(store_size(ft_unit()) == 0);
    CHECK(store_size(ft_base()) == 0);
    CHECK(store_size(refBool()) == 1);
    CHECK(store_size(ft_ref(refBool())) == 1);
    CHECK(store_size(ft_fun({ft_unit()}, 2, ft_base())) == 2);
    CHECK(store_size(ft_recfun({ft_unit()}, {}, ft_base())) == 0);

    TypeEnv g;
    g.push("x", ft_ref(refBool()));
    g.push("y", ft_fun({ft_unit()}, 2, ft_base()));
    g.push("z", ft_base());
    CHECK(store_size(g) == 3);
    CHECK(store_size(TypeEnv{}) == 0);
}

TEST_CASE("removal is ownership-aware") {
    TypeEnv g;
    g.push("x", refBool());
    g.push("y", refBool());
    TypeEnv d = env_drop(g, "x");
    REQUIRE(d.size() == 1);
    CHECK(d.items[0].first == "y");

    TypeEnv g2;
    g2.push("x", ft_base());
    g2.push("y", refBool());
    CHECK(env_eq(env_drop(g2, "x"), g2)); // sharable binding stays

    TypeEnv g3;
    g3.push("x", ft_ref(refBool()));
    CHECK(env_drop_if(g3, "x", refBool()).empty()); // keyed on the given type
    CHECK(env_eq(env_drop_if(g3, "x", ft_base()), g3));

    CHECK(env_remove(g2, "y").size() == 1); // unconditional
}

TEST_CASE("environment split sends owners left, copies sharables") {
    TypeEnv g;
    g.push("x", ft_base());
    g.push("y", refBool());
    g.push("z", ft_base());
    auto [l, r] = split_env(g, {"x", "y"});
    REQUIRE(l.size() == 2);
    CHECK(l.items[0].first == "x");
    CHECK(l.items[1].first == "y");
    REQUIRE(r.size() == 2);
    CHECK(r.items[0].first == "x"); // sharable member of S stays on both sides
    CHECK(r.items[1].first == "z");

    auto [l0, r0] = split_env({}, {"x"});
    CHECK(l0.empty());
    CHECK(r0.empty());

    // frame: nothing is lost, owners end up on exactly one side
    for (auto& it : g.items) {
        bool inL = l.contains(it.first), inR = r.contains(it.first);
        CHECK((inL || inR));
        if (!sharable(it.second)) CHECK(inL != inR);
    }
}

TEST_CASE("subsequence respects order and types") {
    TypeEnv big;
    big.push("a", ft_base());
    big.push("b", refBool());
    big.push("c", ft_unit());
    TypeEnv s1;
    s1.push("a", ft_base());
    s1.push("c", ft_unit());
    CHECK(env_subseq(s1, big));
    TypeEnv s2;
    s2.push("c", ft_unit());
    s2.push("a", ft_base());
    CHECK_FALSE(env_subseq(s2, big)); // out of order
    TypeEnv s3;
    s3.push("b", ft_base());
    CHECK_FALSE(env_subseq(s3, big)); // wrong type
}

TEST_CASE("variable use consumes owners and keeps copies") {
    TypeEnv g;
    g.push("x", ft_base());
    g.push("y", refBool());

    auto r1 = checkText("x", g);
    REQUIRE(r1.ok);
    CHECK(ft_eq(r1.judgment.type, ft_base()));
    CHECK(env_eq(r1.judgment.post, g));

    auto r2 = checkText("y", g);
    REQUIRE(r2.ok);
    CHECK(ft_eq(r2.judgment.type, refBool()));
    REQUIRE(r2.judgment.post.size() == 1);
    CHECK(r2.judgment.post.items[0].first == "x");

    TypeEnv g2;
    g2.push("x", refBool());
    g2.push("y", refBool());
    auto r3 = checkText("let z = x in z", g2);
    REQUIRE(r3.ok);
    CHECK(ft_eq(r3.judgment.type, refBool()));
    REQUIRE(r3.judgment.post.size() == 1);
    CHECK(r3.judgment.post.items[0].first == "y");
}

TEST_CASE("dereference hands over ownership of the contents") {
    TypeEnv g;
    g.push("x", ft_ref(refBool()));
    auto r = checkText("!x", g);
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, refBool()));
    CHECK(r.judgment.post.empty()); // nested cell moved out, x unusable

    TypeEnv g2;
    g2.push("x", refBool());
    auto r2 = checkText("!x", g2);
    REQUIRE(r2.ok);
    CHECK(ft_eq(r2.judgment.type, ft_base()));
    CHECK(env_eq(r2.judgment.post, g2)); // base contents copy out
}

TEST_CASE("assignment moves the assigned value, not the cell") {
    TypeEnv g;
    g.push("x", refBool());
    g.push("y", ft_ref(refBool()));
    auto r = checkText("y := x", g);
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_unit()));
    REQUIRE(r.judgment.post.size() == 1);
    CHECK(r.judgment.post.items[0].first == "y");
}

TEST_CASE("moving a reference through an alias") {
    auto r = checkFile("m_ok1.refl");
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_base()));
    CHECK(r.judgment.post.empty());
}

TEST_CASE("use after move is rejected") {
    auto r = checkFile("m_ng1.refl");
    REQUIRE_FALSE(r.ok);
    CHECK(r.diag.binding == "x");
    CHECK(r.diag.rule == "T-Deref");
}

TEST_CASE("a closure owns what it captures") {
    auto r = checkFile("m_ok2.refl");
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_base()));
    CHECK(r.judgment.post.empty());

    // the closure in isolation: one captured cell, nothing left behind
    TypeEnv g;
    g.push("x", refBool());
    auto rf = checkText("fun (z: unit) -> (x := not !x; !x)", g);
    REQUIRE(rf.ok);
    CHECK(ft_eq(rf.judgment.type, ft_fun({ft_unit()}, 1, ft_base())));
    CHECK(rf.judgment.post.empty());
}

TEST_CASE("store-carrying closures cannot be duplicated") {
    auto r = checkFile("m_ng2.refl");
    REQUIRE_FALSE(r.ok);
    CHECK(r.diag.binding == "f");
    CHECK(r.diag.rule == "T-App");
}

TEST_CASE("capture-free closures are copyable") {
    auto r = checkFile("m_ok3.refl");
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_base()));

    auto rf = checkText("fun (z: unit) -> (let x = ref true in (x := not !x; !x))");
    REQUIRE(rf.ok);
    CHECK(ft_eq(rf.judgment.type, ft_fun({ft_unit()}, 0, ft_base())));
    CHECK(sharable(rf.judgment.type));
}

TEST_CASE("nested capture accumulates the store") {
    auto r = checkFile("m_ok4.refl");
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_base()));

    // the program up to g's definition: g owns f's cell and y
    auto rg = checkText(
        "let x = ref true in let y = ref true in "
        "let f = fun (z: unit) -> (x := not !x; !x) in "
        "fun (u: unit) -> (f () && !y)");
    REQUIRE(rg.ok);
    CHECK(ft_eq(rg.judgment.type, ft_fun({ft_unit()}, 2, ft_base())));
    CHECK(rg.judgment.post.empty());
}

TEST_CASE("calling a closure after it moved into another closure is rejected") {
    auto r = checkFile("m_ng4.refl");
    REQUIRE_FALSE(r.ok);
    CHECK(r.diag.binding == "f");
    CHECK(r.diag.rule == "T-App");
}

TEST_CASE("a recursive toggle owns its cell and stays callable") {
    auto r = checkFile("ex_recfix.refl");
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_base()));
    CHECK(r.judgment.post.empty());

    // the fix in isolation takes ownership of y; callers go through the
    // resulting one-cell closure type
    TypeEnv g;
    g.push("y", refBool());
    auto rf = checkText("fix f (x: unit) = if * then !y else (y := not !y; f x)", g);
    REQUIRE(rf.ok);
    CHECK(ft_eq(rf.judgment.type, ft_fun({ft_unit()}, 1, ft_base())));
    CHECK(rf.judgment.post.empty());
}

TEST_CASE("a recursive call cannot re-own the captured cell") {
    auto r = checkFile("ex_illtyped.refl");
    REQUIRE_FALSE(r.ok);
    CHECK(r.diag.rule == "T-RApp");
}

TEST_CASE("return type inference for fix") {
    auto bad = checkText("fix f (x: unit) = f x");
    REQUIRE_FALSE(bad.ok);
    CHECK(bad.diag.rule == "T-RFun");
    CHECK(bad.diag.msg.find("annotate") != std::string::npos);

    auto good = checkText("fix f (x: unit) : bool = f x");
    REQUIRE(good.ok);
    CHECK(ft_eq(good.judgment.type, ft_fun({ft_unit()}, 0, ft_base())));
}

TEST_CASE("closures may not capture the recursive self-reference") {
    auto r = checkText("fix f (x: unit) : bool = (let g = fun (z: unit) -> f x in g ())");
    REQUIRE_FALSE(r.ok);
    CHECK(r.diag.rule == "T-Fun");
    CHECK(r.diag.msg.find("recursive") != std::string::npos);
}

TEST_CASE("branches must agree on the leftover environment") {
    auto r = checkText(
        "let x = ref true in let c = true in "
        "if c then (let u = !x in u) else (let y = x in !y)");
    REQUIRE_FALSE(r.ok);
    CHECK(r.diag.rule == "T-If");
}

TEST_CASE("fail takes whatever base type the context needs") {
    auto r1 = checkText("if * then fail else true");
    REQUIRE(r1.ok);
    CHECK(ft_eq(r1.judgment.type, ft_base()));

    auto r2 = checkText("if * then fail else ()");
    REQUIRE(r2.ok);
    CHECK(ft_eq(r2.judgment.type, ft_unit()));

    auto r3 = checkText("fail");
    REQUIRE(r3.ok);
    CHECK(ft_eq(r3.judgment.type, ft_base()));
}

TEST_CASE("operators respect the program's base kind") {
    auto ints = checkText("let x = 3 in let y = 2 in (x + y) < 5");
    REQUIRE(ints.ok);
    CHECK(ft_eq(ints.judgment.type, ft_base()));

    auto eq = checkText("let x = 3 in x = 3");
    REQUIRE(eq.ok);
    CHECK(ft_eq(eq.judgment.type, ft_base()));

    auto bad = checkText("let x = 1 in not x");
    REQUIRE_FALSE(bad.ok);
    CHECK(bad.diag.rule == "T-Op");
}

TEST_CASE("shadowed binders are renamed apart") {
    auto r = checkText("let x = ref true in let x = !x in x");
    REQUIRE(r.ok);
    CHECK(ft_eq(r.judgment.type, ft_base()));
}

TEST_CASE("references hold data, not closures") {
    auto r = checkText("let f = fun (z: unit) -> () in ref f");
    CHECK_FALSE(r.ok);
}

TEST_CASE("checking is deterministic") {
    const std::string src = slurp("typing/m_ok4.refl");
    auto p1 = parse_program(src, Calculus::RefL);
    auto p2 = parse_program(src, Calculus::RefL);
    auto r1 = typecheck_refl({}, p1.term, p1.base);
    auto r2 = typecheck_refl({}, p2.term, p2.base);
    REQUIRE(r1.ok);
    REQUIRE(r2.ok);
    CHECK(ft_eq(r1.judgment.type, r2.judgment.type));
    CHECK(env_eq(r1.judgment.post, r2.judgment.post));
    CHECK(print_term(r1.judgment.term) == print_term(r2.judgment.term));
}

TEST_CASE("post-environments only shrink") {
    for (const char* name : {"m_ok1.refl", "m_ok2.refl", "m_ok3.refl", "m_ok4.refl",
                             "ex_recfix.refl"}) {
        CAPTURE(name);
        auto r = checkFile(name);
        REQUIRE(r.ok);
        for (auto& [id, j] : r.info->judgments) CHECK(env_subseq(j.post, j.pre));
    }
}

TEST_CASE("simple checker: functions, tuples, projections") {
    auto core = [](const std::string& s) { return parse_program(s, Calculus::Core); };

    auto r1 = typecheck_target({}, core("(fun x -> x) true").term, BaseKind::Bool);
    REQUIRE(r1.ok);
    CHECK(type_eq(r1.type, ty_bool()));

    auto r2 = typecheck_target({}, core("fun x -> x").term, BaseKind::Bool,
                               ty_fun(ty_bool(), ty_bool()));
    REQUIRE(r2.ok);
    CHECK(type_eq(r2.type, ty_fun(ty_bool(), ty_bool())));

    // unconstrained metavariables default to the base type
    auto r3 = typecheck_target({}, core("fun x -> x").term, BaseKind::Bool);
    REQUIRE(r3.ok);
    CHECK(type_eq(r3.type, ty_fun(ty_bool(), ty_bool())));

    auto r4 = typecheck_target({}, core("let p = (true, ()) in p.2").term, BaseKind::Bool);
    REQUIRE(r4.ok);
    CHECK(type_eq(r4.type, ty_unit()));

    auto r5 = typecheck_target({}, core("let p = (true, ()) in p.3").term, BaseKind::Bool);
    CHECK_FALSE(r5.ok);

    auto r6 = typecheck_target({}, core("true true").term, BaseKind::Bool);
    CHECK_FALSE(r6.ok);

    auto r7 = typecheck_target({{"n", ty_bool()}}, core("not n").term, BaseKind::Bool);
    REQUIRE(r7.ok);
    CHECK(type_eq(r7.type, ty_bool()));

    auto r8 = typecheck_target({}, core("(fun (a, b) -> a && b) (true, false)").term,
                               BaseKind::Bool);
    REQUIRE(r8.ok);
    CHECK(type_eq(r8.type, ty_bool()));

    auto r9 = typecheck_target({}, core("fix f (x) = if x then f false else x").term,
                               BaseKind::Bool);
    REQUIRE(r9.ok);
    CHECK(type_eq(r9.type, ty_fun(ty_bool(), ty_bool())));

    // reference cells never appear in the pure target
    auto r10 = typecheck_target({}, t_mkref(t_bool(true)), BaseKind::Bool);
    CHECK_FALSE(r10.ok);
}

TEST_CASE("extension checker: exceptions") {
    auto exn = [](const std::string& s) { return parse_program(s, Calculus::Exn).term; };

    // the counter encoding's numerals check at unit -> unit
    TypeExprPtr uu = ty_fun(ty_unit(), ty_unit());
    TermPtr n0 = t_lambda("x", t_var("x"));
    TermPtr n1 = t_lambda("x", t_raise(uu, n0));
    TermPtr n2 = t_lambda("x", t_raise(uu, n1));
    for (auto& n : {n0, n1, n2}) {
        auto r = typecheck_ext(n, Calculus::Exn, BaseKind::Bool, {}, HandlerStyle::Deep, uu);
        CHECK(r.ok);
    }

    auto r1 = typecheck_ext(exn("try [bool] (raise[bool] true) with x -> x"),
                            Calculus::Exn, BaseKind::Bool);
    REQUIRE(r1.ok);
    CHECK(type_eq(r1.type, ty_bool()));

    // payload type must match the annotation
    auto r2 = typecheck_ext(exn("raise[bool] ()"), Calculus::Exn, BaseKind::Bool);
    CHECK_FALSE(r2.ok);

    // raise is exception-calculus only
    auto r3 = typecheck_ext(exn("raise[bool] true"), Calculus::Sym, BaseKind::Bool);
    CHECK_FALSE(r3.ok);
}

TEST_CASE("extension checker: handlers") {
    EffectSignature sig;
    sig.ops["alpha"] = {ty_unit(), ty_bool()};
    auto t = parse_program(
        "handle not (perform alpha((); fun z -> z)) with "
        "{ return x -> x | alpha(x; k) -> k false && k true }",
        Calculus::AlgEff).term;
    for (auto style : {HandlerStyle::Deep, HandlerStyle::Shallow}) {
        auto r = typecheck_ext(t, Calculus::AlgEff, BaseKind::Bool, sig, style);
        REQUIRE(r.ok);
        CHECK(type_eq(r.type, ty_bool()));
    }

    // unknown effect name
    auto bad = typecheck_ext(t, Calculus::AlgEff, BaseKind::Bool, {}, HandlerStyle::Deep);
    CHECK_FALSE(bad.ok);
}

TEST_CASE("extension checker: symbols and unrestricted references") {
    auto r1 = typecheck_ext(parse_program("gensym == gensym", Calculus::Sym).term,
                            Calculus::Sym, BaseKind::Bool);
    REQUIRE(r1.ok);
    CHECK(type_eq(r1.type, ty_bool()));

    auto r2 = typecheck_ext(parse_program("let r = ref true in (r := false; !r)",
                                          Calculus::Ref).term,
                            Calculus::Ref, BaseKind::Bool);
    REQUIRE(r2.ok);
    CHECK(type_eq(r2.type, ty_bool()));

    auto r3 = typecheck_ext(parse_program("gensym == true", Calculus::Sym).term,
                            Calculus::Sym, BaseKind::Bool);
    CHECK_FALSE(r3.ok);
}
