#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "lab/syntax.hpp"

using namespace lab;

TEST_CASE("constants and atoms print/parse") {
    CHECK(print_term(t_unit()) == "()");
    CHECK(print_term(t_bool(true)) == "true");
    CHECK(print_term(t_int(-3)) == "(-3)");
    CHECK(print_term(t_any()) == "*");
    CHECK(print_term(t_fail()) == "fail");
    auto r = parse_program("()", Calculus::Core);
    CHECK(r.term->k == Term::K::Unit);
    CHECK(r.base == BaseKind::Bool);
}

TEST_CASE("base kind inference") {
    CHECK(parse_program("let m = * in if m > 0 then m - 1 else 0", Calculus::Core).base ==
          BaseKind::Int);
    CHECK(parse_program("let b = * in b && true", Calculus::Core).base == BaseKind::Bool);
}

TEST_CASE("assert and seq desugaring") {
    auto t = parse_program("assert(true)", Calculus::Core).term;
    CHECK(term_eq(t, t_if(t_bool(true), t_unit(), t_fail())));
    auto s = parse_program("(); fail", Calculus::Core).term;
    REQUIRE(s->k == Term::K::Let);
    CHECK(s->names[0].substr(0, 3) == "_s'");
    CHECK(s->kids[0]->k == Term::K::Unit);
    CHECK(s->kids[1]->k == Term::K::Fail);
}

TEST_CASE("ANF normalization inserts lets for compound operands") {
    // ref true needs a fresh let in the reference language
    auto t = parse_program("let x = ref true in !x", Calculus::RefL).term;
    REQUIRE(t->k == Term::K::Let);
    auto rhs = t->kids[0];
    REQUIRE(rhs->k == Term::K::Let);
    CHECK(rhs->kids[0]->k == Term::K::ConstB);
    REQUIRE(rhs->kids[1]->k == Term::K::MkRef);
    CHECK(rhs->kids[1]->kids[0]->k == Term::K::Var);
    CHECK(t->kids[1]->k == Term::K::Deref);
}

TEST_CASE("M_Ok1 parses to the expected shape and round-trips") {
    std::string src = "let x = ref true in let y = x in (y := not !y; !y)";
    auto t = parse_program(src, Calculus::RefL).term;
    auto printed = print_term(t);
    auto t2 = parse_program(printed, Calculus::RefL).term;
    CHECK(term_eq(t, t2));
    REQUIRE(t->k == Term::K::Let);
    CHECK(t->names[0] == "x");
    CHECK(t->kids[1]->names[0] == "y");
}

TEST_CASE("saturated application in the reference language") {
    auto t = parse_program("fix f (x: unit, g: unit ->[1] bool) = g x", Calculus::RefL).term;
    REQUIRE(t->k == Term::K::Fix);
    CHECK(t->names == std::vector<std::string>{"f", "x", "g"});
    REQUIRE(t->annos.size() == 3);
    CHECK(t->annos[2]->k == TypeExpr::K::Fun);
    CHECK(t->annos[2]->store == 1);
    auto app = t->kids[0];
    REQUIRE(app->k == Term::K::App);
    CHECK(app->kids.size() == 2);
}

TEST_CASE("curried application elsewhere") {
    auto t = parse_program("f x y", Calculus::Core).term;
    REQUIRE(t->k == Term::K::App);
    CHECK(t->kids.size() == 2);
    CHECK(t->kids[0]->k == Term::K::App);
}

TEST_CASE("type syntax round trip") {
    auto ty = ty_fun(ty_unit(), ty_ref(ty_ref(ty_bool())), 2);
    CHECK(print_type(ty) == "unit ->[2] bool ref ref");
    auto t = parse_program("fun (x: unit ->[2] bool ref ref) -> x", Calculus::Core).term;
    CHECK(type_eq(t->annos[0], ty));
    auto tup = ty_tuple({ty_bool(), ty_tuple({ty_int(), ty_sym()})});
    CHECK(print_type(tup) == "bool * (int * sym)");
}

TEST_CASE("letrec single binding is a plain fix") {
    auto t = parse_program("let rec f x = f x in f ()", Calculus::Core).term;
    REQUIRE(t->k == Term::K::Let);
    CHECK(t->names[0] == "f");
    auto fx = t->kids[0];
    REQUIRE(fx->k == Term::K::Fix);
    CHECK(fx->names == std::vector<std::string>{"f", "x"});
}

TEST_CASE("letrec expansion has no free occurrences of the bound names") {
    RecBinding f{"f", {"x"}, {nullptr}, parse_program("g x", Calculus::Core).term};
    RecBinding g{"g", {"y"}, {nullptr}, parse_program("f y", Calculus::Core).term};
    auto body = parse_program("f ()", Calculus::Core).term;
    auto t = desugar_letrec({f, g}, body);
    CHECK(free_vars(t).empty());
    // and an unrelated free variable survives
    RecBinding h{"h", {"x"}, {nullptr}, parse_program("q x", Calculus::Core).term};
    auto t2 = desugar_letrec({h}, parse_program("h ()", Calculus::Core).term);
    CHECK(free_vars(t2) == std::vector<std::string>{"q"});
}

TEST_CASE("letrec multi-parameter bindings curry outside the reference language") {
    auto t = parse_program("let rec f a b = f a b in f () ()", Calculus::Exn).term;
    auto fx = t->kids[0];
    REQUIRE(fx->k == Term::K::Fix);
    CHECK(fx->names.size() == 2); // f, a
    CHECK(fx->kids[0]->k == Term::K::Lambda);
}

TEST_CASE("alpha equivalence") {
    auto a = parse_program("fun x -> x", Calculus::Core).term;
    auto b = parse_program("fun y -> y", Calculus::Core).term;
    auto c = parse_program("fun x -> y", Calculus::Core).term;
    CHECK(alpha_eq(a, b));
    CHECK(!alpha_eq(a, c));
    auto d = parse_program("let x = true in let x = x in x", Calculus::Core).term;
    auto e = parse_program("let u = true in let v = u in v", Calculus::Core).term;
    CHECK(alpha_eq(d, e));
}

TEST_CASE("substitution avoids capture") {
    auto body = parse_program("fun y -> x", Calculus::Core).term;
    auto r = subst(body, "x", t_var("y"));
    REQUIRE(r->k == Term::K::Lambda);
    CHECK(r->names[0] != "y");
    CHECK(r->kids[0]->k == Term::K::Var);
    CHECK(r->kids[0]->name == "y");
    // shadowing stops substitution
    auto sh = parse_program("let x = () in x", Calculus::Core).term;
    CHECK(term_eq(subst(sh, "x", t_fail()), sh));
}

TEST_CASE("effects, handlers, try and symbols parse and round-trip") {
    std::string src =
        "handle perform aZ((); fun y -> y) with { return x -> x | aZ(x; k) -> k x | aS(x; c) -> c }";
    auto t = parse_program(src, Calculus::AlgEff).term;
    REQUIRE(t->k == Term::K::Handle);
    CHECK(t->handler->clauses.size() == 2);
    auto t2 = parse_program(print_term(t), Calculus::AlgEff).term;
    CHECK(term_eq(t, t2));

    auto e = parse_program("try[unit -> unit] raise[unit -> unit] (fun x -> x) with h -> h ()",
                           Calculus::Exn)
                 .term;
    REQUIRE(e->k == Term::K::Try);
    CHECK(type_eq(e->tyAnno, ty_fun(ty_unit(), ty_unit())));
    CHECK(term_eq(e, parse_program(print_term(e), Calculus::Exn).term));

    auto s = parse_program("let x = gensym in let y = gensym in x == y", Calculus::Sym).term;
    CHECK(s->kids[0]->k == Term::K::Gensym);
    CHECK(term_eq(s, parse_program(print_term(s), Calculus::Sym).term));
}

TEST_CASE("minsky parsing") {
    auto m = parse_minsky("0: halt");
    REQUIRE(m.instrs.size() == 1);
    CHECK(m.instrs[0].k == MinskyInstr::K::Halt);

    auto m2 = parse_minsky("0: inc 0 goto 1\n1: if 0 then 2 else 1\n2: halt\n");
    REQUIRE(m2.instrs.size() == 3);
    CHECK(m2.instrs[0].k == MinskyInstr::K::Inc);
    CHECK(m2.instrs[1].k == MinskyInstr::K::CondDec);
    CHECK(m2.instrs[1].next == 2);
    CHECK(m2.instrs[1].alt == 1);
    CHECK(parse_minsky(print_minsky(m2)).instrs.size() == 3);

    CHECK_THROWS_AS(parse_minsky("0: inc 0 goto 5"), LabError);
    CHECK_THROWS_AS(parse_minsky("1: halt"), LabError);
    CHECK_THROWS_AS(parse_minsky("0: halt\n0: halt"), LabError);
    CHECK_THROWS_AS(parse_minsky("# only comments"), LabError);
}

// ---- randomized round-trip suite ----

namespace {

struct Gen {
    std::mt19937 rng;
    Calculus calc;
    std::vector<std::string> pool{"a", "b", "c", "x", "y", "z", "f", "g"};

    explicit Gen(unsigned seed, Calculus c) : rng(seed), calc(c) {}

    int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }
    std::string name() { return pool[pick((int)pool.size())]; }

    TypeExprPtr type(int depth) {
        if (depth <= 0) return pick(2) ? ty_bool() : ty_unit();
        switch (pick(4)) {
            case 0: return ty_bool();
            case 1: return ty_unit();
            case 2: return ty_ref(type(depth - 1));
            default: return ty_fun(type(depth - 1), type(depth - 1), pick(3) - 1);
        }
    }

    TermPtr atom() {
        switch (pick(6)) {
            case 0: return t_unit();
            case 1: return t_bool(pick(2));
            case 2: return t_var(name());
            case 3: return t_any();
            case 4: return t_fail();
            default: return t_var(name());
        }
    }

    TermPtr refl(int size) {
        if (size <= 1) return atom();
        switch (pick(10)) {
            case 0: return t_prim("not", {t_var(name())});
            case 1: return t_prim("and", {t_var(name()), t_var(name())});
            case 2: return t_deref(t_var(name()));
            case 3: return t_mkref(t_var(name()));
            case 4: return t_assign(t_var(name()), t_var(name()));
            case 5: return t_let(name(), refl(size / 2), refl(size / 2));
            case 6: return t_if(t_var(name()), refl(size / 2), refl(size / 2));
            case 7: return t_lambda(name(), refl(size - 1), pick(2) ? type(2) : nullptr);
            case 8: {
                std::vector<std::string> ps;
                std::vector<TypeExprPtr> as;
                int n = 1 + pick(2);
                for (int i = 0; i < n; i++) {
                    ps.push_back(name() + std::to_string(i));
                    as.push_back(pick(2) ? type(1) : nullptr);
                }
                return t_fix(name(), ps, refl(size - 1), as);
            }
            default: {
                std::vector<TermPtr> args;
                int n = 1 + pick(2);
                for (int i = 0; i < n; i++) args.push_back(t_var(name()));
                return t_app(t_var(name()), args);
            }
        }
    }

    TermPtr core(int size) {
        if (size <= 1) return atom();
        switch (pick(12)) {
            case 0: return t_prim("or", {core(size / 2), core(size / 2)});
            case 1: return t_prim("=", {core(size / 2), core(size / 2)});
            case 2: return t_let(name(), core(size / 2), core(size / 2));
            case 3: {
                std::vector<std::string> ps{name() + "0", name() + "1"};
                return t_let_pat(ps, core(size / 2), core(size / 2));
            }
            case 4: return t_if(core(size / 3), core(size / 3), core(size / 3));
            case 5: {
                std::vector<std::string> ps;
                int n = 1 + pick(3);
                for (int i = 0; i < n; i++) ps.push_back(name() + std::to_string(i));
                return t_lambda_pat(ps, core(size - 1));
            }
            case 6: {
                std::vector<std::string> ps{name() + "0", name() + "1"};
                return t_fix(name(), ps, core(size - 1));
            }
            case 7: return t_app(core(size / 2), {core(size / 2)});
            case 8: {
                std::vector<TermPtr> es{core(size / 3), core(size / 3)};
                if (pick(2)) es.push_back(core(size / 3));
                return t_tuple(std::move(es));
            }
            case 9: return t_proj(core(size - 1), 1 + pick(3));
            case 10: return t_prim("not", {core(size - 1)});
            default: return atom();
        }
    }

    TermPtr ext(int size) {
        if (size <= 1) return atom();
        if (calc == Calculus::Exn) {
            switch (pick(3)) {
                case 0: return t_raise(type(2), ext(size - 1));
                case 1: return t_try(type(2), ext(size / 2), name(), ext(size / 2));
                default: return core(size);
            }
        }
        if (calc == Calculus::AlgEff) {
            switch (pick(3)) {
                case 0: return t_effect(pick(2) ? "aZ" : "aS", ext(size / 2), ext(size / 2));
                case 1: {
                    Handler h;
                    h.retName = name();
                    h.retBody = ext(size / 3);
                    int n = 1 + pick(2);
                    for (int i = 0; i < n; i++) {
                        HandlerClause c;
                        c.op = i ? "aS" : "aZ";
                        c.x = name();
                        c.kont = name() + "k";
                        c.body = ext(size / 3);
                        h.clauses.push_back(std::move(c));
                    }
                    return t_handle(ext(size / 3), std::make_shared<Handler>(std::move(h)));
                }
                default: return core(size);
            }
        }
        // Sym
        switch (pick(3)) {
            case 0: return t_symeq(ext(size / 2), ext(size / 2));
            case 1: return pick(2) ? t_gensym() : core(size);
            default: return core(size);
        }
    }

    TermPtr gen(int size) {
        if (calc == Calculus::RefL) return refl(size);
        if (calc == Calculus::Core) return core(size);
        return ext(size);
    }
};

} // namespace

TEST_CASE("parse/print round trip holds on randomized terms per calculus") {
    const Calculus calcs[] = {Calculus::Core, Calculus::RefL, Calculus::Exn, Calculus::AlgEff,
                              Calculus::Sym};
    int total = 0;
    for (Calculus c : calcs) {
        Gen g(12345 + (int)c, c);
        for (int i = 0; i < 1100; i++) {
            TermPtr t = g.gen(4 + g.pick(16));
            std::string s = print_term(t);
            TermPtr back;
            try {
                back = parse_program(s, c).term;
            } catch (const LabError& e) {
                FAIL("reparse failed on: ", s, " : ", e.what());
            }
            if (!term_eq(t, back)) {
                FAIL("round trip mismatch:\n  orig: ", s, "\n  back: ", print_term(back));
            }
            total++;
        }
    }
    CHECK(total >= 5500);
}
