#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "lab/typecheck.hpp"

// Simple types for the translation target and the extension calculi. Plain
// monomorphic unification; leftover metavariables default to the base type, so
// the reported type is principal up to that defaulting.

namespace lab {

namespace {

struct Mono;
using MonoPtr = std::shared_ptr<Mono>;

struct Mono {
    enum class K { Var, Unit, Base, Sym, Ref, Fun, Tuple } k;
    int id = -1;                  // Var
    MonoPtr a, b;                 // Ref elem / Fun arg and result
    std::vector<MonoPtr> elems;   // Tuple
    MonoPtr link;                 // Var resolution
};

MonoPtr mono(Mono::K k) { return std::make_shared<Mono>(Mono{k}); }

MonoPtr mfun(MonoPtr a, MonoPtr b) {
    auto t = mono(Mono::K::Fun);
    t->a = std::move(a);
    t->b = std::move(b);
    return t;
}

MonoPtr mref(MonoPtr a) {
    auto t = mono(Mono::K::Ref);
    t->a = std::move(a);
    return t;
}

MonoPtr mtuple(std::vector<MonoPtr> elems) {
    if (elems.empty()) return mono(Mono::K::Unit);
    if (elems.size() == 1) return elems[0];
    auto t = mono(Mono::K::Tuple);
    t->elems = std::move(elems);
    return t;
}

struct SReject {
    Diag d;
};

struct Simple {
    BaseKind base;
    Calculus calc;
    HandlerStyle style;
    const EffectSignature* sig;
    int nextVar = 0;

    using Scope = std::map<std::string, MonoPtr>;

    [[noreturn]] void fail(const std::string& rule, const std::string& msg, const TermPtr& at,
                           const std::string& binding = "") {
        throw SReject{Diag{rule, msg, binding, at->span}};
    }

    MonoPtr fresh() {
        auto t = mono(Mono::K::Var);
        t->id = nextVar++;
        return t;
    }

    MonoPtr find(MonoPtr t) {
        while (t->k == Mono::K::Var && t->link) t = t->link;
        return t;
    }

    bool occurs(const MonoPtr& t0, const Mono* v) {
        MonoPtr t = find(t0);
        if (t.get() == v) return true;
        if (t->a && occurs(t->a, v)) return true;
        if (t->b && occurs(t->b, v)) return true;
        for (auto& e : t->elems)
            if (occurs(e, v)) return true;
        return false;
    }

    std::string show(const MonoPtr& t0) {
        MonoPtr t = find(t0);
        switch (t->k) {
            case Mono::K::Var: return "?" + std::to_string(t->id);
            case Mono::K::Unit: return "unit";
            case Mono::K::Base: return base == BaseKind::Bool ? "bool" : "int";
            case Mono::K::Sym: return "sym";
            case Mono::K::Ref: return show(t->a) + " ref";
            case Mono::K::Fun: return "(" + show(t->a) + " -> " + show(t->b) + ")";
            case Mono::K::Tuple: {
                std::string s = "(";
                for (size_t i = 0; i < t->elems.size(); i++) s += (i ? " * " : "") + show(t->elems[i]);
                return s + ")";
            }
        }
        return "?";
    }

    void unify(const MonoPtr& a0, const MonoPtr& b0, const TermPtr& at, const std::string& rule) {
        MonoPtr a = find(a0), b = find(b0);
        if (a.get() == b.get()) return;
        if (a->k == Mono::K::Var) {
            if (occurs(b, a.get())) fail(rule, "recursive type " + show(a) + " = " + show(b), at);
            a->link = b;
            return;
        }
        if (b->k == Mono::K::Var) {
            unify(b, a, at, rule);
            return;
        }
        if (a->k != b->k) fail(rule, "type mismatch: " + show(a) + " vs " + show(b), at);
        switch (a->k) {
            case Mono::K::Unit:
            case Mono::K::Base:
            case Mono::K::Sym: return;
            case Mono::K::Ref: unify(a->a, b->a, at, rule); return;
            case Mono::K::Fun:
                unify(a->a, b->a, at, rule);
                unify(a->b, b->b, at, rule);
                return;
            case Mono::K::Tuple: {
                if (a->elems.size() != b->elems.size())
                    fail(rule, "tuple width mismatch: " + show(a) + " vs " + show(b), at);
                for (size_t i = 0; i < a->elems.size(); i++) unify(a->elems[i], b->elems[i], at, rule);
                return;
            }
            default: fail(rule, "type mismatch: " + show(a) + " vs " + show(b), at);
        }
    }

    MonoPtr ofSurface(const TypeExprPtr& t, const TermPtr& at) {
        if (!t) fail("anno", "missing type annotation", at);
        switch (t->k) {
            case TypeExpr::K::Unit: return mono(Mono::K::Unit);
            case TypeExpr::K::Bool:
                if (base != BaseKind::Bool) fail("anno", "bool annotation in an int program", at);
                return mono(Mono::K::Base);
            case TypeExpr::K::Int:
                if (base != BaseKind::Int) fail("anno", "int annotation in a bool program", at);
                return mono(Mono::K::Base);
            case TypeExpr::K::Sym:
                if (calc != Calculus::Sym) fail("anno", "sym is not a type of this calculus", at);
                return mono(Mono::K::Sym);
            case TypeExpr::K::Ref:
                if (calc != Calculus::Ref) fail("anno", "ref is not a type of this calculus", at);
                return mref(ofSurface(t->a, at));
            case TypeExpr::K::Fun: return mfun(ofSurface(t->a, at), ofSurface(t->b, at));
            case TypeExpr::K::Tuple: {
                std::vector<MonoPtr> es;
                for (auto& e : t->elems) es.push_back(ofSurface(e, at));
                return mtuple(std::move(es));
            }
        }
        fail("anno", "bad annotation", at);
    }

    TypeExprPtr toSurface(const MonoPtr& t0) {
        MonoPtr t = find(t0);
        switch (t->k) {
            case Mono::K::Var: return ty_base(base);  // unconstrained, default
            case Mono::K::Unit: return ty_unit();
            case Mono::K::Base: return ty_base(base);
            case Mono::K::Sym: return ty_sym();
            case Mono::K::Ref: return ty_ref(toSurface(t->a));
            case Mono::K::Fun: return ty_fun(toSurface(t->a), toSurface(t->b));
            case Mono::K::Tuple: {
                std::vector<TypeExprPtr> es;
                for (auto& e : t->elems) es.push_back(toSurface(e));
                return ty_tuple(std::move(es));
            }
        }
        return ty_base(base);
    }

    MonoPtr lookup(const Scope& sc, const TermPtr& at) {
        auto it = sc.find(at->name);
        if (it == sc.end()) fail("var", "unbound variable", at, at->name);
        return it->second;
    }

    bool allowed(Term::K k) const {
        switch (k) {
            case Term::K::Raise:
            case Term::K::Try: return calc == Calculus::Exn;
            case Term::K::Effect:
            case Term::K::Handle: return calc == Calculus::AlgEff;
            case Term::K::Gensym:
            case Term::K::SymEq:
            case Term::K::Label: return calc == Calculus::Sym;
            case Term::K::MkRef:
            case Term::K::Deref:
            case Term::K::Assign: return calc == Calculus::Ref;
            default: return true;
        }
    }

    MonoPtr check(const Scope& sc, const TermPtr& m) {
        if (!allowed(m->k)) fail("syntax", "construct not available in this calculus", m);
        switch (m->k) {
            case Term::K::Unit: return mono(Mono::K::Unit);
            case Term::K::ConstB:
                if (base != BaseKind::Bool) fail("const", "boolean constant in an int program", m);
                return mono(Mono::K::Base);
            case Term::K::ConstI:
                if (base != BaseKind::Int) fail("const", "integer constant in a bool program", m);
                return mono(Mono::K::Base);
            case Term::K::AnyBase: return mono(Mono::K::Base);
            case Term::K::Fail: return fresh();
            case Term::K::Var: return lookup(sc, m);

            case Term::K::PrimOp: {
                static const std::set<std::string> boolOps{"not", "and", "or"};
                static const std::set<std::string> intOps{"+", "-", "=", "<", "<=", ">", ">="};
                bool ok = base == BaseKind::Bool ? boolOps.count(m->name) > 0 : intOps.count(m->name) > 0;
                if (!ok) fail("op", "operator not available at this base type", m, m->name);
                for (auto& k : m->kids) unify(check(sc, k), mono(Mono::K::Base), k, "op");
                return mono(Mono::K::Base);
            }

            case Term::K::MkRef: return mref(check(sc, m->kids[0]));
            case Term::K::Deref: {
                MonoPtr a = fresh();
                unify(check(sc, m->kids[0]), mref(a), m->kids[0], "deref");
                return a;
            }
            case Term::K::Assign: {
                MonoPtr a = fresh();
                unify(check(sc, m->kids[0]), mref(a), m->kids[0], "assign");
                unify(check(sc, m->kids[1]), a, m->kids[1], "assign");
                return mono(Mono::K::Unit);
            }

            case Term::K::Let: {
                MonoPtr t1 = check(sc, m->kids[0]);
                Scope sc2 = sc;
                if (m->names.size() == 1) {
                    if (!m->annos.empty() && m->annos[0]) unify(t1, ofSurface(m->annos[0], m), m, "let");
                    sc2[m->names[0]] = t1;
                } else {
                    std::vector<MonoPtr> parts;
                    for (auto& n : m->names) {
                        parts.push_back(fresh());
                        sc2[n] = parts.back();
                    }
                    unify(t1, mtuple(parts), m->kids[0], "let");
                }
                return check(sc2, m->kids[1]);
            }

            case Term::K::If: {
                unify(check(sc, m->kids[0]), mono(Mono::K::Base), m->kids[0], "if");
                MonoPtr t1 = check(sc, m->kids[1]);
                unify(t1, check(sc, m->kids[2]), m, "if");
                return t1;
            }

            case Term::K::Lambda: {
                Scope sc2 = sc;
                std::vector<MonoPtr> parts;
                for (size_t i = 0; i < m->names.size(); i++) {
                    MonoPtr p = (i < m->annos.size() && m->annos[i]) ? ofSurface(m->annos[i], m) : fresh();
                    parts.push_back(p);
                    sc2[m->names[i]] = p;
                }
                MonoPtr arg = mtuple(parts);
                return mfun(arg, check(sc2, m->kids[0]));
            }

            case Term::K::Fix: {
                Scope sc2 = sc;
                std::vector<MonoPtr> parts;
                for (size_t i = 1; i < m->names.size(); i++) {
                    MonoPtr p = (i < m->annos.size() && m->annos[i]) ? ofSurface(m->annos[i], m) : fresh();
                    parts.push_back(p);
                    sc2[m->names[i]] = p;
                }
                MonoPtr arg = mtuple(parts);
                MonoPtr ret = m->tyAnno ? ofSurface(m->tyAnno, m) : fresh();
                MonoPtr self = mfun(arg, ret);
                sc2[m->names[0]] = self;
                unify(check(sc2, m->kids[0]), ret, m, "fix");
                return self;
            }

            case Term::K::App: {
                MonoPtr tf = check(sc, m->kids[0]);
                for (size_t i = 1; i < m->kids.size(); i++) {
                    MonoPtr r = fresh();
                    unify(tf, mfun(check(sc, m->kids[i]), r), m, "app");
                    tf = r;
                }
                return tf;
            }

            case Term::K::Tuple: {
                std::vector<MonoPtr> es;
                for (auto& k : m->kids) es.push_back(check(sc, k));
                return mtuple(std::move(es));
            }

            case Term::K::Proj: {
                // projections fix the tuple at pair width; wider tuples use patterns
                size_t w = std::max<size_t>(m->idx, 2);
                std::vector<MonoPtr> es;
                for (size_t i = 0; i < w; i++) es.push_back(fresh());
                MonoPtr r = es[m->idx - 1];
                unify(check(sc, m->kids[0]), mtuple(std::move(es)), m->kids[0], "proj");
                return r;
            }

            case Term::K::Raise: {
                unify(check(sc, m->kids[0]), ofSurface(m->tyAnno, m), m->kids[0], "raise");
                return fresh();
            }

            case Term::K::Try: {
                MonoPtr t1 = check(sc, m->kids[0]);
                Scope sc2 = sc;
                sc2[m->name] = ofSurface(m->tyAnno, m);
                unify(t1, check(sc2, m->kids[1]), m, "try");
                return t1;
            }

            case Term::K::Effect: {
                auto it = sig->ops.find(m->name);
                if (it == sig->ops.end()) fail("effect", "effect not in the signature", m, m->name);
                MonoPtr b1 = ofSurface(it->second.first, m);
                MonoPtr b2 = ofSurface(it->second.second, m);
                unify(check(sc, m->kids[0]), b1, m->kids[0], "effect");
                MonoPtr res = fresh();
                unify(check(sc, m->kids[1]), mfun(b2, res), m->kids[1], "effect");
                return res;
            }

            case Term::K::Handle: {
                MonoPtr s1 = check(sc, m->kids[0]);
                MonoPtr s2 = fresh();
                auto& h = *m->handler;
                {
                    Scope sc2 = sc;
                    sc2[h.retName] = s1;
                    unify(check(sc2, h.retBody), s2, h.retBody, "handle");
                }
                for (auto& c : h.clauses) {
                    auto it = sig->ops.find(c.op);
                    if (it == sig->ops.end()) fail("handle", "effect not in the signature", m, c.op);
                    Scope sc2 = sc;
                    sc2[c.x] = ofSurface(it->second.first, m);
                    sc2[c.kont] = mfun(ofSurface(it->second.second, m),
                                       style == HandlerStyle::Deep ? s2 : s1);
                    unify(check(sc2, c.body), s2, c.body, "handle");
                }
                return s2;
            }

            case Term::K::Gensym: return mono(Mono::K::Sym);
            case Term::K::Label: return mono(Mono::K::Sym);
            case Term::K::SymEq: {
                unify(check(sc, m->kids[0]), mono(Mono::K::Sym), m->kids[0], "symeq");
                unify(check(sc, m->kids[1]), mono(Mono::K::Sym), m->kids[1], "symeq");
                return mono(Mono::K::Base);
            }

            default: fail("syntax", "construct not available in this calculus", m);
        }
    }
};

} // namespace

SimpleCheckResult typecheck_target(const std::vector<std::pair<std::string, TypeExprPtr>>& env,
                                   const TermPtr& n, BaseKind base, const TypeExprPtr& expect) {
    Simple ck{base, Calculus::Core, HandlerStyle::Deep, nullptr};
    SimpleCheckResult out;
    try {
        Simple::Scope sc;
        for (auto& it : env) sc[it.first] = ck.ofSurface(it.second, n);
        MonoPtr got = ck.check(sc, n);
        if (expect) ck.unify(got, ck.ofSurface(expect, n), n, "expected");
        out.type = ck.toSurface(got);
        out.ok = true;
    } catch (SReject& r) {
        out.diag = r.d;
    }
    return out;
}

SimpleCheckResult typecheck_ext(const TermPtr& m, Calculus calc, BaseKind base,
                                const EffectSignature& sig, HandlerStyle style,
                                const TypeExprPtr& expect) {
    Simple ck{base, calc, style, &sig};
    SimpleCheckResult out;
    try {
        MonoPtr got = ck.check({}, m);
        if (expect) ck.unify(got, ck.ofSurface(expect, m), m, "expected");
        out.type = ck.toSurface(got);
        out.ok = true;
    } catch (SReject& r) {
        out.diag = r.d;
    }
    return out;
}

} // namespace lab
