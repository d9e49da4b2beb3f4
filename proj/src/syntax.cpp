#include "lab/syntax.hpp"

#include <atomic>
#include <cctype>
#include <cstdio>
#include <deque>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

namespace lab {

std::string SrcSpan::str() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%d:%d-%d:%d", line0, col0, line1, col1);
    return buf;
}

std::string calculus_name(Calculus c) {
    switch (c) {
        case Calculus::Core: return "core";
        case Calculus::RefL: return "refl";
        case Calculus::Exn: return "exn";
        case Calculus::AlgEff: return "alg";
        case Calculus::Sym: return "sym";
        case Calculus::Ref: return "ref";
    }
    return "?";
}

std::optional<Calculus> calculus_of_name(const std::string& s) {
    if (s == "core") return Calculus::Core;
    if (s == "refl") return Calculus::RefL;
    if (s == "exn") return Calculus::Exn;
    if (s == "alg") return Calculus::AlgEff;
    if (s == "sym") return Calculus::Sym;
    if (s == "ref") return Calculus::Ref;
    return std::nullopt;
}

// ---- types ----

static TypeExprPtr mkty(TypeExpr t) { return std::make_shared<TypeExpr>(std::move(t)); }

TypeExprPtr ty_unit() { static TypeExprPtr t = mkty({TypeExpr::K::Unit}); return t; }
TypeExprPtr ty_bool() { static TypeExprPtr t = mkty({TypeExpr::K::Bool}); return t; }
TypeExprPtr ty_int() { static TypeExprPtr t = mkty({TypeExpr::K::Int}); return t; }
TypeExprPtr ty_sym() { static TypeExprPtr t = mkty({TypeExpr::K::Sym}); return t; }
TypeExprPtr ty_base(BaseKind b) { return b == BaseKind::Bool ? ty_bool() : ty_int(); }

TypeExprPtr ty_ref(TypeExprPtr a) {
    TypeExpr t{TypeExpr::K::Ref};
    t.a = std::move(a);
    return mkty(std::move(t));
}

TypeExprPtr ty_fun(TypeExprPtr a, TypeExprPtr b, int store) {
    TypeExpr t{TypeExpr::K::Fun};
    t.a = std::move(a);
    t.b = std::move(b);
    t.store = store;
    return mkty(std::move(t));
}

TypeExprPtr ty_tuple(std::vector<TypeExprPtr> elems) {
    if (elems.empty()) return ty_unit();
    if (elems.size() == 1) return elems[0];
    TypeExpr t{TypeExpr::K::Tuple};
    t.elems = std::move(elems);
    return mkty(std::move(t));
}

bool type_eq(const TypeExprPtr& a, const TypeExprPtr& b) {
    if (a == b) return true;
    if (!a || !b) return false;
    if (a->k != b->k || a->store != b->store) return false;
    switch (a->k) {
        case TypeExpr::K::Unit:
        case TypeExpr::K::Bool:
        case TypeExpr::K::Int:
        case TypeExpr::K::Sym: return true;
        case TypeExpr::K::Ref: return type_eq(a->a, b->a);
        case TypeExpr::K::Fun: return type_eq(a->a, b->a) && type_eq(a->b, b->b);
        case TypeExpr::K::Tuple: {
            if (a->elems.size() != b->elems.size()) return false;
            for (size_t i = 0; i < a->elems.size(); i++)
                if (!type_eq(a->elems[i], b->elems[i])) return false;
            return true;
        }
    }
    return false;
}

// precedence: fun < tuple < ref/atom
static void print_type_rec(const TypeExprPtr& t, std::ostringstream& o, int prec) {
    switch (t->k) {
        case TypeExpr::K::Unit: o << "unit"; return;
        case TypeExpr::K::Bool: o << "bool"; return;
        case TypeExpr::K::Int: o << "int"; return;
        case TypeExpr::K::Sym: o << "sym"; return;
        case TypeExpr::K::Ref:
            print_type_rec(t->a, o, 2);
            o << " ref";
            return;
        case TypeExpr::K::Fun: {
            if (prec > 0) o << "(";
            print_type_rec(t->a, o, 1);
            o << (t->store >= 0 ? " ->[" + std::to_string(t->store) + "] " : " -> ");
            print_type_rec(t->b, o, 0);
            if (prec > 0) o << ")";
            return;
        }
        case TypeExpr::K::Tuple: {
            if (prec > 1) o << "(";
            for (size_t i = 0; i < t->elems.size(); i++) {
                if (i) o << " * ";
                print_type_rec(t->elems[i], o, 2);
            }
            if (prec > 1) o << ")";
            return;
        }
    }
}

std::string print_type(const TypeExprPtr& t) {
    if (!t) return "?";
    std::ostringstream o;
    print_type_rec(t, o, 0);
    return o.str();
}

// ---- term builders ----

static std::atomic<int> g_term_id{1};

static TermPtr mk(Term t) {
    t.id = g_term_id.fetch_add(1);
    return std::make_shared<Term>(std::move(t));
}

const HandlerClause* Handler::find(const std::string& op) const {
    for (auto& c : clauses)
        if (c.op == op) return &c;
    return nullptr;
}

TermPtr t_unit() { return mk({Term::K::Unit}); }

TermPtr t_bool(bool b) {
    Term t{Term::K::ConstB};
    t.bval = b;
    return mk(std::move(t));
}

TermPtr t_int(long v) {
    Term t{Term::K::ConstI};
    t.ival = v;
    return mk(std::move(t));
}

TermPtr t_base_const(BaseKind kind, bool truth) {
    return kind == BaseKind::Bool ? t_bool(truth) : t_int(truth ? 1 : 0);
}

TermPtr t_var(const std::string& x) {
    Term t{Term::K::Var};
    t.name = x;
    return mk(std::move(t));
}

TermPtr t_prim(const std::string& op, std::vector<TermPtr> args) {
    Term t{Term::K::PrimOp};
    t.name = op;
    t.kids = std::move(args);
    return mk(std::move(t));
}

TermPtr t_any() { return mk({Term::K::AnyBase}); }
TermPtr t_fail() { return mk({Term::K::Fail}); }

TermPtr t_mkref(TermPtr v) {
    Term t{Term::K::MkRef};
    t.kids = {std::move(v)};
    return mk(std::move(t));
}

TermPtr t_deref(TermPtr v) {
    Term t{Term::K::Deref};
    t.kids = {std::move(v)};
    return mk(std::move(t));
}

TermPtr t_assign(TermPtr ref, TermPtr val) {
    Term t{Term::K::Assign};
    t.kids = {std::move(ref), std::move(val)};
    return mk(std::move(t));
}

TermPtr t_let(const std::string& x, TermPtr m1, TermPtr m2, TypeExprPtr anno) {
    Term t{Term::K::Let};
    t.names = {x};
    t.annos = {std::move(anno)};
    t.kids = {std::move(m1), std::move(m2)};
    return mk(std::move(t));
}

TermPtr t_let_pat(std::vector<std::string> pat, TermPtr m1, TermPtr m2) {
    if (pat.empty()) throw LabError("empty let pattern");
    Term t{Term::K::Let};
    t.names = std::move(pat);
    t.annos.assign(t.names.size(), nullptr);
    t.kids = {std::move(m1), std::move(m2)};
    return mk(std::move(t));
}

TermPtr t_if(TermPtr c, TermPtr m1, TermPtr m2) {
    Term t{Term::K::If};
    t.kids = {std::move(c), std::move(m1), std::move(m2)};
    return mk(std::move(t));
}

TermPtr t_lambda(const std::string& x, TermPtr body, TypeExprPtr anno) {
    Term t{Term::K::Lambda};
    t.names = {x};
    t.annos = {std::move(anno)};
    t.kids = {std::move(body)};
    return mk(std::move(t));
}

TermPtr t_lambda_pat(std::vector<std::string> params, TermPtr body, std::vector<TypeExprPtr> annos) {
    if (params.empty()) throw LabError("lambda needs a parameter");
    Term t{Term::K::Lambda};
    t.names = std::move(params);
    t.annos = std::move(annos);
    t.annos.resize(t.names.size(), nullptr);
    t.kids = {std::move(body)};
    return mk(std::move(t));
}

TermPtr t_fix(const std::string& f, std::vector<std::string> params, TermPtr body,
              std::vector<TypeExprPtr> paramAnnos, TypeExprPtr retAnno) {
    if (params.empty()) throw LabError("fix needs at least one parameter");
    Term t{Term::K::Fix};
    t.names = {f};
    for (auto& p : params) t.names.push_back(p);
    t.annos = {nullptr};
    paramAnnos.resize(params.size(), nullptr);
    for (auto& a : paramAnnos) t.annos.push_back(a);
    t.tyAnno = std::move(retAnno);
    t.kids = {std::move(body)};
    return mk(std::move(t));
}

TermPtr t_app(TermPtr f, std::vector<TermPtr> args) {
    if (args.empty()) throw LabError("application needs arguments");
    Term t{Term::K::App};
    t.kids = {std::move(f)};
    for (auto& a : args) t.kids.push_back(a);
    return mk(std::move(t));
}

TermPtr t_raise(TypeExprPtr ty, TermPtr m) {
    Term t{Term::K::Raise};
    t.tyAnno = std::move(ty);
    t.kids = {std::move(m)};
    return mk(std::move(t));
}

TermPtr t_try(TypeExprPtr ty, TermPtr m1, const std::string& x, TermPtr m2) {
    Term t{Term::K::Try};
    t.tyAnno = std::move(ty);
    t.name = x;
    t.kids = {std::move(m1), std::move(m2)};
    return mk(std::move(t));
}

TermPtr t_effect(const std::string& op, TermPtr v1, TermPtr v2) {
    Term t{Term::K::Effect};
    t.name = op;
    t.kids = {std::move(v1), std::move(v2)};
    return mk(std::move(t));
}

TermPtr t_handle(TermPtr m, HandlerPtr h) {
    Term t{Term::K::Handle};
    t.handler = std::move(h);
    t.kids = {std::move(m)};
    return mk(std::move(t));
}

TermPtr t_gensym() { return mk({Term::K::Gensym}); }

TermPtr t_symeq(TermPtr a, TermPtr b) {
    Term t{Term::K::SymEq};
    t.kids = {std::move(a), std::move(b)};
    return mk(std::move(t));
}

TermPtr t_label(int l) {
    Term t{Term::K::Label};
    t.label = l;
    return mk(std::move(t));
}

TermPtr t_tuple(std::vector<TermPtr> elems) {
    if (elems.empty()) return t_unit();
    if (elems.size() == 1) return elems[0];
    Term t{Term::K::Tuple};
    t.kids = std::move(elems);
    return mk(std::move(t));
}

TermPtr t_proj(TermPtr m, int idx) {
    Term t{Term::K::Proj};
    t.idx = idx;
    t.kids = {std::move(m)};
    return mk(std::move(t));
}

static std::atomic<int> g_seq_id{1};

// the prime keeps generated binders out of the user-identifier space
TermPtr t_seq(TermPtr m1, TermPtr m2) {
    return t_let("_s'" + std::to_string(g_seq_id.fetch_add(1)), std::move(m1), std::move(m2));
}

TermPtr with_span(TermPtr t, SrcSpan s) {
    Term copy = *t;
    copy.span = s;
    return std::make_shared<Term>(std::move(copy)); // keeps the id
}

// ---- structural equality ----

static bool handler_eq(const HandlerPtr& a, const HandlerPtr& b, bool alpha,
                       std::map<std::string, std::string>& la, std::map<std::string, std::string>& lb);

static bool eq_rec(const TermPtr& a, const TermPtr& b, bool alpha,
                   std::map<std::string, std::string>& la, std::map<std::string, std::string>& lb,
                   int& fresh) {
    if (a->k != b->k) return false;
    auto bindPair = [&](const std::string& x, const std::string& y, auto&& body) {
        auto sax = la.find(x) == la.end() ? std::optional<std::string>{} : std::optional{la[x]};
        auto sby = lb.find(y) == lb.end() ? std::optional<std::string>{} : std::optional{lb[y]};
        std::string c = "#" + std::to_string(fresh++);
        la[x] = c;
        lb[y] = c;
        bool r = body();
        if (sax) la[x] = *sax; else la.erase(x);
        if (sby) lb[y] = *sby; else lb.erase(y);
        return r;
    };

    auto var_eq = [&](const std::string& x, const std::string& y) {
        if (!alpha) return x == y;
        auto ia = la.find(x);
        auto ib = lb.find(y);
        if (ia == la.end() && ib == lb.end()) return x == y; // both free
        if (ia == la.end() || ib == lb.end()) return false;
        return ia->second == ib->second;
    };

    switch (a->k) {
        case Term::K::Unit:
        case Term::K::AnyBase:
        case Term::K::Fail:
        case Term::K::Gensym: return true;
        case Term::K::ConstB: return a->bval == b->bval;
        case Term::K::ConstI: return a->ival == b->ival;
        case Term::K::Label: return a->label == b->label;
        case Term::K::Var: return var_eq(a->name, b->name);
        case Term::K::PrimOp:
        case Term::K::Effect:
            if (a->name != b->name) return false;
            break;
        case Term::K::Proj:
            if (a->idx != b->idx) return false;
            break;
        default: break;
    }

    if (a->kids.size() != b->kids.size()) return false;

    // binder handling
    if (a->k == Term::K::Let || a->k == Term::K::Lambda || a->k == Term::K::Fix) {
        if (a->names.size() != b->names.size()) return false;
        if (!alpha) {
            if (a->names != b->names) return false;
            for (size_t i = 0; i < a->annos.size() || i < b->annos.size(); i++) {
                TypeExprPtr ta = i < a->annos.size() ? a->annos[i] : nullptr;
                TypeExprPtr tb = i < b->annos.size() ? b->annos[i] : nullptr;
                if (!!ta != !!tb || (ta && !type_eq(ta, tb))) return false;
            }
            if (!!a->tyAnno != !!b->tyAnno || (a->tyAnno && !type_eq(a->tyAnno, b->tyAnno)))
                return false;
        }
        if (a->k == Term::K::Let) {
            if (!eq_rec(a->kids[0], b->kids[0], alpha, la, lb, fresh)) return false;
            // bind all names for m2
            std::function<bool(size_t)> go = [&](size_t i) -> bool {
                if (i == a->names.size()) return eq_rec(a->kids[1], b->kids[1], alpha, la, lb, fresh);
                return bindPair(a->names[i], b->names[i], [&] { return go(i + 1); });
            };
            return go(0);
        }
        std::function<bool(size_t)> go = [&](size_t i) -> bool {
            if (i == a->names.size()) return eq_rec(a->kids[0], b->kids[0], alpha, la, lb, fresh);
            return bindPair(a->names[i], b->names[i], [&] { return go(i + 1); });
        };
        return go(0);
    }

    if (a->k == Term::K::Try) {
        if (!alpha && a->name != b->name) return false;
        if (!alpha && !type_eq(a->tyAnno, b->tyAnno)) return false;
        if (alpha && !type_eq(a->tyAnno, b->tyAnno)) return false; // exception identity is the type
        if (!eq_rec(a->kids[0], b->kids[0], alpha, la, lb, fresh)) return false;
        return bindPair(a->name, b->name, [&] { return eq_rec(a->kids[1], b->kids[1], alpha, la, lb, fresh); });
    }
    if (a->k == Term::K::Raise) {
        if (!type_eq(a->tyAnno, b->tyAnno)) return false;
        return eq_rec(a->kids[0], b->kids[0], alpha, la, lb, fresh);
    }
    if (a->k == Term::K::Handle) {
        if (!eq_rec(a->kids[0], b->kids[0], alpha, la, lb, fresh)) return false;
        return handler_eq(a->handler, b->handler, alpha, la, lb);
    }

    for (size_t i = 0; i < a->kids.size(); i++)
        if (!eq_rec(a->kids[i], b->kids[i], alpha, la, lb, fresh)) return false;
    return true;
}

static bool handler_eq(const HandlerPtr& a, const HandlerPtr& b, bool alpha,
                       std::map<std::string, std::string>& la, std::map<std::string, std::string>& lb) {
    if (!a || !b) return a == b;
    if (a->clauses.size() != b->clauses.size()) return false;
    int fresh = 0;
    auto bound = [&](const std::string& x, const std::string& y, std::map<std::string, std::string>& m,
                     std::map<std::string, std::string>& n, auto&& body) {
        auto sx = m.count(x) ? std::optional{m[x]} : std::optional<std::string>{};
        auto sy = n.count(y) ? std::optional{n[y]} : std::optional<std::string>{};
        std::string c = "#h" + std::to_string(fresh++);
        m[x] = c;
        n[y] = c;
        bool r = body();
        if (sx) m[x] = *sx; else m.erase(x);
        if (sy) n[y] = *sy; else n.erase(y);
        return r;
    };
    if (!alpha && a->retName != b->retName) return false;
    bool ok = bound(a->retName, b->retName, la, lb,
                    [&] { int f2 = fresh; return eq_rec(a->retBody, b->retBody, alpha, la, lb, f2); });
    if (!ok) return false;
    for (size_t i = 0; i < a->clauses.size(); i++) {
        auto& ca = a->clauses[i];
        auto& cb = b->clauses[i];
        if (ca.op != cb.op) return false;
        if (!alpha && (ca.x != cb.x || ca.kont != cb.kont)) return false;
        bool r = bound(ca.x, cb.x, la, lb, [&] {
            return bound(ca.kont, cb.kont, la, lb, [&] {
                int f2 = fresh + 100;
                return eq_rec(ca.body, cb.body, alpha, la, lb, f2);
            });
        });
        if (!r) return false;
    }
    return true;
}

bool term_eq(const TermPtr& a, const TermPtr& b) {
    std::map<std::string, std::string> la, lb;
    int fresh = 0;
    return eq_rec(a, b, false, la, lb, fresh);
}

bool alpha_eq(const TermPtr& a, const TermPtr& b) {
    std::map<std::string, std::string> la, lb;
    int fresh = 0;
    return eq_rec(a, b, true, la, lb, fresh);
}

// ---- free variables ----

static void fv_rec(const TermPtr& t, std::set<std::string>& bound, std::vector<std::string>& out,
                   std::set<std::string>& seen) {
    switch (t->k) {
        case Term::K::Var:
            if (!bound.count(t->name) && !seen.count(t->name)) {
                seen.insert(t->name);
                out.push_back(t->name);
            }
            return;
        case Term::K::Let: {
            fv_rec(t->kids[0], bound, out, seen);
            std::vector<std::string> added;
            for (auto& n : t->names)
                if (bound.insert(n).second) added.push_back(n);
            fv_rec(t->kids[1], bound, out, seen);
            for (auto& n : added) bound.erase(n);
            return;
        }
        case Term::K::Lambda:
        case Term::K::Fix: {
            std::vector<std::string> added;
            for (auto& n : t->names)
                if (bound.insert(n).second) added.push_back(n);
            fv_rec(t->kids[0], bound, out, seen);
            for (auto& n : added) bound.erase(n);
            return;
        }
        case Term::K::Try: {
            fv_rec(t->kids[0], bound, out, seen);
            bool added = bound.insert(t->name).second;
            fv_rec(t->kids[1], bound, out, seen);
            if (added) bound.erase(t->name);
            return;
        }
        case Term::K::Handle: {
            fv_rec(t->kids[0], bound, out, seen);
            auto& h = *t->handler;
            {
                bool a = bound.insert(h.retName).second;
                fv_rec(h.retBody, bound, out, seen);
                if (a) bound.erase(h.retName);
            }
            for (auto& c : h.clauses) {
                bool ax = bound.insert(c.x).second;
                bool ak = bound.insert(c.kont).second;
                fv_rec(c.body, bound, out, seen);
                if (ak) bound.erase(c.kont);
                if (ax) bound.erase(c.x);
            }
            return;
        }
        default:
            for (auto& k : t->kids) fv_rec(k, bound, out, seen);
            return;
    }
}

std::vector<std::string> free_vars(const TermPtr& t) {
    std::set<std::string> bound, seen;
    std::vector<std::string> out;
    fv_rec(t, bound, out, seen);
    return out;
}

bool is_closed(const TermPtr& t) { return free_vars(t).empty(); }

std::string fresh_name(const std::string& base, std::vector<std::string>& used) {
    std::set<std::string> s(used.begin(), used.end());
    std::string cand = base;
    int i = 0;
    while (s.count(cand)) cand = base + std::to_string(++i);
    used.push_back(cand);
    return cand;
}

// ---- substitution ----
// Substituted terms are closed in every in-tree use; the open case falls back
// to a capture check that renames via fresh binders.

namespace {
struct Subst {
    const std::string& x;
    const TermPtr& v;
    bool vClosed;
    std::vector<std::string> vFree;
    std::unordered_map<const Term*, TermPtr> memo;

    Subst(const std::string& x_, const TermPtr& v_) : x(x_), v(v_) {
        vFree = free_vars(v);
        vClosed = vFree.empty();
    }

    bool clashes(const std::string& binder) const {
        if (vClosed) return false;
        for (auto& f : vFree)
            if (binder == f) return true;
        return false;
    }

    // renames binders of `scope` that collide with vFree; binders are the
    // entries of `names` whose scope is `scope`
    TermPtr freshen(std::vector<std::string>& names, TermPtr scope) {
        std::vector<std::string> used = free_vars(scope);
        for (auto& f : vFree) used.push_back(f);
        used.push_back(x);
        for (auto& n : names) {
            if (!clashes(n)) continue;
            std::string nn = fresh_name(n + "'", used);
            scope = subst(scope, n, t_var(nn));
            n = nn;
        }
        return scope;
    }

    TermPtr go(const TermPtr& t) {
        if (vClosed) {
            auto it = memo.find(t.get());
            if (it != memo.end()) return it->second;
        }
        TermPtr r = walk(t);
        if (vClosed) memo[t.get()] = r;
        return r;
    }

    TermPtr walk(const TermPtr& t) {
        switch (t->k) {
            case Term::K::Var: return t->name == x ? v : t;
            case Term::K::Let: {
                TermPtr m1 = go(t->kids[0]);
                bool shadow = false;
                for (auto& n : t->names)
                    if (n == x) shadow = true;
                if (shadow) {
                    if (m1 == t->kids[0]) return t;
                    Term c = *t;
                    c.kids = {m1, t->kids[1]};
                    return mk(std::move(c));
                }
                std::vector<std::string> names = t->names;
                TermPtr m2 = go(freshen(names, t->kids[1]));
                if (m1 == t->kids[0] && m2 == t->kids[1] && names == t->names) return t;
                Term c = *t;
                c.names = names;
                c.kids = {m1, m2};
                return mk(std::move(c));
            }
            case Term::K::Lambda:
            case Term::K::Fix: {
                bool shadow = false;
                for (auto& n : t->names)
                    if (n == x) shadow = true;
                if (shadow) return t;
                std::vector<std::string> names = t->names;
                TermPtr b = go(freshen(names, t->kids[0]));
                if (b == t->kids[0] && names == t->names) return t;
                Term c = *t;
                c.names = names;
                c.kids = {b};
                return mk(std::move(c));
            }
            case Term::K::Try: {
                TermPtr m1 = go(t->kids[0]);
                TermPtr m2 = t->kids[1];
                std::string binder = t->name;
                if (binder != x) {
                    std::vector<std::string> names{binder};
                    m2 = go(freshen(names, m2));
                    binder = names[0];
                }
                if (m1 == t->kids[0] && m2 == t->kids[1] && binder == t->name) return t;
                Term c = *t;
                c.name = binder;
                c.kids = {m1, m2};
                return mk(std::move(c));
            }
            case Term::K::Handle: {
                TermPtr m = go(t->kids[0]);
                auto& h = *t->handler;
                Handler nh;
                bool changed = false;
                nh.retName = h.retName;
                nh.retBody = h.retBody;
                if (h.retName != x) {
                    std::vector<std::string> names{h.retName};
                    nh.retBody = go(freshen(names, h.retBody));
                    nh.retName = names[0];
                }
                changed |= nh.retBody != h.retBody || nh.retName != h.retName;
                for (auto& c : h.clauses) {
                    HandlerClause nc = c;
                    if (c.x != x && c.kont != x) {
                        std::vector<std::string> names{c.x, c.kont};
                        nc.body = go(freshen(names, c.body));
                        nc.x = names[0];
                        nc.kont = names[1];
                    }
                    changed |= nc.body != c.body || nc.x != c.x || nc.kont != c.kont;
                    nh.clauses.push_back(std::move(nc));
                }
                if (!changed && m == t->kids[0]) return t;
                Term c = *t;
                c.kids = {m};
                c.handler = std::make_shared<Handler>(std::move(nh));
                return mk(std::move(c));
            }
            default: {
                bool changed = false;
                std::vector<TermPtr> kids;
                kids.reserve(t->kids.size());
                for (auto& k : t->kids) {
                    kids.push_back(go(k));
                    changed |= kids.back() != k;
                }
                if (!changed) return t;
                Term c = *t;
                c.kids = std::move(kids);
                return mk(std::move(c));
            }
        }
    }
};
} // namespace

TermPtr subst(const TermPtr& body, const std::string& x, const TermPtr& v) {
    Subst s(x, v);
    return s.go(body);
}

// ---- lexer ----

namespace {

enum class Tok {
    Ident, Int, KwLet, KwRec, KwAnd, KwIn, KwFun, KwFix, KwIf, KwThen, KwElse,
    KwRaise, KwTry, KwWith, KwHandle, KwReturn, KwTrue, KwFalse, KwNot, KwRef,
    KwFail, KwGensym, KwAssert, KwPerform, KwUnit, KwBool, KwInt, KwSym,
    LParen, RParen, LBrack, RBrack, LBrace, RBrace,
    Comma, Semi, Colon, Dot, Arrow, Assign, Eq, EqEq, Lt, Le, Gt, Ge, Plus, Minus,
    AndAnd, OrOr, Bang, Star, Bar, End
};

struct Token {
    Tok k;
    std::string text;
    long ival = 0;
    SrcSpan span;
};

const std::map<std::string, Tok> kKeywords = {
    {"let", Tok::KwLet}, {"rec", Tok::KwRec}, {"and", Tok::KwAnd}, {"in", Tok::KwIn},
    {"fun", Tok::KwFun}, {"fix", Tok::KwFix}, {"if", Tok::KwIf}, {"then", Tok::KwThen},
    {"else", Tok::KwElse}, {"raise", Tok::KwRaise}, {"try", Tok::KwTry}, {"with", Tok::KwWith},
    {"handle", Tok::KwHandle}, {"return", Tok::KwReturn}, {"true", Tok::KwTrue},
    {"false", Tok::KwFalse}, {"not", Tok::KwNot}, {"ref", Tok::KwRef}, {"fail", Tok::KwFail},
    {"gensym", Tok::KwGensym}, {"assert", Tok::KwAssert}, {"perform", Tok::KwPerform},
    {"unit", Tok::KwUnit}, {"bool", Tok::KwBool}, {"int", Tok::KwInt}, {"sym", Tok::KwSym},
};

std::deque<Token> lex(const std::string& text) {
    std::deque<Token> out;
    int line = 1, col = 1;
    size_t i = 0;
    auto peek = [&](size_t off = 0) -> char { return i + off < text.size() ? text[i + off] : '\0'; };
    auto advance = [&]() {
        if (text[i] == '\n') {
            line++;
            col = 1;
        } else {
            col++;
        }
        i++;
    };
    while (i < text.size()) {
        char c = peek();
        if (c == '#') {
            while (i < text.size() && peek() != '\n') advance();
            continue;
        }
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            advance();
            continue;
        }
        SrcSpan sp{line, col, line, col};
        auto push = [&](Tok k, std::string s) {
            sp.line1 = line;
            sp.col1 = col;
            out.push_back({k, std::move(s), 0, sp});
        };
        if (isdigit(c)) {
            std::string num;
            while (isdigit(peek())) {
                num += peek();
                advance();
            }
            sp.line1 = line;
            sp.col1 = col;
            Token t{Tok::Int, num, std::stol(num), sp};
            out.push_back(t);
            continue;
        }
        if (isalpha(c) || c == '_') {
            std::string id;
            while (isalnum(peek()) || peek() == '_' || peek() == '\'') {
                id += peek();
                advance();
            }
            sp.line1 = line;
            sp.col1 = col;
            auto it = kKeywords.find(id);
            out.push_back({it == kKeywords.end() ? Tok::Ident : it->second, id, 0, sp});
            continue;
        }
        auto two = [&](char a, char b) { return c == a && peek(1) == b; };
        if (two(':', '=')) { advance(); advance(); push(Tok::Assign, ":="); continue; }
        if (two('-', '>')) { advance(); advance(); push(Tok::Arrow, "->"); continue; }
        if (two('=', '=')) { advance(); advance(); push(Tok::EqEq, "=="); continue; }
        if (two('<', '=')) { advance(); advance(); push(Tok::Le, "<="); continue; }
        if (two('>', '=')) { advance(); advance(); push(Tok::Ge, ">="); continue; }
        if (two('&', '&')) { advance(); advance(); push(Tok::AndAnd, "&&"); continue; }
        if (two('|', '|')) { advance(); advance(); push(Tok::OrOr, "||"); continue; }
        switch (c) {
            case '(': advance(); push(Tok::LParen, "("); continue;
            case ')': advance(); push(Tok::RParen, ")"); continue;
            case '[': advance(); push(Tok::LBrack, "["); continue;
            case ']': advance(); push(Tok::RBrack, "]"); continue;
            case '{': advance(); push(Tok::LBrace, "{"); continue;
            case '}': advance(); push(Tok::RBrace, "}"); continue;
            case ',': advance(); push(Tok::Comma, ","); continue;
            case ';': advance(); push(Tok::Semi, ";"); continue;
            case ':': advance(); push(Tok::Colon, ":"); continue;
            case '.': advance(); push(Tok::Dot, "."); continue;
            case '=': advance(); push(Tok::Eq, "="); continue;
            case '<': advance(); push(Tok::Lt, "<"); continue;
            case '>': advance(); push(Tok::Gt, ">"); continue;
            case '+': advance(); push(Tok::Plus, "+"); continue;
            case '-': advance(); push(Tok::Minus, "-"); continue;
            case '!': advance(); push(Tok::Bang, "!"); continue;
            case '*': advance(); push(Tok::Star, "*"); continue;
            case '|': advance(); push(Tok::Bar, "|"); continue;
            default:
                throw LabError(std::string("unexpected character '") + c + "'", sp);
        }
    }
    out.push_back({Tok::End, "", 0, {line, col, line, col}});
    return out;
}

// ---- parser ----

struct Parser {
    std::deque<Token> toks;
    Calculus calc;

    explicit Parser(const std::string& text, Calculus c) : toks(lex(text)), calc(c) {}

    const Token& cur() const { return toks.front(); }
    Token eat() {
        Token t = toks.front();
        toks.pop_front();
        return t;
    }
    Token expect(Tok k, const std::string& what) {
        if (cur().k != k) throw LabError("expected " + what + ", got '" + cur().text + "'", cur().span);
        return eat();
    }
    bool at(Tok k) const { return cur().k == k; }

    // ---- types ----
    TypeExprPtr parseType() {
        TypeExprPtr l = parseTypeTuple();
        if (at(Tok::Arrow)) {
            eat();
            int store = -1;
            if (at(Tok::LBrack)) {
                eat();
                store = (int)expect(Tok::Int, "store size").ival;
                expect(Tok::RBrack, "]");
            }
            TypeExprPtr r = parseType();
            return ty_fun(l, r, store);
        }
        return l;
    }
    TypeExprPtr parseTypeTuple() {
        TypeExprPtr a = parseTypeRef();
        if (!at(Tok::Star)) return a;
        std::vector<TypeExprPtr> elems{a};
        while (at(Tok::Star)) {
            eat();
            elems.push_back(parseTypeRef());
        }
        return ty_tuple(std::move(elems));
    }
    TypeExprPtr parseTypeRef() {
        TypeExprPtr a = parseTypeAtom();
        while (at(Tok::KwRef)) {
            eat();
            a = ty_ref(a);
        }
        return a;
    }
    TypeExprPtr parseTypeAtom() {
        switch (cur().k) {
            case Tok::KwUnit: eat(); return ty_unit();
            case Tok::KwBool: eat(); return ty_bool();
            case Tok::KwInt: eat(); return ty_int();
            case Tok::KwSym: eat(); return ty_sym();
            case Tok::LParen: {
                eat();
                TypeExprPtr t = parseType();
                expect(Tok::RParen, ")");
                return t;
            }
            default: throw LabError("expected a type, got '" + cur().text + "'", cur().span);
        }
    }

    // ---- parameters ----
    struct Param {
        std::vector<std::string> names; // >1 = tuple pattern
        std::vector<TypeExprPtr> annos;
    };

    Param parseParam() {
        Param p;
        if (at(Tok::Ident)) {
            p.names.push_back(eat().text);
            p.annos.push_back(nullptr);
            return p;
        }
        expect(Tok::LParen, "parameter");
        while (true) {
            p.names.push_back(expect(Tok::Ident, "parameter name").text);
            if (at(Tok::Colon)) {
                eat();
                p.annos.push_back(parseType());
            } else {
                p.annos.push_back(nullptr);
            }
            if (at(Tok::Comma)) {
                eat();
                continue;
            }
            break;
        }
        expect(Tok::RParen, ")");
        return p;
    }

    TermPtr lambdaOf(const std::vector<Param>& params, size_t i, TermPtr body) {
        if (i == params.size()) return body;
        TermPtr inner = lambdaOf(params, i + 1, std::move(body));
        auto& p = params[i];
        return t_lambda_pat(p.names, std::move(inner), p.annos);
    }

    // ---- terms ----
    TermPtr parseTerm() {
        SrcSpan sp = cur().span;
        switch (cur().k) {
            case Tok::KwLet: return parseLet();
            case Tok::KwFun: {
                eat();
                std::vector<Param> ps;
                while (!at(Tok::Arrow)) ps.push_back(parseParam());
                expect(Tok::Arrow, "->");
                TermPtr body = parseTerm();
                if (ps.empty()) throw LabError("fun needs parameters", sp);
                return with_span(lambdaOf(ps, 0, body), sp);
            }
            case Tok::KwFix: {
                eat();
                std::string f = expect(Tok::Ident, "fix name").text;
                expect(Tok::LParen, "(");
                std::vector<std::string> params;
                std::vector<TypeExprPtr> annos;
                while (true) {
                    params.push_back(expect(Tok::Ident, "parameter").text);
                    if (at(Tok::Colon)) {
                        eat();
                        annos.push_back(parseType());
                    } else {
                        annos.push_back(nullptr);
                    }
                    if (at(Tok::Comma)) {
                        eat();
                        continue;
                    }
                    break;
                }
                expect(Tok::RParen, ")");
                TypeExprPtr ret;
                if (at(Tok::Colon)) {
                    eat();
                    ret = parseType();
                }
                expect(Tok::Eq, "=");
                TermPtr body = parseTerm();
                return with_span(t_fix(f, params, body, annos, ret), sp);
            }
            case Tok::KwIf: {
                eat();
                TermPtr c = parseTerm();
                expect(Tok::KwThen, "then");
                TermPtr a = parseTerm();
                expect(Tok::KwElse, "else");
                TermPtr b = parseTerm();
                return with_span(t_if(c, a, b), sp);
            }
            case Tok::KwRaise: {
                eat();
                expect(Tok::LBrack, "[");
                TypeExprPtr ty = parseType();
                expect(Tok::RBrack, "]");
                TermPtr m = parseUnary();
                return with_span(t_raise(ty, m), sp);
            }
            case Tok::KwTry: {
                eat();
                expect(Tok::LBrack, "[");
                TypeExprPtr ty = parseType();
                expect(Tok::RBrack, "]");
                TermPtr m1 = parseTerm();
                expect(Tok::KwWith, "with");
                std::string x = expect(Tok::Ident, "binder").text;
                expect(Tok::Arrow, "->");
                TermPtr m2 = parseTerm();
                return with_span(t_try(ty, m1, x, m2), sp);
            }
            case Tok::KwHandle: {
                eat();
                TermPtr m = parseTerm();
                expect(Tok::KwWith, "with");
                expect(Tok::LBrace, "{");
                Handler h;
                if (at(Tok::Bar)) eat();
                expect(Tok::KwReturn, "return");
                h.retName = expect(Tok::Ident, "binder").text;
                expect(Tok::Arrow, "->");
                h.retBody = parseTerm();
                while (at(Tok::Bar)) {
                    eat();
                    HandlerClause c;
                    c.op = expect(Tok::Ident, "effect name").text;
                    expect(Tok::LParen, "(");
                    c.x = expect(Tok::Ident, "binder").text;
                    expect(Tok::Semi, ";");
                    c.kont = expect(Tok::Ident, "binder").text;
                    expect(Tok::RParen, ")");
                    expect(Tok::Arrow, "->");
                    c.body = parseTerm();
                    h.clauses.push_back(std::move(c));
                }
                expect(Tok::RBrace, "}");
                return with_span(t_handle(m, std::make_shared<Handler>(std::move(h))), sp);
            }
            default: return parseSeq();
        }
    }

    TermPtr parseLet() {
        SrcSpan sp = cur().span;
        expect(Tok::KwLet, "let");
        if (at(Tok::KwRec)) {
            eat();
            std::vector<RecBinding> binds;
            while (true) {
                RecBinding b;
                b.name = expect(Tok::Ident, "name").text;
                std::vector<Param> ps;
                while (!at(Tok::Eq)) ps.push_back(parseParam());
                // flatten: tuple-pattern params only allowed as a single pattern per param
                for (auto& p : ps) {
                    if (p.names.size() == 1) {
                        b.params.push_back(p.names[0]);
                        b.annos.push_back(p.annos[0]);
                    } else {
                        // tuple-pattern parameter: introduce a fresh name + destructuring let
                        b.params.push_back("");
                        b.annos.push_back(nullptr);
                    }
                }
                expect(Tok::Eq, "=");
                TermPtr body = parseTerm();
                // rewrite tuple-pattern params right-to-left
                std::vector<std::string> used = free_vars(body);
                for (auto& p : ps) used.insert(used.end(), p.names.begin(), p.names.end());
                for (int i = (int)ps.size() - 1; i >= 0; i--) {
                    if (ps[i].names.size() > 1) {
                        std::string fn = fresh_name("_p", used);
                        body = t_let_pat(ps[i].names, t_var(fn), body);
                        b.params[i] = fn;
                    }
                }
                b.body = body;
                binds.push_back(std::move(b));
                if (at(Tok::KwAnd)) {
                    eat();
                    continue;
                }
                break;
            }
            expect(Tok::KwIn, "in");
            TermPtr rest = parseTerm();
            return with_span(desugarRec(binds, rest), sp);
        }
        // let pattern = e in e  |  let f p1 .. pk = e in e
        std::vector<std::string> pat;
        std::vector<TypeExprPtr> annos;
        if (at(Tok::LParen)) {
            Param p = parseParam();
            pat = p.names;
            annos = p.annos;
        } else {
            pat.push_back(expect(Tok::Ident, "binder").text);
            annos.push_back(nullptr);
            if (at(Tok::Colon)) {
                eat();
                annos[0] = parseType();
            }
        }
        std::vector<Param> funParams;
        while (!at(Tok::Eq) && !at(Tok::End)) funParams.push_back(parseParam());
        expect(Tok::Eq, "=");
        TermPtr rhs = parseTerm();
        if (!funParams.empty()) {
            if (pat.size() != 1) throw LabError("function sugar needs a single name", sp);
            rhs = lambdaOf(funParams, 0, rhs);
        }
        expect(Tok::KwIn, "in");
        TermPtr body = parseTerm();
        if (pat.size() == 1) return with_span(t_let(pat[0], rhs, body, annos[0]), sp);
        return with_span(t_let_pat(pat, rhs, body), sp);
    }

    TermPtr desugarRec(const std::vector<RecBinding>& binds, TermPtr body) {
        if (calc == Calculus::RefL) return desugar_letrec_nary(binds, body);
        return desugar_letrec(binds, body);
    }

    int seqId = 0; // per-parse: identical inputs produce identical trees

    TermPtr parseSeq() {
        TermPtr a = parseAssign();
        if (at(Tok::Semi)) {
            eat();
            TermPtr b = parseTerm();
            std::string x = "_s'" + std::to_string(seqId++);
            auto fv = free_vars(b);
            while (std::find(fv.begin(), fv.end(), x) != fv.end())
                x = "_s'" + std::to_string(seqId++);
            return t_let(x, std::move(a), std::move(b));
        }
        return a;
    }

    TermPtr parseAssign() {
        TermPtr l = parseOr();
        if (at(Tok::Assign)) {
            SrcSpan sp = eat().span;
            TermPtr r = parseOr();
            return with_span(t_assign(l, r), sp);
        }
        return l;
    }

    TermPtr parseOr() {
        TermPtr l = parseAnd();
        while (at(Tok::OrOr)) {
            eat();
            TermPtr r = parseAnd();
            l = t_prim("or", {l, r});
        }
        return l;
    }

    TermPtr parseAnd() {
        TermPtr l = parseCmp();
        while (at(Tok::AndAnd)) {
            eat();
            TermPtr r = parseCmp();
            l = t_prim("and", {l, r});
        }
        return l;
    }

    TermPtr parseCmp() {
        TermPtr l = parseAdd();
        switch (cur().k) {
            case Tok::Eq: eat(); return t_prim("=", {l, parseAdd()});
            case Tok::EqEq: eat(); return t_symeq(l, parseAdd());
            case Tok::Lt: eat(); return t_prim("<", {l, parseAdd()});
            case Tok::Le: eat(); return t_prim("<=", {l, parseAdd()});
            case Tok::Gt: eat(); return t_prim(">", {l, parseAdd()});
            case Tok::Ge: eat(); return t_prim(">=", {l, parseAdd()});
            default: return l;
        }
    }

    TermPtr parseAdd() {
        TermPtr l = parseUnary();
        while (at(Tok::Plus) || at(Tok::Minus)) {
            bool plus = eat().k == Tok::Plus;
            TermPtr r = parseUnary();
            l = t_prim(plus ? "+" : "-", {l, r});
        }
        return l;
    }

    TermPtr parseUnary() {
        switch (cur().k) {
            case Tok::KwNot: {
                eat();
                return t_prim("not", {parseUnary()});
            }
            case Tok::Bang: {
                eat();
                return t_deref(parseUnary());
            }
            case Tok::KwRef: {
                eat();
                return t_mkref(parseUnary());
            }
            default: return parseApp();
        }
    }

    bool atAtomStart() const {
        switch (cur().k) {
            case Tok::LParen:
            case Tok::Ident:
            case Tok::Int:
            case Tok::KwTrue:
            case Tok::KwFalse:
            case Tok::KwFail:
            case Tok::KwGensym:
            case Tok::KwAssert:
            case Tok::KwPerform:
            case Tok::Star:
            case Tok::Minus:
                return true;
            default: return false;
        }
    }

    TermPtr parseApp() {
        TermPtr f = parseAtom();
        std::vector<TermPtr> args;
        while (atAtomStart()) {
            if (at(Tok::Minus)) break; // binary minus, not an argument
            args.push_back(parseAtom());
        }
        if (args.empty()) return f;
        if (calc == Calculus::RefL) return t_app(f, args); // saturated
        TermPtr acc = f;
        for (auto& a : args) acc = t_app(acc, {a});
        return acc;
    }

    TermPtr parseAtom() {
        SrcSpan sp = cur().span;
        TermPtr t;
        switch (cur().k) {
            case Tok::KwTrue: eat(); t = t_bool(true); break;
            case Tok::KwFalse: eat(); t = t_bool(false); break;
            case Tok::Int: t = t_int(eat().ival); break;
            case Tok::Minus: {
                eat();
                Token n = expect(Tok::Int, "integer literal");
                t = t_int(-n.ival);
                break;
            }
            case Tok::Ident: t = t_var(eat().text); break;
            case Tok::Star: eat(); t = t_any(); break;
            case Tok::KwFail: eat(); t = t_fail(); break;
            case Tok::KwGensym: eat(); t = t_gensym(); break;
            case Tok::KwAssert: {
                eat();
                expect(Tok::LParen, "(");
                TermPtr e = parseTerm();
                expect(Tok::RParen, ")");
                t = t_if(e, t_unit(), t_fail());
                break;
            }
            case Tok::KwPerform: {
                eat();
                std::string op = expect(Tok::Ident, "effect name").text;
                expect(Tok::LParen, "(");
                TermPtr v1 = parseAssign(); // below seq, so ';' separates the arguments
                expect(Tok::Semi, ";");
                TermPtr v2 = parseTerm();
                expect(Tok::RParen, ")");
                t = t_effect(op, v1, v2);
                break;
            }
            case Tok::LParen: {
                eat();
                if (at(Tok::RParen)) {
                    eat();
                    t = t_unit();
                    break;
                }
                TermPtr first = parseTerm();
                if (at(Tok::Comma)) {
                    std::vector<TermPtr> elems{first};
                    while (at(Tok::Comma)) {
                        eat();
                        elems.push_back(parseTerm());
                    }
                    expect(Tok::RParen, ")");
                    t = t_tuple(std::move(elems));
                } else {
                    expect(Tok::RParen, ")");
                    t = first;
                }
                break;
            }
            default: throw LabError("expected an expression, got '" + cur().text + "'", cur().span);
        }
        while (at(Tok::Dot)) {
            eat();
            Token n = expect(Tok::Int, "projection index");
            t = t_proj(t, (int)n.ival);
        }
        return with_span(t, sp);
    }
};

// ---- ANF normalization (RefL) ----

struct Anf {
    std::vector<std::string> used;

    TermPtr valize(TermPtr t, std::vector<std::pair<std::string, TermPtr>>& binds) {
        TermPtr n = norm(t);
        if (n->k == Term::K::Var) return n;
        std::string x = fresh_name("_a", used);
        binds.push_back({x, n});
        return t_var(x);
    }

    TermPtr wrap(std::vector<std::pair<std::string, TermPtr>>& binds, TermPtr body) {
        for (int i = (int)binds.size() - 1; i >= 0; i--)
            body = t_let(binds[i].first, binds[i].second, body);
        return body;
    }

    TermPtr norm(const TermPtr& t) {
        switch (t->k) {
            case Term::K::Unit:
            case Term::K::ConstB:
            case Term::K::ConstI:
            case Term::K::Var:
            case Term::K::AnyBase:
            case Term::K::Fail: return t;
            case Term::K::PrimOp: {
                std::vector<std::pair<std::string, TermPtr>> binds;
                std::vector<TermPtr> args;
                for (auto& k : t->kids) args.push_back(valize(k, binds));
                return wrap(binds, t_prim(t->name, args));
            }
            case Term::K::MkRef: {
                std::vector<std::pair<std::string, TermPtr>> binds;
                TermPtr v = valize(t->kids[0], binds);
                return wrap(binds, t_mkref(v));
            }
            case Term::K::Deref: {
                std::vector<std::pair<std::string, TermPtr>> binds;
                TermPtr v = valize(t->kids[0], binds);
                return wrap(binds, t_deref(v));
            }
            case Term::K::Assign: {
                std::vector<std::pair<std::string, TermPtr>> binds;
                TermPtr r = valize(t->kids[0], binds);
                TermPtr v = valize(t->kids[1], binds);
                return wrap(binds, t_assign(r, v));
            }
            case Term::K::Let: {
                Term c = *t;
                c.kids = {norm(t->kids[0]), norm(t->kids[1])};
                return mk(std::move(c));
            }
            case Term::K::If: {
                std::vector<std::pair<std::string, TermPtr>> binds;
                TermPtr cnd = valize(t->kids[0], binds);
                return wrap(binds, t_if(cnd, norm(t->kids[1]), norm(t->kids[2])));
            }
            case Term::K::Lambda:
            case Term::K::Fix: {
                Term c = *t;
                c.kids = {norm(t->kids[0])};
                return mk(std::move(c));
            }
            case Term::K::App: {
                std::vector<std::pair<std::string, TermPtr>> binds;
                TermPtr f = valize(t->kids[0], binds);
                std::vector<TermPtr> args;
                for (size_t i = 1; i < t->kids.size(); i++) args.push_back(valize(t->kids[i], binds));
                return wrap(binds, t_app(f, args));
            }
            default:
                throw LabError("construct not available in the reference language", t->span);
        }
    }
};

void collect_names(const TermPtr& t, std::vector<std::string>& out) {
    if (t->k == Term::K::Var) out.push_back(t->name);
    for (auto& n : t->names) out.push_back(n);
    if (t->k == Term::K::Try) out.push_back(t->name);
    if (t->handler) {
        out.push_back(t->handler->retName);
        collect_names(t->handler->retBody, out);
        for (auto& c : t->handler->clauses) {
            out.push_back(c.x);
            out.push_back(c.kont);
            collect_names(c.body, out);
        }
    }
    for (auto& k : t->kids) collect_names(k, out);
}

BaseKind infer_base(const TermPtr& t) {
    bool isInt = false;
    std::function<void(const TypeExprPtr&)> scanTy = [&](const TypeExprPtr& ty) {
        if (!ty) return;
        if (ty->k == TypeExpr::K::Int) isInt = true;
        scanTy(ty->a);
        scanTy(ty->b);
        for (auto& e : ty->elems) scanTy(e);
    };
    std::function<void(const TermPtr&)> go = [&](const TermPtr& u) {
        if (u->k == Term::K::ConstI) isInt = true;
        if (u->k == Term::K::PrimOp &&
            (u->name == "+" || u->name == "-" || u->name == "<" || u->name == "<=" ||
             u->name == ">" || u->name == ">="))
            isInt = true;
        for (auto& a : u->annos) scanTy(a);
        scanTy(u->tyAnno);
        if (u->handler) {
            go(u->handler->retBody);
            for (auto& c : u->handler->clauses) go(c.body);
        }
        for (auto& k : u->kids) go(k);
    };
    go(t);
    return isInt ? BaseKind::Int : BaseKind::Bool;
}

} // namespace

ParseResult parse_program(const std::string& text, Calculus calc) {
    Parser p(text, calc);
    TermPtr t = p.parseTerm();
    if (!p.at(Tok::End))
        throw LabError("trailing input at '" + p.cur().text + "'", p.cur().span);
    if (calc == Calculus::RefL) {
        Anf a;
        collect_names(t, a.used);
        t = a.norm(t);
    }
    return {t, infer_base(t)};
}

// ---- binder renaming ----

namespace {

struct Uniq {
    std::set<std::string> taken;
    std::vector<std::string> used;
    using Scope = std::map<std::string, std::string>;

    std::string bind(const std::string& n, Scope& sc) {
        std::string nn = n;
        if (taken.count(n)) nn = fresh_name(n + "'", used);
        taken.insert(nn);
        sc[n] = nn;
        return nn;
    }

    TermPtr go(const TermPtr& t, const Scope& sc) {
        switch (t->k) {
            case Term::K::Var: {
                auto it = sc.find(t->name);
                if (it == sc.end() || it->second == t->name) return t;
                Term c = *t;
                c.name = it->second;
                return mk(std::move(c));
            }
            case Term::K::Let: {
                TermPtr m1 = go(t->kids[0], sc);
                Scope sc2 = sc;
                std::vector<std::string> names;
                for (auto& n : t->names) names.push_back(bind(n, sc2));
                TermPtr m2 = go(t->kids[1], sc2);
                if (m1 == t->kids[0] && m2 == t->kids[1] && names == t->names) return t;
                Term c = *t;
                c.names = names;
                c.kids = {m1, m2};
                return mk(std::move(c));
            }
            case Term::K::Lambda:
            case Term::K::Fix: {
                Scope sc2 = sc;
                std::vector<std::string> names;
                for (auto& n : t->names) names.push_back(bind(n, sc2));
                TermPtr b = go(t->kids[0], sc2);
                if (b == t->kids[0] && names == t->names) return t;
                Term c = *t;
                c.names = names;
                c.kids = {b};
                return mk(std::move(c));
            }
            case Term::K::Try: {
                TermPtr m1 = go(t->kids[0], sc);
                Scope sc2 = sc;
                std::string binder = bind(t->name, sc2);
                TermPtr m2 = go(t->kids[1], sc2);
                if (m1 == t->kids[0] && m2 == t->kids[1] && binder == t->name) return t;
                Term c = *t;
                c.name = binder;
                c.kids = {m1, m2};
                return mk(std::move(c));
            }
            case Term::K::Handle: {
                TermPtr m = go(t->kids[0], sc);
                auto& h = *t->handler;
                Handler nh;
                bool changed = false;
                {
                    Scope sc2 = sc;
                    nh.retName = bind(h.retName, sc2);
                    nh.retBody = go(h.retBody, sc2);
                }
                changed |= nh.retName != h.retName || nh.retBody != h.retBody;
                for (auto& c : h.clauses) {
                    Scope sc2 = sc;
                    HandlerClause nc = c;
                    nc.x = bind(c.x, sc2);
                    nc.kont = bind(c.kont, sc2);
                    nc.body = go(c.body, sc2);
                    changed |= nc.x != c.x || nc.kont != c.kont || nc.body != c.body;
                    nh.clauses.push_back(std::move(nc));
                }
                if (!changed && m == t->kids[0]) return t;
                Term c = *t;
                c.kids = {m};
                c.handler = std::make_shared<Handler>(std::move(nh));
                return mk(std::move(c));
            }
            default: {
                bool changed = false;
                std::vector<TermPtr> kids;
                kids.reserve(t->kids.size());
                for (auto& k : t->kids) {
                    kids.push_back(go(k, sc));
                    changed |= kids.back() != k;
                }
                if (!changed) return t;
                Term c = *t;
                c.kids = std::move(kids);
                return mk(std::move(c));
            }
        }
    }
};

} // namespace

TermPtr uniquify(const TermPtr& t, const std::vector<std::string>& avoid) {
    Uniq u;
    collect_names(t, u.used);
    for (auto& a : avoid) {
        u.used.push_back(a);
        u.taken.insert(a);
    }
    for (auto& f : free_vars(t)) u.taken.insert(f);
    return u.go(t, {});
}

// ---- printer ----

namespace {

bool is_atomic(const TermPtr& t) {
    switch (t->k) {
        case Term::K::Unit:
        case Term::K::ConstB:
        case Term::K::ConstI:
        case Term::K::Var:
        case Term::K::AnyBase:
        case Term::K::Fail:
        case Term::K::Gensym:
        case Term::K::Tuple:
        case Term::K::Proj:
        case Term::K::Label:
        case Term::K::Effect: return true;
        default: return false;
    }
}

struct Printer {
    std::ostringstream o;

    void atom(const TermPtr& t) {
        if (is_atomic(t)) {
            term(t);
        } else {
            o << "(";
            term(t);
            o << ")";
        }
    }

    void params(const std::vector<std::string>& names, const std::vector<TypeExprPtr>& annos,
                size_t from) {
        o << "(";
        for (size_t i = from; i < names.size(); i++) {
            if (i > from) o << ", ";
            o << names[i];
            TypeExprPtr a = i < annos.size() ? annos[i] : nullptr;
            if (a) o << ": " << print_type(a);
        }
        o << ")";
    }

    void term(const TermPtr& t) {
        switch (t->k) {
            case Term::K::Unit: o << "()"; return;
            case Term::K::ConstB: o << (t->bval ? "true" : "false"); return;
            case Term::K::ConstI: {
                if (t->ival < 0) {
                    o << "(" << t->ival << ")";
                } else {
                    o << t->ival;
                }
                return;
            }
            case Term::K::Var: o << t->name; return;
            case Term::K::AnyBase: o << "*"; return;
            case Term::K::Fail: o << "fail"; return;
            case Term::K::Gensym: o << "gensym"; return;
            case Term::K::Label: o << "`" << t->label; return;
            case Term::K::PrimOp: {
                if (t->name == "not") {
                    o << "not ";
                    atom(t->kids[0]);
                    return;
                }
                std::string sym = t->name == "and" ? "&&" : t->name == "or" ? "||" : t->name;
                atom(t->kids[0]);
                o << " " << sym << " ";
                atom(t->kids[1]);
                return;
            }
            case Term::K::MkRef:
                o << "ref ";
                atom(t->kids[0]);
                return;
            case Term::K::Deref:
                o << "!";
                atom(t->kids[0]);
                return;
            case Term::K::Assign:
                atom(t->kids[0]);
                o << " := ";
                atom(t->kids[1]);
                return;
            case Term::K::Let: {
                o << "let ";
                if (t->names.size() == 1) {
                    o << t->names[0];
                } else {
                    o << "(";
                    for (size_t i = 0; i < t->names.size(); i++) {
                        if (i) o << ", ";
                        o << t->names[i];
                    }
                    o << ")";
                }
                o << " = ";
                term(t->kids[0]);
                o << " in ";
                term(t->kids[1]);
                return;
            }
            case Term::K::If:
                o << "if ";
                term(t->kids[0]);
                o << " then ";
                term(t->kids[1]);
                o << " else ";
                term(t->kids[2]);
                return;
            case Term::K::Lambda:
                o << "fun ";
                params(t->names, t->annos, 0);
                o << " -> ";
                term(t->kids[0]);
                return;
            case Term::K::Fix:
                o << "fix " << t->names[0] << " ";
                params(t->names, t->annos, 1);
                if (t->tyAnno) o << " : " << print_type(t->tyAnno);
                o << " = ";
                term(t->kids[0]);
                return;
            case Term::K::App: {
                atom(t->kids[0]);
                for (size_t i = 1; i < t->kids.size(); i++) {
                    o << " ";
                    atom(t->kids[i]);
                }
                return;
            }
            case Term::K::Raise:
                o << "raise[" << print_type(t->tyAnno) << "] ";
                atom(t->kids[0]);
                return;
            case Term::K::Try:
                o << "try[" << print_type(t->tyAnno) << "] ";
                term(t->kids[0]);
                o << " with " << t->name << " -> ";
                term(t->kids[1]);
                return;
            case Term::K::Effect:
                o << "perform " << t->name << "(";
                atom(t->kids[0]);
                o << "; ";
                term(t->kids[1]);
                o << ")";
                return;
            case Term::K::Handle: {
                o << "handle ";
                term(t->kids[0]);
                o << " with { return " << t->handler->retName << " -> ";
                term(t->handler->retBody);
                for (auto& c : t->handler->clauses) {
                    o << " | " << c.op << "(" << c.x << "; " << c.kont << ") -> ";
                    term(c.body);
                }
                o << " }";
                return;
            }
            case Term::K::SymEq:
                atom(t->kids[0]);
                o << " == ";
                atom(t->kids[1]);
                return;
            case Term::K::Tuple: {
                o << "(";
                for (size_t i = 0; i < t->kids.size(); i++) {
                    if (i) o << ", ";
                    term(t->kids[i]);
                }
                o << ")";
                return;
            }
            case Term::K::Proj:
                atom(t->kids[0]);
                o << "." << t->idx;
                return;
        }
    }
};

} // namespace

std::string print_term(const TermPtr& t) {
    Printer p;
    p.term(t);
    return p.o.str();
}

// ---- letrec desugaring ----
// letrec f1 .. fn in M unfolds each fi to a fix whose body re-binds the other
// n-1 functions; shared subterms keep the expansion a DAG.

namespace {

struct RecExpander {
    const std::vector<RecBinding>& binds;
    bool nary;
    std::map<std::pair<uint64_t, const Term*>, TermPtr> memo;

    TermPtr fixOf(size_t i, uint64_t mask) {
        auto& b = binds[i];
        uint64_t inner = mask & ~(uint64_t(1) << i);
        TermPtr body = expand(inner, b.body);
        if (nary) return t_fix(b.name, b.params, body, b.annos);
        // curried: fix f(p1) = fun p2 -> ... -> body
        for (size_t j = b.params.size() - 1; j >= 1; j--)
            body = t_lambda(b.params[j], body, b.annos[j]);
        return t_fix(b.name, {b.params[0]}, body, {b.annos[0]});
    }

    TermPtr expand(uint64_t mask, const TermPtr& m) {
        if (mask == 0) return m;
        auto key = std::make_pair(mask, m.get());
        auto it = memo.find(key);
        if (it != memo.end()) return it->second;
        TermPtr res = m;
        for (int i = (int)binds.size() - 1; i >= 0; i--) {
            if (!(mask & (uint64_t(1) << i))) continue;
            res = t_let(binds[i].name, fixOf(i, mask), res);
        }
        memo[key] = res;
        return res;
    }
};

} // namespace

TermPtr desugar_letrec(const std::vector<RecBinding>& binds, TermPtr body) {
    if (binds.size() > 60) throw LabError("letrec too wide");
    for (auto& b : binds)
        if (b.params.empty()) throw LabError("letrec binding '" + b.name + "' needs parameters");
    RecExpander e{binds, false, {}};
    return e.expand((uint64_t(1) << binds.size()) - 1, std::move(body));
}

TermPtr desugar_letrec_nary(const std::vector<RecBinding>& binds, TermPtr body) {
    if (binds.size() > 60) throw LabError("letrec too wide");
    for (auto& b : binds)
        if (b.params.empty()) throw LabError("letrec binding '" + b.name + "' needs parameters");
    RecExpander e{binds, true, {}};
    return e.expand((uint64_t(1) << binds.size()) - 1, std::move(body));
}

// ---- Minsky machines ----

MinskyMachine parse_minsky(const std::string& text) {
    std::map<int, MinskyInstr> instrs;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto fail = [&](const std::string& msg) {
        throw LabError("minsky: " + msg, {lineno, 1, lineno, 1});
    };
    while (std::getline(in, line)) {
        lineno++;
        size_t h = line.find('#');
        if (h != std::string::npos) line = line.substr(0, h);
        std::istringstream ls(line);
        std::string tok;
        if (!(ls >> tok)) continue;
        if (tok.back() != ':') fail("expected 'i:' at '" + tok + "'");
        int idx = std::stoi(tok.substr(0, tok.size() - 1));
        if (instrs.count(idx)) fail("duplicate index " + std::to_string(idx));
        std::string op;
        if (!(ls >> op)) fail("missing instruction");
        MinskyInstr ins;
        if (op == "halt") {
            ins.k = MinskyInstr::K::Halt;
        } else if (op == "inc") {
            ins.k = MinskyInstr::K::Inc;
            std::string kw;
            if (!(ls >> ins.reg >> kw >> ins.next) || kw != "goto") fail("bad inc line");
        } else if (op == "if") {
            ins.k = MinskyInstr::K::CondDec;
            std::string kwThen, kwElse;
            if (!(ls >> ins.reg >> kwThen >> ins.next >> kwElse >> ins.alt) || kwThen != "then" ||
                kwElse != "else")
                fail("bad if line");
        } else {
            fail("unknown instruction '" + op + "'");
        }
        if (ins.k != MinskyInstr::K::Halt && ins.reg != 0 && ins.reg != 1)
            fail("register must be 0 or 1");
        std::string extra;
        if (ls >> extra) fail("trailing tokens '" + extra + "'");
        instrs[idx] = ins;
    }
    if (!instrs.count(0)) throw LabError("minsky: missing index 0");
    MinskyMachine m;
    int maxIdx = instrs.rbegin()->first;
    for (int i = 0; i <= maxIdx; i++) {
        auto it = instrs.find(i);
        if (it == instrs.end()) throw LabError("minsky: missing index " + std::to_string(i));
        m.instrs.push_back(it->second);
    }
    for (size_t i = 0; i < m.instrs.size(); i++) {
        auto& ins = m.instrs[i];
        auto check = [&](int tgt) {
            if (tgt < 0 || tgt >= (int)m.instrs.size())
                throw LabError("minsky: dangling target " + std::to_string(tgt) + " at " +
                               std::to_string(i));
        };
        if (ins.k == MinskyInstr::K::Inc) check(ins.next);
        if (ins.k == MinskyInstr::K::CondDec) {
            check(ins.next);
            check(ins.alt);
        }
    }
    return m;
}

std::string print_minsky(const MinskyMachine& m) {
    std::ostringstream o;
    for (size_t i = 0; i < m.instrs.size(); i++) {
        auto& ins = m.instrs[i];
        o << i << ": ";
        switch (ins.k) {
            case MinskyInstr::K::Halt: o << "halt"; break;
            case MinskyInstr::K::Inc: o << "inc " << ins.reg << " goto " << ins.next; break;
            case MinskyInstr::K::CondDec:
                o << "if " << ins.reg << " then " << ins.next << " else " << ins.alt;
                break;
        }
        o << "\n";
    }
    return o.str();
}

} // namespace lab
