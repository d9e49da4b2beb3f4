#include "lab/typecheck.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <sstream>

namespace lab {

// ---- environments and types ----

const FullTypePtr* TypeEnv::find(const std::string& x) const {
    for (auto& it : items)
        if (it.first == x) return &it.second;
    return nullptr;
}

std::string TypeEnv::str() const {
    std::ostringstream o;
    for (size_t i = 0; i < items.size(); i++) {
        if (i) o << ", ";
        o << items[i].first << ": " << print_fulltype(items[i].second);
    }
    return o.str();
}

namespace {
FullTypePtr leaf(FullType::K k) {
    FullType t{k};
    return std::make_shared<const FullType>(std::move(t));
}
} // namespace

FullTypePtr ft_unit() {
    static FullTypePtr t = leaf(FullType::K::Unit);
    return t;
}

FullTypePtr ft_base() {
    static FullTypePtr t = leaf(FullType::K::Base);
    return t;
}

FullTypePtr ft_any() {
    static FullTypePtr t = leaf(FullType::K::AnyBase);
    return t;
}

FullTypePtr ft_ref(FullTypePtr elem) {
    FullType t{FullType::K::Ref};
    t.elem = std::move(elem);
    return std::make_shared<const FullType>(std::move(t));
}

FullTypePtr ft_fun(std::vector<FullTypePtr> args, int store, FullTypePtr ret) {
    FullType t{FullType::K::Fun};
    t.args = std::move(args);
    t.store = store;
    t.ret = std::move(ret);
    return std::make_shared<const FullType>(std::move(t));
}

FullTypePtr ft_recfun(std::vector<FullTypePtr> args, TypeEnv delta, FullTypePtr ret) {
    FullType t{FullType::K::RecFun};
    t.args = std::move(args);
    t.delta = std::move(delta);
    t.ret = std::move(ret);
    return std::make_shared<const FullType>(std::move(t));
}

FullTypePtr ft_hole(int id) {
    FullType t{FullType::K::Hole};
    t.hole = id;
    return std::make_shared<const FullType>(std::move(t));
}

bool ft_eq(const FullTypePtr& a, const FullTypePtr& b) {
    if (a.get() == b.get()) return true;
    if (!a || !b) return false;
    if (a->k != b->k) return false;
    switch (a->k) {
        case FullType::K::Unit:
        case FullType::K::Base:
        case FullType::K::AnyBase: return true;
        case FullType::K::Hole: return a->hole == b->hole;
        case FullType::K::Ref: return ft_eq(a->elem, b->elem);
        case FullType::K::Fun:
            if (a->store != b->store || a->args.size() != b->args.size()) return false;
            for (size_t i = 0; i < a->args.size(); i++)
                if (!ft_eq(a->args[i], b->args[i])) return false;
            return ft_eq(a->ret, b->ret);
        case FullType::K::RecFun:
            if (a->args.size() != b->args.size()) return false;
            for (size_t i = 0; i < a->args.size(); i++)
                if (!ft_eq(a->args[i], b->args[i])) return false;
            return env_eq(a->delta, b->delta) && ft_eq(a->ret, b->ret);
    }
    return false;
}

bool env_eq(const TypeEnv& a, const TypeEnv& b) {
    if (a.items.size() != b.items.size()) return false;
    for (size_t i = 0; i < a.items.size(); i++)
        if (a.items[i].first != b.items[i].first || !ft_eq(a.items[i].second, b.items[i].second))
            return false;
    return true;
}

std::string print_fulltype(const FullTypePtr& t) {
    if (!t) return "<none>";
    auto paren = [](const FullTypePtr& u) {
        std::string s = print_fulltype(u);
        if (u->k == FullType::K::Fun || u->k == FullType::K::RecFun) return "(" + s + ")";
        return s;
    };
    switch (t->k) {
        case FullType::K::Unit: return "unit";
        case FullType::K::Base: return "b";
        case FullType::K::AnyBase: return "b?";
        case FullType::K::Hole: return "?" + std::to_string(t->hole);
        case FullType::K::Ref: return paren(t->elem) + " ref";
        case FullType::K::Fun: {
            std::string a;
            if (t->args.size() == 1) {
                a = paren(t->args[0]);
            } else {
                a = "(";
                for (size_t i = 0; i < t->args.size(); i++) a += (i ? ", " : "") + print_fulltype(t->args[i]);
                a += ")";
            }
            return a + " ->[" + std::to_string(t->store) + "] " + print_fulltype(t->ret);
        }
        case FullType::K::RecFun: {
            std::string a;
            if (t->args.size() == 1) {
                a = paren(t->args[0]);
            } else {
                a = "(";
                for (size_t i = 0; i < t->args.size(); i++) a += (i ? ", " : "") + print_fulltype(t->args[i]);
                a += ")";
            }
            return a + " ->{" + t->delta.str() + "} " + print_fulltype(t->ret);
        }
    }
    return "<none>";
}

bool sharable(const FullTypePtr& t) {
    switch (t->k) {
        case FullType::K::Unit:
        case FullType::K::Base:
        case FullType::K::AnyBase:
        case FullType::K::RecFun:
        case FullType::K::Hole: return true;
        case FullType::K::Ref: return false;
        case FullType::K::Fun: return t->store == 0;
    }
    return true;
}

int size_cells(const FullTypePtr& rho) {
    switch (rho->k) {
        case FullType::K::Base:
        case FullType::K::AnyBase: return 1;
        case FullType::K::Ref: return size_cells(rho->elem);
        default: return 0;
    }
}

int store_size(const FullTypePtr& t) {
    switch (t->k) {
        case FullType::K::Fun: return t->store;
        case FullType::K::Ref: return size_cells(t->elem);
        default: return 0;
    }
}

int store_size(const TypeEnv& g) {
    int n = 0;
    for (auto& it : g.items) n += store_size(it.second);
    return n;
}

TypeEnv env_drop(const TypeEnv& g, const std::string& x) {
    TypeEnv out;
    for (auto& it : g.items) {
        if (it.first == x && !sharable(it.second)) continue;
        out.items.push_back(it);
    }
    return out;
}

TypeEnv env_drop_if(const TypeEnv& g, const std::string& x, const FullTypePtr& rho) {
    TypeEnv out;
    for (auto& it : g.items) {
        if (it.first == x && !sharable(rho)) continue;
        out.items.push_back(it);
    }
    return out;
}

TypeEnv env_remove(const TypeEnv& g, const std::string& x) {
    TypeEnv out;
    for (auto& it : g.items)
        if (it.first != x) out.items.push_back(it);
    return out;
}

TypeEnv env_remove_all(const TypeEnv& g, const std::vector<std::string>& xs) {
    std::set<std::string> s(xs.begin(), xs.end());
    TypeEnv out;
    for (auto& it : g.items)
        if (!s.count(it.first)) out.items.push_back(it);
    return out;
}

std::pair<TypeEnv, TypeEnv> split_env(const TypeEnv& g, const std::vector<std::string>& s) {
    std::set<std::string> in(s.begin(), s.end());
    TypeEnv left, right;
    for (auto& it : g.items) {
        bool inS = in.count(it.first) > 0;
        if (inS) left.items.push_back(it);
        if (!inS || sharable(it.second)) right.items.push_back(it);
    }
    return {left, right};
}

bool env_subseq(const TypeEnv& small, const TypeEnv& big) {
    size_t j = 0;
    for (auto& it : small.items) {
        while (j < big.items.size() &&
               !(big.items[j].first == it.first && ft_eq(big.items[j].second, it.second)))
            j++;
        if (j == big.items.size()) return false;
        j++;
    }
    return true;
}

FullTypePtr full_of_surface(const TypeExprPtr& t, BaseKind base) {
    if (!t) throw LabError("missing type annotation");
    switch (t->k) {
        case TypeExpr::K::Unit: return ft_unit();
        case TypeExpr::K::Bool:
            if (base != BaseKind::Bool) throw LabError("bool annotation in an int program");
            return ft_base();
        case TypeExpr::K::Int:
            if (base != BaseKind::Int) throw LabError("int annotation in a bool program");
            return ft_base();
        case TypeExpr::K::Ref: {
            FullTypePtr e = full_of_surface(t->a, base);
            if (e->k != FullType::K::Base && e->k != FullType::K::Ref)
                throw LabError("reference content must be a base or reference type");
            return ft_ref(e);
        }
        case TypeExpr::K::Fun: {
            if (t->store < 0) throw LabError("function annotation needs a store size ->[n]");
            FullTypePtr a = full_of_surface(t->a, base);
            FullTypePtr r = full_of_surface(t->b, base);
            return ft_fun({a}, t->store, r);
        }
        default: throw LabError("not a reference-language type");
    }
}

std::string Diag::str() const {
    std::string s = "[" + rule + "] " + msg;
    if (!binding.empty()) s += " (" + binding + ")";
    s += " at " + span.str();
    return s;
}

// ---- ownership checker ----

namespace {

struct Reject {
    Diag d;
};

struct Refl {
    BaseKind base;
    std::shared_ptr<TypeInfo> info = std::make_shared<TypeInfo>();
    std::unordered_map<int, FullTypePtr> holes;
    int nextHole = 0;

    [[noreturn]] void fail(const std::string& rule, const std::string& msg, const TermPtr& at,
                           const std::string& binding = "") {
        throw Reject{Diag{rule, msg, binding, at->span}};
    }

    FullTypePtr resolve(FullTypePtr t) const {
        while (t->k == FullType::K::Hole) {
            auto it = holes.find(t->hole);
            if (it == holes.end()) break;
            t = it->second;
        }
        return t;
    }

    bool occurs(const FullTypePtr& t0, int hole) const {
        FullTypePtr t = resolve(t0);
        switch (t->k) {
            case FullType::K::Hole: return t->hole == hole;
            case FullType::K::Ref: return occurs(t->elem, hole);
            case FullType::K::Fun:
            case FullType::K::RecFun: {
                for (auto& a : t->args)
                    if (occurs(a, hole)) return true;
                if (t->k == FullType::K::RecFun)
                    for (auto& it : t->delta.items)
                        if (occurs(it.second, hole)) return true;
                return occurs(t->ret, hole);
            }
            default: return false;
        }
    }

    std::optional<FullTypePtr> join(const FullTypePtr& a0, const FullTypePtr& b0) {
        FullTypePtr a = resolve(a0), b = resolve(b0);
        if (a.get() == b.get()) return a;
        if (a->k == FullType::K::Hole && b->k == FullType::K::Hole && a->hole == b->hole) return a;
        if (a->k == FullType::K::Hole) {
            if (occurs(b, a->hole)) return std::nullopt;
            holes[a->hole] = b;
            return b;
        }
        if (b->k == FullType::K::Hole) {
            if (occurs(a, b->hole)) return std::nullopt;
            holes[b->hole] = a;
            return a;
        }
        if (a->k == FullType::K::AnyBase) {
            if (b->k == FullType::K::AnyBase || b->k == FullType::K::Base || b->k == FullType::K::Unit)
                return b;
            return std::nullopt;
        }
        if (b->k == FullType::K::AnyBase) {
            if (a->k == FullType::K::Base || a->k == FullType::K::Unit) return a;
            return std::nullopt;
        }
        if (a->k != b->k) return std::nullopt;
        switch (a->k) {
            case FullType::K::Unit:
            case FullType::K::Base: return a;
            case FullType::K::Ref: {
                auto e = join(a->elem, b->elem);
                if (!e) return std::nullopt;
                return ft_ref(*e);
            }
            case FullType::K::Fun: {
                if (a->store != b->store || a->args.size() != b->args.size()) return std::nullopt;
                std::vector<FullTypePtr> args;
                for (size_t i = 0; i < a->args.size(); i++) {
                    auto x = join(a->args[i], b->args[i]);
                    if (!x) return std::nullopt;
                    args.push_back(*x);
                }
                auto r = join(a->ret, b->ret);
                if (!r) return std::nullopt;
                return ft_fun(std::move(args), a->store, *r);
            }
            case FullType::K::RecFun: {
                if (a->args.size() != b->args.size()) return std::nullopt;
                if (!env_eq(a->delta, b->delta)) return std::nullopt;
                std::vector<FullTypePtr> args;
                for (size_t i = 0; i < a->args.size(); i++) {
                    auto x = join(a->args[i], b->args[i]);
                    if (!x) return std::nullopt;
                    args.push_back(*x);
                }
                auto r = join(a->ret, b->ret);
                if (!r) return std::nullopt;
                return ft_recfun(std::move(args), a->delta, *r);
            }
            default: return std::nullopt;
        }
    }

    std::optional<TypeEnv> envJoin(const TypeEnv& a, const TypeEnv& b) {
        if (a.items.size() != b.items.size()) return std::nullopt;
        TypeEnv out;
        for (size_t i = 0; i < a.items.size(); i++) {
            if (a.items[i].first != b.items[i].first) return std::nullopt;
            auto t = join(a.items[i].second, b.items[i].second);
            if (!t) return std::nullopt;
            out.items.emplace_back(a.items[i].first, *t);
        }
        return out;
    }

    FullTypePtr deepResolve(const FullTypePtr& t0) const {
        FullTypePtr t = resolve(t0);
        switch (t->k) {
            case FullType::K::Ref: return ft_ref(deepResolve(t->elem));
            case FullType::K::Fun: {
                std::vector<FullTypePtr> args;
                for (auto& a : t->args) args.push_back(deepResolve(a));
                return ft_fun(std::move(args), t->store, deepResolve(t->ret));
            }
            case FullType::K::RecFun: {
                std::vector<FullTypePtr> args;
                for (auto& a : t->args) args.push_back(deepResolve(a));
                return ft_recfun(std::move(args), deepResolve(t->delta), deepResolve(t->ret));
            }
            default: return t;
        }
    }

    TypeEnv deepResolve(const TypeEnv& g) const {
        TypeEnv out;
        for (auto& it : g.items) out.items.emplace_back(it.first, deepResolve(it.second));
        return out;
    }

    FullTypePtr annoType(const TypeExprPtr& anno, const TermPtr& at, const std::string& rule,
                         const std::string& binding) {
        try {
            return full_of_surface(anno, base);
        } catch (LabError& e) {
            fail(rule, e.what(), at, binding);
        }
    }

    FullTypePtr lookupVar(const TypeEnv& g, const TermPtr& operand, const std::string& rule) {
        if (operand->k != Term::K::Var)
            fail(rule, "operand must be a variable", operand);
        auto* t = g.find(operand->name);
        if (!t) fail(rule, "variable not available here (unbound or already consumed)", operand, operand->name);
        return *t;
    }

    void requireBase(const TypeEnv& g, const TermPtr& operand, const std::string& rule) {
        FullTypePtr t = lookupVar(g, operand, rule);
        if (!join(t, ft_base()))
            fail(rule, "operand must have base type, got " + print_fulltype(resolve(t)), operand,
                 operand->name);
    }

    void checkDeltaNormal(const TypeEnv& delta, const TermPtr& at, const std::string& rule) {
        for (auto& it : delta.items)
            if (it.second->k == FullType::K::RecFun)
                fail(rule, "closure captures recursive function", at, it.first);
    }

    Judgment check(const TypeEnv& g, const TermPtr& m) {
        Judgment j = doCheck(g, m);
        info->judgments[m->id] = j;
        return j;
    }

    Judgment doCheck(const TypeEnv& g, const TermPtr& m) {
        switch (m->k) {
            case Term::K::Unit: return {g, m, ft_unit(), g};
            case Term::K::ConstB:
                if (base != BaseKind::Bool)
                    fail("T-Const", "boolean constant in an int program", m);
                return {g, m, ft_base(), g};
            case Term::K::ConstI:
                if (base != BaseKind::Int)
                    fail("T-Const", "integer constant in a bool program", m);
                return {g, m, ft_base(), g};
            case Term::K::AnyBase: return {g, m, ft_base(), g};
            case Term::K::Fail: return {g, m, ft_any(), g};

            case Term::K::Var: {
                auto* t = g.find(m->name);
                if (!t) fail("T-Var", "variable not available here (unbound or already consumed)", m, m->name);
                return {g, m, *t, env_drop(g, m->name)};
            }

            case Term::K::PrimOp: {
                static const std::set<std::string> boolOps{"not", "and", "or"};
                static const std::set<std::string> intOps{"+", "-", "=", "<", "<=", ">", ">="};
                bool ok = base == BaseKind::Bool ? boolOps.count(m->name) > 0 : intOps.count(m->name) > 0;
                if (!ok)
                    fail("T-Op", "operator not available at this base type", m, m->name);
                size_t arity = m->name == "not" ? 1 : 2;
                if (m->kids.size() != arity)
                    fail("T-Op", "wrong operand count", m, m->name);
                for (auto& k : m->kids) requireBase(g, k, "T-Op");
                return {g, m, ft_base(), g};
            }

            case Term::K::Deref: {
                FullTypePtr t = resolve(lookupVar(g, m->kids[0], "T-Deref"));
                if (t->k != FullType::K::Ref)
                    fail("T-Deref", "dereference of a non-reference, got " + print_fulltype(t),
                         m->kids[0], m->kids[0]->name);
                return {g, m, t->elem, env_drop_if(g, m->kids[0]->name, t->elem)};
            }

            case Term::K::MkRef: {
                FullTypePtr t = resolve(lookupVar(g, m->kids[0], "T-Mkref"));
                if (t->k != FullType::K::Base && t->k != FullType::K::Ref &&
                    t->k != FullType::K::AnyBase)
                    fail("T-Mkref", "reference content must be a base or reference value, got " +
                         print_fulltype(t), m->kids[0], m->kids[0]->name);
                return {g, m, ft_ref(t), env_drop(g, m->kids[0]->name)};
            }

            case Term::K::Assign: {
                FullTypePtr ty = resolve(lookupVar(g, m->kids[0], "T-Assign"));
                if (ty->k != FullType::K::Ref)
                    fail("T-Assign", "assignment to a non-reference, got " + print_fulltype(ty),
                         m->kids[0], m->kids[0]->name);
                FullTypePtr rho = ty->elem;
                FullTypePtr tx = lookupVar(g, m->kids[1], "T-Assign");
                if (!join(tx, rho))
                    fail("T-Assign", "assigned value has type " + print_fulltype(resolve(tx)) +
                         " but the reference holds " + print_fulltype(rho), m->kids[1], m->kids[1]->name);
                return {g, m, ft_unit(), env_drop_if(g, m->kids[1]->name, rho)};
            }

            case Term::K::Let: {
                if (m->names.size() != 1)
                    fail("T-Let", "patterns are not available in the reference language", m);
                Judgment j1 = check(g, m->kids[0]);
                FullTypePtr bt = resolve(j1.type);
                if (bt->k == FullType::K::Hole)
                    fail("T-Let", "cannot infer the type of this binding; annotate the enclosing fix",
                         m, m->names[0]);
                TypeEnv g2 = j1.post;
                g2.push(m->names[0], bt);
                Judgment j2 = check(g2, m->kids[1]);
                return {g, m, j2.type, env_remove(j2.post, m->names[0])};
            }

            case Term::K::If: {
                requireBase(g, m->kids[0], "T-If");
                Judgment j1 = check(g, m->kids[1]);
                Judgment j2 = check(g, m->kids[2]);
                auto t = join(j1.type, j2.type);
                if (!t)
                    fail("T-If", "branches have different types: " + print_fulltype(resolve(j1.type)) +
                         " vs " + print_fulltype(resolve(j2.type)), m);
                auto post = envJoin(j1.post, j2.post);
                if (!post)
                    fail("T-If", "branches leave different environments: [" + j1.post.str() +
                         "] vs [" + j2.post.str() + "]", m);
                return {g, m, *t, *post};
            }

            case Term::K::Lambda: {
                if (m->names.size() != 1)
                    fail("T-Fun", "functions take exactly one parameter here", m);
                if (m->annos.empty() || !m->annos[0])
                    fail("T-Fun", "parameter annotation required", m, m->names[0]);
                FullTypePtr t1 = annoType(m->annos[0], m, "T-Fun", m->names[0]);
                auto [delta, rest] = split_env(g, free_vars(m));
                checkDeltaNormal(delta, m, "T-Fun");
                TypeEnv inner = delta;
                inner.push(m->names[0], t1);
                Judgment j = check(inner, m->kids[0]);
                if (!envJoin(j.post, inner))
                    fail("T-Fun", "closure body must leave its environment as it found it: [" +
                         j.post.str() + "] vs [" + inner.str() + "]", m);
                FullTypePtr t2 = resolve(j.type);
                if (t2->k == FullType::K::Hole)
                    fail("T-Fun", "cannot infer the body type; annotate the enclosing fix", m);
                info->closureDelta[m->id] = delta;
                return {g, m, ft_fun({t1}, store_size(delta), t2), rest};
            }

            case Term::K::Fix: {
                std::vector<FullTypePtr> params;
                for (size_t i = 1; i < m->names.size(); i++) {
                    if (i >= m->annos.size() || !m->annos[i])
                        fail("T-RFun", "parameter annotation required", m, m->names[i]);
                    params.push_back(annoType(m->annos[i], m, "T-RFun", m->names[i]));
                }
                FullTypePtr retT =
                    m->tyAnno ? annoType(m->tyAnno, m, "T-RFun", m->names[0]) : ft_hole(nextHole++);
                auto [delta, rest] = split_env(g, free_vars(m));
                checkDeltaNormal(delta, m, "T-RFun");
                FullTypePtr rf = ft_recfun(params, delta, retT);
                TypeEnv inner = delta;
                inner.push(m->names[0], rf);
                for (size_t i = 0; i < params.size(); i++) inner.push(m->names[i + 1], params[i]);
                Judgment j = check(inner, m->kids[0]);
                if (!join(j.type, retT))
                    fail("T-RFun", "body type " + print_fulltype(resolve(j.type)) +
                         " does not match the declared return type " + print_fulltype(resolve(retT)), m);
                if (!envJoin(j.post, inner))
                    fail("T-RFun", "recursive body must leave its environment as it found it: [" +
                         j.post.str() + "] vs [" + inner.str() + "]", m);
                FullTypePtr t2 = resolve(retT);
                if (t2->k == FullType::K::Hole)
                    fail("T-RFun", "cannot infer the return type; annotate the fix with : t", m,
                         m->names[0]);
                info->closureDelta[m->id] = delta;
                return {g, m, ft_fun(params, store_size(delta), t2), rest};
            }

            case Term::K::App: {
                if (m->kids[0]->k != Term::K::Var)
                    fail("T-App", "application head must be a variable", m->kids[0]);
                const std::string& f = m->kids[0]->name;
                FullTypePtr tf = resolve(lookupVar(g, m->kids[0], "T-App"));
                size_t nargs = m->kids.size() - 1;
                if (tf->k == FullType::K::Fun || tf->k == FullType::K::RecFun) {
                    if (tf->args.size() != nargs)
                        fail(tf->k == FullType::K::Fun ? "T-App" : "T-RApp",
                             "expected " + std::to_string(tf->args.size()) + " arguments, got " +
                             std::to_string(nargs), m, f);
                } else {
                    fail("T-App", "variable is not a function, got " + print_fulltype(tf),
                         m->kids[0], f);
                }
                const char* rule = tf->k == FullType::K::Fun ? "T-App" : "T-RApp";
                std::vector<std::string> argNames;
                for (size_t i = 0; i < nargs; i++) {
                    FullTypePtr ta = lookupVar(g, m->kids[i + 1], rule);
                    if (!join(ta, tf->args[i]))
                        fail(rule, "argument has type " + print_fulltype(resolve(ta)) +
                             " but the function expects " + print_fulltype(tf->args[i]),
                             m->kids[i + 1], m->kids[i + 1]->name);
                    // a non-sharable argument may appear only once (and may not be
                    // the function itself): the call returns updated ownership per
                    // position, so aliased positions would come back desynchronized
                    const std::string& an = m->kids[i + 1]->name;
                    if (!sharable(resolve(ta))) {
                        bool dup = an == f;
                        for (auto& p : argNames) dup = dup || p == an;
                        if (dup)
                            fail(rule, "argument " + an + " aliases another owner in this call",
                                 m->kids[i + 1], an);
                    }
                    argNames.push_back(an);
                }
                if (tf->k == FullType::K::RecFun) {
                    argNames.push_back(f);
                    TypeEnv avail = env_remove_all(g, argNames);
                    if (!env_subseq(tf->delta, avail))
                        fail("T-RApp", "captured environment [" + tf->delta.str() +
                             "] is not available at this call site [" + avail.str() + "]", m, f);
                }
                return {g, m, tf->ret, g};
            }

            default:
                fail("syntax", "construct not available in the reference language", m);
        }
    }
};

} // namespace

ReflResult typecheck_refl(const TypeEnv& env, const TermPtr& m0, BaseKind base) {
    ReflResult out;
    {
        std::set<std::string> seen;
        for (auto& it : env.items) {
            if (!it.second || !seen.insert(it.first).second) {
                out.diag = {"env", "environment bindings must be distinct and typed", it.first, m0->span};
                return out;
            }
        }
        for (auto& it : env.items) {
            if (it.second->k != FullType::K::RecFun) continue;
            if (!env_subseq(it.second->delta, env)) {
                out.diag = {"env", "captured environment is not part of the ambient environment",
                            it.first, m0->span};
                return out;
            }
        }
    }
    std::vector<std::string> avoid;
    for (auto& it : env.items) avoid.push_back(it.first);
    TermPtr m = uniquify(m0, avoid);
    Refl ck{base};
    try {
        Judgment j = ck.check(env, m);
        for (auto& [id, jj] : ck.info->judgments) {
            jj.pre = ck.deepResolve(jj.pre);
            jj.type = ck.deepResolve(jj.type);
            jj.post = ck.deepResolve(jj.post);
        }
        for (auto& [id, d] : ck.info->closureDelta) d = ck.deepResolve(d);
        // fail with no surrounding context: give it the program's base type
        Judgment& root = ck.info->judgments[m->id];
        if (root.type->k == FullType::K::AnyBase) root.type = ft_base();
        out.ok = true;
        out.judgment = ck.info->judgments[m->id];
        out.judgment.term = m;
        out.info = ck.info;
    } catch (Reject& r) {
        out.diag = r.d;
    }
    return out;
}

} // namespace lab
