#include "lab/eval.hpp"

#include <algorithm>
#include <optional>
#include <set>
#include <sstream>

namespace lab {

// ---- values ----

namespace {

ValuePtr mk(Value v) { return std::make_shared<Value>(std::move(v)); }

} // namespace

ValuePtr v_unit() {
    static ValuePtr u = mk({Value::K::Unit});
    return u;
}
ValuePtr v_bool(bool b) {
    Value v{Value::K::ConstB};
    v.bval = b;
    return mk(v);
}
ValuePtr v_int(long n) {
    Value v{Value::K::ConstI};
    v.ival = n;
    return mk(v);
}
ValuePtr v_base(BaseKind k, bool truth) {
    return k == BaseKind::Bool ? v_bool(truth) : v_int(truth ? 1 : 0);
}
ValuePtr v_loc(int l) {
    Value v{Value::K::Loc};
    v.loc = l;
    return mk(v);
}
ValuePtr v_sym(int l) {
    Value v{Value::K::Sym};
    v.sym = l;
    return mk(v);
}
ValuePtr v_clos(TermPtr fun, Env env, std::shared_ptr<const TypeEnv> delta) {
    Value v{Value::K::Clos};
    v.fun = std::move(fun);
    v.env = std::move(env);
    v.delta = std::move(delta);
    return mk(v);
}
ValuePtr v_tuple(std::vector<ValuePtr> elems) {
    Value v{Value::K::Tuple};
    v.elems = std::move(elems);
    return mk(v);
}

bool value_eq(const ValuePtr& a, const ValuePtr& b) {
    if (a == b) return true;
    if (!a || !b || a->k != b->k) return false;
    switch (a->k) {
        case Value::K::Unit: return true;
        case Value::K::ConstB: return a->bval == b->bval;
        case Value::K::ConstI: return a->ival == b->ival;
        case Value::K::Loc: return a->loc == b->loc;
        case Value::K::Sym: return a->sym == b->sym;
        case Value::K::Clos: {
            if (a->fun != b->fun) return false;
            if (a->env.size() != b->env.size()) return false;
            auto it = b->env.begin();
            for (auto& [x, v] : a->env) {
                if (it->first != x || !value_eq(v, it->second)) return false;
                ++it;
            }
            return true;
        }
        case Value::K::Tuple: {
            if (a->elems.size() != b->elems.size()) return false;
            for (size_t i = 0; i < a->elems.size(); i++)
                if (!value_eq(a->elems[i], b->elems[i])) return false;
            return true;
        }
    }
    return false;
}

std::string print_value(const ValuePtr& v) {
    if (!v) return "<null>";
    switch (v->k) {
        case Value::K::Unit: return "()";
        case Value::K::ConstB: return v->bval ? "true" : "false";
        case Value::K::ConstI: return std::to_string(v->ival);
        case Value::K::Loc: return "#" + std::to_string(v->loc);
        case Value::K::Sym: return "sym" + std::to_string(v->sym);
        case Value::K::Clos:
            return v->fun->k == Term::K::Fix ? "<fix " + v->fun->names[0] + ">" : "<fun>";
        case Value::K::Tuple: {
            std::string s = "(";
            for (size_t i = 0; i < v->elems.size(); i++) {
                if (i) s += ", ";
                s += print_value(v->elems[i]);
            }
            return s + ")";
        }
    }
    return "?";
}

std::string outcome_kind(const Outcome& o) {
    switch (o.k) {
        case Outcome::K::Val: return "Val";
        case Outcome::K::Fail: return "Fail";
        case Outcome::K::OutOfFuel: return "OutOfFuel";
        case Outcome::K::Stuck: return "Stuck";
        case Outcome::K::Exn: return "Exn";
    }
    return "?";
}

long ChoiceOracle::next() {
    long d;
    if (stream)
        d = stream(used);
    else if (used < forced.size())
        d = forced[used];
    else
        d = fallback;
    used++;
    trace.push_back(d);
    return d;
}

// ---- shared helpers ----

namespace {

Outcome oval(ValuePtr v, Env r = {}, Heap h = {}) {
    Outcome o;
    o.k = Outcome::K::Val;
    o.value = std::move(v);
    o.env = std::move(r);
    o.heap = std::move(h);
    return o;
}
Outcome ofail() {
    Outcome o;
    o.k = Outcome::K::Fail;
    return o;
}
Outcome ofuel() {
    Outcome o;
    o.k = Outcome::K::OutOfFuel;
    return o;
}
Outcome ostuck(const std::string& why, const Term* at = nullptr) {
    Outcome o;
    o.k = Outcome::K::Stuck;
    o.reason = at ? why + " at " + at->span.str() : why;
    return o;
}

bool truthy(const ValuePtr& v, bool& out) {
    if (v->k == Value::K::ConstB) {
        out = v->bval;
        return true;
    }
    if (v->k == Value::K::ConstI) {
        out = v->ival != 0;  // zero reads as false
        return true;
    }
    return false;
}

ValuePtr applyPrim(const std::string& op, const std::vector<ValuePtr>& a) {
    auto bothI = [&] { return a.size() == 2 && a[0]->k == Value::K::ConstI && a[1]->k == Value::K::ConstI; };
    auto bothB = [&] { return a.size() == 2 && a[0]->k == Value::K::ConstB && a[1]->k == Value::K::ConstB; };
    if (op == "not" && a.size() == 1 && a[0]->k == Value::K::ConstB) return v_bool(!a[0]->bval);
    if (op == "and" && bothB()) return v_bool(a[0]->bval && a[1]->bval);
    if (op == "or" && bothB()) return v_bool(a[0]->bval || a[1]->bval);
    if (!bothI()) return nullptr;
    long x = a[0]->ival, y = a[1]->ival;
    if (op == "+") return v_int(x + y);
    if (op == "-") return v_int(x - y);
    if (op == "=") return v_bool(x == y);
    if (op == "<") return v_bool(x < y);
    if (op == "<=") return v_bool(x <= y);
    if (op == ">") return v_bool(x > y);
    if (op == ">=") return v_bool(x >= y);
    return nullptr;
}

Env restrictTo(const Env& r, const TypeEnv& g) {
    Env out;
    for (auto& [x, t] : g.items) {
        auto it = r.find(x);
        if (it != r.end()) out.emplace(x, it->second);
    }
    return out;
}

// ---- big-step source interpreter ----

struct SrcEval {
    long fuel;
    ChoiceOracle& oracle;
    BaseKind base;
    const TypeInfo* info;  // null: plain reference semantics, no drops
    const SourceHooks* hooks;
    int nextLoc = 1;

    const Judgment* J(const TermPtr& t) const {
        if (!info) return nullptr;
        auto it = info->judgments.find(t->id);
        return it == info->judgments.end() ? nullptr : &it->second;
    }

    // erase the bindings the node's judgment consumed
    void applyDrops(const TermPtr& t, Env& r) const {
        const Judgment* j = J(t);
        if (!j) return;
        for (auto& [x, ty] : j->pre.items)
            if (!j->post.contains(x)) r.erase(x);
    }

    // ANF atoms; general subterms are only reachable in unchecked runs
    bool atom(const TermPtr& t, const Env& r, ValuePtr& out) const {
        switch (t->k) {
            case Term::K::Unit: out = v_unit(); return true;
            case Term::K::ConstB: out = v_bool(t->bval); return true;
            case Term::K::ConstI: out = v_int(t->ival); return true;
            case Term::K::Var: {
                auto it = r.find(t->name);
                if (it == r.end()) return false;
                out = it->second;
                return true;
            }
            default: return false;
        }
    }

    // cleanup owed by enclosing frames once the tail position delivers a value
    struct Post {
        bool isRestore;
        Env restore;                     // caller env, reinstated after a call
        std::vector<std::string> erase;  // binders a let discharges
    };

    // let bodies, branches, and call bodies continue the loop instead of
    // recursing; unbounded recursion would otherwise exhaust the C stack
    Outcome ev(TermPtr t, Env r, Heap h) {
        std::vector<Post> posts;
        Outcome out = loop(std::move(t), std::move(r), std::move(h), posts);
        if (out.k == Outcome::K::Val)
            for (auto it = posts.rbegin(); it != posts.rend(); ++it) {
                if (it->isRestore)
                    out.env = std::move(it->restore);
                else
                    for (auto& x : it->erase) out.env.erase(x);
            }
        return out;
    }

    Outcome loop(TermPtr t, Env r, Heap h, std::vector<Post>& posts) {
        for (;;) {
        if (fuel-- <= 0) return ofuel();
        switch (t->k) {
            case Term::K::Fail: return ofail();
            case Term::K::Unit: return oval(v_unit(), std::move(r), std::move(h));
            case Term::K::ConstB: return oval(v_bool(t->bval), std::move(r), std::move(h));
            case Term::K::ConstI: return oval(v_int(t->ival), std::move(r), std::move(h));
            case Term::K::AnyBase:
                return oval(v_base(base, oracle.next() != 0), std::move(r), std::move(h));
            case Term::K::Var: {
                auto it = r.find(t->name);
                if (it == r.end()) return ostuck("unbound variable " + t->name, t.get());
                ValuePtr v = it->second;
                applyDrops(t, r);
                return oval(std::move(v), std::move(r), std::move(h));
            }
            case Term::K::PrimOp: {
                std::vector<ValuePtr> args;
                for (auto& k : t->kids) {
                    ValuePtr v;
                    if (atom(k, r, v)) {
                        args.push_back(std::move(v));
                        continue;
                    }
                    if (info) return ostuck("operator operand is not atomic", t.get());
                    Outcome o = ev(k, std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    args.push_back(std::move(o.value));
                }
                ValuePtr res = applyPrim(t->name, args);
                if (!res) return ostuck("operator " + t->name + " on ill-shaped operands", t.get());
                applyDrops(t, r);
                return oval(std::move(res), std::move(r), std::move(h));
            }
            case Term::K::MkRef: {
                ValuePtr v;
                if (!atom(t->kids[0], r, v)) {
                    if (info) return ostuck("ref operand is not atomic", t.get());
                    Outcome o = ev(t->kids[0], std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    v = std::move(o.value);
                }
                int l = freshLoc(h);
                h.emplace(l, std::move(v));
                applyDrops(t, r);
                return oval(v_loc(l), std::move(r), std::move(h));
            }
            case Term::K::Deref: {
                ValuePtr rv;
                if (!atom(t->kids[0], r, rv)) {
                    if (info) return ostuck("deref operand is not atomic", t.get());
                    Outcome o = ev(t->kids[0], std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    rv = std::move(o.value);
                }
                if (rv->k != Value::K::Loc) return ostuck("dereference of a non-location", t.get());
                auto it = h.find(rv->loc);
                if (it == h.end()) return ostuck("dangling location", t.get());
                ValuePtr v = it->second;
                applyDrops(t, r);
                return oval(std::move(v), std::move(r), std::move(h));
            }
            case Term::K::Assign: {
                ValuePtr rv, v;
                if (!atom(t->kids[0], r, rv) || !atom(t->kids[1], r, v)) {
                    if (info) return ostuck("assignment operand is not atomic", t.get());
                    Outcome o1 = ev(t->kids[0], std::move(r), std::move(h));
                    if (o1.k != Outcome::K::Val) return o1;
                    Outcome o2 = ev(t->kids[1], std::move(o1.env), std::move(o1.heap));
                    if (o2.k != Outcome::K::Val) return o2;
                    r = std::move(o2.env);
                    h = std::move(o2.heap);
                    rv = std::move(o1.value);
                    v = std::move(o2.value);
                }
                if (rv->k != Value::K::Loc) return ostuck("assignment to a non-location", t.get());
                if (!h.count(rv->loc)) return ostuck("dangling location", t.get());
                h[rv->loc] = std::move(v);
                applyDrops(t, r);
                return oval(v_unit(), std::move(r), std::move(h));
            }
            case Term::K::Let: {
                Outcome o1 = ev(t->kids[0], std::move(r), std::move(h));
                if (o1.k != Outcome::K::Val) return o1;
                Env r1 = std::move(o1.env);
                if (t->names.size() == 1) {
                    r1[t->names[0]] = o1.value;
                    if (hooks && hooks->atLet)
                        hooks->atLet(*t, t->names[0], o1.value, r1, o1.heap);
                } else {
                    if (o1.value->k != Value::K::Tuple ||
                        o1.value->elems.size() != t->names.size())
                        return ostuck("pattern arity mismatch", t.get());
                    for (size_t i = 0; i < t->names.size(); i++)
                        r1[t->names[i]] = o1.value->elems[i];
                }
                posts.push_back({false, {}, t->names});  // discharge binders afterwards
                t = t->kids[1];
                r = std::move(r1);
                h = std::move(o1.heap);
                continue;
            }
            case Term::K::Tuple: {
                std::vector<ValuePtr> elems;
                for (auto& k : t->kids) {
                    ValuePtr v;
                    if (atom(k, r, v)) {
                        elems.push_back(std::move(v));
                        continue;
                    }
                    if (info) return ostuck("tuple outside the reference language", t.get());
                    Outcome o = ev(k, std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    elems.push_back(std::move(o.value));
                }
                return oval(v_tuple(std::move(elems)), std::move(r), std::move(h));
            }
            case Term::K::Proj: {
                Outcome o = ev(t->kids[0], std::move(r), std::move(h));
                if (o.k != Outcome::K::Val) return o;
                if (o.value->k != Value::K::Tuple || t->idx < 1 ||
                    (size_t)t->idx > o.value->elems.size())
                    return ostuck("projection from a non-tuple", t.get());
                return oval(o.value->elems[t->idx - 1], std::move(o.env), std::move(o.heap));
            }
            case Term::K::If: {
                ValuePtr c;
                if (t->kids[0]->k == Term::K::AnyBase) {
                    fuel--;
                    c = v_base(base, oracle.next() != 0);
                } else if (!atom(t->kids[0], r, c)) {
                    if (info) return ostuck("condition is not atomic", t.get());
                    Outcome o = ev(t->kids[0], std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    c = std::move(o.value);
                }
                bool b;
                if (!c || !truthy(c, b)) return ostuck("condition is not a base constant", t.get());
                t = t->kids[b ? 1 : 2];
                continue;
            }
            case Term::K::Lambda:
            case Term::K::Fix: {
                std::shared_ptr<const TypeEnv> delta;
                Env captured;
                if (info) {
                    auto it = info->closureDelta.find(t->id);
                    if (it != info->closureDelta.end()) {
                        delta = std::make_shared<TypeEnv>(it->second);
                        captured = restrictTo(r, *delta);
                    }
                    const Judgment* j = J(t);
                    if (j) r = restrictTo(r, j->post);
                } else {
                    for (auto& x : free_vars(t)) {
                        auto it = r.find(x);
                        if (it != r.end()) captured.emplace(x, it->second);
                    }
                }
                return oval(v_clos(t, std::move(captured), std::move(delta)), std::move(r),
                            std::move(h));
            }
            case Term::K::App: {
                ValuePtr fv;
                if (!atom(t->kids[0], r, fv)) {
                    if (info) return ostuck("applied function is not a variable", t.get());
                    Outcome o = ev(t->kids[0], std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    fv = std::move(o.value);
                }
                std::vector<ValuePtr> args;
                for (size_t i = 1; i < t->kids.size(); i++) {
                    ValuePtr v;
                    if (atom(t->kids[i], r, v)) {
                        args.push_back(std::move(v));
                        continue;
                    }
                    if (info) return ostuck("argument is not atomic", t.get());
                    Outcome o = ev(t->kids[i], std::move(r), std::move(h));
                    if (o.k != Outcome::K::Val) return o;
                    r = std::move(o.env);
                    h = std::move(o.heap);
                    args.push_back(std::move(o.value));
                }
                if (!fv || fv->k != Value::K::Clos)
                    return ostuck("application of a non-closure", t.get());
                const TermPtr& fn = fv->fun;
                Env body = fv->env;
                size_t first = fn->k == Term::K::Fix ? 1 : 0;
                if (fn->names.size() - first != args.size())
                    return ostuck("arity mismatch in application", t.get());
                if (fn->k == Term::K::Fix) body[fn->names[0]] = fv;
                for (size_t i = 0; i < args.size(); i++)
                    body[fn->names[first + i]] = std::move(args[i]);
                // the callee's environment dies with the call frame
                posts.push_back({true, std::move(r), {}});
                t = fn->kids[0];
                r = std::move(body);
                continue;
            }
            default:
                return ostuck("construct outside the reference language", t.get());
        }
        }
    }

    int freshLoc(const Heap& h) {
        while (h.count(nextLoc)) nextLoc++;
        return nextLoc++;
    }
};

// ---- big-step target interpreter ----

struct TgtEval {
    long fuel;
    ChoiceOracle& oracle;
    BaseKind base;

    // tail positions loop; values carry no environment so nothing is owed
    Outcome ev(TermPtr t, Env s) {
        for (;;) {
        if (fuel-- <= 0) return ofuel();
        switch (t->k) {
            case Term::K::Fail: return ofail();
            case Term::K::Unit: return oval(v_unit());
            case Term::K::ConstB: return oval(v_bool(t->bval));
            case Term::K::ConstI: return oval(v_int(t->ival));
            case Term::K::AnyBase: return oval(v_base(base, oracle.next() != 0));
            case Term::K::Var: {
                auto it = s.find(t->name);
                if (it == s.end()) return ostuck("unbound variable " + t->name, t.get());
                return oval(it->second);
            }
            case Term::K::PrimOp: {
                std::vector<ValuePtr> args;
                for (auto& k : t->kids) {
                    Outcome o = ev(k, s);
                    if (o.k != Outcome::K::Val) return o;
                    args.push_back(std::move(o.value));
                }
                ValuePtr r = applyPrim(t->name, args);
                if (!r) return ostuck("operator " + t->name + " on ill-shaped operands", t.get());
                return oval(std::move(r));
            }
            case Term::K::Tuple: {
                std::vector<ValuePtr> elems;
                for (auto& k : t->kids) {
                    Outcome o = ev(k, s);
                    if (o.k != Outcome::K::Val) return o;
                    elems.push_back(std::move(o.value));
                }
                return oval(v_tuple(std::move(elems)));
            }
            case Term::K::Proj: {
                Outcome o = ev(t->kids[0], s);
                if (o.k != Outcome::K::Val) return o;
                if (o.value->k != Value::K::Tuple || t->idx < 1 ||
                    (size_t)t->idx > o.value->elems.size())
                    return ostuck("projection from a non-tuple", t.get());
                return oval(o.value->elems[t->idx - 1]);
            }
            case Term::K::Let: {
                Outcome o1 = ev(t->kids[0], s);
                if (o1.k != Outcome::K::Val) return o1;
                if (t->names.size() == 1) {
                    s[t->names[0]] = std::move(o1.value);
                } else {
                    if (o1.value->k != Value::K::Tuple ||
                        o1.value->elems.size() != t->names.size())
                        return ostuck("pattern arity mismatch", t.get());
                    for (size_t i = 0; i < t->names.size(); i++)
                        s[t->names[i]] = o1.value->elems[i];
                }
                t = t->kids[1];
                continue;
            }
            case Term::K::If: {
                Outcome o = ev(t->kids[0], s);
                if (o.k != Outcome::K::Val) return o;
                bool b;
                if (!truthy(o.value, b))
                    return ostuck("condition is not a base constant", t.get());
                t = t->kids[b ? 1 : 2];
                continue;
            }
            case Term::K::Lambda:
            case Term::K::Fix:
                return oval(v_clos(t, s));
            case Term::K::App: {
                Outcome f = ev(t->kids[0], s);
                if (f.k != Outcome::K::Val) return f;
                ValuePtr fv = std::move(f.value);
                std::vector<ValuePtr> args;
                for (size_t i = 1; i < t->kids.size(); i++) {
                    Outcome a = ev(t->kids[i], s);
                    if (a.k != Outcome::K::Val) return a;
                    args.push_back(std::move(a.value));
                }
                for (size_t i = 0; i + 1 < args.size(); i++) {
                    Outcome o = apply(fv, args[i], t.get());
                    if (o.k != Outcome::K::Val) return o;
                    fv = std::move(o.value);
                }
                Env body;
                TermPtr next;
                Outcome bad = bindCall(fv, args.back(), t.get(), body, next);
                if (bad.k != Outcome::K::Val) return bad;
                t = std::move(next);
                s = std::move(body);
                continue;
            }
            default:
                return ostuck("construct outside the target calculus", t.get());
        }
        }
    }

    // sets up the call frame; Val signals success
    Outcome bindCall(const ValuePtr& fv, const ValuePtr& arg, const Term* at, Env& body,
                     TermPtr& next) {
        if (!fv || fv->k != Value::K::Clos) return ostuck("application of a non-closure", at);
        const TermPtr& fn = fv->fun;
        body = fv->env;
        size_t first = fn->k == Term::K::Fix ? 1 : 0;
        size_t nparams = fn->names.size() - first;
        if (fn->k == Term::K::Fix) body[fn->names[0]] = fv;
        if (nparams == 1) {
            body[fn->names[first]] = arg;
        } else {
            // several parameter names stand for a pattern over one tuple
            if (arg->k != Value::K::Tuple || arg->elems.size() != nparams)
                return ostuck("pattern arity mismatch in application", at);
            for (size_t i = 0; i < nparams; i++) body[fn->names[first + i]] = arg->elems[i];
        }
        next = fn->kids[0];
        return oval(v_unit());
    }

    Outcome apply(const ValuePtr& fv, const ValuePtr& arg, const Term* at) {
        Env body;
        TermPtr next;
        Outcome bad = bindCall(fv, arg, at, body, next);
        if (bad.k != Outcome::K::Val) return bad;
        return ev(next, std::move(body));
    }
};

} // namespace

Outcome eval_source(const TermPtr& m, Env r, Heap h, long fuel, ChoiceOracle& oracle,
                    BaseKind base, const TypeInfo* info, const SourceHooks* hooks) {
    SrcEval e{fuel, oracle, base, info, hooks};
    if (!h.empty()) e.nextLoc = h.rbegin()->first + 1;
    // without static drop tables, let-discharge needs distinct binders
    return e.ev(info ? m : uniquify(m), std::move(r), std::move(h));
}

Outcome eval_target(const TermPtr& n, Env s, long fuel, ChoiceOracle& oracle, BaseKind base) {
    TgtEval e{fuel, oracle, base};
    return e.ev(n, s);
}

// ---- small-step interpreter for the extension calculi ----

namespace {

bool isValT(const TermPtr& t) {
    switch (t->k) {
        case Term::K::Unit:
        case Term::K::ConstB:
        case Term::K::ConstI:
        case Term::K::Lambda:
        case Term::K::Fix:
        case Term::K::Label:
            return true;
        case Term::K::Tuple:
            for (auto& k : t->kids)
                if (!isValT(k)) return false;
            return true;
        default:
            return false;
    }
}

ValuePtr valueOfTerm(const TermPtr& t) {
    switch (t->k) {
        case Term::K::Unit: return v_unit();
        case Term::K::ConstB: return v_bool(t->bval);
        case Term::K::ConstI: return v_int(t->ival);
        case Term::K::Label: return v_sym(t->label);
        case Term::K::Lambda:
        case Term::K::Fix: return v_clos(t, {});
        case Term::K::Tuple: {
            std::vector<ValuePtr> es;
            for (auto& k : t->kids) es.push_back(valueOfTerm(k));
            return v_tuple(std::move(es));
        }
        default: return nullptr;
    }
}

ValuePtr constOfTerm(const TermPtr& t) {
    // operands of primitive operators
    if (t->k == Term::K::ConstB) return v_bool(t->bval);
    if (t->k == Term::K::ConstI) return v_int(t->ival);
    return nullptr;
}

TermPtr termOfConst(const ValuePtr& v) {
    return v->k == Value::K::ConstB ? t_bool(v->bval) : t_int(v->ival);
}

struct StepOut {
    enum class K { Stepped, Fail, Raised, Effected, Stuck } k;
    TermPtr t;           // Stepped
    TypeExprPtr ty;      // Raised
    TermPtr payload;     // Raised / Effected
    std::string op;      // Effected
    TermPtr cont;        // Effected: the continuation argument of the operation
    TermPtr fctx;        // Effected: context below the handler, `hole` marks the gap
    std::string hole;
    std::string reason;  // Stuck
};

struct ExtStep {
    Calculus calc;
    HandlerStyle style;
    long fuel;
    ChoiceOracle& oracle;
    std::vector<CallEvent>* callTrace;
    int nextLabel = 0;
    int nextHole = 0;

    static StepOut stepped(TermPtr t) { return {StepOut::K::Stepped, std::move(t)}; }
    static StepOut stuck(std::string why) {
        StepOut s{StepOut::K::Stuck};
        s.reason = std::move(why);
        return s;
    }

    TermPtr withKid(const TermPtr& t, size_t i, TermPtr k) {
        auto c = std::make_shared<Term>(*t);
        c->kids[i] = std::move(k);
        return c;
    }

    // child `i` is the evaluation-context position: rebuild on a step, grow the
    // captured frame on an escaping effect
    StepOut inCtx(const TermPtr& t, size_t i) {
        StepOut s = step(t->kids[i]);
        if (s.k == StepOut::K::Stepped) s.t = withKid(t, i, s.t);
        if (s.k == StepOut::K::Effected) s.fctx = withKid(t, i, s.fctx);
        return s;
    }

    // full applications of named fixes feed the call trace
    void traceSpine(const TermPtr& t) {
        if (!callTrace) return;
        std::vector<TermPtr> args;
        TermPtr head = t;
        while (head->k == Term::K::App && head->kids.size() == 2) {
            if (!isValT(head->kids[1])) return;
            args.push_back(head->kids[1]);
            head = head->kids[0];
        }
        if (head->k != Term::K::Fix) return;
        std::reverse(args.begin(), args.end());
        size_t arity = 1;  // the fix's own parameter list is one application slot
        TermPtr b = head->kids[0];
        while (b->k == Term::K::Lambda) {
            arity++;
            b = b->kids[0];
        }
        if (args.size() == arity) callTrace->push_back({head->names[0], args});
    }

    StepOut step(const TermPtr& t) {
        switch (t->k) {
            case Term::K::Fail: return {StepOut::K::Fail};
            case Term::K::Var: return stuck("unbound variable " + t->name);
            case Term::K::AnyBase: return stepped(t_bool(oracle.next() != 0));
            case Term::K::Unit:
            case Term::K::ConstB:
            case Term::K::ConstI:
            case Term::K::Label:
            case Term::K::Lambda:
            case Term::K::Fix:
                return stuck("no step from a value");
            case Term::K::Tuple: {
                for (size_t i = 0; i < t->kids.size(); i++)
                    if (!isValT(t->kids[i])) return inCtx(t, i);
                return stuck("no step from a value");
            }
            case Term::K::Proj: {
                if (!isValT(t->kids[0])) return inCtx(t, 0);
                const TermPtr& v = t->kids[0];
                if (v->k != Term::K::Tuple || t->idx < 1 || (size_t)t->idx > v->kids.size())
                    return stuck("projection from a non-tuple");
                return stepped(v->kids[t->idx - 1]);
            }
            case Term::K::PrimOp: {
                for (size_t i = 0; i < t->kids.size(); i++)
                    if (!isValT(t->kids[i])) return inCtx(t, i);
                std::vector<ValuePtr> args;
                for (auto& k : t->kids) {
                    ValuePtr v = constOfTerm(k);
                    if (!v) return stuck("operator " + t->name + " on a non-constant");
                    args.push_back(std::move(v));
                }
                ValuePtr r = applyPrim(t->name, args);
                if (!r) return stuck("operator " + t->name + " on ill-shaped operands");
                return stepped(termOfConst(r));
            }
            case Term::K::If: {
                if (!isValT(t->kids[0])) return inCtx(t, 0);
                ValuePtr c = constOfTerm(t->kids[0]);
                bool b;
                if (!c || !truthy(c, b)) return stuck("condition is not a base constant");
                return stepped(t->kids[b ? 1 : 2]);
            }
            case Term::K::Let: {
                if (!isValT(t->kids[0])) return inCtx(t, 0);
                return bindPattern(t->names, t->kids[0], t->kids[1]);
            }
            case Term::K::App: {
                if (t->kids.size() != 2) return stuck("application is not unary");
                traceSpine(t);
                if (!isValT(t->kids[0])) return inCtx(t, 0);
                if (!isValT(t->kids[1])) return inCtx(t, 1);
                const TermPtr& f = t->kids[0];
                if (f->k == Term::K::Lambda)
                    return bindPattern(f->names, t->kids[1], f->kids[0]);
                if (f->k == Term::K::Fix) {
                    std::vector<std::string> params(f->names.begin() + 1, f->names.end());
                    TermPtr body = subst(f->kids[0], f->names[0], f);
                    return bindPattern(params, t->kids[1], body);
                }
                return stuck("application of a non-function");
            }
            case Term::K::Raise: {
                if (calc != Calculus::Exn) return stuck("raise outside the exception calculus");
                if (!isValT(t->kids[0])) return inCtx(t, 0);
                StepOut s{StepOut::K::Raised};
                s.ty = t->tyAnno;
                s.payload = t->kids[0];
                return s;
            }
            case Term::K::Try: {
                if (calc != Calculus::Exn) return stuck("try outside the exception calculus");
                if (isValT(t->kids[0])) return stepped(t->kids[0]);
                StepOut s = inCtx(t, 0);
                if (s.k == StepOut::K::Raised && type_eq(s.ty, t->tyAnno))
                    return stepped(subst(t->kids[1], t->name, s.payload));
                return s;
            }
            case Term::K::Effect: {
                if (calc != Calculus::AlgEff) return stuck("effect outside the handler calculus");
                if (!isValT(t->kids[0])) {
                    if (!isValT(t->kids[1])) return stuck("effect continuation is not a value");
                    return inCtx(t, 0);
                }
                if (!isValT(t->kids[1])) return stuck("effect continuation is not a value");
                StepOut s{StepOut::K::Effected};
                s.op = t->name;
                s.payload = t->kids[0];
                s.cont = t->kids[1];
                s.hole = "_hole" + std::to_string(nextHole++);
                s.fctx = t_var(s.hole);
                return s;
            }
            case Term::K::Handle: {
                if (calc != Calculus::AlgEff) return stuck("handler outside the handler calculus");
                if (isValT(t->kids[0]))
                    return stepped(subst(t->handler->retBody, t->handler->retName, t->kids[0]));
                StepOut s = inCtx(t, 0);
                if (s.k != StepOut::K::Effected) return s;
                // the innermost handler takes every effect; a missing clause
                // forwards the operation unchanged
                const HandlerClause* c = t->handler->find(s.op);
                HandlerClause fwd;
                if (!c) {
                    fwd = {s.op, "_fx", "_fk",
                           t_effect(s.op, t_var("_fx"), t_var("_fk"))};
                    c = &fwd;
                }
                std::vector<std::string> used = free_vars(s.fctx);
                for (auto& v : free_vars(s.cont)) used.push_back(v);
                std::string y = fresh_name("y", used);
                // strip the frame wrapper this Handle added in inCtx above:
                // the captured context is the part strictly below the handler
                TermPtr below = s.fctx->kids[0];
                TermPtr plugged = subst(below, s.hole, t_app(s.cont, {t_var(y)}));
                TermPtr k = style == HandlerStyle::Deep
                                ? t_lambda(y, t_handle(plugged, t->handler))
                                : t_lambda(y, plugged);
                TermPtr body = subst(c->body, c->x, s.payload);
                return stepped(subst(body, c->kont, k));
            }
            case Term::K::Gensym: {
                if (calc != Calculus::Sym) return stuck("gensym outside the symbol calculus");
                return stepped(t_label(nextLabel++));
            }
            case Term::K::SymEq: {
                if (calc != Calculus::Sym) return stuck("= outside the symbol calculus");
                if (!isValT(t->kids[0])) return inCtx(t, 0);
                if (!isValT(t->kids[1])) return inCtx(t, 1);
                if (t->kids[0]->k != Term::K::Label || t->kids[1]->k != Term::K::Label)
                    return stuck("= on non-symbols");
                return stepped(t_bool(t->kids[0]->label == t->kids[1]->label));
            }
            default:
                return stuck("construct outside this calculus");
        }
    }

    StepOut bindPattern(const std::vector<std::string>& names, const TermPtr& v, TermPtr body) {
        if (names.size() == 1) return stepped(subst(body, names[0], v));
        if (v->k != Term::K::Tuple || v->kids.size() != names.size())
            return stuck("pattern arity mismatch");
        for (size_t i = 0; i < names.size(); i++) body = subst(body, names[i], v->kids[i]);
        return stepped(std::move(body));
    }

    Outcome run(TermPtr t) {
        for (;;) {
            if (isValT(t)) return oval(valueOfTerm(t));
            if (fuel-- <= 0) return ofuel();
            StepOut s = step(t);
            switch (s.k) {
                case StepOut::K::Stepped: t = std::move(s.t); break;
                case StepOut::K::Fail: return ofail();
                case StepOut::K::Raised: {
                    Outcome o;
                    o.k = Outcome::K::Exn;
                    o.value = valueOfTerm(s.payload);
                    o.exnTy = s.ty;
                    return o;
                }
                case StepOut::K::Effected:
                    return ostuck("unhandled effect " + s.op);
                case StepOut::K::Stuck:
                    return ostuck(s.reason);
            }
        }
    }
};

void initLabelFloor(const TermPtr& t, int& floor);

} // namespace

Outcome eval_exn(const TermPtr& m, long fuel, ChoiceOracle& oracle,
                 std::vector<CallEvent>* callTrace) {
    ExtStep e{Calculus::Exn, HandlerStyle::Deep, fuel, oracle, callTrace};
    return e.run(m);
}

Outcome eval_alg(const TermPtr& m, HandlerStyle style, long fuel, ChoiceOracle& oracle,
                 std::vector<CallEvent>* callTrace) {
    ExtStep e{Calculus::AlgEff, style, fuel, oracle, callTrace};
    return e.run(m);
}

Outcome eval_sym(const TermPtr& m, long fuel, ChoiceOracle& oracle,
                 std::vector<CallEvent>* callTrace) {
    ExtStep e{Calculus::Sym, HandlerStyle::Deep, fuel, oracle, callTrace};
    // labels already embedded in the term stay distinct from generated ones
    int floor = 0;
    initLabelFloor(m, floor);
    e.nextLabel = floor;
    return e.run(m);
}

namespace {

void initLabelFloor(const TermPtr& t, int& floor) {
    if (t->k == Term::K::Label && t->label >= floor) floor = t->label + 1;
    for (auto& k : t->kids) initLabelFloor(k, floor);
}

} // namespace

// ---- run-time state typing ----

namespace {

FullTypePtr stripAny(const FullTypePtr& t, BaseKind) {
    return t->k == FullType::K::AnyBase ? ft_base() : t;
}

bool baseConstFits(const ValuePtr& v, BaseKind base) {
    return base == BaseKind::Bool ? v->k == Value::K::ConstB : v->k == Value::K::ConstI;
}

struct StateChk {
    const Heap& h;
    BaseKind base;
    std::string witness;
    std::map<int, bool> bodyMemo;  // fun-node id -> body premise verdict

    bool fail(const std::string& w) {
        if (witness.empty()) witness = w;
        return false;
    }

    // checks the closure premise: the body typechecks back to its own env
    bool bodyChecks(const ValuePtr& v, const std::vector<FullTypePtr>& args,
                    const FullTypePtr& ret) {
        const TermPtr& fn = v->fun;
        auto memo = bodyMemo.find(fn->id);
        if (memo != bodyMemo.end()) return memo->second;
        TypeEnv g = *v->delta;
        size_t first = 0;
        if (fn->k == Term::K::Fix) {
            g.push(fn->names[0], ft_recfun(args, *v->delta, ret));
            first = 1;
        }
        if (fn->names.size() - first != args.size()) return bodyMemo[fn->id] = false;
        for (size_t i = 0; i < args.size(); i++) g.push(fn->names[first + i], args[i]);
        ReflResult r = typecheck_refl(g, fn->kids[0], base);
        bool ok = r.ok && ftCompat(r.judgment.type, ret) && envCompat(r.judgment.post, g);
        return bodyMemo[fn->id] = ok;
    }

    static bool ftCompat(const FullTypePtr& a, const FullTypePtr& b) {
        if (a->k == FullType::K::AnyBase && b->k == FullType::K::Base) return true;
        if (b->k == FullType::K::AnyBase && a->k == FullType::K::Base) return true;
        return ft_eq(a, b);
    }

    static bool envCompat(const TypeEnv& a, const TypeEnv& b) {
        if (a.size() != b.size()) return false;
        for (size_t i = 0; i < a.items.size(); i++)
            if (a.items[i].first != b.items[i].first ||
                !ftCompat(a.items[i].second, b.items[i].second))
                return false;
        return true;
    }

    std::optional<std::set<int>> portion(const ValuePtr& v, const FullTypePtr& t0) {
        FullTypePtr t = stripAny(t0, base);
        switch (t->k) {
            case FullType::K::Unit:
                if (v->k != Value::K::Unit) {
                    fail("expected () but found " + print_value(v));
                    return std::nullopt;
                }
                return std::set<int>{};
            case FullType::K::Base:
                if (!baseConstFits(v, base)) {
                    fail("expected a base constant but found " + print_value(v));
                    return std::nullopt;
                }
                return std::set<int>{};
            case FullType::K::Ref: {
                if (v->k != Value::K::Loc) {
                    fail("expected a location but found " + print_value(v));
                    return std::nullopt;
                }
                auto it = h.find(v->loc);
                if (it == h.end()) {
                    fail("location #" + std::to_string(v->loc) + " is dangling");
                    return std::nullopt;
                }
                auto inner = portion(it->second, t->elem);
                if (!inner) return std::nullopt;
                inner->insert(v->loc);
                return inner;
            }
            case FullType::K::Fun: {
                if (v->k != Value::K::Clos) {
                    fail("expected a closure but found " + print_value(v));
                    return std::nullopt;
                }
                if (!v->delta) {
                    fail("closure lacks capture typing");
                    return std::nullopt;
                }
                if (store_size(*v->delta) != t->store) {
                    fail("closure carries " + std::to_string(store_size(*v->delta)) +
                         " cells where " + std::to_string(t->store) + " were expected");
                    return std::nullopt;
                }
                auto cells = envPortions(v->env, *v->delta);
                if (!cells) return std::nullopt;
                if (!bodyChecks(v, t->args, t->ret)) {
                    fail("closure body does not restore its captured environment");
                    return std::nullopt;
                }
                return cells;
            }
            default:
                fail("value checked at an environment-only type");
                return std::nullopt;
        }
    }

    // union of the portions of every binding of g, pairwise disjoint
    std::optional<std::set<int>> envPortions(const Env& r, const TypeEnv& g) {
        std::set<int> total;
        TypeEnv prefix;
        for (auto& [x, t] : g.items) {
            auto it = r.find(x);
            if (it == r.end()) {
                fail("no binding for " + x);
                return std::nullopt;
            }
            std::optional<std::set<int>> part;
            if (t->k == FullType::K::RecFun) {
                if (!recFunEntry(it->second, t, prefix, r)) return std::nullopt;
                part = std::set<int>{};
            } else {
                part = portion(it->second, t);
            }
            if (!part) return std::nullopt;
            for (int l : *part) {
                if (total.count(l)) {
                    fail("location #" + std::to_string(l) + " owned twice (reaching " + x + ")");
                    return std::nullopt;
                }
                total.insert(l);
            }
            prefix.push(x, t);
        }
        return total;
    }

    bool recFunEntry(const ValuePtr& v, const FullTypePtr& t, const TypeEnv& prefix,
                     const Env& r) {
        if (v->k != Value::K::Clos || v->fun->k != Term::K::Fix)
            return fail("expected a recursive closure but found " + print_value(v));
        if (!envCompat(t->delta, prefix))
            return fail("recursive closure's environment does not match the preceding bindings");
        for (auto& [x, tx] : t->delta.items) {
            auto inSelf = v->env.find(x);
            auto inOuter = r.find(x);
            if (inSelf == v->env.end() || inOuter == r.end() ||
                !value_eq(inSelf->second, inOuter->second))
                return fail("recursive closure disagrees with the environment on " + x);
        }
        if (!v->delta) return fail("closure lacks capture typing");
        ValuePtr probe = v;
        if (!bodyChecks(probe, t->args, t->ret))
            return fail("recursive closure body does not restore its environment");
        return true;
    }
};

} // namespace

StateVerdict check_runtime_state(const Env& r, const Heap& h, const TypeEnv& g, BaseKind base) {
    StateChk c{h, base};
    auto total = c.envPortions(r, g);
    if (!total) return {false, c.witness};
    return {true, ""};
}

// ---- exhaustive split search ----

namespace {

struct ExactChk {
    const Heap& h;
    BaseKind base;
    StateChk shapes;  // reuses the closure body premise

    bool typedExact(const ValuePtr& v, const FullTypePtr& t0, std::set<int> frag);

    // can the bindings of g consume exactly `rest`, partitioned among them?
    bool envExact(const Env& r, const TypeEnv& g, size_t idx, std::set<int> rest) {
        if (idx == g.items.size()) return rest.empty();
        auto& [x, t] = g.items[idx];
        auto it = r.find(x);
        if (it == r.end()) return false;
        if (t->k == FullType::K::RecFun) {
            TypeEnv prefix;
            for (size_t i = 0; i < idx; i++) prefix.push(g.items[i].first, g.items[i].second);
            if (!shapes.recFunEntry(it->second, t, prefix, r)) return false;
            return envExact(r, g, idx + 1, std::move(rest));
        }
        if (sharable(t)) {
            if (!typedExact(it->second, t, {})) return false;
            return envExact(r, g, idx + 1, std::move(rest));
        }
        // enumerate the subset this binding takes
        std::vector<int> pool(rest.begin(), rest.end());
        for (uint64_t bits = 0; bits < (uint64_t(1) << pool.size()); bits++) {
            std::set<int> mine, rem;
            for (size_t i = 0; i < pool.size(); i++)
                (bits >> i & 1 ? mine : rem).insert(pool[i]);
            if (!typedExact(it->second, t, mine)) continue;
            if (envExact(r, g, idx + 1, rem)) return true;
        }
        return false;
    }
};

bool ExactChk::typedExact(const ValuePtr& v, const FullTypePtr& t0, std::set<int> frag) {
    FullTypePtr t = stripAny(t0, base);
    switch (t->k) {
        case FullType::K::Unit:
            return frag.empty() && v->k == Value::K::Unit;
        case FullType::K::Base:
            return frag.empty() && baseConstFits(v, base);
        case FullType::K::Ref: {
            if (v->k != Value::K::Loc || !frag.count(v->loc)) return false;
            auto it = h.find(v->loc);
            if (it == h.end()) return false;
            frag.erase(v->loc);
            return typedExact(it->second, t->elem, std::move(frag));
        }
        case FullType::K::Fun: {
            if (v->k != Value::K::Clos || !v->delta) return false;
            if (store_size(*v->delta) != t->store) return false;
            if (!shapes.bodyChecks(v, t->args, t->ret)) return false;
            return envExact(v->env, *v->delta, 0, std::move(frag));
        }
        default:
            return false;
    }
}

} // namespace

StateVerdict check_runtime_state_exhaustive(const Env& r, const Heap& h, const TypeEnv& g,
                                            BaseKind base) {
    if (h.size() > 8) return {false, "heap too large for exhaustive search"};
    std::vector<int> locs;
    for (auto& [l, v] : h) locs.push_back(l);
    std::vector<size_t> owners;  // indices of bindings that may own cells
    for (size_t i = 0; i < g.items.size(); i++)
        if (!sharable(g.items[i].second) && g.items[i].second->k != FullType::K::RecFun)
            owners.push_back(i);
    size_t choices = owners.size() + 1;  // index 0: garbage
    std::vector<size_t> pick(locs.size(), 0);
    ExactChk chk{h, base, StateChk{h, base}};
    for (;;) {
        // fragment per owner from the current assignment
        std::map<size_t, std::set<int>> frag;
        for (size_t i = 0; i < locs.size(); i++)
            if (pick[i] > 0) frag[owners[pick[i] - 1]].insert(locs[i]);
        bool ok = true;
        TypeEnv prefix;
        for (size_t i = 0; i < g.items.size() && ok; i++) {
            auto& [x, t] = g.items[i];
            auto it = r.find(x);
            if (it == r.end()) {
                ok = false;
                break;
            }
            if (t->k == FullType::K::RecFun)
                ok = chk.shapes.recFunEntry(it->second, t, prefix, r);
            else
                ok = chk.typedExact(it->second, t, frag.count(i) ? frag[i] : std::set<int>{});
            prefix.push(x, t);
        }
        if (ok) return {true, ""};
        // next assignment
        size_t i = 0;
        while (i < pick.size() && ++pick[i] == choices) pick[i++] = 0;
        if (i == pick.size()) break;
    }
    return {false, "no heap split types every binding"};
}

// ---- preservation monitor ----

MonitorResult monitor_eval(const TypeEnv& g, const TermPtr& m, BaseKind base, Env r, Heap h,
                           long fuel, ChoiceOracle& oracle) {
    MonitorResult res;
    ReflResult chk = typecheck_refl(g, m, base);
    if (!chk.ok) {
        res.ok = false;
        res.violation = "program rejected: " + chk.diag.str();
        res.outcome = ostuck("program rejected");
        return res;
    }
    StateVerdict pre = check_runtime_state(r, h, g, base);
    if (!pre.ok) {
        res.ok = false;
        res.violation = "initial state: " + pre.witness;
    }
    const TypeInfo* info = chk.info.get();
    SourceHooks hooks;
    hooks.atLet = [&](const Term& letNode, const std::string& x, const ValuePtr&, const Env& r2,
                      const Heap& h2) {
        if (!res.ok) return;
        auto it = info->judgments.find(letNode.kids[0]->id);
        if (it == info->judgments.end()) return;
        TypeEnv gg = it->second.post;
        gg.push(x, it->second.type);
        StateVerdict sv = check_runtime_state(r2, h2, gg, base);
        if (!sv.ok) {
            res.ok = false;
            res.violation = "after binding " + x + ": " + sv.witness;
        }
    };
    res.outcome = eval_source(chk.judgment.term, std::move(r), std::move(h), fuel, oracle, base,
                              info, &hooks);
    if (res.ok && res.outcome.k == Outcome::K::Val) {
        TypeEnv gg = chk.judgment.post;
        std::vector<std::string> used;
        for (auto& [x, t] : gg.items) used.push_back(x);
        std::string x = fresh_name("result", used);
        gg.push(x, chk.judgment.type);
        Env r2 = res.outcome.env;
        r2[x] = res.outcome.value;
        StateVerdict sv = check_runtime_state(r2, res.outcome.heap, gg, base);
        if (!sv.ok) {
            res.ok = false;
            res.violation = "final answer: " + sv.witness;
        }
    }
    return res;
}

} // namespace lab
