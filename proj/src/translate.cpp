#include "lab/translate.hpp"

#include <algorithm>
#include <map>
#include <set>

namespace lab {

namespace {

void collectNames(const TermPtr& t, std::vector<std::string>& out) {
    if (!t) return;
    if (t->k == Term::K::Var) out.push_back(t->name);
    for (auto& n : t->names) out.push_back(n);
    if (t->handler) {
        out.push_back(t->handler->retName);
        collectNames(t->handler->retBody, out);
        for (auto& c : t->handler->clauses) {
            out.push_back(c.x);
            out.push_back(c.kont);
            collectNames(c.body, out);
        }
    }
    for (auto& k : t->kids) collectNames(k, out);
}

TypeExprPtr bnType(int n, BaseKind base) {
    std::vector<TypeExprPtr> els(n, ty_base(base));
    return ty_tuple(std::move(els));
}

// pack(Gamma): cells in binding order. Refs contribute their value, a closure
// owning n >= 2 cells is destructured by a prefix let (projections are fixed
// at pair arity), a one-cell closure's store is the bare projection.
TermPtr packWith(const TypeEnv& g, std::vector<std::string>& used) {
    std::vector<TermPtr> comps;
    std::vector<std::pair<std::vector<std::string>, TermPtr>> prefix;
    for (auto& [x, t] : g.items) {
        if (t->k == FullType::K::Ref) {
            comps.push_back(t_var(x));
        } else if (t->k == FullType::K::Fun && t->store > 0) {
            if (t->store == 1) {
                comps.push_back(t_proj(t_var(x), 1));
            } else {
                std::vector<std::string> us;
                for (int i = 0; i < t->store; i++) us.push_back(fresh_name("u", used));
                for (auto& u : us) comps.push_back(t_var(u));
                prefix.emplace_back(std::move(us), t_proj(t_var(x), 1));
            }
        }
    }
    TermPtr out = t_tuple(std::move(comps));
    for (auto it = prefix.rbegin(); it != prefix.rend(); ++it)
        out = t_let_pat(it->first, it->second, std::move(out));
    return out;
}

TermPtr unpackWith(const TypeEnv& g, const std::string& h, TermPtr body,
                   std::vector<std::string>& used) {
    std::vector<std::string> pat;
    std::vector<std::pair<std::string, TermPtr>> rebinds;
    for (auto& [x, t] : g.items) {
        if (t->k == FullType::K::Ref) {
            pat.push_back(x);
        } else if (t->k == FullType::K::Fun && t->store > 0) {
            std::vector<TermPtr> us;
            for (int i = 0; i < t->store; i++) {
                std::string u = fresh_name("u", used);
                pat.push_back(u);
                us.push_back(t_var(u));
            }
            // the code part never changes; only the store comes back through h
            rebinds.emplace_back(x, t_tuple({t_tuple(std::move(us)), t_proj(t_var(x), 2)}));
        }
    }
    if (pat.empty()) return body;
    for (auto it = rebinds.rbegin(); it != rebinds.rend(); ++it)
        body = t_let(it->first, it->second, std::move(body));
    if (pat.size() == 1) return t_let(pat[0], t_var(h), std::move(body));
    return t_let_pat(std::move(pat), t_var(h), std::move(body));
}

struct Tr {
    const TypeInfo& info;
    BaseKind base;
    std::vector<std::string> used;

    const Judgment& J(const TermPtr& m) const { return info.judgments.at(m->id); }
    TermPtr pack(const TypeEnv& g) { return packWith(g, used); }
    TermPtr unpack(const TypeEnv& g, const std::string& h, TermPtr b) {
        return unpackWith(g, h, std::move(b), used);
    }
    std::string fresh(const char* b) { return fresh_name(b, used); }

    static TermPtr pairOf(TermPtr a, TermPtr b) {
        return t_tuple({std::move(a), std::move(b)});
    }

    TermPtr go(const TermPtr& m) {
        const Judgment& j = J(m);
        switch (m->k) {
            case Term::K::Unit: return pairOf(t_unit(), pack(j.post));
            case Term::K::ConstB: return pairOf(t_bool(m->bval), pack(j.post));
            case Term::K::ConstI: return pairOf(t_int(m->ival), pack(j.post));
            case Term::K::AnyBase: return pairOf(t_any(), pack(j.post));
            case Term::K::Fail: return pairOf(t_fail(), pack(j.post));

            case Term::K::PrimOp: {
                std::vector<TermPtr> args;
                for (auto& k : m->kids) args.push_back(t_var(k->name));
                return pairOf(t_prim(m->name, std::move(args)), pack(j.post));
            }

            // a variable is its own translation: the cell value lives under
            // the same name; deref and mkref are the identity on values
            case Term::K::Var: return pairOf(t_var(m->name), pack(j.post));
            case Term::K::Deref: return pairOf(t_var(m->kids[0]->name), pack(j.post));
            case Term::K::MkRef: return pairOf(t_var(m->kids[0]->name), pack(j.post));

            case Term::K::Assign:
                // assignment rebinds the cell variable to the new value
                return t_let(m->kids[0]->name, t_var(m->kids[1]->name),
                             pairOf(t_unit(), pack(j.post)));

            case Term::K::Let: {
                const std::string& x = m->names[0];
                const Judgment& j1 = J(m->kids[0]);
                const Judgment& j2 = J(m->kids[1]);
                TermPtr e1 = go(m->kids[0]);
                TermPtr e2 = go(m->kids[1]);
                std::string h1 = fresh("h");
                // the binder is discharged unconditionally; when it leaves the
                // body still owning cells, re-shape the store so the result
                // carries exactly the judgment's cells
                const FullTypePtr* xt = j2.post.find(x);
                if (xt && store_size(*xt) > 0) {
                    std::string r = fresh("r");
                    std::string h2 = fresh("h");
                    e2 = t_let_pat({r, h2}, std::move(e2),
                                   unpack(j2.post, h2, pairOf(t_var(r), pack(j.post))));
                }
                return t_let_pat({x, h1}, std::move(e1), unpack(j1.post, h1, std::move(e2)));
            }

            case Term::K::If:
                return t_if(t_var(m->kids[0]->name), go(m->kids[1]), go(m->kids[2]));

            case Term::K::Lambda: {
                const TypeEnv& delta = info.closureDelta.at(m->id);
                const Judgment& jb = J(m->kids[0]);
                TermPtr e = go(m->kids[0]);
                const std::string& x = m->names[0];
                std::string h = fresh("h");
                std::string r = fresh("r");
                std::string h2 = fresh("h");
                // code gets (arg, store), returns (result, arg, store)
                TermPtr ret = t_tuple({t_var(r), t_var(x), pack(delta)});
                TermPtr codeBody = unpack(
                    delta, h,
                    t_let_pat({r, h2}, std::move(e), unpack(jb.post, h2, std::move(ret))));
                TermPtr code = t_lambda_pat({x, h}, std::move(codeBody));
                return pairOf(pairOf(pack(delta), std::move(code)), pack(j.post));
            }

            case Term::K::Fix: {
                const TypeEnv& delta = info.closureDelta.at(m->id);
                const Judgment& jb = J(m->kids[0]);
                TermPtr e = go(m->kids[0]);
                const std::string& f = m->names[0];
                std::vector<std::string> params(m->names.begin() + 1, m->names.end());
                std::string hf = fresh("h");
                std::string r = fresh("r");
                std::string h2 = fresh("h");
                std::vector<TermPtr> retEls;
                retEls.push_back(t_var(r));
                for (auto& p : params) retEls.push_back(t_var(p));
                retEls.push_back(pack(delta));
                TermPtr codeBody = unpack(
                    delta, hf,
                    t_let_pat({r, h2}, std::move(e),
                              unpack(jb.post, h2, t_tuple(std::move(retEls)))));
                std::vector<std::string> ps = params;
                ps.push_back(hf);
                // the self variable is bare code; its store travels per call
                TermPtr code = t_fix(f, std::move(ps), std::move(codeBody));
                return pairOf(pairOf(pack(delta), std::move(code)), pack(j.post));
            }

            case Term::K::App: {
                const std::string& f = m->kids[0]->name;
                FullTypePtr tf = *j.pre.find(f);
                std::vector<std::string> argNames;
                for (size_t i = 1; i < m->kids.size(); i++)
                    argNames.push_back(m->kids[i]->name);
                if (tf->k == FullType::K::Fun) {
                    std::string r = fresh("r");
                    std::string hf = fresh("h");
                    std::vector<TermPtr> callEls;
                    for (auto& a : argNames) callEls.push_back(t_var(a));
                    callEls.push_back(t_proj(t_var(f), 1));
                    TermPtr call = t_app(t_proj(t_var(f), 2), {t_tuple(std::move(callEls))});
                    std::vector<std::string> pat;
                    pat.push_back(r);
                    for (auto& a : argNames) pat.push_back(a);
                    pat.push_back(hf);
                    // rebuild the closure around its returned store; redundant
                    // when f is sharable but emitted uniformly
                    TermPtr rebuilt = t_tuple({t_var(hf), t_proj(t_var(f), 2)});
                    return t_let_pat(std::move(pat), std::move(call),
                                     t_let(f, std::move(rebuilt),
                                           pairOf(t_var(r), pack(j.post))));
                }
                // recursive self-call: the captured cells are ambient here,
                // hand them through the call and take them back after
                const TypeEnv& delta = tf->delta;
                std::string hf = fresh("h");
                std::string r = fresh("r");
                std::string h2 = fresh("h");
                std::vector<TermPtr> callEls;
                for (auto& a : argNames) callEls.push_back(t_var(a));
                callEls.push_back(t_var(hf));
                TermPtr call = t_app(t_var(f), {t_tuple(std::move(callEls))});
                std::vector<std::string> pat;
                pat.push_back(r);
                for (auto& a : argNames) pat.push_back(a);
                pat.push_back(h2);
                return t_let(hf, pack(delta),
                             t_let_pat(std::move(pat), std::move(call),
                                       unpack(delta, h2, pairOf(t_var(r), pack(j.post)))));
            }

            default:
                throw LabError("construct not available in the reference language", m->span);
        }
    }
};

}  // namespace

TypeExprPtr translate_type(const FullTypePtr& t, BaseKind base) {
    switch (t->k) {
        case FullType::K::Unit: return ty_unit();
        case FullType::K::Base:
        case FullType::K::AnyBase: return ty_base(base);
        case FullType::K::Ref: return translate_type(t->elem, base);
        case FullType::K::Fun: {
            TypeExprPtr bn = bnType(t->store, base);
            std::vector<TypeExprPtr> dom;
            for (auto& a : t->args) dom.push_back(translate_type(a, base));
            std::vector<TypeExprPtr> cod;
            cod.push_back(translate_type(t->ret, base));
            for (auto& a : t->args) cod.push_back(translate_type(a, base));
            dom.push_back(bn);
            cod.push_back(bn);
            return ty_tuple({bn, ty_fun(ty_tuple(std::move(dom)), ty_tuple(std::move(cod)))});
        }
        case FullType::K::RecFun: {
            TypeExprPtr bd = bnType(store_size(t->delta), base);
            std::vector<TypeExprPtr> dom;
            for (auto& a : t->args) dom.push_back(translate_type(a, base));
            std::vector<TypeExprPtr> cod;
            cod.push_back(translate_type(t->ret, base));
            for (auto& a : t->args) cod.push_back(translate_type(a, base));
            dom.push_back(bd);
            cod.push_back(bd);
            return ty_fun(ty_tuple(std::move(dom)), ty_tuple(std::move(cod)));
        }
        default: throw LabError("type has an unresolved part");
    }
}

std::vector<std::pair<std::string, TypeExprPtr>> translate_env(const TypeEnv& g, BaseKind base) {
    std::vector<std::pair<std::string, TypeExprPtr>> out;
    for (auto& [x, t] : g.items) out.emplace_back(x, translate_type(t, base));
    return out;
}

TermPtr pack_env(const TypeEnv& g) {
    std::vector<std::string> used;
    for (auto& it : g.items) used.push_back(it.first);
    return packWith(g, used);
}

TermPtr unpack_env(const TypeEnv& g, const std::string& h, TermPtr body) {
    std::vector<std::string> used = free_vars(body);
    for (auto& it : g.items) used.push_back(it.first);
    used.push_back(h);
    return unpackWith(g, h, std::move(body), used);
}

TranslateResult translate(const TypeEnv& env, const TermPtr& m, BaseKind base) {
    TranslateResult out;
    ReflResult r = typecheck_refl(env, m, base);
    if (!r.ok) {
        out.diag = r.diag;
        return out;
    }
    Tr tr{*r.info, base, {}};
    collectNames(r.judgment.term, tr.used);
    for (auto& it : env.items) tr.used.push_back(it.first);
    out.target = tr.go(r.judgment.term);
    out.canonical = r.judgment.term;
    out.type = r.judgment.type;
    out.post = r.judgment.post;
    out.targetType =
        ty_tuple({translate_type(out.type, base), bnType(store_size(out.post), base)});
    out.ok = true;
    return out;
}

TermPtr subsume_fun(const TermPtr& e, const FullTypePtr& funType, int m, BaseKind base) {
    if (!funType || funType->k != FullType::K::Fun)
        throw LabError("store padding needs a function type");
    int n = funType->store;
    if (m <= n)
        throw LabError("store padding needs a strictly larger size, have " +
                       std::to_string(n) + " toward " + std::to_string(m));
    std::vector<std::string> used;
    collectNames(e, used);
    auto fr = [&](const char* b) { return fresh_name(b, used); };
    auto pad = [&] { return t_base_const(base, false); };

    size_t k = funType->args.size();
    std::string p = fr("p"), h2 = fr("h"), h1 = fr("h"), c = fr("c");

    // wrapper code: call the old code on the first n cells, pad the rest back
    std::vector<std::string> xs;
    for (size_t i = 0; i < k; i++) xs.push_back(fr("x"));
    std::string h = fr("h");
    std::vector<std::string> ws;
    for (int i = 0; i < m; i++) ws.push_back(fr("w"));
    std::vector<TermPtr> sliceEls;
    for (int i = 0; i < n; i++) sliceEls.push_back(t_var(ws[i]));
    std::vector<TermPtr> callEls;
    for (auto& x : xs) callEls.push_back(t_var(x));
    callEls.push_back(t_tuple(std::move(sliceEls)));
    TermPtr call = t_app(t_var(c), {t_tuple(std::move(callEls))});

    std::string r = fr("r"), h1p = fr("h");
    std::vector<std::string> retPat{r};
    std::vector<std::string> xs2;
    for (size_t i = 0; i < k; i++) {
        xs2.push_back(fr("x"));
        retPat.push_back(xs2.back());
    }
    retPat.push_back(h1p);

    auto paddedFrom = [&](const std::string& whole, const std::vector<std::string>& parts) {
        std::vector<TermPtr> els;
        if (n == 1) els.push_back(t_var(whole));
        for (auto& q : parts) els.push_back(t_var(q));
        for (int i = n; i < m; i++) els.push_back(pad());
        return t_tuple(std::move(els));
    };

    std::vector<TermPtr> innerEls{t_var(r)};
    for (auto& x : xs2) innerEls.push_back(t_var(x));
    TermPtr innerRet;
    if (n >= 2) {
        std::vector<std::string> vs;
        for (int i = 0; i < n; i++) vs.push_back(fr("v"));
        innerEls.push_back(paddedFrom(h1p, vs));
        innerRet = t_let_pat(vs, t_var(h1p), t_tuple(std::move(innerEls)));
    } else {
        innerEls.push_back(paddedFrom(h1p, {}));
        innerRet = t_tuple(std::move(innerEls));
    }

    TermPtr codeBody = t_let_pat(std::move(retPat), std::move(call), std::move(innerRet));
    codeBody = m == 1 ? t_let(ws[0], t_var(h), std::move(codeBody))
                      : t_let_pat(ws, t_var(h), std::move(codeBody));
    std::vector<std::string> lamPat = xs;
    lamPat.push_back(h);
    TermPtr wrapper = t_lambda_pat(std::move(lamPat), std::move(codeBody));

    TermPtr core;
    if (n >= 2) {
        std::vector<std::string> qs;
        for (int i = 0; i < n; i++) qs.push_back(fr("q"));
        core = t_let_pat(qs, t_var(h1),
                         t_tuple({t_tuple({paddedFrom(h1, qs), std::move(wrapper)}), t_var(h2)}));
    } else {
        core = t_tuple({t_tuple({paddedFrom(h1, {}), std::move(wrapper)}), t_var(h2)});
    }
    return t_let_pat({p, h2}, e, t_let_pat({h1, c}, t_var(p), std::move(core)));
}

// ---- administrative normal form (test-side) ----

namespace {

bool isValueT(const TermPtr& t) {
    switch (t->k) {
        case Term::K::Unit:
        case Term::K::ConstB:
        case Term::K::ConstI:
        case Term::K::Var:
        case Term::K::Lambda:
        case Term::K::Fix: return true;
        case Term::K::Proj: return isValueT(t->kids[0]);
        case Term::K::Tuple: {
            for (auto& e : t->kids)
                if (!isValueT(e)) return false;
            return true;
        }
        default: return false;
    }
}

// values that may be duplicated or dropped freely when printed
bool transparentT(const TermPtr& t) {
    switch (t->k) {
        case Term::K::Unit:
        case Term::K::ConstB:
        case Term::K::ConstI:
        case Term::K::Var: return true;
        case Term::K::Proj: return transparentT(t->kids[0]);
        case Term::K::Tuple: {
            for (auto& e : t->kids)
                if (!transparentT(e)) return false;
            return true;
        }
        default: return false;
    }
}

bool binds(const Term& t, const std::string& x) {
    return std::find(t.names.begin(), t.names.end(), x) != t.names.end();
}

int countOcc(const TermPtr& t, const std::string& x) {
    switch (t->k) {
        case Term::K::Var: return t->name == x ? 1 : 0;
        case Term::K::Let:
            return countOcc(t->kids[0], x) + (binds(*t, x) ? 0 : countOcc(t->kids[1], x));
        case Term::K::Lambda:
        case Term::K::Fix: return binds(*t, x) ? 0 : countOcc(t->kids[0], x);
        case Term::K::Try:
            return countOcc(t->kids[0], x) + (t->name == x ? 0 : countOcc(t->kids[1], x));
        default: {
            int n = 0;
            for (auto& k : t->kids) n += countOcc(k, x);
            return n;
        }
    }
}

TermPtr mkLet(const std::vector<std::string>& pat, TermPtr rhs, TermPtr body) {
    if (pat.size() == 1) return t_let(pat[0], std::move(rhs), std::move(body));
    return t_let_pat(pat, std::move(rhs), std::move(body));
}

void addAll(std::vector<std::string>& used, const TermPtr& t) {
    auto fv = free_vars(t);
    used.insert(used.end(), fv.begin(), fv.end());
}

// let P = (let Q = A in B) in C  ->  let Q' = A in let P = B' in C
TermPtr commuteLetLet(const TermPtr& t) {
    const TermPtr& inner = t->kids[0];
    const TermPtr& c = t->kids[1];
    std::vector<std::string> used;
    addAll(used, c);
    addAll(used, inner->kids[0]);
    addAll(used, inner->kids[1]);
    used.insert(used.end(), t->names.begin(), t->names.end());
    used.insert(used.end(), inner->names.begin(), inner->names.end());
    std::set<std::string> avoid(used.begin(), used.end());
    std::set<std::string> pset(t->names.begin(), t->names.end());
    std::vector<std::string> fvC = free_vars(c);
    std::set<std::string> cset(fvC.begin(), fvC.end());
    std::map<std::string, std::string> ren;
    std::vector<std::string> q2;
    for (auto& q : inner->names) {
        auto it = ren.find(q);
        if (it != ren.end()) {
            q2.push_back(it->second);
            continue;
        }
        std::string nq = q;
        if (cset.count(q) || pset.count(q)) nq = fresh_name(q + "'", used);
        ren.emplace(q, nq);
        q2.push_back(nq);
    }
    TermPtr b = inner->kids[1];
    for (auto& [o, nn] : ren)
        if (o != nn) b = subst(b, o, t_var(nn));
    return mkLet(q2, inner->kids[0], mkLet(t->names, std::move(b), c));
}

// let P = (e1, ..., ek) in C  ->  let t1 = e1 in ... in C[t/P]
TermPtr splitTupleLet(const TermPtr& t) {
    const TermPtr& lit = t->kids[0];
    TermPtr c = t->kids[1];
    std::vector<std::string> used;
    addAll(used, c);
    for (auto& e : lit->kids) addAll(used, e);
    used.insert(used.end(), t->names.begin(), t->names.end());
    std::vector<std::string> tmps;
    for (size_t i = 0; i < t->names.size(); i++) tmps.push_back(fresh_name("_t", used));
    for (size_t i = 0; i < t->names.size(); i++) c = subst(c, t->names[i], t_var(tmps[i]));
    for (size_t i = t->names.size(); i-- > 0;) c = t_let(tmps[i], lit->kids[i], std::move(c));
    return c;
}

TermPtr stepNode(const TermPtr& t) {
    if (t->k == Term::K::Proj) {
        const TermPtr& u = t->kids[0];
        if (u->k == Term::K::Tuple && (int)u->kids.size() >= t->idx && isValueT(u))
            return u->kids[t->idx - 1];
        return nullptr;
    }
    if (t->k != Term::K::Let) return nullptr;
    const TermPtr& r = t->kids[0];
    const TermPtr& c = t->kids[1];
    if (r->k == Term::K::Let) return commuteLetLet(t);
    if (r->k == Term::K::If)
        return t_if(r->kids[0], mkLet(t->names, r->kids[1], c), mkLet(t->names, r->kids[2], c));
    if (t->names.size() == 1) {
        const std::string& x = t->names[0];
        if (c->k == Term::K::Var && c->name == x) return r;
        // a condition binder used nowhere else folds into the if: the bound
        // term still runs first, so this also covers choices and failures
        if (c->k == Term::K::If && c->kids[0]->k == Term::K::Var && c->kids[0]->name == x &&
            countOcc(c->kids[1], x) == 0 && countOcc(c->kids[2], x) == 0)
            return t_if(r, c->kids[1], c->kids[2]);
        if (r->k == Term::K::Var || r->k == Term::K::ConstB || r->k == Term::K::ConstI ||
            r->k == Term::K::Unit)
            return subst(c, x, r);
        if (transparentT(r) && countOcc(c, x) <= 1) return subst(c, x, r);
        if (isValueT(r) && countOcc(c, x) == 0) return c;
        return nullptr;
    }
    std::set<std::string> uniq(t->names.begin(), t->names.end());
    if (uniq.size() != t->names.size()) return nullptr;
    if (r->k == Term::K::Tuple && r->kids.size() == t->names.size()) return splitTupleLet(t);
    if (isValueT(r)) {
        for (auto& x : t->names)
            if (countOcc(c, x) > 0) return nullptr;
        return c;
    }
    return nullptr;
}

TermPtr withKids(const TermPtr& t, std::vector<TermPtr> kids) {
    Term n = *t;
    n.kids = std::move(kids);
    return std::make_shared<const Term>(std::move(n));
}

TermPtr normPass(const TermPtr& t, bool& changed) {
    std::vector<TermPtr> kids;
    bool kc = false;
    for (auto& k : t->kids) {
        TermPtr nk = normPass(k, kc);
        kids.push_back(std::move(nk));
    }
    TermPtr cur = kc ? withKids(t, std::move(kids)) : t;
    if (kc) changed = true;
    for (;;) {
        TermPtr next = stepNode(cur);
        if (!next) break;
        changed = true;
        cur = next;
    }
    return cur;
}

}  // namespace

TermPtr normalize_admin(const TermPtr& t0) {
    TermPtr t = t0;
    for (int i = 0; i < 1000; i++) {
        bool changed = false;
        t = normPass(t, changed);
        if (!changed) break;
    }
    return t;
}

}  // namespace lab
