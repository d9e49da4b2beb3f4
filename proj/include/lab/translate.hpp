#pragma once

#include "lab/typecheck.hpp"

namespace lab {

// Type-level reference elimination: a reference becomes the value it holds, a
// closure with n captured cells becomes a pair of its store (b^n, one
// component) and its code, and the self-type of a recursive function is bare
// code (the store travels through the call instead). AnyBase prints as the
// program's base type.
TypeExprPtr translate_type(const FullTypePtr& t, BaseKind base);
std::vector<std::pair<std::string, TypeExprPtr>> translate_env(const TypeEnv& g, BaseKind base);

// pack(Gamma): the tuple of every cell Gamma owns, in binding order; a closure
// owning more than one cell is destructured by a prefix let. Arity 0 packs to
// () and arity 1 to the bare cell.
TermPtr pack_env(const TypeEnv& g);
// unpack(Gamma, h, body): rebinds Gamma's cells from h around body, rebuilding
// owned closures as (store, code) pairs from their returned stores.
TermPtr unpack_env(const TypeEnv& g, const std::string& h, TermPtr body);

struct TranslateResult {
    bool ok = false;
    TermPtr target;          // reference-free term, judgment shape (value, store)
    TermPtr canonical;       // checked source, binders renamed apart
    FullTypePtr type;        // source judgment
    TypeEnv post;
    TypeExprPtr targetType;  // translate_type(type) x base^{|post|}
    Diag diag;               // when !ok
};

// Reference elimination for a checked program. The output evaluates to a pair
// of the source's value and the final contents of the cells post still owns;
// in particular a closed base-type program reaches fail iff its source does.
TranslateResult translate(const TypeEnv& env, const TermPtr& m, BaseKind base);

// Store-size padding: reinterprets a translated judgment value whose source
// type was tau1 ->[n] tau2 at store size m > n, padding with false/0 cells.
// Throws LabError when m <= n or the type is not a function.
TermPtr subsume_fun(const TermPtr& e, const FullTypePtr& funType, int m, BaseKind base);

// Test-side normal form: collapses administrative lets (alias and constant
// inlining, let-of-let and let-of-if commuting, destructuring of tuple
// literals, projections of value tuples, dead value bindings) so translator
// output can be compared to hand-written expectations with alpha_eq.
TermPtr normalize_admin(const TermPtr& t);

}  // namespace lab
