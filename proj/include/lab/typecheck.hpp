#pragma once

#include <map>
#include <memory>
#include <unordered_map>

#include "lab/types.hpp"

namespace lab {

struct Diag {
    std::string rule;     // rule whose premise failed, e.g. "T-Var"
    std::string msg;
    std::string binding;  // offending variable, if any
    SrcSpan span;
    std::string str() const;
};

// Per-node results of a successful check. Judgments are keyed by node id of
// the canonical term; evaluators derive ownership drops by comparing pre/post
// environments, the translator replays the derivation from these tables.
struct TypeInfo {
    std::unordered_map<int, Judgment> judgments;
    std::unordered_map<int, TypeEnv> closureDelta;  // Lambda / Fix nodes
};

struct ReflResult {
    bool ok = false;
    Judgment judgment;                     // when ok; judgment.term is canonical
    Diag diag;                             // when !ok
    std::shared_ptr<const TypeInfo> info;  // when ok
};

// Checks m under env. Binders are renamed apart first (the canonical term is
// returned in the judgment); annotations key off the canonical term's node ids.
ReflResult typecheck_refl(const TypeEnv& env, const TermPtr& m, BaseKind base);

// Simple types for the target and the extension calculi: principal type via
// unification, leftover metavariables default to the base type. Tuples from
// projections are fixed at arity two (pairs); use patterns for wider tuples.
struct SimpleCheckResult {
    bool ok = false;
    TypeExprPtr type;  // when ok
    Diag diag;         // when !ok
};

// `expect`, when given, is unified with the inferred type before free
// metavariables default to the base type (so polymorphic shapes like
// fun x -> x check at any instance).
SimpleCheckResult typecheck_target(const std::vector<std::pair<std::string, TypeExprPtr>>& env,
                                   const TermPtr& n, BaseKind base,
                                   const TypeExprPtr& expect = nullptr);

// op name -> (payload type, reply type); both must be base types
struct EffectSignature {
    std::map<std::string, std::pair<TypeExprPtr, TypeExprPtr>> ops;
};

SimpleCheckResult typecheck_ext(const TermPtr& m, Calculus calc, BaseKind base,
                                const EffectSignature& sig = {},
                                HandlerStyle style = HandlerStyle::Deep,
                                const TypeExprPtr& expect = nullptr);

} // namespace lab
