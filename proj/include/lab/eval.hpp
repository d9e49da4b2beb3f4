#pragma once

#include <functional>
#include <map>

#include "lab/typecheck.hpp"

namespace lab {

// ---- runtime domains ----

struct Value;
using ValuePtr = std::shared_ptr<const Value>;
using Env = std::map<std::string, ValuePtr>;
using Heap = std::map<int, ValuePtr>;

struct Value {
    enum class K { Unit, ConstB, ConstI, Loc, Clos, Tuple, Sym } k;
    bool bval = false;
    long ival = 0;
    int loc = -1;
    int sym = -1;
    TermPtr fun;                           // Clos: Lambda or Fix node
    Env env;                               // Clos: captured bindings
    std::shared_ptr<const TypeEnv> delta;  // Clos: capture typing, when known
    std::vector<ValuePtr> elems;           // Tuple
};

ValuePtr v_unit();
ValuePtr v_bool(bool b);
ValuePtr v_int(long n);
ValuePtr v_base(BaseKind k, bool truth);
ValuePtr v_loc(int l);
ValuePtr v_sym(int l);
ValuePtr v_clos(TermPtr fun, Env env, std::shared_ptr<const TypeEnv> delta = nullptr);
ValuePtr v_tuple(std::vector<ValuePtr> elems);

bool value_eq(const ValuePtr& a, const ValuePtr& b);
std::string print_value(const ValuePtr& v);

struct Outcome {
    enum class K { Val, Fail, OutOfFuel, Stuck, Exn } k = K::Stuck;
    ValuePtr value;      // Val; Exn payload
    Env env;             // Val, source runs only
    Heap heap;           // Val, source runs only
    TypeExprPtr exnTy;   // Exn
    std::string reason;  // Stuck
};

std::string outcome_kind(const Outcome& o);

// Decisions consumed left to right; past the end of `forced` the fallback is
// used, so a short prefix pins only the first branches of a run. `trace`
// records every decision actually handed out. `stream`, when set, overrides
// everything (index -> decision).
struct ChoiceOracle {
    std::vector<long> forced;
    long fallback = 0;
    std::function<long(size_t)> stream;
    size_t used = 0;
    std::vector<long> trace;
    long next();
};

// one event per full application of a named fix
struct CallEvent {
    std::string fn;
    std::vector<TermPtr> args;  // syntactic values at call time
};

// ---- interpreters ----

struct SourceHooks {
    // fires right after a let binds x, before its body runs
    std::function<void(const Term& letNode, const std::string& x, const ValuePtr& v,
                       const Env& r, const Heap& h)> atLet;
};

// Big-step over the reference language. `info` must come from typecheck_refl
// on the same canonical term; it drives the ownership drops at variable reads,
// derefs, allocations and assignments, and the capture split at closures.
// Without it nothing is ever dropped (plain reference semantics for unchecked
// programs); the term is uniquified first so let-discharge stays safe.
Outcome eval_source(const TermPtr& m, Env r, Heap h, long fuel, ChoiceOracle& oracle,
                    BaseKind base = BaseKind::Bool, const TypeInfo* info = nullptr,
                    const SourceHooks* hooks = nullptr);

// big-step over the pure tuple calculus; no heap, the result carries no env
Outcome eval_target(const TermPtr& n, Env s, long fuel, ChoiceOracle& oracle,
                    BaseKind base = BaseKind::Bool);

// Small-step contextual interpreters for the extensions. Fuel counts reduction
// steps. An exception escaping to the top yields Outcome::K::Exn; an effect
// with no surrounding handler is Stuck. Handlers catch every effect: a missing
// clause behaves as the forwarder op(x, k) -> op(x, k).
Outcome eval_exn(const TermPtr& m, long fuel, ChoiceOracle& oracle,
                 std::vector<CallEvent>* callTrace = nullptr);
Outcome eval_alg(const TermPtr& m, HandlerStyle style, long fuel, ChoiceOracle& oracle,
                 std::vector<CallEvent>* callTrace = nullptr);
Outcome eval_sym(const TermPtr& m, long fuel, ChoiceOracle& oracle,
                 std::vector<CallEvent>* callTrace = nullptr);

// ---- run-time state typing ----

struct StateVerdict {
    bool ok = true;
    std::string witness;  // first violation, empty when ok
};

// Does (r, h) conform to g? Heap splits are resolved by taking each binding's
// portion to be its reachable locations and requiring pairwise disjointness;
// leftover heap and extra bindings are tolerated.
StateVerdict check_runtime_state(const Env& r, const Heap& h, const TypeEnv& g, BaseKind base);

// same verdict by exhaustive split search; heaps of at most 8 locations
StateVerdict check_runtime_state_exhaustive(const Env& r, const Heap& h, const TypeEnv& g,
                                            BaseKind base);

// Runs eval_source on a program accepted under g, checking the runtime state
// against the static environments at every let and on the final answer.
struct MonitorResult {
    Outcome outcome;
    bool ok = true;
    std::string violation;  // first violated state
};
MonitorResult monitor_eval(const TypeEnv& g, const TermPtr& m, BaseKind base, Env r, Heap h,
                           long fuel, ChoiceOracle& oracle);

} // namespace lab
