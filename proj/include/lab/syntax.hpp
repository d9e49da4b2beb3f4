#pragma once

#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace lab {

// ---- source positions ----

struct SrcSpan {
    int line0 = 0, col0 = 0, line1 = 0, col1 = 0;
    std::string str() const;
};

struct LabError : std::runtime_error {
    SrcSpan span;
    LabError(const std::string& msg, SrcSpan s = {}) : std::runtime_error(msg), span(s) {}
};

// ---- calculus tags ----

// Core: pure terms with tuples (the translation target lives here).
// RefL: ownership-checked reference language, ANF.
// Exn / AlgEff / Sym: the three undecidable extensions.
// Ref: unrestricted references (symbol-elimination output), no ownership checking.
enum class Calculus { Core, RefL, Exn, AlgEff, Sym, Ref };

enum class BaseKind { Bool, Int };

enum class HandlerStyle { Deep, Shallow };

std::string calculus_name(Calculus c);
std::optional<Calculus> calculus_of_name(const std::string& s);

// ---- surface types ----
// Annotation syntax shared by every calculus. Store-size arrows (->[n]) only
// make sense for the reference language; plain arrows everywhere else.

struct TypeExpr;
using TypeExprPtr = std::shared_ptr<const TypeExpr>;

struct TypeExpr {
    enum class K { Unit, Bool, Int, Sym, Ref, Fun, Tuple } k;
    TypeExprPtr a, b;               // Ref: a;  Fun: a -> b
    int store = -1;                 // Fun: ->[store], -1 when unannotated
    std::vector<TypeExprPtr> elems; // Tuple
};

TypeExprPtr ty_unit();
TypeExprPtr ty_bool();
TypeExprPtr ty_int();
TypeExprPtr ty_sym();
TypeExprPtr ty_base(BaseKind b);
TypeExprPtr ty_ref(TypeExprPtr a);
TypeExprPtr ty_fun(TypeExprPtr a, TypeExprPtr b, int store = -1);
TypeExprPtr ty_tuple(std::vector<TypeExprPtr> elems); // collapses arity 0/1
bool type_eq(const TypeExprPtr& a, const TypeExprPtr& b);
std::string print_type(const TypeExprPtr& t);

// ---- terms ----

struct Term;
using TermPtr = std::shared_ptr<const Term>;

struct Handler;
using HandlerPtr = std::shared_ptr<const Handler>;

struct Term {
    enum class K {
        Unit, ConstB, ConstI, Var, PrimOp, AnyBase, Fail,
        MkRef, Deref, Assign,
        Let, If, Lambda, Fix, App,
        Raise, Try, Effect, Handle,
        Gensym, SymEq, Label,
        Tuple, Proj
    } k;

    int id = 0;       // unique per constructed node; annotation tables key on it
    SrcSpan span;

    bool bval = false;              // ConstB
    long ival = 0;                  // ConstI
    std::string name;               // Var / PrimOp op / Try binder / Effect op
    std::vector<std::string> names; // Let pattern; Lambda params; Fix [f, params...]
    std::vector<TypeExprPtr> annos; // per-binder annotations, entries may be null
    TypeExprPtr tyAnno;             // Raise / Try
    HandlerPtr handler;             // Handle
    int label = -1;                 // Label (symbol identity)
    int idx = 0;                    // Proj, 1-based
    std::vector<TermPtr> kids;
};

struct HandlerClause {
    std::string op;   // effect name
    std::string x;    // payload binder
    std::string kont; // continuation binder
    TermPtr body;
};

struct Handler {
    std::string retName;
    TermPtr retBody;
    std::vector<HandlerClause> clauses;
    const HandlerClause* find(const std::string& op) const;
};

// node builders (fresh ids)
TermPtr t_unit();
TermPtr t_bool(bool b);
TermPtr t_int(long v);
TermPtr t_base_const(BaseKind kind, bool truth); // canonical true/false of the kind
TermPtr t_var(const std::string& x);
TermPtr t_prim(const std::string& op, std::vector<TermPtr> args);
TermPtr t_any();
TermPtr t_fail();
TermPtr t_mkref(TermPtr v);
TermPtr t_deref(TermPtr v);
TermPtr t_assign(TermPtr ref, TermPtr val);
TermPtr t_let(const std::string& x, TermPtr m1, TermPtr m2, TypeExprPtr anno = nullptr);
TermPtr t_let_pat(std::vector<std::string> pat, TermPtr m1, TermPtr m2);
TermPtr t_if(TermPtr c, TermPtr m1, TermPtr m2);
TermPtr t_lambda(const std::string& x, TermPtr body, TypeExprPtr anno = nullptr);
TermPtr t_lambda_pat(std::vector<std::string> params, TermPtr body,
                     std::vector<TypeExprPtr> annos = {});
TermPtr t_fix(const std::string& f, std::vector<std::string> params, TermPtr body,
              std::vector<TypeExprPtr> paramAnnos = {}, TypeExprPtr retAnno = nullptr);
TermPtr t_app(TermPtr f, std::vector<TermPtr> args);
TermPtr t_raise(TypeExprPtr ty, TermPtr m);
TermPtr t_try(TypeExprPtr ty, TermPtr m1, const std::string& x, TermPtr m2);
TermPtr t_effect(const std::string& op, TermPtr v1, TermPtr v2);
TermPtr t_handle(TermPtr m, HandlerPtr h);
TermPtr t_gensym();
TermPtr t_symeq(TermPtr a, TermPtr b);
TermPtr t_label(int l);
TermPtr t_tuple(std::vector<TermPtr> elems); // collapses arity 0/1
TermPtr t_proj(TermPtr m, int idx);
TermPtr t_seq(TermPtr m1, TermPtr m2); // let _fresh = m1 in m2

TermPtr with_span(TermPtr t, SrcSpan s);

// structural equality modulo ids and spans (annotations compared)
bool term_eq(const TermPtr& a, const TermPtr& b);
// alpha-equivalence modulo ids, spans and annotations
bool alpha_eq(const TermPtr& a, const TermPtr& b);

std::vector<std::string> free_vars(const TermPtr& t);
bool is_closed(const TermPtr& t);

// capture-avoiding substitution of a closed-or-arbitrary term for a variable
TermPtr subst(const TermPtr& body, const std::string& x, const TermPtr& v);

// fresh-name supply; avoids everything in `used`
std::string fresh_name(const std::string& base, std::vector<std::string>& used);

// renames binders apart so every bound name is distinct from all others, from
// the free names and from `avoid`; stable when names are already distinct
TermPtr uniquify(const TermPtr& t, const std::vector<std::string>& avoid = {});

// ---- parsing / printing ----

struct ParseResult {
    TermPtr term;
    BaseKind base; // inferred: any int literal, arithmetic op or `int` annotation => Int
};

// Parses the shared surface grammar; `calc` controls which constructs are
// admitted and whether application is saturated (RefL) or curried (others).
// RefL terms are normalized to ANF (fresh lets for non-variable operands).
ParseResult parse_program(const std::string& text, Calculus calc);

std::string print_term(const TermPtr& t);

// letrec derived form: every binding must have at least one parameter.
struct RecBinding {
    std::string name;
    std::vector<std::string> params;
    std::vector<TypeExprPtr> annos; // parallel to params, entries may be null
    TermPtr body;
};
TermPtr desugar_letrec(const std::vector<RecBinding>& binds, TermPtr body);
// reference-language variant: n-ary fix instead of curried lambdas
TermPtr desugar_letrec_nary(const std::vector<RecBinding>& binds, TermPtr body);

// ---- Minsky machines ----

struct MinskyInstr {
    enum class K { Inc, CondDec, Halt } k;
    int reg = 0;  // 0 or 1
    int next = 0; // Inc: goto; CondDec: zero branch
    int alt = 0;  // CondDec: decrement branch
};

struct MinskyMachine {
    std::vector<MinskyInstr> instrs; // state i -> instrs[i]
};

// line format, one instruction per line, `#` comments:
//   i: inc j goto k
//   i: if j then k else l     (j zero: goto k; else decrement, goto l)
//   i: halt
MinskyMachine parse_minsky(const std::string& text);
std::string print_minsky(const MinskyMachine& m);

} // namespace lab
