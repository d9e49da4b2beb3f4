#pragma once

#include <utility>

#include "lab/syntax.hpp"

namespace lab {

// Ownership types. Ref contents are restricted to Base/Ref ("rho" types) by
// construction sites, Fun carries the captured store size, RecFun the captured
// environment Delta seen from inside a recursive body. AnyBase is the chameleon
// base type of `fail`, resolved by joins; Hole is a return-type metavariable
// used while checking a fix body.
struct FullType;
using FullTypePtr = std::shared_ptr<const FullType>;

struct TypeEnv {
    using Item = std::pair<std::string, FullTypePtr>;
    std::vector<Item> items;

    const FullTypePtr* find(const std::string& x) const;
    bool contains(const std::string& x) const { return find(x) != nullptr; }
    void push(const std::string& x, FullTypePtr t) { items.emplace_back(x, std::move(t)); }
    size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
    std::string str() const;
};

struct FullType {
    enum class K { Unit, Base, Ref, Fun, RecFun, AnyBase, Hole } k;
    FullTypePtr elem;               // Ref
    std::vector<FullTypePtr> args;  // Fun / RecFun parameter list (n-ary)
    FullTypePtr ret;                // Fun / RecFun
    int store = 0;                  // Fun
    TypeEnv delta;                  // RecFun
    int hole = -1;                  // Hole
};

FullTypePtr ft_unit();
FullTypePtr ft_base();
FullTypePtr ft_any();
FullTypePtr ft_ref(FullTypePtr elem);
FullTypePtr ft_fun(std::vector<FullTypePtr> args, int store, FullTypePtr ret);
FullTypePtr ft_recfun(std::vector<FullTypePtr> args, TypeEnv delta, FullTypePtr ret);
FullTypePtr ft_hole(int id);

bool ft_eq(const FullTypePtr& a, const FullTypePtr& b);
bool env_eq(const TypeEnv& a, const TypeEnv& b);
std::string print_fulltype(const FullTypePtr& t);

// a value of this type may be duplicated freely
bool sharable(const FullTypePtr& t);

// |tau| and |Gamma|: how many base cells the owner carries
int store_size(const FullTypePtr& t);
int store_size(const TypeEnv& g);
// size(rho): cells reachable through one reference of content rho
int size_cells(const FullTypePtr& rho);

// Gamma \ {x}: remove x's binding iff its type is not sharable
TypeEnv env_drop(const TypeEnv& g, const std::string& x);
// Gamma \_x {rho}: same, keyed on the given type instead of the binding's
TypeEnv env_drop_if(const TypeEnv& g, const std::string& x, const FullTypePtr& rho);
// unconditional removal (T-Let discharge, T-RApp side condition)
TypeEnv env_remove(const TypeEnv& g, const std::string& x);
TypeEnv env_remove_all(const TypeEnv& g, const std::vector<std::string>& xs);

// splitTE: members of S go left; sharable members of S also stay right;
// non-members go right; order preserved
std::pair<TypeEnv, TypeEnv> split_env(const TypeEnv& g, const std::vector<std::string>& s);

// subsequence with type equality
bool env_subseq(const TypeEnv& small, const TypeEnv& big);

struct Judgment {
    TypeEnv pre;
    TermPtr term;
    FullTypePtr type;
    TypeEnv post;
};

// surface annotation -> ownership type; rejects tuples/sym, requires ->[n]
FullTypePtr full_of_surface(const TypeExprPtr& t, BaseKind base);

} // namespace lab
