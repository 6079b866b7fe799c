#include "cyclestain/networks/param_store.hpp"

#include "cyclestain/core/error.hpp"

namespace cyclestain {
namespace {

bool in_namespace(std::string_view name, std::string_view ns) {
  if (ns.empty()) return true;
  return name.size() > ns.size() && name.substr(0, ns.size()) == ns && name[ns.size()] == '/';
}

}  // namespace

void ParamStore::set(const std::string& name, Tensor value) {
  if (name.empty()) throw ContractError("ParamStore: empty parameter name");
  entries_.insert_or_assign(name, std::move(value));
}

const Tensor& ParamStore::get(std::string_view name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParamStore: missing parameter " + std::string(name));
  return it->second;
}

Tensor& ParamStore::get_mutable(std::string_view name) {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ContractError("ParamStore: missing parameter " + std::string(name));
  return it->second;
}

bool ParamStore::contains(std::string_view name) const { return entries_.find(name) != entries_.end(); }

std::vector<std::string> ParamStore::names(std::string_view prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, _] : entries_)
    if (in_namespace(name, prefix)) out.push_back(name);
  return out;
}

std::size_t ParamStore::parameter_count(std::string_view prefix) const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_)
    if (in_namespace(name, prefix)) n += t.size();
  return n;
}

bool ParamStore::has_namespace(std::string_view ns) const {
  for (const auto& [name, _] : entries_)
    if (in_namespace(name, ns)) return true;
  return false;
}

ParamStore ParamStore::subset(std::string_view ns) const {
  ParamStore out;
  for (const auto& [name, t] : entries_)
    if (in_namespace(name, ns)) out.entries_.emplace(name, t);
  return out;
}

void ParamStore::merge(const ParamStore& other) {
  for (const auto& [name, t] : other.entries_) {
    if (contains(name)) throw ContractError("ParamStore::merge: duplicate parameter " + name);
    entries_.emplace(name, t);
  }
}

void ParamStore::assign(const ParamStore& other) {
  for (const auto& [name, t] : other.entries_) {
    Tensor& dst = get_mutable(name);
    if (dst.shape() != t.shape())
      throw ContractError("ParamStore::assign: shape mismatch for " + name);
    dst = t;
  }
}

Binding Binding::constants(const ParamStore& store, std::string_view ns) {
  Binding b;
  for (const auto& [name, t] : store.entries())
    if (in_namespace(name, ns)) b.vars_.emplace(name, ad::constant(t));
  return b;
}

Binding Binding::trainable(const ParamStore& store, std::string_view ns) {
  Binding b;
  for (const auto& [name, t] : store.entries())
    if (in_namespace(name, ns)) b.vars_.emplace(name, ad::parameter(t));
  return b;
}

const ad::Var& Binding::operator()(std::string_view name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw ContractError("Binding: parameter not bound: " + std::string(name));
  return it->second;
}

bool Binding::contains(std::string_view name) const { return vars_.find(name) != vars_.end(); }

ParamStore Binding::gradients() const {
  ParamStore out;
  for (const auto& [name, v] : vars_) {
    if (v.grad().shape() == v.shape())
      out.set(name, v.grad());
    else
      out.set(name, Tensor(v.shape(), 0.0));
  }
  return out;
}

void round_to_float32(Tensor& t) {
  for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
}

void round_to_float32(ParamStore& store) {
  for (const auto& name : store.names()) round_to_float32(store.get_mutable(name));
}

}  // namespace cyclestain
