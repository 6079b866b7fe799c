#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "cyclestain/core/autodiff.hpp"
#include "cyclestain/core/tensor.hpp"

namespace cyclestain {

/// Network namespaces of the translation model.
inline constexpr std::string_view kGenFFPE = "G_FFPE";  // FF -> FFPE
inline constexpr std::string_view kGenFF = "G_FF";      // FFPE -> FF
inline constexpr std::string_view kDiscFFPE = "D_FFPE";
inline constexpr std::string_view kDiscFF = "D_FF";

/// Named, shaped parameter arrays. Names follow "namespace/layer/param".
class ParamStore {
 public:
  void set(const std::string& name, Tensor value);
  const Tensor& get(std::string_view name) const;
  Tensor& get_mutable(std::string_view name);
  bool contains(std::string_view name) const;

  /// Names starting with `prefix` followed by '/' (or all names when empty).
  std::vector<std::string> names(std::string_view prefix = {}) const;
  std::size_t parameter_count(std::string_view prefix = {}) const;
  bool has_namespace(std::string_view ns) const;

  ParamStore subset(std::string_view ns) const;
  /// Adds all entries of `other`; duplicate names are an error.
  void merge(const ParamStore& other);
  /// Overwrite existing entries from `other` (shapes must match).
  void assign(const ParamStore& other);

  const std::map<std::string, Tensor, std::less<>>& entries() const { return entries_; }
  bool operator==(const ParamStore&) const = default;

 private:
  std::map<std::string, Tensor, std::less<>> entries_;
};

/// Parameters lifted into autodiff variables for one forward pass.
class Binding {
 public:
  static Binding constants(const ParamStore& store, std::string_view ns = {});
  static Binding trainable(const ParamStore& store, std::string_view ns = {});

  const ad::Var& operator()(std::string_view name) const;
  bool contains(std::string_view name) const;
  /// Accumulated gradients for every bound parameter (zeros where unused).
  ParamStore gradients() const;

 private:
  std::map<std::string, ad::Var, std::less<>> vars_;
};

/// Round every value to the nearest float32, the checkpoint storage precision.
void round_to_float32(Tensor& t);
void round_to_float32(ParamStore& store);

}  // namespace cyclestain
