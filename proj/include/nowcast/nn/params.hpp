#pragma once

#include <map>
#include <string>
#include <vector>

namespace nowcast::nn {

/// A named tensor of the model. Trainable parameters carry a gradient and
/// the two Adam moment buffers; running statistics do not.
template <typename T>
struct Parameter {
  std::string name;
  std::vector<int> dims;
  bool trainable = true;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> moment1;
  std::vector<T> moment2;

  std::size_t size() const { return value.size(); }
};

/// Owns every parameter of a model. Layers refer to entries by index.
template <typename T>
class ParamStore {
 public:
  std::size_t add(const std::string& name, std::vector<int> dims, bool trainable, T fill = T(0));

  Parameter<T>& operator[](std::size_t i) { return params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }

  const Parameter<T>* find(const std::string& name) const;
  Parameter<T>* find(const std::string& name);

  /// N_theta: number of trainable scalars.
  std::size_t trainable_count() const;

  void zero_grad();

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter<T>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace nowcast::nn
