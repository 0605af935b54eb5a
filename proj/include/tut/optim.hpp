#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tut/tensor.hpp"

namespace tut {

/// Named learnable tensors in a stable (insertion) order.
template <typename Scalar>
class ParamStore {
 public:
  Tensor<Scalar> add(const std::string& name, Matrix<Scalar> init) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter name: " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, Tensor<Scalar>::parameter(std::move(init)));
    return entries_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const Tensor<Scalar>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("unknown parameter: " + name);
    return entries_[it->second].second;
  }

  const std::vector<std::pair<std::string, Tensor<Scalar>>>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

 private:
  std::vector<std::pair<std::string, Tensor<Scalar>>> entries_;
  std::map<std::string, std::size_t> index_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename Scalar>
struct AdamState {
  long step = 0;
  std::vector<Matrix<Scalar>> first_moment;
  std::vector<Matrix<Scalar>> second_moment;
};

/// One Adam update with bias correction and decoupled weight decay:
///   p ← p − lr·wd·p − lr·m̂/(√v̂ + eps)
/// Parameters without a gradient are treated as having a zero gradient.
template <typename Scalar>
void adam_step(ParamStore<Scalar>& params, AdamState<Scalar>& state, const AdamOptions& opt) {
  const auto& entries = params.entries();
  if (state.first_moment.empty()) {
    for (const auto& [_, t] : entries) {
      state.first_moment.push_back(Matrix<Scalar>::Zero(t.rows(), t.cols()));
      state.second_moment.push_back(Matrix<Scalar>::Zero(t.rows(), t.cols()));
    }
  }
  if (state.first_moment.size() != entries.size()) throw DimensionError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const Scalar b1 = static_cast<Scalar>(opt.beta1);
  const Scalar b2 = static_cast<Scalar>(opt.beta2);
  const Scalar lr = static_cast<Scalar>(opt.lr);
  const Scalar eps = static_cast<Scalar>(opt.eps);
  const Scalar decay = static_cast<Scalar>(opt.lr * opt.weight_decay);
  const Scalar corr1 = Scalar(1) - static_cast<Scalar>(std::pow(opt.beta1, static_cast<double>(state.step)));
  const Scalar corr2 = Scalar(1) - static_cast<Scalar>(std::pow(opt.beta2, static_cast<double>(state.step)));
  for (std::size_t k = 0; k < entries.size(); ++k) {
    Tensor<Scalar> p = entries[k].second;
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    if (m.rows() != p.rows() || m.cols() != p.cols()) throw DimensionError("adam_step: state shape mismatch for " + entries[k].first);
    Matrix<Scalar>& value = p.mutable_value();
    if (decay != Scalar(0)) value -= decay * value;
    if (!p.has_grad()) {
      m *= b1;
      v *= b2;
    } else {
      const auto& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseAbs2();
    }
    value.array() -= lr * (m.array() / corr1) / ((v.array() / corr2).sqrt() + eps);
  }
}

}  // namespace tut
