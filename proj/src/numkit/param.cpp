#include "traceseq/numkit/param.hpp"

#include <cmath>

#include "traceseq/errors.hpp"

namespace traceseq::numkit {

TrainableParam::TrainableParam(std::string name_, DenseArray init)
    : name(std::move(name_)),
      value(std::move(init)),
      grad(zeros_like(value)),
      sq_grad_avg(zeros_like(value)),
      sq_update_avg(zeros_like(value)) {}

TrainableParam& ParameterSet::add(const std::string& name, DenseArray init) {
  auto [it, inserted] = params_.try_emplace(name, name, std::move(init));
  if (!inserted) throw ContractError("duplicate parameter '" + name + "'");
  return it->second;
}

TrainableParam& ParameterSet::at(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

const TrainableParam& ParameterSet::at(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractError("unknown parameter '" + name + "'");
  return it->second;
}

std::size_t ParameterSet::element_count() const {
  std::size_t n = 0;
  for (const auto& [_, p] : params_) n += p.value.size();
  return n;
}

std::vector<std::string> ParameterSet::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, _] : params_) out.push_back(name);
  return out;
}

void ParameterSet::zero_grad() {
  for (auto& [_, p] : params_) p.grad.fill(0.0);
}

void ParameterSet::copy_values_from(const ParameterSet& other) {
  for (auto& [name, p] : params_) {
    auto it = other.params_.find(name);
    if (it == other.params_.end()) continue;
    if (it->second.value.shape() != p.value.shape()) {
      throw DimensionError("parameter '" + name + "' shape " + shape_string(p.value.shape()) + " vs " +
                           shape_string(it->second.value.shape()));
    }
    p.value = it->second.value;
  }
}

ParameterSet ParameterSet::snapshot() const {
  ParameterSet out;
  for (const auto& [name, p] : params_) out.add(name, p.value);
  return out;
}

DenseArray glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  DenseArray out({fan_in, fan_out});
  for (auto& v : out.values()) v = dist(rng);
  return out;
}

}  // namespace traceseq::numkit
