#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "thinkstate/graph.hpp"

namespace thinkstate {

template <typename T>
struct GradCheckReport {
  T max_rel_error = 0;
  std::size_t coords_checked = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  T worst_analytic = 0;
  T worst_numeric = 0;
};

// Compares backward() gradients of a scalar graph builder against central
// finite differences. Each input is perturbed in place and restored.
// max_coords bounds the coordinates sampled per input (0 = all of them).
template <typename T>
GradCheckReport<T> grad_check_report(
    const std::function<BasicTensor<T>(Graph<T>&)>& f,
    std::vector<BasicTensor<T>> inputs, T step, std::size_t max_coords = 0,
    std::uint64_t seed = 0) {
  std::vector<bool> prior(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    prior[i] = inputs[i].requires_grad();
    inputs[i].set_requires_grad(true);
    inputs[i].zero_grad();
  }
  {
    Graph<T> g;
    auto loss = f(g);
    g.backward(loss);
  }
  std::vector<std::vector<T>> analytic(inputs.size());
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto gr = inputs[i].has_grad() ? inputs[i].grad() : std::span<const T>{};
    analytic[i].assign(inputs[i].numel(), T(0));
    std::copy(gr.begin(), gr.end(), analytic[i].begin());
  }
  auto eval = [&]() {
    Graph<T> g(false);
    return f(g).item();
  };
  std::mt19937_64 rng(seed);
  GradCheckReport<T> rep;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<std::size_t> coords(inputs[i].numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coords != 0 && coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    for (std::size_t c : coords) {
      T& x = inputs[i][c];
      const T orig = x;
      x = orig + step;
      const T fp = eval();
      x = orig - step;
      const T fm = eval();
      x = orig;
      const T numeric = (fp - fm) / (T(2) * step);
      const T a = analytic[i][c];
      const T rel = std::abs(a - numeric) /
                    (std::abs(a) + std::abs(numeric) + static_cast<T>(1e-8));
      ++rep.coords_checked;
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_input = i;
        rep.worst_index = c;
        rep.worst_analytic = a;
        rep.worst_numeric = numeric;
      }
    }
  }
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(prior[i]);
  }
  return rep;
}

template <typename T>
T grad_check(const std::function<BasicTensor<T>(Graph<T>&)>& f,
             std::vector<BasicTensor<T>> inputs, T step, std::size_t max_coords = 0,
             std::uint64_t seed = 0) {
  return grad_check_report<T>(f, std::move(inputs), step, max_coords, seed)
      .max_rel_error;
}

}  // namespace thinkstate
