#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace eegrecon::nn {

using Shape = std::vector<int>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor. Batched layouts are N-first: [N,C,H,W] for images
// and latents, [N,C,L] for EEG, [N,F] for feature rows.
struct Tensor {
  Shape shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(Shape s, double fill = 0.0);
  Tensor(Shape s, std::vector<double> values);

  std::size_t size() const { return data.size(); }
  int dim(int i) const { return shape.at(i < 0 ? shape.size() + i : i); }
  int rank() const { return static_cast<int>(shape.size()); }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool all_finite() const;
};

struct Node;
using Var = std::shared_ptr<Node>;

// One value in the computation graph. Leaves created from parameters keep
// their node across forward passes; everything else is rebuilt per pass.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<Var> parents;
  std::function<void(Node&)> backward_fn;

  const Shape& shape() const { return value.shape; }
  Tensor& ensure_grad();
};

Var constant(Tensor t);
Var leaf(Tensor t, bool requires_grad);

// Seeds d(root)/d(root) = 1 (root must hold a single element) and
// accumulates gradients into every reachable node that requires them.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace eegrecon::nn
