#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace soundstage {

// Reverse-mode autodiff over dense double tensors.
//
// Every op builds a node in a dynamic graph; backward() walks the graph in
// reverse topological order and accumulates gradients into leaf tensors that
// have requires_grad set. Everything is double precision: the test suites
// check analytic gradients against central finite differences at tight
// tolerances, which single precision cannot sustain.
//
// The engine is deliberately small: only the ops the models here need, all
// with hand-written backward passes, all with fixed loop orders so results
// are bit-reproducible run to run.

using Shape = std::vector<int>;

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily on first accumulation
  bool requires_grad = false;
  bool needs_grad = false;  // requires_grad or any ancestor does
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void()> backward;

  size_t numel() const { return value.size(); }
  void ensure_grad();
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(const Shape& shape);
  static Tensor full(const Shape& shape, double v);
  static Tensor from_data(const Shape& shape, std::vector<double> data);
  static Tensor scalar(double v);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(node_->shape.size()); }
  size_t numel() const { return node_->value.size(); }

  std::vector<double>& data() { return node_->value; }
  const std::vector<double>& data() const { return node_->value; }
  double item() const;

  const std::vector<double>& grad() const;
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad();

  void set_requires_grad(bool v);
  bool requires_grad() const { return node_->requires_grad; }

  // A grad-detached copy sharing nothing with the source graph.
  Tensor detach() const;

  std::shared_ptr<TensorNode> node() const { return node_; }
  static Tensor wrap(std::shared_ptr<TensorNode> n);

 private:
  std::shared_ptr<TensorNode> node_;
};

// While alive, newly built ops record no graph (values only). Nestable.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
};
bool grad_enabled();

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);

// ---- matrix ops (rank 2) ----
Tensor matmul(const Tensor& a, const Tensor& b);     // [m,k]x[k,n] -> [m,n]
Tensor transpose(const Tensor& a);                   // [m,n] -> [n,m]
Tensor add_rows(const Tensor& x, const Tensor& b);   // [n,d] + [d] broadcast
Tensor mul_rows(const Tensor& x, const Tensor& s);   // [n,d] * [d] broadcast
Tensor layer_norm(const Tensor& x, double eps = 1e-6);  // per-row, no affine
Tensor softmax_rows(const Tensor& x);
// Fused multi-head scaled-dot-product attention. q: [n,d], k,v: [m,d],
// d divisible by heads; head h uses columns [h*d/heads, (h+1)*d/heads).
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, int heads);

// ---- shape ops ----
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor slice_rows(const Tensor& x, int start, int len);
Tensor slice_cols(const Tensor& x, int start, int len);
Tensor stack_rows(const std::vector<Tensor>& rows);  // k vectors [d] -> [k,d]
Tensor mean_rows(const Tensor& x);                   // [k,d] -> [d]
Tensor gather_rows(const Tensor& x, const std::vector<int>& idx);
Tensor concat_channels(const Tensor& a, const Tensor& b);  // [c1,h,w],[c2,h,w]
Tensor slice_channels(const Tensor& x, int start, int len);
Tensor expand_channels(const Tensor& fill, int h, int w);  // [c] -> [c,h,w]
Tensor pad2d(const Tensor& x, int pad_r, int pad_c, double value);  // bottom/right
Tensor space_to_depth(const Tensor& x, int f);  // [c,h,w] -> [c*f*f,h/f,w/f]
Tensor depth_to_space(const Tensor& x, int f);
Tensor crop2d(const Tensor& x, int rows, int cols);  // keep top-left block
Tensor patchify_tokens(const Tensor& z, int p);  // [c,h,w] -> [(h/p)(w/p), c*p*p]
Tensor unpatchify_tokens(const Tensor& t, int c, int h, int w, int p);

// ---- convolutions ----
// x: [ci,h,w], w: [co,ci,kh,kw], b: [co] (undefined Tensor => no bias)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
// x: [ci,l], w: [co,ci,k], b: [co]
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b, int pad);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mse(const Tensor& a, const Tensor& b);  // mean((a-b)^2)
Tensor l2_norm(const Tensor& a);               // sqrt(sum(a^2))
Tensor l1_norm(const Tensor& a);

// Runs reverse-mode accumulation from a scalar loss.
void backward(const Tensor& loss);

}  // namespace soundstage
