#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "voxseg/conv.hpp"
#include "voxseg/errors.hpp"
#include "voxseg/layers.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

constexpr double kLeakySlope = 0.01;

// One encoder, and either one decoder or three structurally identical ones.
// Heads are ordered (whole tumor, tumor core, enhancing tumor) throughout.
enum class Variant { E1D3, E1D1, E1D1Wide, E1D3Ens };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::E1D3: return "e1d3";
    case Variant::E1D1: return "e1d1";
    case Variant::E1D1Wide: return "e1d1_wide";
    case Variant::E1D3Ens: return "e1d3_ens";
  }
  return "?";
}

inline Variant variant_from_name(const std::string& s) {
  if (s == "e1d3") return Variant::E1D3;
  if (s == "e1d1") return Variant::E1D1;
  if (s == "e1d1_wide") return Variant::E1D1Wide;
  if (s == "e1d3_ens") return Variant::E1D3Ens;
  throw InvalidSpec("unknown network variant: " + s);
}

struct NetworkSpec {
  Variant variant = Variant::E1D3;
  index_t in_channels = 4;
  index_t levels = 5;
  index_t base_width = 32;
  index_t width_cap = 256;

  index_t num_heads() const { return (variant == Variant::E1D3 || variant == Variant::E1D3Ens) ? 3 : 1; }
  index_t head_classes() const { return variant == Variant::E1D3 ? 2 : 4; }
  index_t downsample_factor() const { return index_t{1} << (levels - 1); }
};

inline void validate_spec(const NetworkSpec& spec) {
  if (spec.levels < 2) throw InvalidSpec("network: need at least two levels");
  if (spec.in_channels < 1) throw InvalidSpec("network: need at least one input channel");
  if (spec.base_width < 1 || spec.width_cap < spec.base_width) throw InvalidSpec("network: bad width config");
}

namespace detail {

inline std::vector<index_t> capped_widths(index_t base, index_t cap, index_t levels) {
  std::vector<index_t> w(static_cast<size_t>(levels));
  for (index_t l = 0; l < levels; ++l) {
    const index_t doubled = base << l;
    w[static_cast<size_t>(l)] = std::min(doubled, cap);
  }
  return w;
}

inline index_t count_params_for_widths(const NetworkSpec& spec, const std::vector<index_t>& w) {
  const index_t L = spec.levels;
  auto conv_p = [](index_t cin, index_t cout, index_t k) { return cout * cin * k * k * k + cout; };
  index_t total = conv_p(spec.in_channels, w[0], 3) + conv_p(w[0], w[0], 3);
  for (index_t l = 1; l < L; ++l)
    total += conv_p(w[l - 1], w[l], 3) + conv_p(w[l], w[l], 3) + conv_p(w[l], w[l], 3);
  index_t dec = 0;
  for (index_t l = L - 2; l >= 0; --l)
    dec += w[l + 1] * w[l] * 8 + w[l] + conv_p(2 * w[l], w[l], 3) + conv_p(w[l], w[l], 3);
  dec += conv_p(w[0], spec.head_classes(), 1);
  return total + spec.num_heads() * dec;
}

// Widths for the widened single-decoder variant: the standard ladder scaled
// by one common factor so total parameters match the three-decoder network.
inline std::vector<index_t> wide_widths(const NetworkSpec& spec) {
  NetworkSpec ref = spec;
  ref.variant = Variant::E1D3;
  const auto base = capped_widths(spec.base_width, spec.width_cap, spec.levels);
  const double target = static_cast<double>(count_params_for_widths(ref, base));
  NetworkSpec wide = spec;
  wide.variant = Variant::E1D1Wide;
  auto widths_for = [&](double m) {
    std::vector<index_t> w(base.size());
    for (size_t i = 0; i < base.size(); ++i)
      w[i] = std::max<index_t>(1, static_cast<index_t>(std::lround(m * static_cast<double>(base[i]))));
    return w;
  };
  double m = 1.0;
  for (int it = 0; it < 60; ++it) {
    const double p = static_cast<double>(count_params_for_widths(wide, widths_for(m)));
    m *= std::sqrt(target / p);
  }
  // parameter count is quadratic in m between rounding steps; polish locally
  double best_m = m, best_err = HUGE_VAL;
  for (int step = -50; step <= 50; ++step) {
    const double cand = m * (1.0 + 1e-3 * step);
    const double p = static_cast<double>(count_params_for_widths(wide, widths_for(cand)));
    const double err = std::fabs(p - target) / target;
    if (err < best_err) {
      best_err = err;
      best_m = cand;
    }
  }
  return widths_for(best_m);
}

}  // namespace detail

inline std::vector<index_t> level_widths(const NetworkSpec& spec) {
  validate_spec(spec);
  if (spec.variant == Variant::E1D1Wide) return detail::wide_widths(spec);
  return detail::capped_widths(spec.base_width, spec.width_cap, spec.levels);
}

struct ParamInfo {
  std::string name;
  std::vector<index_t> shape;
  bool is_weight = false;  // weights get He init and weight decay; biases neither
  index_t fan_in = 0;

  index_t count() const {
    index_t n = 1;
    for (index_t e : shape) n *= e;
    return n;
  }
};

struct TapeOp {
  enum class Kind { Conv, ConvT, LRelu, Concat, Softmax } kind;
  int in0 = -1, in1 = -1, out = -1;
  int wi = -1, bi = -1;
  ConvShape conv;
  index_t out_ch = 0;  // ConvT
  int head = -1;       // Softmax
};

// The network as a flat op tape over numbered activation slots; slot 0 is the
// input. Re-running the tape from any op index with earlier slots intact
// reproduces the affected suffix only, which is what perturbation-based
// gradient verification leans on.
struct NetworkPlan {
  NetworkSpec spec;
  std::vector<index_t> widths;
  std::vector<TapeOp> ops;
  std::vector<ParamInfo> param_info;
  std::vector<int> head_slots;
  std::vector<int> param_owner_op;  // param index -> op that consumes it
  int num_slots = 0;
};

namespace detail {

struct PlanBuilder {
  NetworkPlan plan;

  int slot() { return plan.num_slots++; }

  int param(std::string name, std::vector<index_t> shape, bool is_weight, index_t fan_in) {
    plan.param_info.push_back({std::move(name), std::move(shape), is_weight, fan_in});
    plan.param_owner_op.push_back(-1);
    return static_cast<int>(plan.param_info.size()) - 1;
  }

  void own(int wi, int bi) {
    plan.param_owner_op[static_cast<size_t>(wi)] = static_cast<int>(plan.ops.size()) - 1;
    plan.param_owner_op[static_cast<size_t>(bi)] = static_cast<int>(plan.ops.size()) - 1;
  }

  int conv(int in, index_t cin, index_t cout, index_t k, index_t s, const std::string& name) {
    const int wi = param(name + ".weight", {cout, cin, k, k, k}, true, cin * k * k * k);
    const int bi = param(name + ".bias", {cout}, false, 0);
    const int out = slot();
    TapeOp op;
    op.kind = TapeOp::Kind::Conv;
    op.in0 = in;
    op.out = out;
    op.wi = wi;
    op.bi = bi;
    op.conv = ConvShape{cin, cout, k, s};
    plan.ops.push_back(op);
    own(wi, bi);
    return out;
  }

  int convt(int in, index_t cin, index_t cout, const std::string& name) {
    const int wi = param(name + ".weight", {cin, cout, 2, 2, 2}, true, cin * 8);
    const int bi = param(name + ".bias", {cout}, false, 0);
    const int out = slot();
    TapeOp op;
    op.kind = TapeOp::Kind::ConvT;
    op.in0 = in;
    op.out = out;
    op.wi = wi;
    op.bi = bi;
    op.out_ch = cout;
    plan.ops.push_back(op);
    own(wi, bi);
    return out;
  }

  int lrelu(int in) {
    const int out = slot();
    TapeOp op;
    op.kind = TapeOp::Kind::LRelu;
    op.in0 = in;
    op.out = out;
    plan.ops.push_back(op);
    return out;
  }

  int concat(int a, int b) {
    const int out = slot();
    TapeOp op;
    op.kind = TapeOp::Kind::Concat;
    op.in0 = a;
    op.in1 = b;
    op.out = out;
    plan.ops.push_back(op);
    return out;
  }

  int softmax(int in, int head) {
    const int out = slot();
    TapeOp op;
    op.kind = TapeOp::Kind::Softmax;
    op.in0 = in;
    op.out = out;
    op.head = head;
    plan.ops.push_back(op);
    return out;
  }

  // conv -> lrelu -> conv -> lrelu
  int stage(int in, index_t cin, index_t width, const std::string& name) {
    int s = conv(in, cin, width, 3, 1, name + ".conv1");
    s = lrelu(s);
    s = conv(s, width, width, 3, 1, name + ".conv2");
    return lrelu(s);
  }
};

}  // namespace detail

inline NetworkPlan make_plan(const NetworkSpec& spec) {
  validate_spec(spec);
  detail::PlanBuilder b;
  b.plan.spec = spec;
  b.plan.widths = level_widths(spec);
  const auto& w = b.plan.widths;
  const index_t L = spec.levels;

  const int input = b.slot();
  std::vector<int> skip(static_cast<size_t>(L));
  int cur = b.stage(input, spec.in_channels, w[0], "encoder.stage1");
  skip[0] = cur;
  for (index_t l = 1; l < L; ++l) {
    cur = b.conv(cur, w[l - 1], w[l], 3, 2, "encoder.down" + std::to_string(l + 1));
    cur = b.stage(cur, w[l], w[l], "encoder.stage" + std::to_string(l + 1));
    skip[static_cast<size_t>(l)] = cur;
  }

  for (index_t d = 0; d < spec.num_heads(); ++d) {
    const std::string dn = "decoder" + std::to_string(d);
    int x = skip[static_cast<size_t>(L - 1)];
    for (index_t l = L - 2; l >= 0; --l) {
      x = b.convt(x, w[l + 1], w[l], dn + ".up" + std::to_string(l + 1));
      x = b.concat(skip[static_cast<size_t>(l)], x);
      x = b.stage(x, 2 * w[l], w[l], dn + ".stage" + std::to_string(l + 1));
    }
    int logits = b.conv(x, w[0], spec.head_classes(), 1, 1, dn + ".head");
    b.plan.head_slots.push_back(b.softmax(logits, static_cast<int>(d)));
  }
  return b.plan;
}

struct ParamArray {
  std::vector<double> value;
  std::vector<double> grad;
};

struct NetworkState {
  std::vector<ParamArray> params;
};

inline index_t count_params(const NetworkPlan& plan) {
  index_t total = 0;
  for (const auto& info : plan.param_info) total += info.count();
  return total;
}

inline NetworkState init_network(const NetworkPlan& plan, uint64_t seed) {
  NetworkState state;
  state.params.resize(plan.param_info.size());
  Rng rng = Rng(seed).split("init");
  for (size_t i = 0; i < plan.param_info.size(); ++i) {
    const auto& info = plan.param_info[i];
    auto& p = state.params[i];
    p.value.assign(static_cast<size_t>(info.count()), 0.0);
    p.grad.assign(static_cast<size_t>(info.count()), 0.0);
    if (info.is_weight) {
      const double sd = std::sqrt(2.0 / static_cast<double>(info.fan_in));
      for (auto& v : p.value) v = rng.normal(0.0, sd);
    }
  }
  return state;
}

inline void zero_grad(NetworkState& state) {
  for (auto& p : state.params) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

struct ForwardTrace {
  std::vector<Tensor5> slots;
};

inline void run_tape(const NetworkPlan& plan, const NetworkState& state, ForwardTrace& tr, size_t op_begin) {
  for (size_t i = op_begin; i < plan.ops.size(); ++i) {
    const auto& op = plan.ops[i];
    auto& out = tr.slots[static_cast<size_t>(op.out)];
    const auto& in0 = tr.slots[static_cast<size_t>(op.in0)];
    switch (op.kind) {
      case TapeOp::Kind::Conv:
        conv3_forward(in0, state.params[static_cast<size_t>(op.wi)].value,
                      state.params[static_cast<size_t>(op.bi)].value, op.conv, out);
        break;
      case TapeOp::Kind::ConvT:
        convt3_forward(in0, state.params[static_cast<size_t>(op.wi)].value,
                       state.params[static_cast<size_t>(op.bi)].value, op.out_ch, out);
        break;
      case TapeOp::Kind::LRelu:
        leaky_relu_forward(in0, kLeakySlope, out);
        break;
      case TapeOp::Kind::Concat:
        concat_channels_forward(in0, tr.slots[static_cast<size_t>(op.in1)], out);
        break;
      case TapeOp::Kind::Softmax:
        softmax_channel_forward(in0, out);
        break;
    }
  }
}

inline void forward(const NetworkPlan& plan, const NetworkState& state, const Tensor5& x, ForwardTrace& tr) {
  if (x.c != plan.spec.in_channels) throw ShapeMismatch("forward: input channel count mismatch");
  const index_t f = plan.spec.downsample_factor();
  if (x.d % f != 0 || x.h % f != 0 || x.w % f != 0)
    throw ShapeMismatch("forward: spatial extents must be divisible by the downsampling factor");
  if (x.d == 0 || x.h == 0 || x.w == 0 || x.n == 0) throw ShapeMismatch("forward: empty input");
  tr.slots.resize(static_cast<size_t>(plan.num_slots));
  tr.slots[0] = x;
  run_tape(plan, state, tr, 0);
}

// Re-runs only ops [op_begin, end) against an existing trace; slots written
// by earlier ops keep their values.
inline void forward_from(const NetworkPlan& plan, const NetworkState& state, ForwardTrace& tr, size_t op_begin) {
  if (tr.slots.size() != static_cast<size_t>(plan.num_slots)) throw ShapeMismatch("forward_from: stale trace");
  run_tape(plan, state, tr, op_begin);
}

inline const Tensor5& head_output(const NetworkPlan& plan, const ForwardTrace& tr, index_t head) {
  return tr.slots[static_cast<size_t>(plan.head_slots[static_cast<size_t>(head)])];
}

struct GradTrace {
  std::vector<Tensor5> slots;
};

// head_grads[h] holds dL/d(head h probabilities). Parameter gradients are
// accumulated into state so batches can sum across calls.
inline void backward(const NetworkPlan& plan, NetworkState& state, const ForwardTrace& tr,
                     const std::vector<Tensor5>& head_grads, GradTrace& g) {
  if (head_grads.size() != plan.head_slots.size()) throw ShapeMismatch("backward: head gradient count mismatch");
  g.slots.resize(tr.slots.size());
  for (size_t i = 0; i < tr.slots.size(); ++i) {
    const auto& t = tr.slots[i];
    detail::ensure_shape(g.slots[i], t.n, t.c, t.d, t.h, t.w);
    g.slots[i].zero();
  }
  for (size_t h = 0; h < head_grads.size(); ++h) {
    auto& seed = g.slots[static_cast<size_t>(plan.head_slots[h])];
    if (!seed.same_shape(head_grads[h])) throw ShapeMismatch("backward: head gradient shape mismatch");
    for (size_t i = 0; i < seed.data.size(); ++i) seed.data[i] += head_grads[h].data[i];
  }
  for (size_t i = plan.ops.size(); i-- > 0;) {
    const auto& op = plan.ops[i];
    const auto& go = g.slots[static_cast<size_t>(op.out)];
    auto& gin = g.slots[static_cast<size_t>(op.in0)];
    const auto& in0 = tr.slots[static_cast<size_t>(op.in0)];
    switch (op.kind) {
      case TapeOp::Kind::Conv:
        conv3_backward(in0, state.params[static_cast<size_t>(op.wi)].value, go, op.conv, gin,
                       state.params[static_cast<size_t>(op.wi)].grad, state.params[static_cast<size_t>(op.bi)].grad);
        break;
      case TapeOp::Kind::ConvT:
        convt3_backward(in0, state.params[static_cast<size_t>(op.wi)].value, go, op.out_ch, gin,
                        state.params[static_cast<size_t>(op.wi)].grad, state.params[static_cast<size_t>(op.bi)].grad);
        break;
      case TapeOp::Kind::LRelu:
        leaky_relu_backward(tr.slots[static_cast<size_t>(op.out)], go, kLeakySlope, gin);
        break;
      case TapeOp::Kind::Concat:
        concat_channels_backward(go, gin, g.slots[static_cast<size_t>(op.in1)]);
        break;
      case TapeOp::Kind::Softmax:
        softmax_channel_backward(tr.slots[static_cast<size_t>(op.out)], go, gin);
        break;
    }
  }
}

}  // namespace voxseg
