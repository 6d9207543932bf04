#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "voxseg/errors.hpp"
#include "voxseg/network.hpp"
#include "voxseg/tensor.hpp"
#include "voxseg/volume.hpp"

namespace voxseg {

constexpr double kLogClamp = 1e-12;

// 1 - (2*sum(p*g) + eps) / (sum(p) + sum(g) + eps), elementwise over matching
// shapes. grad (assigned, not accumulated) is with respect to p.
inline double soft_dice_loss(const Tensor5& p, const Tensor5& g, double eps, Tensor5* grad = nullptr) {
  if (!p.same_shape(g)) throw ShapeMismatch("soft_dice_loss: shape mismatch");
  double sp = 0.0, sg = 0.0, spg = 0.0;
  for (size_t i = 0; i < p.data.size(); ++i) {
    sp += p.data[i];
    sg += g.data[i];
    spg += p.data[i] * g.data[i];
  }
  const double num = 2.0 * spg + eps;
  const double den = sp + sg + eps;
  if (grad) {
    detail::ensure_shape(*grad, p.n, p.c, p.d, p.h, p.w);
    const double dd = den * den;
    for (size_t i = 0; i < p.data.size(); ++i) grad->data[i] = (num - 2.0 * g.data[i] * den) / dd;
  }
  return 1.0 - num / den;
}

// Mean over voxels of -log p[target]. The returned gradient is taken with
// respect to the probabilities; pulled back through the softmax adjoint it
// becomes the familiar (p - onehot)/N logit gradient.
inline double cross_entropy_loss(const Tensor5& p, const LabelGrid& class_idx, Tensor5* grad = nullptr) {
  if (p.n != 1) throw ShapeMismatch("cross_entropy_loss: expects a single sample");
  if (p.d != class_idx.dim[0] || p.h != class_idx.dim[1] || p.w != class_idx.dim[2])
    throw ShapeMismatch("cross_entropy_loss: target shape mismatch");
  const index_t vox = p.voxels();
  if (grad) {
    detail::ensure_shape(*grad, p.n, p.c, p.d, p.h, p.w);
    grad->zero();
  }
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(vox);
  for (index_t v = 0; v < vox; ++v) {
    const index_t t = class_idx.data[static_cast<size_t>(v)];
    if (t >= p.c) throw InvalidLabel("cross_entropy_loss: class index out of range");
    const double pt = std::max(p.channel(0, t)[v], kLogClamp);
    total -= std::log(pt);
    if (grad) grad->channel(0, t)[v] = -inv_n / pt;
  }
  return total * inv_n;
}

struct LossReport {
  struct Head {
    double soft_dice = 0.0;
    double cross_entropy = 0.0;
  };
  double total = 0.0;
  std::vector<Head> per_head;
  int64_t step = -1;
};

namespace detail {

// Raw label {0,1,2,4} -> dense class index {0,1,2,3}.
inline index_t label_class_index(uint8_t label) {
  switch (label) {
    case 0: return 0;
    case 1: return 1;
    case 2: return 2;
    case 4: return 3;
  }
  throw InvalidLabel("label voxel outside {0,1,2,4}");
}

// Adds (into grad channel c) the soft-dice gradient for a binary target held
// as bytes, returning the loss term.
inline double dice_term_binary(const Tensor5& probs, index_t c, const uint8_t* target, double eps, double scale,
                               Tensor5& grad) {
  const index_t vox = probs.voxels();
  const double* p = probs.channel(0, c);
  double sp = 0.0, sg = 0.0, spg = 0.0;
  for (index_t v = 0; v < vox; ++v) {
    sp += p[v];
    sg += target[v];
    spg += p[v] * target[v];
  }
  const double num = 2.0 * spg + eps;
  const double den = sp + sg + eps;
  const double dd = den * den;
  double* gch = grad.channel(0, c);
  for (index_t v = 0; v < vox; ++v) gch[v] += scale * (num - 2.0 * target[v] * den) / dd;
  return 1.0 - num / den;
}

}  // namespace detail

// Scores every head of the trace against the label map and fills head_grads
// with dL_total/d(head probabilities). Two-class heads are scored against
// their region's binary map; four-class heads use the mean of per-foreground-
// class dice plus four-class cross entropy.
inline LossReport combined_loss(const NetworkPlan& plan, const ForwardTrace& tr, const LabelGrid& labels,
                                double dice_eps, std::vector<Tensor5>& head_grads) {
  const index_t heads = plan.spec.num_heads();
  LossReport report;
  report.per_head.resize(static_cast<size_t>(heads));
  head_grads.resize(static_cast<size_t>(heads));
  const double head_scale = 1.0 / static_cast<double>(heads);

  std::vector<uint8_t> target(labels.data.size());
  std::vector<index_t> class_idx(labels.data.size());
  for (size_t i = 0; i < labels.data.size(); ++i) class_idx[i] = detail::label_class_index(labels.data[i]);

  for (index_t h = 0; h < heads; ++h) {
    const Tensor5& p = head_output(plan, tr, h);
    if (p.n != 1) throw ShapeMismatch("combined_loss: expects single-sample traces");
    if (p.d != labels.dim[0] || p.h != labels.dim[1] || p.w != labels.dim[2])
      throw ShapeMismatch("combined_loss: label shape mismatch");
    Tensor5& grad = head_grads[static_cast<size_t>(h)];
    detail::ensure_shape(grad, p.n, p.c, p.d, p.h, p.w);
    grad.zero();
    const index_t vox = p.voxels();
    double dice_term = 0.0, ce = 0.0;

    if (plan.spec.head_classes() == 2) {
      const Region region = static_cast<Region>(h);
      for (size_t i = 0; i < labels.data.size(); ++i) target[i] = label_in_region(labels.data[i], region) ? 1 : 0;
      dice_term = detail::dice_term_binary(p, 1, target.data(), dice_eps, head_scale, grad);
      const double inv_n = 1.0 / static_cast<double>(vox);
      for (index_t v = 0; v < vox; ++v) {
        const index_t t = target[static_cast<size_t>(v)];
        const double pt = std::max(p.channel(0, t)[v], kLogClamp);
        ce -= std::log(pt);
        grad.channel(0, t)[v] += head_scale * (-inv_n / pt);
      }
      ce *= inv_n;
    } else {
      // classes (bg, label1, label2, label4); dice over the three foreground classes
      const double class_scale = head_scale / 3.0;
      for (index_t c = 1; c < 4; ++c) {
        for (size_t i = 0; i < class_idx.size(); ++i) target[i] = class_idx[i] == c ? 1 : 0;
        dice_term += detail::dice_term_binary(p, c, target.data(), dice_eps, class_scale, grad) / 3.0;
      }
      const double inv_n = 1.0 / static_cast<double>(vox);
      for (index_t v = 0; v < vox; ++v) {
        const index_t t = class_idx[static_cast<size_t>(v)];
        const double pt = std::max(p.channel(0, t)[v], kLogClamp);
        ce -= std::log(pt);
        grad.channel(0, t)[v] += head_scale * (-inv_n / pt);
      }
      ce *= inv_n;
    }
    report.per_head[static_cast<size_t>(h)] = {dice_term, ce};
    report.total += (dice_term + ce) * head_scale;
  }
  return report;
}

}  // namespace voxseg
