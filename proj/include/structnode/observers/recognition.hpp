#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "structnode/diffcore/gru.hpp"
#include "structnode/diffcore/mlp.hpp"
#include "structnode/observers/kkl.hpp"
#include "structnode/odesolve/signal.hpp"

namespace structnode::obs {

enum class RecognitionKind { Direct, RnnPlus, Kkl, Kklu };

inline std::string to_string(RecognitionKind k) {
  switch (k) {
    case RecognitionKind::Direct: return "direct";
    case RecognitionKind::RnnPlus: return "rnn_plus";
    case RecognitionKind::Kkl: return "kkl";
    case RecognitionKind::Kklu: return "kklu";
  }
  return "?";
}

inline RecognitionKind recognition_kind_from_string(const std::string& s) {
  if (s == "direct") return RecognitionKind::Direct;
  if (s == "rnn_plus" || s == "rnn+") return RecognitionKind::RnnPlus;
  if (s == "kkl") return RecognitionKind::Kkl;
  if (s == "kklu") return RecognitionKind::Kklu;
  throw ConfigError("unknown recognition kind '" + s + "'");
}

enum class DInit { Butterworth, Diagonal };

/// Dimensions seen by the recognition model. d_u is the number of input
/// channels the recognition model reads (0 when it ignores inputs).
struct RecognitionDims {
  Eigen::Index d_x = 0;
  Eigen::Index d_y = 0;
  Eigen::Index d_u = 0;
};

/// Shared: F = ones. PerChannel: one observer block per input channel.
enum class Forcing { Shared, PerChannel };

struct RecognitionOptions {
  RecognitionKind kind = RecognitionKind::Kkl;
  double t_c = 1.2;
  double dt = 0.03;
  Eigen::Index d_z = 0;  // 0 = use the dimension rule for the kind
  Eigen::Index d_omega = 3;
  double omega_c = 1.0;
  DInit d_init = DInit::Butterworth;
  bool train_D = true;
  std::vector<int> psi_hidden = {50, 50};
  Forcing forcing = Forcing::Shared;  // F layout for KKLu (KKL always shares)
};

/// d_y·(d_x + 1).
inline Eigen::Index kkl_dimension(Eigen::Index d_x, Eigen::Index d_y) { return d_y * (d_x + 1); }

/// (d_y + d_u)·(d_x + d_ω + 1).
inline Eigen::Index kklu_dimension(Eigen::Index d_x, Eigen::Index d_y, Eigen::Index d_u,
                                   Eigen::Index d_omega) {
  return (d_y + d_u) * (d_x + d_omega + 1);
}

/// Maps an observation window to an estimate of x(0): z̄(t_c) is assembled
/// from the first t_c seconds of outputs (and inputs), then fed to ψ.
class Recognition {
 public:
  Recognition() = default;

  Recognition(const RecognitionOptions& opt, const RecognitionDims& dims, std::mt19937_64& rng)
      : opt_(opt), dims_(dims) {
    if (dims.d_x <= 0 || dims.d_y <= 0 || dims.d_u < 0) {
      throw ConfigError("Recognition: invalid dimensions");
    }
    if (!(opt.dt > 0.0)) throw ConfigError("Recognition: dt must be positive");
    n_c_ = obs::detail::window_samples(ode::TimeGrid{0.0, opt.dt, 2}, opt.t_c);
    if (opt.kind == RecognitionKind::Kklu && dims.d_u == 0) {
      throw ConfigError("Recognition: KKLu needs an input signal (d_u > 0)");
    }
    switch (opt.kind) {
      case RecognitionKind::Direct:
        d_z_ = 0;
        break;
      case RecognitionKind::Kkl:
        d_z_ = opt.d_z > 0 ? opt.d_z : kkl_dimension(dims.d_x, dims.d_y);
        gains_ = make_gains(d_z_, dims.d_y, Forcing::Shared);
        break;
      case RecognitionKind::Kklu:
        d_z_ = opt.d_z > 0 ? opt.d_z : kklu_dimension(dims.d_x, dims.d_y, dims.d_u, opt.d_omega);
        gains_ = make_gains(d_z_, dims.d_y + dims.d_u, opt.forcing);
        break;
      case RecognitionKind::RnnPlus:
        d_z_ = opt.d_z > 0 ? opt.d_z
                           : (dims.d_u > 0
                                  ? kklu_dimension(dims.d_x, dims.d_y, dims.d_u, opt.d_omega)
                                  : kkl_dimension(dims.d_x, dims.d_y));
        gru_ = ad::Gru("gru", dims.d_y + dims.d_u, d_z_, rng);
        break;
    }
    std::vector<int> widths{static_cast<int>(input_width())};
    widths.insert(widths.end(), opt.psi_hidden.begin(), opt.psi_hidden.end());
    widths.push_back(static_cast<int>(dims.d_x));
    psi_ = ad::Mlp("psi", widths, rng);
  }

  const RecognitionOptions& options() const { return opt_; }
  const RecognitionDims& dims() const { return dims_; }
  RecognitionKind kind() const { return opt_.kind; }
  Eigen::Index window_samples() const { return n_c_; }
  Eigen::Index internal_dim() const { return d_z_; }

  /// Length of z̄(t_c).
  Eigen::Index input_width() const {
    switch (opt_.kind) {
      case RecognitionKind::Direct: return n_c_ * (dims_.d_y + dims_.d_u);
      case RecognitionKind::RnnPlus: return d_z_;
      case RecognitionKind::Kkl: return d_z_ + n_c_ * dims_.d_u;
      case RecognitionKind::Kklu: return d_z_;
    }
    return 0;
  }

  ad::Mlp& psi() { return psi_; }
  const ad::Mlp& psi() const { return psi_; }
  ad::Gru& gru() { return gru_; }
  const ad::Gru& gru() const { return gru_; }
  KklGains& gains() { return gains_; }
  const KklGains& gains() const { return gains_; }

  void set_psi(ad::Mlp psi) {
    if (psi.input_dim() != input_width() || psi.output_dim() != dims_.d_x) {
      throw ConfigError("Recognition: psi dimensions do not match the assembled input");
    }
    psi_ = std::move(psi);
  }

  std::vector<ad::Param*> parameters() {
    std::vector<ad::Param*> out = psi_.parameters();
    if (opt_.kind == RecognitionKind::RnnPlus) {
      for (ad::Param* p : gru_.parameters()) out.push_back(p);
    }
    if (uses_observer() && gains_.trainable) out.push_back(&gains_.poles);
    return out;
  }

  std::vector<const ad::Param*> parameters() const {
    auto self = const_cast<Recognition*>(this)->parameters();
    return {self.begin(), self.end()};
  }

  /// Keeps D Hurwitz after an optimizer step.
  void after_update(double eps_d = 1e-3) {
    if (uses_observer()) gains_.clamp_hurwitz(eps_d);
  }

  bool uses_observer() const {
    return opt_.kind == RecognitionKind::Kkl || opt_.kind == RecognitionKind::Kklu;
  }

  /// z̄(t_c) for a batch: y samples are d_y × B, u samples d_u × B (u may
  /// be empty when d_u = 0). Only the first n_c samples are read.
  ad::Var assemble(ad::Tape& tape, const ode::BatchSignal& y, const ode::BatchSignal* u) const {
    check_window(y, u);
    const Eigen::Index b = y.batch();
    switch (opt_.kind) {
      case RecognitionKind::Direct: {
        Matrix flat(input_width(), b);
        Eigen::Index off = 0;
        for (Eigen::Index i = 0; i < n_c_; ++i, off += dims_.d_y) {
          flat.middleRows(off, dims_.d_y) = y.samples[static_cast<std::size_t>(i)];
        }
        if (dims_.d_u > 0) flat.bottomRows(n_c_ * dims_.d_u) = flatten(*u);
        return tape.constant(std::move(flat));
      }
      case RecognitionKind::RnnPlus: {
        ad::Var h = tape.constant(Matrix::Zero(d_z_, b));
        for (Eigen::Index i = n_c_; i-- > 0;) {
          Matrix in(dims_.d_y + dims_.d_u, b);
          in.topRows(dims_.d_y) = y.samples[static_cast<std::size_t>(i)];
          if (dims_.d_u > 0) in.bottomRows(dims_.d_u) = u->samples[static_cast<std::size_t>(i)];
          h = gru_.step(tape, h, tape.constant(std::move(in)));
        }
        return h;
      }
      case RecognitionKind::Kkl: {
        ad::Var z = simulate_observer_backward(tape, gains_, y, n_c_);
        if (dims_.d_u == 0) return z;
        return ad::vcat({z, tape.constant(flatten(*u))});
      }
      case RecognitionKind::Kklu: {
        ode::BatchSignal stacked;
        stacked.grid = y.grid.prefix(n_c_);
        for (Eigen::Index i = 0; i < n_c_; ++i) {
          Matrix s(dims_.d_y + dims_.d_u, b);
          s.topRows(dims_.d_y) = y.samples[static_cast<std::size_t>(i)];
          s.bottomRows(dims_.d_u) = u->samples[static_cast<std::size_t>(i)];
          stacked.samples.push_back(std::move(s));
        }
        return simulate_observer_backward(tape, gains_, stacked, n_c_);
      }
    }
    throw UsageError("Recognition: unknown kind");
  }

  /// ψ(z̄(t_c)): d_x × B.
  ad::Var estimate(ad::Tape& tape, const ode::BatchSignal& y, const ode::BatchSignal* u) const {
    return psi_.forward(tape, assemble(tape, y, u));
  }

 private:
  KklGains make_gains(Eigen::Index d_z, Eigen::Index input_dim, Forcing forcing) const {
    KklGains g = opt_.d_init == DInit::Butterworth ? butterworth_gains(d_z, input_dim, opt_.omega_c)
                                                   : diagonal_gains(d_z, input_dim);
    if (forcing == Forcing::PerChannel && input_dim > 1) {
      if (d_z % input_dim != 0) throw ConfigError("Recognition: per-channel forcing needs d_z divisible by the channel count");
      const Eigen::Index per = d_z / input_dim;
      std::vector<Complex> poles;
      if (opt_.d_init == DInit::Butterworth) {
        poles = butterworth_poles(static_cast<int>(per), opt_.omega_c);
      } else {
        for (Eigen::Index k = 1; k <= per; ++k) poles.emplace_back(-static_cast<double>(k), 0.0);
      }
      g = per_channel_gains(poles, input_dim);
    }
    g.trainable = opt_.train_D;
    return g;
  }

  void check_window(const ode::BatchSignal& y, const ode::BatchSignal* u) const {
    if (y.channels() != dims_.d_y) throw ConfigError("Recognition: wrong output channel count");
    if (y.grid.n < n_c_) {
      throw PreconditionError("Recognition: trajectory shorter than the recognition window");
    }
    if (std::abs(y.grid.dt - opt_.dt) > 1e-9 * opt_.dt) {
      throw ConfigError("Recognition: sampling step differs from the configured dt");
    }
    if (dims_.d_u > 0) {
      if (u == nullptr || u->empty()) {
        throw ConfigError("Recognition: input window missing for a nonautonomous variant");
      }
      if (u->channels() != dims_.d_u || u->batch() != y.batch() || u->grid.n < n_c_) {
        throw ConfigError("Recognition: input window does not match the output window");
      }
    }
  }

  Matrix flatten(const ode::BatchSignal& s) const {
    const Eigen::Index c = s.channels();
    Matrix flat(n_c_ * c, s.batch());
    for (Eigen::Index i = 0; i < n_c_; ++i) {
      flat.middleRows(i * c, c) = s.samples[static_cast<std::size_t>(i)];
    }
    return flat;
  }

  RecognitionOptions opt_;
  RecognitionDims dims_;
  Eigen::Index n_c_ = 1;
  Eigen::Index d_z_ = 0;
  KklGains gains_;
  ad::Gru gru_;
  ad::Mlp psi_;
};

}  // namespace structnode::obs
