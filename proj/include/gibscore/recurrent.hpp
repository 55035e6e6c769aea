#pragma once

// Single-layer LSTM unit language model.
//
// Input at step t is the embedding of the previous token (BOS at t = 0):
//
//   a_t = W_x e_t + W_h h_{t-1} + b           (4H, gate blocks i | f | g | o)
//   i = sigmoid(a_i)   f = sigmoid(a_f)   g = tanh(a_g)   o = sigmoid(a_o)
//   c_t = f * c_{t-1} + i * g
//   h_t = o * tanh(c_t)
//   p(x_t | x_<t) = softmax(W_y h_t + b_y)
//
// with h_{-1} = c_{-1} = 0. The embedding table has V + 1 rows; row V is BOS.
// Training minimizes the mean per-token cross-entropy with Adam and global
// gradient-norm clipping.

#include "gibscore/binary_io.hpp"
#include "gibscore/error.hpp"
#include "gibscore/interchange.hpp"
#include "gibscore/rng.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace gibscore {

inline constexpr binary::Magic kRecurrentMagic = binary::make_magic("GIBR");

struct RecurrentConfig
{
  std::uint32_t embed_dim = 64;
  std::uint32_t hidden_dim = 128;
  std::uint32_t epochs = 10;
  std::uint32_t batch_size = 16;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  double init_scale = 0.1; //!< weights ~ U(-s, s); biases start at zero
  std::uint64_t seed = 0;
};

//! All trainable tensors. Also used for gradients and Adam moments.
struct LstmParameters
{
  Eigen::MatrixXd embedding; //!< (V + 1) x E
  Eigen::MatrixXd w_input;   //!< 4H x E
  Eigen::MatrixXd w_hidden;  //!< 4H x H
  Eigen::VectorXd bias;      //!< 4H
  Eigen::MatrixXd w_out;     //!< V x H
  Eigen::VectorXd b_out;     //!< V

  static LstmParameters zeros(std::uint32_t vocab, std::uint32_t embed, std::uint32_t hidden)
  {
    LstmParameters p;
    p.embedding = Eigen::MatrixXd::Zero(vocab + 1, embed);
    p.w_input = Eigen::MatrixXd::Zero(4 * hidden, embed);
    p.w_hidden = Eigen::MatrixXd::Zero(4 * hidden, hidden);
    p.bias = Eigen::VectorXd::Zero(4 * hidden);
    p.w_out = Eigen::MatrixXd::Zero(vocab, hidden);
    p.b_out = Eigen::VectorXd::Zero(vocab);
    return p;
  }

  //! Visits every tensor in serialization order.
  template<typename F>
  void for_each_tensor(F&& f)
  {
    f(embedding);
    f(w_input);
    f(w_hidden);
    f(bias);
    f(w_out);
    f(b_out);
  }
  template<typename F>
  void for_each_tensor(F&& f) const
  {
    f(embedding);
    f(w_input);
    f(w_hidden);
    f(bias);
    f(w_out);
    f(b_out);
  }

  std::size_t parameter_count() const
  {
    std::size_t n = 0;
    for_each_tensor([&](const auto& t) { n += static_cast<std::size_t>(t.size()); });
    return n;
  }

  double squared_norm() const
  {
    double s = 0.0;
    for_each_tensor([&](const auto& t) { s += t.squaredNorm(); });
    return s;
  }

  bool all_finite() const
  {
    bool ok = true;
    for_each_tensor([&](const auto& t) { ok = ok && t.allFinite(); });
    return ok;
  }

  void set_zero()
  {
    for_each_tensor([](auto& t) { t.setZero(); });
  }
};

namespace detail {

inline double sigmoid(double x) noexcept
{
  return 1.0 / (1.0 + std::exp(-x));
}

//! Numerically stable softmax of `logits` into `out`.
inline void softmax(const Eigen::VectorXd& logits, Eigen::VectorXd& out)
{
  const double m = logits.maxCoeff();
  out = (logits.array() - m).exp();
  out /= out.sum();
}

} // namespace detail

class RecurrentModel
{
public:
  RecurrentModel() = default;

  RecurrentModel(std::uint32_t vocab, std::uint32_t embed, std::uint32_t hidden)
    : vocab_(vocab)
    , embed_(embed)
    , hidden_(hidden)
    , params_(LstmParameters::zeros(vocab, embed, hidden))
  {
    if (vocab == 0 || embed == 0 || hidden == 0) {
      throw UsageError("recurrent model dimensions must be positive");
    }
  }

  //! Fresh model with weights drawn from U(-scale, scale) in the fixed order
  //! embedding, w_input, w_hidden, w_out (each row-major); biases zero.
  static RecurrentModel initialized(std::uint32_t vocab, const RecurrentConfig& cfg)
  {
    RecurrentModel m(vocab, cfg.embed_dim, cfg.hidden_dim);
    SplitMix64 rng(cfg.seed);
    auto fill = [&](Eigen::MatrixXd& w) {
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          w(r, c) = rng.uniform(-cfg.init_scale, cfg.init_scale);
        }
      }
    };
    fill(m.params_.embedding);
    fill(m.params_.w_input);
    fill(m.params_.w_hidden);
    fill(m.params_.w_out);
    return m;
  }

  std::uint32_t vocab_size() const noexcept { return vocab_; }
  std::uint32_t embed_dim() const noexcept { return embed_; }
  std::uint32_t hidden_dim() const noexcept { return hidden_; }
  Token bos() const noexcept { return vocab_; }

  const LstmParameters& parameters() const noexcept { return params_; }
  LstmParameters& parameters() noexcept { return params_; }

  //! Recurrent state after consuming a prefix.
  struct State
  {
    Eigen::VectorXd h;
    Eigen::VectorXd c;
  };

  State initial_state() const
  {
    return { Eigen::VectorXd::Zero(hidden_), Eigen::VectorXd::Zero(hidden_) };
  }

  //! Advances `state` by one input token (BOS allowed).
  void step(State& state, Token input) const
  {
    const std::size_t H = hidden_;
    Eigen::VectorXd a = params_.w_input * params_.embedding.row(input).transpose() +
                        params_.w_hidden * state.h + params_.bias;
    for (std::size_t j = 0; j < H; ++j) {
      const double i = detail::sigmoid(a[j]);
      const double f = detail::sigmoid(a[H + j]);
      const double g = std::tanh(a[2 * H + j]);
      const double o = detail::sigmoid(a[3 * H + j]);
      state.c[j] = f * state.c[j] + i * g;
      state.h[j] = o * std::tanh(state.c[j]);
    }
  }

  void output_distribution(const State& state, Eigen::VectorXd& out) const
  {
    Eigen::VectorXd logits = params_.w_out * state.h + params_.b_out;
    detail::softmax(logits, out);
  }

  std::vector<double> next_token_distribution(std::span<const Token> prefix, std::size_t step_index) const
  {
    if (step_index > prefix.size()) {
      throw ValidationError("step " + std::to_string(step_index) +
                            " exceeds prefix length " + std::to_string(prefix.size()));
    }
    State s = initial_state();
    step(s, bos());
    for (std::size_t t = 0; t < step_index; ++t) {
      check_token(prefix[t]);
      step(s, prefix[t]);
    }
    Eigen::VectorXd p;
    output_distribution(s, p);
    return { p.data(), p.data() + p.size() };
  }

  template<typename Sink>
  void for_each_distribution(std::span<const Token> sequence, Sink&& sink) const
  {
    State s = initial_state();
    Eigen::VectorXd p;
    for (std::size_t t = 0; t < sequence.size(); ++t) {
      step(s, t == 0 ? bos() : sequence[t - 1]);
      output_distribution(s, p);
      sink(t, std::span<const double>(p.data(), static_cast<std::size_t>(p.size())));
      check_token(sequence[t]);
    }
  }

  //! Sum over steps of -log p(x_t | x_<t), accumulating d(sum * scale)/dθ
  //! into `grad` when it is non-null. Full backpropagation through time.
  double sequence_loss(std::span<const Token> seq, LstmParameters* grad, double scale = 1.0) const
  {
    const std::size_t T = seq.size();
    const std::size_t H = hidden_;
    if (T == 0) {
      return 0.0;
    }

    std::vector<Token> inputs(T);
    inputs[0] = bos();
    for (std::size_t t = 0; t < T; ++t) {
      check_token(seq[t]);
      if (t > 0) {
        inputs[t] = seq[t - 1];
      }
    }

    // forward, caching gate activations
    std::vector<Eigen::VectorXd> gates(T), cells(T + 1), hiddens(T + 1), probs(T);
    cells[0] = Eigen::VectorXd::Zero(H);
    hiddens[0] = Eigen::VectorXd::Zero(H);
    double loss = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      Eigen::VectorXd a = params_.w_input * params_.embedding.row(inputs[t]).transpose() +
                          params_.w_hidden * hiddens[t] + params_.bias;
      Eigen::VectorXd act(4 * H);
      cells[t + 1].resize(H);
      hiddens[t + 1].resize(H);
      for (std::size_t j = 0; j < H; ++j) {
        act[j] = detail::sigmoid(a[j]);
        act[H + j] = detail::sigmoid(a[H + j]);
        act[2 * H + j] = std::tanh(a[2 * H + j]);
        act[3 * H + j] = detail::sigmoid(a[3 * H + j]);
        cells[t + 1][j] = act[H + j] * cells[t][j] + act[j] * act[2 * H + j];
        hiddens[t + 1][j] = act[3 * H + j] * std::tanh(cells[t + 1][j]);
      }
      gates[t] = std::move(act);
      Eigen::VectorXd logits = params_.w_out * hiddens[t + 1] + params_.b_out;
      detail::softmax(logits, probs[t]);
      loss -= std::log(probs[t][seq[t]]);
    }
    if (!grad) {
      return loss;
    }

    // backward
    Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);
    Eigen::VectorXd da(4 * H);
    for (std::size_t t = T; t-- > 0;) {
      Eigen::VectorXd dlogits = probs[t] * scale;
      dlogits[seq[t]] -= scale;
      grad->w_out.noalias() += dlogits * hiddens[t + 1].transpose();
      grad->b_out += dlogits;
      Eigen::VectorXd dh = params_.w_out.transpose() * dlogits + dh_next;

      const auto& act = gates[t];
      for (std::size_t j = 0; j < H; ++j) {
        const double i = act[j], f = act[H + j], g = act[2 * H + j], o = act[3 * H + j];
        const double tc = std::tanh(cells[t + 1][j]);
        const double dout = dh[j] * tc;
        const double dc = dh[j] * o * (1.0 - tc * tc) + dc_next[j];
        da[j] = dc * g * i * (1.0 - i);
        da[H + j] = dc * cells[t][j] * f * (1.0 - f);
        da[2 * H + j] = dc * i * (1.0 - g * g);
        da[3 * H + j] = dout * o * (1.0 - o);
        dc_next[j] = dc * f;
      }
      grad->w_input.noalias() += da * params_.embedding.row(inputs[t]);
      grad->w_hidden.noalias() += da * hiddens[t].transpose();
      grad->bias += da;
      grad->embedding.row(inputs[t]) += (params_.w_input.transpose() * da).transpose();
      dh_next.noalias() = params_.w_hidden.transpose() * da;
    }
    return loss;
  }

  //! Mean per-token cross-entropy over a corpus (empty sequences ignored).
  double corpus_loss(std::span<const TokenSequence> corpus) const
  {
    double total = 0.0;
    std::size_t tokens = 0;
    for (const auto& s : corpus) {
      total += sequence_loss(s.tokens, nullptr);
      tokens += s.tokens.size();
    }
    if (tokens == 0) {
      throw UndefinedError("corpus has no tokens");
    }
    return total / static_cast<double>(tokens);
  }

  // GIBR: "GIBR" | version u32 | V u32 | E u32 | H u32 | f64 tensors, each
  //       row-major, in the order embedding, w_input, w_hidden, bias, w_out, b_out
  std::vector<char> encode() const
  {
    binary::Writer w;
    w.put_magic(kRecurrentMagic);
    w.put(kFormatVersion);
    w.put(vocab_);
    w.put(embed_);
    w.put(hidden_);
    params_.for_each_tensor([&](const auto& t) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) {
          w.put(t(r, c));
        }
      }
    });
    return w.bytes();
  }

  static RecurrentModel decode(binary::Reader in)
  {
    in.expect_magic(kRecurrentMagic);
    in.expect_version(kFormatVersion);
    const auto V = in.get<std::uint32_t>();
    const auto E = in.get<std::uint32_t>();
    const auto H = in.get<std::uint32_t>();
    if (V == 0 || E == 0 || H == 0) {
      throw ValidationError(in.source() + ": recurrent model dimensions must be positive");
    }
    const std::uint64_t expected = (std::uint64_t{ V } + 1) * E + 4ull * H * E + 4ull * H * H +
                                   4ull * H + std::uint64_t{ V } * H + V;
    if (expected * sizeof(double) != in.remaining()) {
      throw CorruptionError(in.source() + ": parameter payload has " +
                            std::to_string(in.remaining()) + " bytes, expected " +
                            std::to_string(expected * sizeof(double)));
    }
    RecurrentModel m(V, E, H);
    m.params_.for_each_tensor([&](auto& t) {
      for (Eigen::Index r = 0; r < t.rows(); ++r) {
        for (Eigen::Index c = 0; c < t.cols(); ++c) {
          t(r, c) = in.get<double>();
        }
      }
    });
    in.expect_end();
    if (!m.params_.all_finite()) {
      throw ValidationError(in.source() + ": non-finite parameter");
    }
    return m;
  }

private:
  void check_token(Token t) const
  {
    if (t >= vocab_) {
      throw ValidationError("token " + std::to_string(t) + " out of range for vocab size " +
                            std::to_string(vocab_));
    }
  }

  std::uint32_t vocab_ = 1;
  std::uint32_t embed_ = 1;
  std::uint32_t hidden_ = 1;
  LstmParameters params_;
};

//! Adam with bias correction.
class AdamOptimizer
{
public:
  AdamOptimizer(const LstmParameters& shape, const RecurrentConfig& cfg)
    : cfg_(cfg)
    , m_(shape)
    , v_(shape)
  {
    m_.set_zero();
    v_.set_zero();
  }

  void step(LstmParameters& params, LstmParameters& grad)
  {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    // visit the six tensors of params, grad, m and v in lockstep
    auto update = [&](auto& p, auto& g, auto& m, auto& v) {
      m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
      v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
      p.array() -= cfg_.learning_rate * (m.array() / bc1) /
                   ((v.array() / bc2).sqrt() + cfg_.epsilon);
    };
    update(params.embedding, grad.embedding, m_.embedding, v_.embedding);
    update(params.w_input, grad.w_input, m_.w_input, v_.w_input);
    update(params.w_hidden, grad.w_hidden, m_.w_hidden, v_.w_hidden);
    update(params.bias, grad.bias, m_.bias, v_.bias);
    update(params.w_out, grad.w_out, m_.w_out, v_.w_out);
    update(params.b_out, grad.b_out, m_.b_out, v_.b_out);
  }

private:
  RecurrentConfig cfg_;
  LstmParameters m_;
  LstmParameters v_;
  std::uint64_t t_ = 0;
};

struct RecurrentTrainingResult
{
  RecurrentModel model;
  //! Mean per-token corpus cross-entropy; entry 0 is before training, entry
  //! e after epoch e.
  std::vector<double> epoch_loss;
};

//! Mini-batch Adam on the mean per-token cross-entropy. Sequence order is
//! reshuffled every epoch from `cfg.seed`; single-threaded and deterministic.
inline RecurrentTrainingResult train_recurrent(std::span<const TokenSequence> corpus,
                                               const RecurrentConfig& cfg)
{
  if (corpus.empty()) {
    throw InsufficientDataError("cannot train a recurrent model on an empty corpus");
  }
  if (cfg.batch_size == 0) {
    throw UsageError("batch size must be positive");
  }
  const auto vocab = corpus.front().vocab_size;
  for (const auto& s : corpus) {
    if (s.vocab_size != vocab) {
      throw ValidationError("corpus mixes vocab sizes " + std::to_string(vocab) + " and " +
                            std::to_string(s.vocab_size));
    }
  }

  RecurrentTrainingResult result{ RecurrentModel::initialized(vocab, cfg), {} };
  auto& model = result.model;
  result.epoch_loss.push_back(model.corpus_loss(corpus));

  AdamOptimizer adam(model.parameters(), cfg);
  LstmParameters grad = model.parameters();
  SplitMix64 order_rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::uint32_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::size_t tokens = 0;
      for (std::size_t b = start; b < end; ++b) {
        tokens += corpus[order[b]].tokens.size();
      }
      if (tokens == 0) {
        continue;
      }
      grad.set_zero();
      const double scale = 1.0 / static_cast<double>(tokens);
      double loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        loss += model.sequence_loss(corpus[order[b]].tokens, &grad, scale);
      }
      loss *= scale;
      if (!std::isfinite(loss) || !grad.all_finite()) {
        throw TrainingDivergedError("training diverged at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index) +
                                    " (loss " + std::to_string(loss) + ")");
      }
      const double norm = std::sqrt(grad.squared_norm());
      if (norm > cfg.clip_norm) {
        const double shrink = cfg.clip_norm / norm;
        grad.for_each_tensor([&](auto& t) { t *= shrink; });
      }
      adam.step(model.parameters(), grad);
      if (!model.parameters().all_finite()) {
        throw TrainingDivergedError("non-finite parameters after epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index));
      }
    }
    result.epoch_loss.push_back(model.corpus_loss(corpus));
  }
  return result;
}

inline void write_recurrent(const RecurrentModel& model, const std::filesystem::path& destination)
{
  binary::save_bytes(model.encode(), destination);
}

inline RecurrentModel read_recurrent(const std::filesystem::path& source)
{
  return RecurrentModel::decode(binary::Reader::open(source));
}

} // namespace gibscore
