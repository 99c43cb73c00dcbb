#pragma once

#include <cmath>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "phenoicu/common.hpp"

namespace phenoicu {

/// One input sequence: T rows of D features, with a label per timestep
/// (-1 where the timestep is not scored).
struct Sequence {
    Eigen::MatrixXd x;  // T x D
    std::vector<int> labels;

    std::size_t length() const { return static_cast<std::size_t>(x.rows()); }
};

struct LstmConfig {
    int hidden = 128;
    int epochs = 30;
    int batch_size = 8;
    double learning_rate = 1e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    bool zero_init = false;

    nlohmann::json to_json() const {
        return {{"hidden", hidden},         {"epochs", epochs}, {"batch_size", batch_size},
                {"layers", 1},              {"learning_rate", learning_rate},
                {"weight_decay", weight_decay}, {"optimizer", "adam"}, {"seed", seed}};
    }

    static LstmConfig from_json(const nlohmann::json& j) {
        LstmConfig c;
        c.hidden = j.value("hidden", c.hidden);
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.seed = j.value("seed", c.seed);
        if (c.hidden < 1 || c.epochs < 0 || c.batch_size < 1) throw ConfigError("invalid LSTM configuration");
        if (j.value("layers", 1) != 1) throw ConfigError("only single-layer LSTMs are supported");
        return c;
    }
};

/// Parameter bundle. Gate blocks in W, U, b are stacked as input, forget,
/// cell candidate, output (rows [0,H), [H,2H), [2H,3H), [3H,4H)).
struct LstmParams {
    Eigen::MatrixXd W;  // 4H x D
    Eigen::MatrixXd U;  // 4H x H
    Eigen::MatrixXd b;  // 4H x 1
    Eigen::MatrixXd V;  // O x H
    Eigen::MatrixXd c;  // O x 1

    int hidden() const { return static_cast<int>(U.cols()); }
    int inputs() const { return static_cast<int>(W.cols()); }
    int outputs() const { return static_cast<int>(V.rows()); }

    static LstmParams zeros(int inputs, int hidden, int outputs) {
        return {Eigen::MatrixXd::Zero(4 * hidden, inputs), Eigen::MatrixXd::Zero(4 * hidden, hidden),
                Eigen::MatrixXd::Zero(4 * hidden, 1), Eigen::MatrixXd::Zero(outputs, hidden),
                Eigen::MatrixXd::Zero(outputs, 1)};
    }

    /// Uniform(-1/sqrt(H), 1/sqrt(H)) initialisation.
    static LstmParams random(int inputs, int hidden, int outputs, Rng& rng) {
        LstmParams p = zeros(inputs, hidden, outputs);
        const double k = 1.0 / std::sqrt(static_cast<double>(hidden));
        for (auto* m : p.tensors()) {
            for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-k, k);
        }
        return p;
    }

    /// W, U, b, V, c in that order.
    std::vector<Eigen::MatrixXd*> tensors() { return {&W, &U, &b, &V, &c}; }
    std::vector<const Eigen::MatrixXd*> tensors() const { return {&W, &U, &b, &V, &c}; }

    bool finite() const { return W.allFinite() && U.allFinite() && b.allFinite() && V.allFinite() && c.allFinite(); }

    friend bool operator==(const LstmParams& a, const LstmParams& b) {
        return a.W == b.W && a.U == b.U && a.b == b.b && a.V == b.V && a.c == b.c;
    }
};

enum class GradientMutation { None, CorruptForgetGate };

/// Single-layer LSTM classifier with a per-timestep head: sigmoid for one
/// output (binary), softmax otherwise.
class Lstm {
public:
    LstmParams params;
    std::vector<double> loss_curve;  // mean training loss per epoch

    Lstm() = default;
    explicit Lstm(LstmParams p) : params(std::move(p)) {}

    int n_classes() const { return params.outputs() == 1 ? 2 : params.outputs(); }

    /// Class probabilities at every timestep, T x n_classes.
    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const {
        const Trace tr = forward(x);
        Eigen::MatrixXd out(x.rows(), n_classes());
        for (Eigen::Index t = 0; t < x.rows(); ++t) out.row(t) = probs(tr.logits.col(t)).transpose();
        return out;
    }

    /// Hidden states, H x T (exposed for boundedness checks).
    Eigen::MatrixXd hidden_states(const Eigen::MatrixXd& x) const { return forward(x).h; }

    /// Mean cross-entropy over all scored timesteps of a batch.
    double loss(const std::vector<Sequence>& batch) const {
        double total = 0.0;
        std::size_t n = 0;
        for (const auto& s : batch) {
            const Trace tr = forward(s.x);
            for (std::size_t t = 0; t < s.length(); ++t) {
                if (s.labels[t] < 0) continue;
                total += timestep_loss(tr.logits.col(static_cast<Eigen::Index>(t)), s.labels[t]);
                ++n;
            }
        }
        return n == 0 ? 0.0 : total / static_cast<double>(n);
    }

    /// Analytic gradient of loss(batch) by backpropagation through time.
    LstmParams gradients(const std::vector<Sequence>& batch, GradientMutation mutation = GradientMutation::None) const {
        const int H = params.hidden();
        LstmParams g = LstmParams::zeros(params.inputs(), H, params.outputs());
        std::size_t n = 0;
        for (const auto& s : batch) {
            for (int y : s.labels) n += y >= 0;
        }
        if (n == 0) return g;
        const double scale = 1.0 / static_cast<double>(n);

        for (const auto& s : batch) {
            const auto T = static_cast<Eigen::Index>(s.length());
            if (T == 0) continue;
            const Trace tr = forward(s.x);
            Eigen::VectorXd dh_next = Eigen::VectorXd::Zero(H);
            Eigen::VectorXd dc_next = Eigen::VectorXd::Zero(H);
            for (Eigen::Index t = T - 1; t >= 0; --t) {
                Eigen::VectorXd dh = dh_next;
                const int y = s.labels[static_cast<std::size_t>(t)];
                if (y >= 0) {
                    Eigen::VectorXd dlogit = probs_raw(tr.logits.col(t));
                    if (params.outputs() == 1) {
                        dlogit(0) -= static_cast<double>(y);
                    } else {
                        dlogit(y) -= 1.0;
                    }
                    dlogit *= scale;
                    g.V += dlogit * tr.h.col(t).transpose();
                    g.c += dlogit;
                    dh += params.V.transpose() * dlogit;
                }
                const auto i = tr.gates.col(t).segment(0, H);
                const auto f = tr.gates.col(t).segment(H, H);
                const auto gg = tr.gates.col(t).segment(2 * H, H);
                const auto o = tr.gates.col(t).segment(3 * H, H);
                const Eigen::VectorXd tanh_c = tr.c.col(t).array().tanh();
                const Eigen::VectorXd c_prev = t > 0 ? Eigen::VectorXd(tr.c.col(t - 1)) : Eigen::VectorXd::Zero(H);
                const Eigen::VectorXd h_prev = t > 0 ? Eigen::VectorXd(tr.h.col(t - 1)) : Eigen::VectorXd::Zero(H);

                const Eigen::VectorXd dc = dc_next.array() + dh.array() * o.array() * (1.0 - tanh_c.array().square());
                Eigen::VectorXd dz(4 * H);
                dz.segment(0, H) = dc.array() * gg.array() * i.array() * (1.0 - i.array());
                dz.segment(H, H) = dc.array() * c_prev.array() * f.array() * (1.0 - f.array());
                dz.segment(2 * H, H) = dc.array() * i.array() * (1.0 - gg.array().square());
                dz.segment(3 * H, H) = dh.array() * tanh_c.array() * o.array() * (1.0 - o.array());
                if (mutation == GradientMutation::CorruptForgetGate) dz.segment(H, H) *= 1.5;

                g.W += dz * s.x.row(t);
                g.U += dz * h_prev.transpose();
                g.b += dz;
                dh_next = params.U.transpose() * dz;
                dc_next = dc.array() * f.array();
            }
        }
        return g;
    }

private:
    struct Trace {
        Eigen::MatrixXd gates;   // 4H x T (post-activation)
        Eigen::MatrixXd c;       // H x T
        Eigen::MatrixXd h;       // H x T
        Eigen::MatrixXd logits;  // O x T
    };

    static double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

    Trace forward(const Eigen::MatrixXd& x) const {
        if (x.rows() > 0 && x.cols() != params.inputs()) {
            throw DataError("sequence width " + std::to_string(x.cols()) + " does not match LSTM input width " +
                            std::to_string(params.inputs()));
        }
        const int H = params.hidden();
        const auto T = x.rows();
        Trace tr{Eigen::MatrixXd(4 * H, T), Eigen::MatrixXd(H, T), Eigen::MatrixXd(H, T),
                 Eigen::MatrixXd(params.outputs(), T)};
        Eigen::VectorXd h = Eigen::VectorXd::Zero(H), c = Eigen::VectorXd::Zero(H);
        for (Eigen::Index t = 0; t < T; ++t) {
            Eigen::VectorXd z = params.W * x.row(t).transpose() + params.U * h + params.b;
            for (int k = 0; k < H; ++k) {
                z(k) = sigm(z(k));
                z(H + k) = sigm(z(H + k));
                z(2 * H + k) = std::tanh(z(2 * H + k));
                z(3 * H + k) = sigm(z(3 * H + k));
            }
            c = z.segment(H, H).cwiseProduct(c) + z.segment(0, H).cwiseProduct(z.segment(2 * H, H));
            h = z.segment(3 * H, H).array() * c.array().tanh();
            tr.gates.col(t) = z;
            tr.c.col(t) = c;
            tr.h.col(t) = h;
            tr.logits.col(t) = params.V * h + params.c;
        }
        return tr;
    }

    // Sigmoid output for the binary head, softmax otherwise (length O).
    Eigen::VectorXd probs_raw(const Eigen::VectorXd& logit) const {
        if (params.outputs() == 1) return Eigen::VectorXd::Constant(1, sigm(logit(0)));
        Eigen::VectorXd e = (logit.array() - logit.maxCoeff()).exp();
        return e / e.sum();
    }

    Eigen::VectorXd probs(const Eigen::VectorXd& logit) const {
        if (params.outputs() != 1) return probs_raw(logit);
        const double p = sigm(logit(0));
        Eigen::VectorXd out(2);
        out << 1.0 - p, p;
        return out;
    }

    double timestep_loss(const Eigen::VectorXd& logit, int y) const {
        if (params.outputs() == 1) {
            // log(1 + e^-z) for y=1, log(1 + e^z) for y=0, computed stably.
            const double z = y == 1 ? logit(0) : -logit(0);
            return z > 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
        }
        const double m = logit.maxCoeff();
        return -(logit(y) - m - std::log((logit.array() - m).exp().sum()));
    }
};

/// Largest relative difference between analytic and central finite
/// difference gradients over every parameter. Empty batches return 0.
inline double gradient_check(const Lstm& model, const std::vector<Sequence>& batch, double epsilon = 1e-5,
                             GradientMutation mutation = GradientMutation::None) {
    std::size_t scored = 0;
    for (const auto& s : batch) {
        for (int y : s.labels) scored += y >= 0;
    }
    if (scored == 0) return 0.0;
    LstmParams analytic = model.gradients(batch, mutation);
    Lstm probe = model;
    auto probe_tensors = probe.params.tensors();
    auto grad_tensors = analytic.tensors();
    double worst = 0.0;
    for (std::size_t k = 0; k < probe_tensors.size(); ++k) {
        Eigen::MatrixXd& p = *probe_tensors[k];
        const Eigen::MatrixXd& g = *grad_tensors[k];
        for (Eigen::Index i = 0; i < p.size(); ++i) {
            const double orig = p.data()[i];
            p.data()[i] = orig + epsilon;
            const double up = probe.loss(batch);
            p.data()[i] = orig - epsilon;
            const double down = probe.loss(batch);
            p.data()[i] = orig;
            const double numeric = (up - down) / (2.0 * epsilon);
            const double a = g.data()[i];
            const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
            worst = std::max(worst, std::abs(a - numeric) / denom);
        }
    }
    return worst;
}

/// Minibatch Adam on per-timestep cross-entropy. `n_classes` = 2 selects the
/// sigmoid head. Throws NumericError if the loss becomes non-finite.
inline Lstm train_lstm(const std::vector<Sequence>& data, int n_classes, const LstmConfig& cfg) {
    if (data.empty()) throw DataError("cannot train an LSTM on zero sequences");
    const int D = static_cast<int>(data.front().x.cols());
    for (const auto& s : data) {
        if (s.x.rows() > 0 && s.x.cols() != D) throw DataError("sequences have inconsistent widths");
        if (s.labels.size() != s.length()) throw DataError("labels not aligned with sequence timesteps");
        for (int y : s.labels) {
            if (y >= n_classes) throw DataError("label outside class range");
        }
    }
    const int O = n_classes == 2 ? 1 : n_classes;
    Rng rng(derive_seed(cfg.seed, 0x157));
    Lstm model(cfg.zero_init ? LstmParams::zeros(D, cfg.hidden, O) : LstmParams::random(D, cfg.hidden, O, rng));

    LstmParams m1 = LstmParams::zeros(D, cfg.hidden, O), m2 = m1;
    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            std::vector<Sequence> batch;
            for (std::size_t k = start; k < std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++k) {
                batch.push_back(data[order[k]]);
            }
            const double l = model.loss(batch);
            if (!std::isfinite(l)) {
                throw NumericError("non-finite LSTM loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
            }
            epoch_loss += l;
            ++batches;
            LstmParams g = model.gradients(batch);
            ++step;
            const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            auto P = model.params.tensors();
            auto G = g.tensors();
            auto M1 = m1.tensors();
            auto M2 = m2.tensors();
            for (std::size_t k = 0; k < P.size(); ++k) {
                Eigen::MatrixXd grad = *G[k] + cfg.weight_decay * *P[k];
                *M1[k] = cfg.beta1 * *M1[k] + (1.0 - cfg.beta1) * grad;
                *M2[k] = cfg.beta2 * *M2[k] + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
                *P[k] -= (cfg.learning_rate * (*M1[k] / bc1).array() / ((*M2[k] / bc2).array().sqrt() + cfg.adam_eps))
                             .matrix();
            }
        }
        model.loss_curve.push_back(batches == 0 ? 0.0 : epoch_loss / static_cast<double>(batches));
    }
    if (!model.params.finite()) throw NumericError("LSTM parameters became non-finite");
    return model;
}

}  // namespace phenoicu
