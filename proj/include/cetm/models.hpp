#pragma once

// CET, ET and BC models: construction, minibatch gradients, the training loop
// with early stopping, and prediction.

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "cetm/aft.hpp"
#include "cetm/data.hpp"
#include "cetm/likelihood.hpp"
#include "cetm/mathstats.hpp"
#include "cetm/metrics.hpp"
#include "cetm/net.hpp"
#include "cetm/stochastic.hpp"

namespace cetm {

enum class ModelKind { cet, et, bc };

inline const char* to_string(ModelKind k) {
    switch (k) {
        case ModelKind::cet: return "cet";
        case ModelKind::et: return "et";
        case ModelKind::bc: return "bc";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "cet") return ModelKind::cet;
    if (s == "et") return ModelKind::et;
    if (s == "bc") return ModelKind::bc;
    throw std::invalid_argument("unknown model kind '" + s + "' (expected cet, et or bc)");
}

inline const char* to_string(Estimator e) { return e == Estimator::concrete ? "concrete" : "arm"; }

inline Estimator parse_estimator(const std::string& s) {
    if (s == "concrete" || s == "gumbel-softmax") return Estimator::concrete;
    if (s == "arm") return Estimator::arm;
    throw std::invalid_argument("unknown estimator '" + s + "' (expected concrete or arm)");
}

struct TrainConfig {
    int hidden = 100;
    double lr = 3e-4;
    int batch = 400;
    double dropout = 0.5;  // drop probability
    int epochs = 300;      // upper bound
    int samples = 100;     // K occurrence draws per observation
    double tau = 0.3;
    double log_eps = -2.0;
    Estimator estimator = Estimator::concrete;
    std::uint64_t seed = 0;
    int patience = 20;
    double output_gain = 0.1;  // multiplies the initial output-layer weights

    void validate() const {
        auto fail = [](const std::string& m) { throw std::invalid_argument("config: " + m); };
        if (hidden < 1) fail("hidden must be at least 1");
        if (!(lr > 0.0) || !std::isfinite(lr)) fail("lr must be positive");
        if (batch < 1) fail("batch must be at least 1");
        if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must lie in [0, 1)");
        if (epochs < 1) fail("epochs must be at least 1");
        if (samples < 1) fail("samples must be at least 1");
        if (!(tau > 0.0 && tau < 1.0)) fail("tau must lie in (0, 1)");
        if (!(log_eps > -4.0 && log_eps < 0.0)) fail("log_eps must lie in (-4, 0)");
        if (patience < 1) fail("patience must be at least 1");
        if (!(output_gain > 0.0 && output_gain <= 1.0)) fail("output_gain must lie in (0, 1]");
    }

    AdamConfig adam() const { return {lr, 0.9, 0.999, 1e-8}; }
    double keep() const { return 1.0 - dropout; }
};

struct CetModel {
    MlpParams occ;  // d -> M occurrence logits
    MlpParams mu;   // d+M -> M
    MlpParams nu;   // d+M -> M, raw (log ν)

    Eigen::Index features() const { return occ.in(); }
    Eigen::Index events() const { return occ.out(); }
    std::array<MlpParams*, 3> nets() { return {&occ, &mu, &nu}; }
    std::array<const MlpParams*, 3> nets() const { return {&occ, &mu, &nu}; }
};

struct EtModel {
    MlpParams mu;  // d -> M
    MlpParams nu;  // d -> M, raw

    Eigen::Index features() const { return mu.in(); }
    Eigen::Index events() const { return mu.out(); }
    std::array<MlpParams*, 2> nets() { return {&mu, &nu}; }
    std::array<const MlpParams*, 2> nets() const { return {&mu, &nu}; }
};

struct BcModel {
    MlpParams net;  // d -> M logits

    Eigen::Index features() const { return net.in(); }
    Eigen::Index events() const { return net.out(); }
    std::array<MlpParams*, 1> nets() { return {&net}; }
    std::array<const MlpParams*, 1> nets() const { return {&net}; }
};

using AnyModel = std::variant<CetModel, EtModel, BcModel>;

inline ModelKind kind_of(const AnyModel& m) { return static_cast<ModelKind>(m.index()); }

inline CetModel make_cet(Eigen::Index d, Eigen::Index m, int hidden, Rng& rng) {
    CetModel model{mlp_init(d, hidden, m, rng), mlp_init(d + m, hidden, m, rng), mlp_init(d + m, hidden, m, rng)};
    return model;
}

inline EtModel make_et(Eigen::Index d, Eigen::Index m, int hidden, Rng& rng) {
    EtModel model{mlp_init(d, hidden, m, rng), mlp_init(d, hidden, m, rng)};
    return model;
}

inline BcModel make_bc(Eigen::Index d, Eigen::Index m, int hidden, Rng& rng) { return {mlp_init(d, hidden, m, rng)}; }

inline AnyModel make_model(ModelKind kind, Eigen::Index d, Eigen::Index m, int hidden, Rng& rng) {
    switch (kind) {
        case ModelKind::cet: return make_cet(d, m, hidden, rng);
        case ModelKind::et: return make_et(d, m, hidden, rng);
        case ModelKind::bc: return make_bc(d, m, hidden, rng);
    }
    throw std::invalid_argument("make_model: unknown kind");
}

// ---- minibatch gradients --------------------------------------------------

struct StepResult {
    double loss = 0.0;
    std::vector<MlpGrads> grads;  // aligned with model.nets()
    long clamped = 0;
};

// Reusable forward buffers for the μ and ν networks; the tiled activations
// are [B·K × hidden] and dominate memory traffic when reallocated per step.
struct CetWorkspace {
    MlpCache mu, nu;
};

// μ and ν networks evaluated on [x | c] with the x block shared across draws.
class CetHeads {
public:
    CetHeads(const Matrix& x, const MlpParams& mu, const MlpParams& nu, DropoutMask mask_mu, DropoutMask mask_nu,
             Eigen::Index draws, CetWorkspace& ws, bool with_grads = true)
        : x_(x), mu_(mu), nu_(nu), mask_mu_(std::move(mask_mu)), mask_nu_(std::move(mask_nu)), draws_(draws),
          ws_(ws), with_grads_(with_grads), g_mu_(MlpParams::zeros_like(mu)), g_nu_(MlpParams::zeros_like(nu)) {}

    AftOutput forward(const Matrix& c) {
        const Matrix raw_mu = mlp_forward_tiled(x_, c, draws_, mu_, mask_mu_, ws_.mu);
        raw_nu_ = mlp_forward_tiled(x_, c, draws_, nu_, mask_nu_, ws_.nu);
        aft_ = aft_heads(raw_mu, raw_nu_);
        clamped_ += aft_.clamped;
        return aft_;
    }

    // Without gradients this only reports a zero cotangent, which keeps the
    // loss-only path free of the backward passes.
    Matrix backward(const Matrix& d_mu, const Matrix& d_nu) {
        if (!with_grads_) return Matrix::Zero(d_mu.rows(), d_mu.cols());
        const MlpBackward bm = mlp_backward(ws_.mu, mu_, d_mu);
        const MlpBackward bn = mlp_backward(ws_.nu, nu_, aft_heads_backward(raw_nu_, aft_, d_nu));
        g_mu_ += bm.grads;
        g_nu_ += bn.grads;
        return bm.dx_tiled + bn.dx_tiled;
    }

    const MlpGrads& mu_grads() const { return g_mu_; }
    const MlpGrads& nu_grads() const { return g_nu_; }
    long clamped() const { return clamped_; }

private:
    const Matrix& x_;
    const MlpParams& mu_;
    const MlpParams& nu_;
    DropoutMask mask_mu_, mask_nu_;
    Eigen::Index draws_;
    CetWorkspace& ws_;
    bool with_grads_;
    Matrix raw_nu_;
    AftOutput aft_;
    MlpGrads g_mu_, g_nu_;
    long clamped_ = 0;
};

inline StepResult cet_gradients(const CetModel& model, const Matrix& x, const ObservationBatch& obs,
                                const TrainConfig& cfg, Rng& rng, CetWorkspace& ws) {
    const Eigen::Index b = x.rows();
    DropoutMask m_occ = DropoutMask::draw(b, model.occ.hidden(), cfg.keep(), rng);
    DropoutMask m_mu = DropoutMask::draw(b, model.mu.hidden(), cfg.keep(), rng);
    DropoutMask m_nu = DropoutMask::draw(b, model.nu.hidden(), cfg.keep(), rng);

    auto [h, occ_cache] = mlp_forward(x, model.occ, m_occ);
    CetHeads heads(x, model.mu, model.nu, std::move(m_mu), std::move(m_nu), cfg.samples, ws);
    const McBoundResult bound = mc_lower_bound(obs, OccurrenceLogits{h}, heads, cfg.samples, cfg.tau,
                                               PenaltyEps(cfg.log_eps), cfg.estimator, rng);
    StepResult out;
    out.loss = bound.loss;
    out.grads = {mlp_backward(occ_cache, model.occ, bound.d_logits).grads, heads.mu_grads(), heads.nu_grads()};
    out.clamped = heads.clamped();
    return out;
}

inline StepResult cet_gradients(const CetModel& model, const Matrix& x, const ObservationBatch& obs,
                                const TrainConfig& cfg, Rng& rng) {
    CetWorkspace ws;
    return cet_gradients(model, x, obs, cfg, rng, ws);
}

// The bound's value without gradients, in evaluation mode.
inline double cet_eval_loss(const CetModel& model, const Matrix& x, const ObservationBatch& obs, const TrainConfig& cfg,
                            Rng& rng, CetWorkspace& ws) {
    const Matrix h = mlp_predict(x, model.occ);
    CetHeads heads(x, model.mu, model.nu, DropoutMask::none(), DropoutMask::none(), cfg.samples, ws, false);
    return mc_lower_bound(obs, OccurrenceLogits{h}, heads, cfg.samples, cfg.tau, PenaltyEps(cfg.log_eps),
                          cfg.estimator, rng)
        .loss;
}

inline StepResult et_gradients(const EtModel& model, const Matrix& x, const ObservationBatch& obs,
                               const TrainConfig& cfg, Rng& rng) {
    const Eigen::Index b = x.rows();
    DropoutMask m_mu = DropoutMask::draw(b, model.mu.hidden(), cfg.keep(), rng);
    DropoutMask m_nu = DropoutMask::draw(b, model.nu.hidden(), cfg.keep(), rng);
    auto [raw_mu, mu_cache] = mlp_forward(x, model.mu, m_mu);
    auto [raw_nu, nu_cache] = mlp_forward(x, model.nu, m_nu);
    const AftOutput aft = aft_heads(raw_mu, raw_nu);

    const double scale = 1.0 / static_cast<double>(b);
    Matrix d_mu(b, raw_mu.cols()), d_nu(b, raw_mu.cols());
    double total = 0.0;
    for (Eigen::Index j = 0; j < raw_mu.cols(); ++j) {
        for (Eigen::Index i = 0; i < b; ++i) {
            const TermGrad g = et_loglik_grad({obs.t(i, j), static_cast<int>(obs.s(i, j))}, aft.mu(i, j), aft.nu(i, j));
            if (!std::isfinite(g.value)) throw TrainingError("non-finite event-time log-likelihood", i, j, 0);
            total += g.value;
            d_mu(i, j) = -scale * g.d_mu;
            d_nu(i, j) = -scale * g.d_nu;
        }
    }
    StepResult out;
    out.loss = -scale * total;
    out.grads = {mlp_backward(mu_cache, model.mu, d_mu).grads,
                 mlp_backward(nu_cache, model.nu, aft_heads_backward(raw_nu, aft, d_nu)).grads};
    out.clamped = aft.clamped;
    return out;
}

inline StepResult bc_gradients(const BcModel& model, const Matrix& x, const Matrix& s, const TrainConfig& cfg,
                               Rng& rng) {
    const Eigen::Index b = x.rows();
    DropoutMask mask = DropoutMask::draw(b, model.net.hidden(), cfg.keep(), rng);
    auto [logits, cache] = mlp_forward(x, model.net, mask);
    const double scale = 1.0 / static_cast<double>(b);
    Matrix d(b, logits.cols());
    double total = 0.0;
    for (Eigen::Index j = 0; j < logits.cols(); ++j) {
        for (Eigen::Index i = 0; i < b; ++i) {
            total += bc_loglik(static_cast<int>(s(i, j)), logits(i, j));
            d(i, j) = -scale * (s(i, j) - sigmoid(logits(i, j)));
        }
    }
    StepResult out;
    out.loss = -scale * total;
    out.grads = {mlp_backward(cache, model.net, d).grads};
    return out;
}

inline StepResult model_gradients(const AnyModel& model, const Matrix& x, const ObservationBatch& obs,
                                  const TrainConfig& cfg, Rng& rng, CetWorkspace& ws) {
    return std::visit(
        [&](const auto& m) -> StepResult {
            using T = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<T, CetModel>) return cet_gradients(m, x, obs, cfg, rng, ws);
            if constexpr (std::is_same_v<T, EtModel>) return et_gradients(m, x, obs, cfg, rng);
            if constexpr (std::is_same_v<T, BcModel>) return bc_gradients(m, x, obs.s, cfg, rng);
        },
        model);
}

struct Optimizer {
    std::vector<AdamState> states;
};

inline Optimizer make_optimizer(const AnyModel& model) {
    Optimizer opt;
    std::visit([&](const auto& m) { for (const MlpParams* p : m.nets()) opt.states.push_back(AdamState::for_params(*p)); },
               model);
    return opt;
}

inline void apply_gradients(AnyModel& model, const StepResult& step, Optimizer& opt, const TrainConfig& cfg) {
    std::visit(
        [&](auto& m) {
            std::size_t k = 0;
            for (MlpParams* p : m.nets()) {
                adam_step(*p, step.grads[k], opt.states[k], cfg.adam());
                ++k;
            }
        },
        model);
}

// ---- prediction -------------------------------------------------------------

inline Matrix predict_occurrence(const CetModel& model, const Matrix& x) {
    return occurrence_probability({mlp_predict(x, model.occ)});
}

inline Matrix predict_occurrence(const BcModel& model, const Matrix& x) {
    return occurrence_probability({mlp_predict(x, model.net)});
}

inline Matrix predict_log_time(const CetModel& model, const Matrix& x, const Matrix& c) {
    Matrix input(x.rows(), x.cols() + c.cols());
    input << x, c;
    return mlp_predict(input, model.mu);
}

// t̂^j = exp μ^j(x, ĉ) with ĉ = 1[p ≥ ½] and component j forced to 1.
inline Matrix predict_times(const CetModel& model, const Matrix& x) {
    const Matrix p = predict_occurrence(model, x);
    const Matrix c_hat = (p.array() >= 0.5).cast<double>().matrix();
    Matrix t_hat(x.rows(), model.events());
    for (Eigen::Index j = 0; j < model.events(); ++j) {
        Matrix c = c_hat;
        c.col(j).setOnes();
        t_hat.col(j) = predict_log_time(model, x, c).col(j).unaryExpr([](double mu) { return predict_time(mu); });
    }
    return t_hat;
}

inline Matrix predict_times(const EtModel& model, const Matrix& x) {
    return mlp_predict(x, model.mu).unaryExpr([](double mu) { return predict_time(mu); });
}

// Occurrence ranking score for ET: earlier predicted time ranks higher.
inline Matrix ranking_score_et(const EtModel& model, const Matrix& x) { return -mlp_predict(x, model.mu); }

// Score whose ranking is compared against ground-truth occurrence.
inline Matrix occurrence_score(const AnyModel& model, const Matrix& x) {
    if (const auto* m = std::get_if<CetModel>(&model)) return predict_occurrence(*m, x);
    if (const auto* m = std::get_if<EtModel>(&model)) return ranking_score_et(*m, x);
    return predict_occurrence(std::get<BcModel>(model), x);
}

// ---- training -------------------------------------------------------------

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_auc = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
    AnyModel model;
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    long clamped = 0;
    Optimizer optimizer;  // state at the selected epoch
};

inline ObservationBatch observations(const Dataset& ds) { return {ds.t, ds.s}; }

inline ObservationBatch observations(const Dataset& ds, const std::vector<Eigen::Index>& idx) {
    return {ds.t(idx, Eigen::all), ds.s(idx, Eigen::all)};
}

// Evaluation-mode loss over a whole split, in chunks of cfg.batch rows.
inline double evaluation_loss(const AnyModel& model, const Dataset& ds, const TrainConfig& cfg, Rng& rng,
                              CetWorkspace& ws) {
    TrainConfig eval = cfg;
    eval.dropout = 0.0;
    double total = 0.0;
    for (Eigen::Index lo = 0; lo < ds.size(); lo += cfg.batch) {
        const Eigen::Index len = std::min<Eigen::Index>(cfg.batch, ds.size() - lo);
        std::vector<Eigen::Index> idx(static_cast<std::size_t>(len));
        std::iota(idx.begin(), idx.end(), lo);
        const Matrix x = ds.x(idx, Eigen::all);
        const ObservationBatch obs = observations(ds, idx);
        const double loss = std::holds_alternative<CetModel>(model)
                                ? cet_eval_loss(std::get<CetModel>(model), x, obs, eval, rng, ws)
                                : model_gradients(model, x, obs, eval, rng, ws).loss;
        total += static_cast<double>(len) * loss;
    }
    return total / static_cast<double>(ds.size());
}

// Mean over events of AUC against ground-truth occurrence; nullopt when the
// split has no labels or an event is single-class.
inline std::optional<double> occurrence_auc(const AnyModel& model, const Dataset& ds) {
    if (!ds.c_true) return std::nullopt;
    const Matrix score = occurrence_score(model, ds.x);
    double sum = 0.0;
    for (Eigen::Index j = 0; j < ds.num_events(); ++j) {
        std::vector<double> sc(score.col(j).begin(), score.col(j).end());
        std::vector<int> lab(static_cast<std::size_t>(ds.size()));
        for (Eigen::Index i = 0; i < ds.size(); ++i) lab[static_cast<std::size_t>(i)] = static_cast<int>((*ds.c_true)(i, j));
        try {
            sum += auc(sc, lab);
        } catch (const UndefinedMetric&) {
            return std::nullopt;
        }
    }
    return sum / static_cast<double>(ds.num_events());
}

// Starts the time heads at the marginal log-normal fit of the observed
// events, so that the first epochs are not spent moving output biases from 0
// to the scale of log t at a small learning rate. Events without any
// observations keep zero biases.
inline void init_time_biases(AnyModel& model, const Dataset& ds) {
    auto apply = [&](MlpParams& mu, MlpParams& nu) {
        for (Eigen::Index j = 0; j < ds.num_events(); ++j) {
            double sum = 0.0, sq = 0.0;
            Eigen::Index n = 0;
            for (Eigen::Index i = 0; i < ds.size(); ++i) {
                if (ds.s(i, j) != 1.0) continue;
                const double lt = std::log(ds.t(i, j));
                sum += lt;
                sq += lt * lt;
                ++n;
            }
            if (n == 0) continue;
            const double mean = sum / static_cast<double>(n);
            const double var = std::max(sq / static_cast<double>(n) - mean * mean, 1e-4);
            mu.b2(j) = mean;
            nu.b2(j) = 0.5 * std::log(var);
        }
    };
    if (auto* m = std::get_if<CetModel>(&model)) apply(m->mu, m->nu);
    if (auto* m = std::get_if<EtModel>(&model)) apply(m->mu, m->nu);
}

inline TrainResult train(ModelKind kind, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0 || val_set.size() == 0) throw std::invalid_argument("train: empty split");
    if (train_set.features() != val_set.features() || train_set.num_events() != val_set.num_events()) {
        throw std::invalid_argument("train: train and validation widths differ");
    }
    const Rng root(cfg.seed);
    Rng init = root.child(0), shuffle = root.child(1), noise = root.child(2);
    const Rng val_root = root.child(3);

    TrainResult result{make_model(kind, train_set.features(), train_set.num_events(), cfg.hidden, init), {}, 0, 0, {}};
    // With half the hidden units dropped, a full-scale output layer makes the
    // raw ν output noisy enough that exp(raw ν) spans orders of magnitude
    // between minibatches, which swamps Adam's moment estimates.
    std::visit([&](auto& m) { for (MlpParams* p : m.nets()) p->w2 *= cfg.output_gain; }, result.model);
    init_time_biases(result.model, train_set);
    AnyModel model = result.model;
    Optimizer opt = make_optimizer(model);
    CetWorkspace ws;

    const auto n = static_cast<std::size_t>(train_set.size());
    std::vector<Eigen::Index> perm(n);
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});

    double best = -std::numeric_limits<double>::infinity();
    double best_loss = std::numeric_limits<double>::infinity();
    int stalled = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[shuffle.below(i)]);
        double total = 0.0;
        int batch_index = 0;
        for (std::size_t lo = 0; lo < n; lo += static_cast<std::size_t>(cfg.batch), ++batch_index) {
            const std::vector<Eigen::Index> idx(perm.begin() + static_cast<std::ptrdiff_t>(lo),
                                                perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, lo + static_cast<std::size_t>(cfg.batch))));
            const Matrix x = train_set.x(idx, Eigen::all);
            StepResult step;
            try {
                step = model_gradients(model, x, observations(train_set, idx), cfg, noise, ws);
                if (!std::isfinite(step.loss)) throw std::domain_error("non-finite loss");
                apply_gradients(model, step, opt, cfg);
            } catch (const std::domain_error& e) {
                throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index) + ": " + e.what());
            } catch (const TrainingError& e) {
                throw std::runtime_error("training aborted at epoch " + std::to_string(epoch) + ", batch " +
                                         std::to_string(batch_index) + ": " + e.what());
            }
            total += step.loss * static_cast<double>(idx.size());
            result.clamped += step.clamped;
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = total / static_cast<double>(n);
        Rng val_rng = val_root.child(static_cast<std::uint64_t>(epoch));
        rec.val_loss = evaluation_loss(model, val_set, cfg, val_rng, ws);
        const std::optional<double> val_auc = occurrence_auc(model, val_set);
        if (val_auc) rec.val_auc = *val_auc;
        result.history.push_back(rec);

        // CET is selected on validation AUC, but training only stops once the
        // bound has also stalled: AUC dips for tens of epochs while the time
        // heads sharpen, long before the bound stops improving.
        const double criterion = (kind == ModelKind::cet && val_auc) ? *val_auc : -rec.val_loss;
        bool improved = false;
        if (criterion > best) {
            best = criterion;
            result.model = model;
            result.optimizer = opt;
            result.best_epoch = epoch;
            improved = true;
        }
        if (rec.val_loss < best_loss) {
            best_loss = rec.val_loss;
            improved = true;
        }
        if (improved) {
            stalled = 0;
        } else if (++stalled >= cfg.patience) {
            break;
        }
    }
    return result;
}

}  // namespace cetm
