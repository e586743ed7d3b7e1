#pragma once

// JSON checkpoints: network shapes, row-major weights, Adam state, the training
// configuration and its seed. Doubles are written in shortest round-trip form,
// so save followed by load reproduces every parameter bit for bit.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cetm/models.hpp"
#include "cetm/net.hpp"

namespace cetm {

using Json = nlohmann::json;

inline constexpr const char* kCheckpointFormat = "cetm-checkpoint";
inline constexpr int kCheckpointVersion = 1;

// ---- configuration ---------------------------------------------------------

inline Json to_json(const TrainConfig& c) {
    return Json{{"hidden", c.hidden},   {"lr", c.lr},
                {"batch", c.batch},     {"dropout", c.dropout},
                {"epochs", c.epochs},   {"samples", c.samples},
                {"tau", c.tau},         {"log_eps", c.log_eps},
                {"estimator", to_string(c.estimator)},
                {"seed", c.seed},       {"patience", c.patience},
                {"output_gain", c.output_gain}};
}

// Overlays the keys present in `j` onto `base`. Unknown keys are rejected so
// that a misspelt option never silently falls back to its default.
inline TrainConfig train_config_from_json(const Json& j, TrainConfig base = {}) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "hidden") base.hidden = value.get<int>();
            else if (key == "lr") base.lr = value.get<double>();
            else if (key == "batch") base.batch = value.get<int>();
            else if (key == "dropout") base.dropout = value.get<double>();
            else if (key == "epochs") base.epochs = value.get<int>();
            else if (key == "samples") base.samples = value.get<int>();
            else if (key == "tau") base.tau = value.get<double>();
            else if (key == "log_eps") base.log_eps = value.get<double>();
            else if (key == "estimator") base.estimator = parse_estimator(value.get<std::string>());
            else if (key == "seed") base.seed = value.get<std::uint64_t>();
            else if (key == "patience") base.patience = value.get<int>();
            else if (key == "output_gain") base.output_gain = value.get<double>();
            else throw std::invalid_argument("config: unknown key '" + key + "'");
        } catch (const Json::exception& e) {
            throw std::invalid_argument("config: bad value for '" + key + "': " + e.what());
        }
    }
    return base;
}

// ---- parameters --------------------------------------------------------------

namespace detail {

inline Json matrix_to_json(const Matrix& m) {
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index i = 0; i < m.rows(); ++i)
        for (Eigen::Index j = 0; j < m.cols(); ++j) flat.push_back(m(i, j));
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", flat}};
}

inline Matrix matrix_from_json(const Json& j, const std::string& where) {
    const auto rows = j.at("rows").get<Eigen::Index>();
    const auto cols = j.at("cols").get<Eigen::Index>();
    const auto flat = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<Eigen::Index>(flat.size()) != rows * cols) {
        throw std::invalid_argument("checkpoint: " + where + " has inconsistent shape");
    }
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = flat[static_cast<std::size_t>(i * cols + k)];
    return m;
}

inline Json params_to_json(const MlpParams& p) {
    return Json{{"w1", matrix_to_json(p.w1)},
                {"b1", matrix_to_json(p.b1)},
                {"w2", matrix_to_json(p.w2)},
                {"b2", matrix_to_json(p.b2)}};
}

inline MlpParams params_from_json(const Json& j, const std::string& where) {
    MlpParams p;
    p.w1 = matrix_from_json(j.at("w1"), where + ".w1");
    p.b1 = matrix_from_json(j.at("b1"), where + ".b1");
    p.w2 = matrix_from_json(j.at("w2"), where + ".w2");
    p.b2 = matrix_from_json(j.at("b2"), where + ".b2");
    if (p.b1.size() != p.w1.rows() || p.w2.cols() != p.w1.rows() || p.b2.size() != p.w2.rows()) {
        throw std::invalid_argument("checkpoint: " + where + " layer shapes are inconsistent");
    }
    if (!p.all_finite()) throw std::invalid_argument("checkpoint: " + where + " contains non-finite weights");
    return p;
}

inline std::vector<std::string> net_names(ModelKind kind) {
    switch (kind) {
        case ModelKind::cet: return {"occurrence", "mu", "nu"};
        case ModelKind::et: return {"mu", "nu"};
        case ModelKind::bc: return {"classifier"};
    }
    return {};
}

}  // namespace detail

struct Checkpoint {
    AnyModel model;
    std::optional<Optimizer> optimizer;
    TrainConfig config;
    std::vector<std::string> events;
};

inline Json checkpoint_to_json(const Checkpoint& ck) {
    const ModelKind kind = kind_of(ck.model);
    const auto names = detail::net_names(kind);
    Json nets = Json::array();
    std::visit(
        [&](const auto& m) {
            std::size_t k = 0;
            for (const MlpParams* p : m.nets()) {
                Json net{{"name", names[k]},
                         {"in", p->in()},
                         {"hidden", p->hidden()},
                         {"out", p->out()},
                         {"params", detail::params_to_json(*p)}};
                if (ck.optimizer) {
                    const AdamState& s = ck.optimizer->states.at(k);
                    net["adam"] = Json{{"step", s.step},
                                       {"m", detail::params_to_json(s.m)},
                                       {"v", detail::params_to_json(s.v)}};
                }
                nets.push_back(std::move(net));
                ++k;
            }
        },
        ck.model);
    return Json{{"format", kCheckpointFormat}, {"version", kCheckpointVersion},
                {"model", to_string(kind)},    {"seed", ck.config.seed},
                {"events", ck.events},         {"config", to_json(ck.config)},
                {"nets", nets}};
}

inline Checkpoint checkpoint_from_json(const Json& j) {
    try {
        if (j.at("format").get<std::string>() != kCheckpointFormat) {
            throw std::invalid_argument("checkpoint: not a cetm checkpoint");
        }
        const int version = j.at("version").get<int>();
        if (version != kCheckpointVersion) {
            throw std::invalid_argument("checkpoint: unsupported version " + std::to_string(version));
        }
        const ModelKind kind = parse_model_kind(j.at("model").get<std::string>());
        const auto names = detail::net_names(kind);
        const Json& nets = j.at("nets");
        if (!nets.is_array() || nets.size() != names.size()) {
            throw std::invalid_argument("checkpoint: expected " + std::to_string(names.size()) + " networks");
        }

        Checkpoint ck;
        ck.config = train_config_from_json(j.at("config"));
        ck.events = j.at("events").get<std::vector<std::string>>();
        std::vector<MlpParams> params;
        std::vector<AdamState> states;
        for (std::size_t k = 0; k < names.size(); ++k) {
            const Json& net = nets[k];
            if (net.at("name").get<std::string>() != names[k]) {
                throw std::invalid_argument("checkpoint: network " + std::to_string(k) + " should be '" + names[k] + "'");
            }
            params.push_back(detail::params_from_json(net.at("params"), names[k]));
            if (net.contains("adam")) {
                const Json& a = net.at("adam");
                AdamState s{detail::params_from_json(a.at("m"), names[k] + ".adam.m"),
                            detail::params_from_json(a.at("v"), names[k] + ".adam.v"), a.at("step").get<long>()};
                if (!s.m.same_shape(params.back()) || !s.v.same_shape(params.back())) {
                    throw std::invalid_argument("checkpoint: optimizer state of '" + names[k] + "' has the wrong shape");
                }
                states.push_back(std::move(s));
            }
        }
        if (!states.empty() && states.size() != params.size()) {
            throw std::invalid_argument("checkpoint: optimizer state present for some networks only");
        }

        switch (kind) {
            case ModelKind::cet: ck.model = CetModel{params[0], params[1], params[2]}; break;
            case ModelKind::et: ck.model = EtModel{params[0], params[1]}; break;
            case ModelKind::bc: ck.model = BcModel{params[0]}; break;
        }
        std::visit(
            [&](const auto& m) {
                const Eigen::Index d = m.features(), ev = m.events();
                for (const MlpParams* p : m.nets()) {
                    if (p->hidden() != ck.config.hidden) {
                        throw std::invalid_argument("checkpoint: hidden width differs from the stored config");
                    }
                    if (p->out() != ev) throw std::invalid_argument("checkpoint: networks disagree on the event count");
                }
                if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CetModel>) {
                    if (m.mu.in() != d + ev || m.nu.in() != d + ev) {
                        throw std::invalid_argument("checkpoint: time networks must take features plus occurrences");
                    }
                } else {
                    for (const MlpParams* p : m.nets()) {
                        if (p->in() != d) throw std::invalid_argument("checkpoint: networks disagree on the feature count");
                    }
                }
            },
            ck.model);
        if (static_cast<Eigen::Index>(ck.events.size()) != std::visit([](const auto& m) { return m.events(); }, ck.model)) {
            throw std::invalid_argument("checkpoint: event names do not match the network outputs");
        }
        if (!states.empty()) ck.optimizer = Optimizer{std::move(states)};
        return ck;
    } catch (const Json::exception& e) {
        throw std::invalid_argument(std::string("checkpoint: malformed document: ") + e.what());
    }
}

inline void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << checkpoint_to_json(ck).dump(1) << '\n';
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw std::invalid_argument("checkpoint " + path.string() + ": " + e.what());
    }
    return checkpoint_from_json(j);
}

}  // namespace cetm
