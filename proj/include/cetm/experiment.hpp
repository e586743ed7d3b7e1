#pragma once

// Experiment drivers behind the command-line tool: benchmark generation,
// training runs with their artifacts, evaluation reports and the repeated
// CET/ET/BC comparison. Every output is a pure function of the inputs and
// seeds, so identical invocations produce byte-identical files.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cetm/checkpoint.hpp"
#include "cetm/data.hpp"
#include "cetm/metrics.hpp"
#include "cetm/models.hpp"

namespace cetm {

namespace fs = std::filesystem;

inline constexpr const char* kOutputRootEnv = "CETM_OUTPUT_ROOT";

inline fs::path default_output_root() {
    if (const char* env = std::getenv(kOutputRootEnv); env != nullptr && *env != '\0') return env;
    return "cetm-out";
}

inline const char* to_string(CensoringScheme s) {
    return s == CensoringScheme::full_range ? "full_range" : "twice_median";
}

inline CensoringScheme parse_scheme(const std::string& s) {
    if (s == "full_range") return CensoringScheme::full_range;
    if (s == "twice_median") return CensoringScheme::twice_median;
    throw std::invalid_argument("unknown censoring scheme '" + s + "' (expected full_range or twice_median)");
}

namespace detail {

inline void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

inline Json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::exception& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

inline Json nullable(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

}  // namespace detail

// ---- generate ----------------------------------------------------------------

struct GenerateOptions {
    Eigen::Index n = 40000;
    SyntheticParams synth;
    std::uint64_t seed = 7;
    CensoringScheme scheme = CensoringScheme::full_range;

    void validate() const {
        if (n < 1) throw std::invalid_argument("generate: n must be at least 1");
        if (!(synth.label_noise >= 0.0 && synth.label_noise <= 1.0)) {
            throw std::invalid_argument("generate: noise must lie in [0, 1]");
        }
        if (!(synth.radius > 0.0)) throw std::invalid_argument("generate: radius must be positive");
        if (!(synth.noise_t >= 0.0)) throw std::invalid_argument("generate: noise_t must be non-negative");
        if (!std::isfinite(synth.a) || !std::isfinite(synth.b)) throw std::invalid_argument("generate: a and b must be finite");
    }
};

// Ground-truth generation followed by artificial censoring on an independent
// stream of the same seed.
inline Dataset make_benchmark(const GenerateOptions& opt) {
    opt.validate();
    const Dataset full = generate_synthetic(opt.n, opt.synth, opt.seed);
    Rng censor = Rng(opt.seed).child(1);
    return apply_censoring(full, opt.scheme, censor);
}

inline Json generate_manifest(const GenerateOptions& opt, const Dataset& ds) {
    Json events = Json::object();
    for (Eigen::Index j = 0; j < ds.num_events(); ++j) {
        double occurring = 0.0, observed = 0.0;
        for (Eigen::Index i = 0; i < ds.size(); ++i) {
            occurring += (*ds.c_true)(i, j);
            observed += ds.s(i, j);
        }
        events[ds.events[static_cast<std::size_t>(j)]] = {{"occurrence_rate", occurring / static_cast<double>(ds.size())},
                                                           {"observed_rate", observed / static_cast<double>(ds.size())}};
    }
    return Json{{"generator", "synthetic"},
                {"n", opt.n},
                {"seed", opt.seed},
                {"rng", Rng::kAlgorithm},
                {"scheme", to_string(opt.scheme)},
                {"noise", opt.synth.label_noise},
                {"radius", opt.synth.radius},
                {"a", opt.synth.a},
                {"b", opt.synth.b},
                {"noise_t", opt.synth.noise_t},
                {"features", ds.features()},
                {"events", events}};
}

struct GenerateOutputs {
    fs::path csv;
    fs::path manifest;
};

// Writes `<out>/synthetic.csv` and `<out>/synthetic.manifest.json`. Options are
// validated before anything touches the filesystem.
inline GenerateOutputs cmd_generate(const GenerateOptions& opt, const fs::path& out) {
    opt.validate();
    const Dataset ds = make_benchmark(opt);
    GenerateOutputs paths{out / "synthetic.csv", out / "synthetic.manifest.json"};
    std::ostringstream csv;
    save_csv(ds, csv);
    detail::write_text(paths.csv, csv.str());
    detail::write_text(paths.manifest, generate_manifest(opt, ds).dump(2) + "\n");
    return paths;
}

// ---- run configuration -------------------------------------------------------

struct RunConfig {
    TrainConfig train;
    int reps = 10;
    std::uint64_t split_seed = 0;
    int bins = 10;

    void validate() const {
        train.validate();
        if (reps < 1) throw std::invalid_argument("config: reps must be at least 1");
        if (bins < 2) throw std::invalid_argument("config: bins must be at least 2");
    }
};

inline Json to_json(const RunConfig& c) {
    Json j = to_json(c.train);
    j["reps"] = c.reps;
    j["split_seed"] = c.split_seed;
    j["bins"] = c.bins;
    return j;
}

inline RunConfig run_config_from_json(const Json& j, RunConfig base = {}) {
    if (!j.is_object()) throw std::invalid_argument("config: expected a JSON object");
    Json train = Json::object();
    for (const auto& [key, value] : j.items()) {
        try {
            if (key == "reps") base.reps = value.get<int>();
            else if (key == "split_seed") base.split_seed = value.get<std::uint64_t>();
            else if (key == "bins") base.bins = value.get<int>();
            else train[key] = value;
        } catch (const Json::exception& e) {
            throw std::invalid_argument("config: bad value for '" + key + "': " + e.what());
        }
    }
    base.train = train_config_from_json(train, base.train);
    return base;
}

inline RunConfig load_run_config(const fs::path& path, RunConfig base = {}) {
    try {
        return run_config_from_json(detail::read_json(path), base);
    } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

// ---- evaluation --------------------------------------------------------------

struct EventMetrics {
    std::string event;
    std::optional<double> auc;
    std::optional<double> mrae;  // CET and ET only
    std::optional<double> ci;    // CET and ET only
    std::vector<CalibrationPoint> calibration;  // CET and BC, when labels exist
    std::vector<std::string> errors;            // metrics that were undefined
};

struct Evaluation {
    ModelKind kind = ModelKind::cet;
    Eigen::Index samples = 0;
    std::vector<EventMetrics> events;
};

inline bool predicts_times(ModelKind k) { return k != ModelKind::bc; }
inline bool predicts_probability(ModelKind k) { return k != ModelKind::et; }

// Occurrence metrics use the ground-truth labels. Time metrics use only the
// observed (t, s) over the whole split, so they are computable without ground
// truth; t_max is the largest observed time of the task.
inline Evaluation evaluate(const AnyModel& model, const Dataset& ds, int bins = 10) {
    ds.validate();
    const ModelKind kind = kind_of(model);
    const Eigen::Index d = std::visit([](const auto& m) { return m.features(); }, model);
    const Eigen::Index ev = std::visit([](const auto& m) { return m.events(); }, model);
    if (ds.features() != d || ds.num_events() != ev) {
        throw std::invalid_argument("evaluate: dataset has " + std::to_string(ds.features()) + " features and " +
                                    std::to_string(ds.num_events()) + " events, model expects " +
                                    std::to_string(d) + " and " + std::to_string(ev));
    }
    const Matrix score = occurrence_score(model, ds.x);
    Matrix t_hat;
    if (kind == ModelKind::cet) t_hat = predict_times(std::get<CetModel>(model), ds.x);
    if (kind == ModelKind::et) t_hat = predict_times(std::get<EtModel>(model), ds.x);

    Evaluation out{kind, ds.size(), {}};
    for (Eigen::Index j = 0; j < ev; ++j) {
        EventMetrics em;
        em.event = ds.events[static_cast<std::size_t>(j)];
        std::vector<double> sc(score.col(j).begin(), score.col(j).end());
        if (ds.c_true) {
            std::vector<int> lab(static_cast<std::size_t>(ds.size()));
            for (Eigen::Index i = 0; i < ds.size(); ++i) lab[static_cast<std::size_t>(i)] = static_cast<int>((*ds.c_true)(i, j));
            try {
                em.auc = auc(sc, lab);
            } catch (const UndefinedMetric& e) {
                em.errors.push_back(std::string("auc: ") + e.what());
            }
            if (predicts_probability(kind)) em.calibration = calibration_curve(sc, lab, static_cast<std::size_t>(bins));
        } else {
            em.errors.push_back("auc: dataset carries no ground-truth occurrence labels");
        }
        if (predicts_times(kind)) {
            const double t_max = ds.t.col(j).maxCoeff();
            std::vector<double> t, th;
            std::vector<int> s;
            for (Eigen::Index i = 0; i < ds.size(); ++i) {
                t.push_back(ds.t(i, j));
                s.push_back(static_cast<int>(ds.s(i, j)));
                th.push_back(t_hat(i, j));
            }
            try {
                em.mrae = mrae(t, s, th, t_max);
            } catch (const UndefinedMetric& e) {
                em.errors.push_back(std::string("mrae: ") + e.what());
            }
            try {
                em.ci = concordance_index(t, s, th);
            } catch (const UndefinedMetric& e) {
                em.errors.push_back(std::string("ci: ") + e.what());
            }
        }
        out.events.push_back(std::move(em));
    }
    return out;
}

inline Json evaluation_to_json(const Evaluation& e) {
    Json events = Json::object();
    std::map<std::string, std::vector<double>> sums;
    for (const EventMetrics& m : e.events) {
        Json j{{"auc", detail::nullable(m.auc)}};
        if (m.auc) sums["auc"].push_back(*m.auc);
        if (predicts_times(e.kind)) {
            j["mrae"] = detail::nullable(m.mrae);
            j["ci"] = detail::nullable(m.ci);
            if (m.mrae) sums["mrae"].push_back(*m.mrae);
            if (m.ci) sums["ci"].push_back(*m.ci);
        }
        if (!m.errors.empty()) j["errors"] = m.errors;
        events[m.event] = std::move(j);
    }
    Json average = Json::object();
    for (const char* key : {"auc", "mrae", "ci"}) {
        if (std::string(key) != "auc" && !predicts_times(e.kind)) continue;
        const auto it = sums.find(key);
        average[key] = (it != sums.end() && it->second.size() == e.events.size())
                           ? Json(mean_sd(it->second).mean)
                           : Json(nullptr);
    }
    return Json{{"model", to_string(e.kind)}, {"samples", e.samples}, {"events", events}, {"average", average}};
}

inline std::string calibration_csv(const std::vector<CalibrationPoint>& curve) {
    std::ostringstream os;
    os << "bin_center,predicted_mean,empirical_freq,count\n";
    for (const auto& p : curve) {
        os << detail::format_double(p.bin_center) << ',' << detail::format_double(p.predicted_mean) << ','
           << detail::format_double(p.empirical_freq) << ',' << p.count << '\n';
    }
    return os.str();
}

inline std::string history_csv(const std::vector<EpochRecord>& history) {
    std::ostringstream os;
    os << "epoch,train_loss,val_loss,val_auc\n";
    for (const auto& r : history) {
        os << r.epoch << ',' << detail::format_double(r.train_loss) << ',' << detail::format_double(r.val_loss) << ',';
        if (!std::isnan(r.val_auc)) os << detail::format_double(r.val_auc);
        os << '\n';
    }
    return os.str();
}

// ---- train -------------------------------------------------------------------

inline Splits load_splits(const fs::path& data, std::uint64_t split_seed) {
    const Dataset ds = load_csv(data.string());
    return split(ds, split_seed);
}

struct TrainOutputs {
    TrainResult result;
    fs::path checkpoint, history, config;
};

// Splits the dataset 60/20/20 with cfg.split_seed, trains on the first part
// with early stopping on the second, and writes model.json, history.csv and
// config.json (every option materialized) into `out`.
inline TrainOutputs cmd_train(ModelKind kind, const fs::path& data, const RunConfig& cfg, const fs::path& out) {
    cfg.validate();
    const Splits sp = load_splits(data, cfg.split_seed);
    TrainOutputs o{train(kind, sp.train, sp.val, cfg.train), out / "model.json", out / "history.csv",
                   out / "config.json"};
    Json resolved = to_json(cfg);
    resolved["model"] = to_string(kind);
    resolved["data"] = data.string();
    fs::create_directories(out);
    save_checkpoint({o.result.model, o.result.optimizer, cfg.train, sp.train.events}, o.checkpoint);
    detail::write_text(o.history, history_csv(o.result.history));
    detail::write_text(o.config, resolved.dump(2) + "\n");
    return o;
}

// ---- evaluate ----------------------------------------------------------------

enum class EvalSplit { all, train, val, test };

inline EvalSplit parse_eval_split(const std::string& s) {
    if (s == "all") return EvalSplit::all;
    if (s == "train") return EvalSplit::train;
    if (s == "val") return EvalSplit::val;
    if (s == "test") return EvalSplit::test;
    throw std::invalid_argument("unknown split '" + s + "' (expected all, train, val or test)");
}

// Writes metrics.json and, for probabilistic models, calibration_<event>.csv.
inline Evaluation cmd_evaluate(const fs::path& checkpoint, const fs::path& data, const fs::path& out,
                               EvalSplit which = EvalSplit::all, std::uint64_t split_seed = 0, int bins = 10) {
    if (bins < 2) throw std::invalid_argument("evaluate: bins must be at least 2");
    const Checkpoint ck = load_checkpoint(checkpoint);
    Dataset ds = load_csv(data.string());
    if (which != EvalSplit::all) {
        Splits sp = split(ds, split_seed);
        ds = which == EvalSplit::train ? std::move(sp.train) : which == EvalSplit::val ? std::move(sp.val) : std::move(sp.test);
    }
    const Evaluation e = evaluate(ck.model, ds, bins);
    fs::create_directories(out);
    detail::write_text(out / "metrics.json", evaluation_to_json(e).dump(2) + "\n");
    for (const EventMetrics& m : e.events) {
        if (!m.calibration.empty()) detail::write_text(out / ("calibration_" + m.event + ".csv"), calibration_csv(m.calibration));
    }
    return e;
}

// ---- compare -----------------------------------------------------------------

struct CellValues {
    std::vector<double> values;
    std::vector<std::string> errors;
};

struct CompareReport {
    RunConfig config;
    std::vector<std::string> events;
    Eigen::Index n_train = 0, n_val = 0, n_test = 0;
    // model → event → metric → per-rep values
    std::map<std::string, std::map<std::string, std::map<std::string, CellValues>>> cells;
    std::map<std::string, std::map<std::string, std::vector<CalibrationPoint>>> calibration;  // first repetition
    std::vector<Json> failures;

    bool complete() const { return failures.empty(); }
};

inline const std::vector<std::string>& compare_models() {
    static const std::vector<std::string> names{"CET", "ET", "BC"};
    return names;
}

inline std::vector<std::string> metrics_for(const std::string& model) {
    if (model == "BC") return {"AUC"};
    return {"AUC", "MRAE", "CI"};
}

namespace detail {

inline Json summary(const CellValues& c, std::size_t reps) {
    Json j{{"values", c.values}, {"n", c.values.size()}};
    if (c.values.empty()) {
        j["mean"] = nullptr;
        j["sd"] = nullptr;
    } else {
        const MeanSd ms = mean_sd(c.values);
        j["mean"] = ms.mean;
        j["sd"] = ms.sd;
    }
    if (c.values.size() != reps) j["partial"] = true;
    if (!c.errors.empty()) j["errors"] = c.errors;
    return j;
}

// Task average: mean over events of the per-event mean and of the per-event
// sd. Undefined when any event's cell is empty.
inline std::optional<MeanSd> task_average(const std::vector<const CellValues*>& per_event) {
    double mean = 0.0, sd = 0.0;
    for (const CellValues* c : per_event) {
        if (c->values.empty()) return std::nullopt;
        const MeanSd ms = mean_sd(c->values);
        mean += ms.mean;
        sd += ms.sd;
    }
    const auto k = static_cast<double>(per_event.size());
    return MeanSd{mean / k, sd / k};
}

inline std::string fmt2(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << v;
    return os.str();
}

}  // namespace detail

inline Json compare_to_json(const CompareReport& r) {
    Json table = Json::object();
    for (const std::string& model : compare_models()) {
        const auto mit = r.cells.find(model);
        if (mit == r.cells.end()) continue;
        Json per_model = Json::object();
        for (const std::string& ev : r.events) {
            Json per_event = Json::object();
            for (const std::string& metric : metrics_for(model)) {
                per_event[metric] = detail::summary(mit->second.at(ev).at(metric), static_cast<std::size_t>(r.config.reps));
            }
            per_model[ev] = std::move(per_event);
        }
        Json avg = Json::object();
        for (const std::string& metric : metrics_for(model)) {
            std::vector<const CellValues*> cells;
            for (const std::string& ev : r.events) cells.push_back(&mit->second.at(ev).at(metric));
            const auto a = detail::task_average(cells);
            avg[metric] = a ? Json{{"mean", a->mean}, {"sd", a->sd}} : Json{{"mean", nullptr}, {"sd", nullptr}};
        }
        per_model["Avg"] = std::move(avg);
        table[model] = std::move(per_model);
    }
    Json calib = Json::object();
    for (const auto& [model, per_event] : r.calibration) {
        for (const auto& [ev, curve] : per_event) {
            Json pts = Json::array();
            for (const auto& p : curve) {
                pts.push_back({{"bin_center", p.bin_center},
                               {"predicted_mean", p.predicted_mean},
                               {"empirical_freq", p.empirical_freq},
                               {"count", p.count}});
            }
            calib[model][ev] = {{"points", pts}, {"max_gap", max_calibration_gap(curve)}};
        }
    }
    return Json{{"config", to_json(r.config)},
                {"splits", {{"train", r.n_train}, {"val", r.n_val}, {"test", r.n_test}}},
                {"events", r.events},
                {"table", table},
                {"calibration", calib},
                {"failures", r.failures},
                {"complete", r.complete()}};
}

// Fixed-width text rendering with two decimals, one row per model and task.
inline std::string compare_to_text(const CompareReport& r) {
    std::ostringstream os;
    auto cell = [](const std::optional<MeanSd>& v) -> std::string {
        if (!v) return "failed";
        return detail::fmt2(v->mean) + " ± " + detail::fmt2(v->sd);
    };
    os << std::left << std::setw(7) << "Model" << std::setw(6) << "Task";
    for (const char* h : {"AUC", "MRAE", "CI"}) os << std::setw(14) << h;
    os << '\n';
    for (const std::string& model : compare_models()) {
        const auto mit = r.cells.find(model);
        if (mit == r.cells.end()) continue;
        std::vector<std::string> tasks = r.events;
        tasks.push_back("Avg");
        for (const std::string& task : tasks) {
            os << std::setw(7) << model << std::setw(6) << task;
            for (const std::string metric : {"AUC", "MRAE", "CI"}) {
                const auto ms = metrics_for(model);
                std::string text = "-";
                if (std::find(ms.begin(), ms.end(), metric) != ms.end()) {
                    std::vector<const CellValues*> cells;
                    if (task == "Avg") {
                        for (const std::string& ev : r.events) cells.push_back(&mit->second.at(ev).at(metric));
                    } else {
                        cells.push_back(&mit->second.at(task).at(metric));
                    }
                    text = cell(detail::task_average(cells));
                }
                // "±" is two bytes but one column wide.
                const std::size_t width = text.size() - (text.find("±") != std::string::npos ? 1 : 0);
                os << text << std::string(width < 14 ? 14 - width : 1, ' ');
            }
            os << '\n';
        }
    }
    std::string s = os.str();
    // Drop trailing padding on each line.
    std::string trimmed;
    std::istringstream lines(s);
    for (std::string line; std::getline(lines, line);) {
        line.erase(line.find_last_not_of(' ') + 1);
        trimmed += line + '\n';
    }
    return trimmed;
}

// Trains and evaluates CET, ET and BC `reps` times on one fixed split, the
// r-th repetition using training seed cfg.train.seed + r. A failed training
// run or an undefined metric is recorded against its cells and the remaining
// cells are still filled.
inline CompareReport run_compare(const Dataset& data, const RunConfig& cfg, std::ostream* log = nullptr) {
    cfg.validate();
    const Splits sp = split(data, cfg.split_seed);
    CompareReport r;
    r.config = cfg;
    r.events = data.events;
    r.n_train = sp.train.size();
    r.n_val = sp.val.size();
    r.n_test = sp.test.size();
    for (const std::string& model : compare_models())
        for (const std::string& ev : r.events)
            for (const std::string& metric : metrics_for(model)) r.cells[model][ev][metric];

    for (const std::string& model : compare_models()) {
        const ModelKind kind = parse_model_kind(model == "CET" ? "cet" : model == "ET" ? "et" : "bc");
        for (int rep = 0; rep < cfg.reps; ++rep) {
            TrainConfig tc = cfg.train;
            tc.seed = cfg.train.seed + static_cast<std::uint64_t>(rep);
            auto fail_all = [&](const std::string& what) {
                for (const std::string& ev : r.events)
                    for (const std::string& metric : metrics_for(model)) r.cells[model][ev][metric].errors.push_back("rep " + std::to_string(rep) + ": " + what);
                r.failures.push_back({{"model", model}, {"rep", rep}, {"error", what}});
            };
            try {
                const TrainResult tr = train(kind, sp.train, sp.val, tc);
                const Evaluation e = evaluate(tr.model, sp.test, cfg.bins);
                for (const EventMetrics& em : e.events) {
                    auto& cells = r.cells[model][em.event];
                    auto put = [&](const char* metric, const std::optional<double>& v) {
                        if (v) {
                            cells[metric].values.push_back(*v);
                        } else {
                            const std::string what = std::string(metric) + " undefined";
                            cells[metric].errors.push_back("rep " + std::to_string(rep) + ": " + what);
                            r.failures.push_back({{"model", model}, {"rep", rep}, {"event", em.event}, {"error", what}});
                        }
                    };
                    put("AUC", em.auc);
                    if (predicts_times(kind)) {
                        put("MRAE", em.mrae);
                        put("CI", em.ci);
                    }
                    if (rep == 0 && !em.calibration.empty()) r.calibration[model][em.event] = em.calibration;
                }
                if (log) {
                    *log << model << " rep " << rep << ": best epoch " << tr.best_epoch << " of " << tr.history.size();
                    for (const EventMetrics& em : e.events)
                        if (em.auc) *log << ", " << em.event << " AUC " << detail::fmt2(*em.auc);
                    *log << std::endl;
                }
            } catch (const std::exception& ex) {
                fail_all(ex.what());
                if (log) *log << model << " rep " << rep << " failed: " << ex.what() << std::endl;
            }
        }
    }
    return r;
}

struct CompareOutputs {
    CompareReport report;
    fs::path json, text;
};

// Writes compare.json, compare.txt and the first repetition's calibration
// curves.
inline CompareOutputs cmd_compare(const fs::path& data, const RunConfig& cfg, const fs::path& out,
                                  std::ostream* log = nullptr) {
    cfg.validate();
    const Dataset ds = load_csv(data.string());
    CompareOutputs o{run_compare(ds, cfg, log), out / "compare.json", out / "compare.txt"};
    fs::create_directories(out);
    detail::write_text(o.json, compare_to_json(o.report).dump(2) + "\n");
    detail::write_text(o.text, compare_to_text(o.report));
    for (const auto& [model, per_event] : o.report.calibration)
        for (const auto& [ev, curve] : per_event)
            detail::write_text(out / ("calibration_" + model + "_" + ev + ".csv"), calibration_csv(curve));
    return o;
}

}  // namespace cetm
