// Command-line front end: generate, train, evaluate, compare.

#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cetm/experiment.hpp"

namespace {

using cetm::Json;

// Options shared by `train` and `compare`. Each flag is named after its config
// key; values given on the command line override those from --config.
struct ConfigFlags {
    std::optional<std::string> config_path;
    Json given = Json::object();

    template <class T>
    void add(CLI::App& app, const std::string& key, const std::string& help) {
        std::string names = "--" + key;
        if (key.find('_') != std::string::npos) {
            std::string dashed = key;
            for (char& ch : dashed)
                if (ch == '_') ch = '-';
            names = "--" + dashed + ",--" + key;
        }
        app.add_option_function<T>(names, [this, key](const T& v) { given[key] = v; }, help);
    }

    void attach(CLI::App& app, bool with_reps) {
        app.add_option("--config", config_path, "JSON file with configuration keys");
        add<int>(app, "hidden", "hidden units per network");
        add<double>(app, "lr", "Adam learning rate");
        add<int>(app, "batch", "minibatch size");
        add<double>(app, "dropout", "dropout rate");
        add<int>(app, "epochs", "maximum number of epochs");
        add<int>(app, "samples", "occurrence draws per observation");
        add<double>(app, "tau", "relaxation temperature");
        add<double>(app, "log_eps", "log of the occurrence penalty");
        add<std::string>(app, "estimator", "concrete or arm");
        add<std::uint64_t>(app, "seed", "training seed");
        add<int>(app, "patience", "early-stopping patience in epochs");
        add<double>(app, "output_gain", "scale of the initial output-layer weights");
        add<std::uint64_t>(app, "split_seed", "seed of the 60/20/20 split");
        add<int>(app, "bins", "calibration bins");
        if (with_reps) add<int>(app, "reps", "repetitions per model");
    }

    cetm::RunConfig resolve() const {
        cetm::RunConfig base;
        if (config_path) base = cetm::load_run_config(*config_path);
        cetm::RunConfig cfg = cetm::run_config_from_json(given, base);
        cfg.validate();
        return cfg;
    }
};

cetm::fs::path out_dir(const std::optional<std::string>& flag, const char* command) {
    return flag ? cetm::fs::path(*flag) : cetm::default_output_root() / command;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conditional event time models: synthetic benchmark, training and evaluation"};
    app.require_subcommand(1);

    // generate
    CLI::App* gen = app.add_subcommand("generate", "write the synthetic benchmark as CSV plus a manifest");
    cetm::GenerateOptions gen_opt;
    std::string scheme = "full_range";
    std::optional<std::string> gen_out;
    gen->add_option("--n", gen_opt.n, "number of samples")->capture_default_str();
    gen->add_option("--noise", gen_opt.synth.label_noise, "occurrence label-flip probability")->capture_default_str();
    gen->add_option("--seed", gen_opt.seed, "generator seed")->capture_default_str();
    gen->add_option("--scheme", scheme, "censoring scheme: full_range or twice_median")->capture_default_str();
    gen->add_option("--radius", gen_opt.synth.radius, "occurrence disk radius")->capture_default_str();
    gen->add_option("--a", gen_opt.synth.a, "log-time slope on x5")->capture_default_str();
    gen->add_option("--b", gen_opt.synth.b, "log-time intercept")->capture_default_str();
    gen->add_option("--noise-t,--noise_t", gen_opt.synth.noise_t, "log-time noise scale")->capture_default_str();
    gen->add_option("--out", gen_out, "output directory");

    // train
    CLI::App* tr = app.add_subcommand("train", "train one model on a dataset CSV");
    std::string model = "cet";
    std::string train_data;
    std::optional<std::string> train_out;
    ConfigFlags train_flags;
    tr->add_option("--model", model, "cet, et or bc")->capture_default_str();
    tr->add_option("--data", train_data, "dataset CSV")->required();
    tr->add_option("--out", train_out, "output directory");
    train_flags.attach(*tr, false);

    // evaluate
    CLI::App* ev = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset CSV");
    std::string checkpoint, eval_data, eval_split = "all";
    std::uint64_t eval_split_seed = 0;
    int eval_bins = 10;
    std::optional<std::string> eval_out;
    ev->add_option("--checkpoint", checkpoint, "model.json written by train")->required();
    ev->add_option("--data", eval_data, "dataset CSV")->required();
    ev->add_option("--split", eval_split, "all, train, val or test")->capture_default_str();
    ev->add_option("--split-seed,--split_seed", eval_split_seed, "seed of the 60/20/20 split")->capture_default_str();
    ev->add_option("--bins", eval_bins, "calibration bins")->capture_default_str();
    ev->add_option("--out", eval_out, "output directory");

    // compare
    CLI::App* cmp = app.add_subcommand("compare", "train and evaluate CET, ET and BC repeatedly");
    std::string cmp_data;
    std::optional<std::string> cmp_out;
    ConfigFlags cmp_flags;
    cmp->add_option("--data", cmp_data, "dataset CSV")->required();
    cmp->add_option("--out", cmp_out, "output directory");
    cmp_flags.attach(*cmp, true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            gen_opt.scheme = cetm::parse_scheme(scheme);
            const auto paths = cetm::cmd_generate(gen_opt, out_dir(gen_out, "generate"));
            std::cout << paths.csv.string() << '\n' << paths.manifest.string() << '\n';
        } else if (*tr) {
            const cetm::RunConfig cfg = train_flags.resolve();
            const auto o = cetm::cmd_train(cetm::parse_model_kind(model), train_data, cfg, out_dir(train_out, "train"));
            std::cout << "best epoch " << o.result.best_epoch << " of " << o.result.history.size() << '\n'
                      << o.checkpoint.string() << '\n';
            if (o.result.clamped > 0) {
                std::cerr << "warning: raw nu exceeded the clamp " << o.result.clamped << " times\n";
            }
        } else if (*ev) {
            const auto e = cetm::cmd_evaluate(checkpoint, eval_data, out_dir(eval_out, "evaluate"),
                                              cetm::parse_eval_split(eval_split), eval_split_seed, eval_bins);
            std::cout << cetm::evaluation_to_json(e).dump(2) << '\n';
        } else if (*cmp) {
            const cetm::RunConfig cfg = cmp_flags.resolve();
            const auto o = cetm::cmd_compare(cmp_data, cfg, out_dir(cmp_out, "compare"), &std::cerr);
            std::cout << cetm::compare_to_text(o.report);
            if (!o.report.complete()) {
                std::cerr << "some cells failed; see " << o.json.string() << '\n';
                return 1;
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
