// scalelab command-line tool: architecture summaries and scaling, synthetic
// data generation, training, evaluation, and SVG report plots.
//
// Exit codes: 0 success, 2 input error, 3 scaling/shape error, 4 numeric
// divergence.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "scalelab/scalelab.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitShape = 3;
constexpr int kExitNumeric = 4;

scalelab::ArchitectureSpec resolve_arch(const std::string& name_or_file) {
    const auto& names = scalelab::preset_names();
    if (std::find(names.begin(), names.end(), name_or_file) != names.end())
        return scalelab::preset_arch(name_or_file);
    if (!fs::exists(name_or_file))
        throw scalelab::ValueError("unknown architecture '" + name_or_file +
                                   "': not a preset (baseline|width|depth|resolution|compound) and no such file");
    return scalelab::arch_load(name_or_file);
}

void write_manifest(const fs::path& run_dir, const json& flags) {
    json manifest;
    manifest["tool"] = "scalelab";
    manifest["format_version"] = 1;
    manifest["threads"] = scalelab::max_threads();
    manifest["flags"] = flags;
    std::ofstream out(run_dir / "manifest.json");
    if (!out) throw scalelab::IoError("cannot write manifest under " + run_dir.string());
    out << manifest.dump(2) << "\n";
}

// Loads a dataset directory (labels.csv + images) and retargets it to the
// model's input resolution. Channel counts cannot be resized.
scalelab::DatasetIndex load_data_for(const scalelab::ArchitectureSpec& arch, const fs::path& data_dir) {
    scalelab::DatasetIndex index = scalelab::load_index(data_dir, data_dir / "labels.csv");
    if (index.size() == 0) throw scalelab::ValueError("dataset under " + data_dir.string() + " is empty");
    if (index.resolution[2] != arch.input_shape[2])
        throw scalelab::ValueError("data resolution " + scalelab::shape_to_string(index.resolution) +
                                   " is incompatible with model input " + scalelab::shape_to_string(arch.input_shape) +
                                   ": channel counts differ");
    index.resolution = arch.input_shape;
    return index;
}

void write_eval_reports(const scalelab::EvalResult& eval, const fs::path& out_dir) {
    const scalelab::ConfusionMatrix cm = scalelab::confusion(eval.predictions, eval.labels);
    const scalelab::ClassScores scores = scalelab::class_scores(cm);
    scalelab::RocCurve curve;
    try {
        curve = scalelab::roc(eval.positive_scores, eval.labels);
    } catch (const scalelab::ValueError&) {
        // Single-class data: no ROC, but the rest of the report still applies.
        curve.points = {{0.0, 0.0}, {1.0, 1.0}};
        curve.auc = 0.5;
    }
    scalelab::metrics_report_write(cm, scores, curve, out_dir / "metrics.txt");
    scalelab::roc_csv_write(curve, out_dir / "roc.csv");
}

// ---------------------------------------------------------------------------
// summary
// ---------------------------------------------------------------------------

struct SummaryOptions {
    std::string arch;
    double width = 1.0;
    int depth = 1;
    double resolution = 1.0;
};

int cmd_summary(const SummaryOptions& opt) {
    scalelab::ArchitectureSpec arch = resolve_arch(opt.arch);
    arch = scalelab::scale_compound(arch, {opt.width, opt.depth, opt.resolution});
    std::cout << scalelab::format_summary(arch);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// scale
// ---------------------------------------------------------------------------

struct ScaleOptions {
    std::string base;
    std::string out;
    double width = 1.0;
    int depth = 1;
    double resolution = 1.0;
};

int cmd_scale(const ScaleOptions& opt) {
    const scalelab::ArchitectureSpec base = resolve_arch(opt.base);
    const std::int64_t before = scalelab::total_params(base);
    scalelab::ArchitectureSpec scaled = scalelab::scale_compound(base, {opt.width, opt.depth, opt.resolution});
    const std::int64_t after = scalelab::total_params(scaled);
    scalelab::arch_save(scaled, opt.out);
    std::cout << "parameters: " << before << " -> " << after << "\n";
    std::cout << "wrote " << opt.out << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

struct SynthOptions {
    std::string out;
    int n = 100;
    int res = 36;
    std::uint64_t seed = 0;
};

int cmd_synth(const SynthOptions& opt) {
    scalelab::synth_generate(opt.out, opt.n, opt.res, opt.seed);
    std::cout << "wrote " << 2 * opt.n << " images (" << opt.res << "x" << opt.res << ") + labels.csv under " << opt.out
              << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainOptions {
    std::string arch;
    std::string data;
    std::string out;
    int epochs = 20;
    int batch = 32;
    double lr = 1e-4;
    std::uint64_t seed = 0;
};

int cmd_train(const TrainOptions& opt) {
    const scalelab::ArchitectureSpec arch = resolve_arch(opt.arch);
    scalelab::DatasetIndex index = load_data_for(arch, opt.data);

    // Hold out a tenth for validation, matching the published 144000/16000
    // proportions.
    const size_t val_count = std::max<size_t>(1, index.size() / 10);
    const size_t train_count = index.size() - val_count;
    auto [train_set, val_set] = scalelab::split(index, train_count, val_count, opt.seed);

    scalelab::Model model = scalelab::build_model(arch, opt.seed);
    scalelab::TrainConfig cfg;
    cfg.epochs = opt.epochs;
    cfg.batch_size = opt.batch;
    cfg.seed = opt.seed;
    cfg.adam.learning_rate = static_cast<float>(opt.lr);

    const std::vector<scalelab::EpochRecord> records = scalelab::train(model, train_set, val_set, cfg);

    const fs::path run_dir(opt.out);
    fs::create_directories(run_dir);
    scalelab::arch_save(arch, run_dir / "arch.txt");
    scalelab::save_model(model, run_dir / "model.bin");
    scalelab::history_write(records, run_dir / "history.csv");
    write_eval_reports(scalelab::evaluate(model, val_set, cfg.batch_size), run_dir);
    write_manifest(run_dir, json{{"command", "train"},
                                 {"arch", opt.arch},
                                 {"data", opt.data},
                                 {"epochs", opt.epochs},
                                 {"batch", opt.batch},
                                 {"lr", opt.lr},
                                 {"seed", opt.seed},
                                 {"out", opt.out}});

    const scalelab::EpochRecord& last = records.back();
    std::printf("epoch %d: train_loss %.6g train_acc %.6g val_loss %.6g val_acc %.6g\n", last.epoch, last.train_loss,
                last.train_accuracy, last.val_loss, last.val_accuracy);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

struct EvaluateOptions {
    std::string model;
    std::string data;
    std::string out;
    int batch = 32;
};

int cmd_evaluate(const EvaluateOptions& opt) {
    scalelab::Model model = scalelab::load_model(opt.model);
    scalelab::DatasetIndex index = load_data_for(model.arch(), opt.data);
    const scalelab::EvalResult eval = scalelab::evaluate(model, index, opt.batch);
    const fs::path out_dir(opt.out);
    fs::create_directories(out_dir);
    write_eval_reports(eval, out_dir);
    write_manifest(out_dir, json{{"command", "evaluate"}, {"model", opt.model}, {"data", opt.data}, {"out", opt.out}});
    std::printf("samples %zu loss %.6g accuracy %.6g\n", eval.labels.size(), eval.loss, eval.accuracy);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportOptions {
    std::string run;
};

int cmd_report(const ReportOptions& opt) {
    const fs::path run_dir(opt.run);
    const fs::path history_path = run_dir / "history.csv";
    const fs::path roc_path = run_dir / "roc.csv";
    std::string missing;
    if (!fs::exists(history_path)) missing += " history.csv";
    if (!fs::exists(roc_path)) missing += " roc.csv";
    if (!missing.empty()) throw scalelab::ValueError("run directory " + opt.run + " is missing:" + missing);

    const auto records = scalelab::history_read(history_path);
    if (records.empty()) throw scalelab::ValueError(history_path.string() + " has no epochs to plot");

    scalelab::ChartSeries train_acc{"train", {}, {}}, val_acc{"val", {}, {}};
    scalelab::ChartSeries train_loss{"train", {}, {}}, val_loss{"val", {}, {}};
    for (const auto& r : records) {
        const double e = static_cast<double>(r.epoch);
        train_acc.xs.push_back(e);
        train_acc.ys.push_back(r.train_accuracy);
        val_acc.xs.push_back(e);
        val_acc.ys.push_back(r.val_accuracy);
        train_loss.xs.push_back(e);
        train_loss.ys.push_back(r.train_loss);
        val_loss.xs.push_back(e);
        val_loss.ys.push_back(r.val_loss);
    }
    const fs::path plot_dir = run_dir / "plots";
    fs::create_directories(plot_dir);
    scalelab::svg_line_chart(plot_dir / "accuracy.svg", "Training and validation accuracy", "epoch", "accuracy",
                             {train_acc, val_acc});
    scalelab::svg_line_chart(plot_dir / "loss.svg", "Training and validation loss", "epoch", "loss",
                             {train_loss, val_loss});

    const auto points = scalelab::roc_csv_read(roc_path);
    scalelab::RocCurve curve;
    curve.points = points;
    curve.auc = scalelab::auc_trapezoid(curve);
    scalelab::svg_roc_chart(plot_dir / "roc.svg", curve.points, curve.auc);
    std::cout << "wrote " << (plot_dir / "accuracy.svg").string() << ", loss.svg, roc.svg\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"scalelab: a small CNN architecture-scaling laboratory"};
    app.require_subcommand(1);

    SummaryOptions summary_opt;
    auto* summary = app.add_subcommand("summary", "Print the layer/shape/parameter table of an architecture");
    summary->add_option("--arch", summary_opt.arch, "Preset name or architecture file")->required();
    summary->add_option("--width", summary_opt.width, "Extra width factor");
    summary->add_option("--depth", summary_opt.depth, "Extra depth factor");
    summary->add_option("--resolution", summary_opt.resolution, "Extra resolution factor");

    ScaleOptions scale_opt;
    auto* scale = app.add_subcommand("scale", "Scale an architecture file and write the result");
    scale->add_option("--base", scale_opt.base, "Base architecture (preset name or file)")->required();
    scale->add_option("--out", scale_opt.out, "Output architecture file")->required();
    scale->add_option("--width", scale_opt.width, "Width factor (>= 1)");
    scale->add_option("--depth", scale_opt.depth, "Depth factor (>= 1)");
    scale->add_option("--resolution", scale_opt.resolution, "Resolution factor (> 0)");

    SynthOptions synth_opt;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic two-class image corpus");
    synth->add_option("--out", synth_opt.out, "Output directory")->required();
    synth->add_option("--n", synth_opt.n, "Images per class")->required();
    synth->add_option("--res", synth_opt.res, "Image resolution (>= 16)")->required();
    synth->add_option("--seed", synth_opt.seed, "Generator seed");

    TrainOptions train_opt;
    auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
    train->add_option("--arch", train_opt.arch, "Preset name or architecture file")->required();
    train->add_option("--data", train_opt.data, "Dataset directory (images + labels.csv)")->required();
    train->add_option("--out", train_opt.out, "Run directory for artifacts")->required();
    train->add_option("--epochs", train_opt.epochs, "Training epochs");
    train->add_option("--batch", train_opt.batch, "Batch size");
    train->add_option("--lr", train_opt.lr, "Adam learning rate");
    train->add_option("--seed", train_opt.seed, "Seed for init/shuffle/dropout");

    EvaluateOptions eval_opt;
    auto* evaluate = app.add_subcommand("evaluate", "Evaluate a saved model on a dataset directory");
    evaluate->add_option("--model", eval_opt.model, "Model file")->required();
    evaluate->add_option("--data", eval_opt.data, "Dataset directory")->required();
    evaluate->add_option("--out", eval_opt.out, "Output directory for metrics")->required();

    ReportOptions report_opt;
    auto* report = app.add_subcommand("report", "Render SVG plots from a run directory");
    report->add_option("--run", report_opt.run, "Run directory with history.csv and roc.csv")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }

    try {
        if (summary->parsed()) return cmd_summary(summary_opt);
        if (scale->parsed()) return cmd_scale(scale_opt);
        if (synth->parsed()) return cmd_synth(synth_opt);
        if (train->parsed()) return cmd_train(train_opt);
        if (evaluate->parsed()) return cmd_evaluate(eval_opt);
        if (report->parsed()) return cmd_report(report_opt);
    } catch (const scalelab::ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return kExitShape;
    } catch (const scalelab::NumericError& e) {
        std::cerr << "numeric divergence: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitInput;
}
