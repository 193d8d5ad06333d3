// pattlite: build, train, evaluate, sweep, and explain the patch-attention
// network from one binary.
//
// Exit codes (stable contract for CI): 0 success, 2 configuration error,
// 3 data or manifest error, 4 divergence, 5 assertion failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pattlite/data.hpp"
#include "pattlite/eval.hpp"
#include "pattlite/model.hpp"
#include "pattlite/train.hpp"
#include "pattlite/weights_io.hpp"

namespace fs = std::filesystem;
using namespace pattlite;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitDivergence = 4;
constexpr int kExitAssertion = 5;

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    int threads = 1;
};

bool parse_bool(const std::string& value, const std::string& key) {
    if (value == "true" || value == "1" || value == "yes") return true;
    if (value == "false" || value == "0" || value == "no") return false;
    throw ConfigError("config: boolean expected for " + key + ", got '" + value + "'");
}

// Flat key = value file, UTF-8, '#' comments. Unknown keys are fatal.
void apply_config_pair(RunConfig& cfg, const std::string& key, const std::string& value) {
    auto& m = cfg.model;
    auto& t = cfg.train;
    try {
        if (key == "num_classes") m.num_classes = std::stoi(value);
        else if (key == "use_patch_extraction") m.use_patch_extraction = parse_bool(value, key);
        else if (key == "use_attention_classifier") m.use_attention_classifier = parse_bool(value, key);
        else if (key == "patch_channels") m.patch_channels = std::stoi(value);
        else if (key == "hidden_width") m.hidden_width = std::stoi(value);
        else if (key == "attention_scale_mode") {
            if (value == "fixed") m.attention_scale_mode = AttentionScale::FixedInvSqrt;
            else if (value == "learned") m.attention_scale_mode = AttentionScale::LearnedScalar;
            else throw ConfigError("config: attention_scale_mode must be fixed|learned");
        } else if (key == "pad_to") m.pad_to = std::stoi(value);
        else if (key == "patch_kernel1") m.patch_kernel1 = std::stoi(value);
        else if (key == "patch_stride1") m.patch_stride1 = std::stoi(value);
        else if (key == "patch_kernel2") m.patch_kernel2 = std::stoi(value);
        else if (key == "patch_stride2") m.patch_stride2 = std::stoi(value);
        else if (key == "backbone_tap") m.backbone_tap = value;
        else if (key == "input_size") m.input_size = std::stoi(value);
        else if (key == "sweep_kernel") m.sweep_kernel = std::stoi(value);
        else if (key == "weight_init") {
            if (value == "fan_in") m.weight_init = WeightInit::FanIn;
            else if (value == "fixed_std") m.weight_init = WeightInit::FixedStd;
            else throw ConfigError("config: weight_init must be fan_in|fixed_std");
        } else if (key == "init_std") m.init_std = std::stod(value);
        else if (key == "batch_size") t.batch_size = std::stoi(value);
        else if (key == "stage1_lr") t.stage1_lr = std::stod(value);
        else if (key == "stage2_lr") t.stage2_lr = std::stod(value);
        else if (key == "clip_norm") t.clip_norm = std::stod(value);
        else if (key == "plateau_patience") t.plateau_patience = std::stoi(value);
        else if (key == "plateau_factor") t.plateau_factor = std::stod(value);
        else if (key == "plateau_min_lr") t.plateau_min_lr = std::stod(value);
        else if (key == "inverse_time_decay_rate") t.inverse_time_decay_rate = std::stod(value);
        else if (key == "inverse_time_decay_steps") t.inverse_time_decay_steps = std::stoi(value);
        else if (key == "early_stop_patience") t.early_stop_patience = std::stoi(value);
        else if (key == "restore_best") t.restore_best = parse_bool(value, key);
        else if (key == "max_epochs_stage1") t.max_epochs_stage1 = std::stoi(value);
        else if (key == "max_epochs_stage2") t.max_epochs_stage2 = std::stoi(value);
        else if (key == "unfreeze_top_n") t.unfreeze_top_n = std::stoi(value);
        else if (key == "seed") t.seed = std::stoull(value);
        else if (key == "threads") cfg.threads = std::stoi(value);
        else throw ConfigError("config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("config: bad value for " + key + ": '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("config: value out of range for " + key + ": '" + value + "'");
    }
}

void load_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t\r");
            if (a == std::string::npos) return std::string();
            const auto b = s.find_last_not_of(" \t\r");
            return s.substr(a, b - a + 1);
        };
        const std::string stripped = trim(line);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config: missing '=' at " + path + ":" + std::to_string(lineno));
        apply_config_pair(cfg, trim(stripped.substr(0, eq)), trim(stripped.substr(eq + 1)));
    }
}

int resolve_threads(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("PATTLITE_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) return v;
    }
    return 1;
}

std::optional<Dataset> load_split_if_present(const std::string& root, const std::string& split) {
    const fs::path dir = fs::path(root) / split;
    if (!fs::is_directory(dir)) return std::nullopt;
    return load_directory_dataset(dir.string(), split);
}

// Dataset root layout: root/<split>/<class>/<files>. `train` is required
// here; `val` (falling back to `test`) is the monitor split.
Dataset require_train_split(const std::string& root) {
    auto ds = load_split_if_present(root, "train");
    if (!ds) throw DataError("data-dir has no train/ directory: " + root);
    return *ds;
}

Model<float> build_from(const RunConfig& cfg) {
    Rng init_rng = Rng(cfg.train.seed).split(0x1417);
    return build_model<float>(cfg.model, init_rng);
}

// ---------------------------------------------------------------------------

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& stage,
              const std::string& weights_in, const std::string& weights_out,
              const std::string& report_out) {
    Dataset train_ds = require_train_split(data_dir);
    std::optional<Dataset> monitor = load_split_if_present(data_dir, "val");
    if (!monitor) monitor = load_split_if_present(data_dir, "test");

    Model<float> model = build_from(cfg);
    if (!weights_in.empty()) load_weights(model, weights_in);

    std::vector<StageReport> reports;
    const Dataset* mon = monitor ? &*monitor : nullptr;
    if (stage == "train") {
        reports.push_back(run_stage(model, train_ds, mon, cfg.train, Stage::Train, &std::cout));
    } else if (stage == "finetune") {
        reports.push_back(run_stage(model, train_ds, mon, cfg.train, Stage::Finetune, &std::cout));
    } else if (stage == "both") {
        auto [a, b] = run_two_stage(model, train_ds, mon, cfg.train, &std::cout);
        reports.push_back(std::move(a));
        reports.push_back(std::move(b));
    } else {
        throw ConfigError("--stage must be train|finetune|both");
    }

    if (!weights_out.empty()) save_weights(model, weights_out);
    if (!report_out.empty()) {
        std::ofstream os(report_out);
        if (!os) throw DataError("cannot write report: " + report_out);
        os << "epoch,lr,train_loss,train_acc,val_acc\n";
        char buf[160];
        for (const auto& report : reports)
            for (const auto& r : report.rows) {
                std::snprintf(buf, sizeof(buf), "%d,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.lr,
                              r.train_loss, r.train_acc, r.val_acc);
                os << buf;
            }
    }
    for (const auto& report : reports)
        std::cout << "stage done: best epoch " << report.best_epoch << " (" << report.monitor
                  << " " << report.best_metric << "), stopped by " << report.stop_reason << "\n";
    return 0;
}

int cmd_eval(const RunConfig& cfg, const std::string& weights, const std::string& data_dir,
             const std::string& subset_path, int gradcam_class, bool gradcam_true_class,
             const std::string& gradcam_tap, const std::string& out_dir, int threads) {
    Model<float> model = build_from(cfg);
    load_weights(model, weights);

    Dataset test_ds;
    if (auto ds = load_split_if_present(data_dir, "test"))
        test_ds = *ds;
    else
        test_ds = load_directory_dataset(data_dir, "test");

    std::optional<SubsetList> subset;
    if (!subset_path.empty()) {
        subset = load_subset_list(subset_path, test_ds);
        if (!subset->unresolved.empty())
            std::cerr << "warning: " << subset->unresolved.size()
                      << " subset identifiers not found in the test split\n";
    }

    EvalReport report = evaluate(model, test_ds, subset ? &*subset : nullptr,
                                 cfg.train.batch_size, threads);
    if (!out_dir.empty()) export_report(report, out_dir);

    std::cout << "samples " << report.confusion.total() << "\n";
    std::cout << "overall_accuracy " << detail::format_double(report.overall_accuracy) << "\n";
    std::cout << "mean_class_accuracy " << detail::format_double(report.mean_class_accuracy)
              << "\n";
    for (std::size_t i = 0; i < report.class_names.size(); ++i)
        std::cout << "class " << report.class_names[i] << " "
                  << detail::format_double(report.per_class_accuracy[i]) << "\n";

    if ((gradcam_class >= 0 || gradcam_true_class) && !out_dir.empty()) {
        // One heatmap for the first test sample of each class.
        BatchStream stream(test_ds, cfg.model.input_size, 1, 0, false);
        std::vector<bool> seen(test_ds.class_names.size(), false);
        for (std::size_t i = 0; i < test_ds.samples.size(); ++i) {
            const int label = test_ds.samples[i].label;
            if (seen[static_cast<std::size_t>(label)]) continue;
            seen[static_cast<std::size_t>(label)] = true;
            const Tensorf image = preprocess_scale(stream.raw(static_cast<int>(i)));
            const int target = gradcam_true_class ? label : gradcam_class;
            Tensorf map = gradcam(model, image, target, gradcam_tap);
            const std::string name = "gradcam_" + test_ds.class_names[static_cast<std::size_t>(label)] +
                                     "_target" + std::to_string(target) + ".pgm";
            write_pgm(map, (fs::path(out_dir) / name).string());
        }
        std::cout << "gradcam maps written to " << out_dir << "\n";
    }
    return 0;
}

int cmd_params(const RunConfig& cfg, const std::vector<long long>& assert_range) {
    Model<float> model = build_from(cfg);
    set_trainable(model, cfg.train.unfreeze_top_n);
    const ParamCountReport report = param_count(model);

    std::printf("%-28s %-16s %12s  %s\n", "name", "shape", "count", "trainable");
    for (const auto& row : report.rows)
        std::printf("%-28s %-16s %12lld  %s\n", row.name.c_str(), row.shape.c_str(),
                    static_cast<long long>(row.count), row.trainable ? "yes" : "no");
    std::printf("%-28s %-16s %12lld\n", "total", "", static_cast<long long>(report.total));
    std::printf("%-28s %-16s %12lld\n", "trainable", "", static_cast<long long>(report.trainable));
    std::printf("%-28s %-16s %12lld\n", "non_trainable", "",
                static_cast<long long>(report.non_trainable));

    if (!assert_range.empty()) {
        if (report.total < assert_range[0] || report.total > assert_range[1]) {
            std::cerr << "assertion failed: total " << report.total << " outside ["
                      << assert_range[0] << ", " << assert_range[1] << "]\n";
            return kExitAssertion;
        }
    }
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const std::string& data_dir, const std::string& taps_csv,
              const std::string& kernels_csv, const std::string& padding, int epochs,
              const std::string& out_csv) {
    Dataset train_ds = require_train_split(data_dir);
    std::optional<Dataset> monitor = load_split_if_present(data_dir, "val");
    if (!monitor) monitor = load_split_if_present(data_dir, "test");
    const Dataset* mon = monitor ? &*monitor : nullptr;

    auto split_csv = [](const std::string& text) {
        std::vector<std::string> out;
        std::istringstream ss(text);
        std::string item;
        while (std::getline(ss, item, ','))
            if (!item.empty()) out.push_back(item);
        return out;
    };
    const std::vector<std::string> taps = split_csv(taps_csv);
    std::vector<int> kernels;
    for (const auto& k : split_csv(kernels_csv)) kernels.push_back(std::stoi(k));
    std::vector<bool> paddings;
    if (padding == "both") paddings = {true, false};
    else if (padding == "padded") paddings = {true};
    else if (padding == "unpadded") paddings = {false};
    else throw ConfigError("--padding must be both|padded|unpadded");

    struct Row {
        std::string tap;
        int kernel;
        bool padded;
        double best;
    };
    std::vector<Row> rows;
    for (const auto& tap : taps)
        for (int kernel : kernels)
            for (bool padded : paddings) {
                RunConfig variant = cfg;
                variant.model.backbone_tap = tap;
                variant.model.sweep_kernel = kernel;
                variant.model.pad_to = 0;
                TrainConfig tc = variant.train;
                tc.max_epochs_stage1 = epochs;
                try {
                    if (padded) {
                        // Symmetric one-cell padding around the tapped map;
                        // probe the tap extent with a dry forward pass.
                        Rng probe_rng = Rng(tc.seed).split(0x1417);
                        Model<float> probe = build_model<float>(variant.model, probe_rng);
                        const int tap_index = probe.layer_index(tap);
                        typename Model<float>::Cache cache;
                        Tensorf x({1, variant.model.input_size, variant.model.input_size,
                                   variant.model.input_channels},
                                  0.0f);
                        probe.forward(x, Mode::Infer, &cache, 0);
                        variant.model.pad_to = cache.act(tap_index + 1).extent(1) + 2;
                    }
                    Model<float> model = build_from(variant);
                    StageReport report = run_stage(model, train_ds, mon, tc, Stage::Train);
                    rows.push_back({tap, kernel, padded, report.best_metric});
                    std::cout << "swept tap=" << tap << " kernel=" << kernel
                              << " padding=" << (padded ? "padded" : "unpadded") << " best "
                              << report.best_metric << "\n";
                } catch (const ConfigError& e) {
                    std::cout << "skipped tap=" << tap << " kernel=" << kernel
                              << " padding=" << (padded ? "padded" : "unpadded") << ": "
                              << e.what() << "\n";
                }
            }
    if (rows.empty()) throw ConfigError("sweep: no valid combinations");
    std::stable_sort(rows.begin(), rows.end(),
                     [](const Row& a, const Row& b) { return a.best > b.best; });

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!out_csv.empty()) {
        file.open(out_csv);
        if (!file) throw DataError("cannot write sweep CSV: " + out_csv);
        os = &file;
    }
    *os << "tap,kernel,padding,best_accuracy\n";
    for (const auto& r : rows)
        *os << r.tap << ',' << r.kernel << ',' << (r.padded ? "padded" : "unpadded") << ','
            << detail::format_double(r.best) << "\n";
    return 0;
}

// Describes a PLT tensor or PLW weight container; with --export-plt, decodes
// an image sample into a raw PLT tensor.
int cmd_inspect(const std::string& file, const std::string& export_plt) {
    auto ends_with = [&file](const char* suffix) {
        const std::string s(suffix);
        return file.size() >= s.size() && file.compare(file.size() - s.size(), s.size(), s) == 0;
    };
    if (!export_plt.empty()) {
        Tensorf img = load_image(file);
        save_plt(export_plt, img);
        std::cout << "wrote " << export_plt << " shape " << img.shape_string() << "\n";
        return 0;
    }
    if (ends_with(".plw")) {
        std::ifstream is(file, std::ios::binary);
        if (!is) throw DataError("cannot open: " + file);
        char magic[8];
        if (!is.read(magic, 8) || std::memcmp(magic, detail::kPlwMagic, 8) != 0)
            throw DataError("PLW: bad magic in " + file);
        std::string line;
        long long entries = 0, bytes = 0;
        std::printf("%-28s %2s %-14s %10s %10s %s\n", "name", "dt", "shape", "offset", "bytes",
                    "trainable");
        while (std::getline(is, line) && !line.empty()) {
            std::istringstream ls(line);
            std::string name, shape;
            int dtype = 0, trainable = 0;
            std::uint64_t offset = 0, length = 0;
            ls >> name >> dtype >> shape >> offset >> length >> trainable;
            std::printf("%-28s %2d %-14s %10llu %10llu %s\n", name.c_str(), dtype, shape.c_str(),
                        static_cast<unsigned long long>(offset),
                        static_cast<unsigned long long>(length), trainable ? "yes" : "no");
            ++entries;
            bytes += static_cast<long long>(length);
        }
        std::cout << entries << " entries, " << bytes << " value bytes\n";
        return 0;
    }
    // PLT tensors and image samples both load as tensors.
    const std::uint8_t tag = ends_with(".plt") ? plt_dtype(file) : 0;
    if (tag == 1) {
        Tensord t = load_plt<double>(file);
        double mn = t[0], mx = t[0], sum = 0;
        for (Index i = 0; i < t.size(); ++i) {
            mn = std::min(mn, t[i]);
            mx = std::max(mx, t[i]);
            sum += t[i];
        }
        std::cout << "dtype f64 shape " << t.shape_string() << " min " << mn << " max " << mx
                  << " mean " << sum / static_cast<double>(t.size()) << "\n";
        return 0;
    }
    Tensorf t = ends_with(".plt") ? load_plt<float>(file) : load_image(file);
    double mn = t[0], mx = t[0], sum = 0;
    for (Index i = 0; i < t.size(); ++i) {
        mn = std::min<double>(mn, t[i]);
        mx = std::max<double>(mx, t[i]);
        sum += t[i];
    }
    std::cout << "dtype f32 shape " << t.shape_string() << " min " << mn << " max " << mx
              << " mean " << sum / static_cast<double>(t.size()) << "\n";
    return 0;
}

int cmd_folds(const RunConfig& cfg, const std::string& data_dir, int k) {
    Dataset ds = load_directory_dataset(data_dir);
    auto folds = ckplus_subject_folds(ds, k);
    CrossValResult result = cross_validate(cfg.model, cfg.train, folds, &std::cout);
    for (std::size_t i = 0; i < result.fold_accuracies.size(); ++i)
        std::cout << "fold " << (i + 1) << " accuracy "
                  << detail::format_double(result.fold_accuracies[i]) << "\n";
    std::cout << "mean_accuracy " << detail::format_double(result.mean_accuracy) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"patch-attention facial expression network: train, evaluate, inspect"};
    app.require_subcommand(1);

    std::string config_path;
    int threads_flag = 0;
    app.add_option("--config", config_path, "key = value config file")->expected(1);
    app.add_option("--threads", threads_flag, "worker cap; 1 guarantees bit-reproducibility");

    // Shared model/train overrides (flags win over the config file).
    std::optional<std::uint64_t> seed_flag;
    std::optional<int> unfreeze_flag, max_epochs_flag, batch_flag, classes_flag, input_flag;
    bool no_patch = false, no_attention = false;
    app.add_option("--seed", seed_flag, "master seed; all streams derive from it");
    app.add_option("--unfreeze", unfreeze_flag, "records unfrozen from the top in finetuning");
    app.add_option("--max-epochs", max_epochs_flag, "cap epochs for every stage");
    app.add_option("--batch-size", batch_flag, "samples per training batch");
    app.add_option("--num-classes", classes_flag, "output classes");
    app.add_option("--input-size", input_flag, "square input resolution");
    app.add_flag("--no-patch", no_patch, "drop the patch extraction block");
    app.add_flag("--no-attention", no_attention, "use the vanilla classifier");

    auto* train_cmd = app.add_subcommand("train", "run the training/finetuning stages");
    std::string data_dir, stage = "both", weights_in, weights_out, report_out;
    train_cmd->add_option("--data-dir", data_dir, "dataset root (train/[val/][test/])")
        ->required();
    train_cmd->add_option("--stage", stage, "train|finetune|both");
    train_cmd->add_option("--weights", weights_in, "initial weights (PLW)");
    train_cmd->add_option("--out", weights_out, "output weights (PLW)");
    train_cmd->add_option("--report", report_out, "per-epoch CSV report");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate weights on a test split");
    std::string eval_weights, eval_data, subset_path, out_dir, gradcam_tap;
    int gradcam_class = -1;
    bool gradcam_true = false;
    eval_cmd->add_option("--weights", eval_weights, "weights to load (PLW)")->required();
    eval_cmd->add_option("--data-dir", eval_data, "test split root")->required();
    eval_cmd->add_option("--subset", subset_path, "challenging-subset list (one id per line)");
    eval_cmd->add_option("--gradcam", gradcam_class, "emit heatmaps for this target class");
    eval_cmd->add_flag("--gradcam-true", gradcam_true, "emit heatmaps targeting each true class");
    eval_cmd->add_option("--gradcam-tap", gradcam_tap,
                         "activation layer the heatmaps tap (default: backbone output)");
    eval_cmd->add_option("--out", out_dir, "output directory for CSV/PGM artifacts");

    auto* params_cmd = app.add_subcommand("params", "print the per-layer parameter table");
    std::vector<long long> assert_range;
    params_cmd->add_option("--assert-total-range", assert_range,
                           "fail (exit 5) unless total is inside [lo hi]")
        ->expected(2);

    auto* sweep_cmd = app.add_subcommand("sweep", "grid over taps, kernels, and padding");
    std::string taps = "b9_dw_act", kernels = "3,4,5,7,8", padding = "both", sweep_out;
    int sweep_epochs = 3;
    std::string sweep_data;
    sweep_cmd->add_option("--data-dir", sweep_data, "dataset root")->required();
    sweep_cmd->add_option("--tap,--taps", taps, "comma-separated backbone tap layer names");
    sweep_cmd->add_option("--kernels", kernels, "comma-separated kernel sizes");
    sweep_cmd->add_option("--padding", padding, "both|padded|unpadded");
    sweep_cmd->add_option("--epochs", sweep_epochs, "stage-1 epochs per combination");
    sweep_cmd->add_option("--out", sweep_out, "ranked results CSV");

    auto* folds_cmd = app.add_subcommand("folds", "subject-independent cross-validation");
    std::string folds_data;
    int fold_k = 10;
    folds_cmd->add_option("--data-dir", folds_data, "class-directory dataset root")->required();
    folds_cmd->add_option("--k", fold_k, "number of folds");

    auto* inspect_cmd = app.add_subcommand("inspect", "describe PLT/PLW files, import images");
    std::string inspect_file, export_plt;
    inspect_cmd->add_option("--file", inspect_file, "PLT tensor, PLW container, or image")
        ->required();
    inspect_cmd->add_option("--export-plt", export_plt, "decode an image sample into a PLT file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) load_config_file(cfg, config_path);
        if (seed_flag) cfg.train.seed = *seed_flag;
        if (unfreeze_flag) cfg.train.unfreeze_top_n = *unfreeze_flag;
        if (max_epochs_flag) {
            cfg.train.max_epochs_stage1 = *max_epochs_flag;
            cfg.train.max_epochs_stage2 = *max_epochs_flag;
        }
        if (batch_flag) cfg.train.batch_size = *batch_flag;
        if (classes_flag) cfg.model.num_classes = *classes_flag;
        if (input_flag) cfg.model.input_size = *input_flag;
        if (no_patch) {
            cfg.model.use_patch_extraction = false;
            cfg.model.pad_to = 0;
        }
        if (no_attention) cfg.model.use_attention_classifier = false;
        const int threads = resolve_threads(threads_flag);

        if (*train_cmd) return cmd_train(cfg, data_dir, stage, weights_in, weights_out, report_out);
        if (*eval_cmd)
            return cmd_eval(cfg, eval_weights, eval_data, subset_path, gradcam_class, gradcam_true,
                            gradcam_tap, out_dir, threads);
        if (*params_cmd) return cmd_params(cfg, assert_range);
        if (*sweep_cmd)
            return cmd_sweep(cfg, sweep_data, taps, kernels, padding, sweep_epochs, sweep_out);
        if (*folds_cmd) return cmd_folds(cfg, folds_data, fold_k);
        if (*inspect_cmd) return cmd_inspect(inspect_file, export_plt);
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DivergenceError& e) {
        std::cerr << "divergence: " << e.what() << "\n";
        return kExitDivergence;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return kExitData;
    } catch (const ShapeError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
