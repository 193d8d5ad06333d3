#pragma once

// Accuracy metrics, confusion matrices, challenging-subset evaluation,
// cross-validation aggregation, Grad-CAM heatmaps, and report export.
// Evaluation is deterministic and augmentation-free; parallel evaluation
// shards samples and merges integer counts, so it matches serial bit for
// bit.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "pattlite/data.hpp"
#include "pattlite/train.hpp"

namespace pattlite {

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<long long> counts;  // rows = ground truth, cols = prediction

    explicit ConfusionMatrix(int n = 0)
        : num_classes(n), counts(static_cast<std::size_t>(n) * static_cast<std::size_t>(n), 0) {}
    long long& at(int truth, int pred) {
        return counts[static_cast<std::size_t>(truth) * num_classes + pred];
    }
    long long at(int truth, int pred) const {
        return counts[static_cast<std::size_t>(truth) * num_classes + pred];
    }
    long long row_sum(int truth) const {
        long long s = 0;
        for (int p = 0; p < num_classes; ++p) s += at(truth, p);
        return s;
    }
    long long trace() const {
        long long s = 0;
        for (int i = 0; i < num_classes; ++i) s += at(i, i);
        return s;
    }
    long long total() const {
        long long s = 0;
        for (long long v : counts) s += v;
        return s;
    }
};

struct EvalReport {
    double overall_accuracy = 0.0;  // trace(confusion) / sum(confusion)
    std::vector<double> per_class_accuracy;
    double mean_class_accuracy = 0.0;  // unweighted over classes with >= 1 sample
    ConfusionMatrix confusion;
    std::vector<std::string> class_names;
    std::string subset;  // optional tag
};

inline EvalReport report_from_confusion(ConfusionMatrix confusion,
                                        std::vector<std::string> class_names,
                                        std::string subset = "") {
    EvalReport report;
    report.class_names = std::move(class_names);
    report.subset = std::move(subset);
    const int k = confusion.num_classes;
    report.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
    int populated = 0;
    double class_sum = 0.0;
    for (int t = 0; t < k; ++t) {
        const long long n = confusion.row_sum(t);
        if (n > 0) {
            report.per_class_accuracy[static_cast<std::size_t>(t)] =
                static_cast<double>(confusion.at(t, t)) / static_cast<double>(n);
            class_sum += report.per_class_accuracy[static_cast<std::size_t>(t)];
            ++populated;
        }
    }
    const long long total = confusion.total();
    report.overall_accuracy =
        total ? static_cast<double>(confusion.trace()) / static_cast<double>(total) : 0.0;
    report.mean_class_accuracy = populated ? class_sum / populated : 0.0;
    report.confusion = std::move(confusion);
    return report;
}

// Argmax with ties broken toward the lowest class index.
inline int predict_class(const float* probs, int d) {
    int best = 0;
    for (int i = 1; i < d; ++i)
        if (probs[i] > probs[best]) best = i;
    return best;
}

// Deterministic inference over a dataset (or a challenging subset of it).
// `threads` caps the worker count; sample forwards are independent, so any
// sharding produces counts identical to the serial run.
inline EvalReport evaluate(const Model<float>& model, const Dataset& ds,
                           const SubsetList* subset = nullptr, int batch_size = 8,
                           int threads = 1) {
    std::vector<int> members;
    if (subset) {
        members = subset->members;
        if (members.empty()) throw DataError("evaluate: subset resolved to zero samples");
    } else {
        members.resize(ds.samples.size());
        for (std::size_t i = 0; i < members.size(); ++i) members[i] = static_cast<int>(i);
    }
    if (members.empty()) throw DataError("evaluate: empty evaluation set");

    const int num_classes = static_cast<int>(ds.class_names.size());
    if (num_classes < 1) throw DataError("evaluate: dataset has no classes");
    BatchStream stream(ds, model.cfg.input_size, batch_size, 0, /*training=*/false);

    auto eval_range = [&](std::size_t lo, std::size_t hi, ConfusionMatrix& confusion) {
        for (std::size_t start = lo; start < hi; start += static_cast<std::size_t>(batch_size)) {
            const int n =
                static_cast<int>(std::min(static_cast<std::size_t>(batch_size), hi - start));
            Tensorf images({n, model.cfg.input_size, model.cfg.input_size, 3});
            std::vector<int> labels;
            for (int i = 0; i < n; ++i) {
                const int idx = members[start + static_cast<std::size_t>(i)];
                const Tensorf img = preprocess_scale(stream.raw(idx));
                std::copy(img.data(), img.data() + img.size(),
                          images.data() + static_cast<Index>(i) * img.size());
                labels.push_back(ds.samples[static_cast<std::size_t>(idx)].label);
            }
            const Tensorf probs = model.forward(images);
            for (int i = 0; i < n; ++i)
                ++confusion.at(labels[static_cast<std::size_t>(i)],
                               predict_class(probs.data() + static_cast<Index>(i) * num_classes,
                                             num_classes));
        }
    };

    ConfusionMatrix confusion(num_classes);
    if (threads <= 1 || members.size() < 2) {
        eval_range(0, members.size(), confusion);
    } else {
        const int workers = std::min<int>(threads, static_cast<int>(members.size()));
        // Decode up front: the image cache is not synchronized.
        for (int idx : members) stream.raw(idx);
        std::vector<ConfusionMatrix> partial(static_cast<std::size_t>(workers),
                                             ConfusionMatrix(num_classes));
        std::vector<std::thread> pool;
        const std::size_t chunk = (members.size() + workers - 1) / workers;
        for (int wkr = 0; wkr < workers; ++wkr) {
            const std::size_t lo = static_cast<std::size_t>(wkr) * chunk;
            const std::size_t hi = std::min(members.size(), lo + chunk);
            if (lo >= hi) break;
            pool.emplace_back([&, lo, hi, wkr] { eval_range(lo, hi, partial[static_cast<std::size_t>(wkr)]); });
        }
        for (auto& t : pool) t.join();
        for (const auto& p : partial)
            for (std::size_t i = 0; i < confusion.counts.size(); ++i)
                confusion.counts[i] += p.counts[i];
    }
    return report_from_confusion(std::move(confusion), ds.class_names,
                                 subset ? subset->name : "");
}

// ---------------------------------------------------------------------------
// Cross-validation.

struct CrossValResult {
    std::vector<double> fold_accuracies;
    double mean_accuracy = 0.0;
};

// Trains one model per fold from an identical init seed and reports
// per-fold accuracy plus the unweighted mean. The fold's test split doubles
// as the training monitor (these protocols carry no validation split).
inline CrossValResult cross_validate(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                                     const std::vector<FoldSplit>& folds,
                                     std::ostream* echo = nullptr) {
    if (folds.size() < 2) throw ConfigError("cross_validate: need k >= 2 folds");
    CrossValResult result;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        Rng init_rng = Rng(train_cfg.seed).split(0x1417);
        Model<float> model = build_model<float>(model_cfg, init_rng);
        if (train_cfg.max_epochs_stage1 > 0)
            run_stage(model, folds[f].train, &folds[f].test, train_cfg, Stage::Train, echo);
        if (train_cfg.max_epochs_stage2 > 0 && train_cfg.unfreeze_top_n > 0)
            run_stage(model, folds[f].train, &folds[f].test, train_cfg, Stage::Finetune, echo);
        const EvalReport report = evaluate(model, folds[f].test, nullptr, train_cfg.batch_size);
        result.fold_accuracies.push_back(report.overall_accuracy);
        if (echo)
            *echo << "fold " << (f + 1) << "/" << folds.size() << " accuracy "
                  << report.overall_accuracy << "\n";
    }
    double sum = 0.0;
    for (double a : result.fold_accuracies) sum += a;
    result.mean_accuracy = sum / static_cast<double>(result.fold_accuracies.size());
    return result;
}

// ---------------------------------------------------------------------------
// Grad-CAM.

// Bilinear upsample of a single-channel map (half-pixel centers), templated
// so the analytic toy checks can run in 64-bit.
template <class Scalar>
Tensor<Scalar> upsample_bilinear(const Tensor<Scalar>& x, int out_h, int out_w) {
    if (x.rank() != 2) throw ShapeError("upsample_bilinear: input must be [H,W]");
    const int h = x.extent(0), w = x.extent(1);
    if (h == out_h && w == out_w) return x;
    Tensor<Scalar> out({out_h, out_w});
    const double sy = static_cast<double>(h) / out_h, sx = static_cast<double>(w) / out_w;
    for (int oy = 0; oy < out_h; ++oy) {
        double fy = (oy + 0.5) * sy - 0.5;
        fy = std::max(0.0, std::min(fy, static_cast<double>(h - 1)));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const Scalar wy = static_cast<Scalar>(fy - y0);
        for (int ox = 0; ox < out_w; ++ox) {
            double fx = (ox + 0.5) * sx - 0.5;
            fx = std::max(0.0, std::min(fx, static_cast<double>(w - 1)));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const Scalar wx = static_cast<Scalar>(fx - x0);
            const Scalar top = x(y0, x0) * (Scalar(1) - wx) + x(y0, x1) * wx;
            const Scalar bot = x(y1, x0) * (Scalar(1) - wx) + x(y1, x1) * wx;
            out(oy, ox) = top * (Scalar(1) - wy) + bot * wy;
        }
    }
    return out;
}

// Standard Grad-CAM at a 4-D tap (default: the backbone output): channel
// weights are the spatial mean of d(target logit)/d(activation), the map is
// relu of the weighted channel sum, bilinearly upsampled to the input size
// and min-max normalized into [0,1] (an all-zero map stays all-zero).
template <class Scalar>
Tensor<Scalar> gradcam(const Model<Scalar>& model, const Tensor<Scalar>& image, int target_class,
                       const std::string& tap_layer = "") {
    if (image.rank() != 3) throw ShapeError("gradcam: image must be [H,W,C]");
    if (target_class < 0 || target_class >= model.cfg.num_classes)
        throw ConfigError("gradcam: target class out of range");
    const std::string tap = tap_layer.empty() ? model.cfg.backbone_tap : tap_layer;
    const int tap_index = model.layer_index(tap);

    Tensor<Scalar> batch({1, image.extent(0), image.extent(1), image.extent(2)});
    std::copy(image.data(), image.data() + image.size(), batch.data());

    typename Model<Scalar>::Cache cache;
    model.forward(batch, Mode::Infer, &cache, tap_index + 1);

    const Tensor<Scalar>& act = cache.act(tap_index + 1);  // tap output
    if (act.rank() != 4)
        throw ConfigError("gradcam: tap layer " + tap + " is not a 4-D activation");

    Tensor<Scalar> dlogits({1, model.cfg.num_classes}, Scalar(0));
    dlogits(0, target_class) = Scalar(1);
    const Tensor<Scalar> dact =
        model.backward_from_logits(cache, dlogits, tap_index + 1, nullptr);

    const int h = act.extent(1), w = act.extent(2), c = act.extent(3);
    std::vector<Scalar> channel_w(static_cast<std::size_t>(c), Scalar(0));
    for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw)
            for (int ic = 0; ic < c; ++ic) channel_w[static_cast<std::size_t>(ic)] += dact(0, ih, iw, ic);
    for (auto& v : channel_w) v /= static_cast<Scalar>(h * w);

    Tensor<Scalar> map({h, w}, Scalar(0));
    for (int ih = 0; ih < h; ++ih)
        for (int iw = 0; iw < w; ++iw) {
            Scalar s = Scalar(0);
            for (int ic = 0; ic < c; ++ic) s += channel_w[static_cast<std::size_t>(ic)] * act(0, ih, iw, ic);
            map(ih, iw) = s > Scalar(0) ? s : Scalar(0);
        }

    Tensor<Scalar> up = upsample_bilinear(map, model.cfg.input_size, model.cfg.input_size);
    Scalar mx = Scalar(0);
    for (Index i = 0; i < up.size(); ++i) mx = std::max(mx, up[i]);
    if (mx > Scalar(0))
        for (Index i = 0; i < up.size(); ++i) up[i] /= mx;
    return up;
}

// ---------------------------------------------------------------------------
// Export.

// 8-bit binary PGM (P5) from a [H,W] map in [0,1].
template <class Scalar>
void write_pgm(const Tensor<Scalar>& map, const std::string& path) {
    if (map.rank() != 2) throw ShapeError("write_pgm: map must be [H,W]");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("write_pgm: cannot open " + path);
    os << "P5\n" << map.extent(1) << ' ' << map.extent(0) << "\n255\n";
    for (Index i = 0; i < map.size(); ++i) {
        const double v = std::max(0.0, std::min(1.0, static_cast<double>(map[i])));
        const unsigned char byte = static_cast<unsigned char>(std::lround(v * 255.0));
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!os) throw DataError("write_pgm: write failed for " + path);
}

namespace detail {

inline std::string format_double(double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Metrics CSV: one row per class plus overall and mean-class summary rows.
inline void write_metrics_csv(const EvalReport& report, std::ostream& os) {
    if (!report.subset.empty()) os << "# subset: " << report.subset << "\n";
    os << "class,samples,accuracy\n";
    for (std::size_t i = 0; i < report.class_names.size(); ++i)
        os << report.class_names[i] << ',' << report.confusion.row_sum(static_cast<int>(i)) << ','
           << detail::format_double(report.per_class_accuracy[i]) << "\n";
    os << "overall," << report.confusion.total() << ','
       << detail::format_double(report.overall_accuracy) << "\n";
    os << "mean_class," << report.class_names.size() << ','
       << detail::format_double(report.mean_class_accuracy) << "\n";
}

// Confusion CSV: header of predicted class names, one row per true class.
inline void write_confusion_csv(const EvalReport& report, std::ostream& os) {
    os << "true\\pred";
    for (const auto& name : report.class_names) os << ',' << name;
    os << "\n";
    for (int t = 0; t < report.confusion.num_classes; ++t) {
        os << report.class_names[static_cast<std::size_t>(t)];
        for (int p = 0; p < report.confusion.num_classes; ++p) os << ',' << report.confusion.at(t, p);
        os << "\n";
    }
}

inline void export_report(const EvalReport& report, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream os(fs::path(out_dir) / "metrics.csv");
        if (!os) throw DataError("export_report: cannot write metrics.csv in " + out_dir);
        write_metrics_csv(report, os);
    }
    {
        std::ofstream os(fs::path(out_dir) / "confusion.csv");
        if (!os) throw DataError("export_report: cannot write confusion.csv in " + out_dir);
        write_confusion_csv(report, os);
    }
}

// Re-parses the pair of CSVs written by export_report.
inline EvalReport parse_report_csvs(std::istream& metrics, std::istream& confusion) {
    EvalReport report;
    std::string line;

    std::vector<std::vector<std::string>> conf_rows;
    while (std::getline(confusion, line)) {
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::istringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        conf_rows.push_back(std::move(fields));
    }
    if (conf_rows.empty()) throw DataError("parse_report_csvs: empty confusion CSV");
    const int k = static_cast<int>(conf_rows.size()) - 1;
    report.confusion = ConfusionMatrix(k);
    for (int t = 0; t < k; ++t) {
        report.class_names.push_back(conf_rows[static_cast<std::size_t>(t) + 1][0]);
        for (int p = 0; p < k; ++p)
            report.confusion.at(t, p) =
                std::stoll(conf_rows[static_cast<std::size_t>(t) + 1][static_cast<std::size_t>(p) + 1]);
    }

    report.per_class_accuracy.assign(static_cast<std::size_t>(k), 0.0);
    while (std::getline(metrics, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            const auto pos = line.find(": ");
            if (pos != std::string::npos) report.subset = line.substr(pos + 2);
            continue;
        }
        std::istringstream ls(line);
        std::string name, samples, acc;
        std::getline(ls, name, ',');
        std::getline(ls, samples, ',');
        std::getline(ls, acc, ',');
        if (name == "class") continue;
        if (name == "overall")
            report.overall_accuracy = std::stod(acc);
        else if (name == "mean_class")
            report.mean_class_accuracy = std::stod(acc);
        else {
            for (std::size_t i = 0; i < report.class_names.size(); ++i)
                if (report.class_names[i] == name) report.per_class_accuracy[i] = std::stod(acc);
        }
    }
    return report;
}

}  // namespace pattlite
