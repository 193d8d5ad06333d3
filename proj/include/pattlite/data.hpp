#pragma once

// Dataset ingestion and the batch pipeline: directory-per-class loading,
// bilinear resize to the network input size, [0,255] -> [-1,1] scaling,
// train-split augmentation, seeded batching, subject-independent fold
// splitting, and challenging-subset lists.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "pattlite/image_io.hpp"
#include "pattlite/rng.hpp"
#include "pattlite/tensor.hpp"

namespace pattlite {

struct Sample {
    std::string source;      // image file path (PNG/JPEG/PLT)
    int label = 0;
    std::string subject_id;  // optional, for subject-independent folds
};

struct Dataset {
    std::vector<Sample> samples;
    std::vector<std::string> class_names;
    std::string split;  // train | val | test
};

// Loads `root/<class_name>/<files>` with deterministic lexicographic class
// and sample ordering; labels follow class order. The optional sidecar
// `subjects.tsv` (lines `filename<TAB>subject_id`) overrides the default
// subject convention (leading filename token before the first underscore).
inline Dataset load_directory_dataset(const std::string& root, const std::string& split = "") {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) throw DataError("dataset root is not a directory: " + root);

    std::map<std::string, std::string> subject_map;
    const fs::path sidecar = fs::path(root) / "subjects.tsv";
    if (fs::exists(sidecar)) {
        std::ifstream in(sidecar);
        std::string line;
        while (std::getline(in, line)) {
            const auto tab = line.find('\t');
            if (tab == std::string::npos || tab == 0) continue;
            subject_map[line.substr(0, tab)] = line.substr(tab + 1);
        }
    }

    Dataset ds;
    ds.split = split;
    std::vector<std::string> class_dirs;
    for (const auto& e : fs::directory_iterator(root))
        if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
    std::sort(class_dirs.begin(), class_dirs.end());
    if (class_dirs.empty()) throw DataError("dataset root has no class directories: " + root);

    for (std::size_t label = 0; label < class_dirs.size(); ++label) {
        ds.class_names.push_back(class_dirs[label]);
        std::vector<std::string> files;
        for (const auto& e : fs::directory_iterator(fs::path(root) / class_dirs[label]))
            if (e.is_regular_file()) files.push_back(e.path().filename().string());
        std::sort(files.begin(), files.end());
        if (files.empty())
            throw DataError("empty class directory: " + (fs::path(root) / class_dirs[label]).string());
        for (const auto& f : files) {
            Sample s;
            s.source = (fs::path(root) / class_dirs[label] / f).string();
            s.label = static_cast<int>(label);
            auto it = subject_map.find(f);
            if (it != subject_map.end())
                s.subject_id = it->second;
            else
                s.subject_id = f.substr(0, f.find('_'));
            ds.samples.push_back(std::move(s));
        }
    }
    return ds;
}

// Bilinear resize with half-pixel centers: src = (dst + 0.5) * in/out - 0.5,
// clamped at the borders. A same-size input passes through bit-identically.
inline Tensorf resize_bilinear(const Tensorf& x, int out_h, int out_w) {
    if (x.rank() != 3) throw ShapeError("resize_bilinear: input must be [H,W,C]");
    const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
    if (h == out_h && w == out_w) return x;
    Tensorf out({out_h, out_w, c});
    const float sy = static_cast<float>(h) / static_cast<float>(out_h);
    const float sx = static_cast<float>(w) / static_cast<float>(out_w);
    for (int oy = 0; oy < out_h; ++oy) {
        float fy = (static_cast<float>(oy) + 0.5f) * sy - 0.5f;
        fy = std::max(0.0f, std::min(fy, static_cast<float>(h - 1)));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const float wy = fy - static_cast<float>(y0);
        for (int ox = 0; ox < out_w; ++ox) {
            float fx = (static_cast<float>(ox) + 0.5f) * sx - 0.5f;
            fx = std::max(0.0f, std::min(fx, static_cast<float>(w - 1)));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const float wx = fx - static_cast<float>(x0);
            for (int ic = 0; ic < c; ++ic) {
                const float top = x(y0, x0, ic) * (1.0f - wx) + x(y0, x1, ic) * wx;
                const float bot = x(y1, x0, ic) * (1.0f - wx) + x(y1, x1, ic) * wx;
                out(oy, ox, ic) = top * (1.0f - wy) + bot * wy;
            }
        }
    }
    return out;
}

// [0,255] pixel values to [-1,1]: x/127.5 - 1. Out-of-range input is an error.
inline Tensorf preprocess_scale(const Tensorf& x) {
    Tensorf out(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
        if (!(x[i] >= 0.0f && x[i] <= 255.0f))
            throw DataError("preprocess_scale: pixel value out of [0,255]: " + std::to_string(x[i]));
        out[i] = x[i] / 127.5f - 1.0f;
    }
    return out;
}

// Mirrors the width axis with probability 0.5.
inline Tensorf random_flip(const Tensorf& x, Rng& rng) {
    if (x.rank() != 3) throw ShapeError("random_flip: input must be [H,W,C]");
    if (rng.next_double() >= 0.5) return x;
    const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
    Tensorf out({h, w, c});
    for (int y = 0; y < h; ++y)
        for (int ix = 0; ix < w; ++ix)
            for (int ic = 0; ic < c; ++ic) out(y, ix, ic) = x(y, w - 1 - ix, ic);
    return out;
}

// Scales the deviation from the per-channel mean by a factor drawn uniformly
// from [1-delta, 1+delta], clamped back to the pixel range.
inline Tensorf random_contrast(const Tensorf& x, Rng& rng, double delta = 0.2) {
    if (x.rank() != 3) throw ShapeError("random_contrast: input must be [H,W,C]");
    const float f = static_cast<float>(rng.uniform(1.0 - delta, 1.0 + delta));
    const int h = x.extent(0), w = x.extent(1), c = x.extent(2);
    std::vector<float> mean(static_cast<std::size_t>(c), 0.0f);
    for (Index i = 0; i < x.size(); ++i) mean[static_cast<std::size_t>(i % c)] += x[i];
    for (auto& m : mean) m /= static_cast<float>(h * w);
    Tensorf out(x.shape());
    for (Index i = 0; i < x.size(); ++i) {
        const float m = mean[static_cast<std::size_t>(i % c)];
        out[i] = std::max(0.0f, std::min(255.0f, (x[i] - m) * f + m));
    }
    return out;
}

struct Batch {
    Tensorf images;           // [n, S, S, 3], values in [-1, 1]
    std::vector<int> labels;
    std::vector<int> indices;  // dataset sample indices in batch order
};

// Deterministic per-epoch batch producer. Training mode shuffles per epoch
// and augments (flip + contrast in the pixel domain); evaluation mode is
// ordered and augmentation-free. Preprocessing applies everywhere. Decoded
// images are resized once and cached in memory (desk-scale datasets).
class BatchStream {
public:
    BatchStream(const Dataset& ds, int input_size, int batch_size, std::uint64_t seed,
                bool training)
        : ds_(&ds),
          input_size_(input_size),
          batch_size_(batch_size),
          seed_(seed),
          training_(training),
          cache_(ds.samples.size()) {
        if (ds.samples.empty()) throw DataError("BatchStream: empty dataset");
        if (batch_size < 1) throw ConfigError("BatchStream: batch_size must be >= 1");
    }

    int batches_per_epoch() const {
        return static_cast<int>((ds_->samples.size() + batch_size_ - 1) / batch_size_);
    }

    // Seeded shuffle per epoch; the last partial batch is kept.
    std::vector<Batch> epoch(int epoch_index) {
        std::vector<int> order(ds_->samples.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        Rng shuffle_rng = Rng(seed_).split(0x5u).split(static_cast<std::uint64_t>(epoch_index));
        if (training_) shuffle(order, shuffle_rng);
        Rng aug_rng = Rng(seed_).split(0xAu).split(static_cast<std::uint64_t>(epoch_index));

        std::vector<Batch> out;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(batch_size_)) {
            const int n = static_cast<int>(
                std::min(static_cast<std::size_t>(batch_size_), order.size() - start));
            Batch b;
            b.images = Tensorf({n, input_size_, input_size_, 3});
            for (int i = 0; i < n; ++i) {
                const int idx = order[start + static_cast<std::size_t>(i)];
                Tensorf img = raw(idx);
                if (training_) {
                    img = random_flip(img, aug_rng);
                    img = random_contrast(img, aug_rng);
                }
                img = preprocess_scale(img);
                std::copy(img.data(), img.data() + img.size(),
                          b.images.data() + static_cast<Index>(i) * img.size());
                b.labels.push_back(ds_->samples[static_cast<std::size_t>(idx)].label);
                b.indices.push_back(idx);
            }
            out.push_back(std::move(b));
        }
        return out;
    }

    // Decoded, resized, unaugmented pixel image for one sample.
    const Tensorf& raw(int index) {
        auto& slot = cache_[static_cast<std::size_t>(index)];
        if (slot.size() == 0) {
            const auto& s = ds_->samples[static_cast<std::size_t>(index)];
            try {
                slot = resize_bilinear(load_image(s.source), input_size_, input_size_);
            } catch (const Error& e) {
                throw DataError(std::string(e.what()) + " (sample: " + s.source + ")");
            }
        }
        return slot;
    }

private:
    const Dataset* ds_;
    int input_size_;
    int batch_size_;
    std::uint64_t seed_;
    bool training_;
    std::vector<Tensorf> cache_;
};

// ---------------------------------------------------------------------------
// Subject-independent cross-validation folds.

struct FoldSplit {
    Dataset train, test;
};

// Partitions subjects (never samples) into k folds by sorted-subject
// round-robin; fold i tests on its subjects and trains on the rest.
inline std::vector<FoldSplit> ckplus_subject_folds(const Dataset& ds, int k = 10) {
    if (k < 2) throw ConfigError("ckplus_subject_folds: k must be >= 2");
    std::set<std::string> subject_set;
    for (const auto& s : ds.samples) {
        if (s.subject_id.empty())
            throw DataError("ckplus_subject_folds: sample missing subject_id: " + s.source);
        subject_set.insert(s.subject_id);
    }
    std::vector<std::string> subjects(subject_set.begin(), subject_set.end());
    std::map<std::string, int> fold_of;
    for (std::size_t i = 0; i < subjects.size(); ++i)
        fold_of[subjects[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

    std::vector<FoldSplit> folds(static_cast<std::size_t>(k));
    for (auto& f : folds) {
        f.train.class_names = ds.class_names;
        f.train.split = "train";
        f.test.class_names = ds.class_names;
        f.test.split = "test";
    }
    for (const auto& s : ds.samples) {
        const int f = fold_of[s.subject_id];
        for (int i = 0; i < k; ++i)
            (i == f ? folds[static_cast<std::size_t>(i)].test
                    : folds[static_cast<std::size_t>(i)].train)
                .samples.push_back(s);
    }
    return folds;
}

// ---------------------------------------------------------------------------
// Challenging-condition subset lists.

struct SubsetList {
    std::string name;
    std::vector<int> members;        // indices into the parent test split
    std::vector<std::string> unresolved;  // identifiers not found in the split
};

// One identifier per line (file name, with or without directory); duplicates
// collapse, unresolved lines are reported but not fatal.
inline SubsetList load_subset_list(const std::string& path, const Dataset& test_ds) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open subset list: " + path);

    std::map<std::string, int> by_basename;
    for (std::size_t i = 0; i < test_ds.samples.size(); ++i) {
        const std::string base =
            std::filesystem::path(test_ds.samples[i].source).filename().string();
        by_basename[base] = static_cast<int>(i);
    }

    SubsetList subset;
    subset.name = std::filesystem::path(path).stem().string();
    std::set<int> seen;
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
        if (line.empty()) continue;
        const std::string base = std::filesystem::path(line).filename().string();
        auto it = by_basename.find(base);
        if (it == by_basename.end()) {
            subset.unresolved.push_back(line);
            continue;
        }
        if (seen.insert(it->second).second) subset.members.push_back(it->second);
    }
    std::sort(subset.members.begin(), subset.members.end());
    return subset;
}

}  // namespace pattlite
