#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pattlite/train.hpp"

#include "gradcheck.hpp"
#include "testutil.hpp"

using namespace pattlite;

namespace {

// Snapshot of every parameter value, keyed by name.
std::unordered_map<std::string, Tensorf> snapshot_params(const Model<float>& model) {
    std::unordered_map<std::string, Tensorf> out;
    for (const auto& entry : model.params.entries()) out.emplace(entry.name, entry.value);
    return out;
}

bool bit_identical(const Tensorf& a, const Tensorf& b) {
    if (!a.same_shape(b)) return false;
    for (Index i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

double train_set_loss(Model<float>& model, const Dataset& ds, int input_size) {
    BatchStream stream(ds, input_size, 8, 0, /*training=*/false);
    double loss_sum = 0.0;
    long long total = 0;
    typename Model<float>::Cache cache;
    for (auto& batch : stream.epoch(0)) {
        model.forward(batch.images, Mode::Train, &cache,
                      static_cast<int>(model.layers.size()) - 1);
        loss_sum += sparse_ce_loss(cache.logits, batch.labels) * batch.labels.size();
        total += static_cast<long long>(batch.labels.size());
    }
    return loss_sum / static_cast<double>(total);
}

}  // namespace

TEST_CASE("clip_global_norm: analytic cases") {
    SUBCASE("norm 10 with c = 1 scales every element by 0.1") {
        Tensorf a({4}, 0.0f);
        a[0] = 6.0f;
        a[1] = 8.0f;  // norm 10
        std::vector<Tensor<float>*> grads = {&a};
        const double norm = clip_global_norm(grads, 1.0);
        CHECK(norm == doctest::Approx(10.0));
        CHECK(a[0] == doctest::Approx(0.6f));
        CHECK(a[1] == doctest::Approx(0.8f));
    }
    SUBCASE("norm below the threshold is untouched") {
        Tensorf a = Tensorf::from_data({2}, {0.3f, 0.4f});  // norm 0.5
        std::vector<Tensor<float>*> grads = {&a};
        clip_global_norm(grads, 1.0);
        CHECK(a[0] == 0.3f);
        CHECK(a[1] == 0.4f);
    }
    SUBCASE("two tensors [3],[4]: global norm 5, c = 1 scales both by 0.2") {
        Tensorf a = Tensorf::from_data({1}, {3.0f});
        Tensorf b = Tensorf::from_data({1}, {4.0f});
        std::vector<Tensor<float>*> grads = {&a, &b};
        const double norm = clip_global_norm(grads, 1.0);
        CHECK(norm == doctest::Approx(5.0));
        CHECK(a[0] == doctest::Approx(0.6f));
        CHECK(b[0] == doctest::Approx(0.8f));
    }
}

TEST_CASE("clip_global_norm: magnitude never grows, signs never flip, norm lands under c") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Tensorf a = testutil::random_tensor<float>(rng, {7}, -3.0, 3.0);
        Tensorf b = testutil::random_tensor<float>(rng, {5}, -3.0, 3.0);
        Tensorf a0 = a, b0 = b;
        std::vector<Tensor<float>*> grads = {&a, &b};
        const double c = rng.uniform(0.2, 4.0);
        clip_global_norm(grads, c);
        double sq = 0.0;
        for (Index i = 0; i < a.size(); ++i) {
            CHECK(std::fabs(a[i]) <= std::fabs(a0[i]) + 1e-7f);
            CHECK(a[i] * a0[i] >= 0.0f);
            sq += static_cast<double>(a[i]) * a[i];
        }
        for (Index i = 0; i < b.size(); ++i) {
            CHECK(std::fabs(b[i]) <= std::fabs(b0[i]) + 1e-7f);
            CHECK(b[i] * b0[i] >= 0.0f);
            sq += static_cast<double>(b[i]) * b[i];
        }
        CHECK(std::sqrt(sq) <= c + 1e-6);
    }
    Tensorf bad = Tensorf::from_data({1}, {std::numeric_limits<float>::infinity()});
    std::vector<Tensor<float>*> grads = {&bad};
    CHECK_THROWS_AS(clip_global_norm(grads, 1.0), DivergenceError);
}

TEST_CASE("adam: first-step analytic delta and zero-gradient fixed point") {
    ParameterStore<double> params;
    params.add("p", Tensor<double>({1}, 1.0), true, ParamKind::Weight);
    AdamState<double> state;
    GradMap<double> grads;
    grads.emplace("p", Tensor<double>::from_data({1}, {0.5}));
    adam_step(params, grads, state, 1e-3);
    // bias-corrected first step: delta = -lr * g / (|g| + eps)
    CHECK(params.at("p").value[0] ==
          doctest::Approx(1.0 - 1e-3 * 0.5 / (0.5 + 1e-7)).epsilon(1e-12));

    ParameterStore<double> fixed;
    fixed.add("p", Tensor<double>({1}, 2.5), true, ParamKind::Weight);
    AdamState<double> state2;
    GradMap<double> zero;
    zero.emplace("p", Tensor<double>({1}, 0.0));
    adam_step(fixed, zero, state2, 1e-3);
    CHECK(fixed.at("p").value[0] == 2.5);
}

TEST_CASE("adam: three-step scalar trajectory matches a hand-rolled reference") {
    const double lr = 0.01;
    const std::vector<double> gs = {0.5, -0.3, 0.2};

    // Hand-rolled reference sequence.
    double p_ref = 1.0, m = 0.0, v = 0.0;
    for (std::size_t t = 1; t <= gs.size(); ++t) {
        const double g = gs[t - 1];
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, static_cast<double>(t)));
        const double vhat = v / (1.0 - std::pow(0.999, static_cast<double>(t)));
        p_ref -= lr * mhat / (std::sqrt(vhat) + 1e-7);
    }

    ParameterStore<double> params;
    params.add("p", Tensor<double>({1}, 1.0), true, ParamKind::Weight);
    AdamState<double> state;
    for (double g : gs) {
        GradMap<double> grads;
        grads.emplace("p", Tensor<double>::from_data({1}, {g}));
        adam_step(params, grads, state, lr);
    }
    CHECK(params.at("p").value[0] == doctest::Approx(p_ref).epsilon(1e-14));
}

TEST_CASE("adam never touches frozen parameters") {
    ParameterStore<float> params;
    params.add("frozen", Tensorf({2}, 1.0f), false, ParamKind::Weight);
    params.add("live", Tensorf({2}, 1.0f), true, ParamKind::Weight);
    AdamState<float> state;
    GradMap<float> grads;
    grads.emplace("frozen", Tensorf({2}, 0.7f));
    grads.emplace("live", Tensorf({2}, 0.7f));
    adam_step(params, grads, state, 0.1);
    CHECK(params.at("frozen").value[0] == 1.0f);
    CHECK(params.at("live").value[0] != 1.0f);
    CHECK(state.m.count("frozen") == 0);  // state exists only for trainable entries
}

TEST_CASE("plateau schedule: improving history, flat firings, floor") {
    PlateauSchedule improving(1e-3, 5, 0.5, 1e-6);
    for (int i = 1; i <= 10; ++i) CHECK(improving.observe(0.1 * i) == doctest::Approx(1e-3));

    PlateauSchedule flat5(1e-3, 5, 0.5, 1e-6);
    flat5.observe(0.5);  // becomes best
    for (int i = 0; i < 4; ++i) CHECK(flat5.observe(0.5) == doctest::Approx(1e-3));
    CHECK(flat5.observe(0.5) == doctest::Approx(5e-4));  // fifth flat epoch fires

    // Twelve flat epochs after a best: exactly two reductions.
    PlateauSchedule flat12(1e-3, 5, 0.5, 1e-6);
    flat12.observe(0.5);
    double lr = 1e-3;
    for (int i = 0; i < 12; ++i) lr = flat12.observe(0.5);
    CHECK(lr == doctest::Approx(2.5e-4));

    PlateauSchedule floor(2e-6, 1, 0.5, 1e-6);
    floor.observe(0.5);
    CHECK(floor.observe(0.5) == doctest::Approx(1e-6));
    CHECK(floor.observe(0.5) == doctest::Approx(1e-6));  // held at the floor
}

TEST_CASE("plateau schedule: the rate trajectory is non-increasing under any history") {
    Rng rng(23);
    for (int trial = 0; trial < 10; ++trial) {
        PlateauSchedule sched(1e-3, 1 + static_cast<int>(rng.below(4)), 0.5, 1e-6);
        double prev = 1e-3;
        for (int epoch = 0; epoch < 40; ++epoch) {
            const double lr = sched.observe(rng.uniform(0.0, 1.0));
            CHECK(lr <= prev);
            CHECK(lr >= 1e-6);
            prev = lr;
        }
    }
}

TEST_CASE("inverse time decay: endpoints and monotonicity") {
    CHECK(inverse_time_decay(1e-5, 0, 1.0, 100) == doctest::Approx(1e-5));
    CHECK(inverse_time_decay(1e-5, 100, 1.0, 100) == doctest::Approx(5e-6));
    double prev = 1e30;
    for (long long t = 0; t < 500; t += 7) {
        const double lr = inverse_time_decay(1e-5, t, 1.0, 50);
        CHECK(lr <= prev);
        prev = lr;
    }
    CHECK_THROWS_AS(inverse_time_decay(1e-5, 1, 1.0, 0), ConfigError);
}

TEST_CASE("early stopping: stop timing and bit-exact snapshot restoration") {
    ModelConfig cfg = gradcheck::tiny_train_config();
    Rng rng(22);
    Model<float> model = build_model<float>(cfg, rng);

    SUBCASE("improving metrics never stop") {
        EarlyStopping<float> s(10, true);
        for (int epoch = 1; epoch <= 30; ++epoch)
            CHECK(!s.observe(epoch, 0.01 * epoch, model));
        CHECK(s.best_epoch() == 30);
    }

    SUBCASE("best at epoch 3, flat after, patience 10 stops at epoch 13") {
        EarlyStopping<float> s(10, true);
        int stopped_at = -1;
        for (int epoch = 1; epoch <= 50; ++epoch) {
            const double metric = epoch <= 3 ? 0.1 * epoch : 0.3;
            // Mutate a weight each epoch so snapshots are distinguishable.
            model.params.at("fc2.b").value[0] = static_cast<float>(epoch);
            if (s.observe(epoch, metric, model)) {
                stopped_at = epoch;
                break;
            }
        }
        CHECK(stopped_at == 13);
        CHECK(s.best_epoch() == 3);
        s.maybe_restore(model);
        CHECK(model.params.at("fc2.b").value[0] == 3.0f);
    }
}

TEST_CASE("run_stage: loss drops, backbone stays frozen, reports are deterministic") {
    testutil::TempDir tmp("train");
    testutil::write_synthetic_dataset(tmp.str(), "train", 8, 16, 31);
    Dataset ds = load_directory_dataset((tmp.path() / "train").string(), "train");

    ModelConfig mc = gradcheck::tiny_train_config();
    TrainConfig tc;
    tc.seed = 5;
    tc.max_epochs_stage1 = 6;
    tc.early_stop_patience = 10;

    Rng rng(40);
    Model<float> model = build_model<float>(mc, rng);
    const double loss_at_init = train_set_loss(model, ds, mc.input_size);
    const auto before = snapshot_params(model);

    StageReport report = run_stage(model, ds, nullptr, tc, Stage::Train);
    CHECK(report.rows.size() <= 6);
    CHECK(!report.rows.empty());
    CHECK(report.monitor == "train_acc");

    const double loss_after = train_set_loss(model, ds, mc.input_size);
    CHECK(loss_after <= loss_at_init);

    // Freeze contract: every backbone tensor bit-identical after training.
    for (const auto& entry : model.params.entries()) {
        const bool backbone = entry.name.rfind("conv1", 0) == 0 || entry.name.rfind("t1", 0) == 0;
        if (backbone) {
            CAPTURE(entry.name);
            CHECK(bit_identical(entry.value, before.at(entry.name)));
        }
    }

    // Determinism: a fresh identical run reproduces the report bit for bit.
    Rng rng2(40);
    Model<float> model2 = build_model<float>(mc, rng2);
    StageReport report2 = run_stage(model2, ds, nullptr, tc, Stage::Train);
    REQUIRE(report2.rows.size() == report.rows.size());
    for (std::size_t i = 0; i < report.rows.size(); ++i) {
        CHECK(report.rows[i].lr == report2.rows[i].lr);
        CHECK(report.rows[i].train_loss == report2.rows[i].train_loss);
        CHECK(report.rows[i].train_acc == report2.rows[i].train_acc);
        CHECK(report.rows[i].val_acc == report2.rows[i].val_acc);
    }
    for (const auto& entry : model.params.entries())
        CHECK(bit_identical(entry.value, model2.params.at(entry.name).value));
}

TEST_CASE("run_stage: early stopping restores weights that reproduce the best metric") {
    testutil::TempDir tmp("restore");
    testutil::write_synthetic_dataset(tmp.str(), "train", 6, 16, 33);
    testutil::write_synthetic_dataset(tmp.str(), "val", 3, 16, 34);
    Dataset train = load_directory_dataset((tmp.path() / "train").string(), "train");
    Dataset val = load_directory_dataset((tmp.path() / "val").string(), "val");

    ModelConfig mc = gradcheck::tiny_train_config();
    TrainConfig tc;
    tc.seed = 6;
    tc.max_epochs_stage1 = 8;
    tc.early_stop_patience = 3;

    Rng rng(41);
    Model<float> model = build_model<float>(mc, rng);
    StageReport report = run_stage(model, train, &val, tc, Stage::Train);
    CHECK(report.monitor == "val_acc");
    REQUIRE(report.best_epoch >= 1);

    BatchStream val_stream(val, mc.input_size, tc.batch_size, 0, false);
    const double reproduced = pattlite::detail::accuracy_on(model, val_stream);
    CHECK(reproduced == report.best_metric);
    CHECK(report.best_metric ==
          report.rows[static_cast<std::size_t>(report.best_epoch) - 1].val_acc);
    for (const auto& row : report.rows) CHECK(row.val_acc <= report.best_metric);
}

TEST_CASE("run_stage: empty dataset and divergence are surfaced") {
    ModelConfig mc = gradcheck::tiny_train_config();
    TrainConfig tc;
    Rng rng(42);
    Model<float> model = build_model<float>(mc, rng);
    Dataset empty;
    CHECK_THROWS_AS(run_stage(model, empty, nullptr, tc, Stage::Train), DataError);

    testutil::TempDir tmp("diverge");
    testutil::write_synthetic_dataset(tmp.str(), "train", 4, 16, 35);
    Dataset ds = load_directory_dataset((tmp.path() / "train").string(), "train");
    TrainConfig hot;
    hot.seed = 7;
    hot.stage1_lr = 1e25;
    hot.max_epochs_stage1 = 4;
    CHECK_THROWS_AS(run_stage(model, ds, nullptr, hot, Stage::Train), DivergenceError);
}

TEST_CASE("run_two_stage: finetune updates exactly the unfrozen suffix") {
    testutil::TempDir tmp("twostage");
    testutil::write_synthetic_dataset(tmp.str(), "train", 6, 16, 36);
    Dataset ds = load_directory_dataset((tmp.path() / "train").string(), "train");

    ModelConfig mc = gradcheck::tiny_train_config();
    TrainConfig tc;
    tc.seed = 8;
    tc.max_epochs_stage1 = 2;
    tc.max_epochs_stage2 = 2;
    tc.unfreeze_top_n = 16;  // tiny model has 22 records; freezes the first 6

    Rng rng(43);
    Model<float> model = build_model<float>(mc, rng);
    run_stage(model, ds, nullptr, tc, Stage::Train);
    const auto after_stage1 = snapshot_params(model);
    run_stage(model, ds, nullptr, tc, Stage::Finetune);

    // Records 0..5 are conv1/conv1_bn/conv1_act/t1_dw/t1_dw_bn/t1_dw_act.
    for (const auto& entry : model.params.entries()) {
        const bool frozen_region =
            entry.name.rfind("conv1", 0) == 0 || entry.name.rfind("t1_dw", 0) == 0;
        const bool moving = entry.kind == ParamKind::BnMoving;
        CAPTURE(entry.name);
        if (frozen_region || moving)
            CHECK(bit_identical(entry.value, after_stage1.at(entry.name)));
        else
            CHECK(!bit_identical(entry.value, after_stage1.at(entry.name)));
    }
}

TEST_CASE("run_two_stage: a zero-epoch finetune leaves stage-1 weights untouched") {
    testutil::TempDir tmp("noop2");
    testutil::write_synthetic_dataset(tmp.str(), "train", 4, 16, 37);
    Dataset ds = load_directory_dataset((tmp.path() / "train").string(), "train");

    ModelConfig mc = gradcheck::tiny_train_config();
    TrainConfig tc;
    tc.seed = 9;
    tc.max_epochs_stage1 = 2;
    tc.max_epochs_stage2 = 0;
    tc.unfreeze_top_n = 5;

    Rng rng(44);
    Model<float> model = build_model<float>(mc, rng);
    auto [first, second] = run_two_stage(model, ds, nullptr, tc);
    CHECK(first.rows.size() == 2);
    CHECK(second.rows.empty());

    Rng rng2(44);
    Model<float> control = build_model<float>(mc, rng2);
    run_stage(control, ds, nullptr, tc, Stage::Train);
    for (const auto& entry : model.params.entries())
        CHECK(bit_identical(entry.value, control.params.at(entry.name).value));
}

TEST_CASE("stage report CSV: header and one row per epoch") {
    StageReport report;
    report.rows.push_back({1, 1e-3, 0.69, 0.5, 0.5});
    report.rows.push_back({2, 1e-3, 0.42, 0.75, 0.625});
    std::ostringstream os;
    write_stage_report_csv(report, os);
    const std::string text = os.str();
    CHECK(text.rfind("epoch,lr,train_loss,train_acc,val_acc\n", 0) == 0);
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}
