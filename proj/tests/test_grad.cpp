#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "gradcheck.hpp"

using namespace pattlite;

TEST_CASE("relu backward is upstream masked by x > 0") {
    Tensord x = Tensord::from_data({4}, {-1.0, 0.5, 2.0, -0.1});
    Tensord up = Tensord::from_data({4}, {10.0, 20.0, 30.0, 40.0});
    Tensord g = relu_backward(x, up);
    CHECK(g[0] == 0.0);
    CHECK(g[1] == 20.0);
    CHECK(g[2] == 30.0);
    CHECK(g[3] == 0.0);
}

TEST_CASE("dense backward on the 1x1 case matches scalar calculus") {
    // y = x*w + b, dL/dy = u  =>  dx = u*w, dw = u*x, db = u
    Tensord x = Tensord::from_data({1, 1}, {3.0});
    Tensord w = Tensord::from_data({1, 1}, {5.0});
    Tensord up = Tensord::from_data({1, 1}, {2.0});
    auto g = dense_backward(x, w, up);
    CHECK(g.input[0] == doctest::Approx(10.0));
    CHECK(g.weights[0] == doctest::Approx(6.0));
    CHECK(g.bias[0] == doctest::Approx(2.0));
}

TEST_CASE("softmax + cross-entropy fused gradient equals (p - onehot)/N") {
    Tensord logits = Tensord::from_data({2, 3}, {0.2, -1.0, 0.7, 1.5, 0.0, -0.5});
    const std::vector<int> labels = {2, 0};
    Tensord g = sparse_ce_backward(logits, labels);
    Tensord p = softmax(logits);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
            const double want = (p(i, j) - (labels[static_cast<std::size_t>(i)] == j ? 1.0 : 0.0)) / 2.0;
            CHECK(g(i, j) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("finite differences: conv2d") { CHECK(gradcheck::check_conv2d(12, 900) < 1e-5); }
TEST_CASE("finite differences: depthwise") { CHECK(gradcheck::check_depthwise(12, 901) < 1e-5); }
TEST_CASE("finite differences: pointwise") { CHECK(gradcheck::check_pointwise(12, 902) < 1e-5); }
TEST_CASE("finite differences: separable") { CHECK(gradcheck::check_separable(12, 903) < 1e-5); }
TEST_CASE("finite differences: batch norm train and infer") {
    CHECK(gradcheck::check_batch_norm(12, 904) < 1e-5);
}
TEST_CASE("finite differences: relu and relu6") {
    CHECK(gradcheck::check_relu_family(12, 905) < 1e-5);
}
TEST_CASE("finite differences: global average pool") { CHECK(gradcheck::check_gap(12, 906) < 1e-5); }
TEST_CASE("finite differences: dense") { CHECK(gradcheck::check_dense(12, 907) < 1e-5); }
TEST_CASE("finite differences: softmax") { CHECK(gradcheck::check_softmax(12, 908) < 1e-5); }
TEST_CASE("finite differences: attention (q, k, v, scale)") {
    CHECK(gradcheck::check_attention(12, 909) < 1e-5);
}
TEST_CASE("finite differences: sparse cross entropy") {
    CHECK(gradcheck::check_sparse_ce(12, 910) < 1e-5);
}
TEST_CASE("finite differences: pad") { CHECK(gradcheck::check_pad(12, 911) < 1e-5); }

TEST_CASE("end-to-end loss gradient on the tiny 8x8 model") {
    const auto result = gradcheck::check_end_to_end(77);
    CAPTURE(result.parameters_checked);
    CHECK(result.parameters_checked > 200);
    CHECK(result.worst < 1e-4);
}

TEST_CASE("learned attention scale: model-level gradient matches finite differences") {
    ModelConfig cfg = gradcheck::tiny_model_config();
    cfg.attention_scale_mode = AttentionScale::LearnedScalar;
    Rng rng(78);
    Model<double> model = build_model<double>(cfg, rng);
    Tensord x = gradcheck::away_from_kinks(rand_uniform<double>(rng, {2, 8, 8, 2}, -1.0, 1.0));
    const std::vector<int> labels = {0, 1};
    auto& log_scale = model.params.at("attn.log_scale").value;
    log_scale[0] = 0.3;

    auto loss = [&] {
        typename Model<double>::Cache cache;
        model.forward(x, Mode::Train, &cache, 0);
        return sparse_ce_loss(cache.logits, labels);
    };
    typename Model<double>::Cache cache;
    model.forward(x, Mode::Train, &cache, 0);
    GradMap<double> grads;
    model.backward_from_logits(cache, sparse_ce_backward(cache.logits, labels), 0, &grads);
    REQUIRE(grads.count("attn.log_scale") == 1);
    const double worst = gradcheck::fd_worst(loss, log_scale, grads.at("attn.log_scale"));
    CHECK(worst < 1e-5);
}
