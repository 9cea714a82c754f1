#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "neuralscale/dataset.hpp"
#include "neuralscale/errors.hpp"
#include "neuralscale/trainer.hpp"
#include "test_support.hpp"

using namespace neuralscale;

namespace {

Dataset two_blobs(std::uint64_t seed) {
    BlobOptions o;
    o.num_classes = 2;
    o.dim = 4;
    o.train_per_class = 100;
    o.validation_per_class = 50;
    o.separation = 2.5;
    o.noise = 0.5;
    o.seed = seed;
    return make_blobs(o);
}

// Plain batch gradient descent on the logistic loss, written without any
// library code. Returns training accuracy.
double logistic_regression_accuracy(const Dataset& d) {
    const int dim = d.shape.channels;
    const std::size_t n = d.train.size();
    std::vector<double> w(dim, 0.0);
    double b = 0.0;
    for (int it = 0; it < 2000; ++it) {
        std::vector<double> gw(dim, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double z = b;
            for (int j = 0; j < dim; ++j) z += w[j] * d.train.features[i * dim + j];
            const double p = 1.0 / (1.0 + std::exp(-z));
            const double e = p - d.train.labels[i];
            for (int j = 0; j < dim; ++j) gw[j] += e * d.train.features[i * dim + j];
            gb += e;
        }
        for (int j = 0; j < dim; ++j) w[j] -= 0.1 * gw[j] / n;
        b -= 0.1 * gb / n;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double z = b;
        for (int j = 0; j < dim; ++j) z += w[j] * d.train.features[i * dim + j];
        correct += (z > 0.0 ? 1 : 0) == d.train.labels[i];
    }
    return static_cast<double>(correct) / n;
}

}  // namespace

TEST_CASE("zero epochs leaves the network unchanged") {
    const auto d = two_blobs(1);
    const auto a = mlp(4, {8}, 2);
    auto net = init_network(a, WidthConfig({8}), 3);
    const auto before = net.layers[0].weight.value;
    TrainSchedule s;
    s.epochs = 0;
    const auto r = train(net, d, s);
    CHECK(r.loss_history.empty());
    CHECK(net.layers[0].weight.value == before);
}

TEST_CASE("separable blobs: small MLP reaches the logistic-regression oracle's level") {
    const auto d = two_blobs(2);
    const double oracle = logistic_regression_accuracy(d);
    REQUIRE(oracle >= 0.95);

    const auto a = mlp(4, {8}, 2);
    auto net = init_network(a, WidthConfig({8}), 4);
    TrainSchedule s;
    s.epochs = 50;
    s.learning_rate = 0.05;
    s.batch_size = 32;
    const auto r = train(net, d, s);
    CHECK(r.loss_history.size() == 50);
    CHECK(evaluate(net, d.train, d.shape).accuracy >= 0.95);
}

TEST_CASE("learning rate 0 and no decay: weights unchanged") {
    const auto d = two_blobs(3);
    const auto a = mlp(4, {6, 5}, 2, true);
    auto net = init_network(a, WidthConfig({6, 5}), 5);
    const auto w0 = net.layers[1].weight.value;
    const auto c0 = net.classifier.weight.value;
    TrainSchedule s;
    s.epochs = 3;
    s.learning_rate = 0.0;
    s.weight_decay = 0.0;
    train(net, d, s);
    CHECK(net.layers[1].weight.value == w0);
    CHECK(net.classifier.weight.value == c0);
}

TEST_CASE("all-zero classifier on balanced data ties to class 0") {
    const auto d = two_blobs(4);
    auto net = init_network(mlp(4, {5}, 2), WidthConfig({5}), 6);
    std::fill(net.classifier.weight.value.begin(), net.classifier.weight.value.end(), 0.0);
    const auto e = evaluate(net, d);
    CHECK(e.accuracy == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(e.loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("evaluate is deterministic") {
    const auto d = two_blobs(5);
    const auto net = init_network(mlp(4, {7}, 2), WidthConfig({7}), 2);
    const auto e1 = evaluate(net, d);
    const auto e2 = evaluate(net, d);
    CHECK(e1.accuracy == e2.accuracy);
    CHECK(e1.loss == e2.loss);
}

TEST_CASE("random-init accuracy stays inside the sanity band") {
    BlobOptions o;
    o.num_classes = 4;
    o.dim = 8;
    o.validation_per_class = 100;
    const auto d = make_blobs(o);
    const auto a = mlp(8, {16, 8}, 4);
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto net = init_network(a, WidthConfig({16, 8}), seed);
        const double acc = evaluate(net, d).accuracy;
        CAPTURE(seed);
        CHECK(acc >= 0.5 / 4);
        CHECK(acc <= 3.0 / 4);
    }
}

TEST_CASE("fixed seed and schedule reproduce the loss history") {
    const auto d = two_blobs(6);
    const auto a = mlp(4, {6}, 2, true);
    TrainSchedule s;
    s.epochs = 4;
    s.lr_milestones = {2};
    auto n1 = init_network(a, WidthConfig({6}), 9);
    auto n2 = init_network(a, WidthConfig({6}), 9);
    CHECK(train(n1, d, s).loss_history == train(n2, d, s).loss_history);
}

TEST_CASE("conv training on textures runs and is deterministic") {
    TextureOptions o;
    o.num_classes = 2;
    o.size = 8;
    o.train_per_class = 16;
    o.validation_per_class = 8;
    const auto d = make_textures(o);
    auto a = vgg11({3, 8, 8}, 2);
    const auto w = uniform_widths(a, 1.0 / 32);
    TrainSchedule s;
    s.epochs = 2;
    s.batch_size = 8;
    auto n1 = init_network(a, w, 1);
    auto n2 = init_network(a, w, 1);
    const auto h1 = train(n1, d, s).loss_history;
    CHECK(h1.size() == 2);
    CHECK(std::isfinite(h1.back()));
    CHECK(h1 == train(n2, d, s).loss_history);
}

TEST_CASE("divergence is reported with the step index") {
    const auto d = two_blobs(7);
    auto net = init_network(mlp(4, {6}, 2), WidthConfig({6}), 1);
    net.layers[0].weight.value[0] = std::numeric_limits<double>::quiet_NaN();
    TrainSchedule s;
    s.epochs = 1;
    try {
        train(net, d, s);
        FAIL("expected divergence");
    } catch (const TrainingDivergence& e) {
        CHECK(e.kind() == ErrorKind::TrainingDivergence);
        CHECK(e.step() == 0);
    }
}

TEST_CASE("empty splits are domain errors") {
    auto d = two_blobs(8);
    auto net = init_network(mlp(4, {6}, 2), WidthConfig({6}), 1);
    Dataset empty = d;
    empty.train = {};
    CHECK_THROWS_AS(train(net, empty, TrainSchedule{}), Error);
    CHECK_THROWS_AS(evaluate(net, Split{}, d.shape), Error);
    try {
        evaluate(net, Split{}, d.shape);
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Domain);
    }
}

TEST_CASE("schedule validation") {
    TrainSchedule s;
    s.momentum = 1.0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.batch_size = 0;
    CHECK_THROWS_AS(s.validate(), Error);
    s = {};
    s.lr_milestones = {2, 4};
    CHECK(s.rate_at(0) == doctest::Approx(0.1));
    CHECK(s.rate_at(2) == doctest::Approx(0.01));
    CHECK(s.rate_at(5) == doctest::Approx(0.001));
}

TEST_CASE("dataset file round trip") {
    const auto dir = std::filesystem::temp_directory_path() / "ns_test_dataset";
    std::filesystem::create_directories(dir);
    const auto d = two_blobs(9);
    save_dataset(d, dir / "a.bin", false);
    const auto back = load_dataset(dir / "a.bin");
    CHECK(back.shape == d.shape);
    CHECK(back.num_classes == d.num_classes);
    CHECK(back.train.features == d.train.features);
    CHECK(back.train.labels == d.train.labels);
    CHECK(back.validation.labels == d.validation.labels);

    save_dataset(d, dir / "b.bin", true);
    const auto f32 = load_dataset(dir / "b.bin");
    CHECK(f32.train.features[3] == doctest::Approx(d.train.features[3]).epsilon(1e-6));

    {
        std::ofstream bad(dir / "bad.bin", std::ios::binary);
        bad << "NOTADATASET";
    }
    CHECK_THROWS_AS(load_dataset(dir / "bad.bin"), Error);
    CHECK_THROWS_AS(load_dataset(dir / "missing.bin"), Error);
    std::filesystem::remove_all(dir);
}

TEST_CASE("dataset validation rejects bad labels") {
    auto d = two_blobs(10);
    d.train.labels[0] = 5;
    CHECK_THROWS_AS(validate_dataset(d), Error);
}
