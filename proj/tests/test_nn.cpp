// Networks: initialization, forward oracles, gradients, optimizer, files.
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <variant>
#include <vector>

#include "dcf/common.hpp"
#include "dcf/nn.hpp"

using namespace dcf;
using namespace dcf::nn;

namespace {

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Central-difference gradient of mse(forward(w), target) w.r.t. every weight.
template <typename Forward>
std::vector<double> fd_gradient(Weights& w, const Forward& fwd,
                                const std::vector<double>& target, double h) {
    std::vector<double> g(w.data.size());
    for (std::size_t i = 0; i < w.data.size(); ++i) {
        const double keep = w.data[i];
        w.data[i] = keep + h;
        const double up = mse_loss(fwd(w), target).value;
        w.data[i] = keep - h;
        const double dn = mse_loss(fwd(w), target).value;
        w.data[i] = keep;
        g[i] = (up - dn) / (2.0 * h);
    }
    return g;
}

double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({std::abs(a[i]), std::abs(b[i]), 1e-6});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

std::vector<double> random_batch(Rng& rng, std::size_t n) {
    std::vector<double> xs(n);
    for (double& x : xs) x = rng.uniform(-1.5, 1.5);
    return xs;
}

}  // namespace

TEST_CASE("weight initialization is deterministic in the seed") {
    MlpSpec spec;
    Weights a = init_weights(spec, 11);
    Weights b = init_weights(spec, 11);
    CHECK(a.data == b.data);
    CHECK(a.layout == b.layout);
    Weights c = init_weights(spec, 12);
    CHECK(a.data != c.data);

    LstmSpec lspec;
    lspec.layers = {8, 4};
    Weights la = init_weights(lspec, 3);
    Weights lb = init_weights(lspec, 3);
    CHECK(la.data == lb.data);

    // Biases start at zero except the LSTM forget gate, which starts at 1.
    auto b0 = la.slice("lstm0.b");
    for (int j = 0; j < 8; ++j) {
        CHECK(b0[static_cast<std::size_t>(j)] == 0.0);            // input gate
        CHECK(b0[static_cast<std::size_t>(8 + j)] == 1.0);        // forget gate
        CHECK(b0[static_cast<std::size_t>(2 * 8 + j)] == 0.0);    // candidate
        CHECK(b0[static_cast<std::size_t>(3 * 8 + j)] == 0.0);    // output gate
    }
    auto db = a.slice("dense0.b");
    for (double v : db) CHECK(v == 0.0);
}

TEST_CASE("all-zero weights produce 0.5 through the sigmoid head") {
    MlpSpec spec;
    spec.input_dim = 6;
    spec.hidden = {5};
    Weights w = init_weights(spec, 1);
    for (double& v : w.data) v = 0.0;
    Rng rng(21);
    auto batch = random_batch(rng, 12);
    auto out = mlp_forward(spec, w, batch, 2);
    REQUIRE(out.size() == 2);
    CHECK(out[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(out[1] == doctest::Approx(0.5).epsilon(1e-15));

    LstmSpec lspec;
    lspec.layers = {4};
    Weights lw = init_weights(lspec, 1);
    for (double& v : lw.data) v = 0.0;
    auto lbatch = random_batch(rng, 2 * 10 * 3);
    auto lout = lstm_forward(lspec, lw, lbatch, 2, 10);
    CHECK(lout[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(lout[1] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("hand-computed two-layer MLP fixture") {
    MlpSpec spec;
    spec.input_dim = 2;
    spec.hidden = {2};
    Weights w = init_weights(spec, 0);
    // dense0.W is (in, out) row-major: pre_j = sum_i x_i W[i*out+j] + b_j.
    auto W0 = w.slice("dense0.W");
    auto b0 = w.slice("dense0.b");
    auto W1 = w.slice("dense1.W");
    auto b1 = w.slice("dense1.b");
    W0[0] = 1.0; W0[1] = 0.0;   // x0 -> h0, h1
    W0[2] = 0.0; W0[3] = -1.0;  // x1 -> h0, h1
    b0[0] = 0.5; b0[1] = 0.5;
    W1[0] = 1.0; W1[1] = 1.0;
    b1[0] = -0.5;

    const std::vector<double> x{1.0, 2.0};
    auto out = mlp_forward(spec, w, x, 1);
    // pre-hidden = (1.5, -1.5) -> ReLU (1.5, 0) -> head pre = 1.0 -> sigmoid.
    CHECK(out[0] == doctest::Approx(sig(1.0)).epsilon(1e-15));
}

TEST_CASE("one-cell LSTM matches an independent scalar trace") {
    LstmSpec spec;
    spec.input_channels = 1;
    spec.layers = {1};
    spec.dropout = 0.0;
    Weights w = init_weights(spec, 0);
    // Gate order in every 4u block is [i f g o].
    const double wx_i = 0.5, wx_f = 0.4, wx_g = 0.3, wx_o = 0.2;
    const double uh_i = 0.1, uh_f = -0.1, uh_g = 0.2, uh_o = 0.3;
    const double b_i = 0.01, b_f = 1.0, b_g = -0.02, b_o = 0.05;
    {
        auto W = w.slice("lstm0.W");
        W[0] = wx_i; W[1] = wx_f; W[2] = wx_g; W[3] = wx_o;
        auto U = w.slice("lstm0.U");
        U[0] = uh_i; U[1] = uh_f; U[2] = uh_g; U[3] = uh_o;
        auto b = w.slice("lstm0.b");
        b[0] = b_i; b[1] = b_f; b[2] = b_g; b[3] = b_o;
        w.slice("head.W")[0] = 1.2;
        w.slice("head.b")[0] = -0.1;
    }

    const std::vector<double> xs{0.3, -0.5, 0.8};
    auto out = lstm_forward(spec, w, xs, 1, 3);

    // Scalar re-derivation, written without the library's helpers.
    double h = 0.0, c = 0.0;
    for (double x : xs) {
        const double i_g = sig(wx_i * x + uh_i * h + b_i);
        const double f_g = sig(wx_f * x + uh_f * h + b_f);
        const double g_g = std::tanh(wx_g * x + uh_g * h + b_g);
        const double o_g = sig(wx_o * x + uh_o * h + b_o);
        c = f_g * c + i_g * g_g;
        h = o_g * std::tanh(c);
    }
    const double expect = sig(1.2 * h - 0.1);
    CHECK(out[0] == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("dropout: zero rate equals disabled, masks are seed-stable") {
    LstmSpec off;
    off.layers = {6, 5};
    off.dropout = 0.0;
    LstmSpec on = off;
    on.dropout = 0.4;

    Weights w = init_weights(off, 5);  // same layout for both specs
    Rng rng(31);
    auto batch = random_batch(rng, 4 * 10 * 3);

    DropoutPlan train{true, 77};
    auto a = lstm_forward(off, w, batch, 4, 10, train);
    auto b = lstm_forward(off, w, batch, 4, 10, DropoutPlan{});
    CHECK(a == b);  // dropout 0 in training == inference

    auto c1 = lstm_forward(on, w, batch, 4, 10, train);
    auto c2 = lstm_forward(on, w, batch, 4, 10, train);
    CHECK(c1 == c2);  // same plan -> same masks
    auto c3 = lstm_forward(on, w, batch, 4, 10, DropoutPlan{true, 78});
    CHECK(c1 != c3);  // different seed -> different masks
    auto c4 = lstm_forward(on, w, batch, 4, 10, DropoutPlan{false, 77});
    CHECK(c4 == b);  // inference ignores dropout entirely
}

TEST_CASE("mlp analytic gradient matches central differences") {
    Rng rng(41);
    for (int trial = 0; trial < 4; ++trial) {
        MlpSpec spec;
        spec.input_dim = 3 + static_cast<int>(rng.uniform_int(5));
        spec.hidden = {3 + static_cast<int>(rng.uniform_int(4)),
                       2 + static_cast<int>(rng.uniform_int(4))};
        const std::size_t n = 3;
        Weights w = init_weights(spec, 50 + static_cast<std::uint64_t>(trial));
        auto batch = random_batch(rng, n * static_cast<std::size_t>(spec.input_dim));
        std::vector<double> target{0.2, 0.7, 0.4};

        MlpCache cache;
        auto pred = mlp_forward(spec, w, batch, n, &cache);
        auto loss = mse_loss(pred, target);
        auto analytic = mlp_backward(spec, w, cache, loss.grad);
        auto fd = fd_gradient(
            w, [&](const Weights& ww) { return mlp_forward(spec, ww, batch, n); }, target, 1e-5);
        CHECK(max_rel_err(analytic, fd) < 1e-4);
    }
}

TEST_CASE("lstm analytic gradient matches central differences") {
    Rng rng(42);
    for (int trial = 0; trial < 3; ++trial) {
        LstmSpec spec;
        spec.layers = {3 + static_cast<int>(rng.uniform_int(3)),
                       2 + static_cast<int>(rng.uniform_int(3))};
        spec.projection = (trial == 1) ? 3 : 0;
        spec.dropout = (trial == 2) ? 0.3 : 0.0;
        const std::size_t n = 2;
        const int steps = 5;
        Weights w = init_weights(spec, 60 + static_cast<std::uint64_t>(trial));
        auto batch = random_batch(rng, n * steps * 3);
        std::vector<double> target{0.3, 0.6};
        DropoutPlan plan{spec.dropout > 0.0, 123};

        LstmCache cache;
        auto pred = lstm_forward(spec, w, batch, n, steps, plan, &cache);
        auto loss = mse_loss(pred, target);
        auto analytic = lstm_backward(spec, w, cache, loss.grad);
        auto fd = fd_gradient(
            w,
            [&](const Weights& ww) { return lstm_forward(spec, ww, batch, n, steps, plan); },
            target, 1e-5);
        CHECK(max_rel_err(analytic, fd) < 1e-4);
    }
}

TEST_CASE("mse loss fixture with gradient") {
    std::vector<double> pred{0.5, 0.8};
    std::vector<double> target{0.0, 1.0};
    auto r = mse_loss(pred, target);
    CHECK(r.value == doctest::Approx(0.145).epsilon(1e-15));
    REQUIRE(r.grad.size() == 2);
    CHECK(r.grad[0] == doctest::Approx(0.5).epsilon(1e-15));   // 2*(0.5-0)/2
    CHECK(r.grad[1] == doctest::Approx(-0.2).epsilon(1e-15));  // 2*(0.8-1)/2
}

TEST_CASE("sgd step: w=1, g=2, lr=0.1 gives 0.8") {
    MlpSpec spec;
    spec.input_dim = 1;
    spec.hidden = {};
    Weights w = init_weights(spec, 0);
    REQUIRE(w.data.size() == 2);  // one kernel weight + one bias
    w.data[0] = 1.0;
    w.data[1] = 0.0;
    OptimizerSpec opt;
    opt.kind = OptimizerKind::SGD;
    opt.learning_rate = 0.1;
    OptimizerState st = make_optimizer(opt, w.data.size());
    std::vector<double> g{2.0, 0.0};
    optimizer_step(st, w, g);
    CHECK(w.data[0] == doctest::Approx(0.8).epsilon(1e-15));
    CHECK(w.data[1] == 0.0);
}

TEST_CASE("adam matches a textbook reference and ignores zero gradients") {
    OptimizerSpec opt;  // Adam defaults: lr 0.01, beta 0.9/0.999, eps 1e-8
    const std::size_t n = 6;
    Weights w;
    w.data.assign(n, 0.5);
    OptimizerState st = make_optimizer(opt, n);

    // Reference state.
    std::vector<double> rw(n, 0.5), m(n, 0.0), v(n, 0.0);
    Rng rng(71);
    for (int step = 1; step <= 5; ++step) {
        std::vector<double> g(n);
        for (double& x : g) x = rng.uniform(-1.0, 1.0);
        optimizer_step(st, w, g);
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = opt.beta1 * m[i] + (1 - opt.beta1) * g[i];
            v[i] = opt.beta2 * v[i] + (1 - opt.beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(opt.beta1, step));
            const double vh = v[i] / (1 - std::pow(opt.beta2, step));
            rw[i] -= opt.learning_rate * mh / (std::sqrt(vh) + opt.epsilon);
        }
        for (std::size_t i = 0; i < n; ++i)
            CHECK(w.data[i] == doctest::Approx(rw[i]).epsilon(1e-12));
    }

    // Zero gradients move nothing from a fresh state.
    Weights w2;
    w2.data.assign(n, 0.25);
    OptimizerState st2 = make_optimizer(opt, n);
    std::vector<double> zeros(n, 0.0);
    optimizer_step(st2, w2, zeros);
    for (double x : w2.data) CHECK(x == 0.25);
}

TEST_CASE("non-finite gradients raise the divergence error") {
    OptimizerSpec opt;
    Weights w;
    w.data.assign(3, 0.1);
    OptimizerState st = make_optimizer(opt, 3);
    std::vector<double> g{0.0, std::nan(""), 0.0};
    CHECK_THROWS_AS(optimizer_step(st, w, g), DivergenceError);
    std::vector<double> inf{0.0, 0.0, std::numeric_limits<double>::infinity()};
    CHECK_THROWS_AS(optimizer_step(st, w, inf), DivergenceError);
}

TEST_CASE("weight files round-trip bit-exactly") {
    LstmSpec spec;
    spec.layers = {7, 3};
    spec.projection = 4;
    spec.dropout = 0.25;
    Weights w = init_weights(spec, 88);
    const std::string path =
        (std::filesystem::temp_directory_path() / "dcf_test_net.dcfn").string();
    save_weights(path, spec, w);
    LoadedNetwork back = load_network(path);
    REQUIRE(std::holds_alternative<LstmSpec>(back.spec));
    const LstmSpec& ls = std::get<LstmSpec>(back.spec);
    CHECK(ls.layers == spec.layers);
    CHECK(ls.projection == spec.projection);
    CHECK(ls.dropout == spec.dropout);
    CHECK(back.weights.data == w.data);  // bitwise
    CHECK(back.weights.layout == w.layout);
    std::filesystem::remove(path);

    MlpSpec mspec;
    Weights mw = init_weights(mspec, 3);
    save_weights(path, mspec, mw);
    LoadedNetwork mback = load_network(path);
    REQUIRE(std::holds_alternative<MlpSpec>(mback.spec));
    CHECK(mback.weights.data == mw.data);
    std::filesystem::remove(path);
}

TEST_CASE("spec json round-trips") {
    LstmSpec spec;
    spec.layers = {475, 61};
    spec.dropout = 0.3;
    NetworkSpec ns = spec;
    NetworkSpec back = spec_from_json(spec_to_json(ns));
    REQUIRE(std::holds_alternative<LstmSpec>(back));
    CHECK(std::get<LstmSpec>(back).layers == spec.layers);
}

TEST_CASE("mac counts match the closed-form values") {
    MlpSpec student;  // 30-60-60-1
    CHECK(mlp_macs(student) == 5460);
    LstmSpec teacher;  // (475, 61) over 10 steps of 3 channels
    CHECK(lstm_macs(teacher, 10) == 10389901);
    // Full-scale compression ratio exceeds two orders of magnitude.
    CHECK(static_cast<double>(lstm_macs(teacher, 10)) / static_cast<double>(mlp_macs(student)) >
          100.0);
    LstmSpec proj = teacher;
    proj.projection = 16;
    CHECK(lstm_macs(proj, 10) == 10389840 + 61 * 16 + 16);
}

TEST_CASE("forward validates shape mismatches") {
    MlpSpec spec;
    Weights w = init_weights(spec, 1);
    std::vector<double> bad(29, 0.0);
    CHECK_THROWS_AS(mlp_forward(spec, w, bad, 1), ConfigError);
    Weights wrong = w;
    wrong.data.pop_back();
    std::vector<double> good(30, 0.0);
    CHECK_THROWS_AS(mlp_forward(spec, wrong, good, 1), ConfigError);
}
