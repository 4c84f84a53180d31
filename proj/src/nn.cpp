#include "dcf/nn.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace dcf::nn {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// C (n x p) = or += A (n x m) * B (m x p), all row-major. The k-loop order is
// fixed per output element, so results for one row never depend on what else
// is in the batch.
void gemm(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
          std::size_t p, bool accumulate) {
    if (!accumulate) std::fill(c, c + n * p, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        double* crow = c + i * p;
        for (std::size_t k = 0; k < m; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            const double* brow = b + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

// C (n x p) += A (n x m) * B^T where B is (p x m).
void gemm_bt(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t p) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        double* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) {
            const double* brow = b + j * m;
            double acc = 0.0;
            for (std::size_t k = 0; k < m; ++k) acc += arow[k] * brow[k];
            crow[j] += acc;
        }
    }
}

// C (m x p) += A^T * B where A is (n x m), B is (n x p).
void gemm_at(const double* a, const double* b, double* c, std::size_t n, std::size_t m,
             std::size_t p) {
    for (std::size_t i = 0; i < n; ++i) {
        const double* arow = a + i * m;
        const double* brow = b + i * p;
        for (std::size_t k = 0; k < m; ++k) {
            const double av = arow[k];
            if (av == 0.0) continue;
            double* crow = c + k * p;
            for (std::size_t j = 0; j < p; ++j) crow[j] += av * brow[j];
        }
    }
}

void add_bias(double* c, const double* bias, std::size_t n, std::size_t p) {
    for (std::size_t i = 0; i < n; ++i) {
        double* crow = c + i * p;
        for (std::size_t j = 0; j < p; ++j) crow[j] += bias[j];
    }
}

double apply_activation(Activation a, double x) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::ReLU: return x > 0.0 ? x : 0.0;
        case Activation::Sigmoid: return sigmoid(x);
    }
    return x;
}

// Derivative in terms of pre-activation x and activation value y.
double activation_grad(Activation a, double x, double y) {
    switch (a) {
        case Activation::Identity: return 1.0;
        case Activation::ReLU: return x > 0.0 ? 1.0 : 0.0;
        case Activation::Sigmoid: return y * (1.0 - y);
    }
    return 1.0;
}

std::size_t layout_size(const std::vector<WeightEntry>& layout) {
    std::size_t total = 0;
    for (const auto& e : layout) total += static_cast<std::size_t>(e.rows) * e.cols;
    return total;
}

void push_entry(std::vector<WeightEntry>& layout, std::size_t& offset, std::string name,
                int rows, int cols) {
    layout.push_back({std::move(name), rows, cols, offset});
    offset += static_cast<std::size_t>(rows) * cols;
}

void fill_glorot(std::span<double> w, int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    for (double& v : w) v = rng.uniform(-limit, limit);
}

}  // namespace

std::string to_string(Activation a) {
    switch (a) {
        case Activation::Identity: return "identity";
        case Activation::ReLU: return "relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "identity";
}

Activation parse_activation(std::string_view s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::ReLU;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw ConfigError("unknown activation '" + std::string(s) + "'");
}

void MlpSpec::validate() const {
    if (input_dim <= 0) throw ConfigError("mlp input_dim must be positive");
    if (output_dim <= 0) throw ConfigError("mlp output_dim must be positive");
    for (int h : hidden)
        if (h <= 0) throw ConfigError("mlp hidden widths must be positive");
}

std::vector<int> MlpSpec::dims() const {
    std::vector<int> d;
    d.push_back(input_dim);
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(output_dim);
    return d;
}

void LstmSpec::validate() const {
    if (input_channels <= 0) throw ConfigError("lstm input_channels must be positive");
    if (layers.empty()) throw ConfigError("lstm needs at least one layer");
    for (int u : layers)
        if (u <= 0) throw ConfigError("lstm layer widths must be positive");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("lstm dropout must be in [0, 1)");
    if (projection < 0) throw ConfigError("lstm projection width must be >= 0");
}

std::span<double> Weights::slice(std::string_view name) {
    const WeightEntry& e = entry(name);
    return {data.data() + e.offset, static_cast<std::size_t>(e.rows) * e.cols};
}

std::span<const double> Weights::slice(std::string_view name) const {
    const WeightEntry& e = entry(name);
    return {data.data() + e.offset, static_cast<std::size_t>(e.rows) * e.cols};
}

const WeightEntry& Weights::entry(std::string_view name) const {
    for (const auto& e : layout)
        if (e.name == name) return e;
    throw std::out_of_range("no weight entry named '" + std::string(name) + "'");
}

std::vector<WeightEntry> mlp_layout(const MlpSpec& spec) {
    spec.validate();
    std::vector<WeightEntry> layout;
    std::size_t offset = 0;
    const std::vector<int> d = spec.dims();
    for (std::size_t l = 0; l + 1 < d.size(); ++l) {
        const std::string id = "dense" + std::to_string(l);
        push_entry(layout, offset, id + ".W", d[l], d[l + 1]);
        push_entry(layout, offset, id + ".b", d[l + 1], 1);
    }
    return layout;
}

std::vector<WeightEntry> lstm_layout(const LstmSpec& spec) {
    spec.validate();
    std::vector<WeightEntry> layout;
    std::size_t offset = 0;
    int in = spec.input_channels;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const int u = spec.layers[l];
        const std::string id = "lstm" + std::to_string(l);
        push_entry(layout, offset, id + ".W", in, 4 * u);
        push_entry(layout, offset, id + ".U", u, 4 * u);
        push_entry(layout, offset, id + ".b", 4 * u, 1);
        in = u;
    }
    if (spec.projection > 0) {
        push_entry(layout, offset, "proj.W", in, spec.projection);
        push_entry(layout, offset, "proj.b", spec.projection, 1);
        in = spec.projection;
    }
    push_entry(layout, offset, "head.W", in, 1);
    push_entry(layout, offset, "head.b", 1, 1);
    return layout;
}

Weights init_weights(const MlpSpec& spec, std::uint64_t seed) {
    Weights w;
    w.layout = mlp_layout(spec);
    w.data.assign(layout_size(w.layout), 0.0);
    Rng rng(stage_seed(seed, "init", 0));
    for (const auto& e : w.layout) {
        if (e.cols == 1 && e.name.ends_with(".b")) continue;  // biases stay zero
        fill_glorot({w.data.data() + e.offset, static_cast<std::size_t>(e.rows) * e.cols},
                    e.rows, e.cols, rng);
    }
    return w;
}

Weights init_weights(const LstmSpec& spec, std::uint64_t seed) {
    Weights w;
    w.layout = lstm_layout(spec);
    w.data.assign(layout_size(w.layout), 0.0);
    Rng rng(stage_seed(seed, "init", 0));
    for (const auto& e : w.layout) {
        if (e.cols == 1 && e.name.ends_with(".b")) continue;
        fill_glorot({w.data.data() + e.offset, static_cast<std::size_t>(e.rows) * e.cols},
                    e.rows, e.cols, rng);
    }
    // Forget-gate biases start at 1 so early cell state is not flushed.
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const int u = spec.layers[l];
        auto b = w.slice("lstm" + std::to_string(l) + ".b");
        for (int j = u; j < 2 * u; ++j) b[j] = 1.0;
    }
    return w;
}

// ---------------------------------------------------------------------------
// MLP forward / backward
// ---------------------------------------------------------------------------

std::vector<double> mlp_forward(const MlpSpec& spec, const Weights& w,
                                std::span<const double> batch, std::size_t n,
                                MlpCache* cache) {
    spec.validate();
    const std::vector<int> d = spec.dims();
    if (w.data.size() != layout_size(mlp_layout(spec)))
        throw ConfigError("mlp weights do not match spec");
    if (batch.size() != n * static_cast<std::size_t>(spec.input_dim))
        throw ConfigError("mlp batch size is not n * input_dim");

    const std::size_t n_layers = d.size() - 1;
    std::vector<std::vector<double>> acts(n_layers + 1);
    std::vector<std::vector<double>> pre(n_layers);
    acts[0].assign(batch.begin(), batch.end());

    for (std::size_t l = 0; l < n_layers; ++l) {
        const std::string id = "dense" + std::to_string(l);
        auto W = w.slice(id + ".W");
        auto b = w.slice(id + ".b");
        const std::size_t out = static_cast<std::size_t>(d[l + 1]);
        pre[l].assign(n * out, 0.0);
        gemm(acts[l].data(), W.data(), pre[l].data(), n, d[l], out, false);
        add_bias(pre[l].data(), b.data(), n, out);
        const Activation a =
            (l + 1 == n_layers) ? spec.output_activation : spec.hidden_activation;
        acts[l + 1].resize(n * out);
        for (std::size_t i = 0; i < n * out; ++i) acts[l + 1][i] = apply_activation(a, pre[l][i]);
    }

    std::vector<double> out = acts[n_layers];
    if (cache) {
        cache->n = n;
        cache->dims = d;
        cache->param_count = w.data.size();
        cache->acts = std::move(acts);
        cache->pre = std::move(pre);
    }
    return out;
}

std::vector<double> mlp_backward(const MlpSpec& spec, const Weights& w, const MlpCache& cache,
                                 std::span<const double> dpred) {
    const std::vector<int> d = spec.dims();
    if (cache.dims != d || cache.param_count != w.data.size())
        throw ConfigError("mlp cache does not match spec/weights");
    const std::size_t n = cache.n;
    if (dpred.size() != n * static_cast<std::size_t>(spec.output_dim))
        throw ConfigError("mlp loss gradient size is not n * output_dim");

    std::vector<double> grads(w.data.size(), 0.0);
    const std::size_t n_layers = d.size() - 1;

    std::vector<double> delta(dpred.begin(), dpred.end());
    for (std::size_t l = n_layers; l-- > 0;) {
        const std::size_t out = static_cast<std::size_t>(d[l + 1]);
        const Activation a =
            (l + 1 == n_layers) ? spec.output_activation : spec.hidden_activation;
        for (std::size_t i = 0; i < n * out; ++i)
            delta[i] *= activation_grad(a, cache.pre[l][i], cache.acts[l + 1][i]);

        const std::string id = "dense" + std::to_string(l);
        const WeightEntry& we = w.entry(id + ".W");
        const WeightEntry& be = w.entry(id + ".b");
        gemm_at(cache.acts[l].data(), delta.data(), grads.data() + we.offset, n, d[l], out);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < out; ++j) grads[be.offset + j] += delta[i * out + j];

        if (l > 0) {
            std::vector<double> below(n * static_cast<std::size_t>(d[l]), 0.0);
            gemm_bt(delta.data(), w.data.data() + we.offset, below.data(), n, out, d[l]);
            delta = std::move(below);
        }
    }
    return grads;
}

// ---------------------------------------------------------------------------
// LSTM forward / backward
// ---------------------------------------------------------------------------

std::vector<double> lstm_forward(const LstmSpec& spec, const Weights& w,
                                 std::span<const double> batch, std::size_t n, int steps,
                                 const DropoutPlan& dropout, LstmCache* cache) {
    spec.validate();
    if (steps <= 0) throw ConfigError("lstm steps must be positive");
    if (w.data.size() != layout_size(lstm_layout(spec)))
        throw ConfigError("lstm weights do not match spec");
    if (batch.size() != n * static_cast<std::size_t>(steps) * spec.input_channels)
        throw ConfigError("lstm batch size is not n * steps * input_channels");

    const std::size_t T = static_cast<std::size_t>(steps);
    const bool use_dropout = dropout.training && spec.dropout > 0.0;
    const double keep = 1.0 - spec.dropout;

    LstmCache local;
    LstmCache& cc = cache ? *cache : local;
    cc.n = n;
    cc.steps = steps;
    cc.param_count = w.data.size();
    cc.layers.assign(spec.layers.size(), {});

    // Post-dropout outputs of the layer below, fed into the current layer.
    std::vector<std::vector<double>> below(T);
    for (std::size_t t = 0; t < T; ++t) {
        below[t].resize(n * static_cast<std::size_t>(spec.input_channels));
        for (std::size_t s = 0; s < n; ++s)
            for (int ch = 0; ch < spec.input_channels; ++ch)
                below[t][s * spec.input_channels + ch] =
                    batch[(s * T + t) * spec.input_channels + ch];
    }

    int in = spec.input_channels;
    for (std::size_t l = 0; l < spec.layers.size(); ++l) {
        const int u = spec.layers[l];
        const std::string id = "lstm" + std::to_string(l);
        auto W = w.slice(id + ".W");
        auto U = w.slice(id + ".U");
        auto b = w.slice(id + ".b");

        LstmLayerCache& lc = cc.layers[l];
        lc.in = in;
        lc.units = u;
        lc.x = below;
        lc.h.assign(T + 1, std::vector<double>(n * static_cast<std::size_t>(u), 0.0));
        lc.c.assign(T + 1, std::vector<double>(n * static_cast<std::size_t>(u), 0.0));
        lc.gates.assign(T, {});
        lc.tanh_c.assign(T, {});

        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> z(n * static_cast<std::size_t>(4 * u), 0.0);
            gemm(lc.x[t].data(), W.data(), z.data(), n, in, 4 * u, false);
            gemm(lc.h[t].data(), U.data(), z.data(), n, u, 4 * u, true);
            add_bias(z.data(), b.data(), n, 4 * u);

            lc.gates[t].resize(z.size());
            lc.tanh_c[t].resize(n * static_cast<std::size_t>(u));
            for (std::size_t s = 0; s < n; ++s) {
                const double* zs = z.data() + s * 4 * u;
                double* gs = lc.gates[t].data() + s * 4 * u;
                const double* cprev = lc.c[t].data() + s * u;
                double* cnow = lc.c[t + 1].data() + s * u;
                double* hnow = lc.h[t + 1].data() + s * u;
                double* tcs = lc.tanh_c[t].data() + s * u;
                for (int j = 0; j < u; ++j) {
                    const double gi = sigmoid(zs[j]);
                    const double gf = sigmoid(zs[u + j]);
                    const double gg = std::tanh(zs[2 * u + j]);
                    const double go = sigmoid(zs[3 * u + j]);
                    gs[j] = gi;
                    gs[u + j] = gf;
                    gs[2 * u + j] = gg;
                    gs[3 * u + j] = go;
                    cnow[j] = gf * cprev[j] + gi * gg;
                    tcs[j] = std::tanh(cnow[j]);
                    hnow[j] = go * tcs[j];
                }
            }
        }

        // Prepare input for the next layer (or the head): dropout applies to
        // the outputs of every stacked layer except the top one.
        const bool mask_here = use_dropout && l + 1 < spec.layers.size();
        if (mask_here) {
            Rng mask_rng(stage_seed(dropout.seed, "dropout", l));
            lc.mask.assign(T, std::vector<double>(n * static_cast<std::size_t>(u)));
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t i = 0; i < n * static_cast<std::size_t>(u); ++i)
                    lc.mask[t][i] = mask_rng.uniform() < keep ? 1.0 / keep : 0.0;
        }
        below.assign(T, {});
        for (std::size_t t = 0; t < T; ++t) {
            below[t] = lc.h[t + 1];
            if (mask_here)
                for (std::size_t i = 0; i < below[t].size(); ++i) below[t][i] *= lc.mask[t][i];
        }
        in = u;
    }

    // Head reads the final timestep of the top layer.
    std::vector<double> head_in = below[T - 1];
    if (spec.projection > 0) {
        auto W = w.slice("proj.W");
        auto b = w.slice("proj.b");
        cc.proj_pre.assign(n * static_cast<std::size_t>(spec.projection), 0.0);
        gemm(head_in.data(), W.data(), cc.proj_pre.data(), n, in, spec.projection, false);
        add_bias(cc.proj_pre.data(), b.data(), n, spec.projection);
        cc.proj_act.resize(cc.proj_pre.size());
        for (std::size_t i = 0; i < cc.proj_pre.size(); ++i)
            cc.proj_act[i] = cc.proj_pre[i] > 0.0 ? cc.proj_pre[i] : 0.0;
        cc.head_in = head_in;
        head_in = cc.proj_act;
        in = spec.projection;
    } else {
        cc.head_in = head_in;
    }

    auto Wh = w.slice("head.W");
    auto bh = w.slice("head.b");
    std::vector<double> pred(n);
    for (std::size_t s = 0; s < n; ++s) {
        double acc = bh[0];
        const double* row = head_in.data() + s * in;
        for (int k = 0; k < in; ++k) acc += row[k] * Wh[k];
        pred[s] = sigmoid(acc);
    }
    cc.pred = pred;
    return pred;
}

std::vector<double> lstm_backward(const LstmSpec& spec, const Weights& w, const LstmCache& cache,
                                  std::span<const double> dpred) {
    if (cache.param_count != w.data.size() || cache.layers.size() != spec.layers.size())
        throw ConfigError("lstm cache does not match spec/weights");
    const std::size_t n = cache.n;
    if (dpred.size() != n) throw ConfigError("lstm loss gradient size is not n");
    const std::size_t T = static_cast<std::size_t>(cache.steps);

    std::vector<double> grads(w.data.size(), 0.0);

    // Head (and optional projection) backward.
    const int top_u = spec.layers.back();
    const int head_in_dim = spec.projection > 0 ? spec.projection : top_u;
    const double* head_in =
        spec.projection > 0 ? cache.proj_act.data() : cache.head_in.data();

    std::vector<double> dsig(n);
    for (std::size_t s = 0; s < n; ++s)
        dsig[s] = dpred[s] * cache.pred[s] * (1.0 - cache.pred[s]);

    const WeightEntry& hwe = w.entry("head.W");
    const WeightEntry& hbe = w.entry("head.b");
    auto Wh = w.slice("head.W");
    std::vector<double> dhead(n * static_cast<std::size_t>(head_in_dim), 0.0);
    for (std::size_t s = 0; s < n; ++s) {
        grads[hbe.offset] += dsig[s];
        const double* row = head_in + s * head_in_dim;
        double* drow = dhead.data() + s * head_in_dim;
        for (int k = 0; k < head_in_dim; ++k) {
            grads[hwe.offset + k] += dsig[s] * row[k];
            drow[k] = dsig[s] * Wh[k];
        }
    }

    // Gradient flowing into the top layer's final-step (post-dropout) output.
    std::vector<double> dtop(n * static_cast<std::size_t>(top_u), 0.0);
    if (spec.projection > 0) {
        std::vector<double> dproj = std::move(dhead);
        for (std::size_t i = 0; i < dproj.size(); ++i)
            if (cache.proj_pre[i] <= 0.0) dproj[i] = 0.0;
        const WeightEntry& pwe = w.entry("proj.W");
        const WeightEntry& pbe = w.entry("proj.b");
        gemm_at(cache.head_in.data(), dproj.data(), grads.data() + pwe.offset, n, top_u,
                spec.projection);
        for (std::size_t s = 0; s < n; ++s)
            for (int j = 0; j < spec.projection; ++j)
                grads[pbe.offset + j] += dproj[s * spec.projection + j];
        gemm_bt(dproj.data(), w.data.data() + pwe.offset, dtop.data(), n, spec.projection,
                top_u);
    } else {
        dtop = std::move(dhead);
    }

    // dh_out[t]: gradient w.r.t. the post-dropout output of the current layer
    // at step t. For the top layer only the final step receives a signal.
    std::vector<std::vector<double>> dh_out(T);
    for (std::size_t t = 0; t < T; ++t)
        dh_out[t].assign(n * static_cast<std::size_t>(top_u), 0.0);
    dh_out[T - 1] = std::move(dtop);

    for (std::size_t l = spec.layers.size(); l-- > 0;) {
        const LstmLayerCache& lc = cache.layers[l];
        const int u = lc.units;
        const int in = lc.in;
        const std::string id = "lstm" + std::to_string(l);
        const WeightEntry& we = w.entry(id + ".W");
        const WeightEntry& ue = w.entry(id + ".U");
        const WeightEntry& be = w.entry(id + ".b");

        // Undo this layer's output dropout scaling.
        if (!lc.mask.empty())
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t i = 0; i < dh_out[t].size(); ++i)
                    dh_out[t][i] *= lc.mask[t][i];

        std::vector<std::vector<double>> dx(T);
        for (std::size_t t = 0; t < T; ++t)
            dx[t].assign(n * static_cast<std::size_t>(in), 0.0);

        std::vector<double> dh_next(n * static_cast<std::size_t>(u), 0.0);
        std::vector<double> dc_next(n * static_cast<std::size_t>(u), 0.0);
        std::vector<double> dz(n * static_cast<std::size_t>(4 * u));

        for (std::size_t t = T; t-- > 0;) {
            for (std::size_t s = 0; s < n; ++s) {
                const double* gs = lc.gates[t].data() + s * 4 * u;
                const double* tcs = lc.tanh_c[t].data() + s * u;
                const double* cprev = lc.c[t].data() + s * u;
                const double* dho = dh_out[t].data() + s * u;
                double* dhn = dh_next.data() + s * u;
                double* dcn = dc_next.data() + s * u;
                double* dzs = dz.data() + s * 4 * u;
                for (int j = 0; j < u; ++j) {
                    const double gi = gs[j], gf = gs[u + j], gg = gs[2 * u + j],
                                 go = gs[3 * u + j];
                    const double dh = dho[j] + dhn[j];
                    const double dc = dcn[j] + dh * go * (1.0 - tcs[j] * tcs[j]);
                    dzs[j] = dc * gg * gi * (1.0 - gi);
                    dzs[u + j] = dc * cprev[j] * gf * (1.0 - gf);
                    dzs[2 * u + j] = dc * gi * (1.0 - gg * gg);
                    dzs[3 * u + j] = dh * tcs[j] * go * (1.0 - go);
                    dcn[j] = dc * gf;  // carried to step t-1
                }
            }
            gemm_at(lc.x[t].data(), dz.data(), grads.data() + we.offset, n, in, 4 * u);
            gemm_at(lc.h[t].data(), dz.data(), grads.data() + ue.offset, n, u, 4 * u);
            for (std::size_t s = 0; s < n; ++s)
                for (int j = 0; j < 4 * u; ++j) grads[be.offset + j] += dz[s * 4 * u + j];
            gemm_bt(dz.data(), w.data.data() + we.offset, dx[t].data(), n, 4 * u, in);
            std::fill(dh_next.begin(), dh_next.end(), 0.0);
            gemm_bt(dz.data(), w.data.data() + ue.offset, dh_next.data(), n, 4 * u, u);
        }

        if (l > 0) dh_out = std::move(dx);  // becomes the layer below's output gradient
    }
    return grads;
}

// ---------------------------------------------------------------------------
// Loss and optimizer
// ---------------------------------------------------------------------------

LossResult mse_loss(std::span<const double> pred, std::span<const double> target) {
    if (pred.size() != target.size() || pred.empty())
        throw ConfigError("mse_loss needs equally sized non-empty prediction/target");
    LossResult r;
    r.grad.resize(pred.size());
    const double inv_n = 1.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double diff = pred[i] - target[i];
        r.value += diff * diff * inv_n;
        r.grad[i] = 2.0 * diff * inv_n;
    }
    return r;
}

void OptimizerSpec::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (batch_size <= 0) throw ConfigError("batch_size must be positive");
    if (epochs <= 0) throw ConfigError("epochs must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
        throw ConfigError("adam betas must be in [0, 1)");
    if (epsilon <= 0.0) throw ConfigError("adam epsilon must be positive");
}

OptimizerState make_optimizer(const OptimizerSpec& spec, std::size_t n_params) {
    spec.validate();
    OptimizerState st;
    st.spec = spec;
    if (spec.kind == OptimizerKind::Adam) {
        st.m.assign(n_params, 0.0);
        st.v.assign(n_params, 0.0);
    }
    return st;
}

void optimizer_step(OptimizerState& state, Weights& w, std::span<const double> grads) {
    if (grads.size() != w.data.size())
        throw ConfigError("gradient size does not match parameter count");
    for (double g : grads)
        if (!std::isfinite(g)) throw DivergenceError("divergence detected", -1, -1);

    const OptimizerSpec& s = state.spec;
    if (s.kind == OptimizerKind::SGD) {
        for (std::size_t i = 0; i < grads.size(); ++i) w.data[i] -= s.learning_rate * grads[i];
        ++state.step;
        return;
    }
    ++state.step;
    const double b1t = 1.0 - std::pow(s.beta1, static_cast<double>(state.step));
    const double b2t = 1.0 - std::pow(s.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < grads.size(); ++i) {
        state.m[i] = s.beta1 * state.m[i] + (1.0 - s.beta1) * grads[i];
        state.v[i] = s.beta2 * state.v[i] + (1.0 - s.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / b1t;
        const double vhat = state.v[i] / b2t;
        w.data[i] -= s.learning_rate * mhat / (std::sqrt(vhat) + s.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string spec_to_json(const NetworkSpec& spec) {
    nlohmann::json j;
    if (const auto* m = std::get_if<MlpSpec>(&spec)) {
        j["kind"] = "mlp";
        j["input_dim"] = m->input_dim;
        j["hidden"] = m->hidden;
        j["hidden_activation"] = to_string(m->hidden_activation);
        j["output_dim"] = m->output_dim;
        j["output_activation"] = to_string(m->output_activation);
    } else {
        const auto& l = std::get<LstmSpec>(spec);
        j["kind"] = "lstm";
        j["input_channels"] = l.input_channels;
        j["layers"] = l.layers;
        j["dropout"] = l.dropout;
        j["projection"] = l.projection;
    }
    return j.dump();
}

NetworkSpec spec_from_json(const std::string& json) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad network spec descriptor: ") + e.what());
    }
    const std::string kind = j.value("kind", "");
    try {
        if (kind == "mlp") {
            MlpSpec m;
            m.input_dim = j.at("input_dim").get<int>();
            m.hidden = j.at("hidden").get<std::vector<int>>();
            m.hidden_activation = parse_activation(j.at("hidden_activation").get<std::string>());
            m.output_dim = j.at("output_dim").get<int>();
            m.output_activation = parse_activation(j.at("output_activation").get<std::string>());
            m.validate();
            return m;
        }
        if (kind == "lstm") {
            LstmSpec l;
            l.input_channels = j.at("input_channels").get<int>();
            l.layers = j.at("layers").get<std::vector<int>>();
            l.dropout = j.at("dropout").get<double>();
            l.projection = j.at("projection").get<int>();
            l.validate();
            return l;
        }
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("bad network spec descriptor: ") + e.what());
    }
    throw DataError("bad network spec descriptor: unknown kind '" + kind + "'");
}

namespace {

constexpr char kWeightsMagic[5] = {'D', 'C', 'F', 'N', '1'};

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;
    const std::string& path;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw DataError(path + ": truncated weight file");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

}  // namespace

void save_weights(const std::string& path, const NetworkSpec& spec, const Weights& w) {
    const std::vector<WeightEntry> expected = std::holds_alternative<MlpSpec>(spec)
                                                  ? mlp_layout(std::get<MlpSpec>(spec))
                                                  : lstm_layout(std::get<LstmSpec>(spec));
    if (w.layout != expected || w.data.size() != layout_size(expected))
        throw ConfigError("weights do not match the spec being saved");

    const std::string desc = spec_to_json(spec);
    std::string out;
    out.append(kWeightsMagic, sizeof(kWeightsMagic));
    put_u32(out, static_cast<std::uint32_t>(desc.size()));
    out.append(desc);
    put_u64(out, w.data.size());
    for (double v : w.data) put_f64(out, v);

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError(path + ": cannot open for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw DataError(path + ": write failed");
}

LoadedNetwork load_network(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError(path + ": cannot open weight file");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf, 0, path};
    r.need(sizeof(kWeightsMagic));
    if (std::memcmp(buf.data(), kWeightsMagic, sizeof(kWeightsMagic)) != 0)
        throw DataError(path + ": not a weight file (bad magic)");
    r.pos = sizeof(kWeightsMagic);

    const std::uint32_t desc_len = r.u32();
    r.need(desc_len);
    const std::string desc = buf.substr(r.pos, desc_len);
    r.pos += desc_len;

    LoadedNetwork net;
    net.spec = spec_from_json(desc);
    net.weights.layout = std::holds_alternative<MlpSpec>(net.spec)
                             ? mlp_layout(std::get<MlpSpec>(net.spec))
                             : lstm_layout(std::get<LstmSpec>(net.spec));

    const std::uint64_t count = r.u64();
    if (count != layout_size(net.weights.layout))
        throw DataError(path + ": parameter count does not match spec descriptor");
    net.weights.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) net.weights.data[i] = r.f64();
    if (r.pos != buf.size()) throw DataError(path + ": trailing bytes after parameter block");
    return net;
}

void require_compatible(const NetworkSpec& loaded, const NetworkSpec& expected,
                        const std::string& context) {
    if (spec_to_json(loaded) != spec_to_json(expected))
        throw ConfigError(context + ": incompatible network spec (file has " +
                          spec_to_json(loaded) + ", expected " + spec_to_json(expected) + ")");
}

std::uint64_t mlp_macs(const MlpSpec& spec) {
    spec.validate();
    const std::vector<int> d = spec.dims();
    std::uint64_t total = 0;
    for (std::size_t l = 0; l + 1 < d.size(); ++l)
        total += static_cast<std::uint64_t>(d[l]) * static_cast<std::uint64_t>(d[l + 1]);
    return total;
}

std::uint64_t lstm_macs(const LstmSpec& spec, int steps) {
    spec.validate();
    if (steps <= 0) throw ConfigError("lstm steps must be positive");
    std::uint64_t total = 0;
    std::uint64_t in = static_cast<std::uint64_t>(spec.input_channels);
    for (int u : spec.layers) {
        const std::uint64_t uu = static_cast<std::uint64_t>(u);
        total += static_cast<std::uint64_t>(steps) * 4 * uu * (in + uu);
        in = uu;
    }
    if (spec.projection > 0) {
        total += in * static_cast<std::uint64_t>(spec.projection);
        in = static_cast<std::uint64_t>(spec.projection);
    }
    total += in;  // head dense to a single output
    return total;
}

}  // namespace dcf::nn
