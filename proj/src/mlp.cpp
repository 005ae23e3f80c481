#include "sforge/mlp.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <string>

#include "sforge/errors.hpp"
#include "sforge/rng.hpp"

namespace sforge {

namespace {

// Dot product with independent partial sums so the loop vectorizes without
// reassociation flags; the summation order is fixed, hence reproducible.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    constexpr std::size_t W = 16;
    std::array<T, W> acc{};
    std::size_t i = 0;
    for (; i + W <= n; i += W) {
        for (std::size_t k = 0; k < W; ++k) acc[k] += a[i + k] * b[i + k];
    }
    T s = 0;
    for (std::size_t k = 0; k < W; ++k) s += acc[k];
    for (; i < n; ++i) s += a[i] * b[i];
    return s;
}

// Four dot products sharing the left operand.
template <typename T>
void dot4(const T* x, const T* w0, const T* w1, const T* w2, const T* w3, std::size_t n, T* out) {
    constexpr std::size_t W = 16;
    std::array<T, W> a0{}, a1{}, a2{}, a3{};
    std::size_t i = 0;
    for (; i + W <= n; i += W) {
        for (std::size_t k = 0; k < W; ++k) {
            const T xv = x[i + k];
            a0[k] += xv * w0[i + k];
            a1[k] += xv * w1[i + k];
            a2[k] += xv * w2[i + k];
            a3[k] += xv * w3[i + k];
        }
    }
    T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
    for (std::size_t k = 0; k < W; ++k) {
        s0 += a0[k];
        s1 += a1[k];
        s2 += a2[k];
        s3 += a3[k];
    }
    for (; i < n; ++i) {
        s0 += x[i] * w0[i];
        s1 += x[i] * w1[i];
        s2 += x[i] * w2[i];
        s3 += x[i] * w3[i];
    }
    out[0] = s0;
    out[1] = s1;
    out[2] = s2;
    out[3] = s3;
}

template <typename T>
void axpy(T* y, T alpha, const T* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

// z (batch x out) = in (batch x in_dim) W^T + bias
template <typename T>
void affine(const T* in, std::size_t batch, std::size_t in_dim, const T* w, const T* bias, std::size_t out_dim,
            T* z) {
    for (std::size_t b = 0; b < batch; ++b) {
        const T* x = in + b * in_dim;
        T* zb = z + b * out_dim;
        std::size_t k = 0;
        for (; k + 4 <= out_dim; k += 4) {
            dot4(x, w + k * in_dim, w + (k + 1) * in_dim, w + (k + 2) * in_dim, w + (k + 3) * in_dim, in_dim, zb + k);
        }
        for (; k < out_dim; ++k) zb[k] = dot(x, w + k * in_dim, in_dim);
        for (k = 0; k < out_dim; ++k) zb[k] += bias[k];
    }
}

template <typename T>
T gelu_t(T x) {
    return T(0.5) * x * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
}

template <typename T>
T gelu_derivative_t(T x) {
    const T cdf = T(0.5) * (T(1) + std::erf(x * T(std::numbers::sqrt2 / 2.0)));
    const T pdf = std::exp(T(-0.5) * x * x) * T(0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
    return cdf + x * pdf;
}

template <typename T>
std::size_t batch_rows(const BasicMlp<T>& model, std::span<const T> inputs) {
    const std::size_t n_i = model.spec.n_i;
    if (inputs.size() % n_i != 0) {
        throw DimensionError("input length " + std::to_string(inputs.size()) + " is not a multiple of n_i = " +
                             std::to_string(n_i));
    }
    return inputs.size() / n_i;
}

template <typename T>
void run_forward(const BasicMlp<T>& model, std::span<const T> inputs, std::size_t batch, MlpWorkspace<T>& ws) {
    const std::size_t n_layers = model.layers.size();
    ws.pre.resize(n_layers);
    ws.act.resize(n_layers - 1);
    const T* cur = inputs.data();
    for (std::size_t l = 0; l < n_layers; ++l) {
        const auto& shape = model.layers[l];
        ws.pre[l].resize(batch * shape.out);
        affine(cur, batch, shape.in, model.params.data() + shape.weight_offset, model.params.data() + shape.bias_offset,
               shape.out, ws.pre[l].data());
        if (l + 1 < n_layers) {
            ws.act[l].resize(ws.pre[l].size());
            std::transform(ws.pre[l].begin(), ws.pre[l].end(), ws.act[l].begin(), gelu_t<T>);
            cur = ws.act[l].data();
        }
    }
}

template <typename T>
void require_finite(std::span<const T> values, const char* what) {
    for (const T v : values) {
        if (!std::isfinite(v)) throw InvalidArgument(std::string(what) + " contains a non-finite value");
    }
}

template <typename T, typename U>
void put_le(std::ostream& os, U value) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(static_cast<T>(value));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    os.write(reinterpret_cast<const char*>(bits.data()), bits.size());
}

template <typename T>
T get_le(std::istream& is) {
    std::array<unsigned char, sizeof(T)> bits{};
    is.read(reinterpret_cast<char*>(bits.data()), bits.size());
    if (is.gcount() != static_cast<std::streamsize>(bits.size())) throw FormatError("truncated checkpoint");
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    return std::bit_cast<T>(bits);
}

constexpr std::array<char, 4> kCheckpointMagic{'S', 'F', 'M', 'C'};
constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void MlpSpec::validate() const {
    if (n_i < 1 || n_l < 1 || n_n < 1) throw InvalidArgument("MLP spec requires n_i, n_l, n_n >= 1");
}

std::uint64_t param_count(const MlpSpec& spec) {
    spec.validate();
    const std::uint64_t ni = spec.n_i, nl = spec.n_l, nn = spec.n_n;
    return nn * (ni + (nl - 1) * nn + 1 + nl) + 1;
}

double gelu(double x) { return gelu_t(x); }
double gelu_derivative(double x) { return gelu_derivative_t(x); }

std::vector<LayerShape> layer_shapes(const MlpSpec& spec) {
    spec.validate();
    std::vector<LayerShape> shapes;
    std::size_t offset = 0;
    std::size_t in = spec.n_i;
    for (std::size_t l = 0; l <= spec.n_l; ++l) {
        const std::size_t out = l < spec.n_l ? spec.n_n : 1;
        shapes.push_back({in, out, offset, offset + in * out});
        offset += in * out + out;
        in = out;
    }
    return shapes;
}

template <typename T>
BasicMlp<T>::BasicMlp(const MlpSpec& s) : spec(s), layers(layer_shapes(s)) {
    params.assign(layers.back().bias_offset + layers.back().out, T(0));
}

template <typename T>
void init_uniform_fan_in(BasicMlp<T>& model, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(model.layers[l].in));
        for (T& w : model.weights(l)) w = static_cast<T>(uniform(rng, -bound, bound));
        for (T& b : model.bias(l)) b = static_cast<T>(uniform(rng, -bound, bound));
    }
}

template <typename T>
T forward(const BasicMlp<T>& model, std::span<const T> input) {
    if (input.size() != model.spec.n_i) throw DimensionError("input length does not match n_i");
    require_finite(input, "input");
    MlpWorkspace<T> ws;
    T out{};
    forward_batch(model, input, std::span<T>(&out, 1), ws);
    return out;
}

template <typename T>
void forward_batch(const BasicMlp<T>& model, std::span<const T> inputs, std::span<T> out, MlpWorkspace<T>& ws) {
    const std::size_t batch = batch_rows(model, inputs);
    if (out.size() != batch) throw DimensionError("output span does not match the batch size");
    if (batch == 0) return;
    run_forward(model, inputs, batch, ws);
    std::copy(ws.pre.back().begin(), ws.pre.back().end(), out.begin());
}

template <typename T>
double loss_and_grad(const BasicMlp<T>& model, std::span<const T> inputs, std::span<const T> targets,
                     std::span<T> grad, MlpWorkspace<T>& ws) {
    const std::size_t batch = batch_rows(model, inputs);
    if (batch == 0) throw InvalidArgument("loss_and_grad needs a non-empty batch");
    if (targets.size() != batch) throw DimensionError("target count does not match the batch size");
    if (grad.size() != model.params.size()) throw DimensionError("gradient buffer does not match the model");

    run_forward(model, inputs, batch, ws);
    std::fill(grad.begin(), grad.end(), T(0));

    const auto& pred = ws.pre.back();
    ws.delta.resize(batch);
    double loss = 0.0;
    const T scale = T(2) / static_cast<T>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const T r = pred[b] - targets[b];
        loss += static_cast<double>(r) * static_cast<double>(r);
        ws.delta[b] = scale * r;
    }
    loss /= static_cast<double>(batch);

    for (std::size_t l = model.layers.size(); l-- > 0;) {
        const auto& shape = model.layers[l];
        const T* in = l == 0 ? inputs.data() : ws.act[l - 1].data();
        T* gw = grad.data() + shape.weight_offset;
        T* gb = grad.data() + shape.bias_offset;
        for (std::size_t b = 0; b < batch; ++b) {
            const T* x = in + b * shape.in;
            const T* d = ws.delta.data() + b * shape.out;
            for (std::size_t k = 0; k < shape.out; ++k) {
                if (d[k] != T(0)) axpy(gw + k * shape.in, d[k], x, shape.in);
                gb[k] += d[k];
            }
        }
        if (l == 0) break;

        const T* w = model.params.data() + shape.weight_offset;
        ws.delta_prev.assign(batch * shape.in, T(0));
        for (std::size_t b = 0; b < batch; ++b) {
            T* dp = ws.delta_prev.data() + b * shape.in;
            const T* d = ws.delta.data() + b * shape.out;
            for (std::size_t k = 0; k < shape.out; ++k) axpy(dp, d[k], w + k * shape.in, shape.in);
            const T* z = ws.pre[l - 1].data() + b * shape.in;
            for (std::size_t i = 0; i < shape.in; ++i) dp[i] *= gelu_derivative_t(z[i]);
        }
        ws.delta.swap(ws.delta_prev);
    }
    return loss;
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grad, AdamState<T>& state, double lr, const AdamHyper& hyper) {
    if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
        throw DimensionError("Adam state, gradient and parameters differ in size");
    }
    ++state.t;
    const double bc1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(state.t));
    const T b1 = static_cast<T>(hyper.beta1);
    const T b2 = static_cast<T>(hyper.beta2);
    const T step = static_cast<T>(lr / bc1);
    const T inv_bc2 = static_cast<T>(1.0 / bc2);
    const T eps = static_cast<T>(hyper.eps);
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = grad[i];
        state.m[i] = b1 * state.m[i] + (T(1) - b1) * g;
        state.v[i] = b2 * state.v[i] + (T(1) - b2) * g * g;
        params[i] -= step * state.m[i] / (std::sqrt(state.v[i] * inv_bc2) + eps);
    }
}

double TrainConfig::learning_rate(std::size_t epoch) const {
    return lr0 * std::pow(lr_decay, static_cast<double>(epoch));
}

void TrainConfig::validate() const {
    if (!(lr0 > 0.0) || !(lr_decay > 0.0)) throw InvalidArgument("learning rate and decay must be positive");
    if (max_epochs < 1 || batch_size < 1) throw InvalidArgument("max_epochs and batch_size must be >= 1");
}

template <typename T>
double evaluate(const BasicMlp<T>& model, std::span<const T> inputs, std::span<const T> targets) {
    const std::size_t n = batch_rows(model, inputs);
    if (targets.size() != n) throw DimensionError("target count does not match the input rows");
    if (n == 0) throw InvalidArgument("cannot evaluate on an empty set");
    constexpr std::size_t kChunk = 256;
    MlpWorkspace<T> ws;
    std::vector<T> pred(kChunk);
    double sum = 0.0;
    for (std::size_t start = 0; start < n; start += kChunk) {
        const std::size_t rows = std::min(kChunk, n - start);
        forward_batch(model, inputs.subspan(start * model.spec.n_i, rows * model.spec.n_i),
                      std::span<T>(pred).first(rows), ws);
        for (std::size_t r = 0; r < rows; ++r) {
            const double e = static_cast<double>(pred[r]) - static_cast<double>(targets[start + r]);
            sum += e * e;
        }
    }
    return sum / static_cast<double>(n);
}

double evaluate(const MlpModel& model, const RegressionData& data) {
    return evaluate<float>(model, data.inputs, data.targets);
}

TrainResult train(const MlpSpec& spec, const RegressionData& train_set, const RegressionData& validation,
                  const TrainConfig& cfg) {
    spec.validate();
    cfg.validate();
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto* d : {&train_set, &validation}) {
        if (d->size() == 0) throw InvalidArgument("training and validation sets must be non-empty");
        if (d->inputs.size() != d->size() * spec.n_i) throw DimensionError("data rows do not match n_i");
        require_finite(d->inputs, "training data");
        require_finite(d->targets, "training targets");
    }

    TrainResult result{MlpModel(spec), {}};
    MlpModel& model = result.model;
    TrainReport& report = result.report;
    init_uniform_fan_in(model, derive_seed(cfg.seed, 1));
    Rng shuffle_rng(derive_seed(cfg.seed, 2));

    const std::size_t n = train_set.size();
    const std::size_t n_i = spec.n_i;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<float> batch_x(cfg.batch_size * n_i);
    std::vector<float> batch_y(cfg.batch_size);
    std::vector<float> grad(model.params.size());
    std::vector<float> best_params = model.params;
    AdamState<float> adam(model.params.size());
    MlpWorkspace<float> ws;

    report.best_val_loss = std::numeric_limits<double>::infinity();
    for (std::size_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        const double lr = cfg.learning_rate(epoch);
        shuffle(std::span(order), shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t rows = std::min(cfg.batch_size, n - start);
            for (std::size_t r = 0; r < rows; ++r) {
                const std::size_t src = order[start + r];
                std::copy_n(train_set.inputs.data() + src * n_i, n_i, batch_x.data() + r * n_i);
                batch_y[r] = train_set.targets[src];
            }
            const double loss = loss_and_grad<float>(model, std::span<const float>(batch_x).first(rows * n_i),
                                                     std::span<const float>(batch_y).first(rows), grad, ws);
            if (!std::isfinite(loss)) {
                throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                      std::to_string(start / cfg.batch_size) + " (lr " + std::to_string(lr) + ")");
            }
            adam_step<float>(model.params, grad, adam, lr, cfg.adam);
            epoch_loss += loss * static_cast<double>(rows);
        }
        const double val = evaluate(model, validation);
        if (!std::isfinite(val)) {
            throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
        }
        report.train_history.push_back(epoch_loss / static_cast<double>(n));
        report.val_history.push_back(val);
        report.epochs_run = epoch + 1;
        if (val < report.best_val_loss) {
            report.best_val_loss = val;
            report.best_epoch = epoch;
            best_params = model.params;
        } else if (epoch - report.best_epoch >= cfg.patience) {
            break;
        }
    }
    model.params = std::move(best_params);
    report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

void save_checkpoint(const MlpModel& model, const std::filesystem::path& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("cannot open checkpoint for writing: " + path.string());
    os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    put_le<std::uint32_t>(os, kCheckpointVersion);
    put_le<std::uint64_t>(os, model.spec.n_i);
    put_le<std::uint64_t>(os, model.spec.n_l);
    put_le<std::uint64_t>(os, model.spec.n_n);
    put_le<std::uint64_t>(os, model.params.size());
    for (const float v : model.params) put_le<float>(os, v);
    if (!os) throw FormatError("checkpoint write failed: " + path.string());
}

MlpModel load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint: " + path.string());
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    if (is.gcount() != 4 || magic != kCheckpointMagic) throw FormatError("bad checkpoint magic");
    if (get_le<std::uint32_t>(is) != kCheckpointVersion) throw FormatError("unsupported checkpoint version");
    MlpSpec spec;
    spec.n_i = get_le<std::uint64_t>(is);
    spec.n_l = get_le<std::uint64_t>(is);
    spec.n_n = get_le<std::uint64_t>(is);
    const auto count = get_le<std::uint64_t>(is);
    if (spec.n_i == 0 || spec.n_l == 0 || spec.n_n == 0 || count != param_count(spec)) {
        throw FormatError("checkpoint parameter count does not match its spec");
    }
    MlpModel model(spec);
    for (float& v : model.params) v = get_le<float>(is);
    return model;
}

template struct BasicMlp<float>;
template struct BasicMlp<double>;
template void init_uniform_fan_in(BasicMlp<float>&, std::uint64_t);
template void init_uniform_fan_in(BasicMlp<double>&, std::uint64_t);
template float forward(const BasicMlp<float>&, std::span<const float>);
template double forward(const BasicMlp<double>&, std::span<const double>);
template void forward_batch(const BasicMlp<float>&, std::span<const float>, std::span<float>, MlpWorkspace<float>&);
template void forward_batch(const BasicMlp<double>&, std::span<const double>, std::span<double>,
                            MlpWorkspace<double>&);
template double loss_and_grad(const BasicMlp<float>&, std::span<const float>, std::span<const float>,
                              std::span<float>, MlpWorkspace<float>&);
template double loss_and_grad(const BasicMlp<double>&, std::span<const double>, std::span<const double>,
                              std::span<double>, MlpWorkspace<double>&);
template void adam_step(std::span<float>, std::span<const float>, AdamState<float>&, double, const AdamHyper&);
template void adam_step(std::span<double>, std::span<const double>, AdamState<double>&, double, const AdamHyper&);
template double evaluate(const BasicMlp<float>&, std::span<const float>, std::span<const float>);
template double evaluate(const BasicMlp<double>&, std::span<const double>, std::span<const double>);

}  // namespace sforge
