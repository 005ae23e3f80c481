#pragma once

// Fully connected regression network: n_l hidden layers of n_n GELU units
// on an n_i input, one linear output. Parameters live in one flat buffer,
// layer by layer, each layer as a row-major (out x in) weight matrix followed
// by its bias vector.

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sforge {

struct MlpSpec {
    std::size_t n_i = 20000;
    std::size_t n_l = 3;
    std::size_t n_n = 16;

    void validate() const;
    friend bool operator==(const MlpSpec&, const MlpSpec&) = default;
};

// n_n [n_i + (n_l - 1) n_n + 1 + n_l] + 1
std::uint64_t param_count(const MlpSpec& spec);

// Smallest loss distinguishable from zero in 32-bit training.
inline constexpr double kPrecisionFloor = 1.9e-7;

// x * Phi(x) with the exact Gaussian CDF.
double gelu(double x);
double gelu_derivative(double x);

struct LayerShape {
    std::size_t in = 0;
    std::size_t out = 0;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;
};

std::vector<LayerShape> layer_shapes(const MlpSpec& spec);

template <typename T>
struct BasicMlp {
    MlpSpec spec;
    std::vector<LayerShape> layers;
    std::vector<T> params;

    BasicMlp() = default;
    explicit BasicMlp(const MlpSpec& s);  // zero-initialized

    std::span<T> weights(std::size_t layer) {
        return std::span<T>(params).subspan(layers[layer].weight_offset, layers[layer].in * layers[layer].out);
    }
    std::span<const T> weights(std::size_t layer) const {
        return std::span<const T>(params).subspan(layers[layer].weight_offset, layers[layer].in * layers[layer].out);
    }
    std::span<T> bias(std::size_t layer) {
        return std::span<T>(params).subspan(layers[layer].bias_offset, layers[layer].out);
    }
    std::span<const T> bias(std::size_t layer) const {
        return std::span<const T>(params).subspan(layers[layer].bias_offset, layers[layer].out);
    }
};

using MlpModel = BasicMlp<float>;

// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias.
template <typename T>
void init_uniform_fan_in(BasicMlp<T>& model, std::uint64_t seed);

// Scratch buffers reused across batches.
template <typename T>
struct MlpWorkspace {
    std::vector<std::vector<T>> pre;  // pre-activations per layer
    std::vector<std::vector<T>> act;  // activations per hidden layer
    std::vector<T> delta;
    std::vector<T> delta_prev;
};

// Single-sample forward pass. Throws InvalidArgument on non-finite input.
template <typename T>
T forward(const BasicMlp<T>& model, std::span<const T> input);

// Row-major (batch x n_i) input; writes one prediction per row.
template <typename T>
void forward_batch(const BasicMlp<T>& model, std::span<const T> inputs, std::span<T> out, MlpWorkspace<T>& ws);

// Mean squared error over the batch and its gradient w.r.t. every parameter
// (written into `grad`, same layout as model.params).
template <typename T>
double loss_and_grad(const BasicMlp<T>& model, std::span<const T> inputs, std::span<const T> targets,
                     std::span<T> grad, MlpWorkspace<T>& ws);

template <typename T>
struct AdamState {
    std::vector<T> m;
    std::vector<T> v;
    std::uint64_t t = 0;

    explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grad, AdamState<T>& state, double lr,
               const AdamHyper& hyper = {});

struct TrainConfig {
    double lr0 = 1e-3;
    double lr_decay = 0.98;
    std::size_t max_epochs = 200;
    std::size_t patience = 100;
    std::size_t batch_size = 64;
    AdamHyper adam{};
    std::uint64_t seed = 1;

    double learning_rate(std::size_t epoch) const;
    void validate() const;
};

// Inputs row-major (n x n_i) with one target per row.
struct RegressionData {
    std::span<const float> inputs;
    std::span<const float> targets;

    std::size_t size() const { return targets.size(); }
};

struct TrainReport {
    double best_val_loss = 0.0;
    std::size_t best_epoch = 0;
    std::size_t epochs_run = 0;
    std::vector<double> train_history;
    std::vector<double> val_history;
    double test_mse = 0.0;
    bool at_precision_floor = false;
    double wall_seconds = 0.0;
};

struct TrainResult {
    MlpModel model;
    TrainReport report;
};

// Adam with per-epoch learning-rate decay and early stopping on validation
// MSE; the returned weights are those of the best validation epoch. Throws
// DivergenceError on a non-finite loss.
TrainResult train(const MlpSpec& spec, const RegressionData& train_set, const RegressionData& validation,
                  const TrainConfig& cfg);

template <typename T>
double evaluate(const BasicMlp<T>& model, std::span<const T> inputs, std::span<const T> targets);

double evaluate(const MlpModel& model, const RegressionData& data);

// Checkpoint: "SFMC", u32 version, u64 n_i, n_l, n_n, u64 parameter count,
// then the parameters as little-endian f32.
void save_checkpoint(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_checkpoint(const std::filesystem::path& path);

}  // namespace sforge
