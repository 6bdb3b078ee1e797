#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "blindcluster/rng.hpp"
#include "blindcluster/tensor.hpp"

namespace blindcluster {

enum class Activation : std::uint8_t { none = 0, relu = 1 };

struct Layer {
    int out_dim = 0;
    int in_dim = 0;
    Activation act = Activation::none;
    std::vector<double> w;  // out x in, row-major
    std::vector<double> b;  // out
};

// Per-pixel multilayer network; applying it to a FeatureMap acts
// independently per pixel (1x1 convolution semantics).
struct PixelNet {
    std::vector<Layer> layers;

    int in_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
    int out_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }
    void validate() const;  // dimension chaining + finite parameters
};

struct VaeModel {
    PixelNet encoder_trunk;  // 3 hidden layers, ReLU, width = channels
    Layer mu_head;           // linear to latent
    Layer logvar_head;       // linear to latent
    PixelNet decoder;        // latent -> C -> C -> C, ReLU on hidden only
    int channels = 0;
    int latent_dim = 0;
};

// Batch of row vectors, n x dim row-major.
struct Batch {
    int n = 0;
    int dim = 0;
    std::vector<double> data;

    Batch() = default;
    Batch(int n_, int dim_) : n(n_), dim(dim_), data(static_cast<std::size_t>(n_) * dim_) {}
    double* row(int i) { return data.data() + static_cast<std::size_t>(i) * dim; }
    const double* row(int i) const { return data.data() + static_cast<std::size_t>(i) * dim; }
};

struct LayerGrads {
    std::vector<double> w, b;
};
struct NetGrads {
    std::vector<LayerGrads> layers;
};
struct VaeGrads {
    NetGrads trunk;
    LayerGrads mu, logvar;
    NetGrads decoder;
};

// Glorot-uniform weights (+-sqrt(6/(fan_in+fan_out))), zero biases.
PixelNet make_head(int channels, RngState& rng);
VaeModel make_vae(int channels, int latent_dim, RngState& rng);

std::vector<double> net_forward(const PixelNet& net, const double* x);
FeatureMap net_apply(const PixelNet& net, const FeatureMap& map);

// Forward pass keeping activations for the backward pass. act[0] is the
// input; act[l+1] the output of layer l after its activation.
struct NetTrace {
    std::vector<std::vector<double>> pre;
    std::vector<std::vector<double>> act;
};
void net_forward_trace(const PixelNet& net, const double* x, NetTrace& trace);
// Accumulates into grads; writes d(loss)/d(input) into dx when non-null.
void net_backward(const PixelNet& net, const NetTrace& trace, const std::vector<double>& dout,
                  NetGrads& grads, std::vector<double>* dx = nullptr);

NetGrads net_grads_like(const PixelNet& net);
VaeGrads vae_grads_like(const VaeModel& model);

std::pair<Batch, Batch> vae_encode(const VaeModel& model, const Batch& x);
Batch vae_reparameterize(const Batch& mu, const Batch& logvar, RngState& rng);

struct VaeLossResult {
    double loss = 0.0;
    double recon = 0.0;
    double kl = 0.0;
    VaeGrads grads;
};
// loss = mean((xhat - x)^2 over batch*channels) + kl_weight * mean_b(KL);
// gradients are exact analytic derivatives through the reparameterization.
VaeLossResult vae_loss(const VaeModel& model, const Batch& x, RngState& rng,
                       double kl_weight = 1.0);
// Same loss with fixed noise (for gradient verification).
VaeLossResult vae_loss_with_noise(const VaeModel& model, const Batch& x, const Batch& eps,
                                  double kl_weight = 1.0);

struct VaeTrainConfig {
    int iterations = 10000;
    double lr = 1e-4;
    double weight_decay = 0.1;
    int batch_size = 4096;
    int latent_dim = 128;
    double kl_weight = 1.0;
};
struct TrainedVae {
    VaeModel model;
    std::vector<double> loss_trace;  // one entry per iteration
};
// pixels: all corpus pixels pooled, already rescaled to [0, 1].
TrainedVae train_vae(const Batch& pixels, const VaeTrainConfig& config, RngState& rng);

// Per pixel: decode(mu(encode(x))); no sampling at inference.
FeatureMap vae_reconstruct_mean(const VaeModel& model, const FeatureMap& features);

// Two-layer head then per-pixel L2 normalization; zero vectors map to zero.
FeatureMap head_forward(const PixelNet& head, const FeatureMap& features);

struct AdamWState {
    long long step = 0;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    std::vector<double> m, v;

    AdamWState() = default;
    AdamWState(std::size_t n_params, double lr_, double wd)
        : lr(lr_), weight_decay(wd), m(n_params, 0.0), v(n_params, 0.0) {}
};
// Decoupled decay (param -= lr*wd*param) before the bias-corrected step.
void adamw_step(AdamWState& state, std::vector<double>& params,
                const std::vector<double>& grads);
// Span form for structured parameter storage: call adamw_begin_step once per
// optimizer step, then adamw_apply per parameter block with its flat offset.
void adamw_begin_step(AdamWState& state);
void adamw_apply(AdamWState& state, double* params, const double* grads, std::size_t n,
                 std::size_t offset);

// Central finite differences against an analytic gradient; returns the max
// relative error with denominator max(|a|, |n|, 1e-8).
double grad_check(const std::function<double(const std::vector<double>&)>& loss_fn,
                  const std::vector<double>& params, const std::vector<double>& analytic,
                  double step = 1e-5);

// Flat parameter views (canonical order: trunk, mu, logvar, decoder; each
// layer w then b).
std::vector<double> net_param_vector(const PixelNet& net);
void net_set_params(PixelNet& net, const std::vector<double>& params);
std::vector<double> net_grad_vector(const NetGrads& grads);
std::vector<double> vae_param_vector(const VaeModel& model);
void vae_set_params(VaeModel& model, const std::vector<double>& params);
std::vector<double> vae_grad_vector(const VaeGrads& grads);

// Persistence: PNET / VAEM containers, f64 little-endian parameters.
void save_pixelnet(const PixelNet& net, const std::string& path);
PixelNet load_pixelnet(const std::string& path);
void save_vae(const VaeModel& model, const std::string& path);
VaeModel load_vae(const std::string& path);

}  // namespace blindcluster
