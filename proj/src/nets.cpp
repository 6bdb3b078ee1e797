#include "blindcluster/nets.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace blindcluster {

void PixelNet::validate() const {
    if (layers.empty()) throw param_error("PixelNet: no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const Layer& L = layers[l];
        if (L.out_dim < 1 || L.in_dim < 1) throw param_error("PixelNet: layer dims must be >= 1");
        if (L.w.size() != static_cast<std::size_t>(L.out_dim) * L.in_dim ||
            L.b.size() != static_cast<std::size_t>(L.out_dim))
            throw param_error("PixelNet: parameter shape mismatch");
        if (l > 0 && layers[l - 1].out_dim != L.in_dim)
            throw param_error("PixelNet: layer dimensions do not chain");
        for (double v : L.w)
            if (!std::isfinite(v)) throw numeric_error("PixelNet: non-finite weight");
        for (double v : L.b)
            if (!std::isfinite(v)) throw numeric_error("PixelNet: non-finite bias");
    }
}

namespace {

Layer make_layer(int out, int in, Activation act, RngState& rng) {
    Layer L;
    L.out_dim = out;
    L.in_dim = in;
    L.act = act;
    L.w.resize(static_cast<std::size_t>(out) * in);
    L.b.assign(out, 0.0);
    const double bound = std::sqrt(6.0 / (in + out));
    for (double& w : L.w) w = (2.0 * rng.uniform01() - 1.0) * bound;
    return L;
}

void affine(const Layer& L, const double* x, double* out) {
    for (int o = 0; o < L.out_dim; ++o) {
        const double* wrow = L.w.data() + static_cast<std::size_t>(o) * L.in_dim;
        double acc = L.b[o];
        for (int i = 0; i < L.in_dim; ++i) acc += wrow[i] * x[i];
        out[o] = acc;
    }
}

void apply_activation(Activation act, std::vector<double>& v) {
    if (act == Activation::relu)
        for (double& x : v) x = x > 0.0 ? x : 0.0;
}

// dpre = dout * act'(pre); accumulates weight/bias grads; adds W^T dpre into
// dx_accum when non-null.
void layer_backward(const Layer& L, const double* input, const std::vector<double>& pre,
                    const std::vector<double>& dout, LayerGrads& g,
                    std::vector<double>* dx_accum) {
    for (int o = 0; o < L.out_dim; ++o) {
        double dpre = dout[o];
        if (L.act == Activation::relu && pre[o] <= 0.0) dpre = 0.0;
        if (dpre == 0.0) continue;
        double* gw = g.w.data() + static_cast<std::size_t>(o) * L.in_dim;
        const double* wrow = L.w.data() + static_cast<std::size_t>(o) * L.in_dim;
        for (int i = 0; i < L.in_dim; ++i) gw[i] += dpre * input[i];
        g.b[o] += dpre;
        if (dx_accum)
            for (int i = 0; i < L.in_dim; ++i) (*dx_accum)[i] += dpre * wrow[i];
    }
}

}  // namespace

PixelNet make_head(int channels, RngState& rng) {
    if (channels < 1) throw param_error("make_head: channels must be >= 1");
    PixelNet net;
    net.layers.push_back(make_layer(channels, channels, Activation::relu, rng));
    net.layers.push_back(make_layer(channels, channels, Activation::none, rng));
    return net;
}

VaeModel make_vae(int channels, int latent_dim, RngState& rng) {
    if (channels < 1 || latent_dim < 1) throw param_error("make_vae: dims must be >= 1");
    VaeModel m;
    m.channels = channels;
    m.latent_dim = latent_dim;
    for (int i = 0; i < 3; ++i)
        m.encoder_trunk.layers.push_back(make_layer(channels, channels, Activation::relu, rng));
    m.mu_head = make_layer(latent_dim, channels, Activation::none, rng);
    m.logvar_head = make_layer(latent_dim, channels, Activation::none, rng);
    m.decoder.layers.push_back(make_layer(channels, latent_dim, Activation::relu, rng));
    m.decoder.layers.push_back(make_layer(channels, channels, Activation::relu, rng));
    m.decoder.layers.push_back(make_layer(channels, channels, Activation::none, rng));
    return m;
}

std::vector<double> net_forward(const PixelNet& net, const double* x) {
    std::vector<double> cur(x, x + net.in_dim());
    std::vector<double> next;
    for (const Layer& L : net.layers) {
        next.resize(L.out_dim);
        affine(L, cur.data(), next.data());
        apply_activation(L.act, next);
        cur.swap(next);
    }
    return cur;
}

FeatureMap net_apply(const PixelNet& net, const FeatureMap& map) {
    if (map.channels != net.in_dim()) throw param_error("net_apply: channel count mismatch");
    FeatureMap out(map.height, map.width, net.out_dim());
    const std::size_t plane = static_cast<std::size_t>(map.height) * map.width;
    for (std::size_t p = 0; p < plane; ++p) {
        const auto y = net_forward(net, map.data.data() + p * map.channels);
        std::copy(y.begin(), y.end(), out.data.begin() + p * net.out_dim());
    }
    return out;
}

void net_forward_trace(const PixelNet& net, const double* x, NetTrace& trace) {
    const std::size_t n = net.layers.size();
    trace.pre.resize(n);
    trace.act.resize(n + 1);
    trace.act[0].assign(x, x + net.in_dim());
    for (std::size_t l = 0; l < n; ++l) {
        const Layer& L = net.layers[l];
        trace.pre[l].resize(L.out_dim);
        affine(L, trace.act[l].data(), trace.pre[l].data());
        trace.act[l + 1] = trace.pre[l];
        apply_activation(L.act, trace.act[l + 1]);
    }
}

void net_backward(const PixelNet& net, const NetTrace& trace, const std::vector<double>& dout,
                  NetGrads& grads, std::vector<double>* dx) {
    std::vector<double> cur = dout;
    std::vector<double> prev;
    for (int l = static_cast<int>(net.layers.size()) - 1; l >= 0; --l) {
        const Layer& L = net.layers[l];
        prev.assign(L.in_dim, 0.0);
        layer_backward(L, trace.act[l].data(), trace.pre[l], cur, grads.layers[l], &prev);
        cur.swap(prev);
    }
    if (dx) *dx = cur;
}

NetGrads net_grads_like(const PixelNet& net) {
    NetGrads g;
    g.layers.resize(net.layers.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        g.layers[l].w.assign(net.layers[l].w.size(), 0.0);
        g.layers[l].b.assign(net.layers[l].b.size(), 0.0);
    }
    return g;
}

VaeGrads vae_grads_like(const VaeModel& model) {
    VaeGrads g;
    g.trunk = net_grads_like(model.encoder_trunk);
    g.mu.w.assign(model.mu_head.w.size(), 0.0);
    g.mu.b.assign(model.mu_head.b.size(), 0.0);
    g.logvar.w.assign(model.logvar_head.w.size(), 0.0);
    g.logvar.b.assign(model.logvar_head.b.size(), 0.0);
    g.decoder = net_grads_like(model.decoder);
    return g;
}

std::pair<Batch, Batch> vae_encode(const VaeModel& model, const Batch& x) {
    if (x.dim != model.channels) throw param_error("vae_encode: input dimension mismatch");
    Batch mu(x.n, model.latent_dim), logvar(x.n, model.latent_dim);
    for (int i = 0; i < x.n; ++i) {
        const auto h = net_forward(model.encoder_trunk, x.row(i));
        affine(model.mu_head, h.data(), mu.row(i));
        affine(model.logvar_head, h.data(), logvar.row(i));
    }
    return {std::move(mu), std::move(logvar)};
}

Batch vae_reparameterize(const Batch& mu, const Batch& logvar, RngState& rng) {
    if (mu.n != logvar.n || mu.dim != logvar.dim)
        throw param_error("vae_reparameterize: shape mismatch");
    Batch z(mu.n, mu.dim);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        z.data[i] = mu.data[i] + std::exp(0.5 * logvar.data[i]) * rng.normal();
    return z;
}

VaeLossResult vae_loss_with_noise(const VaeModel& model, const Batch& x, const Batch& eps,
                                  double kl_weight) {
    if (x.n < 1) throw param_error("vae_loss: empty batch");
    if (x.dim != model.channels) throw param_error("vae_loss: input dimension mismatch");
    if (eps.n != x.n || eps.dim != model.latent_dim)
        throw param_error("vae_loss: noise shape mismatch");

    VaeLossResult res;
    res.grads = vae_grads_like(model);
    const int B = x.n, C = model.channels, L = model.latent_dim;
    const double recon_scale = 1.0 / (static_cast<double>(B) * C);
    const double kl_scale = kl_weight / static_cast<double>(B);

    NetTrace trunk_trace, dec_trace;
    std::vector<double> mu(L), lv(L), sd(L), z(L);
    std::vector<double> dxhat(C), dz, dmu(L), dlv(L), dh;

    for (int b = 0; b < B; ++b) {
        net_forward_trace(model.encoder_trunk, x.row(b), trunk_trace);
        const std::vector<double>& h = trunk_trace.act.back();
        affine(model.mu_head, h.data(), mu.data());
        affine(model.logvar_head, h.data(), lv.data());
        for (int l = 0; l < L; ++l) {
            sd[l] = std::exp(0.5 * lv[l]);
            z[l] = mu[l] + sd[l] * eps.row(b)[l];
        }
        net_forward_trace(model.decoder, z.data(), dec_trace);
        const std::vector<double>& xhat = dec_trace.act.back();

        for (int c = 0; c < C; ++c) {
            const double d = xhat[c] - x.row(b)[c];
            res.recon += d * d;
            dxhat[c] = 2.0 * d * recon_scale;
        }
        for (int l = 0; l < L; ++l)
            res.kl += -0.5 * (1.0 + lv[l] - mu[l] * mu[l] - std::exp(lv[l]));

        net_backward(model.decoder, dec_trace, dxhat, res.grads.decoder, &dz);
        for (int l = 0; l < L; ++l) {
            dmu[l] = dz[l] + kl_scale * mu[l];
            dlv[l] = dz[l] * eps.row(b)[l] * 0.5 * sd[l] + kl_scale * 0.5 * (std::exp(lv[l]) - 1.0);
        }
        dh.assign(C, 0.0);
        layer_backward(model.mu_head, h.data(), dmu, dmu, res.grads.mu, &dh);
        layer_backward(model.logvar_head, h.data(), dlv, dlv, res.grads.logvar, &dh);
        net_backward(model.encoder_trunk, trunk_trace, dh, res.grads.trunk, nullptr);
    }
    res.recon *= recon_scale;
    res.kl /= static_cast<double>(B);
    res.loss = res.recon + kl_weight * res.kl;
    if (!std::isfinite(res.loss)) throw numeric_error("vae_loss: non-finite loss");
    return res;
}

VaeLossResult vae_loss(const VaeModel& model, const Batch& x, RngState& rng, double kl_weight) {
    Batch eps(x.n, model.latent_dim);
    for (double& e : eps.data) e = rng.normal();
    return vae_loss_with_noise(model, x, eps, kl_weight);
}

TrainedVae train_vae(const Batch& pixels, const VaeTrainConfig& config, RngState& rng) {
    if (pixels.n < 1) throw param_error("train_vae: empty pixel pool");
    if (pixels.dim < 1) throw param_error("train_vae: pixel dimension must be >= 1");
    if (config.iterations < 0 || config.batch_size < 1 || config.latent_dim < 1)
        throw param_error("train_vae: bad training config");

    TrainedVae out;
    out.model = make_vae(pixels.dim, config.latent_dim, rng);
    const std::size_t n_params = vae_param_vector(out.model).size();
    AdamWState opt(n_params, config.lr, config.weight_decay);

    Batch batch(config.batch_size, pixels.dim);
    for (int it = 0; it < config.iterations; ++it) {
        for (int s = 0; s < config.batch_size; ++s) {
            const auto idx = rng.uniform_below(static_cast<std::uint64_t>(pixels.n));
            std::memcpy(batch.row(s), pixels.row(static_cast<int>(idx)),
                        sizeof(double) * pixels.dim);
        }
        VaeLossResult res;
        try {
            res = vae_loss(out.model, batch, rng, config.kl_weight);
        } catch (const numeric_error&) {
            throw numeric_error("train_vae: non-finite loss at iteration " + std::to_string(it));
        }
        out.loss_trace.push_back(res.loss);

        adamw_begin_step(opt);
        std::size_t off = 0;
        auto apply_layer = [&](Layer& L, const LayerGrads& g) {
            adamw_apply(opt, L.w.data(), g.w.data(), L.w.size(), off);
            off += L.w.size();
            adamw_apply(opt, L.b.data(), g.b.data(), L.b.size(), off);
            off += L.b.size();
        };
        for (std::size_t l = 0; l < out.model.encoder_trunk.layers.size(); ++l)
            apply_layer(out.model.encoder_trunk.layers[l], res.grads.trunk.layers[l]);
        apply_layer(out.model.mu_head, res.grads.mu);
        apply_layer(out.model.logvar_head, res.grads.logvar);
        for (std::size_t l = 0; l < out.model.decoder.layers.size(); ++l)
            apply_layer(out.model.decoder.layers[l], res.grads.decoder.layers[l]);
    }
    return out;
}

FeatureMap vae_reconstruct_mean(const VaeModel& model, const FeatureMap& features) {
    if (features.channels != model.channels)
        throw param_error("vae_reconstruct_mean: channel count mismatch");
    FeatureMap out(features.height, features.width, model.channels);
    const std::size_t plane = static_cast<std::size_t>(features.height) * features.width;
    std::vector<double> mu(model.latent_dim);
    for (std::size_t p = 0; p < plane; ++p) {
        const auto h = net_forward(model.encoder_trunk, features.data.data() + p * model.channels);
        affine(model.mu_head, h.data(), mu.data());
        const auto xhat = net_forward(model.decoder, mu.data());
        std::copy(xhat.begin(), xhat.end(), out.data.begin() + p * model.channels);
    }
    return out;
}

FeatureMap head_forward(const PixelNet& head, const FeatureMap& features) {
    FeatureMap out = net_apply(head, features);
    const int c = out.channels;
    const std::size_t plane = static_cast<std::size_t>(out.height) * out.width;
    for (std::size_t p = 0; p < plane; ++p) {
        double* v = out.data.data() + p * c;
        double sq = 0.0;
        for (int i = 0; i < c; ++i) sq += v[i] * v[i];
        if (sq > 0.0) {
            const double inv = 1.0 / std::sqrt(sq);
            for (int i = 0; i < c; ++i) v[i] *= inv;
        }
    }
    return out;
}

void adamw_begin_step(AdamWState& state) { state.step += 1; }

void adamw_apply(AdamWState& state, double* params, const double* grads, std::size_t n,
                 std::size_t offset) {
    if (offset + n > state.m.size()) throw param_error("adamw_apply: state too small");
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < n; ++i) {
        params[i] -= state.lr * state.weight_decay * params[i];
        double& m = state.m[offset + i];
        double& v = state.v[offset + i];
        m = state.beta1 * m + (1.0 - state.beta1) * grads[i];
        v = state.beta2 * v + (1.0 - state.beta2) * grads[i] * grads[i];
        params[i] -= state.lr * (m / bc1) / (std::sqrt(v / bc2) + state.epsilon);
    }
}

void adamw_step(AdamWState& state, std::vector<double>& params,
                const std::vector<double>& grads) {
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw param_error("adamw_step: shape mismatch");
    adamw_begin_step(state);
    adamw_apply(state, params.data(), grads.data(), params.size(), 0);
}

double grad_check(const std::function<double(const std::vector<double>&)>& loss_fn,
                  const std::vector<double>& params, const std::vector<double>& analytic,
                  double step) {
    if (params.size() != analytic.size()) throw param_error("grad_check: shape mismatch");
    std::vector<double> p = params;
    double max_rel = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + step;
        const double lp = loss_fn(p);
        p[i] = orig - step;
        const double lm = loss_fn(p);
        p[i] = orig;
        const double numeric = (lp - lm) / (2.0 * step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
    }
    return max_rel;
}

// --------------------------------------------------------------------------
// Flat parameter views
// --------------------------------------------------------------------------

namespace {

void append(std::vector<double>& out, const std::vector<double>& v) {
    out.insert(out.end(), v.begin(), v.end());
}

void take(std::vector<double>& dst, const std::vector<double>& src, std::size_t& off) {
    if (off + dst.size() > src.size()) throw param_error("set_params: vector too short");
    std::copy(src.begin() + off, src.begin() + off + dst.size(), dst.begin());
    off += dst.size();
}

}  // namespace

std::vector<double> net_param_vector(const PixelNet& net) {
    std::vector<double> out;
    for (const Layer& L : net.layers) {
        append(out, L.w);
        append(out, L.b);
    }
    return out;
}

void net_set_params(PixelNet& net, const std::vector<double>& params) {
    std::size_t off = 0;
    for (Layer& L : net.layers) {
        take(L.w, params, off);
        take(L.b, params, off);
    }
    if (off != params.size()) throw param_error("net_set_params: size mismatch");
}

std::vector<double> net_grad_vector(const NetGrads& grads) {
    std::vector<double> out;
    for (const LayerGrads& g : grads.layers) {
        append(out, g.w);
        append(out, g.b);
    }
    return out;
}

std::vector<double> vae_param_vector(const VaeModel& model) {
    std::vector<double> out = net_param_vector(model.encoder_trunk);
    append(out, model.mu_head.w);
    append(out, model.mu_head.b);
    append(out, model.logvar_head.w);
    append(out, model.logvar_head.b);
    const auto dec = net_param_vector(model.decoder);
    append(out, dec);
    return out;
}

void vae_set_params(VaeModel& model, const std::vector<double>& params) {
    std::size_t off = 0;
    for (Layer& L : model.encoder_trunk.layers) {
        take(L.w, params, off);
        take(L.b, params, off);
    }
    take(model.mu_head.w, params, off);
    take(model.mu_head.b, params, off);
    take(model.logvar_head.w, params, off);
    take(model.logvar_head.b, params, off);
    for (Layer& L : model.decoder.layers) {
        take(L.w, params, off);
        take(L.b, params, off);
    }
    if (off != params.size()) throw param_error("vae_set_params: size mismatch");
}

std::vector<double> vae_grad_vector(const VaeGrads& grads) {
    std::vector<double> out = net_grad_vector(grads.trunk);
    append(out, grads.mu.w);
    append(out, grads.mu.b);
    append(out, grads.logvar.w);
    append(out, grads.logvar.b);
    const auto dec = net_grad_vector(grads.decoder);
    append(out, dec);
    return out;
}

// --------------------------------------------------------------------------
// Persistence
// --------------------------------------------------------------------------

namespace {

void put_u16(std::ostream& out, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u32(std::ostream& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f64(std::ostream& out, double d) {
    std::uint64_t u;
    std::memcpy(&u, &d, 8);
    for (int i = 0; i < 8; ++i) out.put(static_cast<char>((u >> (8 * i)) & 0xff));
}
std::uint16_t read_u16(std::istream& in, const std::string& path) {
    unsigned char b[2];
    if (!in.read(reinterpret_cast<char*>(b), 2))
        throw format_error("load model: '" + path + "': truncated");
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}
std::uint32_t read_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw format_error("load model: '" + path + "': truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}
double read_f64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw format_error("load model: '" + path + "': truncated");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double d;
    std::memcpy(&d, &u, 8);
    return d;
}

void write_net_body(std::ostream& out, const PixelNet& net) {
    put_u32(out, static_cast<std::uint32_t>(net.layers.size()));
    for (const Layer& L : net.layers) {
        put_u32(out, static_cast<std::uint32_t>(L.out_dim));
        put_u32(out, static_cast<std::uint32_t>(L.in_dim));
        out.put(static_cast<char>(L.act));
    }
    for (const Layer& L : net.layers) {
        for (double v : L.w) put_f64(out, v);
        for (double v : L.b) put_f64(out, v);
    }
}

PixelNet read_net_body(std::istream& in, const std::string& path) {
    PixelNet net;
    const std::uint32_t n_layers = read_u32(in, path);
    if (n_layers == 0 || n_layers > 64)
        throw format_error("load model: '" + path + "': bad layer count");
    net.layers.resize(n_layers);
    for (Layer& L : net.layers) {
        L.out_dim = static_cast<int>(read_u32(in, path));
        L.in_dim = static_cast<int>(read_u32(in, path));
        const int a = in.get();
        if (a != 0 && a != 1) throw format_error("load model: '" + path + "': bad activation tag");
        L.act = static_cast<Activation>(a);
        if (L.out_dim < 1 || L.in_dim < 1 ||
            static_cast<std::uint64_t>(L.out_dim) * L.in_dim > (1ULL << 28))
            throw format_error("load model: '" + path + "': bad layer dims");
    }
    for (Layer& L : net.layers) {
        L.w.resize(static_cast<std::size_t>(L.out_dim) * L.in_dim);
        L.b.resize(L.out_dim);
        for (double& v : L.w) v = read_f64(in, path);
        for (double& v : L.b) v = read_f64(in, path);
    }
    try {
        net.validate();
    } catch (const param_error& e) {
        throw format_error("load model: '" + path + "': " + e.what());
    }
    return net;
}

}  // namespace

void save_pixelnet(const PixelNet& net, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_pixelnet: cannot open '" + path + "'");
    out.write("PNET", 4);
    put_u16(out, 1);
    put_u16(out, 0);
    write_net_body(out, net);
    if (!out) throw io_error("save_pixelnet: write failed for '" + path + "'");
}

PixelNet load_pixelnet(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_pixelnet: cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "PNET", 4) != 0)
        throw format_error("load_pixelnet: '" + path + "': bad magic at byte offset 0");
    if (read_u16(in, path) != 1)
        throw format_error("load_pixelnet: '" + path + "': unsupported version");
    read_u16(in, path);
    return read_net_body(in, path);
}

void save_vae(const VaeModel& model, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("save_vae: cannot open '" + path + "'");
    out.write("VAEM", 4);
    put_u16(out, 1);
    put_u16(out, 0);
    put_u32(out, static_cast<std::uint32_t>(model.channels));
    put_u32(out, static_cast<std::uint32_t>(model.latent_dim));
    write_net_body(out, model.encoder_trunk);
    PixelNet mu, lv;
    mu.layers.push_back(model.mu_head);
    lv.layers.push_back(model.logvar_head);
    write_net_body(out, mu);
    write_net_body(out, lv);
    write_net_body(out, model.decoder);
    if (!out) throw io_error("save_vae: write failed for '" + path + "'");
}

VaeModel load_vae(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("load_vae: cannot open '" + path + "'");
    char magic[4];
    if (!in.read(magic, 4) || std::memcmp(magic, "VAEM", 4) != 0)
        throw format_error("load_vae: '" + path + "': bad magic at byte offset 0");
    if (read_u16(in, path) != 1) throw format_error("load_vae: '" + path + "': unsupported version");
    read_u16(in, path);
    VaeModel m;
    m.channels = static_cast<int>(read_u32(in, path));
    m.latent_dim = static_cast<int>(read_u32(in, path));
    m.encoder_trunk = read_net_body(in, path);
    PixelNet mu = read_net_body(in, path);
    PixelNet lv = read_net_body(in, path);
    m.decoder = read_net_body(in, path);
    if (mu.layers.size() != 1 || lv.layers.size() != 1)
        throw format_error("load_vae: '" + path + "': malformed head blocks");
    m.mu_head = mu.layers.front();
    m.logvar_head = lv.layers.front();
    if (m.encoder_trunk.in_dim() != m.channels || m.encoder_trunk.out_dim() != m.mu_head.in_dim ||
        m.mu_head.out_dim != m.latent_dim || m.logvar_head.out_dim != m.latent_dim ||
        m.decoder.in_dim() != m.latent_dim || m.decoder.out_dim() != m.channels)
        throw format_error("load_vae: '" + path + "': dimensions do not chain");
    return m;
}

}  // namespace blindcluster
