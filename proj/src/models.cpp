#include "sdkd/models.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

#include "json.hpp"

namespace sdkd::nn {

using nlohmann::json;

const char* kind_name(ModelKind k) {
    switch (k) {
        case ModelKind::st_alternet: return "st_alternet";
        case ModelKind::simvp: return "simvp";
        case ModelKind::unet: return "unet";
        case ModelKind::resnet: return "resnet";
        case ModelKind::mlp_mixer: return "mlp_mixer";
    }
    return "?";
}

ModelKind kind_from_name(const std::string& name) {
    for (ModelKind k : {ModelKind::st_alternet, ModelKind::simvp, ModelKind::unet,
                        ModelKind::resnet, ModelKind::mlp_mixer})
        if (name == kind_name(k)) return k;
    throw std::invalid_argument("unknown model kind: " + name);
}

bool is_teacher_kind(ModelKind k) {
    return k == ModelKind::st_alternet || k == ModelKind::simvp;
}

// ===========================================================================
// ParameterSet
// ===========================================================================

Tensor& ParameterSet::add(const std::string& name, Tensor t) {
    if (tensors_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    names_.push_back(name);
    return tensors_[name] = std::move(t);
}

Tensor& ParameterSet::at(const std::string& name) {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

const Tensor& ParameterSet::at(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

bool ParameterSet::has(const std::string& name) const { return tensors_.count(name) > 0; }

int64_t ParameterSet::total_size() const {
    int64_t n = 0;
    for (const auto& name : names_) n += at(name).numel();
    return n;
}

std::vector<double> ParameterSet::flatten() const {
    std::vector<double> flat;
    flat.reserve(static_cast<size_t>(total_size()));
    for (const auto& name : names_) {
        const Tensor& t = at(name);
        for (int64_t i = 0; i < t.numel(); ++i) flat.push_back(t[i]);
    }
    return flat;
}

void ParameterSet::unflatten(const std::vector<double>& flat) {
    if (static_cast<int64_t>(flat.size()) != total_size())
        throw std::invalid_argument("unflatten: length mismatch");
    size_t pos = 0;
    for (const auto& name : names_) {
        Tensor& t = at(name);
        for (int64_t i = 0; i < t.numel(); ++i) t[i] = flat[pos++];
    }
}

// ===========================================================================
// ModelSpec
// ===========================================================================

ModelSpec ModelSpec::teacher_default(ModelKind kind, int in_frames, int out_frames, int channels) {
    if (!is_teacher_kind(kind)) throw std::invalid_argument("not a teacher kind");
    ModelSpec s;
    s.kind = kind;
    s.in_frames = in_frames;
    s.out_frames = out_frames;
    s.channels = channels;
    s.hidden = 64;
    s.depth = 4;
    s.kernel = 3;
    s.heads = 4;
    // the frequency-decoupled teacher keeps a half-resolution latent so the
    // deconvolution stack can still reconstruct fine detail; the pure-conv
    // teacher uses the deeper bottleneck
    s.n_down = kind == ModelKind::st_alternet ? 1 : 2;
    return s;
}

ModelSpec ModelSpec::student_default(ModelKind kind, int in_frames, int out_frames, int channels,
                                     int teacher_hidden) {
    if (is_teacher_kind(kind)) throw std::invalid_argument("not a student kind");
    ModelSpec s;
    s.kind = kind;
    s.in_frames = in_frames;
    s.out_frames = out_frames;
    s.channels = channels;
    s.hidden = static_cast<int>(std::lround(0.25 * teacher_hidden));
    s.depth = kind == ModelKind::resnet ? 3 : 2;
    s.kernel = 3;
    s.heads = 1;
    s.n_down = 2;
    return s;
}

std::string ModelSpec::to_json() const {
    json j{{"kind", kind_name(kind)}, {"in_frames", in_frames},   {"out_frames", out_frames},
           {"channels", channels},    {"hidden", hidden},         {"depth", depth},
           {"kernel", kernel},        {"heads", heads},           {"n_down", n_down},
           {"grid_h", grid_h},        {"grid_w", grid_w}};
    return j.dump();
}

ModelSpec ModelSpec::from_json(const std::string& text) {
    json j = json::parse(text);
    ModelSpec s;
    s.kind = kind_from_name(j.at("kind").get<std::string>());
    s.in_frames = j.at("in_frames").get<int>();
    s.out_frames = j.at("out_frames").get<int>();
    s.channels = j.at("channels").get<int>();
    s.hidden = j.at("hidden").get<int>();
    s.depth = j.at("depth").get<int>();
    s.kernel = j.at("kernel").get<int>();
    s.heads = j.at("heads").get<int>();
    s.n_down = j.at("n_down").get<int>();
    s.grid_h = j.at("grid_h").get<int>();
    s.grid_w = j.at("grid_w").get<int>();
    return s;
}

// ===========================================================================
// Layer helpers: one code path serves parameter creation, graph building and
// cost accounting
// ===========================================================================

namespace {

constexpr int kAttentionWarnPositions = 4096;  // O(N^2 d) guard

struct Ctx {
    Graph* g = nullptr;
    bool trainable = false;
    const ParameterSet* ps = nullptr;
    ParameterSet* create = nullptr;  // non-null during the init probe
    Rng* rng = nullptr;
    LayerCost* cost = nullptr;
    Model::Bound* bound = nullptr;

    Var p(const std::string& name, const std::vector<int>& shape, double init_bound,
          bool const_init = false, double const_val = 0.0) {
        if (create && !create->has(name)) {
            Tensor t(shape);
            if (const_init)
                t.fill(const_val);
            else
                for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng->uniform(-init_bound, init_bound);
            create->add(name, std::move(t));
        }
        const Tensor& t = create ? create->at(name) : ps->at(name);
        if (t.shape() != shape)
            throw std::invalid_argument("parameter " + name + " has shape " + t.shape_str() +
                                        ", expected " + Tensor(shape).shape_str());
        if (cost) cost->params += t.numel();
        Var v = trainable ? g->param(t) : g->input(t);
        bound->params.emplace_back(name, v);
        return v;
    }
};

int spatial_h(const Ctx& c, Var x) { return c.g->value(x).dim(2); }
int spatial_w(const Ctx& c, Var x) { return c.g->value(x).dim(3); }

Var conv_l(Ctx& c, const std::string& name, Var x, int cin, int cout, int k, int stride, int pad) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    Var w = c.p(name + ".w", {cout, cin, k, k}, bound);
    Var b = c.p(name + ".b", {cout}, bound);
    if (c.cost) {
        const Tensor& xv = c.g->value(x);
        const int64_t oh = (xv.dim(2) + 2 * pad - k) / stride + 1;
        const int64_t ow = (xv.dim(3) + 2 * pad - k) / stride + 1;
        c.cost->flops += static_cast<int64_t>(k) * k * cin * cout * oh * ow * xv.dim(0);
    }
    return conv2d(*c.g, x, w, b, stride, pad);
}

Var tconv_l(Ctx& c, const std::string& name, Var x, int cin, int cout, int k, int stride,
            int pad = 0) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin) * k * k);
    Var w = c.p(name + ".w", {cin, cout, k, k}, bound);
    Var b = c.p(name + ".b", {cout}, bound);
    if (c.cost) {
        const Tensor& xv = c.g->value(x);
        c.cost->flops += static_cast<int64_t>(k) * k * cin * cout * xv.dim(2) * xv.dim(3) * xv.dim(0);
    }
    return conv2d_transpose(*c.g, x, w, b, stride, pad);
}

Var dense_l(Ctx& c, const std::string& name, Var x, int in, int out, bool bias) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Var w = c.p(name + ".w", {out, in}, bound);
    if (c.cost) {
        const Tensor& xv = c.g->value(x);
        c.cost->flops += static_cast<int64_t>(in) * out * (xv.numel() / in);
    }
    if (!bias) return dense(*c.g, x, w);
    Var b = c.p(name + ".b", {out}, bound);
    return dense(*c.g, x, w, b);
}

Var ln_l(Ctx& c, const std::string& name, Var x, int d) {
    Var gamma = c.p(name + ".g", {d}, 0.0, true, 1.0);
    Var beta = c.p(name + ".b", {d}, 0.0, true, 0.0);
    return layer_norm(*c.g, x, gamma, beta);
}

// channel layer norm on [B, C, H, W] via the token layout
Var ln_channels(Ctx& c, const std::string& name, Var x, int channels) {
    const int h = spatial_h(c, x), w = spatial_w(c, x);
    Var t = to_tokens(*c.g, x);
    t = ln_l(c, name, t, channels);
    return from_tokens(*c.g, t, h, w);
}

// Eq-style self-attention over spatial positions: projections without bias,
// then softmax(QK^T/sqrt(dh)) V
Var attn_l(Ctx& c, const std::string& prefix, Var tokens, int d, int heads) {
    const int batch = c.g->value(tokens).dim(0);
    const int n = c.g->value(tokens).dim(1);
    if (n > kAttentionWarnPositions)
        std::cerr << "[sdkd] warning: attention over " << n
                  << " positions; O(N^2 d) cost will be large\n";
    Var q = dense_l(c, prefix + ".wq", tokens, d, d, false);
    Var k = dense_l(c, prefix + ".wk", tokens, d, d, false);
    Var v = dense_l(c, prefix + ".wv", tokens, d, d, false);
    if (c.cost) c.cost->flops += static_cast<int64_t>(batch) * n * n * d;  // QK^T term
    return attention(*c.g, q, k, v, heads);
}

void record_feature(Ctx& c, const std::string& name, Var v) {
    c.bound->features.emplace_back(name, v);
}

}  // namespace

// ===========================================================================
// Architectures
// ===========================================================================

namespace {

// stride-2 conv encoder shared by both teachers; widths D/2^(n_down-1-i) -> D
Var encoder_stack(Ctx& c, const ModelSpec& s, Var x) {
    int cin = s.in_frames * s.channels;
    for (int i = 0; i < s.n_down; ++i) {
        const int cout = s.hidden >> (s.n_down - 1 - i);
        x = gelu(*c.g, conv_l(c, "enc" + std::to_string(i), x, cin, cout, s.kernel, 2,
                              (s.kernel - 1) / 2));
        cin = cout;
    }
    return x;
}

// stride-2 deconvolution stages back to full resolution, then a linear
// refinement conv at the output scale
Var decoder_stack(Ctx& c, const ModelSpec& s, Var x) {
    int cin = s.hidden;
    for (int i = 0; i < s.n_down; ++i) {
        const int cout = std::max(s.out_frames * s.channels, cin / 2);
        x = gelu(*c.g, tconv_l(c, "dec" + std::to_string(i), x, cin, cout, 4, 2, 1));
        cin = cout;
    }
    return conv_l(c, "head", x, cin, s.out_frames * s.channels, s.kernel, 1, (s.kernel - 1) / 2);
}

Var build_st_alternet(Ctx& c, const ModelSpec& s, Var x, Var& latent) {
    x = encoder_stack(c, s, x);
    const int h = spatial_h(c, x), w = spatial_w(c, x);
    for (int i = 0; i < s.depth; ++i) {
        const std::string blk = "blk" + std::to_string(i);
        Var zh = gelu(*c.g, conv_l(c, blk + ".conv", x, s.hidden, s.hidden, s.kernel, 1,
                                   (s.kernel - 1) / 2));
        Var tok = to_tokens(*c.g, x);
        Var zl = from_tokens(*c.g, attn_l(c, blk + ".attn", tok, s.hidden, s.heads), h, w);
        x = ln_channels(c, blk + ".ln", add(*c.g, zh, zl), s.hidden);
    }
    latent = x;
    return decoder_stack(c, s, x);
}

Var build_simvp(Ctx& c, const ModelSpec& s, Var x, Var& latent) {
    x = encoder_stack(c, s, x);
    for (int i = 0; i < s.depth; ++i) {
        Var branch = gelu(*c.g, conv_l(c, "trans" + std::to_string(i), x, s.hidden, s.hidden,
                                       s.kernel, 1, (s.kernel - 1) / 2));
        x = add(*c.g, x, branch);
    }
    latent = x;
    return decoder_stack(c, s, x);
}

Var build_unet(Ctx& c, const ModelSpec& s, Var x, Var& latent) {
    const int base = s.hidden;
    const int pad = (s.kernel - 1) / 2;
    Var e0 = gelu(*c.g, conv_l(c, "enc0", x, s.in_frames * s.channels, base, s.kernel, 1, pad));
    Var d1 = gelu(*c.g, conv_l(c, "down1", e0, base, 2 * base, s.kernel, 2, pad));
    Var d2 = gelu(*c.g, conv_l(c, "down2", d1, 2 * base, 2 * base, s.kernel, 2, pad));
    Var bt = gelu(*c.g, conv_l(c, "bott", d2, 2 * base, 2 * base, s.kernel, 1, pad));
    latent = bt;
    record_feature(c, "enc0", e0);
    record_feature(c, "down1", d1);

    // skip merges as split-kernel 1x1 convolutions: algebraically the same as
    // concatenating the encoder feature and convolving once
    Var u1 = gelu(*c.g, tconv_l(c, "up1", bt, 2 * base, 2 * base, 2, 2));
    record_feature(c, "up1", u1);
    Var m1 = gelu(*c.g, add(*c.g, conv_l(c, "merge1.up", u1, 2 * base, 2 * base, 1, 1, 0),
                            conv_l(c, "merge1.skip", d1, 2 * base, 2 * base, 1, 1, 0)));
    Var u2 = gelu(*c.g, tconv_l(c, "up2", m1, 2 * base, base, 2, 2));
    record_feature(c, "up2", u2);
    Var m2 = gelu(*c.g, add(*c.g, conv_l(c, "merge2.up", u2, base, base, 1, 1, 0),
                            conv_l(c, "merge2.skip", e0, base, base, 1, 1, 0)));
    return conv_l(c, "head", m2, base, s.out_frames * s.channels, s.kernel, 1, pad);
}

Var build_resnet(Ctx& c, const ModelSpec& s, Var x, Var& latent) {
    const int base = s.hidden;
    const int pad = (s.kernel - 1) / 2;
    x = gelu(*c.g, conv_l(c, "stem", x, s.in_frames * s.channels, base, s.kernel, 1, pad));
    x = gelu(*c.g, conv_l(c, "down", x, base, 2 * base, s.kernel, 2, pad));
    for (int i = 0; i < s.depth; ++i) {
        const std::string blk = "blk" + std::to_string(i);
        Var branch = conv_l(c, blk + ".conv1", x, 2 * base, 2 * base, s.kernel, 1, pad);
        branch = gelu(*c.g, branch);
        branch = conv_l(c, blk + ".conv2", branch, 2 * base, 2 * base, s.kernel, 1, pad);
        x = add(*c.g, x, branch);
    }
    latent = x;
    x = gelu(*c.g, tconv_l(c, "up", x, 2 * base, base, 2, 2));
    return conv_l(c, "head", x, base, s.out_frames * s.channels, s.kernel, 1, pad);
}

Var build_mlp_mixer(Ctx& c, const ModelSpec& s, Var x, Var& latent) {
    const int base = s.hidden;
    // two stride-2 stages = 4x patching
    x = gelu(*c.g, conv_l(c, "patch0", x, s.in_frames * s.channels, base, 2, 2, 0));
    x = conv_l(c, "patch1", x, base, base, 2, 2, 0);
    const int h = spatial_h(c, x), w = spatial_w(c, x);
    const int n = h * w;
    Var t = to_tokens(*c.g, x);
    for (int i = 0; i < s.depth; ++i) {
        const std::string blk = "blk" + std::to_string(i);
        // token mixing
        Var u = ln_l(c, blk + ".ln1", t, base);
        u = transpose_last2(*c.g, u);
        u = dense_l(c, blk + ".tok1", u, n, n, true);
        u = gelu(*c.g, u);
        u = dense_l(c, blk + ".tok2", u, n, n, true);
        u = transpose_last2(*c.g, u);
        t = add(*c.g, t, u);
        // channel mixing
        Var v = ln_l(c, blk + ".ln2", t, base);
        v = dense_l(c, blk + ".ch1", v, base, 2 * base, true);
        v = gelu(*c.g, v);
        v = dense_l(c, blk + ".ch2", v, 2 * base, base, true);
        t = add(*c.g, t, v);
    }
    Var grid = from_tokens(*c.g, t, h, w);
    latent = grid;
    Var up = gelu(*c.g, tconv_l(c, "unpatch0", grid, base, base, 2, 2));
    return tconv_l(c, "unpatch1", up, base, s.out_frames * s.channels, 2, 2);
}

}  // namespace

// ===========================================================================
// Model
// ===========================================================================

Model::Model(ModelSpec spec, uint64_t init_seed) : spec_(spec) {
    if (spec_.kernel % 2 == 0) throw std::invalid_argument("model: kernel must be odd");
    if (spec_.hidden < 1 || spec_.depth < 0) throw std::invalid_argument("model: bad spec");
    Graph g;
    Rng rng = Rng::derive(init_seed, 0x696e6974 /* "init" */);
    Tensor dummy({1, spec_.in_frames * spec_.channels, spec_.grid_h, spec_.grid_w});
    Var x = g.input(std::move(dummy));
    build_impl(g, x, false, &params_, &rng, nullptr);
}

Model::Bound Model::build(Graph& g, Var x, bool trainable) const {
    return build_impl(g, x, trainable, nullptr, nullptr, nullptr);
}

Model::Bound Model::build_impl(Graph& g, Var x, bool trainable, ParameterSet* create, Rng* rng,
                               LayerCost* cost) const {
    const Tensor& xv = g.value(x);
    if (xv.ndim() != 4) throw std::invalid_argument("model: input must be [B, T*C, H, W]");
    if (xv.dim(1) != spec_.in_frames * spec_.channels)
        throw std::invalid_argument("model: input has " + std::to_string(xv.dim(1)) +
                                    " channels, spec wants " +
                                    std::to_string(spec_.in_frames * spec_.channels));
    const int down = 1 << 2;  // all architectures reduce spatial dims by 4
    if (xv.dim(2) % down != 0 || xv.dim(3) % down != 0)
        throw std::invalid_argument("model: spatial dims must be divisible by " +
                                    std::to_string(down));
    if (spec_.kind == ModelKind::mlp_mixer && (xv.dim(2) != spec_.grid_h || xv.dim(3) != spec_.grid_w))
        throw std::invalid_argument("mlp_mixer: input grid must match spec grid (token mixer "
                                    "weights are size-bound)");

    Bound bound;
    Ctx c;
    c.g = &g;
    c.trainable = trainable;
    c.ps = &params_;
    c.create = create;
    c.rng = rng;
    c.cost = cost;
    c.bound = &bound;

    Var latent{};
    switch (spec_.kind) {
        case ModelKind::st_alternet: bound.output = build_st_alternet(c, spec_, x, latent); break;
        case ModelKind::simvp: bound.output = build_simvp(c, spec_, x, latent); break;
        case ModelKind::unet: bound.output = build_unet(c, spec_, x, latent); break;
        case ModelKind::resnet: bound.output = build_resnet(c, spec_, x, latent); break;
        case ModelKind::mlp_mixer: bound.output = build_mlp_mixer(c, spec_, x, latent); break;
    }
    bound.latent = latent;
    return bound;
}

Tensor Model::forward(const Tensor& x) const {
    Graph g;
    Bound b = build(g, g.input(x), false);
    return g.value(b.output);
}

std::pair<Tensor, Tensor> Model::forward_with_latent(const Tensor& x) const {
    Graph g;
    Bound b = build(g, g.input(x), false);
    return {g.value(b.output), g.value(b.latent)};
}

LayerCost Model::cost(const std::vector<int>& input_shape) const {
    Graph g;
    LayerCost cost;
    Var x = g.input(Tensor(input_shape));
    build_impl(g, x, false, nullptr, nullptr, &cost);
    return cost;
}

// ===========================================================================
// Cost formulas
// ===========================================================================

LayerCost conv_layer_cost(int kernel, int cin, int cout, int64_t out_positions) {
    return {static_cast<int64_t>(kernel) * kernel * cin * cout * out_positions,
            static_cast<int64_t>(kernel) * kernel * cin * cout + cout};
}

LayerCost tconv_layer_cost(int kernel, int cin, int cout, int64_t in_positions) {
    return {static_cast<int64_t>(kernel) * kernel * cin * cout * in_positions,
            static_cast<int64_t>(kernel) * kernel * cin * cout + cout};
}

LayerCost dense_layer_cost(int in, int out, int64_t rows, bool bias) {
    return {static_cast<int64_t>(in) * out * rows,
            static_cast<int64_t>(in) * out + (bias ? out : 0)};
}

LayerCost attention_layer_cost(int64_t n_positions, int d) {
    return {n_positions * n_positions * d + 3 * n_positions * static_cast<int64_t>(d) * d,
            3 * static_cast<int64_t>(d) * d};
}

LayerCost layer_norm_cost(int d) { return {0, 2 * static_cast<int64_t>(d)}; }

int64_t count_params(const Model& model) { return model.params().total_size(); }

int64_t count_flops(const Model& model, const std::vector<int>& input_shape) {
    return model.cost(input_shape).flops;
}

LayerCost cost_model(const ModelSpec& spec, const std::vector<int>& input_shape) {
    Model m(spec, 1);
    return m.cost(input_shape);
}

}  // namespace sdkd::nn
