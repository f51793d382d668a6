#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sdkd/graph.hpp"
#include "sdkd/rng.hpp"
#include "sdkd/tensor.hpp"

namespace sdkd::nn {

enum class ModelKind { st_alternet, simvp, unet, resnet, mlp_mixer };

const char* kind_name(ModelKind k);
ModelKind kind_from_name(const std::string& name);
bool is_teacher_kind(ModelKind k);

// Named parameter bundle with a flatten/unflatten bijection (insertion order).
class ParameterSet {
public:
    Tensor& add(const std::string& name, Tensor t);
    Tensor& at(const std::string& name);
    const Tensor& at(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<std::string>& names() const { return names_; }
    int64_t total_size() const;

    std::vector<double> flatten() const;
    void unflatten(const std::vector<double>& flat);

private:
    std::vector<std::string> names_;
    std::map<std::string, Tensor> tensors_;
};

struct ModelSpec {
    ModelKind kind = ModelKind::unet;
    int in_frames = 10;
    int out_frames = 10;
    int channels = 1;
    int hidden = 64;   // teacher latent width / student base width
    int depth = 4;     // latent blocks / residual blocks / mixer blocks
    int kernel = 3;    // conv kernel (odd)
    int heads = 4;     // attention only
    int n_down = 2;    // encoder downsampling stages (teachers, unet)
    int grid_h = 32;   // expected grid; only the mixer's token weights bind to it
    int grid_w = 32;

    static ModelSpec teacher_default(ModelKind kind, int in_frames, int out_frames, int channels);
    // student width defaults to round(0.25 * teacher_hidden)
    static ModelSpec student_default(ModelKind kind, int in_frames, int out_frames, int channels,
                                     int teacher_hidden);

    std::string to_json() const;
    static ModelSpec from_json(const std::string& text);
    bool operator==(const ModelSpec& other) const = default;
};

// Per-layer complexity accounting. FLOPs follow the usual MAC-based
// single-layer formulas: conv K^2*cin*cout*N, dense in*out*rows,
// self-attention N^2*d + 3*N*d^2 (QK^T plus the three projections).
// Elementwise and normalization work is not counted.
struct LayerCost {
    int64_t flops = 0;
    int64_t params = 0;
};

// A parameterized model instance. build() lays the architecture onto a graph;
// forward() is the convenience single-tensor path on a throwaway graph.
class Model {
public:
    Model(ModelSpec spec, uint64_t init_seed);

    struct Bound {
        Var output;                                        // [B, out_frames*C, H, W]
        Var latent;                                        // architecture-specific tap
        std::vector<std::pair<std::string, Var>> params;   // build order
        std::vector<std::pair<std::string, Var>> features; // named intermediate taps
    };

    // x: [B, in_frames*C, H, W]; trainable registers parameters as
    // gradient-tracked leaves
    Bound build(Graph& g, Var x, bool trainable) const;

    Tensor forward(const Tensor& x) const;
    // output and latent in one pass, off-tape
    std::pair<Tensor, Tensor> forward_with_latent(const Tensor& x) const;

    const ModelSpec& spec() const { return spec_; }
    ParameterSet& params() { return params_; }
    const ParameterSet& params() const { return params_; }

    LayerCost cost(const std::vector<int>& input_shape) const;

private:
    ModelSpec spec_;
    ParameterSet params_;

    Bound build_impl(Graph& g, Var x, bool trainable, ParameterSet* create, Rng* rng,
                     LayerCost* cost) const;
};

LayerCost conv_layer_cost(int kernel, int cin, int cout, int64_t out_positions);
LayerCost tconv_layer_cost(int kernel, int cin, int cout, int64_t in_positions);
LayerCost dense_layer_cost(int in, int out, int64_t rows, bool bias);
LayerCost attention_layer_cost(int64_t n_positions, int d);
LayerCost layer_norm_cost(int d);

int64_t count_params(const Model& model);
// input_shape: {B, in_frames*C, H, W}
int64_t count_flops(const Model& model, const std::vector<int>& input_shape);
// the same walk, broken out (cost-model params must match count_params)
LayerCost cost_model(const ModelSpec& spec, const std::vector<int>& input_shape);

}  // namespace sdkd::nn
