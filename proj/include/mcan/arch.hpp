#pragma once

#include "mcan/tensor.hpp"

#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace mcan {

enum class SigmoidVariant { Standard, Fast };

// All architecture hyperparameters. Presets fill these from the published
// configurations; ablation flags switch the wiring variants.
struct ModelConfig {
    int scale = 2;                 // active reconstruction scale
    int D = 3, K = 3, M = 3;       // cells, blocks per cell, attention blocks per block
    std::pair<int, int> n_fe{64, 32};
    int n_mim = 32;
    std::pair<int, int> n_eff{96, 32};
    int n_l = 256;
    int r = 8;                     // channel-attention reduction
    int rcab_groups = 1;
    SigmoidVariant sigmoid_variant = SigmoidVariant::Standard;
    bool mim_connections = true;
    bool eff_enabled = true;

    void validate() const;
    // Feature width carried through the upsampling stages.
    int upsample_width() const { return std::max(n_l / 4, n_mim); }
};

// Table presets: MCAN, MCAN-M, MCAN-S, MCAN-T, MCAN-FAST.
ModelConfig preset(const std::string& name, int scale);

// --- computation graph -----------------------------------------------------

enum class OpKind {
    Input,
    Conv,
    Relu,
    Sigmoid,
    FastSigmoid,
    GlobalAvgPool,
    ScaleChannels,  // inputs: {features, gate}
    PixelShuffle,
    Bilinear,
    Add,
    Concat,
};

struct Node {
    OpKind kind;
    std::vector<int> inputs;
    ConvSpec conv;         // Conv nodes
    int weight_index = -1; // Conv: WeightStore index of the kernel
    int bias_index = -1;   // Conv: WeightStore index of the bias (-1 if none)
    int factor = 1;        // PixelShuffle / Bilinear
    std::string name;      // layer name for Conv nodes

    // Symbolic shape relative to the graph input, fixed at build time.
    int channels = 0;
    int upscale = 1;
};

struct WeightStore {
    struct Entry {
        std::string name;
        Tensor tensor;
    };
    std::vector<Entry> entries;
    std::unordered_map<std::string, int> by_name;

    int add(const std::string& name, Tensor t);
    int find(const std::string& name) const;  // -1 if absent
    const Tensor& at(const std::string& name) const;
    void zero_all();
    int64_t total_values() const;
};

// DAG of layer nodes. Node ids are topological by construction; every adder
// checks channel consistency of its inputs symbolically.
struct Graph {
    std::vector<Node> nodes;

    int add_input(int channels);
    int add_relu(int in);
    int add_sigmoid(int in);
    int add_fast_sigmoid(int in);
    int add_gap(int in);
    int add_scale_channels(int features, int gate);
    int add_pixel_shuffle(int in, int s);
    int add_bilinear(int in, int s);
    int add_add(int a, int b);
    int add_concat(const std::vector<int>& ins);
    // Allocates weight (and bias) entries in `store`; init U(-k, k) with
    // k = 1/sqrt(in_channels) when rng is given, zero otherwise.
    int add_conv(int in, const ConvSpec& spec, const std::string& name, WeightStore& store,
                 std::mt19937_64* rng = nullptr);

private:
    int push(Node n);
    const Node& checked(int id) const;
};

// --- built model -----------------------------------------------------------

struct RcabRef {
    int d, k, m;  // 0-based d, k; 1-based m
    int in;       // the fusion output this block reads
    int conv1, relu1, conv2;
    int gap, ca_down, ca_relu, ca_up, gate, rescale, out;
};

struct FusionRef {
    int d, k, m;     // 1-based m in 1..M+1
    int concat;      // -1 when the conv has a single input
    int conv;
    int arity;       // number of concatenated feature tensors
};

struct TailRef {
    int scale;
    std::vector<int> convs;
    int out;  // node id of I_SR for this scale
};

struct ArchIndex {
    int fe_conv1 = -1, fe_relu = -1, fe_conv2 = -1;
    std::vector<FusionRef> fusions;
    std::vector<RcabRef> rcabs;
    // fusion_out[d][k][m-1] = node id of F_d^{k,m}, m in 1..M+1
    std::vector<std::vector<std::vector<int>>> fusion_out;
    std::vector<int> edges;  // F_d^K for d = 1..D
    int eff_concat = -1, eff_conv1 = -1, eff_relu = -1, eff_conv2 = -1;
    int body_add = -1;  // F_EFF + F_0
    std::vector<TailRef> tails;

    const RcabRef& rcab(int d, int k, int m) const;
    const FusionRef& fusion(int d, int k, int m) const;
};

struct Model {
    ModelConfig config;
    Graph graph;
    WeightStore weights;
    int input = -1;
    std::map<int, int> outputs;  // scale -> I_SR node
    ArchIndex index;

    int output_node() const { return outputs.at(config.scale); }
};

// Full FE -> MIM -> EFF -> reconstruction graph with tails for all of
// x2/x3/x4 (shared body, per-scale tails); `config.scale` picks the
// forward path. Identical (config, seed) builds are bitwise identical.
Model build(const ModelConfig& config, uint64_t seed);

// --- evaluation --------------------------------------------------------

// Evaluates `targets` (and their ancestors) given pinned `overrides`.
// `values` is resized to the node count; with keep_all every computed node
// retains its value, otherwise intermediates are freed once consumed.
template <typename T>
void eval_graph(const Graph& g, std::span<const TensorT<T>* const> weights,
                std::span<const int> targets, const std::map<int, TensorT<T>>& overrides,
                bool keep_all, std::vector<std::optional<TensorT<T>>>& values,
                std::vector<Shape>* shapes_out = nullptr);

extern template void eval_graph(const Graph&, std::span<const TensorT<float>* const>,
                                std::span<const int>, const std::map<int, TensorT<float>>&,
                                bool, std::vector<std::optional<TensorT<float>>>&,
                                std::vector<Shape>*);
extern template void eval_graph(const Graph&, std::span<const TensorT<double>* const>,
                                std::span<const int>, const std::map<int, TensorT<double>>&,
                                bool, std::vector<std::optional<TensorT<double>>>&,
                                std::vector<Shape>*);

std::vector<const Tensor*> weight_pointers(const WeightStore& store);

// Single-target convenience over the model's graph.
Tensor eval_single(const Model& m, int target, std::map<int, Tensor> overrides);

Tensor forward(const Model& m, const Tensor& i_lr);
Tensor feature_extract(const Model& m, const Tensor& i_lr);
std::vector<Tensor> mim_forward(const Model& m, const Tensor& f0);
Tensor eff_forward(const Model& m, const std::vector<Tensor>& edges);
Tensor reconstruct(const Model& m, const Tensor& f_eff, const Tensor& f0, const Tensor& i_lr);
Tensor rcab_forward(const Model& m, const RcabRef& block, const Tensor& input);

// Runs MCAB (d, k) on explicit boundary features: `a` is the incoming head
// and `prev_fusion` the previous block's M+1 fusion outputs (empty for k=0).
// Returns all M+1 fusion outputs of this block.
std::vector<Tensor> mcab_forward(const Model& m, int d, int k, const Tensor& a,
                                 const std::vector<Tensor>& prev_fusion);

// Runs cell d on a K-tuple of heads, returning the next K-tuple.
std::vector<Tensor> mcac_forward(const Model& m, int d, const std::vector<Tensor>& heads);

// Scalar activations pushed through the channel-attention gates in one
// forward pass (the dynamic counterpart of the static gate count).
int64_t count_gate_activations(const Model& m, const Tensor& i_lr);

// Node ids that can reach `target` following graph edges.
std::vector<int> ancestors_of(const Graph& g, int target);

}  // namespace mcan
