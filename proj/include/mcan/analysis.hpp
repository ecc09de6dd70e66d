#pragma once

#include "mcan/arch.hpp"

#include <string>
#include <vector>

namespace mcan {

struct LayerCost {
    std::string name;
    int64_t params = 0;
    int64_t mult_adds = 0;
};

struct CostReport {
    int64_t params = 0;
    int64_t mult_adds = 0;
    int64_t sigmoid_count = 0;
    int hr_h = 0, hr_w = 0, scale = 0;
    std::vector<LayerCost> per_layer;

    std::string table() const;
    std::string records() const;
};

int64_t conv_param_count(const ConvSpec& spec);
int64_t conv_mult_adds(const ConvSpec& spec, int64_t out_pixels);

// Every conv in the model, including the inactive scale tails.
int64_t count_params(const Model& m);

// Convolution MACs for one forward pass at the active scale, with the LR
// input sized hr/scale and upsampled layers counted at their true
// resolution. Bias adds, activations, pooling, shuffling and the bilinear
// skip are excluded. hr_h*hr_w must be divisible by scale^2.
int64_t count_mult_adds(const Model& m, int hr_h, int hr_w);

// Graph-level counter: MACs of convs reaching `output`, where the graph
// input carries `input_pixels` spatial samples.
int64_t count_mult_adds_nodes(const Graph& g, int output, int64_t input_pixels);

// Channel-attention gate evaluations per forward pass: D*K*M*n_mim.
int64_t count_sigmoids(const ModelConfig& config);

CostReport report(const Model& m, int hr_h, int hr_w);

}  // namespace mcan
