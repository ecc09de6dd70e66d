#pragma once

#include "mcan/arch.hpp"
#include "mcan/image.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace mcan {

struct TrainConfig {
    double lr = 2e-4;
    int64_t halve_every = 400000;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    int batch = 64;
    int64_t max_steps = 0;
    int patch = 64;  // LR crop size
    std::vector<int> scales{2};
    uint64_t seed = 0;
    int64_t checkpoint_every = 0;  // 0: final checkpoint only
    int64_t log_every = 1;

    void validate() const;
};

// Gradients aligned index-for-index with the model's WeightStore entries.
struct GradStore {
    std::vector<Tensor> grads;

    const Tensor& by_name(const WeightStore& store, const std::string& name) const;
};

struct AdamState {
    std::vector<Tensor> m, v;
    int64_t step = 0;

    void init(const WeightStore& store);
};

double l1_loss(const Tensor& pred, const Tensor& target);
Tensor l1_loss_grad(const Tensor& pred, const Tensor& target);

// Reverse walk over the evaluated graph; `values` must come from a
// keep_all eval of `output`. Produces a gradient for every store entry
// (zero for weights off the active path).
GradStore graph_backward(const Graph& g, const WeightStore& store,
                         const std::vector<std::optional<Tensor>>& values, int output,
                         const Tensor& output_grad);

// L1 loss and its gradients for one (LR, HR) pair at the model's active scale.
std::pair<double, GradStore> backward(const Model& m, const Tensor& i_lr, const Tensor& i_hr);

// Bias-corrected Adam update; increments the step counter.
void adam_step(WeightStore& store, const GradStore& grads, AdamState& state, double lr,
               const TrainConfig& cfg);

double lr_schedule(int64_t step, const TrainConfig& cfg);

// --- data ----------------------------------------------------------------

struct SrDataset {
    struct Pair {
        Tensor lr, hr;  // (1,3,h,w), [0,1]
    };
    struct Item {
        std::string name;
        std::map<int, Pair> per_scale;  // keyed by scale
    };
    std::vector<Item> items;
};

// Loads every readable PNG under dir (sorted by filename) and precomputes
// the bicubic LR for each requested scale.
SrDataset load_sr_dataset(const std::string& dir, const std::vector<int>& scales);

// Builds a dataset from in-memory HR images (toy/synthetic sets).
SrDataset make_sr_dataset(const std::vector<std::pair<std::string, Image>>& images,
                          const std::vector<int>& scales);

struct Batch {
    Tensor lr, hr;
    int scale = 0;
};

// One scale per batch (drawn uniformly from cfg.scales); aligned random
// crops with a dihedral augmentation applied identically to each pair.
// Images too small for the patch are skipped with a warning.
Batch sample_batch(const SrDataset& ds, const TrainConfig& cfg, std::mt19937_64& rng);

struct LossPoint {
    int64_t step;
    double loss;
    double lr;
};

struct TrainResult {
    std::vector<LossPoint> history;
};

// sample -> forward -> backward -> adam with the halving schedule. Writes
// the checkpoint (weights + optimizer state) and a step,loss,lr CSV when
// paths are given. Aborts with NumericError on a non-finite loss.
TrainResult train_loop(Model& m, const SrDataset& ds, const TrainConfig& cfg,
                       const std::string& checkpoint_path = {},
                       const std::string& loss_csv_path = {});

void save_checkpoint(const Model& m, const AdamState& state, const std::string& path);

// --- verification ----------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0;
    std::string worst_weight;
    double analytic = 0, finite_diff = 0;
    int64_t checked = 0;
};

// Central finite differences (h = 1e-3) against analytic gradients over
// every weight of a micro model; the difference oracle runs the graph in
// double precision. Only sensible for configs with a few thousand weights.
GradCheckReport grad_check(const ModelConfig& micro, uint64_t seed);

}  // namespace mcan
