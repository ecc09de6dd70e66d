#include "mcan/arch.hpp"

#include <algorithm>
#include <cmath>

namespace mcan {

void ModelConfig::validate() const {
    if (scale < 2 || scale > 4) throw ShapeError("config: scale must be 2, 3 or 4");
    if (D < 1 || K < 1 || M < 1) throw ShapeError("config: D, K, M must be >= 1");
    if (n_mim < 1) throw ShapeError("config: n_mim must be >= 1");
    if (r < 1 || n_mim % r != 0)
        throw ShapeError("config: n_mim " + std::to_string(n_mim) + " not divisible by r " +
                         std::to_string(r));
    if (n_fe.second != n_mim)
        throw ShapeError("config: n_fe.second must equal n_mim (feeds the mapping stage)");
    if (n_eff.first != D * n_mim)
        throw ShapeError("config: n_eff.first must equal D*n_mim, got " +
                         std::to_string(n_eff.first));
    if (n_eff.second != n_mim)
        throw ShapeError("config: n_eff.second must equal n_mim");
    if (rcab_groups < 1 || n_mim % rcab_groups != 0)
        throw ShapeError("config: n_mim not divisible by rcab_groups");
    if (n_l < 1) throw ShapeError("config: n_l must be >= 1");
}

ModelConfig preset(const std::string& name, int scale) {
    ModelConfig c;
    c.scale = scale;
    if (name == "MCAN" || name == "MCAN-FAST") {
        c.n_fe = {64, 32}; c.n_mim = 32; c.n_eff = {96, 32}; c.n_l = 256; c.r = 8;
        if (name == "MCAN-FAST") c.sigmoid_variant = SigmoidVariant::Fast;
    } else if (name == "MCAN-M") {
        c.n_fe = {64, 24}; c.n_mim = 24; c.n_eff = {72, 24}; c.n_l = 128; c.r = 8;
    } else if (name == "MCAN-S") {
        c.n_fe = {32, 16}; c.n_mim = 16; c.n_eff = {48, 16}; c.n_l = 64; c.r = 8;
    } else if (name == "MCAN-T") {
        c.n_fe = {16, 8}; c.n_mim = 8; c.n_eff = {24, 8}; c.n_l = 8; c.r = 4;
        c.rcab_groups = 4;
    } else {
        throw std::invalid_argument("unknown preset '" + name + "'");
    }
    c.validate();
    return c;
}

// --- WeightStore -------------------------------------------------------

int WeightStore::add(const std::string& name, Tensor t) {
    if (by_name.count(name)) throw ShapeError("duplicate weight name '" + name + "'");
    int id = static_cast<int>(entries.size());
    entries.push_back({name, std::move(t)});
    by_name.emplace(name, id);
    return id;
}

int WeightStore::find(const std::string& name) const {
    auto it = by_name.find(name);
    return it == by_name.end() ? -1 : it->second;
}

const Tensor& WeightStore::at(const std::string& name) const {
    int id = find(name);
    if (id < 0) throw ShapeError("no weight named '" + name + "'");
    return entries[id].tensor;
}

void WeightStore::zero_all() {
    for (auto& e : entries) std::fill(e.tensor.data.begin(), e.tensor.data.end(), 0.0f);
}

int64_t WeightStore::total_values() const {
    int64_t n = 0;
    for (const auto& e : entries) n += e.tensor.numel();
    return n;
}

// --- Graph builders ----------------------------------------------------

int Graph::push(Node n) {
    nodes.push_back(std::move(n));
    return static_cast<int>(nodes.size()) - 1;
}

const Node& Graph::checked(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes.size()))
        throw ShapeError("graph: bad node id " + std::to_string(id));
    return nodes[id];
}

int Graph::add_input(int channels) {
    Node n{OpKind::Input, {}};
    n.channels = channels;
    return push(std::move(n));
}

int Graph::add_relu(int in) {
    const Node& src = checked(in);
    Node n{OpKind::Relu, {in}};
    n.channels = src.channels;
    n.upscale = src.upscale;
    return push(std::move(n));
}

int Graph::add_sigmoid(int in) {
    const Node& src = checked(in);
    Node n{OpKind::Sigmoid, {in}};
    n.channels = src.channels;
    n.upscale = src.upscale;
    return push(std::move(n));
}

int Graph::add_fast_sigmoid(int in) {
    const Node& src = checked(in);
    Node n{OpKind::FastSigmoid, {in}};
    n.channels = src.channels;
    n.upscale = src.upscale;
    return push(std::move(n));
}

int Graph::add_gap(int in) {
    const Node& src = checked(in);
    Node n{OpKind::GlobalAvgPool, {in}};
    n.channels = src.channels;
    n.upscale = src.upscale;
    return push(std::move(n));
}

int Graph::add_scale_channels(int features, int gate) {
    const Node& f = checked(features);
    const Node& g = checked(gate);
    if (f.channels != g.channels)
        throw ShapeError("scale_channels: gate channels " + std::to_string(g.channels) +
                         " vs features " + std::to_string(f.channels));
    Node n{OpKind::ScaleChannels, {features, gate}};
    n.channels = f.channels;
    n.upscale = f.upscale;
    return push(std::move(n));
}

int Graph::add_pixel_shuffle(int in, int s) {
    const Node& src = checked(in);
    if (src.channels % (s * s) != 0)
        throw ShapeError("pixel_shuffle node: channels not divisible by s^2");
    Node n{OpKind::PixelShuffle, {in}};
    n.factor = s;
    n.channels = src.channels / (s * s);
    n.upscale = src.upscale * s;
    return push(std::move(n));
}

int Graph::add_bilinear(int in, int s) {
    const Node& src = checked(in);
    Node n{OpKind::Bilinear, {in}};
    n.factor = s;
    n.channels = src.channels;
    n.upscale = src.upscale * s;
    return push(std::move(n));
}

int Graph::add_add(int a, int b) {
    const Node& na = checked(a);
    const Node& nb = checked(b);
    if (na.channels != nb.channels || na.upscale != nb.upscale)
        throw ShapeError("add node: mismatched operands");
    Node n{OpKind::Add, {a, b}};
    n.channels = na.channels;
    n.upscale = na.upscale;
    return push(std::move(n));
}

int Graph::add_concat(const std::vector<int>& ins) {
    if (ins.empty()) throw ShapeError("concat node: no inputs");
    int ch = 0;
    const int up = checked(ins[0]).upscale;
    for (int id : ins) {
        const Node& src = checked(id);
        if (src.upscale != up) throw ShapeError("concat node: mixed resolutions");
        ch += src.channels;
    }
    Node n{OpKind::Concat, ins};
    n.channels = ch;
    n.upscale = up;
    return push(std::move(n));
}

namespace {

float unit_float(std::mt19937_64& rng) {
    // 24 high bits -> [0, 1); identical on every platform
    return static_cast<float>(rng() >> 40) * (1.0f / 16777216.0f);
}

Tensor init_tensor(Shape s, float k, std::mt19937_64* rng) {
    Tensor t(s);
    if (rng)
        for (auto& v : t.data) v = k * (2.0f * unit_float(*rng) - 1.0f);
    return t;
}

}  // namespace

int Graph::add_conv(int in, const ConvSpec& spec, const std::string& name, WeightStore& store,
                    std::mt19937_64* rng) {
    spec.validate();
    const Node& src = checked(in);
    if (src.channels != spec.in_channels)
        throw ShapeError("conv node '" + name + "': input has " + std::to_string(src.channels) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
    const float k = 1.0f / std::sqrt(static_cast<float>(spec.in_channels));
    Node n{OpKind::Conv, {in}};
    n.conv = spec;
    n.name = name;
    n.weight_index = store.add(name + ".w", init_tensor(spec.weight_shape(), k, rng));
    if (spec.has_bias)
        n.bias_index = store.add(name + ".b", init_tensor({spec.out_channels, 1, 1, 1}, k, rng));
    n.channels = spec.out_channels;
    n.upscale = src.upscale;
    return push(std::move(n));
}

// --- model construction --------------------------------------------------

const RcabRef& ArchIndex::rcab(int d, int k, int m) const {
    for (const auto& r : rcabs)
        if (r.d == d && r.k == k && r.m == m) return r;
    throw ShapeError("no RCAB at (" + std::to_string(d) + "," + std::to_string(k) + "," +
                     std::to_string(m) + ")");
}

const FusionRef& ArchIndex::fusion(int d, int k, int m) const {
    for (const auto& f : fusions)
        if (f.d == d && f.k == k && f.m == m) return f;
    throw ShapeError("no fusion conv at (" + std::to_string(d) + "," + std::to_string(k) + "," +
                     std::to_string(m) + ")");
}

namespace {

struct Builder {
    const ModelConfig& cfg;
    Graph& g;
    WeightStore& store;
    std::mt19937_64& rng;
    ArchIndex& index;

    std::string mim_name(int d, int k) const {
        return "mim.d" + std::to_string(d) + ".k" + std::to_string(k);
    }

    // Residual channel attention block on `in`: two 3x3 convs with a ReLU
    // between, gated per channel, plus the identity skip.
    int rcab(int d, int k, int m, int in) {
        const std::string p = mim_name(d, k) + ".r" + std::to_string(m);
        const int c = cfg.n_mim;
        RcabRef ref;
        ref.d = d; ref.k = k; ref.m = m; ref.in = in;
        ref.conv1 = g.add_conv(in, conv3x3(c, c, cfg.rcab_groups), p + ".conv1", store, &rng);
        ref.relu1 = g.add_relu(ref.conv1);
        ref.conv2 = g.add_conv(ref.relu1, conv3x3(c, c, cfg.rcab_groups), p + ".conv2", store, &rng);
        ref.gap = g.add_gap(ref.conv2);
        ref.ca_down = g.add_conv(ref.gap, conv1x1(c, c / cfg.r), p + ".ca.down", store, &rng);
        ref.ca_relu = g.add_relu(ref.ca_down);
        ref.ca_up = g.add_conv(ref.ca_relu, conv1x1(c / cfg.r, c), p + ".ca.up", store, &rng);
        ref.gate = cfg.sigmoid_variant == SigmoidVariant::Fast ? g.add_fast_sigmoid(ref.ca_up)
                                                               : g.add_sigmoid(ref.ca_up);
        ref.rescale = g.add_scale_channels(ref.conv2, ref.gate);
        ref.out = g.add_add(ref.rescale, in);
        index.rcabs.push_back(ref);
        return ref.out;
    }

    int fusion(int d, int k, int m, const std::vector<int>& ins) {
        FusionRef ref;
        ref.d = d; ref.k = k; ref.m = m;
        ref.arity = static_cast<int>(ins.size());
        int src = ins.size() == 1 ? ins[0] : g.add_concat(ins);
        ref.concat = ins.size() == 1 ? -1 : src;
        const int cin = g.nodes[src].channels;
        ref.conv = g.add_conv(src, conv1x1(cin, cfg.n_mim),
                              mim_name(d, k) + ".f" + std::to_string(m), store, &rng);
        index.fusions.push_back(ref);
        return ref.conv;
    }

    // One MCAB: M+1 pointwise fusion convs interleaved with M attention
    // blocks. `a` is the incoming head, `prev` the previous block's fusion
    // outputs (cross connections; empty for the first block or when the
    // multi-connected wiring is disabled). Returns the M+1 fusion outputs.
    std::vector<int> mcab(int d, int k, int a, const std::vector<int>& prev) {
        const int M = cfg.M;
        std::vector<int> f(M + 1);
        std::vector<int> ins{a};
        if (!prev.empty()) {
            ins.push_back(prev[0]);      // F_d^{k-1,1}
            ins.push_back(prev[M]);      // F_d^{k-1,M+1}
        }
        f[0] = fusion(d, k, 1, ins);
        for (int m = 2; m <= M + 1; ++m) {
            int or_prev = rcab(d, k, m - 1, f[m - 2]);
            ins = {or_prev};
            if (cfg.mim_connections) {
                if (m <= M && !prev.empty()) ins.push_back(prev[m]);  // F_d^{k-1,m+1}
                for (int j = 0; j < m - 1; ++j) ins.push_back(f[j]);  // F_d^{k,1..m-1}
            }
            f[m - 1] = fusion(d, k, m, ins);
        }
        index.fusion_out[d][k] = f;
        return f;
    }

    // One cell: K MCABs. With the multi-connected wiring each block chains
    // on its predecessor's fusion outputs; the ablated form keeps K
    // independent chains, one per head.
    std::vector<int> mcac(int d, const std::vector<int>& heads) {
        std::vector<int> out(cfg.K);
        std::vector<int> prev;
        for (int k = 0; k < cfg.K; ++k) {
            std::vector<int> f = mcab(d, k, heads[k], cfg.mim_connections ? prev : std::vector<int>{});
            out[k] = f[cfg.M];
            prev = std::move(f);
        }
        return out;
    }
};

}  // namespace

Model build(const ModelConfig& config, uint64_t seed) {
    config.validate();
    Model m;
    m.config = config;
    std::mt19937_64 rng(seed);
    Graph& g = m.graph;
    WeightStore& store = m.weights;
    ArchIndex& ix = m.index;
    ix.fusion_out.assign(config.D, std::vector<std::vector<int>>(config.K));
    Builder b{config, g, store, rng, ix};

    m.input = g.add_input(3);

    ix.fe_conv1 = g.add_conv(m.input, conv3x3(3, config.n_fe.first), "fe.conv1", store, &rng);
    ix.fe_relu = g.add_relu(ix.fe_conv1);
    ix.fe_conv2 = g.add_conv(ix.fe_relu, conv3x3(config.n_fe.first, config.n_fe.second),
                             "fe.conv2", store, &rng);
    const int f0 = ix.fe_conv2;

    // first cell consumes F_0 on every head
    std::vector<int> heads(config.K, f0);
    for (int d = 0; d < config.D; ++d) {
        heads = b.mcac(d, heads);
        ix.edges.push_back(heads[config.K - 1]);
    }

    int f_eff;
    if (config.eff_enabled) {
        ix.eff_concat = g.add_concat(ix.edges);
        ix.eff_conv1 = g.add_conv(ix.eff_concat, conv3x3(config.D * config.n_mim, config.n_eff.first),
                                  "eff.fuse", store, &rng);
        ix.eff_relu = g.add_relu(ix.eff_conv1);
        ix.eff_conv2 = g.add_conv(ix.eff_relu, conv3x3(config.n_eff.first, config.n_eff.second),
                                  "eff.reduce", store, &rng);
        f_eff = ix.eff_conv2;
    } else {
        f_eff = ix.edges.back();
    }

    ix.body_add = g.add_add(f_eff, f0);

    const int w = config.upsample_width();
    for (int s : {2, 3, 4}) {
        TailRef tail;
        tail.scale = s;
        const std::string p = "up.x" + std::to_string(s);
        int cur = ix.body_add;
        if (s == 4) {
            tail.convs.push_back(g.add_conv(cur, conv3x3(config.n_mim, 4 * w), p + ".s1", store, &rng));
            cur = g.add_pixel_shuffle(tail.convs.back(), 2);
            tail.convs.push_back(g.add_conv(cur, conv3x3(w, 4 * w), p + ".s2", store, &rng));
            cur = g.add_pixel_shuffle(tail.convs.back(), 2);
        } else {
            tail.convs.push_back(
                g.add_conv(cur, conv3x3(config.n_mim, s * s * w), p + ".s1", store, &rng));
            cur = g.add_pixel_shuffle(tail.convs.back(), s);
        }
        tail.convs.push_back(g.add_conv(cur, conv1x1(w, 3), p + ".out", store, &rng));
        int skip = g.add_bilinear(m.input, s);
        tail.out = g.add_add(tail.convs.back(), skip);
        ix.tails.push_back(tail);
        m.outputs[s] = tail.out;
    }
    return m;
}

// --- evaluation --------------------------------------------------------

std::vector<int> ancestors_of(const Graph& g, int target) {
    std::vector<char> seen(g.nodes.size(), 0);
    std::vector<int> stack{target};
    seen[target] = 1;
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        for (int in : g.nodes[id].inputs)
            if (!seen[in]) {
                seen[in] = 1;
                stack.push_back(in);
            }
    }
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(seen.size()); ++i)
        if (seen[i]) out.push_back(i);
    return out;
}

template <typename T>
void eval_graph(const Graph& g, std::span<const TensorT<T>* const> weights,
                std::span<const int> targets, const std::map<int, TensorT<T>>& overrides,
                bool keep_all, std::vector<std::optional<TensorT<T>>>& values,
                std::vector<Shape>* shapes_out) {
    const int n = static_cast<int>(g.nodes.size());
    values.assign(n, std::nullopt);
    if (shapes_out) shapes_out->assign(n, Shape{});

    // needed set: ancestors of targets, cut at overrides
    std::vector<char> needed(n, 0);
    std::vector<int> stack;
    for (int t : targets) {
        if (t < 0 || t >= n) throw ShapeError("eval: bad target node");
        if (!needed[t]) {
            needed[t] = 1;
            stack.push_back(t);
        }
    }
    while (!stack.empty()) {
        int id = stack.back();
        stack.pop_back();
        if (overrides.count(id)) continue;
        for (int in : g.nodes[id].inputs)
            if (!needed[in]) {
                needed[in] = 1;
                stack.push_back(in);
            }
    }

    // consumer refcounts for freeing intermediates
    std::vector<int> refs(n, 0);
    if (!keep_all) {
        for (int id = 0; id < n; ++id)
            if (needed[id] && !overrides.count(id))
                for (int in : g.nodes[id].inputs) ++refs[in];
        for (int t : targets) ++refs[t];
    }

    for (int id = 0; id < n; ++id) {
        if (!needed[id]) continue;
        auto ov = overrides.find(id);
        if (ov != overrides.end()) {
            values[id] = ov->second;
        } else {
            const Node& node = g.nodes[id];
            auto in = [&](int i) -> const TensorT<T>& {
                const auto& v = values[node.inputs[i]];
                if (!v)
                    throw ShapeError("eval: node " + std::to_string(id) + " reads node " +
                                     std::to_string(node.inputs[i]) +
                                     " which has no value (needs an override?)");
                return *v;
            };
            switch (node.kind) {
                case OpKind::Input:
                    throw ShapeError("eval: graph input has no override value");
                case OpKind::Conv: {
                    const TensorT<T>* bias =
                        node.bias_index >= 0 ? weights[node.bias_index] : nullptr;
                    values[id] = conv2d(in(0), node.conv, *weights[node.weight_index], bias);
                    break;
                }
                case OpKind::Relu: values[id] = relu(in(0)); break;
                case OpKind::Sigmoid: values[id] = sigmoid(in(0)); break;
                case OpKind::FastSigmoid: values[id] = fast_sigmoid(in(0)); break;
                case OpKind::GlobalAvgPool: values[id] = global_avg_pool(in(0)); break;
                case OpKind::ScaleChannels: values[id] = scale_channels(in(0), in(1)); break;
                case OpKind::PixelShuffle: values[id] = pixel_shuffle(in(0), node.factor); break;
                case OpKind::Bilinear: values[id] = bilinear_resize(in(0), node.factor); break;
                case OpKind::Add: values[id] = add(in(0), in(1)); break;
                case OpKind::Concat: {
                    std::vector<const TensorT<T>*> parts;
                    parts.reserve(node.inputs.size());
                    for (size_t i = 0; i < node.inputs.size(); ++i) parts.push_back(&in(static_cast<int>(i)));
                    values[id] = concat_channels(parts);
                    break;
                }
            }
        }
        if (shapes_out) (*shapes_out)[id] = values[id]->shape;
        if (!keep_all && ov == overrides.end()) {
            // overridden nodes never consumed their inputs
            for (int in_id : g.nodes[id].inputs)
                if (values[in_id] && --refs[in_id] == 0) values[in_id].reset();
        }
    }
}

template void eval_graph(const Graph&, std::span<const TensorT<float>* const>,
                         std::span<const int>, const std::map<int, TensorT<float>>&, bool,
                         std::vector<std::optional<TensorT<float>>>&, std::vector<Shape>*);
template void eval_graph(const Graph&, std::span<const TensorT<double>* const>,
                         std::span<const int>, const std::map<int, TensorT<double>>&, bool,
                         std::vector<std::optional<TensorT<double>>>&, std::vector<Shape>*);

std::vector<const Tensor*> weight_pointers(const WeightStore& store) {
    std::vector<const Tensor*> out;
    out.reserve(store.entries.size());
    for (const auto& e : store.entries) out.push_back(&e.tensor);
    return out;
}

Tensor eval_single(const Model& m, int target, std::map<int, Tensor> overrides) {
    auto wp = weight_pointers(m.weights);
    std::vector<std::optional<Tensor>> values;
    const int targets[] = {target};
    eval_graph<float>(m.graph, wp, targets, overrides, false, values);
    return std::move(*values[target]);
}

Tensor forward(const Model& m, const Tensor& i_lr) {
    if (i_lr.shape.c != 3)
        throw ShapeError("forward: expected 3-channel input, got " + i_lr.shape.str());
    if (i_lr.shape.h < 8 || i_lr.shape.w < 8)
        throw ShapeError("forward: spatial dims must be >= 8, got " + i_lr.shape.str());
    return eval_single(m, m.output_node(), {{m.input, i_lr}});
}

Tensor feature_extract(const Model& m, const Tensor& i_lr) {
    if (i_lr.shape.c != 3)
        throw ShapeError("feature_extract: expected 3-channel input, got " + i_lr.shape.str());
    return eval_single(m, m.index.fe_conv2, {{m.input, i_lr}});
}

std::vector<Tensor> mim_forward(const Model& m, const Tensor& f0) {
    if (f0.shape.c != m.config.n_mim)
        throw ShapeError("mim_forward: expected " + std::to_string(m.config.n_mim) +
                         " channels, got " + f0.shape.str());
    auto wp = weight_pointers(m.weights);
    std::vector<std::optional<Tensor>> values;
    std::map<int, Tensor> overrides{{m.index.fe_conv2, f0}};
    eval_graph<float>(m.graph, wp, m.index.edges, overrides, false, values);
    std::vector<Tensor> out;
    for (int e : m.index.edges) out.push_back(std::move(*values[e]));
    return out;
}

Tensor eff_forward(const Model& m, const std::vector<Tensor>& edges) {
    if (edges.size() != m.index.edges.size())
        throw ShapeError("eff_forward: expected " + std::to_string(m.index.edges.size()) +
                         " edge tensors, got " + std::to_string(edges.size()));
    if (!m.config.eff_enabled) return edges.back();
    std::map<int, Tensor> overrides;
    for (size_t i = 0; i < edges.size(); ++i) overrides.emplace(m.index.edges[i], edges[i]);
    return eval_single(m, m.index.eff_conv2, std::move(overrides));
}

Tensor reconstruct(const Model& m, const Tensor& f_eff, const Tensor& f0, const Tensor& i_lr) {
    if (f_eff.shape != f0.shape)
        throw ShapeError("reconstruct: F_EFF shape " + f_eff.shape.str() + " vs F_0 " +
                         f0.shape.str());
    int f_eff_node = m.config.eff_enabled ? m.index.eff_conv2 : m.index.edges.back();
    std::map<int, Tensor> overrides{
        {f_eff_node, f_eff}, {m.index.fe_conv2, f0}, {m.input, i_lr}};
    return eval_single(m, m.output_node(), std::move(overrides));
}

Tensor rcab_forward(const Model& m, const RcabRef& block, const Tensor& input) {
    if (input.shape.c != m.config.n_mim)
        throw ShapeError("rcab_forward: expected " + std::to_string(m.config.n_mim) +
                         " channels, got " + input.shape.str());
    return eval_single(m, block.out, {{block.in, input}});
}

std::vector<Tensor> mcab_forward(const Model& m, int d, int k, const Tensor& a,
                                 const std::vector<Tensor>& prev_fusion) {
    const int M = m.config.M;
    const bool wants_prev = m.config.mim_connections && k > 0;
    if (wants_prev && static_cast<int>(prev_fusion.size()) != M + 1)
        throw ShapeError("mcab_forward: block (d=" + std::to_string(d) + ",k=" + std::to_string(k) +
                         ") needs " + std::to_string(M + 1) + " cross features, got " +
                         std::to_string(prev_fusion.size()));
    if (!wants_prev && !prev_fusion.empty())
        throw ShapeError("mcab_forward: block (d=" + std::to_string(d) + ",k=" + std::to_string(k) +
                         ") takes no cross features");

    // override the head input and, for k>0, the previous block's outputs
    std::map<int, Tensor> overrides;
    // the head feeding f1 is its first concat input (or the conv input itself)
    const FusionRef& f1 = m.index.fusion(d, k, 1);
    int head_node = f1.concat >= 0 ? m.graph.nodes[f1.concat].inputs[0]
                                   : m.graph.nodes[f1.conv].inputs[0];
    overrides.emplace(head_node, a);
    if (wants_prev) {
        const auto& prev_ids = m.index.fusion_out[d][k - 1];
        for (int i = 0; i <= M; ++i) overrides.emplace(prev_ids[i], prev_fusion[i]);
    }
    auto wp = weight_pointers(m.weights);
    std::vector<std::optional<Tensor>> values;
    const auto& outs = m.index.fusion_out[d][k];
    eval_graph<float>(m.graph, wp, outs, overrides, false, values);
    std::vector<Tensor> result;
    for (int id : outs) result.push_back(std::move(*values[id]));
    return result;
}

std::vector<Tensor> mcac_forward(const Model& m, int d, const std::vector<Tensor>& heads) {
    if (static_cast<int>(heads.size()) != m.config.K)
        throw ShapeError("mcac_forward: expected " + std::to_string(m.config.K) +
                         " heads, got " + std::to_string(heads.size()));
    for (const auto& h : heads)
        if (h.shape.c != m.config.n_mim)
            throw ShapeError("mcac_forward: head has " + std::to_string(h.shape.c) +
                             " channels, expected " + std::to_string(m.config.n_mim));

    // Block by block so the first cell's replicated-input wiring still
    // accepts arbitrary per-head tensors.
    std::vector<Tensor> out(m.config.K);
    std::vector<Tensor> prev;
    for (int k = 0; k < m.config.K; ++k) {
        bool chained = m.config.mim_connections && k > 0;
        std::vector<Tensor> f =
            mcab_forward(m, d, k, heads[k], chained ? prev : std::vector<Tensor>{});
        out[k] = f[m.config.M];
        prev = std::move(f);
    }
    return out;
}

int64_t count_gate_activations(const Model& m, const Tensor& i_lr) {
    auto wp = weight_pointers(m.weights);
    std::vector<std::optional<Tensor>> values;
    std::vector<Shape> shapes;
    const int targets[] = {m.output_node()};
    std::map<int, Tensor> overrides{{m.input, i_lr}};
    eval_graph<float>(m.graph, wp, targets, overrides, false, values, &shapes);
    int64_t total = 0;
    for (const auto& r : m.index.rcabs) total += shapes[r.gate].numel();
    return total;
}

}  // namespace mcan
