#include "mcan/analysis.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace mcan {

int64_t conv_param_count(const ConvSpec& spec) { return spec.param_count(); }

int64_t conv_mult_adds(const ConvSpec& spec, int64_t out_pixels) {
    return spec.weight_count() * out_pixels;
}

int64_t count_params(const Model& m) {
    int64_t total = 0;
    for (const auto& node : m.graph.nodes)
        if (node.kind == OpKind::Conv) total += node.conv.param_count();
    return total;
}

int64_t count_mult_adds_nodes(const Graph& g, int output, int64_t input_pixels) {
    int64_t total = 0;
    for (int id : ancestors_of(g, output)) {
        const Node& n = g.nodes[id];
        if (n.kind != OpKind::Conv) continue;
        int64_t up = static_cast<int64_t>(n.upscale) * n.upscale;
        total += conv_mult_adds(n.conv, input_pixels * up);
    }
    return total;
}

int64_t count_mult_adds(const Model& m, int hr_h, int hr_w) {
    const int64_t s2 = static_cast<int64_t>(m.config.scale) * m.config.scale;
    const int64_t hr_px = static_cast<int64_t>(hr_h) * hr_w;
    if (hr_px <= 0 || hr_px % s2 != 0)
        throw ShapeError("count_mult_adds: HR size " + std::to_string(hr_w) + "x" +
                         std::to_string(hr_h) + " has pixel count not divisible by scale^2");
    return count_mult_adds_nodes(m.graph, m.output_node(), hr_px / s2);
}

int64_t count_sigmoids(const ModelConfig& config) {
    return static_cast<int64_t>(config.D) * config.K * config.M * config.n_mim;
}

CostReport report(const Model& m, int hr_h, int hr_w) {
    CostReport r;
    r.hr_h = hr_h;
    r.hr_w = hr_w;
    r.scale = m.config.scale;
    r.sigmoid_count = count_sigmoids(m.config);

    const int64_t s2 = static_cast<int64_t>(m.config.scale) * m.config.scale;
    const int64_t hr_px = static_cast<int64_t>(hr_h) * hr_w;
    if (hr_px <= 0 || hr_px % s2 != 0)
        throw ShapeError("report: HR pixel count not divisible by scale^2");
    const int64_t lr_px = hr_px / s2;

    std::vector<char> active(m.graph.nodes.size(), 0);
    for (int id : ancestors_of(m.graph, m.output_node())) active[id] = 1;

    for (size_t id = 0; id < m.graph.nodes.size(); ++id) {
        const Node& n = m.graph.nodes[id];
        if (n.kind != OpKind::Conv) continue;
        LayerCost lc;
        lc.name = n.name;
        lc.params = n.conv.param_count();
        lc.mult_adds = active[id]
                           ? conv_mult_adds(n.conv, lr_px * n.upscale * n.upscale)
                           : 0;
        r.params += lc.params;
        r.mult_adds += lc.mult_adds;
        r.per_layer.push_back(std::move(lc));
    }
    return r;
}

std::string CostReport::table() const {
    std::ostringstream os;
    size_t name_w = 10;
    for (const auto& l : per_layer) name_w = std::max(name_w, l.name.size());
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "layer" << std::right
       << std::setw(12) << "params" << std::setw(16) << "mult-adds" << "\n";
    for (const auto& l : per_layer)
        os << std::left << std::setw(static_cast<int>(name_w) + 2) << l.name << std::right
           << std::setw(12) << l.params << std::setw(16) << l.mult_adds << "\n";
    os << std::left << std::setw(static_cast<int>(name_w) + 2) << "TOTAL" << std::right
       << std::setw(12) << params << std::setw(16) << mult_adds << "\n";
    os << "params: " << params << "\n";
    os << "mult-adds @" << hr_w << "x" << hr_h << " (x" << scale << "): " << mult_adds << " ("
       << std::fixed << std::setprecision(2) << static_cast<double>(mult_adds) / 1e9 << "G)\n";
    os << "sigmoid evaluations per forward: " << sigmoid_count << "\n";
    return os.str();
}

std::string CostReport::records() const {
    std::ostringstream os;
    os << "params " << params << "\n";
    os << "mult_adds " << mult_adds << "\n";
    os << "sigmoid_count " << sigmoid_count << "\n";
    os << "hr " << hr_w << "x" << hr_h << "\n";
    os << "scale " << scale << "\n";
    for (const auto& l : per_layer)
        os << "layer " << l.name << " " << l.params << " " << l.mult_adds << "\n";
    return os.str();
}

}  // namespace mcan
