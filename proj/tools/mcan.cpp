// Command-line front end: count / upscale / train / eval / inspect-weights.
// Exit codes: 0 ok, 2 usage, 3 file format or CRC, 4 shape mismatch,
// 5 numeric failure.

#include "mcan/analysis.hpp"
#include "mcan/arch.hpp"
#include "mcan/image.hpp"
#include "mcan/metrics.hpp"
#include "mcan/train.hpp"
#include "mcan/weights.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <fstream>
#include <iostream>

namespace {

struct ModelFlags {
    std::string model = "MCAN";
    int scale = 2;
    bool fast_sigmoid = false;
    bool no_mim = false;
    bool no_eff = false;
};

void add_model_flags(CLI::App* cmd, ModelFlags& f) {
    cmd->add_option("--model", f.model, "preset: MCAN, MCAN-M, MCAN-S, MCAN-T, MCAN-FAST")
        ->capture_default_str();
    cmd->add_option("--scale", f.scale, "upscaling factor (2, 3 or 4)")->capture_default_str();
    cmd->add_flag("--fast-sigmoid", f.fast_sigmoid, "use the fast sigmoid in channel attention");
    cmd->add_flag("--no-mim", f.no_mim, "ablation: drop the multi-connected wiring");
    cmd->add_flag("--no-eff", f.no_eff, "ablation: drop edge feature fusion");
}

mcan::ModelConfig config_from(const ModelFlags& f) {
    mcan::ModelConfig c = mcan::preset(f.model, f.scale);
    if (f.fast_sigmoid) c.sigmoid_variant = mcan::SigmoidVariant::Fast;
    if (f.no_mim) c.mim_connections = false;
    if (f.no_eff) c.eff_enabled = false;
    return c;
}

std::pair<int, int> parse_hr(const std::string& s) {
    auto x = s.find('x');
    if (x == std::string::npos)
        throw CLI::ValidationError("--hr", "expected WIDTHxHEIGHT, e.g. 1280x720");
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
}

int run(int argc, char** argv) {
    CLI::App app{"MCAN super-resolution engine"};
    app.require_subcommand(1);

    uint64_t seed = 0;
    app.add_option("--seed", seed, "build/init seed")->capture_default_str();

    // count
    auto* count = app.add_subcommand("count", "parameter / mult-adds / sigmoid counts");
    count->fallthrough();
    ModelFlags count_flags;
    std::string hr = "1280x720";
    std::string count_format = "table";
    add_model_flags(count, count_flags);
    count->add_option("--hr", hr, "HR size the mult-adds are normalized to")
        ->capture_default_str();
    count->add_option("--format", count_format, "table or records")
        ->check(CLI::IsMember({"table", "records"}));

    // upscale
    auto* up = app.add_subcommand("upscale", "super-resolve one PNG");
    up->fallthrough();
    ModelFlags up_flags;
    std::string up_weights, up_input, up_output;
    bool up_ensemble = false;
    add_model_flags(up, up_flags);
    up->add_option("--weights", up_weights, "weight file")->required();
    up->add_option("--input", up_input, "input PNG")->required();
    up->add_option("--output", up_output, "output PNG")->required();
    up->add_flag("--self-ensemble", up_ensemble, "average the 8 dihedral variants");

    // train
    auto* tr = app.add_subcommand("train", "train from a JSON config");
    tr->fallthrough();
    std::string tr_config, tr_data, tr_out, tr_loss = "loss.csv";
    tr->add_option("--config", tr_config, "JSON training config")->required();
    tr->add_option("--data", tr_data, "directory of HR PNGs")->required();
    tr->add_option("--out", tr_out, "checkpoint path to write")->required();
    tr->add_option("--loss-log", tr_loss, "loss CSV path")->capture_default_str();

    // eval
    auto* ev = app.add_subcommand("eval", "PSNR/SSIM over a dataset directory");
    ev->fallthrough();
    ModelFlags ev_flags;
    std::string ev_weights, ev_data, ev_format = "table";
    bool ev_ensemble = false;
    add_model_flags(ev, ev_flags);
    ev->add_option("--weights", ev_weights, "weight file")->required();
    ev->add_option("--data", ev_data, "directory of HR PNGs")->required();
    ev->add_flag("--self-ensemble", ev_ensemble, "average the 8 dihedral variants");
    ev->add_option("--format", ev_format, "table or records")
        ->check(CLI::IsMember({"table", "records"}));

    // inspect-weights
    auto* ins = app.add_subcommand("inspect-weights", "list weight file entries");
    ins->fallthrough();
    std::string ins_weights;
    ins->add_option("--weights", ins_weights, "weight file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    if (count->parsed()) {
        auto [w, h] = parse_hr(hr);
        mcan::Model model = mcan::build(config_from(count_flags), seed);
        mcan::CostReport rep = mcan::report(model, h, w);
        std::cout << (count_format == "records" ? rep.records() : rep.table());
    } else if (up->parsed()) {
        mcan::Model model = mcan::build(config_from(up_flags), seed);
        mcan::load_weights(up_weights, model);
        mcan::Image in = mcan::load_png(up_input);
        mcan::Tensor x = mcan::to_tensor(in);
        mcan::Tensor y = up_ensemble ? mcan::self_ensemble(model, x) : mcan::forward(model, x);
        mcan::save_png(mcan::to_image(y), up_output);
    } else if (tr->parsed()) {
        std::ifstream f(tr_config);
        if (!f) throw mcan::FormatError("cannot open config '" + tr_config + "'");
        nlohmann::json j = nlohmann::json::parse(f);

        ModelFlags mf;
        mf.model = j.value("model", std::string("MCAN-T"));
        mf.fast_sigmoid = j.value("fast_sigmoid", false);
        mf.no_mim = !j.value("mim_connections", true);
        mf.no_eff = !j.value("eff_enabled", true);
        mcan::TrainConfig tc;
        tc.scales = j.value("scales", std::vector<int>{2});
        mf.scale = tc.scales.front();
        tc.lr = j.value("lr", tc.lr);
        tc.halve_every = j.value("halve_every", tc.halve_every);
        tc.batch = j.value("batch", tc.batch);
        tc.patch = j.value("patch", tc.patch);
        tc.max_steps = j.value("steps", int64_t{0});
        tc.seed = j.value("seed", uint64_t{0});
        tc.checkpoint_every = j.value("checkpoint_every", int64_t{0});
        tc.log_every = j.value("log_every", int64_t{1});

        mcan::Model model = mcan::build(config_from(mf), tc.seed);
        mcan::SrDataset ds = mcan::load_sr_dataset(tr_data, tc.scales);
        try {
            mcan::train_loop(model, ds, tc, tr_out, tr_loss);
        } catch (const mcan::NumericError&) {
            mcan::AdamState state;
            state.init(model.weights);
            mcan::save_checkpoint(model, state, tr_out + ".failed");
            std::cerr << "training aborted; partial checkpoint at " << tr_out << ".failed\n";
            throw;
        }
        std::cout << "checkpoint written to " << tr_out << "\n";
    } else if (ev->parsed()) {
        mcan::Model model = mcan::build(config_from(ev_flags), seed);
        mcan::load_weights(ev_weights, model);
        mcan::EvalReport rep = mcan::evaluate(model, ev_data, ev_flags.scale, ev_ensemble);
        std::cout << (ev_format == "records" ? rep.records() : rep.table());
    } else if (ins->parsed()) {
        std::cout << mcan::inspect_weights(ins_weights);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const mcan::FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const mcan::ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const mcan::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
