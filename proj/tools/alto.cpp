// Command-line front end: corpus generation, training, evaluation,
// visualization, and gradient verification.
//
// Exit codes: 0 success, 1 usage or configuration problem, 2 data problem,
// 3 numerical abort.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "alto/checkpoint.hpp"
#include "alto/config.hpp"
#include "alto/eval.hpp"
#include "alto/trainer.hpp"

namespace {

using namespace alto;

struct Args {
    std::string config, out, corpus, checkpoint;
    std::string layout = "generated_manifest";
    uint64_t seed = 0;
    bool seed_set = false;
    int64_t count = 0;
    bool count_set = false;
    double box_scale = 0.5;
    int64_t batch = 16;
};

RunConfig effective_config(const Args& a, bool required) {
    RunConfig rc;
    if (!a.config.empty()) rc = load_run_config(a.config);
    else if (required) throw ConfigError("--config is required for this command");
    if (a.seed_set) {
        rc.train.seed = a.seed;
        rc.generation.seed = a.seed;
    }
    return rc;
}

std::vector<ImagePair> load_corpus_checked(const Args& a) {
    if (a.corpus.empty()) throw ConfigError("--corpus is required for this command");
    std::vector<std::string> warnings;
    std::vector<ImagePair> pairs = load_corpus(a.corpus, parse_layout(a.layout), &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
    return pairs;
}

// Model construction for eval/visualize: the network section comes from
// --config when given, otherwise from the settings echoed in the checkpoint.
std::unique_ptr<Model<float>> model_for_checkpoint(const Args& a) {
    NetworkConfig nc;
    if (!a.config.empty()) {
        nc = load_run_config(a.config).network;
    } else if (!a.checkpoint.empty()) {
        const nlohmann::json header = checkpoint_header(a.checkpoint);
        if (!header.contains("config") || !header["config"].contains("network"))
            throw ConfigError("checkpoint has no network settings; pass --config");
        nc = parse_network_config(header["config"]["network"]);
    } else {
        throw ConfigError("need --checkpoint or --config to build the model");
    }
    auto model = std::make_unique<Model<float>>(nc, a.seed_set ? a.seed : 0);
    if (!a.checkpoint.empty()) load_checkpoint(a.checkpoint, *model);
    return model;
}

int cmd_generate(const Args& a) {
    RunConfig rc = effective_config(a, /*required=*/true);
    if (a.count_set) rc.generation.count = a.count;
    if (rc.generation.count <= 0) throw ConfigError("generation.count must be positive");
    if (a.out.empty()) throw ConfigError("--out is required for generate");
    rc.generation.validate();
    const std::vector<ImagePair> pairs = generate_corpus(rc.generation);
    write_corpus(a.out, pairs, rc.generation);
    std::printf("wrote %zu pairs under %s\n", pairs.size(), a.out.c_str());
    return 0;
}

int cmd_train(const Args& a) {
    RunConfig rc = effective_config(a, /*required=*/true);
    const std::vector<ImagePair> pairs = load_corpus_checked(a);
    Model<float> model(rc.network, rc.train.seed);
    Trainer<float> trainer(model, rc.train);
    const TrainResult res = trainer.train(pairs, a.out, echo_config(rc));
    std::printf("steps=%" PRId64 " final_eval_mace=%.6f identity_mace=%.6f collapse=%s\n",
                res.steps, res.final_eval_mace, res.identity_eval_mace,
                res.collapse_any ? "yes" : "no");
    return 0;
}

int cmd_eval(const Args& a) {
    const std::vector<ImagePair> pairs = load_corpus_checked(a);
    std::unique_ptr<Model<float>> model = model_for_checkpoint(a);
    nlohmann::ordered_json echo = nlohmann::ordered_json::object();
    if (!a.checkpoint.empty()) {
        const nlohmann::json header = checkpoint_header(a.checkpoint);
        if (header.contains("config")) echo = header["config"];
    }
    const std::string id =
        a.checkpoint.empty() ? "untrained"
                             : std::filesystem::path(a.checkpoint).filename().string();
    const EvalReport rep = evaluate(*model, pairs, id, echo, a.batch);
    if (!a.out.empty()) {
        std::filesystem::create_directories(a.out);
        write_report_json(a.out + "/report.json", rep);
        write_report_csv(a.out + "/report.csv", rep);
    }
    std::printf("pairs=%zu mace=%.6f baseline_mace=%.6f\n", rep.ids.size(), rep.mace,
                rep.baseline_mace);
    return 0;
}

int cmd_visualize(const Args& a) {
    const std::vector<ImagePair> pairs = load_corpus_checked(a);
    const int64_t n = a.count_set ? a.count : std::min<int64_t>(8, pairs.size());
    if (n <= 0 || n > static_cast<int64_t>(pairs.size()))
        throw DataError("count " + std::to_string(n) + " exceeds corpus size " +
                        std::to_string(pairs.size()));
    if (a.out.empty()) throw ConfigError("--out is required for visualize");
    std::unique_ptr<Model<float>> model = model_for_checkpoint(a);

    const std::vector<ImagePair> subset(pairs.begin(), pairs.begin() + n);
    const std::vector<Homography> preds = predict_homographies(*model, subset, a.batch);
    std::filesystem::create_directories(a.out);
    for (int64_t i = 0; i < n; ++i) {
        const std::string base = a.out + "/" + subset[i].id;
        write_image(base + "_overlay.ppm", render_overlay(subset[i], preds[i], a.box_scale));
        write_image(base + "_strip.pgm", render_strip(subset[i], preds[i]));
    }
    std::printf("wrote %" PRId64 " overlay/strip pairs under %s\n", n, a.out.c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// Gradient verification: analytic gradients against central finite
// differences in double precision, plus the phase-freezing contract.

constexpr double kFdDenomFloor = 1e-4;

double rel_err(double analytic, double fd) {
    return std::abs(analytic - fd) /
           std::max({kFdDenomFloor, std::abs(analytic), std::abs(fd)});
}

// Max relative error over every component of `x`, where `loss` evaluates the
// scalar objective for a given value of x.
template <typename F>
double fd_max_rel_err(Tensor<double> x, const Tensor<double>& analytic, F loss, double eps) {
    double worst = 0.0;
    for (int64_t i = 0; i < x.shape.numel(); ++i) {
        const double keep = x[i];
        x[i] = keep + eps;
        const double up = loss(x);
        x[i] = keep - eps;
        const double down = loss(x);
        x[i] = keep;
        worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * eps)));
    }
    return worst;
}

struct CheckRow {
    std::string name;
    double max_rel = 0.0;
    double tolerance = 0.0;
    bool pass() const { return max_rel < tolerance; }
};

CheckRow check_bt_loss(uint64_t seed) {
    Rng rng = Rng::derive(seed, 1);
    Tensor<double> a(Shape{8, 16}), b(Shape{8, 16});
    for (int64_t i = 0; i < a.shape.numel(); ++i) a[i] = rng.normal();
    for (int64_t i = 0; i < b.shape.numel(); ++i) b[i] = rng.normal();

    Graph<double> g;
    Var<double> va = g.leaf(a, true), vb = g.leaf(b, true);
    Var<double> l = bt_loss(va, vb, 0.005);
    g.backward(l);
    Tensor<double> ga = va.grad(), gb = vb.grad();

    auto eval_a = [&](const Tensor<double>& x) {
        Graph<double> h;
        return bt_loss(h.constant(x), h.constant(b), 0.005).val()[0];
    };
    auto eval_b = [&](const Tensor<double>& x) {
        Graph<double> h;
        return bt_loss(h.constant(a), h.constant(x), 0.005).val()[0];
    };
    const double worst = std::max(fd_max_rel_err(a, ga, eval_a, 1e-5),
                                  fd_max_rel_err(b, gb, eval_b, 1e-5));
    return {"bt_loss", worst, 1e-4};
}

CheckRow check_gbt_loss(uint64_t seed) {
    Rng rng = Rng::derive(seed, 2);
    Tensor<double> a(Shape{2, 6, 4, 4}), b(Shape{2, 6, 4, 4});
    for (int64_t i = 0; i < a.shape.numel(); ++i) a[i] = rng.normal();
    for (int64_t i = 0; i < b.shape.numel(); ++i) b[i] = rng.normal();

    Graph<double> g;
    Var<double> va = g.leaf(a, true), vb = g.leaf(b, true);
    g.backward(gbt_loss(va, vb, 0.005));
    Tensor<double> ga = va.grad(), gb = vb.grad();

    auto eval_a = [&](const Tensor<double>& x) {
        Graph<double> h;
        return gbt_loss(h.constant(x), h.constant(b), 0.005).val()[0];
    };
    auto eval_b = [&](const Tensor<double>& x) {
        Graph<double> h;
        return gbt_loss(h.constant(a), h.constant(x), 0.005).val()[0];
    };
    const double worst = std::max(fd_max_rel_err(a, ga, eval_a, 1e-5),
                                  fd_max_rel_err(b, gb, eval_b, 1e-5));
    return {"gbt_loss", worst, 1e-4};
}

// Offsets -> homography -> inverse -> grid -> warp -> encoder -> loss, with
// the gradient taken at the offsets.
CheckRow check_full_chain(uint64_t seed) {
    NetworkConfig nc;
    nc.image_h = nc.image_w = 32;
    nc.base_width = 8;
    Model<double> model(nc, seed);
    const CornerSet corners = CornerSet::of_image(32, 32);

    Rng rng = Rng::derive(seed, 3);
    Tensor<double> moving(Shape{2, 1, 32, 32}), fixed(Shape{2, 1, 32, 32});
    for (int64_t i = 0; i < moving.shape.numel(); ++i) moving[i] = rng.uniform();
    for (int64_t i = 0; i < fixed.shape.numel(); ++i) fixed[i] = rng.uniform();
    Tensor<double> offsets(Shape{2, 8});
    for (int64_t i = 0; i < 16; ++i) offsets[i] = rng.uniform(-2.5, 2.5);

    // Builds the chain on a fresh tape; reports the loss and, when asked,
    // the gradient at the offsets.
    auto run = [&](const Tensor<double>& x, Tensor<double>* grad_out) {
        Graph<double> g;
        Var<double> o = g.leaf(x, grad_out != nullptr);
        Var<double> grid = sampling_grid(mat3_inverse(dlt_homography(o, corners)), 32, 32);
        Var<double> warped = grid_sample(g.constant(moving), grid);
        Var<double> fw = model.encoder.forward(g, warped, false);
        Var<double> fb = model.encoder.forward(g, g.constant(fixed), false);
        Var<double> l = gbt_loss(fw, fb, 0.005);
        if (grad_out) {
            g.backward(l);
            *grad_out = o.grad();
        }
        return l.val()[0];
    };

    Tensor<double> go;
    run(offsets, &go);
    auto eval = [&](const Tensor<double>& x) { return run(x, nullptr); };
    // A small probe step: the warp and the activations are piecewise smooth,
    // and a wide step can straddle a kink.
    return {"offsets_chain", fd_max_rel_err(offsets, go, eval, 1e-5), 1e-3};
}

// After a geometry-phase backward, encoder/projector parameters must hold no
// gradient; after a representation-phase backward, registration parameters
// must hold none.
CheckRow check_frozen_groups(uint64_t seed) {
    NetworkConfig nc;
    nc.image_h = nc.image_w = 32;
    nc.base_width = 8;
    Model<double> model(nc, seed);
    const CornerSet corners = CornerSet::of_image(32, 32);

    Rng rng = Rng::derive(seed, 4);
    Tensor<double> moving(Shape{2, 1, 32, 32}), fixed(Shape{2, 1, 32, 32});
    for (int64_t i = 0; i < moving.shape.numel(); ++i) moving[i] = rng.uniform();
    for (int64_t i = 0; i < fixed.shape.numel(); ++i) fixed[i] = rng.uniform();

    bool clean = true;
    {
        Graph<double> g;
        Var<double> mv = g.constant(moving), fx = g.constant(fixed);
        Var<double> est = model.registration.forward(g, mv, fx, true).back();
        Var<double> grid = sampling_grid(mat3_inverse(dlt_homography(est, corners)), 32, 32);
        Var<double> fw = model.encoder.forward(g, grid_sample(mv, grid), false);
        Var<double> fb = model.encoder.forward(g, fx, false);
        g.backward(gbt_loss(fw, fb, 0.005));
        for (Role r : {Role::encoder, Role::projector})
            for (Param<double>* p : model.params(r)) clean = clean && !p->grad_in(g);
        bool any_theta = false;
        for (Param<double>* p : model.params(Role::registration))
            any_theta = any_theta || p->grad_in(g);
        clean = clean && any_theta;
    }
    {
        Graph<double> g;
        Var<double> mv = g.constant(moving), fx = g.constant(fixed);
        Var<double> est = model.registration.forward(g, mv, fx, false).back();
        Var<double> grid = sampling_grid(mat3_inverse(dlt_homography(est, corners)), 32, 32);
        Var<double> fa = model.encoder.forward(g, grid_sample(mv, grid), true);
        Var<double> fb = model.encoder.forward(g, fx, true);
        Var<double> za = model.projector.forward(g, fa, true);
        Var<double> zb = model.projector.forward(g, fb, true);
        g.backward(bt_loss(za, zb, 0.005));
        for (Param<double>* p : model.params(Role::registration))
            clean = clean && !p->grad_in(g);
        bool any_repr = false;
        for (Role r : {Role::encoder, Role::projector})
            for (Param<double>* p : model.params(r)) any_repr = any_repr || p->grad_in(g);
        clean = clean && any_repr;
    }
    return {"frozen_groups", clean ? 0.0 : 1.0, 0.5};
}

int cmd_gradcheck(const Args& a) {
    const uint64_t seed = a.seed_set ? a.seed : 12345;
    const std::vector<CheckRow> rows = {check_bt_loss(seed), check_gbt_loss(seed),
                                        check_full_chain(seed), check_frozen_groups(seed)};
    bool all = true;
    std::printf("%-16s %14s %12s  %s\n", "check", "max_rel_err", "tolerance", "status");
    for (const CheckRow& r : rows) {
        std::printf("%-16s %14.3e %12.1e  %s\n", r.name.c_str(), r.max_rel, r.tolerance,
                    r.pass() ? "PASS" : "FAIL");
        all = all && r.pass();
    }
    if (!all) throw NumericsError("gradient verification failed");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unsupervised multimodal homography estimation"};
    app.require_subcommand(1);

    Args a;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", a.config, "JSON run configuration");
        cmd->add_option("--seed", a.seed, "Seed override")->each([&](const std::string&) {
            a.seed_set = true;
        });
        cmd->add_option("--out", a.out, "Output directory");
        cmd->add_option("--corpus", a.corpus, "Corpus directory");
        cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file");
        cmd->add_option("--layout", a.layout, "Corpus layout: generated_manifest | paired_dirs");
        cmd->add_option("--count", a.count, "Pair count")->each([&](const std::string&) {
            a.count_set = true;
        });
        cmd->add_option("--box-scale", a.box_scale, "Overlay box side / image side");
        cmd->add_option("--batch", a.batch, "Inference batch size");
    };
    CLI::App* c_generate = app.add_subcommand("generate", "Synthesize a labeled corpus");
    CLI::App* c_train = app.add_subcommand("train", "Run the alternating training loop");
    CLI::App* c_eval = app.add_subcommand("eval", "Corner-error report over a corpus");
    CLI::App* c_visualize = app.add_subcommand("visualize", "Overlay and strip renders");
    CLI::App* c_gradcheck = app.add_subcommand("gradcheck", "Finite-difference verification");
    for (CLI::App* c : {c_generate, c_train, c_eval, c_visualize, c_gradcheck}) add_common(c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (c_generate->parsed()) return cmd_generate(a);
        if (c_train->parsed()) return cmd_train(a);
        if (c_eval->parsed()) return cmd_eval(a);
        if (c_visualize->parsed()) return cmd_visualize(a);
        return cmd_gradcheck(a);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const NumericsError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
