#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "alto/trainer.hpp"
#include "testutil.hpp"

namespace alto {
namespace {

NetworkConfig tiny_network() {
    NetworkConfig nc;
    nc.base_width = 4;
    nc.image_h = nc.image_w = 16;
    return nc;
}

TrainConfig tiny_train() {
    TrainConfig tc;
    tc.batch_size = 4;
    tc.epochs = 1;
    tc.seed = 3;
    return tc;
}

GenerationConfig tiny_generation(int64_t count, const std::string& ma = "identity",
                                 const std::string& mb = "identity") {
    GenerationConfig gc;
    gc.patch_size = 16;
    gc.rho = 3.0;
    gc.count = count;
    gc.seed = 11;
    gc.modality_a = ma;
    gc.modality_b = mb;
    return gc;
}

std::vector<TrainPair> drop_truth(const std::vector<ImagePair>& pairs) {
    std::vector<TrainPair> out;
    for (const ImagePair& p : pairs) out.push_back(TrainPair{p.moving, p.fixed, p.id});
    return out;
}

template <typename S>
typename Trainer<S>::Batch first_batch(Trainer<S>& tr, const std::vector<TrainPair>& pairs,
                                       size_t n) {
    std::vector<size_t> idx(n);
    for (size_t i = 0; i < n; ++i) idx[i] = i;
    return tr.make_batch(pairs, idx);
}

uint64_t hash_role(Model<float>& m, Role role) {
    uint64_t h = 1469598103934665603ull;
    for (const Param<float>* p : m.params(role))
        h ^= testutil::tensor_hash(p->value) + 0x9e3779b9 + (h << 6);
    return h;
}

// Pairs whose images carry no spatial structure at all; the encoder cannot
// produce varying features from them, which is the collapse signature.
std::vector<ImagePair> constant_pairs(int64_t count) {
    std::vector<ImagePair> out;
    for (int64_t i = 0; i < count; ++i) {
        Image<float> img(1, 16, 16);
        for (int64_t k = 0; k < img.data.numel(); ++k) img.data[k] = 0.5f;
        out.push_back(ImagePair{img, img, Homography::identity(), "flat_" + std::to_string(i)});
    }
    return out;
}

TEST(TrainConfig, ValidationRejectsBadFields) {
    const TrainConfig good;
    good.validate();

    auto expect_bad = [](auto&& mutate) {
        TrainConfig c;
        mutate(c);
        EXPECT_THROW(c.validate(), ConfigError);
    };
    expect_bad([](TrainConfig& c) { c.epochs = 0; });
    expect_bad([](TrainConfig& c) { c.batch_size = 1; });
    expect_bad([](TrainConfig& c) { c.max_lr = 0.0; });
    expect_bad([](TrainConfig& c) { c.weight_decay = -1e-3; });
    expect_bad([](TrainConfig& c) { c.lambda = 0.0; });
    expect_bad([](TrainConfig& c) { c.geometry_grad_clip = 0.0; });
    expect_bad([](TrainConfig& c) { c.optimizer = "sgd"; });
    expect_bad([](TrainConfig& c) { c.schedule = "cosine"; });
    expect_bad([](TrainConfig& c) { c.loss_geometry = "l1"; });
    expect_bad([](TrainConfig& c) { c.modality_pooling = "max"; });
    expect_bad([](TrainConfig& c) { c.eval_fraction = 1.0; });
    expect_bad([](TrainConfig& c) { c.eval_fraction = -0.1; });
    expect_bad([](TrainConfig& c) { c.eval_every_epochs = -1; });
    expect_bad([](TrainConfig& c) { c.checkpoint_every_epochs = -1; });
}

TEST(Trainer, MakeBatchValidation) {
    Model<float> model(tiny_network(), 1);
    Trainer<float> tr(model, tiny_train());
    const auto pairs = drop_truth(generate_corpus(tiny_generation(4)));

    const std::vector<size_t> one{0};
    EXPECT_THROW(tr.make_batch(pairs, one), DataError);

    std::vector<TrainPair> wrong = pairs;
    wrong[1].moving = Image<float>(1, 8, 8);
    const std::vector<size_t> both{0, 1};
    try {
        tr.make_batch(wrong, both);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find(wrong[1].id), std::string::npos);
    }
}

// Each phase must update exactly its own parameter group; the other group's
// bytes must come through untouched.
TEST(Trainer, AlternationFreezesTheOtherParameterGroup) {
    Model<float> model(tiny_network(), 1);
    Trainer<float> tr(model, tiny_train());
    const auto pairs = drop_truth(generate_corpus(tiny_generation(4)));
    const auto batch = first_batch(tr, pairs, 4);
    tr.set_lr(1e-3);

    for (int round = 0; round < 3; ++round) {
        const uint64_t enc = hash_role(model, Role::encoder);
        const uint64_t proj = hash_role(model, Role::projector);
        const uint64_t reg = hash_role(model, Role::registration);
        const StepStats gs = tr.gl_step(batch);
        EXPECT_TRUE(std::isfinite(gs.loss));
        EXPECT_EQ(hash_role(model, Role::encoder), enc) << "round " << round;
        EXPECT_EQ(hash_role(model, Role::projector), proj) << "round " << round;
        EXPECT_NE(hash_role(model, Role::registration), reg) << "round " << round;

        const uint64_t reg2 = hash_role(model, Role::registration);
        const StepStats ms = tr.marl_step(batch);
        EXPECT_TRUE(std::isfinite(ms.loss));
        EXPECT_EQ(hash_role(model, Role::registration), reg2) << "round " << round;
        EXPECT_NE(hash_role(model, Role::encoder), enc) << "round " << round;
        EXPECT_NE(hash_role(model, Role::projector), proj) << "round " << round;
    }
}

TEST(Trainer, GeometryStepLearnsOnFixedBatch) {
    Model<float> model(tiny_network(), 1);
    Trainer<float> tr(model, tiny_train());
    const auto pairs = drop_truth(generate_corpus(tiny_generation(4)));
    const auto batch = first_batch(tr, pairs, 4);
    tr.set_lr(2e-3);

    double first = 0.0, last = 0.0;
    for (int s = 0; s < 80; ++s) {
        const StepStats st = tr.gl_step(batch);
        if (s == 0) first = st.loss;
        last = st.loss;
    }
    EXPECT_LT(last, 0.95 * first);
}

TEST(Trainer, ModalityStepLearnsOnFixedBatch) {
    Model<float> model(tiny_network(), 1);
    Trainer<float> tr(model, tiny_train());
    const auto pairs = drop_truth(generate_corpus(tiny_generation(4, "invert", "edge_magnitude")));
    const auto batch = first_batch(tr, pairs, 4);
    tr.set_lr(1e-3);

    double first = 0.0, last = 0.0;
    for (int s = 0; s < 40; ++s) {
        const StepStats st = tr.marl_step(batch);
        if (s == 0) first = st.loss;
        last = st.loss;
    }
    EXPECT_LT(last, 0.6 * first);
}

TEST(Trainer, JointStepRequiresTheAblationFlag) {
    Model<float> model(tiny_network(), 1);
    Trainer<float> tr(model, tiny_train());
    const auto pairs = drop_truth(generate_corpus(tiny_generation(4)));
    const auto batch = first_batch(tr, pairs, 4);
    EXPECT_THROW(tr.joint_step(batch), ConfigError);

    TrainConfig joint_cfg = tiny_train();
    joint_cfg.no_alternating = true;
    Model<float> model2(tiny_network(), 1);
    Trainer<float> tr2(model2, joint_cfg);
    const StepStats st = tr2.joint_step(batch);
    EXPECT_TRUE(std::isfinite(st.loss));
    EXPECT_TRUE(std::isfinite(st.grad_norm));
}

TEST(Trainer, VariantLossesRunFinite) {
    TrainConfig mse_cfg = tiny_train();
    mse_cfg.loss_geometry = "mse";
    Model<float> m1(tiny_network(), 1);
    Trainer<float> t1(m1, mse_cfg);
    const auto pairs = drop_truth(generate_corpus(tiny_generation(4)));
    const auto batch = first_batch(t1, pairs, 4);
    EXPECT_TRUE(std::isfinite(t1.gl_step(batch).loss));

    TrainConfig loc_cfg = tiny_train();
    loc_cfg.modality_pooling = "none";
    Model<float> m2(tiny_network(), 1);
    Trainer<float> t2(m2, loc_cfg);
    EXPECT_TRUE(std::isfinite(t2.marl_step(batch).loss));
}

TEST(Trainer, TrainBookkeepingAndMetricsSchema) {
    Model<float> model(tiny_network(), 1);
    TrainConfig tc = tiny_train();
    tc.epochs = 2;
    tc.batch_size = 4;
    tc.eval_fraction = 0.25;
    tc.eval_every_epochs = 1;
    tc.checkpoint_every_epochs = 0;
    Trainer<float> tr(model, tc);

    const auto corpus = generate_corpus(tiny_generation(12));
    const TrainResult res = tr.train(corpus);

    // 9 train pairs at batch 4 → two full batches, remainder 1 dropped.
    EXPECT_EQ(res.steps, 4);
    ASSERT_EQ(res.metrics.size(), 8u + 2u);
    EXPECT_TRUE(std::isfinite(res.final_eval_mace));
    EXPECT_TRUE(std::isfinite(res.identity_eval_mace));

    const std::set<std::string> step_keys{"t", "phase", "loss", "lr", "grad_norm",
                                          "collapse_flag"};
    const std::set<std::string> eval_keys{"epoch", "split", "mace"};
    int64_t expect_t = 0;
    int n_step = 0, n_eval = 0;
    for (const std::string& line : res.metrics) {
        const auto j = nlohmann::json::parse(line);
        std::set<std::string> keys;
        for (auto it = j.begin(); it != j.end(); ++it) keys.insert(it.key());
        if (j.contains("split")) {
            EXPECT_EQ(keys, eval_keys);
            EXPECT_EQ(j["split"], "eval");
            ++n_eval;
        } else {
            EXPECT_EQ(keys, step_keys);
            const std::string phase = j["phase"];
            EXPECT_TRUE(phase == "geometry" || phase == "modality") << phase;
            EXPECT_EQ(j["t"].get<int64_t>(), expect_t / 2);
            ++expect_t;
            ++n_step;
        }
    }
    EXPECT_EQ(n_step, 8);
    EXPECT_EQ(n_eval, 2);
}

TEST(Trainer, SameSeedSameMetrics) {
    const auto corpus = generate_corpus(tiny_generation(8));
    TrainConfig tc = tiny_train();
    tc.eval_fraction = 0.25;
    tc.checkpoint_every_epochs = 0;

    Model<float> m1(tiny_network(), 7);
    const TrainResult r1 = Trainer<float>(m1, tc).train(corpus);
    Model<float> m2(tiny_network(), 7);
    const TrainResult r2 = Trainer<float>(m2, tc).train(corpus);

    ASSERT_EQ(r1.metrics.size(), r2.metrics.size());
    for (size_t i = 0; i < r1.metrics.size(); ++i) EXPECT_EQ(r1.metrics[i], r2.metrics[i]);
}

TEST(Trainer, EmptyTrainSplitThrows) {
    Model<float> model(tiny_network(), 1);
    TrainConfig tc = tiny_train();
    tc.eval_fraction = 0.9;
    Trainer<float> tr(model, tc);
    const auto corpus = generate_corpus(tiny_generation(2));  // 2·0.1 rounds to 0 train
    EXPECT_THROW(tr.train(corpus), DataError);
}

TEST(Trainer, NonFiniteBatchNamesEpochAndBatch) {
    Model<float> model(tiny_network(), 1);
    TrainConfig tc = tiny_train();
    tc.batch_size = 2;
    tc.eval_fraction = 0.0;
    Trainer<float> tr(model, tc);

    std::vector<ImagePair> corpus = constant_pairs(2);
    corpus[0].moving.data[0] = std::numeric_limits<float>::quiet_NaN();
    corpus[1].moving.data[0] = std::numeric_limits<float>::quiet_NaN();
    try {
        tr.train(corpus);
        FAIL() << "expected NumericsError";
    } catch (const NumericsError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("epoch 0"), std::string::npos) << msg;
        EXPECT_NE(msg.find("batch 0"), std::string::npos) << msg;
    }
}

TEST(DetectCollapse, FlagsConstantFeatures) {
    Model<float> model(tiny_network(), 1);
    const CollapseReport r = detect_collapse(model, constant_pairs(4), 4);
    EXPECT_TRUE(r.flag);
    EXPECT_LT(r.spatial_variance, kCollapseVarianceEps);
}

TEST(DetectCollapse, FlagsIdentityPredictionsOnMisalignedProbe) {
    // A zero-initialized head proposes the identity for every pair; on a probe
    // whose misalignment is ~2.3 px that is the "stuck at identity" signature.
    Model<float> model(tiny_network(), 1);
    const auto probe = generate_corpus(tiny_generation(8));
    const CollapseReport r = detect_collapse(model, probe, 4);
    EXPECT_TRUE(r.flag);
    EXPECT_LT(r.mean_offset_px, kCollapseOffsetEps);
    EXPECT_GT(r.identity_mace, 1.0);
    EXPECT_GT(r.spatial_variance, kCollapseVarianceEps);
}

TEST(DetectCollapse, AcceptsIdentityWhenProbeIsAligned) {
    // With ρ = 0 the identity is the right answer, so near-zero offsets must
    // not be flagged.
    Model<float> model(tiny_network(), 1);
    GenerationConfig gc = tiny_generation(8);
    gc.rho = 0.0;
    const CollapseReport r = detect_collapse(model, generate_corpus(gc), 4);
    EXPECT_FALSE(r.flag);
    EXPECT_LT(r.identity_mace, 1e-9);
}

TEST(DetectCollapse, EmptyProbeThrows) {
    Model<float> model(tiny_network(), 1);
    EXPECT_THROW(detect_collapse(model, {}, 4), DataError);
}

TEST(Trainer, CollapseFlagHonorsWarmupWindow) {
    // Constant images trip the variance condition from step one, but the
    // in-loop flag must stay quiet until the warm-up window has passed.
    Model<float> model(tiny_network(), 1);
    TrainConfig tc = tiny_train();
    tc.batch_size = 2;
    tc.eval_fraction = 0.0;
    tc.eval_every_epochs = 0;
    tc.checkpoint_every_epochs = 0;
    Trainer<float> tr(model, tc);

    const TrainResult res = tr.train(constant_pairs(2 * (kCollapseWarmupSteps + 3)));
    ASSERT_TRUE(res.collapse_any);
    for (const std::string& line : res.metrics) {
        const auto j = nlohmann::json::parse(line);
        if (!j.contains("t")) continue;
        const int64_t t = j["t"].get<int64_t>();
        const bool flag = j["collapse_flag"].get<bool>();
        if (t < kCollapseWarmupSteps)
            EXPECT_FALSE(flag) << "t=" << t;
        else
            EXPECT_TRUE(flag) << "t=" << t;
    }
}

}  // namespace
}  // namespace alto
