#include "alto/data.hpp"

#include <unistd.h>

#include <cmath>
#include <filesystem>

#include <gtest/gtest.h>

#include "testutil.hpp"

using namespace alto;
namespace fs = std::filesystem;

namespace {

// Fresh scratch directory per test, removed on destruction.
struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() /
               (tag + "_" + std::to_string(::getpid()) + "_" +
                std::to_string(reinterpret_cast<uintptr_t>(this)))) {
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

GenerationConfig small_config() {
    GenerationConfig cfg;
    cfg.patch_size = 32;
    cfg.rho = 6.0;
    cfg.count = 6;
    cfg.seed = 17;
    return cfg;
}

} // namespace

TEST(Modality, ParseAndNameRoundTrip) {
    for (const char* name : {"identity", "invert", "edge_magnitude", "gamma_posterize"})
        EXPECT_STREQ(modality_name(parse_modality(name)), name);
    EXPECT_THROW(parse_modality("sepia"), ConfigError);
}

TEST(Modality, InvertFlipsValues) {
    Image<float> img(1, 8, 8);
    img.data.fill(0.25f);
    const Image<float> out = modality_transform(img, Modality::invert);
    for (int64_t i = 0; i < out.data.numel(); ++i) EXPECT_FLOAT_EQ(out.data[i], 0.75f);
}

TEST(Modality, GammaPosterizeLevels) {
    Image<float> img(1, 8, 8);
    img.data.fill(0.49f); // sqrt -> 0.7, nearest of 8 levels -> 5/7
    const Image<float> out = modality_transform(img, Modality::gamma_posterize);
    for (int64_t i = 0; i < out.data.numel(); ++i) EXPECT_NEAR(out.data[i], 5.0 / 7.0, 1e-6);
}

TEST(Modality, EdgeMagnitudeOfRamp) {
    // Horizontal unit ramp: Sobel x response is 8/(w-1), y response zero;
    // after the 1/4 scaling every interior pixel reads 2/(w-1).
    const int64_t w = 17, h = 9;
    Image<float> img(1, h, w);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x)
            img.at(0, y, x) = static_cast<float>(x) / static_cast<float>(w - 1);
    const Image<float> out = modality_transform(img, Modality::edge_magnitude);
    for (int64_t y = 1; y < h - 1; ++y)
        for (int64_t x = 1; x < w - 1; ++x)
            EXPECT_NEAR(out.at(0, y, x), 2.0 / static_cast<double>(w - 1), 1e-6) << y << "," << x;
}

TEST(GenerationConfig, ValidationRules) {
    GenerationConfig cfg = small_config();
    EXPECT_NO_THROW(cfg.validate());

    GenerationConfig bad = cfg;
    bad.patch_size = 8;
    EXPECT_THROW(bad.validate(), ConfigError);

    bad = cfg;
    bad.rho = 16.0; // not < patch_size/2
    EXPECT_THROW(bad.validate(), ConfigError);

    bad = cfg;
    bad.modality_b = "nope";
    EXPECT_THROW(bad.validate(), ConfigError);

    bad = cfg;
    bad.count = -1;
    EXPECT_THROW(bad.validate(), ConfigError);

    bad = cfg;
    bad.source_count = 0;
    EXPECT_THROW(bad.validate(), ConfigError);

    EXPECT_EQ(small_config().margin(), 6);
}

TEST(GeneratePair, WarpingMovingByTruthRecoversFixed) {
    // The operative consistency of a sample: the truth homography must warp
    // the moving image back onto the fixed one far better than the raw
    // misaligned pair matches.
    GenerationConfig cfg = small_config();
    cfg.patch_size = 64;
    cfg.rho = 8.0;
    cfg.count = 10;
    const auto pairs = generate_corpus(cfg);
    ASSERT_EQ(pairs.size(), 10u);

    const int64_t margin = cfg.margin() + 2;
    for (const ImagePair& pr : pairs) {
        ASSERT_TRUE(pr.truth.has_value());
        const Image<float> aligned = warp_image(pr.moving, *pr.truth);
        const double aligned_psnr = psnr(aligned, pr.fixed, margin);
        const double raw_psnr = psnr(pr.moving, pr.fixed, margin);
        // The contour filaments in the source textures are only ~1.4 px wide,
        // so one bilinear resample costs real fidelity; 25 dB still separates
        // cleanly from the misaligned raw pair, which sits around 12-16 dB.
        EXPECT_GT(aligned_psnr, 25.0) << pr.id;
        EXPECT_GT(aligned_psnr, raw_psnr + 6.0) << pr.id;
    }
}

TEST(GeneratePair, CornerDisplacementBounded) {
    GenerationConfig cfg = small_config();
    cfg.count = 40;
    const auto pairs = generate_corpus(cfg);
    const CornerSet corners = CornerSet::of_image(static_cast<int>(cfg.patch_size),
                                                  static_cast<int>(cfg.patch_size));
    const double limit = cfg.rho * std::sqrt(2.0) + 1e-9;
    for (const ImagePair& pr : pairs)
        for (const Vec2& c : corners.c) {
            const Vec2 moved = apply_homography(*pr.truth, c);
            EXPECT_LE(distance(moved, c), limit) << pr.id;
        }
}

TEST(GeneratePair, ModalitiesChangeAppearanceNotGeometry) {
    GenerationConfig plain = small_config();
    GenerationConfig styled = small_config();
    styled.modality_a = "invert";
    styled.modality_b = "gamma_posterize";
    const auto p0 = generate_corpus(plain);
    const auto p1 = generate_corpus(styled);
    ASSERT_EQ(p0.size(), p1.size());
    for (size_t i = 0; i < p0.size(); ++i) {
        // Same seeds -> identical truths; appearances differ.
        EXPECT_TRUE(p0[i].truth->matrix().isApprox(p1[i].truth->matrix(), 1e-12));
        double diff = 0.0;
        for (int64_t k = 0; k < p0[i].moving.data.numel(); ++k)
            diff += std::abs(p0[i].moving.data[k] - p1[i].moving.data[k]);
        EXPECT_GT(diff, 1.0);
    }
}

TEST(GenerateCorpus, IdentityBaselineMatchesClosedForm) {
    // Corner offsets are uniform on [-rho, rho]^2, so the identity-prediction
    // corner error averages rho * (sqrt(2) + asinh(1)) / 3 ~= 0.7652 rho.
    GenerationConfig cfg;
    cfg.patch_size = 64;
    cfg.rho = 8.0;
    cfg.count = 4000;
    cfg.seed = 23;
    const auto pairs = generate_corpus(cfg);

    const CornerSet corners = CornerSet::of_image(64, 64);
    double acc = 0.0;
    for (const ImagePair& pr : pairs) acc += ace(*pr.truth, Homography::identity(), corners);
    acc /= static_cast<double>(pairs.size());

    const double expect = 8.0 * (std::sqrt(2.0) + std::asinh(1.0)) / 3.0;
    EXPECT_NEAR(acc, expect, 0.03 * expect);
}

TEST(GenerateCorpus, DeterministicAcrossCalls) {
    const auto a = generate_corpus(small_config());
    const auto b = generate_corpus(small_config());
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].id, b[i].id);
        EXPECT_EQ(testutil::tensor_hash(a[i].moving.data), testutil::tensor_hash(b[i].moving.data));
        EXPECT_EQ(testutil::tensor_hash(a[i].fixed.data), testutil::tensor_hash(b[i].fixed.data));
    }
}

TEST(Corpus, WriteLoadRoundTrip) {
    TempDir dir("alto_corpus_rt");
    const GenerationConfig cfg = small_config();
    const auto pairs = generate_corpus(cfg);
    write_corpus(dir.path.string(), pairs, cfg);

    std::vector<std::string> warnings;
    const auto back = load_corpus(dir.path.string(), CorpusLayout::generated_manifest, &warnings);
    EXPECT_TRUE(warnings.empty());
    ASSERT_EQ(back.size(), pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
        EXPECT_EQ(back[i].id, pairs[i].id); // load sorts by identifier
        // Quantized pixels survive the 8-bit file format bit-identically.
        EXPECT_EQ(testutil::tensor_hash(back[i].moving.data),
                  testutil::tensor_hash(pairs[i].moving.data));
        EXPECT_EQ(testutil::tensor_hash(back[i].fixed.data),
                  testutil::tensor_hash(pairs[i].fixed.data));
        // 17 significant digits round-trip doubles exactly.
        ASSERT_TRUE(back[i].truth.has_value());
        EXPECT_EQ(back[i].truth->row_major(), pairs[i].truth->row_major());
    }
}

TEST(Corpus, PairedDirsMatchesStems) {
    TempDir dir("alto_corpus_pd");
    const GenerationConfig cfg = small_config();
    const auto pairs = generate_corpus(cfg);
    write_corpus(dir.path.string(), pairs, cfg);
    fs::remove(dir.path / "manifest.json");

    const auto back = load_corpus(dir.path.string(), CorpusLayout::paired_dirs);
    EXPECT_EQ(back.size(), pairs.size());
    // Truth records are optional for paired_dirs but picked up when present.
    EXPECT_TRUE(back.front().truth.has_value());

    fs::remove_all(dir.path / "truth");
    const auto no_truth = load_corpus(dir.path.string(), CorpusLayout::paired_dirs);
    EXPECT_FALSE(no_truth.front().truth.has_value());
}

TEST(Corpus, OrphanFilesReportedByName) {
    TempDir dir("alto_corpus_orphan");
    GenerationConfig cfg = small_config();
    cfg.count = 3;
    const auto pairs = generate_corpus(cfg);
    write_corpus(dir.path.string(), pairs, cfg);
    fs::remove(dir.path / "B" / "pair_000001.pgm"); // A-side orphan remains

    std::vector<std::string> warnings;
    const auto loaded =
        load_corpus(dir.path.string(), CorpusLayout::paired_dirs, &warnings);
    EXPECT_EQ(loaded.size(), 2u);
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("A/pair_000001.pgm"), std::string::npos);

    // Without a warning sink the orphan is an error, still naming the file.
    try {
        load_corpus(dir.path.string(), CorpusLayout::paired_dirs);
        FAIL() << "expected DataError";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("A/pair_000001.pgm"), std::string::npos);
    }
}

TEST(Corpus, EmptyIsAWarningNotAnError) {
    TempDir dir("alto_corpus_empty");
    fs::create_directories(dir.path / "A");
    fs::create_directories(dir.path / "B");
    std::vector<std::string> warnings;
    const auto loaded = load_corpus(dir.path.string(), CorpusLayout::paired_dirs, &warnings);
    EXPECT_TRUE(loaded.empty());
    ASSERT_EQ(warnings.size(), 1u);
    EXPECT_NE(warnings[0].find("empty"), std::string::npos);
}

TEST(Corpus, MissingPiecesAreErrors) {
    TempDir dir("alto_corpus_missing");
    EXPECT_THROW(load_corpus((dir.path / "nope").string(), CorpusLayout::paired_dirs), DataError);
    EXPECT_THROW(load_corpus(dir.path.string(), CorpusLayout::generated_manifest), DataError);
    EXPECT_THROW(parse_layout("zipfile"), ConfigError);
}

TEST(Split, FractionsValidatedAndSized) {
    const auto pairs = generate_corpus(small_config()); // 6 pairs
    EXPECT_THROW(split(pairs, 0.8, 0.1, 1), ConfigError);
    EXPECT_THROW(split(pairs, -0.2, 1.2, 1), ConfigError);

    const SplitResult sr = split(pairs, 0.5, 0.5, 1);
    EXPECT_EQ(sr.train.size(), 3u);
    EXPECT_EQ(sr.eval.size(), 3u);

    // No identifier on both sides.
    for (const TrainPair& t : sr.train)
        for (const ImagePair& e : sr.eval) EXPECT_NE(t.id, e.id);
}

TEST(Split, DeterministicPerSeed) {
    const auto pairs = generate_corpus(small_config());
    const SplitResult a = split(pairs, 0.5, 0.5, 7);
    const SplitResult b = split(pairs, 0.5, 0.5, 7);
    ASSERT_EQ(a.train.size(), b.train.size());
    for (size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train[i].id, b.train[i].id);
}

template <typename T>
concept CarriesTruth = requires(T p) { p.truth; };

TEST(Split, TrainViewHasNoTruthByConstruction) {
    // The training-side sample type physically lacks a truth member, so no
    // training-path code can read ground truth even by accident.
    static_assert(!CarriesTruth<TrainPair>);
    static_assert(CarriesTruth<ImagePair>);
    SUCCEED();
}
