#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "frontal/eval.hpp"
#include "frontal/rng.hpp"
#include "gradcheck.hpp"

using namespace frontal;
namespace fs = std::filesystem;

namespace {

// Exhaustive pairwise comparison: ties count one half.
double pairwise_auc(const ScoreSet& s) {
    double wins = 0;
    for (double g : s.genuine)
        for (double i : s.imposter) wins += g > i ? 1.0 : (g == i ? 0.5 : 0.0);
    return 100.0 * wins / (static_cast<double>(s.genuine.size()) * s.imposter.size());
}

ScoreSet random_scores(Rng& rng, bool with_ties) {
    ScoreSet s;
    int ng = 3 + static_cast<int>(rng.below(40));
    int ni = 3 + static_cast<int>(rng.below(40));
    for (int i = 0; i < ng; ++i) s.genuine.push_back(rng.uniform(-1, 1) + 0.3);
    for (int i = 0; i < ni; ++i) s.imposter.push_back(rng.uniform(-1, 1));
    if (with_ties) {
        // quantize to force repeated values across both sets
        for (double& v : s.genuine) v = std::round(v * 8) / 8;
        for (double& v : s.imposter) v = std::round(v * 8) / 8;
    }
    return s;
}

}  // namespace

TEST_CASE("embedding: unit norm, determinism, continuity") {
    EmbedderConfig cfg;
    cfg.input_size = 32;
    cfg.channels = {4, 8};
    Embedder emb = Embedder::init(cfg);
    Rng rng(60);
    Tensor img = frontal::testing::random_uniform_tensor({3, 32, 32}, rng, 0.0, 1.0);

    std::vector<double> v = extract_embedding(img, emb);
    double norm = 0;
    for (double x : v) norm += x * x;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));

    std::vector<double> v2 = extract_embedding(img, emb);
    for (size_t i = 0; i < v.size(); ++i) CHECK(v[i] == v2[i]);

    Tensor noisy = img;
    for (long i = 0; i < noisy.size(); ++i) noisy[i] += 1e-6 * (i % 2 ? 1 : -1);
    std::vector<double> vn = extract_embedding(noisy, emb);
    double cos = 0;
    for (size_t i = 0; i < v.size(); ++i) cos += v[i] * vn[i];
    CHECK(cos > 0.999);
}

TEST_CASE("score protocol: counting, passthrough, hand-computed scores") {
    fs::path dir = fs::temp_directory_path() / "frontal_eval_proto";
    fs::remove_all(dir);
    SyntheticDatasetOptions opt;
    opt.n_identities = 2;
    opt.poses = {-30, 30};
    opt.seed = 21;
    Dataset ds = Dataset::load(generate_synthetic_dataset(opt, dir.string()));

    std::vector<int> gallery, probe;
    for (const auto& id : ds.identities()) {
        gallery.push_back(ds.group(id).visible_frontals[0]);
        for (int r : ds.group(id).thermal_profiles) probe.push_back(r);
    }
    REQUIRE(gallery.size() == 2);
    REQUIRE(probe.size() == 4);

    EmbedderConfig ecfg;
    Embedder emb = Embedder::init(ecfg);
    ScoreSet s = score_protocol(ds, gallery, probe, nullptr, emb);
    CHECK(s.genuine.size() == 4);
    CHECK(s.imposter.size() == 4);

    // identity passthrough generator changes nothing
    ScoreSet s2 = score_protocol(ds, gallery, probe, [](const Tensor& t) { return t; }, emb);
    for (size_t i = 0; i < s.genuine.size(); ++i)
        CHECK(s.genuine[i] == s2.genuine[i]);

    // 1-D mean-pixel embedder scored by hand: cosine of 1-vectors is +-1
    EmbeddingFn mean_embed = [](const Tensor& img) {
        double m = 0;
        for (long i = 0; i < img.size(); ++i) m += img[i];
        m /= static_cast<double>(img.size());
        return std::vector<double>{m >= 0 ? 1.0 : -1.0};
    };
    ScoreSet s3 = score_protocol(ds, gallery, probe, nullptr, mean_embed);
    for (double v : s3.genuine) CHECK(v == 1.0);
    for (double v : s3.imposter) CHECK(v == 1.0);

    // probe identity missing from the gallery is an error naming it
    std::vector<int> small_gallery{gallery[0]};
    try {
        score_protocol(ds, small_gallery, probe, nullptr, emb);
        FAIL("expected throw");
    } catch (const std::invalid_argument& e) {
        CHECK(std::string(e.what()).find("id000") != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("roc worked examples") {
    ScoreSet perfect{{0.9, 0.8}, {0.1, 0.2}};
    VerificationReport r = roc_metrics(perfect);
    CHECK(r.auc == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.eer == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.tar_at_far1 == doctest::Approx(100.0).epsilon(1e-12));
    CHECK(r.tar_at_far5 == doctest::Approx(100.0).epsilon(1e-12));

    ScoreSet three_quarters{{0.8, 0.3}, {0.5, 0.1}};
    r = roc_metrics(three_quarters);
    CHECK(r.auc == doctest::Approx(75.0).epsilon(1e-12));

    ScoreSet worked{{0.9, 0.6, 0.4}, {0.5, 0.3, 0.1}};
    r = roc_metrics(worked);
    CHECK(r.eer == doctest::Approx(100.0 / 3.0).epsilon(1e-9));

    CHECK_THROWS_AS(roc_metrics(ScoreSet{{}, {0.1}}), std::invalid_argument);
    CHECK_THROWS_AS(roc_metrics(ScoreSet{{0.1}, {}}), std::invalid_argument);
}

TEST_CASE("trapezoid AUC equals the pairwise statistic on random sets") {
    Rng rng(61);
    for (int trial = 0; trial < 100; ++trial) {
        ScoreSet s = random_scores(rng, trial % 2 == 0);
        VerificationReport r = roc_metrics(s);
        CHECK(std::fabs(r.auc - pairwise_auc(s)) < 1e-9);
    }
}

TEST_CASE("rank invariance under strictly increasing transforms") {
    Rng rng(62);
    ScoreSet s = random_scores(rng, true);
    VerificationReport r1 = roc_metrics(s);
    ScoreSet t = s;
    auto f = [](double x) { return 2.0 * std::atan(x) + 5.0; };
    for (double& v : t.genuine) v = f(v);
    for (double& v : t.imposter) v = f(v);
    VerificationReport r2 = roc_metrics(t);
    CHECK(r1.auc == r2.auc);
    CHECK(r1.eer == r2.eer);
    CHECK(r1.tar_at_far1 == r2.tar_at_far1);
    CHECK(r1.tar_at_far5 == r2.tar_at_far5);
}

TEST_CASE("swapping score sets mirrors AUC and TAR@FAR is monotone") {
    Rng rng(63);
    for (int trial = 0; trial < 25; ++trial) {
        ScoreSet s = random_scores(rng, trial % 3 == 0);
        VerificationReport r = roc_metrics(s);
        ScoreSet sw{s.imposter, s.genuine};
        VerificationReport rs = roc_metrics(sw);
        CHECK(std::fabs(r.auc - (100.0 - rs.auc)) < 1e-9);
        CHECK(r.tar_at_far1 <= r.tar_at_far5 + 1e-12);
        CHECK(tar_at_far(r, 1.0) <= tar_at_far(r, 2.0) + 1e-12);
        CHECK(tar_at_far(r, 2.0) <= tar_at_far(r, 5.0) + 1e-12);
    }
}

TEST_CASE("report serializes to json") {
    ScoreSet s{{0.9, 0.8}, {0.1, 0.2}};
    VerificationReport r = roc_metrics(s);
    std::string j = r.to_json();
    CHECK(j.find("\"auc\"") != std::string::npos);
    CHECK(j.find("\"tar_at_far_1\"") != std::string::npos);
    CHECK(j.find("\"roc\"") != std::string::npos);
}
