#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include <opencv2/imgcodecs.hpp>

#include "frontal/data.hpp"
#include "frontal/rng.hpp"

using namespace frontal;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    fs::path dir = fs::temp_directory_path() / ("frontal_data_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_manifest(const fs::path& p, const std::string& body) {
    std::ofstream out(p);
    out << "path,identity,domain,pose,frontal,landmarks\n" << body;
}

}  // namespace

TEST_CASE("preprocess: resize, scaling, channel replication") {
    fs::path dir = scratch_dir("preprocess");

    cv::Mat big(256, 256, CV_8UC3, cv::Scalar(10, 128, 200));
    cv::imwrite((dir / "big.png").string(), big);
    Tensor t = preprocess_file((dir / "big.png").string());
    CHECK(t.shape() == std::vector<int>{3, 128, 128});
    for (long i = 0; i < t.size(); ++i) {
        CHECK(t[i] >= 0.0);
        CHECK(t[i] <= 1.0);
    }

    cv::Mat gray(64, 64, CV_8UC1, cv::Scalar(128));
    cv::imwrite((dir / "gray.png").string(), gray);
    Tensor g = preprocess_file((dir / "gray.png").string());
    CHECK(g.shape() == std::vector<int>{3, 128, 128});
    CHECK(g[0] == doctest::Approx(128.0 / 255.0).epsilon(1e-9));
    long plane = 128L * 128;
    for (long i = 0; i < plane; ++i) {
        CHECK(g[i] == g[plane + i]);
        CHECK(g[i] == g[2 * plane + i]);
    }

    CHECK_THROWS_WITH_AS(preprocess_file((dir / "missing.png").string()),
                         doctest::Contains("missing.png"), std::runtime_error);

    // idempotence on conforming tensors
    Tensor again = preprocess(t);
    for (long i = 0; i < t.size(); ++i) CHECK(again[i] == t[i]);
    fs::remove_all(dir);
}

TEST_CASE("manifest validation errors carry line numbers") {
    fs::path dir = scratch_dir("manifest");
    // two identities, thermal profile + visible frontal each
    SyntheticDatasetOptions opt;
    opt.n_identities = 2;
    opt.poses = {-30, 30};
    opt.seed = 3;
    generate_synthetic_dataset(opt, dir.string());

    Dataset ds = Dataset::load((dir / "manifest.csv").string());
    CHECK(ds.records().size() == 2 * 4);
    CHECK(ds.identities().size() == 2);
    CHECK(ds.group("id0000").thermal_profiles.size() == 2);
    CHECK(ds.group("id0000").visible_frontals.size() == 1);

    fs::path bad = dir / "bad.csv";
    write_manifest(bad, "images/id0000_vis_front.png,a,infrared,0,1,\n");
    CHECK_THROWS_WITH_AS(Dataset::load(bad.string()), doctest::Contains(":2"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(Dataset::load(bad.string()), doctest::Contains("infrared"),
                         std::runtime_error);

    write_manifest(bad, "images/id0000_vis_front.png,a,visible,0,1\n");
    CHECK_THROWS_WITH_AS(Dataset::load(bad.string()), doctest::Contains("6 fields"),
                         std::runtime_error);

    write_manifest(bad, "images/id0000_thm_p+30.png,ghost,thermal,30,0,\n");
    CHECK_THROWS_WITH_AS(Dataset::load(bad.string()), doctest::Contains("ghost"),
                         std::runtime_error);

    write_manifest(bad, "images/id0000_vis_front.png,a,visible,40,1,\n");
    CHECK_THROWS_WITH_AS(Dataset::load(bad.string()), doctest::Contains("frontal flag"),
                         std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("synthetic dataset: counts, determinism, domain gap, separability") {
    fs::path dir_a = scratch_dir("synth_a");
    fs::path dir_b = scratch_dir("synth_b");
    SyntheticDatasetOptions opt;
    opt.n_identities = 4;
    opt.poses = {-60, -30, 30, 60};
    opt.seed = 11;
    std::string ma = generate_synthetic_dataset(opt, dir_a.string());
    std::string mb = generate_synthetic_dataset(opt, dir_b.string());

    // 4 x (1 visible frontal + 1 thermal frontal + 4 thermal poses)
    size_t n_images = 0;
    for (auto& e : fs::directory_iterator(dir_a / "images")) {
        (void)e;
        ++n_images;
    }
    CHECK(n_images == 4 * 6);

    CHECK(read_bytes(ma) == read_bytes(mb));
    CHECK(read_bytes(dir_a / "images/id0001_vis_front.png") ==
          read_bytes(dir_b / "images/id0001_vis_front.png"));
    CHECK(read_bytes(dir_a / "images/id0002_thm_p-60.png") ==
          read_bytes(dir_b / "images/id0002_thm_p-60.png"));

    Dataset ds = Dataset::load(ma);
    // visible and thermal renderings of one identity are far apart
    const Tensor& vis = ds.image(ds.group("id0000").visible_frontals[0]);
    const Tensor& thm = ds.image(ds.group("id0000").thermal_frontals[0]);
    double diff = 0;
    for (long i = 0; i < vis.size(); ++i) diff += std::fabs(vis[i] - thm[i]);
    diff /= static_cast<double>(vis.size());
    CHECK(diff > 0.1);

    // nearest visible frontal still wins under mild perturbation
    std::vector<const Tensor*> gallery;
    for (const auto& id : ds.identities())
        gallery.push_back(&ds.image(ds.group(id).visible_frontals[0]));
    Rng noise(99);
    for (size_t q = 0; q < gallery.size(); ++q) {
        Tensor probe = *gallery[q];
        for (long i = 0; i < probe.size(); ++i) probe[i] += 0.02 * noise.normal();
        size_t best = 0;
        double best_d = 1e300;
        for (size_t k = 0; k < gallery.size(); ++k) {
            double d = 0;
            for (long i = 0; i < probe.size(); ++i) {
                double e = probe[i] - (*gallery[k])[i];
                d += e * e;
            }
            if (d < best_d) {
                best_d = d;
                best = k;
            }
        }
        CHECK(best == q);
    }

    // landmarks present for visible frontals, consistent with the geometry
    int vf = ds.group("id0000").visible_frontals[0];
    CHECK(ds.has_landmarks(vf));
    const Tensor& mask = ds.mask_for(vf);
    CHECK(mask.shape() == std::vector<int>{1, 128, 128});

    CHECK_THROWS_AS(generate_synthetic_dataset({1, {30}, 1}, dir_a.string()),
                    std::invalid_argument);
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
}

TEST_CASE("pose sweep shrinks the rendered face footprint") {
    Tensor f0 = render_synthetic_face({42, 0.0, Domain::visible, 0});
    Tensor f60 = render_synthetic_face({42, 60.0, Domain::visible, 0});
    CHECK(f0.shape() == std::vector<int>{3, 128, 128});
    // the projective squash narrows the bright face region
    auto width = [](const Tensor& img) {
        int lo = 128, hi = 0;
        for (int x = 0; x < 128; ++x)
            for (int y = 40; y < 90; ++y)
                if (img[static_cast<long>(y) * 128 + x] > 0.45) {
                    lo = std::min(lo, x);
                    hi = std::max(hi, x);
                }
        return hi - lo;
    };
    CHECK(width(f60) < width(f0));
    CHECK_THROWS_AS(render_synthetic_face({42, 95.0, Domain::visible, 0}),
                    std::invalid_argument);
}

TEST_CASE("dual-path sampling: determinism, boundaries, label invariant") {
    fs::path dir = scratch_dir("sampling");
    SyntheticDatasetOptions opt;
    opt.n_identities = 4;
    opt.poses = {-30, 30};
    opt.seed = 5;
    Dataset ds = Dataset::load(generate_synthetic_dataset(opt, dir.string()));

    Rng r1(77), r2(77);
    PairBatch a = sample_dual_path_batch(ds, 8, 0.5, r1);
    PairBatch b = sample_dual_path_batch(ds, 8, 0.5, r2);
    CHECK(a.pairs() == 4);
    for (long i = 0; i < a.x1.size(); ++i) CHECK(a.x1[i] == b.x1[i]);
    for (long i = 0; i < a.y2.size(); ++i) CHECK(a.y2[i] == b.y2[i]);
    for (int i = 0; i < 4; ++i) CHECK(a.same_identity[i] == b.same_identity[i]);

    Rng r3(5);
    PairBatch all_same = sample_dual_path_batch(ds, 16, 1.0, r3);
    for (int i = 0; i < all_same.pairs(); ++i) {
        CHECK(all_same.same_identity[i] == 1.0);
        CHECK(all_same.id1[i] == all_same.id2[i]);
    }
    PairBatch none_same = sample_dual_path_batch(ds, 16, 0.0, r3);
    for (int i = 0; i < none_same.pairs(); ++i) {
        CHECK(none_same.same_identity[i] == 0.0);
        CHECK(none_same.id1[i] != none_same.id2[i]);
    }

    CHECK_THROWS_AS(sample_dual_path_batch(ds, 0, 0.5, r3), std::invalid_argument);
    CHECK_THROWS_AS(sample_dual_path_batch(ds, 7, 0.5, r3), std::invalid_argument);

    // law of large numbers on the same-identity fraction
    Rng r4(123);
    long same = 0, total = 0;
    for (int rep = 0; rep < 10; ++rep) {
        PairBatch pb = sample_dual_path_batch(ds, 2000, 0.5, r4);
        for (int i = 0; i < pb.pairs(); ++i) same += pb.same_identity[i] == 1.0;
        total += pb.pairs();
    }
    double frac = static_cast<double>(same) / static_cast<double>(total);
    CHECK(frac >= 0.48);
    CHECK(frac <= 0.52);
    fs::remove_all(dir);
}

TEST_CASE("identity split is disjoint 3:1") {
    fs::path dir = scratch_dir("split");
    SyntheticDatasetOptions opt;
    opt.n_identities = 8;
    opt.poses = {30};
    opt.seed = 2;
    Dataset ds = Dataset::load(generate_synthetic_dataset(opt, dir.string()));
    IdentitySplit s = split_identities(ds);
    CHECK(s.train.size() == 6);
    CHECK(s.test.size() == 2);
    for (const auto& id : s.test)
        CHECK(std::find(s.train.begin(), s.train.end(), id) == s.train.end());
    CHECK(ds.records_of(s.test).size() == 2 * 3);
    fs::remove_all(dir);
}
