// Command-line front end: synthetic data generation, training, ablation
// grids, synthesis (including pose sweeps) and verification.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "frontal/config.hpp"
#include "frontal/data.hpp"
#include "frontal/eval.hpp"
#include "frontal/training.hpp"

namespace fs = std::filesystem;
using namespace frontal;

namespace {

std::string resolve_out_dir(const std::string& user_out, const std::string& cmd) {
    if (!user_out.empty()) {
        fs::create_directories(user_out);
        return user_out;
    }
    const char* root_env = std::getenv("FRONTAL_OUT_ROOT");
    std::string root = root_env ? root_env : "runs";
    std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", std::localtime(&now));
    std::string dir = root + "/" + cmd + "-" + stamp;
    fs::create_directories(dir);
    return dir;
}

ConfigMap resolve_train_map(const std::string& config_path,
                            const std::vector<std::string>& overrides) {
    ConfigMap m = config_to_map(TrainConfig{});
    if (!config_path.empty())
        for (const auto& [k, v] : parse_config_file(config_path)) m[k] = v;
    for (const auto& kv : overrides) apply_override(m, kv);
    return m;
}

struct SplitSelection {
    std::vector<int> gallery, probe;
};

SplitSelection select_protocol(const Dataset& ds, const std::string& split) {
    std::vector<std::string> ids;
    if (split == "all") {
        ids = ds.identities();
    } else {
        IdentitySplit s = split_identities(ds);
        if (split == "train")
            ids = s.train;
        else if (split == "test")
            ids = s.test;
        else
            throw std::invalid_argument("unknown split '" + split + "'");
    }
    SplitSelection sel;
    for (const auto& id : ids) {
        const IdentityGroup& g = ds.group(id);
        for (int r : g.visible_frontals) sel.gallery.push_back(r);
        for (int r : g.thermal_profiles) sel.probe.push_back(r);
    }
    return sel;
}

VerificationReport run_verification(const Dataset& ds, const std::string& split,
                                    const std::string& checkpoint, bool raw,
                                    const std::string& out_dir, bool dump_scores) {
    SplitSelection sel = select_protocol(ds, split);
    FrontalizeFn gen;
    EmbedderConfig ecfg;
    if (!checkpoint.empty()) {
        CheckpointBundle b = load_checkpoint(checkpoint);
        ecfg = b.embedder;
        if (!raw) gen = make_frontalizer(b.gen);
    } else if (!raw) {
        throw std::invalid_argument("evaluate needs --checkpoint unless --raw is given");
    }
    Embedder emb = Embedder::init(ecfg);
    ScoreSet scores = score_protocol(ds, sel.gallery, sel.probe, gen, emb);
    VerificationReport rep = roc_metrics(scores);

    std::ofstream rj(out_dir + "/report.json", std::ios::binary);
    rj << rep.to_json() << "\n";
    if (dump_scores) {
        std::ofstream sc(out_dir + "/scores.csv", std::ios::binary);
        sc << "kind,score\n";
        sc.precision(17);
        for (double v : scores.genuine) sc << "genuine," << v << "\n";
        for (double v : scores.imposter) sc << "imposter," << v << "\n";
    }
    return rep;
}

Tensor hcat_images(const std::vector<Tensor>& imgs, int sep = 2) {
    int H = imgs[0].dim(1);
    int W = 0;
    for (const auto& t : imgs) W += t.dim(2);
    W += sep * static_cast<int>(imgs.size() - 1);
    Tensor out = Tensor::full({3, H, W}, 1.0);
    int x0 = 0;
    for (const auto& t : imgs) {
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < t.dim(2); ++x)
                    out[(static_cast<long>(c) * H + y) * W + (x0 + x)] =
                        t[(static_cast<long>(c) * t.dim(1) + y) * t.dim(2) + x];
        x0 += t.dim(2) + sep;
    }
    return out;
}

int cmd_gen_data(const std::string& out, int identities, const std::vector<double>& poses,
                 uint64_t seed) {
    std::string dir = resolve_out_dir(out, "dataset");
    SyntheticDatasetOptions opt;
    opt.n_identities = identities;
    opt.poses = poses;
    opt.seed = seed;
    std::string manifest = generate_synthetic_dataset(opt, dir);
    ConfigMap snap{{"gen.identities", std::to_string(identities)},
                   {"gen.seed", std::to_string(seed)}};
    std::string pose_str;
    for (size_t i = 0; i < poses.size(); ++i)
        pose_str += (i ? "," : "") + std::to_string(poses[i]);
    snap["gen.poses"] = pose_str;
    write_config_snapshot(dir + "/run-config.txt", snap);
    long n_images = identities * (2 + static_cast<long>(poses.size()));
    std::printf("wrote %ld images for %d identities\nmanifest: %s\n", n_images, identities,
                manifest.c_str());
    return 0;
}

int cmd_train(const std::string& data, const std::string& out, const std::string& config_path,
              const std::vector<std::string>& overrides) {
    std::string dir = resolve_out_dir(out, "train");
    ConfigMap m = resolve_train_map(config_path, overrides);
    TrainConfig cfg = make_train_config(m);
    cfg.out_dir = dir;
    write_config_snapshot(dir + "/run-config.txt", m);
    Dataset ds = Dataset::load(data);
    TrainResult res = train(cfg, ds);
    std::printf("checkpoint: %s\nloss log: %s\n", res.checkpoint_path.c_str(),
                res.log_path.c_str());
    return 0;
}

int cmd_evaluate(const std::string& data, const std::string& out, const std::string& checkpoint,
                 bool raw, const std::string& split, bool dump_scores) {
    std::string dir = resolve_out_dir(out, "evaluate");
    Dataset ds = Dataset::load(data);
    ConfigMap snap{{"eval.data", data},
                   {"eval.checkpoint", checkpoint},
                   {"eval.raw", raw ? "1" : "0"},
                   {"eval.split", split}};
    write_config_snapshot(dir + "/run-config.txt", snap);
    VerificationReport rep = run_verification(ds, split, checkpoint, raw, dir, dump_scores);
    std::printf("auc=%.2f eer=%.2f tar@far1%%=%.2f tar@far5%%=%.2f\nreport: %s/report.json\n",
                rep.auc, rep.eer, rep.tar_at_far1, rep.tar_at_far5, dir.c_str());
    return 0;
}

int cmd_synthesize(const std::string& checkpoint, const std::string& out,
                   const std::vector<std::string>& inputs, bool pose_sweep,
                   const std::string& data, const std::string& identity) {
    std::string dir = resolve_out_dir(out, "synthesize");
    CheckpointBundle b = load_checkpoint(checkpoint);
    FrontalizeFn gen = make_frontalizer(b.gen);
    ConfigMap snap{{"synthesize.checkpoint", checkpoint},
                   {"synthesize.pose_sweep", pose_sweep ? "1" : "0"}};
    write_config_snapshot(dir + "/run-config.txt", snap);

    if (pose_sweep) {
        if (data.empty() || identity.empty())
            throw std::invalid_argument("--pose-sweep needs --data and --identity");
        Dataset ds = Dataset::load(data);
        const IdentityGroup& g = ds.group(identity);
        if (g.visible_frontals.empty() || g.thermal_profiles.empty())
            throw std::invalid_argument("identity " + identity +
                                        " lacks a frontal/profile pair");
        std::vector<int> profiles = g.thermal_profiles;
        std::sort(profiles.begin(), profiles.end(), [&](int a, int c) {
            return ds.records()[static_cast<size_t>(a)].pose_deg <
                   ds.records()[static_cast<size_t>(c)].pose_deg;
        });
        std::vector<Tensor> cols{ds.image(g.visible_frontals[0])};
        for (int r : profiles) cols.push_back(gen(ds.image(r)));
        std::string path = dir + "/sweep_" + identity + ".png";
        save_image_png(path, hcat_images(cols));
        std::printf("pose sweep (%zu poses + reference): %s\n", profiles.size(), path.c_str());
        return 0;
    }

    if (inputs.empty()) throw std::invalid_argument("no --input images given");
    for (const auto& in : inputs) {
        Tensor img = preprocess_file(in);
        Tensor out_img = gen(img);
        std::string stem = fs::path(in).stem().string();
        std::string path = dir + "/" + stem + "_frontal.png";
        save_image_png(path, out_img);
        std::printf("%s -> %s\n", in.c_str(), path.c_str());
    }
    return 0;
}

struct AblationRung {
    std::string name;
    void (*enable)(AblationFlags&);
};

const std::vector<AblationRung>& ablation_ladder() {
    static const std::vector<AblationRung> ladder{
        {"baseline", [](AblationFlags&) {}},
        {"multiscale", [](AblationFlags& f) { f.multiscale_pixel = true; }},
        {"identity", [](AblationFlags& f) { f.identity_loss = true; }},
        {"self-attn", [](AblationFlags& f) { f.self_attention = true; }},
        {"local-adv", [](AblationFlags& f) { f.local_critic = true; }},
        {"equalization", [](AblationFlags& f) { f.equalization = true; }},
        {"cls", [](AblationFlags& f) { f.cls_loss = true; }},
        {"contrastive", [](AblationFlags& f) { f.contrastive = true; }},
    };
    return ladder;
}

int cmd_ablate(const std::string& data, const std::string& out, const std::string& config_path,
               const std::vector<std::string>& overrides) {
    std::string dir = resolve_out_dir(out, "ablate");
    ConfigMap base_map = resolve_train_map(config_path, overrides);
    write_config_snapshot(dir + "/run-config.txt", base_map);
    Dataset ds = Dataset::load(data);

    std::ofstream csv(dir + "/summary.csv", std::ios::binary);
    csv << "rung,name,auc,eer,tar_at_far1,tar_at_far5,status\n";
    AblationFlags flags{false, false, false, false, false, false, false};
    int rung = 0;
    for (const AblationRung& r : ablation_ladder()) {
        ++rung;
        r.enable(flags);
        std::string rung_dir = dir + "/rung" + std::to_string(rung) + "-" + r.name;
        fs::create_directories(rung_dir);
        try {
            TrainConfig cfg = make_train_config(base_map);
            cfg.ablation = flags;
            cfg.out_dir = rung_dir;
            ConfigMap rung_map = config_to_map(cfg);
            write_config_snapshot(rung_dir + "/run-config.txt", rung_map);
            TrainResult res = train(cfg, ds);
            VerificationReport rep =
                run_verification(ds, "test", res.checkpoint_path, false, rung_dir, false);
            csv << rung << "," << r.name << "," << rep.auc << "," << rep.eer << ","
                << rep.tar_at_far1 << "," << rep.tar_at_far5 << ",ok\n";
            csv.flush();
            std::printf("rung %d (%s): auc=%.2f eer=%.2f\n", rung, r.name.c_str(), rep.auc,
                        rep.eer);
        } catch (const std::exception& e) {
            csv << rung << "," << r.name << ",,,,,error\n";
            csv.flush();
            std::fprintf(stderr, "rung %d (%s) failed: %s\n", rung, r.name.c_str(), e.what());
        }
    }
    std::printf("summary: %s/summary.csv\n", dir.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"thermal-to-visible face frontalization workbench"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "render a synthetic paired dataset");
    std::string gen_out;
    int gen_ids = 16;
    std::vector<double> gen_poses{-60, -30, 30, 60};
    uint64_t gen_seed = 7;
    gen->add_option("--out", gen_out, "output directory");
    gen->add_option("--identities", gen_ids, "number of identities");
    gen->add_option("--poses", gen_poses, "profile yaw angles in degrees")->delimiter(',');
    gen->add_option("--seed", gen_seed, "master seed");

    auto* tr = app.add_subcommand("train", "train on a dataset manifest");
    std::string tr_data, tr_out, tr_config;
    std::vector<std::string> tr_over;
    tr->add_option("--data", tr_data, "manifest path")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--config", tr_config, "config file (key=value lines)");
    tr->add_option("--override", tr_over, "config override key=value");
    long tr_steps = -1;
    uint64_t tr_seed = 0;
    bool tr_seed_set = false;
    tr->add_option("--steps", tr_steps, "training steps (override shorthand)");
    tr->add_option("--seed", tr_seed, "seed (override shorthand)")
        ->each([&](const std::string&) { tr_seed_set = true; });

    auto* ev = app.add_subcommand("evaluate", "verification metrics on a split");
    std::string ev_data, ev_out, ev_ckpt, ev_split = "test";
    bool ev_raw = false, ev_scores = false;
    ev->add_option("--data", ev_data, "manifest path")->required();
    ev->add_option("--out", ev_out, "output directory");
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint");
    ev->add_option("--split", ev_split, "train|test|all");
    ev->add_flag("--raw", ev_raw, "score raw thermal probes (no frontalization)");
    ev->add_flag("--dump-scores", ev_scores, "write raw scores CSV");

    auto* sy = app.add_subcommand("synthesize", "frontalize images from a checkpoint");
    std::string sy_ckpt, sy_out, sy_data, sy_id;
    std::vector<std::string> sy_inputs;
    bool sy_sweep = false;
    sy->add_option("--checkpoint", sy_ckpt, "trained checkpoint")->required();
    sy->add_option("--out", sy_out, "output directory");
    sy->add_option("--input", sy_inputs, "input image(s)");
    sy->add_flag("--pose-sweep", sy_sweep, "render one identity across its poses");
    sy->add_option("--data", sy_data, "manifest path (pose sweep)");
    sy->add_option("--identity", sy_id, "identity id (pose sweep)");

    auto* ab = app.add_subcommand("ablate", "cumulative component ladder");
    std::string ab_data, ab_out, ab_config;
    std::vector<std::string> ab_over;
    ab->add_option("--data", ab_data, "manifest path")->required();
    ab->add_option("--out", ab_out, "output directory");
    ab->add_option("--config", ab_config, "config file");
    ab->add_option("--override", ab_over, "config override key=value");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gen_out, gen_ids, gen_poses, gen_seed);
        if (tr->parsed()) {
            if (tr_steps >= 0) tr_over.push_back("train.steps=" + std::to_string(tr_steps));
            if (tr_seed_set) tr_over.push_back("train.seed=" + std::to_string(tr_seed));
            return cmd_train(tr_data, tr_out, tr_config, tr_over);
        }
        if (ev->parsed())
            return cmd_evaluate(ev_data, ev_out, ev_ckpt, ev_raw, ev_split, ev_scores);
        if (sy->parsed())
            return cmd_synthesize(sy_ckpt, sy_out, sy_inputs, sy_sweep, sy_data, sy_id);
        if (ab->parsed()) return cmd_ablate(ab_data, ab_out, ab_config, ab_over);
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
