#include "frontal/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fs = std::filesystem;

namespace frontal {

namespace {

std::vector<Var> params_of(const std::vector<std::pair<std::string, Var>>& named) {
    std::vector<Var> out;
    out.reserve(named.size());
    for (const auto& [name, v] : named) out.push_back(v);
    return out;
}

void ensure_finite(double v, const char* term, long step) {
    if (!std::isfinite(v))
        throw std::runtime_error("non-finite " + std::string(term) + " at step " +
                                 std::to_string(step));
}

Tensor concat_batch(const Tensor& a, const Tensor& b) {
    std::vector<int> shape = a.shape();
    shape[0] = a.dim(0) + b.dim(0);
    Tensor out(shape);
    std::copy_n(a.data(), a.size(), out.data());
    std::copy_n(b.data(), b.size(), out.data() + a.size());
    return out;
}

Tensor masked(const Tensor& imgs, const Tensor& masks) {
    Tensor out = imgs;
    int B = imgs.dim(0), C = imgs.dim(1);
    long plane = static_cast<long>(imgs.dim(2)) * imgs.dim(3);
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            double* dst = out.data() + (static_cast<long>(b) * C + c) * plane;
            const double* m = masks.data() + static_cast<long>(b) * plane;
            for (long i = 0; i < plane; ++i) dst[i] *= m[i];
        }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    weights.validate();
    if (!(learning_rate > 0)) throw std::invalid_argument("learning rate must be > 0");
    if (lr_decay <= 0 || lr_decay > 1)
        throw std::invalid_argument("lr decay fraction must be in (0,1]");
    if (batch_size < 2 || batch_size % 2 != 0)
        throw std::invalid_argument("batch size must be even (dual-path pairs)");
    if (total_steps < 0) throw std::invalid_argument("total steps must be >= 0");
    if (critic_steps < 0) throw std::invalid_argument("critic steps must be >= 0");
    if (checkpoint_every < 1) throw std::invalid_argument("checkpoint interval must be >= 1");
    if (!(same_id_fraction >= 0 && same_id_fraction <= 1))
        throw std::invalid_argument("same-identity fraction must be in [0,1]");
}

Adam::Adam(std::vector<Var> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.push_back(Tensor::zeros(p.shape()));
        v_.push_back(Tensor::zeros(p.shape()));
    }
}

void Adam::step(const GradMap& grads, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Var g = grads.get(params_[i]);
        if (!g.defined()) continue;
        const Tensor& gt = g.value();
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        double* p = params_[i].mutable_value().data();
        for (long j = 0; j < gt.size(); ++j) {
            m[j] = b1_ * m[j] + (1 - b1_) * gt[j];
            v[j] = b2_ * v[j] + (1 - b2_) * gt[j] * gt[j];
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            p[j] -= lr * mh / (std::sqrt(vh) + eps_);
        }
    }
}

long TrainerState::param_count() const {
    return gen.param_count() + d_global.param_count() + d_local.param_count() +
           classifier.param_count();
}

double TrainerState::current_lr() const {
    if (cfg.total_steps <= 0) return cfg.learning_rate;
    double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.total_steps));
    return cfg.learning_rate * (1.0 - (1.0 - cfg.lr_decay) * frac);
}

TrainerState init_trainer(const TrainConfig& cfg_in) {
    TrainConfig cfg = cfg_in;
    cfg.validate();
    cfg.generator.self_attention = cfg.ablation.self_attention;
    cfg.generator.equalization = cfg.ablation.equalization;
    cfg.classifier.in_dim = static_cast<int>(cfg.generator.bottleneck_dim());

    TrainerState st;
    st.cfg = cfg;
    st.gen = GeneratorWeights::init(cfg.generator, Rng::mix(cfg.seed, 1));
    st.d_global = CriticWeights::init(cfg.critic, Rng::mix(cfg.seed, 2));
    st.d_local = CriticWeights::init(cfg.critic, Rng::mix(cfg.seed, 3));
    st.classifier = DomainClassifierWeights::init(cfg.classifier, Rng::mix(cfg.seed, 4));
    st.embedder = Embedder::init(cfg.embedder);
    st.rng = Rng(Rng::mix(cfg.seed, 5));

    std::vector<Var> gen_group = params_of(st.gen.named_params());
    for (const auto& v : params_of(st.classifier.named_params())) gen_group.push_back(v);
    st.opt_gen = Adam(std::move(gen_group));
    st.opt_dg = Adam(params_of(st.d_global.named_params()));
    st.opt_dl = Adam(params_of(st.d_local.named_params()));
    return st;
}

void critic_phase(TrainerState& st, const PairBatch& batch, LossRecord& rec) {
    const TrainConfig& cfg = st.cfg;
    const LossWeights& w = cfg.weights;
    const AblationFlags& fl = cfg.ablation;
    if (!(w.lambda_adv > 0) || cfg.critic_steps < 1) return;
    double lr = st.current_lr();

    CriticFn dg_fn = [&](const Var& img) { return critic_forward(img, st.d_global); };
    CriticFn dl_fn = [&](const Var& img) { return critic_forward(img, st.d_local); };

    Tensor y_all = concat_batch(batch.y1, batch.y2);
    Tensor m_all = concat_batch(batch.m1, batch.m2);
    Tensor yhat_all;
    {
        NoGradGuard ng;
        DecoderOutputs o1 = decoder_forward(encoder_forward(Var::leaf(batch.x1), st.gen), st.gen);
        DecoderOutputs o2 = decoder_forward(encoder_forward(Var::leaf(batch.x2), st.gen), st.gen);
        yhat_all = concat_batch(o1.y128.value(), o2.y128.value());
    }
    for (int cstep = 0; cstep < cfg.critic_steps; ++cstep) {
        Var gp_g;
        Var lg = critic_loss(dg_fn, Var::leaf(y_all), Var::leaf(yhat_all), w.lambda_gp, st.rng,
                             &gp_g);
        ensure_finite(lg.item(), "global critic loss", rec.step);
        GradMap gg = backward(lg, st.opt_dg.params());
        st.opt_dg.step(gg, lr);
        rec.gp = gp_g.item();

        if (fl.local_critic) {
            Var gp_l;
            Var ll = critic_loss(dl_fn, Var::leaf(masked(y_all, m_all)),
                                 Var::leaf(masked(yhat_all, m_all)), w.lambda_gp, st.rng, &gp_l);
            ensure_finite(ll.item(), "local critic loss", rec.step);
            GradMap gl = backward(ll, st.opt_dl.params());
            st.opt_dl.step(gl, lr);
            rec.gp = 0.5 * (rec.gp + gp_l.item());
        }
    }
}

void generator_phase(TrainerState& st, const PairBatch& batch, LossRecord& rec) {
    const TrainConfig& cfg = st.cfg;
    const LossWeights& w = cfg.weights;
    const AblationFlags& fl = cfg.ablation;
    double lr = st.current_lr();
    bool adversarial = w.lambda_adv > 0;

    CriticFn dg_fn = [&](const Var& img) { return critic_forward(img, st.d_global); };
    CriticFn dl_fn = [&](const Var& img) { return critic_forward(img, st.d_local); };

    LatentFeatures z1 = encoder_forward(Var::leaf(batch.x1), st.gen);
    LatentFeatures z2 = encoder_forward(Var::leaf(batch.x2), st.gen);
    DecoderOutputs o1 = decoder_forward(z1, st.gen);
    DecoderOutputs o2 = decoder_forward(z2, st.gen);

    auto path_pixel = [&](const DecoderOutputs& o, const Tensor& y) {
        if (fl.multiscale_pixel) {
            ImageScales pred{o.y32, o.y64, o.y128};
            ImageScales tgt{Var::leaf(avg_pool2d(y, 4)), Var::leaf(avg_pool2d(y, 2)),
                            Var::leaf(y)};
            return multiscale_pixel_loss(pred, tgt);
        }
        return l1_loss(o.y128, Var::leaf(y), "pixel loss scale 128");
    };
    Var pixel = scale(add(path_pixel(o1, batch.y1), path_pixel(o2, batch.y2)), 0.5);
    ensure_finite(pixel.item(), "pixel loss", rec.step);

    Var id_term = Var::leaf(Tensor::scalar(0.0));
    if (fl.identity_loss) {
        EmbedFn embed = [&](const Var& img) { return st.embedder.features(img); };
        id_term = scale(add(identity_loss(o1.y128, Var::leaf(batch.y1), embed),
                            identity_loss(o2.y128, Var::leaf(batch.y2), embed)),
                        0.5);
        ensure_finite(id_term.item(), "identity loss", rec.step);
    }

    Var adv_term = Var::leaf(Tensor::scalar(0.0));
    if (adversarial) {
        CriticFn local = fl.local_critic ? dl_fn : CriticFn{};
        GeneratorAdvLoss a1 =
            generator_adversarial_loss(dg_fn, local, o1.y128, batch.m1, w.lambda_local);
        GeneratorAdvLoss a2 =
            generator_adversarial_loss(dg_fn, local, o2.y128, batch.m2, w.lambda_local);
        adv_term = scale(add(a1.total, a2.total), 0.5);
        rec.adv_g = 0.5 * (a1.global.item() + a2.global.item());
        rec.adv_l = 0.5 * (a1.local.item() + a2.local.item());
        ensure_finite(rec.adv_g, "global adversarial loss", rec.step);
        ensure_finite(rec.adv_l, "local adversarial loss", rec.step);
    }

    Var tv_term = Var::leaf(Tensor::scalar(0.0));
    if (w.lambda_tv > 0) {
        tv_term = scale(add(total_variation_loss(o1.y128), total_variation_loss(o2.y128)), 0.5);
        ensure_finite(tv_term.item(), "total variation loss", rec.step);
    }

    Var front = frontalization_total(pixel, id_term, adv_term, tv_term, w);

    // feature-learning flow: thermal inputs (k=0) and paired visible frontals
    // (k=1) through the same encoder, classifier behind the GRL
    Var cls_term = Var::leaf(Tensor::scalar(0.0));
    if (fl.cls_loss) {
        int n = batch.pairs();
        LatentFeatures zv1 = encoder_forward(Var::leaf(batch.y1), st.gen);
        LatentFeatures zv2 = encoder_forward(Var::leaf(batch.y2), st.gen);
        auto classify = [&](const LatentFeatures& z) {
            return domain_classifier_forward(grl(flatten_batch(z.bottleneck), w.lambda_grl),
                                             st.classifier);
        };
        Tensor k0 = Tensor::zeros({n});
        Tensor k1 = Tensor::full({n}, 1.0);
        Var c = add(add(domain_classification_loss(classify(z1), k0),
                        domain_classification_loss(classify(z2), k0)),
                    add(domain_classification_loss(classify(zv1), k1),
                        domain_classification_loss(classify(zv2), k1)));
        cls_term = scale(c, 0.25);
        ensure_finite(cls_term.item(), "domain classification loss", rec.step);
    }

    Var contras_term = Var::leaf(Tensor::scalar(0.0));
    if (fl.contrastive) {
        contras_term = contrastive_loss(flatten_batch(z1.bottleneck),
                                        flatten_batch(z2.bottleneck), batch.same_identity,
                                        w.margin);
        ensure_finite(contras_term.item(), "contrastive loss", rec.step);
    }

    Var total = total_objective(front, contras_term, cls_term, w);
    ensure_finite(total.item(), "total loss", rec.step);

    GradMap grads = backward(total, st.opt_gen.params());
    st.opt_gen.step(grads, lr);

    rec.pixel = pixel.item();
    rec.id = id_term.item();
    rec.tv = tv_term.item();
    rec.cls = cls_term.item();
    rec.contrastive = contras_term.item();
    rec.total = total.item();
}

LossRecord train_step(TrainerState& st, const PairBatch& batch) {
    LossRecord rec;
    rec.step = st.step + 1;
    critic_phase(st, batch, rec);
    generator_phase(st, batch, rec);
    st.step += 1;
    rec.step = st.step;
    return rec;
}

TrainResult train(const TrainConfig& cfg, const Dataset& ds) {
    TrainerState st = init_trainer(cfg);
    fs::create_directories(cfg.out_dir);
    std::string log_path = cfg.out_dir + "/loss_log.jsonl";
    std::ofstream log(log_path, std::ios::binary);
    if (!log) throw std::runtime_error("cannot write loss log " + log_path);

    auto checkpoint_name = [&](long step) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "checkpoint-%06ld.bin", step);
        return cfg.out_dir + "/" + buf;
    };
    save_checkpoint(checkpoint_name(0), st);
    std::string last_ckpt = checkpoint_name(0);

    for (long s = 0; s < cfg.total_steps; ++s) {
        PairBatch batch =
            sample_dual_path_batch(ds, cfg.batch_size, cfg.same_id_fraction, st.rng);
        LossRecord rec = train_step(st, batch);
        log << rec.to_json_line() << "\n";
        log.flush();
        if (st.step % cfg.checkpoint_every == 0) {
            last_ckpt = checkpoint_name(st.step);
            save_checkpoint(last_ckpt, st);
        }
    }
    if (st.step % cfg.checkpoint_every != 0 || cfg.total_steps == 0) {
        last_ckpt = checkpoint_name(st.step);
        save_checkpoint(last_ckpt, st);
    }
    return {last_ckpt, log_path};
}

// ------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[4] = {'F', 'R', 'C', 'K'};
constexpr uint32_t kVersion = 1;

nlohmann::json gen_cfg_json(const GeneratorConfig& c) {
    return {{"encoder_channels", c.encoder_channels},
            {"input_size", c.input_size},
            {"input_channels", c.input_channels},
            {"self_attention", c.self_attention},
            {"equalization", c.equalization},
            {"leaky_slope", c.leaky_slope},
            {"equalize_eps", c.equalize_eps}};
}

GeneratorConfig gen_cfg_from_json(const nlohmann::json& j) {
    GeneratorConfig c;
    c.encoder_channels = j.at("encoder_channels").get<std::vector<int>>();
    c.input_size = j.at("input_size").get<int>();
    c.input_channels = j.at("input_channels").get<int>();
    c.self_attention = j.at("self_attention").get<bool>();
    c.equalization = j.at("equalization").get<bool>();
    c.leaky_slope = j.at("leaky_slope").get<double>();
    c.equalize_eps = j.at("equalize_eps").get<double>();
    return c;
}

void write_tensor(std::ofstream& out, const std::string& name, const Tensor& t) {
    auto u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    u32(static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    u32(static_cast<uint32_t>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) u32(static_cast<uint32_t>(t.dim(i)));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.size() * 8));
}

}  // namespace

void save_checkpoint(const std::string& path, const TrainerState& st) {
    nlohmann::json header;
    header["step"] = st.step;
    header["generator"] = gen_cfg_json(st.cfg.generator);
    header["critic"] = {{"input_size", st.cfg.critic.input_size},
                        {"input_channels", st.cfg.critic.input_channels},
                        {"channels", st.cfg.critic.channels},
                        {"leaky_slope", st.cfg.critic.leaky_slope}};
    header["classifier"] = {{"in_dim", st.cfg.classifier.in_dim},
                            {"hidden1", st.cfg.classifier.hidden1},
                            {"hidden2", st.cfg.classifier.hidden2},
                            {"leaky_slope", st.cfg.classifier.leaky_slope},
                            {"equalize_eps", st.cfg.classifier.equalize_eps}};
    header["embedder"] = {{"channels", st.cfg.embedder.channels},
                          {"input_size", st.cfg.embedder.input_size},
                          {"seed", st.cfg.embedder.seed},
                          {"leaky_slope", st.cfg.embedder.leaky_slope}};
    std::string hs = header.dump();

    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write checkpoint " + path);
        out.write(kMagic, 4);
        out.write(reinterpret_cast<const char*>(&kVersion), 4);
        uint64_t hlen = hs.size();
        out.write(reinterpret_cast<const char*>(&hlen), 8);
        out.write(hs.data(), static_cast<std::streamsize>(hs.size()));

        std::vector<std::pair<std::string, Var>> all;
        for (const auto& [n, v] : st.gen.named_params()) all.emplace_back("gen/" + n, v);
        for (const auto& [n, v] : st.d_global.named_params()) all.emplace_back("dg/" + n, v);
        for (const auto& [n, v] : st.d_local.named_params()) all.emplace_back("dl/" + n, v);
        for (const auto& [n, v] : st.classifier.named_params()) all.emplace_back("cls/" + n, v);
        uint64_t count = all.size();
        out.write(reinterpret_cast<const char*>(&count), 8);
        for (const auto& [n, v] : all) write_tensor(out, n, v.value());
        if (!out) throw std::runtime_error("failed writing checkpoint " + path);
    }
    fs::rename(tmp, path);
}

CheckpointBundle load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[4];
    uint32_t version = 0;
    in.read(magic, 4);
    in.read(reinterpret_cast<char*>(&version), 4);
    if (!in || std::string(magic, 4) != std::string(kMagic, 4))
        throw std::runtime_error(path + " is not a checkpoint file");
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    uint64_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), 8);
    std::string hs(hlen, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(hlen));
    nlohmann::json header = nlohmann::json::parse(hs);

    CheckpointBundle b;
    b.step = header.at("step").get<long>();
    GeneratorConfig gcfg = gen_cfg_from_json(header.at("generator"));
    CriticConfig ccfg;
    ccfg.input_size = header.at("critic").at("input_size").get<int>();
    ccfg.input_channels = header.at("critic").at("input_channels").get<int>();
    ccfg.channels = header.at("critic").at("channels").get<std::vector<int>>();
    ccfg.leaky_slope = header.at("critic").at("leaky_slope").get<double>();
    DomainClassifierConfig dcfg;
    dcfg.in_dim = header.at("classifier").at("in_dim").get<int>();
    dcfg.hidden1 = header.at("classifier").at("hidden1").get<int>();
    dcfg.hidden2 = header.at("classifier").at("hidden2").get<int>();
    dcfg.leaky_slope = header.at("classifier").at("leaky_slope").get<double>();
    dcfg.equalize_eps = header.at("classifier").at("equalize_eps").get<double>();
    b.embedder.channels = header.at("embedder").at("channels").get<std::vector<int>>();
    b.embedder.input_size = header.at("embedder").at("input_size").get<int>();
    b.embedder.seed = header.at("embedder").at("seed").get<uint64_t>();
    b.embedder.leaky_slope = header.at("embedder").at("leaky_slope").get<double>();

    b.gen = GeneratorWeights::init(gcfg, 0);
    b.d_global = CriticWeights::init(ccfg, 0);
    b.d_local = CriticWeights::init(ccfg, 0);
    b.classifier = DomainClassifierWeights::init(dcfg, 0);

    std::map<std::string, Var> by_name;
    for (const auto& [n, v] : b.gen.named_params()) by_name.emplace("gen/" + n, v);
    for (const auto& [n, v] : b.d_global.named_params()) by_name.emplace("dg/" + n, v);
    for (const auto& [n, v] : b.d_local.named_params()) by_name.emplace("dl/" + n, v);
    for (const auto& [n, v] : b.classifier.named_params()) by_name.emplace("cls/" + n, v);

    uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), 8);
    for (uint64_t i = 0; i < count; ++i) {
        uint32_t nlen = 0;
        in.read(reinterpret_cast<char*>(&nlen), 4);
        std::string name(nlen, '\0');
        in.read(name.data(), nlen);
        uint32_t rank = 0;
        in.read(reinterpret_cast<char*>(&rank), 4);
        std::vector<int> dims(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            uint32_t v = 0;
            in.read(reinterpret_cast<char*>(&v), 4);
            dims[d] = static_cast<int>(v);
        }
        Tensor t(dims);
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
        if (!in) throw std::runtime_error("truncated checkpoint " + path);
        auto it = by_name.find(name);
        if (it == by_name.end())
            throw std::runtime_error("checkpoint tensor " + name + " has no destination");
        if (it->second.shape() != t.shape())
            throw std::runtime_error("checkpoint tensor " + name + " shape mismatch");
        it->second.mutable_value() = std::move(t);
    }
    return b;
}

FrontalizeFn make_frontalizer(const GeneratorWeights& gen) {
    GeneratorWeights copy = gen;  // Var handles still share the parameter store
    return [copy](const Tensor& img) {
        NoGradGuard ng;
        Tensor batch = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
        DecoderOutputs o = decoder_forward(encoder_forward(Var::leaf(batch), copy), copy);
        const Tensor& y = o.y128.value();
        return y.reshaped({y.dim(1), y.dim(2), y.dim(3)});
    };
}

}  // namespace frontal
