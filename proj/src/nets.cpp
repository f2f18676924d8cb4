#include "frontal/nets.hpp"

#include <cmath>
#include <stdexcept>

#include "frontal/rng.hpp"

namespace frontal {

namespace {

Tensor he_normal(std::vector<int> shape, long fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (long i = 0; i < t.size(); ++i) t[i] = std * rng.normal();
    return t;
}

ConvLayer init_conv(int out_ch, int in_ch, int k, Rng& rng) {
    ConvLayer l;
    l.w = Var::leaf(he_normal({out_ch, in_ch, k, k}, static_cast<long>(in_ch) * k * k, rng), true);
    l.b = Var::leaf(Tensor::zeros({out_ch}), true);
    return l;
}

ConvLayer init_tconv(int in_ch, int out_ch, int k, Rng& rng) {
    ConvLayer l;
    l.w = Var::leaf(he_normal({in_ch, out_ch, k, k}, static_cast<long>(in_ch) * k * k, rng), true);
    l.b = Var::leaf(Tensor::zeros({out_ch}), true);
    return l;
}

void check_finite(const Tensor& t, const std::string& what) {
    if (!t.all_finite())
        throw std::runtime_error("non-finite values in " + what);
}

}  // namespace

Var equalize_features(const Var& a, const EqualizationConfig& cfg, const std::string& layer) {
    if (cfg.epsilon <= 0) throw std::invalid_argument("equalize_features: epsilon must be > 0");
    const Tensor& t = a.value();
    if (t.rank() != 4 && t.rank() != 2)
        throw std::invalid_argument("equalize_features: rank " + t.shape_str());
    if (!t.all_finite())
        throw std::runtime_error("equalize_features: non-finite input" +
                                 (layer.empty() ? std::string() : " from " + layer));
    Var ms = mean_axes(square(a), {1}, true);
    return div(a, sqrt(add_scalar(ms, cfg.epsilon)));
}

Var self_attention(const Var& x, const AttentionParams& p, Var* attn_out) {
    const Tensor& t = x.value();
    int B = t.dim(0), C = t.dim(1), H = t.dim(2), W = t.dim(3);
    int hw = H * W;
    int cq = p.query.w.value().dim(0);
    Var q = reshape(conv2d(x, p.query.w, p.query.b, 1, 0), {B, cq, hw});
    Var k = reshape(conv2d(x, p.key.w, p.key.b, 1, 0), {B, cq, hw});
    Var v = reshape(conv2d(x, p.value.w, p.value.b, 1, 0), {B, C, hw});
    Var logits = bmm(btranspose(q), k);            // [B, hw, hw], row = query pixel
    Var attn = softmax_lastdim(logits);
    if (attn_out) *attn_out = attn;
    Var o = bmm(v, btranspose(attn));              // o[:,:,q] = sum_i attn[q,i] v[:,:,i]
    o = reshape(o, {B, C, H, W});
    return add(x, mul(o, reshape(p.gamma, {1, 1, 1, 1})));
}

GeneratorWeights GeneratorWeights::init(const GeneratorConfig& cfg, uint64_t seed) {
    if (cfg.stages() < 3)
        throw std::invalid_argument("GeneratorConfig: need at least 3 encoder stages");
    if (cfg.input_size >> cfg.stages() < 1)
        throw std::invalid_argument("GeneratorConfig: too many stages for input size");
    GeneratorWeights gw;
    gw.cfg = cfg;
    int n = cfg.stages();
    uint64_t salt = 0;
    auto layer_rng = [&] { return Rng(Rng::mix(seed, salt++)); };

    int in_ch = cfg.input_channels;
    for (int i = 0; i < n; ++i) {
        Rng r = layer_rng();
        gw.enc.push_back(init_conv(cfg.encoder_channels[static_cast<size_t>(i)], in_ch, 3, r));
        in_ch = cfg.encoder_channels[static_cast<size_t>(i)];
    }
    {
        // attention draws its seeds regardless so sibling layers do not shift
        Rng rq = layer_rng(), rk = layer_rng(), rv = layer_rng();
        if (cfg.self_attention) {
            int c = cfg.bottleneck_channels();
            int cq = std::max(1, c / 8);
            gw.attn.query = init_conv(cq, c, 1, rq);
            gw.attn.key = init_conv(cq, c, 1, rk);
            gw.attn.value = init_conv(c, c, 1, rv);
            gw.attn.gamma = Var::leaf(Tensor::zeros({1}), true);
        }
    }
    in_ch = cfg.bottleneck_channels();
    for (int i = 0; i < n; ++i) {
        Rng r = layer_rng();
        int out_ch = cfg.decoder_channels(i);
        gw.dec.push_back(init_tconv(in_ch, out_ch, 4, r));
        // next stage consumes this output concatenated with its encoder skip
        in_ch = out_ch;
        if (i + 1 < n) in_ch += cfg.encoder_channels[static_cast<size_t>(n - 2 - i)];
    }
    {
        Rng r1 = layer_rng(), r2 = layer_rng(), r3 = layer_rng();
        gw.side32 = init_conv(cfg.input_channels, cfg.decoder_channels(n - 3), 1, r1);
        gw.side64 = init_conv(cfg.input_channels, cfg.decoder_channels(n - 2), 1, r2);
        gw.out = init_conv(cfg.input_channels, cfg.decoder_channels(n - 1), 3, r3);
    }
    return gw;
}

std::vector<std::pair<std::string, Var>> GeneratorWeights::named_params() const {
    std::vector<std::pair<std::string, Var>> ps;
    for (size_t i = 0; i < enc.size(); ++i) {
        ps.emplace_back("enc" + std::to_string(i) + ".w", enc[i].w);
        ps.emplace_back("enc" + std::to_string(i) + ".b", enc[i].b);
    }
    if (cfg.self_attention) {
        ps.emplace_back("attn.q.w", attn.query.w);
        ps.emplace_back("attn.q.b", attn.query.b);
        ps.emplace_back("attn.k.w", attn.key.w);
        ps.emplace_back("attn.k.b", attn.key.b);
        ps.emplace_back("attn.v.w", attn.value.w);
        ps.emplace_back("attn.v.b", attn.value.b);
        ps.emplace_back("attn.gamma", attn.gamma);
    }
    for (size_t i = 0; i < dec.size(); ++i) {
        ps.emplace_back("dec" + std::to_string(i) + ".w", dec[i].w);
        ps.emplace_back("dec" + std::to_string(i) + ".b", dec[i].b);
    }
    ps.emplace_back("side32.w", side32.w);
    ps.emplace_back("side32.b", side32.b);
    ps.emplace_back("side64.w", side64.w);
    ps.emplace_back("side64.b", side64.b);
    ps.emplace_back("out.w", out.w);
    ps.emplace_back("out.b", out.b);
    return ps;
}

long GeneratorWeights::param_count() const {
    long n = 0;
    for (const auto& [name, v] : named_params()) n += v.value().size();
    return n;
}

LatentFeatures encoder_forward(const Var& x, const GeneratorWeights& gw) {
    const GeneratorConfig& cfg = gw.cfg;
    const Tensor& t = x.value();
    if (t.rank() != 4 || t.dim(1) != cfg.input_channels || t.dim(2) != cfg.input_size ||
        t.dim(3) != cfg.input_size)
        throw std::invalid_argument("encoder input: expected [B," +
                                    std::to_string(cfg.input_channels) + "," +
                                    std::to_string(cfg.input_size) + "," +
                                    std::to_string(cfg.input_size) + "], got " + t.shape_str());
    check_finite(t, "encoder input");

    EqualizationConfig eq{cfg.equalize_eps};
    LatentFeatures z;
    Var h = x;
    int n = cfg.stages();
    for (int i = 0; i < n; ++i) {
        h = conv2d(h, gw.enc[static_cast<size_t>(i)].w, gw.enc[static_cast<size_t>(i)].b, 2, 1);
        h = leaky_relu(h, cfg.leaky_slope);
        if (cfg.equalization) h = equalize_features(h, eq, "encoder stage " + std::to_string(i));
        if (i < n - 1) z.skips.push_back(h);
    }
    z.bottleneck = h;
    return z;
}

DecoderOutputs decoder_forward(const LatentFeatures& z, const GeneratorWeights& gw) {
    const GeneratorConfig& cfg = gw.cfg;
    int n = cfg.stages();
    if (static_cast<int>(z.skips.size()) != n - 1)
        throw std::invalid_argument("decoder_forward: expected " + std::to_string(n - 1) +
                                    " skip tensors, got " + std::to_string(z.skips.size()));
    EqualizationConfig eq{cfg.equalize_eps};
    Var h = z.bottleneck;
    if (cfg.self_attention) h = self_attention(h, gw.attn);

    DecoderOutputs out;
    for (int i = 0; i < n; ++i) {
        if (i > 0) {
            const Var& skip = z.skips[static_cast<size_t>(n - 1 - i)];
            const Tensor& ts = skip.value();
            const Tensor& th = h.value();
            int want_ch = cfg.encoder_channels[static_cast<size_t>(n - 1 - i)];
            if (ts.dim(0) != th.dim(0) || ts.dim(2) != th.dim(2) || ts.dim(3) != th.dim(3) ||
                ts.dim(1) != want_ch)
                throw std::invalid_argument("decoder stage " + std::to_string(i) +
                                            ": skip shape " + ts.shape_str() +
                                            " does not match " + th.shape_str());
            h = concat_ch(h, skip);
        }
        h = conv_transpose2d(h, gw.dec[static_cast<size_t>(i)].w,
                             gw.dec[static_cast<size_t>(i)].b, 2, 1, 0);
        h = leaky_relu(h, cfg.leaky_slope);
        if (cfg.equalization) h = equalize_features(h, eq, "decoder stage " + std::to_string(i));
        if (i == n - 3) out.y32 = sigmoid(conv2d(h, gw.side32.w, gw.side32.b, 1, 0));
        if (i == n - 2) out.y64 = sigmoid(conv2d(h, gw.side64.w, gw.side64.b, 1, 0));
    }
    out.y128 = sigmoid(conv2d(h, gw.out.w, gw.out.b, 1, 1));
    return out;
}

CriticWeights CriticWeights::init(const CriticConfig& cfg, uint64_t seed) {
    if (cfg.channels.empty()) throw std::invalid_argument("CriticConfig: no stages");
    if (cfg.input_size >> cfg.channels.size() < 1)
        throw std::invalid_argument("CriticConfig: too many stages for input size");
    CriticWeights cw;
    cw.cfg = cfg;
    uint64_t salt = 100;
    int in_ch = cfg.input_channels;
    for (int ch : cfg.channels) {
        Rng r(Rng::mix(seed, salt++));
        cw.stages.push_back(init_conv(ch, in_ch, 3, r));
        in_ch = ch;
    }
    int sz = cfg.input_size >> cfg.channels.size();
    long flat = static_cast<long>(in_ch) * sz * sz;
    Rng r(Rng::mix(seed, salt++));
    cw.head_w = Var::leaf(he_normal({1, static_cast<int>(flat)}, flat, r), true);
    cw.head_b = Var::leaf(Tensor::zeros({1}), true);
    return cw;
}

std::vector<std::pair<std::string, Var>> CriticWeights::named_params() const {
    std::vector<std::pair<std::string, Var>> ps;
    for (size_t i = 0; i < stages.size(); ++i) {
        ps.emplace_back("stage" + std::to_string(i) + ".w", stages[i].w);
        ps.emplace_back("stage" + std::to_string(i) + ".b", stages[i].b);
    }
    ps.emplace_back("head.w", head_w);
    ps.emplace_back("head.b", head_b);
    return ps;
}

long CriticWeights::param_count() const {
    long n = 0;
    for (const auto& [name, v] : named_params()) n += v.value().size();
    return n;
}

Var critic_forward(const Var& img, const CriticWeights& cw) {
    const CriticConfig& cfg = cw.cfg;
    const Tensor& t = img.value();
    if (t.rank() != 4 || t.dim(1) != cfg.input_channels || t.dim(2) != cfg.input_size ||
        t.dim(3) != cfg.input_size)
        throw std::invalid_argument("critic input: expected [B," +
                                    std::to_string(cfg.input_channels) + "," +
                                    std::to_string(cfg.input_size) + "," +
                                    std::to_string(cfg.input_size) + "], got " + t.shape_str());
    Var h = img;
    for (const auto& st : cw.stages) {
        h = conv2d(h, st.w, st.b, 2, 1);
        h = leaky_relu(h, cfg.leaky_slope);
    }
    Var score = linear(flatten_batch(h), cw.head_w, cw.head_b);
    return reshape(score, {t.dim(0)});
}

DomainClassifierWeights DomainClassifierWeights::init(const DomainClassifierConfig& cfg,
                                                      uint64_t seed) {
    DomainClassifierWeights dw;
    dw.cfg = cfg;
    Rng r1(Rng::mix(seed, 200)), r2(Rng::mix(seed, 201)), r3(Rng::mix(seed, 202));
    dw.w1 = Var::leaf(he_normal({cfg.hidden1, cfg.in_dim}, cfg.in_dim, r1), true);
    dw.b1 = Var::leaf(Tensor::zeros({cfg.hidden1}), true);
    dw.w2 = Var::leaf(he_normal({cfg.hidden2, cfg.hidden1}, cfg.hidden1, r2), true);
    dw.b2 = Var::leaf(Tensor::zeros({cfg.hidden2}), true);
    dw.w3 = Var::leaf(he_normal({1, cfg.hidden2}, cfg.hidden2, r3), true);
    dw.b3 = Var::leaf(Tensor::zeros({1}), true);
    return dw;
}

std::vector<std::pair<std::string, Var>> DomainClassifierWeights::named_params() const {
    return {{"fc1.w", w1}, {"fc1.b", b1}, {"fc2.w", w2},
            {"fc2.b", b2}, {"fc3.w", w3}, {"fc3.b", b3}};
}

long DomainClassifierWeights::param_count() const {
    long n = 0;
    for (const auto& [name, v] : named_params()) n += v.value().size();
    return n;
}

Var domain_classifier_forward(const Var& z_flat, const DomainClassifierWeights& dw) {
    const Tensor& t = z_flat.value();
    if (t.rank() != 2 || t.dim(1) != dw.cfg.in_dim)
        throw std::invalid_argument("domain classifier input: expected [B," +
                                    std::to_string(dw.cfg.in_dim) + "], got " + t.shape_str());
    EqualizationConfig eq{dw.cfg.equalize_eps};
    Var h = equalize_features(leaky_relu(linear(z_flat, dw.w1, dw.b1), dw.cfg.leaky_slope), eq,
                              "classifier layer 1");
    h = equalize_features(leaky_relu(linear(h, dw.w2, dw.b2), dw.cfg.leaky_slope), eq,
                          "classifier layer 2");
    Var p = sigmoid(linear(h, dw.w3, dw.b3));
    return reshape(p, {t.dim(0)});
}

Var linear(const Var& x, const Var& w, const Var& b) {
    int out = w.value().dim(0);
    return add(matmul(x, transpose(w)), reshape(b, {1, out}));
}

Var flatten_batch(const Var& x) {
    const Tensor& t = x.value();
    long rest = t.size() / t.dim(0);
    return reshape(x, {t.dim(0), static_cast<int>(rest)});
}

}  // namespace frontal
