#include "frontal/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "frontal/rng.hpp"

namespace frontal {

Embedder Embedder::init(const EmbedderConfig& cfg) {
    if (cfg.channels.empty()) throw std::invalid_argument("EmbedderConfig: no stages");
    Embedder e;
    e.cfg = cfg;
    int in_ch = 3;
    uint64_t salt = 400;
    for (int ch : cfg.channels) {
        Rng r(Rng::mix(cfg.seed, salt++));
        ConvLayer l;
        double std = std::sqrt(2.0 / (in_ch * 9.0));
        Tensor w({ch, in_ch, 3, 3});
        for (long i = 0; i < w.size(); ++i) w[i] = std * r.normal();
        l.w = Var::leaf(std::move(w), false);  // frozen
        l.b = Var::leaf(Tensor::zeros({ch}), false);
        e.stages.push_back(std::move(l));
        in_ch = ch;
    }
    return e;
}

Var Embedder::features(const Var& imgs) const {
    const Tensor& t = imgs.value();
    if (t.rank() != 4 || t.dim(1) != 3 || t.dim(2) != cfg.input_size || t.dim(3) != cfg.input_size)
        throw std::invalid_argument("embedder input: expected [B,3," +
                                    std::to_string(cfg.input_size) + "," +
                                    std::to_string(cfg.input_size) + "], got " + t.shape_str());
    Var h = imgs;
    for (const auto& st : stages) {
        h = conv2d(h, st.w, st.b, 2, 1);
        h = leaky_relu(h, cfg.leaky_slope);
    }
    return mean_axes(h, {2, 3}, false);  // global average pool -> [B,D]
}

std::vector<double> Embedder::embedding(const Tensor& img) const {
    NoGradGuard ng;
    Tensor batch = img.reshaped({1, img.dim(0), img.dim(1), img.dim(2)});
    Var f = features(Var::leaf(std::move(batch), false));
    std::vector<double> v(f.value().data(), f.value().data() + f.value().size());
    double norm = 0;
    for (double x : v) norm += x * x;
    norm = std::max(std::sqrt(norm), 1e-12);
    for (double& x : v) x /= norm;
    return v;
}

std::vector<double> extract_embedding(const Tensor& img, const Embedder& emb) {
    return emb.embedding(img);
}

std::string VerificationReport::to_json() const {
    nlohmann::json j;
    j["auc"] = auc;
    j["eer"] = eer;
    j["tar_at_far_1"] = tar_at_far1;
    j["tar_at_far_5"] = tar_at_far5;
    j["n_genuine"] = n_genuine;
    j["n_imposter"] = n_imposter;
    auto roc_j = nlohmann::json::array();
    for (const auto& p : roc) roc_j.push_back({p.far, p.tar});
    j["roc"] = roc_j;
    return j.dump(2);
}

ScoreSet score_protocol(const Dataset& ds, const std::vector<int>& gallery,
                        const std::vector<int>& probe, const FrontalizeFn& generator,
                        const EmbeddingFn& embed) {
    if (gallery.empty() || probe.empty())
        throw std::invalid_argument("score_protocol: empty gallery or probe");
    std::set<std::string> gallery_ids;
    for (int gi : gallery) gallery_ids.insert(ds.records()[static_cast<size_t>(gi)].identity);
    for (int pi : probe) {
        const std::string& id = ds.records()[static_cast<size_t>(pi)].identity;
        if (!gallery_ids.count(id))
            throw std::invalid_argument("probe identity " + id + " absent from gallery");
    }

    std::vector<std::vector<double>> gallery_emb;
    gallery_emb.reserve(gallery.size());
    for (int gi : gallery) gallery_emb.push_back(embed(ds.image(gi)));

    ScoreSet out;
    for (int pi : probe) {
        Tensor img = ds.image(pi);
        if (generator) img = generator(img);
        std::vector<double> pe = embed(img);
        const std::string& pid = ds.records()[static_cast<size_t>(pi)].identity;
        for (size_t k = 0; k < gallery.size(); ++k) {
            double dot = 0;
            for (size_t d = 0; d < pe.size(); ++d) dot += pe[d] * gallery_emb[k][d];
            const std::string& gid = ds.records()[static_cast<size_t>(gallery[k])].identity;
            (gid == pid ? out.genuine : out.imposter).push_back(dot);
        }
    }
    return out;
}

ScoreSet score_protocol(const Dataset& ds, const std::vector<int>& gallery,
                        const std::vector<int>& probe, const FrontalizeFn& generator,
                        const Embedder& emb) {
    return score_protocol(ds, gallery, probe, generator,
                          EmbeddingFn([&emb](const Tensor& img) { return emb.embedding(img); }));
}

VerificationReport roc_metrics(const ScoreSet& s) {
    if (s.genuine.empty() || s.imposter.empty())
        throw std::invalid_argument("roc_metrics: need both genuine and imposter scores");
    for (double v : s.genuine)
        if (!std::isfinite(v)) throw std::invalid_argument("roc_metrics: non-finite score");
    for (double v : s.imposter)
        if (!std::isfinite(v)) throw std::invalid_argument("roc_metrics: non-finite score");

    std::vector<double> thresholds;
    thresholds.reserve(s.genuine.size() + s.imposter.size());
    thresholds.insert(thresholds.end(), s.genuine.begin(), s.genuine.end());
    thresholds.insert(thresholds.end(), s.imposter.begin(), s.imposter.end());
    std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    auto frac_ge = [](const std::vector<double>& v, double t) {
        long c = 0;
        for (double x : v) c += x >= t;
        return static_cast<double>(c) / static_cast<double>(v.size());
    };

    VerificationReport r;
    r.n_genuine = static_cast<long>(s.genuine.size());
    r.n_imposter = static_cast<long>(s.imposter.size());
    r.roc.push_back({0.0, 0.0});  // threshold above every score
    for (double t : thresholds) r.roc.push_back({frac_ge(s.imposter, t), frac_ge(s.genuine, t)});
    if (r.roc.back().far != 1.0 || r.roc.back().tar != 1.0) r.roc.push_back({1.0, 1.0});

    double auc = 0;
    for (size_t i = 1; i < r.roc.size(); ++i)
        auc += (r.roc[i].far - r.roc[i - 1].far) * (r.roc[i].tar + r.roc[i - 1].tar) / 2.0;
    r.auc = 100.0 * auc;

    // EER: walk threshold-descending points; FAR rises while FRR falls.
    double eer = 0;
    double prev_far = 0.0, prev_frr = 1.0;
    for (size_t i = 1; i < r.roc.size(); ++i) {
        double far = r.roc[i].far;
        double frr = 1.0 - r.roc[i].tar;
        if (far >= frr) {
            double den = (far - prev_far) - (frr - prev_frr);
            double alpha = den == 0 ? 0.0 : (prev_frr - prev_far) / den;
            eer = prev_far + alpha * (far - prev_far);
            break;
        }
        prev_far = far;
        prev_frr = frr;
    }
    r.eer = 100.0 * eer;

    auto tar_at = [&](double target) {
        double best = 0.0;  // the virtual threshold above all scores has FAR 0
        for (size_t i = 1; i < r.roc.size(); ++i)
            if (r.roc[i].far <= target) best = std::max(best, r.roc[i].tar);
        return 100.0 * best;
    };
    r.tar_at_far1 = tar_at(0.01);
    r.tar_at_far5 = tar_at(0.05);
    return r;
}

double tar_at_far(const VerificationReport& r, double far_percent) {
    double target = far_percent / 100.0;
    double best = 0.0;
    for (const auto& p : r.roc)
        if (p.far <= target) best = std::max(best, p.tar);
    return 100.0 * best;
}

}  // namespace frontal
