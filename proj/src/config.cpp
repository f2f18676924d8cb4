#include "frontal/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace frontal {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "1" || v == "true" || v == "on") return true;
    if (v == "0" || v == "false" || v == "off") return false;
    throw std::invalid_argument("config key " + key + ": bad boolean '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config key " + key + ": bad number '" + v + "'");
    }
}

long parse_long(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        long d = std::stol(v, &used);
        if (used != v.size()) throw std::invalid_argument("");
        return d;
    } catch (...) {
        throw std::invalid_argument("config key " + key + ": bad integer '" + v + "'");
    }
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
    std::vector<int> out;
    std::istringstream is(v);
    std::string item;
    while (std::getline(is, item, ',')) out.push_back(static_cast<int>(parse_long(key, item)));
    if (out.empty()) throw std::invalid_argument("config key " + key + ": empty list");
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

ConfigMap parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file " + path);
    ConfigMap m;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected key=value");
        m[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }
    return m;
}

void apply_override(ConfigMap& m, const std::string& key_value) {
    size_t eq = key_value.find('=');
    if (eq == std::string::npos)
        throw std::invalid_argument("override must be key=value, got '" + key_value + "'");
    m[trim(key_value.substr(0, eq))] = trim(key_value.substr(eq + 1));
}

TrainConfig make_train_config(const ConfigMap& m) {
    TrainConfig c;
    for (const auto& [key, v] : m) {
        if (key == "train.steps") c.total_steps = parse_long(key, v);
        else if (key == "train.batch_size") c.batch_size = static_cast<int>(parse_long(key, v));
        else if (key == "train.learning_rate") c.learning_rate = parse_double(key, v);
        else if (key == "train.lr_decay") c.lr_decay = parse_double(key, v);
        else if (key == "train.critic_steps") c.critic_steps = static_cast<int>(parse_long(key, v));
        else if (key == "train.seed") c.seed = static_cast<uint64_t>(parse_long(key, v));
        else if (key == "train.same_id_fraction") c.same_id_fraction = parse_double(key, v);
        else if (key == "train.checkpoint_every") c.checkpoint_every = parse_long(key, v);
        else if (key == "loss.lambda_id") c.weights.lambda_id = parse_double(key, v);
        else if (key == "loss.lambda_adv") c.weights.lambda_adv = parse_double(key, v);
        else if (key == "loss.lambda_contrastive")
            c.weights.lambda_contrastive = parse_double(key, v);
        else if (key == "loss.lambda_tv") c.weights.lambda_tv = parse_double(key, v);
        else if (key == "loss.lambda_gp") c.weights.lambda_gp = parse_double(key, v);
        else if (key == "loss.lambda_local") c.weights.lambda_local = parse_double(key, v);
        else if (key == "loss.lambda_grl") c.weights.lambda_grl = parse_double(key, v);
        else if (key == "loss.lambda_cls") c.weights.lambda_cls = parse_double(key, v);
        else if (key == "loss.margin") c.weights.margin = parse_double(key, v);
        else if (key == "loss.epsilon") c.weights.epsilon = parse_double(key, v);
        else if (key == "ablation.multiscale_pixel")
            c.ablation.multiscale_pixel = parse_bool(key, v);
        else if (key == "ablation.identity_loss") c.ablation.identity_loss = parse_bool(key, v);
        else if (key == "ablation.self_attention")
            c.ablation.self_attention = parse_bool(key, v);
        else if (key == "ablation.local_critic") c.ablation.local_critic = parse_bool(key, v);
        else if (key == "ablation.equalization") c.ablation.equalization = parse_bool(key, v);
        else if (key == "ablation.cls_loss") c.ablation.cls_loss = parse_bool(key, v);
        else if (key == "ablation.contrastive") c.ablation.contrastive = parse_bool(key, v);
        else if (key == "model.encoder_channels")
            c.generator.encoder_channels = parse_int_list(key, v);
        else if (key == "model.critic_channels") c.critic.channels = parse_int_list(key, v);
        else if (key == "model.classifier_hidden1")
            c.classifier.hidden1 = static_cast<int>(parse_long(key, v));
        else if (key == "model.classifier_hidden2")
            c.classifier.hidden2 = static_cast<int>(parse_long(key, v));
        else if (key == "model.embedder_channels")
            c.embedder.channels = parse_int_list(key, v);
        else if (key == "model.embedder_seed")
            c.embedder.seed = static_cast<uint64_t>(parse_long(key, v));
        else
            throw std::invalid_argument("unknown config key '" + key + "'");
    }
    return c;
}

ConfigMap config_to_map(const TrainConfig& c) {
    ConfigMap m;
    m["train.steps"] = std::to_string(c.total_steps);
    m["train.batch_size"] = std::to_string(c.batch_size);
    m["train.learning_rate"] = fmt(c.learning_rate);
    m["train.lr_decay"] = fmt(c.lr_decay);
    m["train.critic_steps"] = std::to_string(c.critic_steps);
    m["train.seed"] = std::to_string(c.seed);
    m["train.same_id_fraction"] = fmt(c.same_id_fraction);
    m["train.checkpoint_every"] = std::to_string(c.checkpoint_every);
    m["loss.lambda_id"] = fmt(c.weights.lambda_id);
    m["loss.lambda_adv"] = fmt(c.weights.lambda_adv);
    m["loss.lambda_contrastive"] = fmt(c.weights.lambda_contrastive);
    m["loss.lambda_tv"] = fmt(c.weights.lambda_tv);
    m["loss.lambda_gp"] = fmt(c.weights.lambda_gp);
    m["loss.lambda_local"] = fmt(c.weights.lambda_local);
    m["loss.lambda_grl"] = fmt(c.weights.lambda_grl);
    m["loss.lambda_cls"] = fmt(c.weights.lambda_cls);
    m["loss.margin"] = fmt(c.weights.margin);
    m["loss.epsilon"] = fmt(c.weights.epsilon);
    m["ablation.multiscale_pixel"] = c.ablation.multiscale_pixel ? "1" : "0";
    m["ablation.identity_loss"] = c.ablation.identity_loss ? "1" : "0";
    m["ablation.self_attention"] = c.ablation.self_attention ? "1" : "0";
    m["ablation.local_critic"] = c.ablation.local_critic ? "1" : "0";
    m["ablation.equalization"] = c.ablation.equalization ? "1" : "0";
    m["ablation.cls_loss"] = c.ablation.cls_loss ? "1" : "0";
    m["ablation.contrastive"] = c.ablation.contrastive ? "1" : "0";
    m["model.encoder_channels"] = join_ints(c.generator.encoder_channels);
    m["model.critic_channels"] = join_ints(c.critic.channels);
    m["model.classifier_hidden1"] = std::to_string(c.classifier.hidden1);
    m["model.classifier_hidden2"] = std::to_string(c.classifier.hidden2);
    m["model.embedder_channels"] = join_ints(c.embedder.channels);
    m["model.embedder_seed"] = std::to_string(c.embedder.seed);
    return m;
}

void write_config_snapshot(const std::string& path, const ConfigMap& m) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write config snapshot " + path);
    for (const auto& [k, v] : m) out << k << "=" << v << "\n";
}

}  // namespace frontal
