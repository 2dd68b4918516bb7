#include "tavr/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace tavr {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    uint64_t out = 0;
    auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || p != v.data() + v.size())
        throw ValidationError("config: " + key + " expects a non-negative integer, got '" + v + "'");
    return out;
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument("trailing");
        return out;
    } catch (const std::exception&) {
        throw ValidationError("config: " + key + " expects a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ValidationError("config: " + key + " expects true/false, got '" + v + "'");
}

struct Field {
    std::function<void(Config&, const std::string&, const std::string&)> set;
    std::function<std::string(const Config&)> get;
};

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

const std::map<std::string, Field>& fields() {
    static const std::map<std::string, Field> f = [] {
        std::map<std::string, Field> m;
        auto u64 = [&m](const std::string& k, uint64_t Config::* p) {
            m[k] = {[p](Config& c, const std::string& key, const std::string& v) { c.*p = parse_u64(key, v); },
                    [p](const Config& c) { return std::to_string(c.*p); }};
        };
        auto sz = [&m](const std::string& k, size_t Config::* p) {
            m[k] = {[p](Config& c, const std::string& key, const std::string& v) { c.*p = size_t(parse_u64(key, v)); },
                    [p](const Config& c) { return std::to_string(c.*p); }};
        };
        auto dbl = [&m](const std::string& k, double Config::* p) {
            m[k] = {[p](Config& c, const std::string& key, const std::string& v) { c.*p = parse_double(key, v); },
                    [p](const Config& c) { return fmt(c.*p); }};
        };
        auto bl = [&m](const std::string& k, bool Config::* p) {
            m[k] = {[p](Config& c, const std::string& key, const std::string& v) { c.*p = parse_bool(key, v); },
                    [p](const Config& c) { return (c.*p) ? "true" : "false"; }};
        };

        u64("run.seed", &Config::seed);
        sz("world.height", &Config::world_h);
        sz("world.width", &Config::world_w);
        sz("world.clip_frames", &Config::clip_frames);
        sz("world.source_frames", &Config::source_frames);
        sz("world.text_dim", &Config::d_text);
        sz("codec.spatial", &Config::c_s);
        sz("codec.temporal", &Config::c_t);
        sz("codec.channels", &Config::c_lat);
        sz("model.width", &Config::d);
        sz("model.heads", &Config::heads);
        sz("model.blocks", &Config::blocks);
        sz("model.patch", &Config::patch);
        sz("model.audio_tokens", &Config::audio_tokens);
        sz("model.audio_dim", &Config::d_audio);
        bl("model.use_ref_audio", &Config::use_ref_audio);
        bl("model.token_selection", &Config::token_selection);
        m["train.stage"] = {[](Config& c, const std::string& key, const std::string& v) {
                                c.stage = int(parse_u64(key, v));
                            },
                            [](const Config& c) { return std::to_string(c.stage); }};
        sz("train.steps", &Config::steps);
        sz("train.batch", &Config::batch);
        dbl("train.lr", &Config::lr);
        sz("train.warmup", &Config::warmup);
        dbl("train.weight_decay", &Config::weight_decay);
        dbl("train.grad_clip", &Config::grad_clip);
        dbl("train.beta", &Config::beta);
        dbl("train.lambda_mse", &Config::lambda_mse);
        dbl("train.lambda_dpo", &Config::lambda_dpo);
        m["train.dpo_variant"] = {[](Config& c, const std::string& key, const std::string& v) {
                                      if (v == "masked") c.dpo_variant = DpoVariant::masked;
                                      else if (v == "unmasked") c.dpo_variant = DpoVariant::unmasked;
                                      else if (v == "masked_real") c.dpo_variant = DpoVariant::masked_real;
                                      else throw ValidationError("config: " + key + ": unknown variant '" + v + "'");
                                  },
                                  [](const Config& c) { return to_string(c.dpo_variant); }};
        dbl("train.pair_margin", &Config::pair_margin);
        dbl("train.cond_dropout", &Config::cond_dropout);
        dbl("train.motion_prob", &Config::motion_prob);
        bl("train.t_logit_normal", &Config::t_logit_normal);
        sz("data.samples", &Config::data_samples);
        sz("data.ref_min", &Config::ref_min);
        sz("data.ref_max", &Config::ref_max);
        sz("dpo.contexts", &Config::dpo_contexts);
        sz("dpo.gens_per_context", &Config::dpo_gens);
        sz("dpo.pair_batch", &Config::dpo_pair_batch);
        sz("dpo.anchor_batch", &Config::dpo_anchor_batch);
        sz("sampler.steps", &Config::sample_steps);
        m["sampler.method"] = {[](Config& c, const std::string& key, const std::string& v) {
                                   if (v == "euler") c.ode_method = OdeMethod::euler;
                                   else if (v == "heun") c.ode_method = OdeMethod::heun;
                                   else throw ValidationError("config: " + key + ": unknown method '" + v + "'");
                               },
                               [](const Config& c) { return to_string(c.ode_method); }};
        dbl("sampler.text_scale", &Config::s_text);
        dbl("sampler.audio_scale", &Config::s_audio);
        return m;
    }();
    return f;
}

}  // namespace

std::string to_string(DpoVariant v) {
    switch (v) {
        case DpoVariant::masked: return "masked";
        case DpoVariant::unmasked: return "unmasked";
        case DpoVariant::masked_real: return "masked_real";
    }
    return "?";
}

std::string to_string(OdeMethod m) {
    return m == OdeMethod::euler ? "euler" : "heun";
}

void Config::validate() const {
    auto fail = [](const std::string& msg) { throw ValidationError("config: " + msg); };
    if (world_h == 0 || world_w == 0 || clip_frames == 0) fail("world dimensions must be positive");
    if (c_s == 0 || c_t == 0 || c_lat == 0) fail("codec factors must be positive");
    if (world_h % c_s || world_w % c_s) fail("frame size must be divisible by the spatial factor");
    if ((clip_frames - 1) % c_t) fail("clip_frames minus one must be divisible by the temporal factor");
    if (patch == 0 || lat_h() % patch || lat_w() % patch)
        fail("latent grid must be divisible by the patch size");
    if (d == 0 || d % 2) fail("model.width must be even");
    if (d < 8) fail("model.width must be at least 8");
    if (heads == 0 || d % heads) fail("model.width must be divisible by model.heads");
    if (blocks == 0) fail("model.blocks must be positive");
    if (audio_tokens == 0 || d_audio == 0) fail("audio token geometry must be positive");
    if (stage < 1 || stage > 3) fail("train.stage must be 1, 2 or 3");
    if (batch == 0) fail("train.batch must be positive");
    if (lr <= 0) fail("train.lr must be positive");
    if (beta <= 0) fail("train.beta must be positive");
    if (pair_margin < 0 || pair_margin > 1) fail("train.pair_margin must be in [0, 1]");
    if (cond_dropout < 0 || cond_dropout >= 1) fail("train.cond_dropout must be in [0, 1)");
    if (motion_prob < 0 || motion_prob > 1) fail("train.motion_prob must be in [0, 1]");
    if (ref_min == 0 || ref_min > ref_max) fail("data.ref_min must be in [1, data.ref_max]");
    if (source_frames < clip_frames + 2 * c_t)
        fail("world.source_frames too small for a clip plus motion frames");
    if (ref_max > source_frames) fail("data.ref_max cannot exceed world.source_frames");
    if (dpo_gens < 2) fail("dpo.gens_per_context must be at least 2");
    if (sample_steps == 0) fail("sampler.steps must be positive");
    if (d_text == 0) fail("world.text_dim must be positive");
}

std::string Config::dump() const {
    std::string out;
    for (const auto& [key, field] : fields()) out += key + " = " + field.get(*this) + "\n";
    return out;
}

Config preset_config(const std::string& name) {
    if (name == "toy") return Config();
    if (name == "paper_scale") {
        Config c;
        c.world_h = 480;
        c.world_w = 896;
        c.clip_frames = 81;
        c.source_frames = 200;
        c.c_s = 8;
        c.c_t = 4;
        c.c_lat = 16;
        c.d = 5120;
        c.heads = 40;
        c.blocks = 40;
        c.patch = 2;
        c.audio_tokens = 32;
        c.d_audio = 768;
        c.lr = 5e-6;
        c.warmup = 50;
        c.steps = 18000;
        c.beta = 500.0;
        c.lambda_mse = 1.0;
        c.lambda_dpo = 2.0;
        c.pair_margin = 0.2;
        c.sample_steps = 24;
        c.s_text = 5.0;
        c.s_audio = 1.8;
        c.data_samples = 0;  // no generator at this scale
        return c;
    }
    throw ValidationError("unknown preset '" + name + "' (expected toy or paper_scale)");
}

void apply_config_line(Config& cfg, const std::string& raw) {
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) return;
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ValidationError("config: expected 'key = value', got '" + trim(raw) + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    auto it = fields().find(key);
    if (it == fields().end()) throw ValidationError("config: unknown key '" + key + "'");
    it->second.set(cfg, key, value);
}

Config parse_config_text(const std::string& text, Config base) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) apply_config_line(base, line);
    return base;
}

Config load_config_file(const std::string& path, Config base) {
    std::ifstream in(path);
    if (!in) throw ValidationError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), std::move(base));
}

}  // namespace tavr
