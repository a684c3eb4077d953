#include "stainfocus/config.hpp"

#include "stainfocus/errors.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

namespace stainfocus {

std::filesystem::path RunConfig::manifest_path() const { return manifest.empty() ? data_dir / "manifest.csv" : manifest; }

GenConfig RunConfig::resolved_gen() const {
    GenConfig g = gen;
    if (gen_profile == "default") {
        g.stains = default_stain_optics();
    } else if (gen_profile == "uniform") {
        g.stains = uniform_stain_optics();
    } else {
        throw ConfigError("gen.profile must be 'default' or 'uniform', got '" + gen_profile + "'");
    }
    g.seed = seed;
    return g;
}

ModelConfig RunConfig::model_config(const std::vector<std::string>& stains, int levels) const {
    ModelConfig m;
    m.stains = stains;
    m.num_levels = levels;
    m.vision.image_size = gen.image_size;
    m.tokens_per_stain = tokens_per_stain;
    m.rank_tokens = rank_tokens;
    m.anchors = anchors;
    m.cond_hidden = cond_hidden;
    m.stain_context = stain_context;
    m.rank_context = rank_context;
    m.variant = variant;
    m.seed = seed;
    return m;
}

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw ConfigError("config key '" + key + "': '" + value + "' is not " + expected);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value, const char* expected) {
    T out{};
    const char* end = value.data() + value.size();
    const auto [ptr, ec] = std::from_chars(value.data(), end, out);
    if (ec != std::errc() || ptr != end) bad_value(key, value, expected);
    return out;
}

int parse_int(const std::string& k, const std::string& v) { return parse_number<int>(k, v, "an integer"); }
std::uint64_t parse_u64(const std::string& k, const std::string& v) {
    return parse_number<std::uint64_t>(k, v, "a non-negative integer");
}
double parse_double(const std::string& k, const std::string& v) { return parse_number<double>(k, v, "a number"); }

bool parse_bool(const std::string& k, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    bad_value(k, v, "a boolean");
}

std::string num(double v) {
    std::ostringstream s;
    s.precision(17);
    s << v;
    return s.str();
}

struct KeySpec {
    std::function<void(RunConfig&, const std::string& key, const std::string& value)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SF_INT(field) \
    {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_int(k, v); }, \
     [](const RunConfig& c) { return std::to_string(c.field); }}
#define SF_DOUBLE(field) \
    {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_double(k, v); }, \
     [](const RunConfig& c) { return num(c.field); }}
#define SF_BOOL(field) \
    {[](RunConfig& c, const std::string& k, const std::string& v) { c.field = parse_bool(k, v); }, \
     [](const RunConfig& c) { return std::string(c.field ? "true" : "false"); }}
#define SF_STRING(field) \
    {[](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
     [](const RunConfig& c) { return std::string(c.field); }}
#define SF_PATH(field) \
    {[](RunConfig& c, const std::string&, const std::string& v) { c.field = v; }, \
     [](const RunConfig& c) { return c.field.string(); }}

const std::map<std::string, KeySpec>& key_table() {
    static const std::map<std::string, KeySpec> table = {
        {"run.name", SF_STRING(run_name)},
        {"run.seed",
         {[](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
          [](const RunConfig& c) { return std::to_string(c.seed); }}},
        {"paths.data", SF_PATH(data_dir)},
        {"paths.manifest", SF_PATH(manifest)},
        {"paths.out", SF_PATH(out_dir)},
        {"paths.checkpoint", SF_PATH(checkpoint)},
        {"gen.profile", SF_STRING(gen_profile)},
        {"gen.stacks_per_stain", SF_INT(gen.stacks_per_stain)},
        {"gen.planes_per_stack", SF_INT(gen.planes_per_stack)},
        {"gen.image_size", SF_INT(gen.image_size)},
        {"gen.num_levels", SF_INT(gen.num_levels)},
        {"gen.tissue", SF_STRING(gen.tissue)},
        {"gen.best_focus_mode",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              if (v == "center") c.gen.best_focus_mode = BestFocusMode::kCenter;
              else if (v == "uniform-random") c.gen.best_focus_mode = BestFocusMode::kUniformRandom;
              else bad_value(k, v, "'center' or 'uniform-random'");
          },
          [](const RunConfig& c) {
              return std::string(c.gen.best_focus_mode == BestFocusMode::kCenter ? "center" : "uniform-random");
          }}},
        {"train.stage1_epochs", SF_INT(train.stage1_epochs)},
        {"train.stage2_epochs", SF_INT(train.stage2_epochs)},
        {"train.baseline_epochs", SF_INT(train.baseline_epochs)},
        {"train.batch_size", SF_INT(train.batch_size)},
        {"train.stage1_lr", SF_DOUBLE(train.stage1_lr)},
        {"train.stage2_lr", SF_DOUBLE(train.stage2_lr)},
        {"train.baseline_lr", SF_DOUBLE(train.baseline_lr)},
        {"train.alpha", SF_DOUBLE(train.alpha)},
        {"train.beta", SF_DOUBLE(train.beta)},
        {"train.kl_temperature", SF_DOUBLE(train.kl_temperature)},
        {"train.stage1_kl", SF_BOOL(train.stage1_kl)},
        {"train.augment", SF_BOOL(train.augment)},
        {"train.test_fraction", SF_DOUBLE(test_fraction)},
        {"model.tokens_per_stain", SF_INT(tokens_per_stain)},
        {"model.rank_tokens", SF_INT(rank_tokens)},
        {"model.cond_hidden", SF_INT(cond_hidden)},
        {"model.stain_context", SF_STRING(stain_context)},
        {"model.rank_context", SF_STRING(rank_context)},
        {"model.anchors",
         {[](RunConfig& c, const std::string& k, const std::string& v) {
              c.anchors.clear();
              for (const auto& item : split_list(v)) c.anchors.push_back(parse_int(k, item));
          },
          [](const RunConfig& c) {
              std::vector<std::string> items;
              for (int a : c.anchors) items.push_back(std::to_string(a));
              return join_list(items);
          }}},
        {"ablation.variant",
         {[](RunConfig& c, const std::string&, const std::string& v) { c.variant = parse_variant(v); },
          [](const RunConfig& c) { return variant_name(c.variant); }}},
        {"ablation.baseline",
         {[](RunConfig& c, const std::string&, const std::string& v) {
              if (v == "none") c.baseline.reset();
              else c.baseline = parse_baseline(v);
          },
          [](const RunConfig& c) { return c.baseline ? baseline_name(*c.baseline) : std::string("none"); }}},
        {"ablation.variants",
         {[](RunConfig& c, const std::string&, const std::string& v) {
              c.ablation_variants = split_list(v);
              for (const auto& tag : c.ablation_variants)
                  if (tag != "CE" && tag != "OE") (void)parse_variant(tag);
          },
          [](const RunConfig& c) { return join_list(c.ablation_variants); }}},
        {"ablation.seeds", SF_INT(ablation_seeds)},
    };
    return table;
}

#undef SF_INT
#undef SF_DOUBLE
#undef SF_BOOL
#undef SF_STRING
#undef SF_PATH

}  // namespace

const std::vector<std::string>& known_config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> out;
        for (const auto& [k, entry] : key_table()) out.push_back(k);
        return out;
    }();
    return keys;
}

void apply_key_values(RunConfig& config, const KeyValues& values) {
    const auto& table = key_table();
    for (const auto& [key, value] : values) {
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
        it->second.set(config, key, value);
    }
}

KeyValues to_key_values(const RunConfig& config) {
    KeyValues out;
    for (const auto& [key, entry] : key_table()) out[key] = entry.get(config);
    return out;
}

RunConfig load_run_config(const std::optional<std::filesystem::path>& path) {
    RunConfig config;
    if (const char* env = std::getenv("FLUO_SEED"); env && *env) config.seed = parse_u64("FLUO_SEED", env);
    if (path) {
        KeyValues values;
        try {
            values = read_key_values(*path);
        } catch (const ParseError& e) {
            throw ConfigError(e.what());
        }
        apply_key_values(config, values);
    }
    return config;
}

}  // namespace stainfocus
