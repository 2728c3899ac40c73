#include "pfdiqa/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "pfdiqa/corpus.hpp"
#include "pfdiqa/errors.hpp"
#include "pfdiqa/hash.hpp"

namespace pfd {

namespace {

enum class FieldType { Int, U64, Double, Bool, String, StringList };

struct Field {
    const char* section;
    const char* key;
    FieldType type;
    void* (*get)(RunConfig&);
};

// every configurable knob, addressed as section.key
const Field kFields[] = {
    {"run", "seed", FieldType::U64, [](RunConfig& c) -> void* { return &c.seed; }},
    {"run", "out", FieldType::String, [](RunConfig& c) -> void* { return &c.out; }},
    {"corpus", "n_sources", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.corpus.n_sources; }},
    {"corpus", "kinds", FieldType::StringList,
     [](RunConfig& c) -> void* { return &c.corpus.kinds; }},
    {"corpus", "image_size", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.corpus.image_size; }},
    {"corpus", "train_frac", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.corpus.train_frac; }},
    {"backbone", "patch_size", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.backbone.patch_size; }},
    {"backbone", "embed_dim", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.backbone.embed_dim; }},
    {"backbone", "depth", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.backbone.depth; }},
    {"backbone", "heads", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.backbone.heads; }},
    {"backbone", "decoder_depth", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.backbone.decoder_depth; }},
    {"backbone", "mlp_ratio", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.backbone.mlp_ratio; }},
    {"pda", "beta_mask", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.pda.beta_mask; }},
    {"pda", "tau", FieldType::Double, [](RunConfig& c) -> void* { return &c.pda.tau; }},
    {"pda", "template_d", FieldType::String,
     [](RunConfig& c) -> void* { return &c.pda.template_d; }},
    {"pda", "template_q", FieldType::String,
     [](RunConfig& c) -> void* { return &c.pda.template_q; }},
    {"pda", "quality_names", FieldType::StringList,
     [](RunConfig& c) -> void* { return &c.pda.quality_names; }},
    {"ppf", "norm_eps", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.ppf.norm_eps; }},
    {"diffusion", "t_train", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.diffusion.t_train; }},
    {"diffusion", "beta_start", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.diffusion.beta_start; }},
    {"diffusion", "beta_end", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.diffusion.beta_end; }},
    {"diffusion", "n_steps", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.diffusion.n_steps; }},
    {"diffusion", "t_start", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.diffusion.t_start; }},
    {"diffusion", "bottleneck_ratio", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.diffusion.bottleneck_ratio; }},
    {"teacher", "epochs", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.teacher.epochs; }},
    {"teacher", "lr", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.teacher.lr; }},
    {"teacher", "batch_size", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.teacher.batch_size; }},
    {"teacher", "weight_decay", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.teacher.weight_decay; }},
    {"teacher", "ce_temperature", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.teacher.ce_temperature; }},
    {"teacher", "quality_weight", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.teacher.quality_weight; }},
    {"teacher", "ema_decay", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.teacher.ema_decay; }},
    {"teacher", "mask_augment", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.teacher.mask_augment; }},
    {"teacher", "dihedral_augment", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.teacher.dihedral_augment; }},
    {"training", "epochs", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.training.epochs; }},
    {"training", "lr", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.training.lr; }},
    {"training", "batch_size", FieldType::Int,
     [](RunConfig& c) -> void* { return &c.training.batch_size; }},
    {"training", "weight_decay", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.training.weight_decay; }},
    {"training", "clip_norm", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.training.clip_norm; }},
    {"training", "lambda1", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.training.lambda1; }},
    {"training", "lambda2", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.training.lambda2; }},
    {"training", "lambda3", FieldType::Double,
     [](RunConfig& c) -> void* { return &c.training.lambda3; }},
    {"training", "use_pda", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.training.use_pda; }},
    {"training", "use_pdr", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.training.use_pdr; }},
    {"training", "use_ana", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.training.use_ana; }},
    {"training", "use_ppa", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.training.use_ppa; }},
    {"training", "stop_grad_sampling", FieldType::Bool,
     [](RunConfig& c) -> void* { return &c.training.stop_grad_sampling; }},
};

const Field* find_field(const std::string& section, const std::string& key) {
    for (const Field& f : kFields)
        if (section == f.section && key == f.key) return &f;
    return nullptr;
}

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

// plain-form values: strings unquoted, lists comma-separated
void apply_plain(RunConfig& cfg, const Field& f, const std::string& value) {
    void* p = f.get(cfg);
    const std::string where = std::string(f.section) + "." + f.key;
    switch (f.type) {
        case FieldType::Int: {
            int v = 0;
            auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || ptr != value.data() + value.size())
                throw ArgumentError("config " + where + ": expected integer, got '" + value + "'");
            *static_cast<int*>(p) = v;
            break;
        }
        case FieldType::U64: {
            std::uint64_t v = 0;
            auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || ptr != value.data() + value.size())
                throw ArgumentError("config " + where + ": expected unsigned integer, got '" +
                                    value + "'");
            *static_cast<std::uint64_t*>(p) = v;
            break;
        }
        case FieldType::Double: {
            double v = 0;
            auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
            if (ec != std::errc() || ptr != value.data() + value.size())
                throw ArgumentError("config " + where + ": expected number, got '" + value + "'");
            *static_cast<double*>(p) = v;
            break;
        }
        case FieldType::Bool: {
            if (value == "true")
                *static_cast<bool*>(p) = true;
            else if (value == "false")
                *static_cast<bool*>(p) = false;
            else
                throw ArgumentError("config " + where + ": expected true/false, got '" + value +
                                    "'");
            break;
        }
        case FieldType::String:
            *static_cast<std::string*>(p) = value;
            break;
        case FieldType::StringList: {
            auto* list = static_cast<std::vector<std::string>*>(p);
            list->clear();
            if (trim(value).empty()) break;
            std::size_t start = 0;
            for (std::size_t i = 0; i <= value.size(); ++i) {
                if (i == value.size() || value[i] == ',') {
                    const std::string item = trim(value.substr(start, i - start));
                    if (item.empty())
                        throw ArgumentError("config " + where + ": empty list item");
                    list->push_back(item);
                    start = i + 1;
                }
            }
            break;
        }
    }
}

// converts a file-syntax value token to plain form
std::string file_value_to_plain(const std::string& raw, const std::string& where) {
    const std::string v = trim(raw);
    if (v.empty()) throw ArgumentError("config " + where + ": empty value");
    if (v.front() == '"') {
        if (v.size() < 2 || v.back() != '"')
            throw ArgumentError("config " + where + ": unterminated string");
        return v.substr(1, v.size() - 2);
    }
    if (v.front() == '[') {
        if (v.back() != ']')
            throw ArgumentError("config " + where + ": unterminated list");
        std::string inner = trim(v.substr(1, v.size() - 2));
        std::string plain;
        std::size_t start = 0;
        if (inner.empty()) return "";
        for (std::size_t i = 0; i <= inner.size(); ++i) {
            if (i == inner.size() || inner[i] == ',') {
                std::string item = trim(inner.substr(start, i - start));
                if (!item.empty() && item.front() == '"') {
                    if (item.size() < 2 || item.back() != '"')
                        throw ArgumentError("config " + where + ": bad list string");
                    item = item.substr(1, item.size() - 2);
                }
                if (!plain.empty()) plain += ',';
                plain += item;
                start = i + 1;
            }
        }
        return plain;
    }
    return v;
}

std::string strip_comment(const std::string& line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        if (line[i] == '"') in_string = !in_string;
        if (line[i] == '#' && !in_string) return line.substr(0, i);
    }
    return line;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

std::string render_field(const RunConfig& cfg, const Field& f) {
    void* p = f.get(const_cast<RunConfig&>(cfg));
    switch (f.type) {
        case FieldType::Int: return std::to_string(*static_cast<int*>(p));
        case FieldType::U64: return std::to_string(*static_cast<std::uint64_t*>(p));
        case FieldType::Double: return format_double(*static_cast<double*>(p));
        case FieldType::Bool: return *static_cast<bool*>(p) ? "true" : "false";
        case FieldType::String: return quote(*static_cast<std::string*>(p));
        case FieldType::StringList: {
            const auto& list = *static_cast<std::vector<std::string>*>(p);
            std::string out = "[";
            for (std::size_t i = 0; i < list.size(); ++i) {
                if (i) out += ", ";
                out += quote(list[i]);
            }
            return out + "]";
        }
    }
    return "";
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        line = trim(strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ArgumentError("config line " + std::to_string(lineno) +
                                    ": malformed section header");
            section = trim(line.substr(1, line.size() - 2));
            bool known = false;
            for (const Field& f : kFields) known = known || section == f.section;
            if (!known)
                throw ArgumentError("config line " + std::to_string(lineno) +
                                    ": unknown section [" + section + "]");
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ArgumentError("config line " + std::to_string(lineno) +
                                ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string raw = line.substr(eq + 1);
        if (section.empty())
            throw ArgumentError("config line " + std::to_string(lineno) +
                                ": key outside any [section]");
        const Field* f = find_field(section, key);
        if (!f)
            throw ArgumentError("config line " + std::to_string(lineno) + ": unknown key " +
                                section + "." + key);
        apply_plain(cfg, *f, file_value_to_plain(raw, section + "." + key));
    }
    return cfg;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

void apply_env_overrides(RunConfig& cfg) {
    for (const Field& f : kFields) {
        std::string name = "PFDIQA_";
        for (const char* c = f.section; *c; ++c)
            name += static_cast<char>(std::toupper(*c));
        name += "__";
        for (const char* c = f.key; *c; ++c) name += static_cast<char>(std::toupper(*c));
        if (const char* v = std::getenv(name.c_str())) apply_plain(cfg, f, v);
    }
}

void apply_override(RunConfig& cfg, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos)
        throw ArgumentError("override must look like section.key=value: " + spec);
    const std::string addr = trim(spec.substr(0, eq));
    const std::string value = trim(spec.substr(eq + 1));
    const auto dot = addr.find('.');
    if (dot == std::string::npos)
        throw ArgumentError("override must look like section.key=value: " + spec);
    const Field* f = find_field(addr.substr(0, dot), addr.substr(dot + 1));
    if (!f) throw ArgumentError("unknown config key in override: " + addr);
    apply_plain(cfg, *f, value);
}

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ArgumentError("config: " + msg); };
    if (corpus.n_sources < 1) fail("corpus.n_sources must be >= 1");
    if (corpus.image_size < 16) fail("corpus.image_size must be >= 16");
    if (corpus.train_frac <= 0.0 || corpus.train_frac >= 1.0)
        fail("corpus.train_frac must lie strictly between 0 and 1");
    for (const std::string& k : corpus.kinds) kind_from_name(k);

    if (backbone.patch_size < 1) fail("backbone.patch_size must be >= 1");
    if (corpus.image_size % backbone.patch_size != 0)
        fail("corpus.image_size must be divisible by backbone.patch_size");
    if (backbone.embed_dim < 4) fail("backbone.embed_dim must be >= 4");
    if (backbone.heads < 1 || backbone.embed_dim % backbone.heads != 0)
        fail("backbone.embed_dim must be divisible by backbone.heads");
    if (backbone.depth < 1 || backbone.decoder_depth < 1)
        fail("backbone depths must be >= 1");
    if (backbone.mlp_ratio < 1) fail("backbone.mlp_ratio must be >= 1");
    const int grid = corpus.image_size / backbone.patch_size;
    if (grid < 2) fail("token grid must be at least 2x2");

    if (pda.beta_mask < 0.0 || pda.beta_mask >= 1.0)
        fail("pda.beta_mask must lie in [0,1)");
    if (pda.tau <= 0.0) fail("pda.tau must be positive");
    if (pda.template_d.find("{d}") == std::string::npos)
        fail("pda.template_d must contain {d}");
    if (pda.template_q.find("{q}") == std::string::npos)
        fail("pda.template_q must contain {q}");
    if (pda.quality_names.empty()) fail("pda.quality_names must be non-empty");
    std::set<std::string> uq(pda.quality_names.begin(), pda.quality_names.end());
    if (uq.size() != pda.quality_names.size()) fail("pda.quality_names must be unique");

    if (ppf.norm_eps <= 0.0) fail("ppf.norm_eps must be positive");

    if (diffusion.t_train < 1) fail("diffusion.t_train must be >= 1");
    if (!(diffusion.beta_start > 0.0 && diffusion.beta_start < diffusion.beta_end &&
          diffusion.beta_end < 1.0))
        fail("diffusion betas must satisfy 0 < beta_start < beta_end < 1");
    if (diffusion.n_steps < 1) fail("diffusion.n_steps must be >= 1");
    if (diffusion.n_steps > diffusion.t_train)
        fail("diffusion.n_steps cannot exceed t_train");
    if (diffusion.t_start < -1 || diffusion.t_start >= diffusion.t_train)
        fail("diffusion.t_start must be -1 (auto) or a valid timestep index");
    if (diffusion.t_start >= 0 && diffusion.n_steps > diffusion.t_start + 1)
        fail("diffusion.n_steps cannot exceed t_start + 1");
    if (diffusion.bottleneck_ratio < 1 ||
        backbone.embed_dim % diffusion.bottleneck_ratio != 0)
        fail("backbone.embed_dim must be divisible by diffusion.bottleneck_ratio");

    auto check_optim = [&](const char* who, int epochs, double lr, int batch, double wd) {
        if (epochs < 1) fail(std::string(who) + ".epochs must be >= 1");
        if (lr <= 0.0) fail(std::string(who) + ".lr must be positive");
        if (batch < 1) fail(std::string(who) + ".batch_size must be >= 1");
        if (wd < 0.0) fail(std::string(who) + ".weight_decay must be >= 0");
    };
    check_optim("teacher", teacher.epochs, teacher.lr, teacher.batch_size,
                teacher.weight_decay);
    check_optim("training", training.epochs, training.lr, training.batch_size,
                training.weight_decay);
    if (teacher.ce_temperature <= 0.0) fail("teacher.ce_temperature must be positive");
    if (teacher.quality_weight < 0.0) fail("teacher.quality_weight must be >= 0");
    if (teacher.ema_decay < 0.0 || teacher.ema_decay >= 1.0)
        fail("teacher.ema_decay must be in [0, 1)");
    if (training.clip_norm < 0.0) fail("training.clip_norm must be >= 0");
    if (training.lambda1 < 0.0 || training.lambda2 < 0.0 || training.lambda3 < 0.0)
        fail("loss weights must be >= 0");
    if (out.empty()) fail("run.out must be non-empty");
}

std::string RunConfig::canonical() const {
    std::vector<std::pair<std::string, std::string>> rows;
    for (const Field& f : kFields)
        rows.emplace_back(std::string(f.section) + "." + f.key, render_field(*this, f));
    std::sort(rows.begin(), rows.end());
    std::string out;
    std::string section;
    for (const auto& [addr, value] : rows) {
        const auto dot = addr.find('.');
        const std::string sec = addr.substr(0, dot);
        if (sec != section) {
            if (!out.empty()) out += '\n';
            out += "[" + sec + "]\n";
            section = sec;
        }
        out += addr.substr(dot + 1) + " = " + value + "\n";
    }
    return out;
}

std::string RunConfig::fingerprint() const {
    const std::string c = canonical();
    return hash_hex(hash_bytes(c.data(), c.size()));
}

}  // namespace pfd
