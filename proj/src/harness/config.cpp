// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/harness/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "optiprune/error.hpp"

namespace optiprune::harness {

namespace {

std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

std::uint64_t parse_u64(const std::string& key, const std::string& text) {
    std::uint64_t v = 0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
    }
    return v;
}

std::size_t parse_size(const std::string& key, const std::string& text) {
    return static_cast<std::size_t>(parse_u64(key, text));
}

double parse_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, v);
    if (ec != std::errc() || ptr != end) {
        throw ConfigError(key, "expected a number, got '" + text + "'");
    }
    return v;
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
    std::vector<std::size_t> out;
    std::string_view rest = text;
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const auto item = trim(rest.substr(0, comma));
        out.push_back(parse_size(key, std::string(item)));
        if (comma == std::string_view::npos) {
            break;
        }
        rest = rest.substr(comma + 1);
    }
    return out;
}

std::string render_list(const std::vector<std::size_t>& values) {
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i > 0) {
            out += ",";
        }
        out += std::to_string(values[i]);
    }
    return out;
}

std::string render_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

using Setter = std::function<void(ExperimentConfig&, const std::string& key, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"pipeline.height", [](auto& c, auto& k, auto& v) { c.pipeline.height = parse_size(k, v); }},
        {"pipeline.width", [](auto& c, auto& k, auto& v) { c.pipeline.width = parse_size(k, v); }},
        {"pipeline.channels",
         [](auto& c, auto& k, auto& v) { c.pipeline.latent_channels = parse_size(k, v); }},
        {"pipeline.text_channels",
         [](auto& c, auto& k, auto& v) { c.pipeline.text_channels = parse_size(k, v); }},
        {"pipeline.heads", [](auto& c, auto& k, auto& v) { c.pipeline.heads = parse_size(k, v); }},
        {"pipeline.vocab",
         [](auto& c, auto& k, auto& v) { c.pipeline.vocab_size = parse_size(k, v); }},
        {"pipeline.steps",
         [](auto& c, auto& k, auto& v) { c.pipeline.num_steps = parse_size(k, v); }},
        {"pipeline.guidance",
         [](auto& c, auto& k, auto& v) { c.pipeline.guidance_scale = parse_double(k, v); }},
        {"pipeline.beta_start",
         [](auto& c, auto& k, auto& v) { c.pipeline.beta_start = parse_double(k, v); }},
        {"pipeline.beta_end",
         [](auto& c, auto& k, auto& v) { c.pipeline.beta_end = parse_double(k, v); }},
        {"pipeline.prompt",
         [](auto& c, auto& k, auto& v) { c.pipeline.prompt_tokens = parse_list(k, v); }},
        {"pipeline.subjects",
         [](auto& c, auto& k, auto& v) { c.pipeline.subject_tokens = parse_list(k, v); }},
        {"pipeline.attn_gain",
         [](auto& c, auto& k, auto& v) { c.pipeline.attn_gain = parse_double(k, v); }},
        {"pipeline.smooth_sigma",
         [](auto& c, auto& k, auto& v) { c.pipeline.smooth_sigma = parse_double(k, v); }},
        {"pipeline.smooth_kernel",
         [](auto& c, auto& k, auto& v) { c.pipeline.smooth_kernel = parse_size(k, v); }},
        {"pipeline.seed", [](auto& c, auto& k, auto& v) { c.pipeline.seed = parse_u64(k, v); }},

        {"mapper.tau_c", [](auto& c, auto& k, auto& v) { c.mapper.tau_c = parse_double(k, v); }},
        {"mapper.tau_s", [](auto& c, auto& k, auto& v) { c.mapper.tau_s = parse_double(k, v); }},
        {"mapper.lambda_kl",
         [](auto& c, auto& k, auto& v) { c.mapper.lambda_kl = parse_double(k, v); }},
        {"mapper.inner_steps",
         [](auto& c, auto& k, auto& v) { c.mapper.inner_steps = parse_size(k, v); }},
        {"mapper.outer_rounds",
         [](auto& c, auto& k, auto& v) { c.mapper.outer_rounds = parse_size(k, v); }},
        {"mapper.learning_rate",
         [](auto& c, auto& k, auto& v) { c.mapper.learning_rate = parse_double(k, v); }},
        {"mapper.gradient_mode",
         [](auto& c, auto&, auto& v) { c.mapper.gradient_mode = parse_gradient_mode(v); }},
        {"mapper.fd_epsilon",
         [](auto& c, auto& k, auto& v) { c.mapper.fd_epsilon = parse_double(k, v); }},

        {"prune.gamma", [](auto& c, auto& k, auto& v) { c.prune.gamma = parse_double(k, v); }},
        {"prune.patch_size",
         [](auto& c, auto& k, auto& v) { c.prune.patch_size = parse_size(k, v); }},
        {"prune.noise_sigma",
         [](auto& c, auto& k, auto& v) {
             if (v == "auto") {
                 c.prune.noise_sigma.reset();
             } else {
                 c.prune.noise_sigma = parse_double(k, v);
             }
         }},
        {"prune.seed", [](auto& c, auto& k, auto& v) { c.prune.seed = parse_u64(k, v); }},

        {"run.mode", [](auto& c, auto&, auto& v) { c.mode = parse_mode(v); }},
        {"run.seed", [](auto& c, auto& k, auto& v) { c.seed = parse_u64(k, v); }},
        {"run.repetitions",
         [](auto& c, auto& k, auto& v) { c.repetitions = parse_size(k, v); }},
        {"run.jobs", [](auto& c, auto& k, auto& v) { c.jobs = parse_size(k, v); }},
        {"run.output", [](auto& c, auto&, auto& v) { c.output = v; }},
        {"run.format", [](auto& c, auto&, auto& v) { c.format = parse_format(v); }},
    };
    return table;
}

}  // namespace

std::string to_string(Mode mode) {
    switch (mode) {
        case Mode::full:
            return "full";
        case Mode::v1_no_mapper:
            return "v1_no_mapper";
        case Mode::v2_no_prune:
            return "v2_no_prune";
        case Mode::baseline:
            return "baseline";
    }
    return "unknown";
}

Mode parse_mode(const std::string& text) {
    if (text == "full") {
        return Mode::full;
    }
    if (text == "v1" || text == "v1_no_mapper") {
        return Mode::v1_no_mapper;
    }
    if (text == "v2" || text == "v2_no_prune") {
        return Mode::v2_no_prune;
    }
    if (text == "baseline") {
        return Mode::baseline;
    }
    throw ConfigError("run.mode", "expected full, v1, v2 or baseline, got '" + text + "'");
}

bool uses_mapper(Mode mode) noexcept { return mode == Mode::full || mode == Mode::v2_no_prune; }

bool uses_pruning(Mode mode) noexcept { return mode == Mode::full || mode == Mode::v1_no_mapper; }

std::string to_string(OutputFormat format) { return format == OutputFormat::json ? "json" : "csv"; }

OutputFormat parse_format(const std::string& text) {
    if (text == "json") {
        return OutputFormat::json;
    }
    if (text == "csv") {
        return OutputFormat::csv;
    }
    throw ConfigError("run.format", "expected json or csv, got '" + text + "'");
}

void ExperimentConfig::validate() const {
    pipeline.validate();
    mapper.validate();
    if (!(prune.gamma >= 0.0 && prune.gamma <= 1.0)) {
        throw ConfigError("prune.gamma", "must lie in [0, 1]");
    }
    if (prune.patch_size == 0 || pipeline.height % prune.patch_size != 0 ||
        pipeline.width % prune.patch_size != 0) {
        throw ConfigError("prune.patch_size", "must divide pipeline.height and pipeline.width");
    }
    if (prune.noise_sigma && !(*prune.noise_sigma >= 0.0)) {
        throw ConfigError("prune.noise_sigma", "must be >= 0 or auto");
    }
    if (uses_mapper(mode) && pipeline.subject_tokens.size() < 2) {
        throw ConfigError("pipeline.subjects", "the noise mapper needs at least two subjects");
    }
    if (repetitions < 1) {
        throw ConfigError("run.repetitions", "must be >= 1");
    }
    if (jobs < 1) {
        throw ConfigError("run.jobs", "must be >= 1");
    }
}

KeyValues parse_key_values(std::string_view text) {
    KeyValues out;
    std::size_t line_no = 0;
    while (!text.empty()) {
        ++line_no;
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);

        const auto hash = line.find('#');
        if (hash != std::string_view::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(line_no);
        if (eq == std::string_view::npos) {
            throw ConfigError(where, "expected 'key = value'");
        }
        const std::string key(trim(line.substr(0, eq)));
        const std::string value(trim(line.substr(eq + 1)));
        if (key.empty()) {
            throw ConfigError(where, "empty key");
        }
        if (!out.emplace(key, value).second) {
            throw ConfigError(key, "repeated on " + where);
        }
    }
    return out;
}

ExperimentConfig config_from_key_values(const KeyValues& values) {
    ExperimentConfig cfg;
    const auto& table = setters();
    for (const auto& [key, value] : values) {
        const auto it = table.find(key);
        if (it == table.end()) {
            throw ConfigError(key, "unknown key");
        }
        it->second(cfg, key, value);
    }
    cfg.validate();
    return cfg;
}

KeyValues to_key_values(const ExperimentConfig& c) {
    KeyValues kv;
    kv["pipeline.height"] = std::to_string(c.pipeline.height);
    kv["pipeline.width"] = std::to_string(c.pipeline.width);
    kv["pipeline.channels"] = std::to_string(c.pipeline.latent_channels);
    kv["pipeline.text_channels"] = std::to_string(c.pipeline.text_channels);
    kv["pipeline.heads"] = std::to_string(c.pipeline.heads);
    kv["pipeline.vocab"] = std::to_string(c.pipeline.vocab_size);
    kv["pipeline.steps"] = std::to_string(c.pipeline.num_steps);
    kv["pipeline.guidance"] = render_double(c.pipeline.guidance_scale);
    kv["pipeline.beta_start"] = render_double(c.pipeline.beta_start);
    kv["pipeline.beta_end"] = render_double(c.pipeline.beta_end);
    kv["pipeline.prompt"] = render_list(c.pipeline.prompt_tokens);
    kv["pipeline.subjects"] = render_list(c.pipeline.subject_tokens);
    kv["pipeline.attn_gain"] = render_double(c.pipeline.attn_gain);
    kv["pipeline.smooth_sigma"] = render_double(c.pipeline.smooth_sigma);
    kv["pipeline.smooth_kernel"] = std::to_string(c.pipeline.smooth_kernel);
    kv["pipeline.seed"] = std::to_string(c.pipeline.seed);
    kv["mapper.tau_c"] = render_double(c.mapper.tau_c);
    kv["mapper.tau_s"] = render_double(c.mapper.tau_s);
    kv["mapper.lambda_kl"] = render_double(c.mapper.lambda_kl);
    kv["mapper.inner_steps"] = std::to_string(c.mapper.inner_steps);
    kv["mapper.outer_rounds"] = std::to_string(c.mapper.outer_rounds);
    kv["mapper.learning_rate"] = render_double(c.mapper.learning_rate);
    kv["mapper.gradient_mode"] = to_string(c.mapper.gradient_mode);
    kv["mapper.fd_epsilon"] = render_double(c.mapper.fd_epsilon);
    kv["prune.gamma"] = render_double(c.prune.gamma);
    kv["prune.patch_size"] = std::to_string(c.prune.patch_size);
    kv["prune.noise_sigma"] = c.prune.noise_sigma ? render_double(*c.prune.noise_sigma) : "auto";
    kv["prune.seed"] = std::to_string(c.prune.seed);
    kv["run.mode"] = to_string(c.mode);
    kv["run.seed"] = std::to_string(c.seed);
    kv["run.repetitions"] = std::to_string(c.repetitions);
    kv["run.jobs"] = std::to_string(c.jobs);
    kv["run.output"] = c.output;
    kv["run.format"] = to_string(c.format);
    return kv;
}

std::string render_key_values(const KeyValues& values) {
    std::string out;
    for (const auto& [k, v] : values) {
        out += k + " = " + v + "\n";
    }
    return out;
}

KeyValues read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError(path, "cannot read config file");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_key_values(buf.str());
}

}  // namespace optiprune::harness
