// Copyright (C) 2026 The OptiPrune Authors
// SPDX-License-Identifier: Apache-2.0

#include "optiprune/harness/report.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "optiprune/error.hpp"
#include "optiprune/toy_pipeline.hpp"

namespace optiprune::harness {

namespace {

using nlohmann::json;

// Round to 9 significant digits so the rendered value survives a
// parse/serialize cycle unchanged.
double round9(double v) {
    if (!std::isfinite(v)) {
        throw DomainError("report: non-finite value");
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::strtod(buf, nullptr);
}

std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

json rounded(const std::vector<double>& values) {
    json arr = json::array();
    for (double v : values) {
        arr.push_back(round9(v));
    }
    return arr;
}

json catalog_json(const CatalogSummary& c) {
    return json{{"base_count", c.base_count},
                {"pruned_count", c.pruned_count},
                {"gamma", round9(c.gamma)},
                {"patch_size", c.patch_size},
                {"noise_sigma", round9(c.noise_sigma)},
                {"seed", c.seed},
                {"base_indices", c.base_indices},
                {"prune_indices", c.prune_indices},
                {"recovery", c.recovery},
                {"base_checksum", c.base_checksum},
                {"prune_checksum", c.prune_checksum},
                {"recovery_checksum", c.recovery_checksum}};
}

CatalogSummary catalog_from_json(const json& j) {
    CatalogSummary c;
    j.at("base_count").get_to(c.base_count);
    j.at("pruned_count").get_to(c.pruned_count);
    j.at("gamma").get_to(c.gamma);
    j.at("patch_size").get_to(c.patch_size);
    j.at("noise_sigma").get_to(c.noise_sigma);
    j.at("seed").get_to(c.seed);
    j.at("base_indices").get_to(c.base_indices);
    j.at("prune_indices").get_to(c.prune_indices);
    j.at("recovery").get_to(c.recovery);
    j.at("base_checksum").get_to(c.base_checksum);
    j.at("prune_checksum").get_to(c.prune_checksum);
    j.at("recovery_checksum").get_to(c.recovery_checksum);
    return c;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError(path, "cannot open output file");
    }
    out << content;
    out.flush();
    if (!out) {
        throw IoError(path, "failed writing output file");
    }
}

}  // namespace

CatalogSummary CatalogSummary::from(const PruneCatalog& catalog) {
    CatalogSummary c;
    c.base_count = catalog.base_indices().size();
    c.pruned_count = catalog.pruned_count();
    c.gamma = catalog.gamma();
    c.patch_size = catalog.patch_size();
    c.noise_sigma = catalog.noise_sigma();
    c.seed = catalog.seed();
    c.base_indices = catalog.base_indices();
    c.prune_indices = catalog.prune_indices();
    c.recovery = catalog.recovery_map();
    c.base_checksum = checksum(std::span<const std::size_t>(c.base_indices));
    c.prune_checksum = checksum(std::span<const std::size_t>(c.prune_indices));
    c.recovery_checksum = checksum(std::span<const std::size_t>(c.recovery));
    return c;
}

json to_json(const RunReport& r, bool include_timing) {
    json j{{"mode", to_string(r.mode)},
           {"repetition", r.repetition},
           {"seeds", {{"pipeline", r.pipeline_seed}, {"noise", r.noise_seed}, {"prune", r.prune_seed}}},
           {"s_cross", round9(r.s_cross)},
           {"s_self", round9(r.s_self)},
           {"valid", r.valid},
           {"kl", round9(r.kl)},
           {"loss_trace", rounded(r.loss_trace)},
           {"s_cross_trace", rounded(r.s_cross_trace)},
           {"s_self_trace", rounded(r.s_self_trace)},
           {"rounds_run", r.rounds_run},
           {"best_round", r.best_round},
           {"mapper_scores", r.mapper_scores ? json{{"s_cross", round9(r.mapper_scores->s_cross)},
                                                    {"s_self", round9(r.mapper_scores->s_self)},
                                                    {"valid", r.mapper_scores->valid}}
                                             : json(nullptr)},
           {"mac",
            {{"denoiser_calls", r.denoiser_calls},
             {"self_attn_pruned", r.self_attn_macs},
             {"self_attn_baseline", r.self_attn_macs_baseline},
             {"ratio", round9(r.mac_ratio)}}},
           {"catalog", r.catalog ? catalog_json(*r.catalog) : json(nullptr)},
           {"z0_checksum", r.z0_checksum}};
    if (include_timing) {
        j["timing"] = {{"wall_ms", round9(r.wall_ms)}, {"self_attn_ms", round9(r.self_attn_ms)}};
    }
    return j;
}

RunReport report_from_json(const json& j) {
    RunReport r;
    r.mode = parse_mode(j.at("mode").get<std::string>());
    j.at("repetition").get_to(r.repetition);
    const auto& seeds = j.at("seeds");
    seeds.at("pipeline").get_to(r.pipeline_seed);
    seeds.at("noise").get_to(r.noise_seed);
    seeds.at("prune").get_to(r.prune_seed);
    j.at("s_cross").get_to(r.s_cross);
    j.at("s_self").get_to(r.s_self);
    j.at("valid").get_to(r.valid);
    j.at("kl").get_to(r.kl);
    j.at("loss_trace").get_to(r.loss_trace);
    j.at("s_cross_trace").get_to(r.s_cross_trace);
    j.at("s_self_trace").get_to(r.s_self_trace);
    j.at("rounds_run").get_to(r.rounds_run);
    j.at("best_round").get_to(r.best_round);
    if (const auto& m = j.at("mapper_scores"); !m.is_null()) {
        ValidityScores v;
        m.at("s_cross").get_to(v.s_cross);
        m.at("s_self").get_to(v.s_self);
        m.at("valid").get_to(v.valid);
        r.mapper_scores = v;
    }
    const auto& mac = j.at("mac");
    mac.at("denoiser_calls").get_to(r.denoiser_calls);
    mac.at("self_attn_pruned").get_to(r.self_attn_macs);
    mac.at("self_attn_baseline").get_to(r.self_attn_macs_baseline);
    mac.at("ratio").get_to(r.mac_ratio);
    if (!j.at("catalog").is_null()) {
        r.catalog = catalog_from_json(j.at("catalog"));
    }
    j.at("z0_checksum").get_to(r.z0_checksum);
    if (j.contains("timing")) {
        j["timing"].at("wall_ms").get_to(r.wall_ms);
        j["timing"].at("self_attn_ms").get_to(r.self_attn_ms);
    }
    return r;
}

std::string render_json(const std::vector<RunReport>& reports, bool include_timing) {
    json arr = json::array();
    for (const auto& r : reports) {
        arr.push_back(to_json(r, include_timing));
    }
    return arr.dump(2) + "\n";
}

std::string render_csv(const std::vector<RunReport>& reports) {
    std::string out = std::string(kCsvHeader) + "\n";
    for (const auto& r : reports) {
        out += to_string(r.mode) + "," + std::to_string(r.noise_seed) + "," + fmt9(r.s_cross) +
               "," + fmt9(r.s_self) + "," + (r.valid ? "true" : "false") + "," + fmt9(r.kl) + "," +
               fmt9(r.mac_ratio) + "," + fmt9(r.wall_ms) + "," + r.z0_checksum + "\n";
    }
    return out;
}

void emit_metrics(const std::vector<RunReport>& reports, OutputFormat format,
                  const std::string& path, bool include_timing) {
    if (reports.empty()) {
        throw DomainError("emit_metrics: no reports to write");
    }
    write_file(path, format == OutputFormat::json ? render_json(reports, include_timing)
                                                  : render_csv(reports));
}

}  // namespace optiprune::harness
