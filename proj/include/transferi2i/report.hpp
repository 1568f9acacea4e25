#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "transferi2i/metrics.hpp"
#include "transferi2i/pipeline.hpp"

namespace transferi2i::report {

double median(std::vector<double> values);

/// Per-label median across seeds, in first-seen label order.
std::vector<pipeline::AblationRow> median_rows(const std::vector<pipeline::AblationRow>& rows);

/// | source-target init | self-init | mKID x100 | mFID |
std::string init_grid_markdown(const std::vector<pipeline::AblationRow>& rows);
/// | shared ResBlocks | mKID x100 | mFID |
std::string sharing_sweep_markdown(const std::vector<pipeline::AblationRow>& rows);
/// | method | mKID x100 | mFID | RC | FC |
std::string metric_table_markdown(const std::vector<std::pair<std::string, metrics::MetricReport>>& rows);

void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

/// Tables (per seed and median), WF table and plot.
void write_ablation(const std::filesystem::path& dir, const pipeline::AblationResult& result);

}  // namespace transferi2i::report
