#include "transferi2i/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include "transferi2i/errors.hpp"
#include "transferi2i/fisher.hpp"

namespace transferi2i::report {

namespace {

std::string num(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

const char* mark(bool b) { return b ? "yes" : "no"; }

nlohmann::json rows_json(const std::vector<pipeline::AblationRow>& rows) {
    auto j = nlohmann::json::array();
    for (const auto& r : rows) {
        j.push_back({{"label", r.label},
                     {"source_target_init", r.source_target_init},
                     {"self_init", r.self_init},
                     {"shared_resblocks", r.shared_resblocks},
                     {"seed", r.seed},
                     {"mfid", r.mfid},
                     {"mkid", r.mkid}});
    }
    return j;
}

}  // namespace

double median(std::vector<double> values) {
    if (values.empty()) throw DataError("median of an empty list");
    std::sort(values.begin(), values.end());
    const auto n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<pipeline::AblationRow> median_rows(const std::vector<pipeline::AblationRow>& rows) {
    std::vector<std::string> order;
    std::map<std::string, std::vector<const pipeline::AblationRow*>> groups;
    for (const auto& r : rows) {
        if (!groups.count(r.label)) order.push_back(r.label);
        groups[r.label].push_back(&r);
    }
    std::vector<pipeline::AblationRow> out;
    for (const auto& label : order) {
        const auto& g = groups[label];
        auto m = *g.front();
        std::vector<double> fids, kids;
        for (const auto* r : g) {
            fids.push_back(r->mfid);
            kids.push_back(r->mkid);
        }
        m.mfid = median(fids);
        m.mkid = median(kids);
        out.push_back(m);
    }
    return out;
}

std::string init_grid_markdown(const std::vector<pipeline::AblationRow>& rows) {
    std::string s = "| source-target init | self-init | mKID x100 | mFID |\n|---|---|---|---|\n";
    for (const auto& r : rows) {
        s += std::string("| ") + mark(r.source_target_init) + " | " + mark(r.self_init) + " | " +
             num(100.0 * r.mkid) + " | " + num(r.mfid) + " |\n";
    }
    return s;
}

std::string sharing_sweep_markdown(const std::vector<pipeline::AblationRow>& rows) {
    std::string s = "| shared ResBlocks | mKID x100 | mFID |\n|---|---|---|\n";
    for (const auto& r : rows) {
        s += "| " + std::to_string(r.shared_resblocks) + " | " + num(100.0 * r.mkid) + " | " + num(r.mfid) + " |\n";
    }
    return s;
}

std::string metric_table_markdown(const std::vector<std::pair<std::string, metrics::MetricReport>>& rows) {
    std::string s = "| method | mKID x100 | mFID | RC | FC |\n|---|---|---|---|---|\n";
    for (const auto& [name, r] : rows) {
        s += "| " + name + " | " + num(100.0 * r.mkid) + " | " + num(r.mfid) + " | " +
             (r.rc ? num(100.0 * *r.rc) : std::string("-")) + " | " +
             (r.fc ? num(100.0 * *r.fc) : std::string("-")) + " |\n";
    }
    return s;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out << text;
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

void write_ablation(const std::filesystem::path& dir, const pipeline::AblationResult& result) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["note"] = metrics::kReportNote;
    j["init_grid"] = rows_json(result.init_grid);
    j["sharing_sweep"] = rows_json(result.sharing_sweep);
    auto wf = nlohmann::json::array();
    for (const auto& w : result.wf) wf.push_back({{"seed", w.seed}, {"with_aux", w.with_aux}, {"without_aux", w.without_aux}});
    j["weight_fluctuation"] = wf;
    write_json(dir / "ablation.json", j);

    if (!result.init_grid.empty()) {
        write_text(dir / "init_grid.md", "Median over seeds.\n\n" + init_grid_markdown(median_rows(result.init_grid)));
    }
    if (!result.sharing_sweep.empty()) {
        write_text(dir / "sharing_sweep.md",
                   "Median over seeds.\n\n" + sharing_sweep_markdown(median_rows(result.sharing_sweep)));
    }
    if (!result.wf.empty()) {
        // Mean over seeds for the figure; per-seed values stay in ablation.json.
        const auto n = result.wf.front().with_aux.size();
        std::vector<fisher::WeightFluctuationRow> rows(n);
        for (size_t i = 0; i < n; ++i) {
            rows[i].resblock = static_cast<int64_t>(i);
            for (const auto& w : result.wf) {
                rows[i].with_aux += w.with_aux[i] / static_cast<double>(result.wf.size());
                rows[i].without_aux += w.without_aux[i] / static_cast<double>(result.wf.size());
            }
        }
        fisher::write_wf_table(dir / "weight_fluctuation.csv", rows);
        fisher::write_wf_plot(dir / "weight_fluctuation.png", rows);
    }
}

}  // namespace transferi2i::report
