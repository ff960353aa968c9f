#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "datum/generate/generate.hpp"
#include "datum/metrics/metrics.hpp"
#include "datum/personalize/personalize.hpp"
#include "datum/scenegen/scenegen.hpp"
#include "datum/segadapt/segadapt.hpp"

namespace datum {

// Everything one end-to-end run needs. The benchmark, the pretrained
// denoiser and the oracle feature net are fixtures keyed by their own
// seeds; the run seed drives datum choice, personalization, generation
// and adaptation, so independent runs share the expensive stages.
struct PipelineConfig {
    BenchmarkSizes sizes;
    std::uint64_t data_seed = 101;
    PretrainConfig pretrain;
    std::uint64_t pretrain_seed = 202;
    FeatureTrainConfig feature;
    std::uint64_t feature_seed = 303;
    PersonalizationConfig personalize;
    GenerationConfig generate;  // generate.seed is ignored, derived from the run seed
    AdaptConfig adapt;
    std::uint64_t seed = 1;
    std::string out_root = "runs";
    bool reuse_cache = true;  // skip stages whose keyed artifacts already exist
    bool with_fid = true;     // mIoU-only ablation cells turn this off
};

nlohmann::json to_json(const PipelineConfig& config);
PipelineConfig pipeline_from_json(const nlohmann::json& j);  // partial trees allowed
std::string pipeline_hash(const PipelineConfig& config);

// DATUM_CACHE overrides, else <out_root>/cache.
std::string cache_root(const PipelineConfig& config);

struct RunReport {
    std::string config_hash;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> artifacts;  // stage name -> path
    IouReport source_only;                         // target test
    IouReport adapted;                             // target test
    double fid_personalized = 0;
    double fid_unpersonalized = 0;
    double diversity = 0;
    std::map<std::string, double> wall_clock;  // seconds; 0 for cache hits
};

nlohmann::json report_to_json(const RunReport& report);
RunReport report_from_json(const nlohmann::json& j);
void save_report(const RunReport& report, const std::string& path);
RunReport load_report(const std::string& path);

// pretrain (or load) -> personalize -> generate -> adapt -> evaluate.
// Writes report.json under <out_root>/run-<hash12>-s<seed>.
RunReport run(const PipelineConfig& config);

// Numeric table with optional per-row labels; column 0 is the plot abscissa.
struct AblationTable {
    std::string name;
    std::vector<std::string> columns;
    std::vector<std::string> labels;  // empty, or one label per row
    std::vector<std::vector<double>> rows;
};

void write_csv(const AblationTable& table, const std::string& path);
void write_line_plot(const AblationTable& table, const std::string& path);  // SVG

// Each driver averages over the given seeds, emits <name>.csv and
// <name>.svg under out_dir, and returns the table.
AblationTable ablate_shots(const PipelineConfig& base, const std::vector<int>& shots,
                           const std::vector<int>& iteration_grid,
                           const std::vector<std::uint64_t>& seeds, const std::string& out_dir);
AblationTable ablate_prompts(const PipelineConfig& base, const std::vector<PromptMode>& variants,
                             const std::vector<std::uint64_t>& seeds, const std::string& out_dir);
AblationTable ablate_cardinality(const PipelineConfig& base, const std::vector<int>& sizes,
                                 const std::vector<std::uint64_t>& seeds,
                                 const std::string& out_dir);

// report.json, one csv+svg per table, and mask overlay grids when the
// report's checkpoint and dataset artifacts are still on disk. Overlay
// rows are image | prediction | ground truth, 4 px white gutters.
void export_report(const RunReport& report, const std::vector<AblationTable>& ablations,
                   const std::string& out_dir);

// Fraction of generated images whose oracle dominant-thing prediction
// matches the class their prompt asked for (round-robin assignment for
// prompts that name no class).
double detection_rate(FeatureNet& net, const DatasetManifest& generated,
                      const std::vector<std::string>& class_list);

}  // namespace datum
