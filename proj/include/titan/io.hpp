#pragma once

// On-disk formats.
//
// Checkpoint: "TITANCKP", u32 version, u64 header length, JSON header, then
// little-endian float64 payload. The header holds free-form metadata plus one
// entry per tensor {name, shape, offset, count} with offsets in elements.
//
// Dataset: "TITANDS1", u64 header length, JSON header {spec, n, seed, ...},
// then per image the f64 pixels, a u32 length and that many bytes of GT JSON.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "titan/adaptation.hpp"
#include "titan/bounds.hpp"
#include "titan/metrics.hpp"
#include "titan/params.hpp"
#include "titan/partition.hpp"
#include "titan/synth.hpp"

namespace titan {

using json = nlohmann::ordered_json;

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named parameter groups ("model", "teacher", "disc", ...) plus metadata.
struct Checkpoint {
    json meta = json::object();
    std::vector<std::pair<std::string, ParamSet>> groups;

    bool has(const std::string& group) const;
    const ParamSet& group(const std::string& name) const;  // throws InputError when absent
    void set(const std::string& name, ParamSet params);
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
/// Throws InputError on a missing, truncated or malformed file.
Checkpoint load_checkpoint(const std::filesystem::path& path);

json to_json(const DetectorConfig& cfg);
DetectorConfig detector_config_from_json(const json& j);
json to_json(const DomainShiftSpec& spec);
DomainShiftSpec shift_spec_from_json(const json& j);
json to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const json& j);

void save_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& path);
/// FNV-1a over the exact bytes save_dataset would write.
std::uint64_t dataset_hash(const Dataset& ds);

json partition_json(const VarianceReport& variances, const DomainPartition& split);
json eval_report_json(const EvalReport& r);
/// threshold, fpi, recall rows.
std::string froc_csv(const FrocResult& r);

/// Columns: step, epoch, objective, L_stu, L_enc, L_dec, per-layer terms,
/// threshold, pseudo_boxes, grad_norm, mAP, R@FPI for each budget. Evaluation
/// columns are filled on the last step of an epoch and left empty elsewhere.
std::string metrics_csv(const std::vector<StepReport>& history, const std::vector<EpochEval>& evals, int enc_layers,
                        int dec_layers, const std::vector<double>& fpi_points);
std::string pretrain_csv(const std::vector<PretrainLog>& history);

json discriminator_spec_json(const DiscriminatorSpec& spec);

/// %.17g, the format of every numeric text output.
std::string format_double(double v);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace titan
