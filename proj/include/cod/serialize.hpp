#pragma once

#include "cod/dataset.hpp"
#include "cod/denoiser.hpp"
#include "cod/metrics.hpp"
#include "cod/pointmass.hpp"
#include "cod/trainer.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cod {

std::uint64_t fnv1a64(std::string_view s);
std::string hex64(std::uint64_t v);

// write-temp-then-rename so readers never observe partial files
void atomic_write_file(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

// Checkpoint: a text manifest next to a raw little-endian f32 tensor blob.
struct CheckpointExtras {
  std::string config_hash;
  std::string dataset_hash;
  int task_index = -1;
  std::vector<GaussianNormalizer> normalizers;
  std::vector<Eigen::VectorXf> conditions;
};

void save_checkpoint(const std::filesystem::path& base, const DenoiserParams<float>& params,
                     const CheckpointExtras& extras);

struct LoadedCheckpoint {
  DenoiserParams<float> params;
  CheckpointExtras extras;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& base);

// Dataset directory: meta.txt + transitions.bin laid out [episode][t][s|a|r].
void save_dataset_dir(const std::filesystem::path& dir, const TrajectoryDataset& data,
                      const PointDirTask& task, std::uint64_t seed, bool force);

struct LoadedDataset {
  TrajectoryDataset data;
  PointDirTask task;
  std::uint64_t seed = 0;
  std::string blob_hash;
};
LoadedDataset load_dataset_dir(const std::filesystem::path& dir);

// CSV emission; column layouts are pinned by golden-file tests.
std::string continual_log_csv(const ContinualLog& log);
ContinualLog parse_continual_log_csv(const std::string& text);
std::string metrics_csv(const MetricReport& report);
std::string train_log_csv(const std::vector<TrainLogEntry>& log);

}  // namespace cod
