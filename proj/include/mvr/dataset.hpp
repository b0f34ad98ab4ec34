#pragma once

#include <filesystem>

#include "mvr/synth.hpp"

namespace mvr::synth {

/// One manifest row. Paths are relative to the dataset directory.
struct ClipEntry {
  std::string id;
  int subject = 0;
  Scenario scenario = Scenario::stationary;
  std::uint64_t seed = 0;
  double fps = 30.0;
  int frames = 0;
  std::array<std::string, 3> view_paths;      // l, c, r
  std::array<std::string, 3> keypoint_paths;  // l, c, r
  std::string ppg_path;
  SceneConfig scene;
};

struct DatasetManifest {
  int format_version = 1;
  double fps = 30.0;
  std::vector<ClipEntry> clips;
};

inline constexpr int kDatasetFormatVersion = 1;

// low-level container files
void write_video(const std::filesystem::path& file, const Video& video);
Video read_video(const std::filesystem::path& file);
void write_signal(const std::filesystem::path& file, const signal::TimeSeries& ts);
/// fs is carried by the manifest, not the file; pass it in.
signal::TimeSeries read_signal(const std::filesystem::path& file, double fs);
void write_keypoints(const std::filesystem::path& file, const KeypointTrack& track);
KeypointTrack read_keypoints(const std::filesystem::path& file);

DatasetManifest write_dataset(const std::vector<MultiViewClip>& clips,
                              const std::filesystem::path& dir);
/// Parses manifest.json and checks every referenced file exists.
DatasetManifest read_manifest(const std::filesystem::path& dir);
MultiViewClip read_clip(const std::filesystem::path& dir, const ClipEntry& entry);
std::vector<MultiViewClip> read_dataset(const std::filesystem::path& dir);

}  // namespace mvr::synth
