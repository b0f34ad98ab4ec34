#include "mvr/dataset.hpp"

#include <cstring>
#include <fstream>
#include <json.hpp>

namespace mvr::synth {

namespace {

using nlohmann::json;

void write_u32(std::ofstream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::ifstream& is, const std::filesystem::path& file) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  require(is.gcount() == 4, errc::truncated, "truncated header in " + file.string());
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void check_magic(std::ifstream& is, const char* magic, const std::filesystem::path& file) {
  char buf[4];
  is.read(buf, 4);
  require(is.gcount() == 4, errc::truncated, "truncated header in " + file.string());
  require(std::memcmp(buf, magic, 4) == 0, errc::bad_magic,
          "bad magic in " + file.string() + " (expected " + magic + ")");
}

std::ofstream open_out(const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  require(os.good(), errc::data, "cannot open for writing: " + file.string());
  return os;
}

std::ifstream open_in(const std::filesystem::path& file) {
  require(std::filesystem::exists(file), errc::missing_file, "missing file: " + file.string());
  std::ifstream is(file, std::ios::binary);
  require(is.good(), errc::data, "cannot open for reading: " + file.string());
  return is;
}

void read_exact(std::ifstream& is, char* dst, std::size_t n, const std::filesystem::path& file) {
  is.read(dst, static_cast<std::streamsize>(n));
  require(static_cast<std::size_t>(is.gcount()) == n, errc::truncated,
          "truncated payload in " + file.string());
}

json scene_to_json(const SceneConfig& c) {
  return json{{"scenario", to_string(c.scenario)},
              {"hr_base", c.hr_base},
              {"hr_drift", c.hr_drift},
              {"fps", c.fps},
              {"duration_s", c.duration_s},
              {"height", c.height},
              {"width", c.width},
              {"ppg_amplitude", c.ppg_amplitude},
              {"noise_sigma", c.noise_sigma},
              {"seed", c.seed}};
}

// existence + magic validation without reading payloads
void check_file_header(const std::filesystem::path& file, const char* magic) {
  require(std::filesystem::exists(file), errc::missing_file, "missing file: " + file.string());
  std::ifstream is(file, std::ios::binary);
  require(is.good(), errc::data, "cannot open " + file.string());
  char buf[4];
  is.read(buf, 4);
  require(is.gcount() == 4, errc::truncated, "truncated header in " + file.string());
  require(std::memcmp(buf, magic, 4) == 0, errc::bad_magic,
          "bad magic in " + file.string() + " (expected " + magic + ")");
}

SceneConfig scene_from_json(const json& j) {
  SceneConfig c;
  c.scenario = scenario_from_string(j.at("scenario").get<std::string>());
  c.hr_base = j.at("hr_base").get<double>();
  c.hr_drift = j.at("hr_drift").get<double>();
  c.fps = j.at("fps").get<double>();
  c.duration_s = j.at("duration_s").get<double>();
  c.height = j.at("height").get<int>();
  c.width = j.at("width").get<int>();
  c.ppg_amplitude = j.at("ppg_amplitude").get<double>();
  c.noise_sigma = j.at("noise_sigma").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

// Frame payload: magic "MVF1", then H, W, C, T as u32 little-endian, then
// row-major uint8 data over dims (H, W, C, T) — time innermost.
void write_video(const std::filesystem::path& file, const Video& video) {
  auto os = open_out(file);
  os.write("MVF1", 4);
  write_u32(os, static_cast<std::uint32_t>(video.h));
  write_u32(os, static_cast<std::uint32_t>(video.w));
  write_u32(os, static_cast<std::uint32_t>(video.c));
  write_u32(os, static_cast<std::uint32_t>(video.t));
  std::vector<std::uint8_t> payload(video.data.size());
  std::size_t p = 0;
  for (int h = 0; h < video.h; ++h)
    for (int w = 0; w < video.w; ++w)
      for (int c = 0; c < video.c; ++c)
        for (int t = 0; t < video.t; ++t) payload[p++] = video.at(t, h, w, c);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size()));
  require(os.good(), errc::data, "write failed: " + file.string());
}

Video read_video(const std::filesystem::path& file) {
  auto is = open_in(file);
  check_magic(is, "MVF1", file);
  const int h = static_cast<int>(read_u32(is, file));
  const int w = static_cast<int>(read_u32(is, file));
  const int c = static_cast<int>(read_u32(is, file));
  const int t = static_cast<int>(read_u32(is, file));
  require(c == 3, errc::data, "unsupported channel count in " + file.string());
  std::vector<std::uint8_t> payload(static_cast<std::size_t>(h) * w * c * t);
  read_exact(is, reinterpret_cast<char*>(payload.data()), payload.size(), file);
  Video video(t, h, w);
  std::size_t p = 0;
  for (int hi = 0; hi < h; ++hi)
    for (int wi = 0; wi < w; ++wi)
      for (int ci = 0; ci < c; ++ci)
        for (int ti = 0; ti < t; ++ti) video.at(ti, hi, wi, ci) = payload[p++];
  return video;
}

// Signal payload: magic "MVS1", u32 sample count, float32 little-endian.
void write_signal(const std::filesystem::path& file, const signal::TimeSeries& ts) {
  auto os = open_out(file);
  os.write("MVS1", 4);
  write_u32(os, static_cast<std::uint32_t>(ts.samples.size()));
  std::vector<float> payload(ts.samples.size());
  for (std::size_t i = 0; i < payload.size(); ++i) payload[i] = static_cast<float>(ts.samples[i]);
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  require(os.good(), errc::data, "write failed: " + file.string());
}

signal::TimeSeries read_signal(const std::filesystem::path& file, double fs) {
  auto is = open_in(file);
  check_magic(is, "MVS1", file);
  const std::uint32_t n = read_u32(is, file);
  std::vector<float> payload(n);
  read_exact(is, reinterpret_cast<char*>(payload.data()), payload.size() * sizeof(float), file);
  signal::TimeSeries ts;
  ts.fs = fs;
  ts.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) ts.samples[i] = static_cast<double>(payload[i]);
  return ts;
}

// Keypoint payload: magic "MVK1", u32 K, u32 T, float32 over dims (K, 2, T).
void write_keypoints(const std::filesystem::path& file, const KeypointTrack& track) {
  auto os = open_out(file);
  os.write("MVK1", 4);
  write_u32(os, static_cast<std::uint32_t>(track.k));
  write_u32(os, static_cast<std::uint32_t>(track.t));
  std::vector<float> payload(static_cast<std::size_t>(track.k) * 2 * track.t);
  std::size_t p = 0;
  for (int k = 0; k < track.k; ++k)
    for (int d = 0; d < 2; ++d)
      for (int t = 0; t < track.t; ++t)
        payload[p++] = static_cast<float>(d == 0 ? track.x(t, k) : track.y(t, k));
  os.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  require(os.good(), errc::data, "write failed: " + file.string());
}

KeypointTrack read_keypoints(const std::filesystem::path& file) {
  auto is = open_in(file);
  check_magic(is, "MVK1", file);
  const int k = static_cast<int>(read_u32(is, file));
  const int t = static_cast<int>(read_u32(is, file));
  std::vector<float> payload(static_cast<std::size_t>(k) * 2 * t);
  read_exact(is, reinterpret_cast<char*>(payload.data()), payload.size() * sizeof(float), file);
  KeypointTrack track(k, t);
  std::size_t p = 0;
  for (int ki = 0; ki < k; ++ki)
    for (int d = 0; d < 2; ++d)
      for (int ti = 0; ti < t; ++ti) {
        const double v = static_cast<double>(payload[p++]);
        if (d == 0)
          track.set(ti, ki, v, track.y(ti, ki));
        else
          track.set(ti, ki, track.x(ti, ki), v);
      }
  return track;
}

DatasetManifest write_dataset(const std::vector<MultiViewClip>& clips,
                              const std::filesystem::path& dir) {
  require(!clips.empty(), errc::parameter, "write_dataset: no clips");
  std::filesystem::create_directories(dir);

  DatasetManifest manifest;
  manifest.fps = clips.front().gt_ppg.fs;

  static const std::array<const char*, 3> kViewSuffix = {"l", "c", "r"};
  json jclips = json::array();
  for (const auto& clip : clips) {
    ClipEntry entry;
    entry.id = "s" + std::to_string(clip.subject) + "_" + to_string(clip.scenario);
    entry.subject = clip.subject;
    entry.scenario = clip.scenario;
    entry.seed = clip.config.seed;
    entry.fps = clip.gt_ppg.fs;
    entry.frames = clip.views[0].t;
    entry.scene = clip.config;

    const auto clip_dir = dir / entry.id;
    std::filesystem::create_directories(clip_dir);
    for (int v = 0; v < 3; ++v) {
      entry.view_paths[static_cast<std::size_t>(v)] =
          entry.id + "/view_" + kViewSuffix[static_cast<std::size_t>(v)] + ".mvf";
      entry.keypoint_paths[static_cast<std::size_t>(v)] =
          entry.id + "/keypoints_" + kViewSuffix[static_cast<std::size_t>(v)] + ".bin";
      write_video(dir / entry.view_paths[static_cast<std::size_t>(v)],
                  clip.views[static_cast<std::size_t>(v)]);
      write_keypoints(dir / entry.keypoint_paths[static_cast<std::size_t>(v)],
                      clip.keypoints[static_cast<std::size_t>(v)]);
    }
    entry.ppg_path = entry.id + "/ppg.mvs";
    write_signal(dir / entry.ppg_path, clip.gt_ppg);

    jclips.push_back(json{{"id", entry.id},
                          {"subject", entry.subject},
                          {"scenario", to_string(entry.scenario)},
                          {"seed", entry.seed},
                          {"fps", entry.fps},
                          {"frames", entry.frames},
                          {"views", entry.view_paths},
                          {"keypoints", entry.keypoint_paths},
                          {"ppg", entry.ppg_path},
                          {"scene", scene_to_json(entry.scene)}});
    manifest.clips.push_back(std::move(entry));
  }

  const json jman = {{"format_version", kDatasetFormatVersion},
                     {"fps", manifest.fps},
                     {"clips", jclips}};
  std::ofstream os(dir / "manifest.json");
  require(os.good(), errc::data, "cannot write manifest in " + dir.string());
  os << jman.dump(2) << "\n";
  return manifest;
}

DatasetManifest read_manifest(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  require(std::filesystem::exists(manifest_path), errc::missing_file,
          "missing file: " + manifest_path.string());
  std::ifstream is(manifest_path);
  json jman;
  try {
    is >> jman;
  } catch (const json::exception& e) {
    fail(errc::data, "malformed manifest: " + std::string(e.what()));
  }
  const int version = jman.at("format_version").get<int>();
  require(version == kDatasetFormatVersion, errc::version_mismatch,
          "unsupported dataset format version " + std::to_string(version));

  DatasetManifest manifest;
  manifest.format_version = version;
  manifest.fps = jman.at("fps").get<double>();
  for (const auto& jc : jman.at("clips")) {
    ClipEntry entry;
    entry.id = jc.at("id").get<std::string>();
    entry.subject = jc.at("subject").get<int>();
    entry.scenario = scenario_from_string(jc.at("scenario").get<std::string>());
    entry.seed = jc.at("seed").get<std::uint64_t>();
    entry.fps = jc.at("fps").get<double>();
    entry.frames = jc.at("frames").get<int>();
    const auto views = jc.at("views");
    const auto keypoints = jc.at("keypoints");
    require(views.size() == 3 && keypoints.size() == 3, errc::data,
            "manifest entry must carry three views: " + entry.id);
    for (int v = 0; v < 3; ++v) {
      entry.view_paths[static_cast<std::size_t>(v)] = views[v].get<std::string>();
      entry.keypoint_paths[static_cast<std::size_t>(v)] = keypoints[v].get<std::string>();
    }
    entry.ppg_path = jc.at("ppg").get<std::string>();
    entry.scene = scene_from_json(jc.at("scene"));

    for (const auto& rel : entry.view_paths) check_file_header(dir / rel, "MVF1");
    for (const auto& rel : entry.keypoint_paths) check_file_header(dir / rel, "MVK1");
    check_file_header(dir / entry.ppg_path, "MVS1");
    manifest.clips.push_back(std::move(entry));
  }
  return manifest;
}

MultiViewClip read_clip(const std::filesystem::path& dir, const ClipEntry& entry) {
  MultiViewClip clip;
  clip.subject = entry.subject;
  clip.scenario = entry.scenario;
  clip.config = entry.scene;
  for (int v = 0; v < 3; ++v) {
    clip.views[static_cast<std::size_t>(v)] =
        read_video(dir / entry.view_paths[static_cast<std::size_t>(v)]);
    clip.keypoints[static_cast<std::size_t>(v)] =
        read_keypoints(dir / entry.keypoint_paths[static_cast<std::size_t>(v)]);
  }
  clip.gt_ppg = read_signal(dir / entry.ppg_path, entry.fps);
  return clip;
}

std::vector<MultiViewClip> read_dataset(const std::filesystem::path& dir) {
  const auto manifest = read_manifest(dir);
  std::vector<MultiViewClip> clips;
  clips.reserve(manifest.clips.size());
  for (const auto& entry : manifest.clips) clips.push_back(read_clip(dir, entry));
  return clips;
}

}  // namespace mvr::synth
