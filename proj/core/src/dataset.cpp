#include "viva/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include <json.hpp>

#include "viva/errors.hpp"
#include "viva/hash.hpp"

namespace viva {
namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "dataset files are little-endian");

namespace {

std::string episode_dir_name(std::size_t index) {
  std::ostringstream name;
  name << "ep_" << std::setw(5) << std::setfill('0') << index;
  return name.str();
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("missing dataset file " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw RuntimeFailure("failed writing " + path.string());
}

void check_homogeneous(const std::vector<Episode>& episodes) {
  if (episodes.empty()) throw ValidationError("empty dataset");
  const auto& first = episodes.front().steps.front();
  const std::size_t d_q = first.proprio.dim();
  const int h = first.obs.views[0].height;
  const int w = first.obs.views[0].width;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    if (ep.horizon() < 1) {
      throw ValidationError("episode " + std::to_string(e) + " has fewer than two steps");
    }
    for (const auto& step : ep.steps) {
      if (step.proprio.dim() != d_q) {
        throw ValidationError("episode " + std::to_string(e) + ": proprioception dim " +
                              std::to_string(step.proprio.dim()) + " != " + std::to_string(d_q));
      }
      for (const auto& view : step.obs.views) {
        if (view.height != h || view.width != w ||
            view.pixels.size() != static_cast<std::size_t>(h) * w * 3) {
          throw ValidationError("episode " + std::to_string(e) + ": image dims differ from " +
                                std::to_string(h) + "x" + std::to_string(w));
        }
      }
    }
  }
}

json meta_to_json(const EpisodeMeta& meta) {
  json j;
  j["object_shape"] = meta.object_shape;
  j["failure_kind"] = meta.failure_kind ? json(to_string(*meta.failure_kind)) : json(nullptr);
  j["failure_step"] = meta.failure_step;
  j["progress"] = meta.progress;
  return j;
}

EpisodeMeta meta_from_json(const json& j) {
  EpisodeMeta meta;
  if (j.is_null()) return meta;
  meta.object_shape = j.value("object_shape", std::string("square"));
  if (j.contains("failure_kind") && !j["failure_kind"].is_null()) {
    meta.failure_kind = failure_kind_from_string(j["failure_kind"].get<std::string>());
  }
  meta.failure_step = j.value("failure_step", -1);
  if (j.contains("progress")) meta.progress = j["progress"].get<std::vector<double>>();
  return meta;
}

json load_manifest(const fs::path& root) {
  const fs::path path = root / "manifest.json";
  if (!fs::exists(path)) throw FormatError("missing manifest " + path.string());
  std::ifstream in(path);
  json manifest;
  try {
    in >> manifest;
  } catch (const json::exception& e) {
    throw FormatError("unreadable manifest " + path.string() + ": " + e.what());
  }
  const int version = manifest.value("version", -1);
  if (version != kDatasetVersion) {
    throw VersionError("unsupported dataset version " + std::to_string(version) + " (expected " +
                       std::to_string(kDatasetVersion) + ")");
  }
  return manifest;
}

std::vector<std::uint8_t> read_verified(const fs::path& path, std::size_t expected_size,
                                        const std::string& expected_sha) {
  auto bytes = read_file(path);
  if (bytes.size() != expected_size) {
    throw FormatError("truncated dataset file " + path.string() + ": " + std::to_string(bytes.size()) +
                      " bytes, expected " + std::to_string(expected_size));
  }
  if (sha256_hex(bytes) != expected_sha) throw ChecksumError("checksum mismatch in " + path.string());
  return bytes;
}

}  // namespace

ManifestSummary write_dataset(const std::vector<Episode>& episodes, const fs::path& root) {
  check_homogeneous(episodes);
  fs::create_directories(root);

  const auto& first = episodes.front().steps.front();
  const int d_q = static_cast<int>(first.proprio.dim());
  const int h = first.obs.views[0].height;
  const int w = first.obs.views[0].width;
  const std::size_t view_bytes = static_cast<std::size_t>(h) * w * 3;

  ManifestSummary summary;
  summary.episodes = static_cast<int>(episodes.size());
  summary.proprio_dim = d_q;
  summary.height = h;
  summary.width = w;
  std::set<std::string> shapes;

  json listing = json::array();
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    const Episode& ep = episodes[e];
    const std::string dir_name = episode_dir_name(e);
    const fs::path dir = root / dir_name;
    fs::create_directories(dir);

    std::vector<float> proprio;
    proprio.reserve(ep.steps.size() * d_q);
    for (const auto& step : ep.steps) proprio.insert(proprio.end(), step.proprio.values.begin(), step.proprio.values.end());
    const std::span<const std::uint8_t> proprio_bytes{reinterpret_cast<const std::uint8_t*>(proprio.data()),
                                                      proprio.size() * sizeof(float)};
    write_file(dir / "proprio.f32", proprio_bytes);

    json files;
    files["proprio.f32"] = sha256_hex(proprio_bytes);
    for (int k = 0; k < kNumViews; ++k) {
      std::vector<std::uint8_t> view;
      view.reserve(ep.steps.size() * view_bytes);
      for (const auto& step : ep.steps) {
        const auto& px = step.obs.views[k].pixels;
        view.insert(view.end(), px.begin(), px.end());
      }
      const std::string name = "view" + std::to_string(k + 1) + ".u8";
      write_file(dir / name, view);
      files[name] = sha256_hex(view);
    }

    listing.push_back({{"dir", dir_name},
                       {"task_id", ep.task_id},
                       {"T", ep.horizon()},
                       {"success", ep.success},
                       {"files", files},
                       {"meta", meta_to_json(ep.meta)}});
    summary.steps += static_cast<long long>(ep.steps.size());
    summary.successes += ep.success ? 1 : 0;
    shapes.insert(ep.meta.object_shape);
  }
  summary.object_shapes.assign(shapes.begin(), shapes.end());

  json manifest = {{"version", kDatasetVersion}, {"d_q", d_q},      {"H", h},
                   {"W", w},                     {"steps", summary.steps},
                   {"object_shapes", summary.object_shapes},      {"episodes", listing}};
  std::ofstream out(root / "manifest.json", std::ios::trunc);
  out << manifest.dump(1) << '\n';
  if (!out) throw RuntimeFailure("failed writing manifest in " + root.string());
  return summary;
}

std::vector<Episode> read_dataset(const fs::path& root) {
  const json manifest = load_manifest(root);
  const int d_q = manifest.at("d_q").get<int>();
  const int h = manifest.at("H").get<int>();
  const int w = manifest.at("W").get<int>();
  const std::size_t view_bytes = static_cast<std::size_t>(h) * w * 3;

  std::vector<Episode> episodes;
  for (const auto& entry : manifest.at("episodes")) {
    Episode ep;
    ep.task_id = entry.at("task_id").get<std::string>();
    ep.success = entry.at("success").get<bool>();
    ep.meta = meta_from_json(entry.value("meta", json(nullptr)));
    const int horizon = entry.at("T").get<int>();
    if (horizon < 1) throw FormatError("episode with T < 1 in manifest");
    const std::size_t n_steps = static_cast<std::size_t>(horizon) + 1;
    const fs::path dir = root / entry.at("dir").get<std::string>();
    const json& files = entry.at("files");

    const auto proprio_bytes = read_verified(dir / "proprio.f32", n_steps * d_q * sizeof(float),
                                             files.at("proprio.f32").get<std::string>());
    ep.steps.resize(n_steps);
    for (std::size_t t = 0; t < n_steps; ++t) {
      auto& values = ep.steps[t].proprio.values;
      values.resize(d_q);
      std::memcpy(values.data(), proprio_bytes.data() + t * d_q * sizeof(float), d_q * sizeof(float));
    }
    for (int k = 0; k < kNumViews; ++k) {
      const std::string name = "view" + std::to_string(k + 1) + ".u8";
      const auto bytes = read_verified(dir / name, n_steps * view_bytes, files.at(name).get<std::string>());
      for (std::size_t t = 0; t < n_steps; ++t) {
        RgbImage image(h, w);
        std::memcpy(image.pixels.data(), bytes.data() + t * view_bytes, view_bytes);
        ep.steps[t].obs.views[k] = std::move(image);
      }
    }
    episodes.push_back(std::move(ep));
  }
  return episodes;
}

ManifestSummary read_manifest_summary(const fs::path& root) {
  const json manifest = load_manifest(root);
  ManifestSummary summary;
  summary.proprio_dim = manifest.at("d_q").get<int>();
  summary.height = manifest.at("H").get<int>();
  summary.width = manifest.at("W").get<int>();
  std::set<std::string> shapes;
  for (const auto& entry : manifest.at("episodes")) {
    summary.episodes += 1;
    summary.steps += entry.at("T").get<long long>() + 1;
    summary.successes += entry.at("success").get<bool>() ? 1 : 0;
    shapes.insert(entry.value("meta", json::object()).value("object_shape", std::string("square")));
  }
  summary.object_shapes.assign(shapes.begin(), shapes.end());
  return summary;
}

}  // namespace viva
