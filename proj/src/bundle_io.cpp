#include "romoseg/bundle_io.hpp"

#include <cstdio>
#include <fstream>

#include "romoseg/tensor.hpp"

namespace romoseg {

namespace fs = std::filesystem;

namespace {

std::string frame_file(const char* prefix, int index, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s%06d.%s", prefix, index, ext);
  return buf;
}

fs::path require(const fs::path& dir, const std::string& name) {
  const fs::path p = dir / name;
  if (!fs::exists(p)) throw FormatError("missing input file " + name + " in " + dir.string());
  return p;
}

}  // namespace

SequenceBundle load_bundle(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("input directory " + dir.string() + " not found");

  // Frame count from the highest feat index present; gaps are reported as
  // missing files below rather than silently truncating the sequence.
  int frames = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    int index = -1;
    if (std::sscanf(name.c_str(), "feat_%d.npy", &index) == 1 && index >= 0)
      frames = std::max(frames, index + 1);
  }
  if (frames == 0) throw FormatError("no feat_000000.npy in " + dir.string());

  SequenceBundle bundle;
  bundle.frames = frames;
  bundle.flow_fwd.resize(static_cast<std::size_t>(frames));
  bundle.flow_bwd.resize(static_cast<std::size_t>(frames));
  for (int t = 0; t < frames; ++t) {
    const std::string feat_name = frame_file("feat_", t, "npy");
    bundle.features.push_back(
        features_from_tensor(read_tensor(require(dir, feat_name)), feat_name));
    if (t + 1 < frames) {
      const std::string name = frame_file("flow_fwd_", t, "npy");
      bundle.flow_fwd[static_cast<std::size_t>(t)] =
          flow_from_tensor(read_tensor(require(dir, name)), name);
    }
    if (t > 0) {
      const std::string name = frame_file("flow_bwd_", t, "npy");
      bundle.flow_bwd[static_cast<std::size_t>(t)] =
          flow_from_tensor(read_tensor(require(dir, name)), name);
    }
  }
  bundle.width = bundle.flow_fwd[0]->width;
  bundle.height = bundle.flow_fwd[0]->height;
  bundle.validate();
  return bundle;
}

std::map<std::string, std::string> hash_bundle_inputs(const fs::path& dir, int frames) {
  std::map<std::string, std::string> hashes;
  auto add = [&](const std::string& name) {
    std::ifstream in(dir / name, std::ios::binary);
    if (!in) return;
    const std::string bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    hashes[name] = fnv1a_hex(bytes);
  };
  for (int t = 0; t < frames; ++t) {
    add(frame_file("feat_", t, "npy"));
    if (t + 1 < frames) add(frame_file("flow_fwd_", t, "npy"));
    if (t > 0) add(frame_file("flow_bwd_", t, "npy"));
  }
  return hashes;
}

}  // namespace romoseg
