#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "romoseg/pipeline.hpp"

namespace romoseg {

// Assembles a SequenceBundle from a directory of flow_fwd_%06d.npy,
// flow_bwd_%06d.npy and feat_%06d.npy files. The frame count is the number
// of contiguous feat files starting at index 0; every required flow file
// must be present, and errors name the offending file.
SequenceBundle load_bundle(const std::filesystem::path& dir);

// FNV-1a hash of each input file consumed by load_bundle, keyed by filename;
// recorded in run manifests.
std::map<std::string, std::string> hash_bundle_inputs(const std::filesystem::path& dir,
                                                      int frames);

}  // namespace romoseg
