#include "romoseg/trajectory.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace romoseg {

Trajectory read_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file " + path.string());

  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t start = line.find_first_not_of(" \t\r");
    if (start == std::string::npos || line[start] == '#') continue;

    std::istringstream ls(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ls >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw))
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": expected 8 fields (timestamp tx ty tz qx qy qz qw)");
    const double fields[8] = {t, tx, ty, tz, qx, qy, qz, qw};
    for (const double v : fields) {
      if (!std::isfinite(v))
        throw FormatError(path.string() + ":" + std::to_string(line_no) +
                          ": non-finite value");
    }
    if (!traj.poses.empty() && t <= traj.poses.back().timestamp)
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": timestamps must be strictly increasing");

    Eigen::Quaterniond q(qw, qx, qy, qz);
    const double norm = q.norm();
    if (norm < 1e-12)
      throw FormatError(path.string() + ":" + std::to_string(line_no) +
                        ": zero-norm quaternion");
    if (std::abs(norm - 1.0) > 1e-6)
      log_warn(path.string() + ":" + std::to_string(line_no) + ": quaternion norm " +
               std::to_string(norm) + " renormalized");
    q.normalize();
    traj.poses.push_back({t, q, Eigen::Vector3d(tx, ty, tz)});
  }
  return traj;
}

void write_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "# timestamp tx ty tz qx qy qz qw\n";
  char buf[256];
  for (const TimedPose& p : traj.poses) {
    std::snprintf(buf, sizeof(buf), "%.9f %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n",
                  p.timestamp, p.translation.x(), p.translation.y(), p.translation.z(),
                  p.rotation.x(), p.rotation.y(), p.rotation.z(), p.rotation.w());
    out << buf;
  }
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace romoseg
