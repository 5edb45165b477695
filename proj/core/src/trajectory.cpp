#include "fame/trajectory.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "fame/error.hpp"
#include "trajectory_io.hpp"

namespace fame {

namespace {

constexpr std::uint32_t kMaxSteps = 1u << 20;
constexpr std::uint32_t kMaxDim = 4096;

Vector round_f32(const Vector& v) { return v.cast<float>().cast<double>(); }

}  // namespace

void TrajectoryRecord::validate() const {
  if (states.size() < 2) {
    fail(ErrorKind::invalid_argument, "trajectory needs at least two states");
  }
  const auto d = states.front().size();
  if (d == 0) {
    fail(ErrorKind::invalid_argument, "trajectory states are empty");
  }
  for (const auto& s : states) {
    if (s.size() != d) fail(ErrorKind::invalid_argument, "trajectory state dimension mismatch");
  }
  if (!denoiser_outputs.empty()) {
    if (denoiser_outputs.size() + 1 != states.size()) {
      fail(ErrorKind::invalid_argument, "trajectory needs exactly T denoiser outputs");
    }
    for (const auto& o : denoiser_outputs) {
      if (o.size() != d) fail(ErrorKind::invalid_argument, "denoiser output dimension mismatch");
    }
  }
  if (final_sample != states.back()) {
    fail(ErrorKind::invalid_argument, "final_sample must equal the last state");
  }
}

TrajectoryRecord quantize_to_f32(TrajectoryRecord record) {
  for (auto& s : record.states) s = round_f32(s);
  for (auto& o : record.denoiser_outputs) o = round_f32(o);
  record.final_sample = round_f32(record.final_sample);
  record.quality_score = static_cast<double>(static_cast<float>(record.quality_score));
  return record;
}

std::size_t trajectory_bytes(int steps, std::size_t dim) {
  const auto t = static_cast<std::size_t>(steps);
  return kTrajectoryHeaderBytes + ((t + 1) * dim + t * dim) * sizeof(float);
}

namespace detail {

void write_trajectory(ByteWriter& out, const TrajectoryRecord& record) {
  record.validate();
  if (!record.has_outputs()) {
    fail(ErrorKind::invalid_argument, "only recorded trajectories (with denoiser outputs) can be serialized");
  }
  out.tag("FAME");
  out.u16(kTrajectoryVersion);
  out.u32(static_cast<std::uint32_t>(record.steps()));
  out.u32(static_cast<std::uint32_t>(record.dim()));
  out.i32(record.class_id ? *record.class_id : -1);
  out.u64(record.seed);
  out.f32(static_cast<float>(record.quality_score));
  for (const auto& s : record.states) {
    for (Eigen::Index i = 0; i < s.size(); ++i) out.f32(static_cast<float>(s[i]));
  }
  for (const auto& o : record.denoiser_outputs) {
    for (Eigen::Index i = 0; i < o.size(); ++i) out.f32(static_cast<float>(o[i]));
  }
}

TrajectoryRecord read_trajectory(ByteReader& in) {
  in.expect_tag("FAME");
  const auto version = in.u16();
  if (version != kTrajectoryVersion) {
    in.error("unsupported trajectory version " + std::to_string(version));
  }
  const auto steps = in.u32();
  const auto dim = in.u32();
  if (steps == 0 || steps > kMaxSteps || dim == 0 || dim > kMaxDim) {
    in.error("trajectory header has implausible T/d");
  }
  TrajectoryRecord rec;
  const auto cls = in.i32();
  if (cls < -1) in.error("negative class id");
  if (cls >= 0) rec.class_id = cls;
  rec.seed = in.u64();
  rec.quality_score = in.f32();
  auto read_vec = [&] {
    Vector v(dim);
    for (std::uint32_t i = 0; i < dim; ++i) v[i] = in.f32();
    return v;
  };
  rec.states.reserve(steps + 1);
  for (std::uint32_t k = 0; k <= steps; ++k) rec.states.push_back(read_vec());
  rec.denoiser_outputs.reserve(steps);
  for (std::uint32_t k = 0; k < steps; ++k) rec.denoiser_outputs.push_back(read_vec());
  rec.final_sample = rec.states.back();
  return rec;
}

}  // namespace detail

void write_trajectory(std::ostream& out, const TrajectoryRecord& record) {
  detail::ByteWriter w;
  detail::write_trajectory(w, record);
  w.flush_to(out);
  if (!out) fail(ErrorKind::io_error, "failed writing trajectory");
}

TrajectoryRecord read_trajectory(std::istream& in) {
  detail::ByteReader r(in, ErrorKind::malformed_file);
  return detail::read_trajectory(r);
}

void save_trajectories(const std::filesystem::path& path, const std::vector<TrajectoryRecord>& records) {
  detail::ByteWriter w;
  for (const auto& rec : records) detail::write_trajectory(w, rec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io_error, "cannot open " + path.string() + " for writing");
  w.flush_to(out);
  if (!out) fail(ErrorKind::io_error, "failed writing " + path.string());
}

std::vector<TrajectoryRecord> load_trajectories(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io_error, "cannot open " + path.string());
  detail::ByteReader r(in, ErrorKind::malformed_file);
  std::vector<TrajectoryRecord> out;
  while (in.peek() != std::char_traits<char>::eof()) {
    out.push_back(detail::read_trajectory(r));
  }
  return out;
}

}  // namespace fame
