#pragma once

#include "binary_io.hpp"
#include "fame/trajectory.hpp"

namespace fame::detail {

void write_trajectory(ByteWriter& out, const TrajectoryRecord& record);
TrajectoryRecord read_trajectory(ByteReader& in);

}  // namespace fame::detail
