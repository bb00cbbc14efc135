#ifndef TSE_SENSING_HPP
#define TSE_SENSING_HPP

#include <Eigen/Dense>
#include <vector>

#include "tse/arz.hpp"

namespace tse::sensing {

enum class Kind { Density, Speed };

struct Entry {
    int segment;   // global 0-based segment index
    Kind kind;
    double value;  // veh/km or km/h
};

// One time step's sensed values. The (segment, kind) pattern is the implicit
// selection matrix C[k]; every pair appears at most once.
struct MeasurementBatch {
    int k = 0;
    std::vector<Entry> entries;
    int size() const { return static_cast<int>(entries.size()); }
};

// Fixed sensors on output segments plus a rotating set of CV-queried mainline
// segments. Every rotation_period steps each CV segment moves one segment
// downstream; the last mainline segment wraps to the first.
struct SensorSchedule {
    std::vector<int> fixed_segments;        // global 0-based indices
    std::vector<int> cv_initial_segments;   // 0-based mainline indices
    int rotation_period = 4;                // steps between shifts

    void validate(const arz::Topology& topo) const;  // throws ConfigError
};

// CV segments active at step k (0-based mainline indices, sorted).
std::vector<int> active_cv_segments(const SensorSchedule& s, int k, int n_mainline);

// All measured segments at step k: fixed plus active CV, deduplicated, sorted.
std::vector<int> active_segments(const SensorSchedule& s, int k, const arz::Topology& topo);

// Maximum number of simultaneously measured segments over one schedule period.
int max_simultaneous_segments(const SensorSchedule& s, const arz::Topology& topo);

// Noise-free measurement of the state: density and speed per scheduled
// segment, speed via the floor rule for near-empty cells.
MeasurementBatch measure(const Eigen::VectorXd& x, const SensorSchedule& s, int k,
                         const arz::Topology& topo, const arz::Params& p);

// Evenly spread `count` CV segments over `n_mainline` (0-based indices).
std::vector<int> spread_cv_segments(int count, int n_mainline);

}  // namespace tse::sensing

#endif
