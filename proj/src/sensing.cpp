#include "tse/sensing.hpp"

#include <algorithm>
#include <set>

namespace tse::sensing {

void SensorSchedule::validate(const arz::Topology& topo) const {
    const auto outputs = topo.output_segments();
    for (int s : fixed_segments) {
        if (std::find(outputs.begin(), outputs.end(), s) == outputs.end())
            throw ConfigError("fixed sensor on segment " + std::to_string(s + 1) +
                              " is not an output segment");
    }
    std::set<int> cv(cv_initial_segments.begin(), cv_initial_segments.end());
    if (cv.size() != cv_initial_segments.size())
        throw ConfigError("duplicate CV segments in schedule");
    for (int s : cv_initial_segments) {
        if (s < 0 || s >= topo.n_mainline)
            throw ConfigError("CV segments must be mainline segments");
    }
    if (rotation_period < 1) throw ConfigError("rotation period must be at least 1 step");
}

std::vector<int> active_cv_segments(const SensorSchedule& s, int k, int n_mainline) {
    const int shifts = k / s.rotation_period;
    std::vector<int> out;
    out.reserve(s.cv_initial_segments.size());
    for (int seg : s.cv_initial_segments) out.push_back((seg + shifts) % n_mainline);
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<int> active_segments(const SensorSchedule& s, int k, const arz::Topology& topo) {
    std::set<int> segs(s.fixed_segments.begin(), s.fixed_segments.end());
    for (int seg : active_cv_segments(s, k, topo.n_mainline)) segs.insert(seg);
    return {segs.begin(), segs.end()};
}

int max_simultaneous_segments(const SensorSchedule& s, const arz::Topology& topo) {
    const int period = topo.n_mainline * s.rotation_period;
    int worst = 0;
    for (int k = 0; k < period; k += s.rotation_period)
        worst = std::max(worst, static_cast<int>(active_segments(s, k, topo).size()));
    return worst;
}

MeasurementBatch measure(const Eigen::VectorXd& x, const SensorSchedule& s, int k,
                         const arz::Topology& topo, const arz::Params& p) {
    MeasurementBatch batch;
    batch.k = k;
    for (int seg : active_segments(s, k, topo)) {
        const double rho = x[2 * seg];
        const double psi = x[2 * seg + 1];
        batch.entries.push_back({seg, Kind::Density, rho});
        batch.entries.push_back({seg, Kind::Speed, arz::measured_speed(rho, psi, p)});
    }
    return batch;
}

std::vector<int> spread_cv_segments(int count, int n_mainline) {
    if (count < 0 || count > n_mainline)
        throw ConfigError("CV segment count must lie in [0, n_mainline]");
    std::vector<int> out;
    out.reserve(count);
    for (int j = 0; j < count; ++j) out.push_back(j * n_mainline / count);
    return out;
}

}  // namespace tse::sensing
