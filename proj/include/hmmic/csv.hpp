#pragma once

#include "errors.hpp"
#include "models.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace hmmic {

/// Shortest text that round-trips through strtod is not required; we always
/// emit 17 significant digits so files are stable across platforms.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::vector<std::string> split(std::string_view line, char sep = ',') {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_double(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw ConfigError("not a number: '" + s + "'");
    }
    if (used != s.size()) throw ConfigError("not a number: '" + s + "'");
    return v;
}

/// Trajectory CSV: header `t,x,y`, one row per time index.
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
    os << "t,x,y\n";
    for (std::size_t t = 0; t < traj.size(); ++t) {
        os << t << ',' << format_double(traj.states[t]) << ','
           << format_double(traj.observations[t]) << '\n';
    }
}

inline void write_trajectory_csv(const std::string& path, const Trajectory& traj) {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot open for writing: " + path);
    write_trajectory_csv(os, traj);
}

/// Reads a trajectory CSV; the `x` column is optional (empty states).
inline Trajectory read_trajectory_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw ConfigError("empty data file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split(line);
    int col_x = -1, col_y = -1;
    for (std::size_t k = 0; k < header.size(); ++k) {
        if (header[k] == "x") col_x = static_cast<int>(k);
        if (header[k] == "y") col_y = static_cast<int>(k);
    }
    if (col_y < 0) throw ConfigError("data file has no 'y' column");
    Trajectory traj;
    while (std::getline(is, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split(line);
        if (static_cast<int>(fields.size()) <= std::max(col_x, col_y))
            throw ConfigError("short row in data file: " + line);
        traj.observations.push_back(parse_double(fields[col_y]));
        if (col_x >= 0) traj.states.push_back(parse_double(fields[col_x]));
    }
    if (traj.observations.empty()) throw ConfigError("data file has no rows");
    return traj;
}

inline Trajectory read_trajectory_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open data file: " + path);
    return read_trajectory_csv(is);
}

}  // namespace hmmic
