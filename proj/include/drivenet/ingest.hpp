#pragma once

// Raw GPS trip ingestion: line parsing, trip-folder naming, dataset scans and
// a seeded synthetic generator that writes the same on-disk layout.

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "drivenet/error.hpp"

namespace drivenet {

enum class DriverId : std::uint8_t { D1 = 1, D2, D3, D4, D5, D6 };
enum class Behaviour : std::uint8_t { Normal, Drowsy, Aggressive };
enum class Road : std::uint8_t { Motorway, Secondary };

inline constexpr int kDriverCount = 6;

inline int driver_index(DriverId d) { return static_cast<int>(d); }

inline DriverId driver_from_index(int k) {
    require(k >= 1 && k <= kDriverCount, ErrorKind::InvalidArgument,
            "driver index out of range: " + std::to_string(k));
    return static_cast<DriverId>(k);
}

inline std::string to_string(DriverId d) { return "D" + std::to_string(driver_index(d)); }

inline std::optional<DriverId> parse_driver(std::string_view s) {
    if (s.size() == 2 && (s[0] == 'D' || s[0] == 'd') && s[1] >= '1' && s[1] <= '6')
        return static_cast<DriverId>(s[1] - '0');
    return std::nullopt;
}

inline std::string_view to_string(Behaviour b) {
    switch (b) {
    case Behaviour::Normal: return "NORMAL";
    case Behaviour::Drowsy: return "DROWSY";
    case Behaviour::Aggressive: return "AGGRESSIVE";
    }
    return "?";
}

inline std::string_view to_string(Road r) { return r == Road::Motorway ? "MOTORWAY" : "SECONDARY"; }

inline double speed_limit_kmh(Road r) { return r == Road::Motorway ? 120.0 : 90.0; }
inline double nominal_length_km(Road r) { return r == Road::Motorway ? 25.0 : 16.0; }

struct GpsRecord {
    double timestamp_s = 0.0;
    double speed_kmh = 0.0;
    double lat_deg = 0.0;
    double lon_deg = 0.0;
    double alt_m = 0.0;
    double vacc_m = 0.0;
    double hacc_m = 0.0;

    bool operator==(const GpsRecord&) const = default;
};

struct Trajectory {
    DriverId driver = DriverId::D1;
    Behaviour behaviour = Behaviour::Normal;
    Road road = Road::Motorway;
    double road_length_km = 25.0;
    double road_speed_limit_kmh = 120.0;
    std::string name;
    std::vector<GpsRecord> records;

    bool operator==(const Trajectory&) const = default;
};

/// Position of each GpsRecord field among the whitespace-separated columns.
/// Order: timestamp, speed, lat, lon, alt, vacc, hacc.
struct ColumnMap {
    std::array<std::size_t, 7> index{0, 1, 2, 3, 4, 5, 6};
};

inline void check_record(const GpsRecord& r) {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::RangeViolation, what); };
    if (!(r.timestamp_s >= 0.0)) fail("timestamp must be non-negative");
    if (!(r.speed_kmh >= 0.0)) fail("speed must be non-negative");
    if (!(r.lat_deg >= -90.0 && r.lat_deg <= 90.0)) fail("latitude outside [-90,90]");
    if (!(r.lon_deg >= -180.0 && r.lon_deg <= 180.0)) fail("longitude outside [-180,180]");
    if (!std::isfinite(r.alt_m)) fail("altitude not finite");
    if (!(r.vacc_m >= 0.0)) fail("vertical accuracy must be non-negative");
    if (!(r.hacc_m >= 0.0)) fail("horizontal accuracy must be non-negative");
}

inline void check_trajectory(const Trajectory& t) {
    require(t.road_speed_limit_kmh == speed_limit_kmh(t.road), ErrorKind::RangeViolation,
            "speed limit inconsistent with road type in " + t.name);
    require(t.road_length_km > 0.0, ErrorKind::RangeViolation, "road length must be positive");
    for (std::size_t i = 0; i < t.records.size(); ++i) {
        check_record(t.records[i]);
        if (i > 0)
            require(t.records[i].timestamp_s > t.records[i - 1].timestamp_s, ErrorKind::RangeViolation,
                    "timestamps not strictly increasing in " + t.name);
    }
}

namespace detail {

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
        std::size_t j = i;
        while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

inline std::optional<double> parse_double(std::string_view s) {
    if (!s.empty() && s.front() == '+') s.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

inline std::string upper(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return out;
}

} // namespace detail

inline GpsRecord parse_gps_line(std::string_view line, const ColumnMap& columns = {}) {
    require(!line.empty(), ErrorKind::MalformedLine, "empty line");
    const auto fields = detail::split_ws(line);
    const std::size_t needed = *std::max_element(columns.index.begin(), columns.index.end()) + 1;
    if (fields.size() < std::max<std::size_t>(needed, 7))
        throw Error(ErrorKind::MalformedLine, "expected at least 7 fields, got " +
                                                  std::to_string(fields.size()) + " in '" +
                                                  std::string(line) + "'");
    std::array<double, 7> v{};
    for (std::size_t k = 0; k < 7; ++k) {
        auto parsed = detail::parse_double(fields[columns.index[k]]);
        if (!parsed)
            throw Error(ErrorKind::MalformedLine,
                        "non-numeric field '" + std::string(fields[columns.index[k]]) + "'");
        v[k] = *parsed;
    }
    GpsRecord r{v[0], v[1], v[2], v[3], v[4], v[5], v[6]};
    check_record(r);
    return r;
}

/// Renders the seven fields in canonical order with round-trip precision.
inline std::string format_gps_record(const GpsRecord& r) {
    std::ostringstream os;
    os.precision(17);
    os << r.timestamp_s << ' ' << r.speed_kmh << ' ' << r.lat_deg << ' ' << r.lon_deg << ' ' << r.alt_m
       << ' ' << r.vacc_m << ' ' << r.hacc_m;
    return os.str();
}

struct TripInfo {
    DriverId driver;
    Behaviour behaviour;
    Road road;
    double road_length_km;

    bool operator==(const TripInfo&) const = default;
};

/// Extracts driver, behaviour, road and length tokens from a hyphen-separated
/// folder name in any order. Behaviour tokens may carry a numeric suffix
/// ("NORMAL1"), as in the public dataset's repeated trips.
inline TripInfo parse_trip_folder_name(std::string_view name) {
    std::optional<DriverId> driver;
    std::optional<Behaviour> behaviour;
    std::optional<Road> road;
    std::optional<double> length;
    bool conflict = false;

    auto set = [&conflict](auto& slot, auto value) {
        if (slot && *slot != value) conflict = true;
        slot = value;
    };

    std::size_t pos = 0;
    while (pos <= name.size()) {
        std::size_t next = name.find('-', pos);
        if (next == std::string_view::npos) next = name.size();
        const std::string tok = detail::upper(name.substr(pos, next - pos));
        pos = next + 1;
        if (tok.empty()) continue;

        if (auto d = parse_driver(tok)) {
            set(driver, *d);
            continue;
        }
        std::string stem = tok;
        while (!stem.empty() && std::isdigit(static_cast<unsigned char>(stem.back()))) stem.pop_back();
        if (stem == "NORMAL") set(behaviour, Behaviour::Normal);
        else if (stem == "DROWSY") set(behaviour, Behaviour::Drowsy);
        else if (stem == "AGGRESSIVE") set(behaviour, Behaviour::Aggressive);
        else if (tok == "MOTORWAY") set(road, Road::Motorway);
        else if (tok == "SECONDARY") set(road, Road::Secondary);
        else if (tok.size() > 2 && tok.ends_with("KM")) {
            const std::string digits = tok.substr(0, tok.size() - 2);
            if (std::all_of(digits.begin(), digits.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
                set(length, std::stod(digits));
        }
    }
    if (conflict || !driver || !behaviour || !road || !length || *length <= 0.0)
        throw Error(ErrorKind::UnrecognizedFolder, "cannot parse trip folder '" + std::string(name) + "'");
    return TripInfo{*driver, *behaviour, *road, *length};
}

inline std::string make_trip_folder_name(std::string_view prefix, const TripInfo& info) {
    std::ostringstream os;
    os << prefix << '-' << static_cast<int>(std::lround(info.road_length_km)) << "km-"
       << to_string(info.driver) << '-' << to_string(info.behaviour) << '-' << to_string(info.road);
    return os.str();
}

struct ScanOptions {
    std::string filename = "RAW_GPS.txt";
    bool strict = false;
    ColumnMap columns;
};

struct ScanReport {
    std::vector<Trajectory> trajectories;
    std::size_t malformed_lines = 0;
    std::vector<std::string> warnings;
};

inline bool trajectory_order(const Trajectory& a, const Trajectory& b) {
    return std::tie(a.driver, a.behaviour, a.road, a.name) < std::tie(b.driver, b.behaviour, b.road, b.name);
}

/// Parses one raw GPS file. Tolerant mode skips bad lines (and samples whose
/// timestamp does not advance) and counts them; strict mode rethrows.
inline std::vector<GpsRecord> read_gps_file(const std::filesystem::path& file, const ScanOptions& opt,
                                            std::size_t& malformed) {
    std::ifstream in(file);
    require(static_cast<bool>(in), ErrorKind::IoFailure, "cannot open " + file.string());
    std::vector<GpsRecord> records;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::split_ws(line).empty()) continue;
        try {
            GpsRecord r = parse_gps_line(line, opt.columns);
            if (!records.empty() && !(r.timestamp_s > records.back().timestamp_s))
                throw Error(ErrorKind::RangeViolation, "timestamp does not advance");
            records.push_back(r);
        } catch (const Error& e) {
            if (opt.strict)
                throw Error(e.kind(), file.string() + ":" + std::to_string(lineno) + ": " + e.what());
            ++malformed;
        }
    }
    return records;
}

inline ScanReport scan_dataset(const std::filesystem::path& root, const ScanOptions& opt = {}) {
    namespace fs = std::filesystem;
    std::error_code ec;
    if (!fs::is_directory(root, ec))
        throw Error(ErrorKind::IoFailure, "dataset root is not a readable directory: " + root.string());

    std::vector<fs::path> dirs;
    for (auto it = fs::recursive_directory_iterator(root, ec); !ec && it != fs::recursive_directory_iterator();
         it.increment(ec)) {
        if (it->is_directory()) dirs.push_back(it->path());
    }
    if (ec) throw Error(ErrorKind::IoFailure, "cannot walk " + root.string() + ": " + ec.message());
    std::sort(dirs.begin(), dirs.end());

    ScanReport report;
    for (const auto& dir : dirs) {
        const fs::path file = dir / opt.filename;
        if (!fs::is_regular_file(file)) continue;
        const std::string name = dir.filename().string();
        TripInfo info;
        try {
            info = parse_trip_folder_name(name);
        } catch (const Error& e) {
            report.warnings.push_back("skipped folder " + name + ": " + e.what());
            continue;
        }
        Trajectory t;
        t.driver = info.driver;
        t.behaviour = info.behaviour;
        t.road = info.road;
        t.road_length_km = info.road_length_km;
        t.road_speed_limit_kmh = speed_limit_kmh(info.road);
        t.name = name;
        t.records = read_gps_file(file, opt, report.malformed_lines);
        if (t.records.empty()) {
            report.warnings.push_back("no valid records in " + file.string());
            continue;
        }
        report.trajectories.push_back(std::move(t));
    }
    if (report.trajectories.empty())
        throw Error(ErrorKind::EmptyDataset, "no trajectories found under " + root.string());
    std::sort(report.trajectories.begin(), report.trajectories.end(), trajectory_order);
    return report;
}

/// Writes trajectories as trip folders with one raw GPS file each.
inline void write_dataset(const std::filesystem::path& root, const std::vector<Trajectory>& trajectories,
                          const std::string& filename = "RAW_GPS.txt") {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(root, ec);
    require(!ec, ErrorKind::IoFailure, "cannot create " + root.string());
    for (const auto& t : trajectories) {
        const fs::path dir = root / t.name;
        fs::create_directories(dir, ec);
        require(!ec, ErrorKind::IoFailure, "cannot create " + dir.string());
        std::ofstream out(dir / filename, std::ios::binary);
        require(static_cast<bool>(out), ErrorKind::IoFailure, "cannot write " + (dir / filename).string());
        for (const auto& r : t.records) out << format_gps_record(r) << '\n';
    }
}

namespace detail {

struct BehaviourDynamics {
    double cruise_fraction; // of the speed limit
    double pull;            // relaxation rate towards the target speed
    double accel_sigma;     // km/h per second
    double heading_sigma;   // rad per second
    double burst_prob;      // abrupt accel/brake events per second
    double target_drift;    // random walk of the target speed, km/h per second
};

inline BehaviourDynamics dynamics_for(Behaviour b) {
    switch (b) {
    case Behaviour::Normal: return {0.85, 0.05, 0.4, 0.01, 0.0, 0.0};
    case Behaviour::Drowsy: return {0.75, 0.01, 0.25, 0.02, 0.0, 0.5};
    case Behaviour::Aggressive: return {1.05, 0.15, 3.0, 0.04, 0.06, 0.0};
    }
    return {};
}

} // namespace detail

/// Seeded synthetic trips: smooth speed for Normal, slow drift for Drowsy,
/// high-variance accelerations with abrupt bursts for Aggressive. The result
/// depends on the arguments only.
inline std::vector<Trajectory> generate_synthetic_dataset(std::uint64_t seed, int drivers, int trips_per_behaviour,
                                                          int trip_len_s) {
    require(drivers >= 1 && drivers <= kDriverCount, ErrorKind::InvalidArgument, "drivers must be in [1,6]");
    require(trips_per_behaviour >= 1, ErrorKind::InvalidArgument, "trips_per_behaviour must be positive");
    require(trip_len_s >= 1, ErrorKind::InvalidArgument, "trip_len_s must be positive");

    constexpr double kPi = 3.14159265358979323846;
    constexpr double kMetresPerDegree = 111320.0;
    std::vector<Trajectory> out;
    int serial = 0;
    for (int d = 1; d <= drivers; ++d) {
        const double style = 1.0 + 0.04 * (d - 3.5);
        for (Behaviour beh : {Behaviour::Normal, Behaviour::Drowsy, Behaviour::Aggressive}) {
            for (int trip = 0; trip < trips_per_behaviour; ++trip) {
                std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                                  static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(beh),
                                  static_cast<std::uint32_t>(trip)};
                std::mt19937_64 rng(seq);
                std::normal_distribution<double> gauss(0.0, 1.0);
                std::uniform_real_distribution<double> unit(0.0, 1.0);

                const Road road = ((d + trip) % 2 == 0) ? Road::Motorway : Road::Secondary;
                const double limit = speed_limit_kmh(road);
                const auto dyn = detail::dynamics_for(beh);

                Trajectory t;
                t.driver = driver_from_index(d);
                t.behaviour = beh;
                t.road = road;
                t.road_length_km = nominal_length_km(road);
                t.road_speed_limit_kmh = limit;
                char prefix[32];
                std::snprintf(prefix, sizeof prefix, "synth%04d", ++serial);
                t.name = make_trip_folder_name(prefix, {t.driver, beh, road, t.road_length_km});
                t.records.reserve(static_cast<std::size_t>(trip_len_s));

                double lat = (road == Road::Motorway ? 40.45 : 40.52) + 0.01 * d;
                double lon = (road == Road::Motorway ? -3.35 : -3.25) - 0.01 * d;
                double alt = 620.0 + 10.0 * d + 20.0 * unit(rng);
                double heading = 2.0 * kPi * unit(rng);
                double target = dyn.cruise_fraction * limit * style;
                double speed = target * (0.8 + 0.2 * unit(rng));
                int burst_left = 0;
                double burst_accel = 0.0;

                for (int s = 0; s < trip_len_s; ++s) {
                    GpsRecord r;
                    r.timestamp_s = static_cast<double>(s);
                    r.speed_kmh = speed;
                    r.lat_deg = lat;
                    r.lon_deg = lon;
                    r.alt_m = alt;
                    r.vacc_m = 3.0 + std::abs(gauss(rng));
                    r.hacc_m = 5.0 + 2.0 * std::abs(gauss(rng));
                    t.records.push_back(r);

                    target += dyn.target_drift * gauss(rng);
                    target = std::clamp(target, 0.4 * limit, 1.2 * limit);
                    const double wave = beh == Behaviour::Normal ? 5.0 * std::sin(2.0 * kPi * s / 120.0) : 0.0;
                    double accel = dyn.pull * (target + wave - speed) + dyn.accel_sigma * gauss(rng);
                    if (burst_left == 0 && unit(rng) < dyn.burst_prob) {
                        burst_left = 2 + static_cast<int>(2.0 * unit(rng));
                        burst_accel = (unit(rng) < 0.5 ? -1.0 : 1.0) * (8.0 + 7.0 * unit(rng));
                    }
                    if (burst_left > 0) {
                        accel += burst_accel;
                        --burst_left;
                    }
                    speed = std::clamp(speed + accel, 0.0, 1.4 * limit);

                    heading += dyn.heading_sigma * gauss(rng);
                    const double metres = speed / 3.6;
                    lat += metres * std::cos(heading) / kMetresPerDegree;
                    lon += metres * std::sin(heading) / (kMetresPerDegree * std::cos(lat * kPi / 180.0));
                    alt += 0.15 * gauss(rng);
                }
                out.push_back(std::move(t));
            }
        }
    }
    std::sort(out.begin(), out.end(), trajectory_order);
    return out;
}

} // namespace drivenet
