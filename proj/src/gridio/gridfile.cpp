#include <fstream>

#include "rollcast/gridio.hpp"

namespace rollcast::gridio {

namespace {
constexpr char kMagic[4] = {'A', 'R', 'R', 'W'};
}

std::vector<unsigned char> encode_grid(const Dataset& d) {
    d.validate();
    const auto& s = *d.spec;
    if (s.num_vars > 0xFFFF || s.lat_points > 0xFFFF || s.lon_points > 0xFFFF)
        throw GridError("grid dimensions exceed u16 header fields");
    binio::Writer w;
    w.put_bytes(std::string_view(kMagic, 4));
    w.put<std::uint16_t>(kGridFileVersion);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.num_vars));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.lat_points));
    w.put<std::uint16_t>(static_cast<std::uint16_t>(s.lon_points));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(d.frames.size()));
    w.put<std::uint32_t>(static_cast<std::uint32_t>(s.base_step_hours));
    for (double lat : s.lat_degrees) w.put<double>(lat);
    w.bytes().reserve(w.bytes().size() + d.frames.size() * s.size() * sizeof(float));
    for (const auto& f : d.frames)
        for (double v : f.values) w.put<float>(static_cast<float>(v));
    return std::move(w.bytes());
}

Dataset decode_grid(const std::vector<unsigned char>& bytes) {
    binio::Reader r(bytes);
    if (bytes.size() < 4 || r.get_bytes(4, "magic") != std::string_view(kMagic, 4))
        throw binio::ParseError("bad magic (expected \"ARRW\")", 0);
    const std::size_t version_at = r.offset();
    const auto version = r.get<std::uint16_t>("version");
    if (version != kGridFileVersion)
        throw binio::ParseError("unsupported version " + std::to_string(version), version_at);
    auto spec = std::make_shared<GridSpec>();
    spec->num_vars = r.get<std::uint16_t>("V");
    spec->lat_points = r.get<std::uint16_t>("H");
    spec->lon_points = r.get<std::uint16_t>("W");
    const auto steps = r.get<std::uint32_t>("num_steps");
    spec->base_step_hours = r.get<std::uint32_t>("base_step_hours");
    for (std::size_t i = 0; i < spec->lat_points; ++i) spec->lat_degrees.push_back(r.get<double>("latitudes"));
    const std::size_t header_end = r.offset();
    try {
        spec->validate();
    } catch (const GridError& e) {
        throw binio::ParseError(e.what(), 4);
    }
    const std::size_t frame_bytes = spec->size() * sizeof(float);
    if (r.remaining() / frame_bytes < steps)
        throw binio::ParseError("truncated payload: header declares " + std::to_string(steps) + " frames of " +
                                    std::to_string(frame_bytes) + " bytes but only " +
                                    std::to_string(r.remaining()) + " bytes follow",
                                header_end + r.remaining());
    if (r.remaining() != frame_bytes * steps)
        throw binio::ParseError("trailing bytes after payload", header_end + frame_bytes * steps);

    Dataset d;
    d.spec = spec;
    d.frames.reserve(steps);
    for (std::uint32_t t = 0; t < steps; ++t) {
        GridField f(spec, static_cast<std::int64_t>(t) * spec->base_step_hours);
        for (auto& v : f.values) v = static_cast<double>(r.get<float>("payload"));
        d.frames.push_back(std::move(f));
    }
    for (std::size_t v = 0; v < spec->num_vars; ++v) d.variable_names.push_back("var" + std::to_string(v));
    d.splits = {d.frames.size(), d.frames.size()};
    return d;
}

nlohmann::json manifest(const Dataset& d) {
    nlohmann::json j;
    j["variables"] = d.variable_names;
    j["splits"] = {{"train_end", d.splits.train_end}, {"val_end", d.splits.val_end}, {"num_steps", d.frames.size()}};
    j["provenance"] = d.provenance;
    return j;
}

std::filesystem::path manifest_path(const std::filesystem::path& grid_path) {
    return std::filesystem::path(grid_path.string() + ".json");
}

void write_grid_file(const std::filesystem::path& path, const Dataset& dataset) {
    binio::write_file(path.string(), encode_grid(dataset));
    std::ofstream m(manifest_path(path));
    if (!m) throw std::runtime_error("cannot write manifest next to '" + path.string() + "'");
    m << manifest(dataset).dump(2) << '\n';
}

Dataset read_grid_file(const std::filesystem::path& path) {
    Dataset d = decode_grid(binio::read_file(path.string()));
    const auto mp = manifest_path(path);
    if (std::filesystem::exists(mp)) {
        std::ifstream in(mp);
        const auto j = nlohmann::json::parse(in);
        d.variable_names = j.at("variables").get<std::vector<std::string>>();
        d.splits.train_end = j.at("splits").at("train_end").get<std::size_t>();
        d.splits.val_end = j.at("splits").at("val_end").get<std::size_t>();
        d.provenance = j.value("provenance", nlohmann::json::object());
        if (d.variable_names.size() != d.spec->num_vars)
            throw GridError("manifest lists " + std::to_string(d.variable_names.size()) + " variables, file has " +
                            std::to_string(d.spec->num_vars));
    }
    d.validate();
    return d;
}

}  // namespace rollcast::gridio
