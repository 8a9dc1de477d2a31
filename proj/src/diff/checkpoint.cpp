#include <fstream>

#include "rollcast/binio.hpp"
#include "rollcast/diff/params.hpp"

namespace rollcast::binio {

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("short write to '" + path + "'");
}

}  // namespace rollcast::binio

namespace rollcast::diff {

namespace {
constexpr char kMagic[4] = {'R', 'C', 'K', 'P'};
}

void save_checkpoint(const std::filesystem::path& path, const std::vector<const Parameter*>& params) {
    binio::Writer w;
    w.put_bytes(std::string_view(kMagic, 4));
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        if (p->name.size() > 0xFFFF) throw CheckpointError("name too long: " + p->name);
        w.put<std::uint16_t>(static_cast<std::uint16_t>(p->name.size()));
        w.put_bytes(p->name);
        w.put<std::uint32_t>(2);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p->shape.rows));
        w.put<std::uint32_t>(static_cast<std::uint32_t>(p->shape.cols));
        for (double v : p->value) w.put<float>(static_cast<float>(v));
    }
    const auto& b = w.bytes();
    w.put<std::uint64_t>(binio::fnv1a64(b.data(), b.size()));
    try {
        binio::write_file(path.string(), w.bytes());
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
}

void load_checkpoint(const std::filesystem::path& path, ParameterStore& store) {
    std::vector<unsigned char> bytes;
    try {
        bytes = binio::read_file(path.string());
    } catch (const std::runtime_error& e) {
        throw CheckpointError(e.what());
    }
    if (bytes.size() < 8 + 4 + 4) throw CheckpointError("file too short");
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored;
    std::memcpy(&stored, bytes.data() + body, 8);
    if (stored != binio::fnv1a64(bytes.data(), body)) throw CheckpointError("checksum mismatch");

    binio::Reader r(bytes);
    if (r.get_bytes(4, "magic") != std::string_view(kMagic, 4)) throw binio::ParseError("bad checkpoint magic", 0);
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError("unsupported version " + std::to_string(version));
    const auto count = r.get<std::uint32_t>("tensor count");
    for (std::uint32_t t = 0; t < count; ++t) {
        const auto nlen = r.get<std::uint16_t>("name length");
        std::string name = r.get_bytes(nlen, "name");
        const auto rank = r.get<std::uint32_t>("rank");
        if (rank != 2) throw binio::ParseError("tensor '" + name + "' has unsupported rank", r.offset());
        Shape s;
        s.rows = r.get<std::uint32_t>("dims");
        s.cols = r.get<std::uint32_t>("dims");
        r.need(s.size() * sizeof(float), "payload");
        Parameter& p = store.contains(name) ? store.get(name) : store.add(name, s, false);
        if (p.shape != s) throw ShapeError("load_checkpoint(" + name + ")", p.shape, s);
        for (std::size_t i = 0; i < s.size(); ++i) p.value[i] = static_cast<double>(r.get<float>("payload"));
    }
    if (r.remaining() != 8) throw binio::ParseError("trailing bytes before checksum", r.offset());
}

}  // namespace rollcast::diff
