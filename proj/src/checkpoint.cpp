#include <cstring>
#include <fstream>

#include <json.hpp>

#include "medgraph/params.hpp"

namespace medgraph {

using nlohmann::json;

namespace {
constexpr char kMagic[4] = {'M', 'G', 'C', 'K'};

void write_u32(std::ostream& f, uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
}

uint32_t read_u32(std::istream& f) {
    uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    if (!f) throw std::runtime_error("checkpoint: truncated header");
    return v;
}
}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    json dir = json::array();
    uint64_t offset = 0;
    for (const auto& [name, arr] : ck.arrays) {
        dir.push_back({{"name", name},
                       {"rows", arr.rows},
                       {"cols", arr.cols},
                       {"offset", offset}});
        offset += arr.size() * sizeof(float);
    }
    json header;
    header["config"] = json::parse(ck.config_json.empty() ? "{}" : ck.config_json);
    header["history"] = ck.history;
    header["arrays"] = std::move(dir);
    std::string htext = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write(kMagic, 4);
    write_u32(f, ck.version);
    write_u32(f, static_cast<uint32_t>(htext.size()));
    f.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto& [name, arr] : ck.arrays) {
        std::vector<float> buf(arr.size());
        for (size_t i = 0; i < arr.size(); ++i) buf[i] = static_cast<float>(arr.data[i]);
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);

    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);

    Checkpoint ck;
    ck.version = read_u32(f);
    if (ck.version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported version " + std::to_string(ck.version) +
                                 " (expected " + std::to_string(kCheckpointVersion) + ")");

    uint32_t hlen = read_u32(f);
    std::string htext(hlen, '\0');
    f.read(htext.data(), hlen);
    if (!f) throw std::runtime_error("checkpoint: truncated header json");

    json header;
    try {
        header = json::parse(htext);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("checkpoint: corrupt header json: ") + e.what());
    }
    ck.config_json = header.value("config", json::object()).dump();
    if (header.contains("history"))
        ck.history = header["history"].get<std::map<std::string, std::vector<double>>>();

    std::streampos payload_start = f.tellg();
    f.seekg(0, std::ios::end);
    uint64_t payload_bytes = static_cast<uint64_t>(f.tellg() - payload_start);

    for (const auto& e : header.at("arrays")) {
        std::string name = e.at("name").get<std::string>();
        int rows = e.at("rows").get<int>();
        int cols = e.at("cols").get<int>();
        uint64_t off = e.at("offset").get<uint64_t>();
        uint64_t nbytes = static_cast<uint64_t>(rows) * cols * sizeof(float);
        if (off + nbytes > payload_bytes)
            throw std::runtime_error("checkpoint: corrupt payload, array \"" + name +
                                     "\" extends past end of file");
        f.seekg(payload_start + static_cast<std::streamoff>(off));
        std::vector<float> buf(static_cast<size_t>(rows) * cols);
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(nbytes));
        if (!f) throw std::runtime_error("checkpoint: corrupt payload for array \"" + name + "\"");
        Array arr(rows, cols);
        for (size_t i = 0; i < buf.size(); ++i) arr.data[i] = static_cast<double>(buf[i]);
        ck.arrays.emplace(std::move(name), std::move(arr));
    }
    return ck;
}

}  // namespace medgraph
