#include "mcan/weights.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "weight file I/O assumes a little-endian host");

namespace mcan {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'N', 'W'};

template <typename T>
void put(std::string& buf, T v) {
    char raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    buf.append(raw, sizeof(T));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    template <typename T>
    T get() {
        if (pos + sizeof(T) > buf.size()) throw FormatError("weight file truncated");
        T v;
        std::memcpy(&v, buf.data() + pos, sizeof(T));
        pos += sizeof(T);
        return v;
    }
    std::string bytes(size_t n) {
        if (pos + n > buf.size()) throw FormatError("weight file truncated");
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

uint32_t crc_of(const std::string& buf, size_t len) {
    return static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(len)));
}

}  // namespace

void write_weight_file(const std::string& path, const std::vector<WeightEntry>& entries) {
    std::string buf;
    buf.append(kMagic, 4);
    put<uint16_t>(buf, kWeightFileVersion);
    put<uint32_t>(buf, static_cast<uint32_t>(entries.size()));
    for (const auto& e : entries) {
        put<uint16_t>(buf, static_cast<uint16_t>(e.name.size()));
        buf.append(e.name);
        put<uint8_t>(buf, static_cast<uint8_t>(e.dims.size()));
        uint64_t count = 1;
        for (uint32_t d : e.dims) {
            put<uint32_t>(buf, d);
            count *= d;
        }
        if (count != e.data.size())
            throw ShapeError("weight entry '" + e.name + "': dims do not match payload");
        buf.append(reinterpret_cast<const char*>(e.data.data()), e.data.size() * 4);
    }
    put<uint32_t>(buf, crc_of(buf, buf.size()));

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw FormatError("cannot open '" + path + "' for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw FormatError("short write to '" + path + "'");
}

std::vector<WeightEntry> read_weight_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("cannot open '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    const std::string buf = ss.str();
    if (buf.size() < 14) throw FormatError("weight file truncated");
    if (std::memcmp(buf.data(), kMagic, 4) != 0)
        throw FormatError("'" + path + "' is not a weight file (bad magic)");

    const uint32_t stored_crc = [&] {
        uint32_t v;
        std::memcpy(&v, buf.data() + buf.size() - 4, 4);
        return v;
    }();
    if (crc_of(buf, buf.size() - 4) != stored_crc)
        throw FormatError("'" + path + "': CRC mismatch (file corrupted)");

    Reader r{buf, 4};
    const uint16_t version = r.get<uint16_t>();
    if (version != kWeightFileVersion)
        throw FormatError("'" + path + "': unsupported version " + std::to_string(version));
    const uint32_t count = r.get<uint32_t>();
    std::vector<WeightEntry> entries(count);
    for (auto& e : entries) {
        const uint16_t name_len = r.get<uint16_t>();
        e.name = r.bytes(name_len);
        const uint8_t ndim = r.get<uint8_t>();
        uint64_t numel = 1;
        e.dims.resize(ndim);
        for (auto& d : e.dims) {
            d = r.get<uint32_t>();
            numel *= d;
        }
        const std::string payload = r.bytes(numel * 4);
        e.data.resize(numel);
        std::memcpy(e.data.data(), payload.data(), payload.size());
    }
    if (r.pos != buf.size() - 4)
        throw FormatError("'" + path + "': trailing bytes after entry table");
    return entries;
}

namespace {

bool is_bias(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0;
}

WeightEntry to_entry(const WeightStore::Entry& e) {
    WeightEntry out;
    out.name = e.name;
    const Shape& s = e.tensor.shape;
    if (is_bias(e.name))
        out.dims = {static_cast<uint32_t>(s.n)};
    else
        out.dims = {static_cast<uint32_t>(s.n), static_cast<uint32_t>(s.c),
                    static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)};
    out.data = e.tensor.data;
    return out;
}

}  // namespace

void save_weights(const Model& m, const std::string& path) {
    std::vector<WeightEntry> entries;
    entries.reserve(m.weights.entries.size());
    for (const auto& e : m.weights.entries) entries.push_back(to_entry(e));
    write_weight_file(path, entries);
}

void load_weights(const std::string& path, Model& m) {
    const auto entries = read_weight_file(path);
    std::set<std::string> filled;
    for (const auto& e : entries) {
        if (e.name.rfind(kOptimizerPrefix, 0) == 0) continue;
        const int idx = m.weights.find(e.name);
        if (idx < 0)
            throw ShapeError("weight entry '" + e.name + "' unknown to this model");
        Tensor& dst = m.weights.entries[idx].tensor;
        const WeightEntry expect = to_entry(m.weights.entries[idx]);
        if (e.dims != expect.dims) {
            std::string got, want;
            for (auto d : e.dims) got += std::to_string(d) + " ";
            for (auto d : expect.dims) want += std::to_string(d) + " ";
            throw ShapeError("weight entry '" + e.name + "': dims [" + got + "] do not match [" +
                             want + "]");
        }
        dst.data = e.data;
        filled.insert(e.name);
    }
    for (const auto& e : m.weights.entries)
        if (!filled.count(e.name))
            throw ShapeError("weight file is missing entry '" + e.name + "'");
}

std::string inspect_weights(const std::string& path) {
    const auto entries = read_weight_file(path);
    std::ostringstream os;
    os << path << ": " << entries.size() << " entries, CRC ok\n";
    int64_t total = 0;
    for (const auto& e : entries) {
        os << "  " << e.name << " [";
        for (size_t i = 0; i < e.dims.size(); ++i) os << (i ? "x" : "") << e.dims[i];
        os << "] " << e.data.size() << " values\n";
        if (e.name.rfind(kOptimizerPrefix, 0) != 0) total += static_cast<int64_t>(e.data.size());
    }
    os << "total weight values: " << total << "\n";
    return os.str();
}

}  // namespace mcan
