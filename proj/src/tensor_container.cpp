#include "maskgen/tensor_container.hpp"

#include "maskgen/error.hpp"

#include <json.hpp>

#include <cstring>
#include <fstream>

namespace maskgen {

using nlohmann::json;

namespace {

void put_u64_le(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

uint64_t get_u64_le(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

void put_f32_le(std::vector<uint8_t>& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>((bits >> (8 * i)) & 0xff));
}

float get_f32_le(const uint8_t* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

} // namespace

std::vector<uint8_t> serialize_container(const Container& c) {
    json header = json::object();
    uint64_t offset = 0;
    for (const auto& [name, t] : c.tensors) {  // std::map: lexicographic order
        if (name == "__meta__") throw ContractError("tensor name __meta__ is reserved");
        const uint64_t nbytes = static_cast<uint64_t>(t.numel()) * 4;
        header[name] = {{"dtype", "f32"},
                        {"shape", t.shape},
                        {"data_offsets", {offset, offset + nbytes}}};
        offset += nbytes;
    }
    header["__meta__"] = c.meta;

    const std::string htext = header.dump();
    std::vector<uint8_t> out;
    out.reserve(12 + htext.size() + offset);
    out.push_back('N');
    out.push_back('T');
    out.push_back('C');
    out.push_back('1');
    put_u64_le(out, htext.size());
    out.insert(out.end(), htext.begin(), htext.end());
    for (const auto& [name, t] : c.tensors)
        for (double v : t.data) put_f32_le(out, static_cast<float>(v));
    return out;
}

Container deserialize_container(const std::vector<uint8_t>& bytes) {
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "NTC1", 4) != 0)
        throw IoError("not an NTC1 container");
    const uint64_t hlen = get_u64_le(bytes.data() + 4);
    if (12 + hlen > bytes.size()) throw IoError("NTC1 header overruns file");
    json header;
    try {
        header = json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<size_t>(hlen));
    } catch (const json::exception& e) {
        throw IoError(std::string("bad NTC1 header json: ") + e.what());
    }

    Container c;
    const size_t data_start = 12 + static_cast<size_t>(hlen);
    const uint64_t data_size = bytes.size() - data_start;
    uint64_t expect_begin = 0;
    for (auto it = header.begin(); it != header.end(); ++it) {
        if (it.key() == "__meta__") {
            for (auto m = it->begin(); m != it->end(); ++m)
                c.meta[m.key()] = m->get<std::string>();
            continue;
        }
        const json& e = *it;
        if (e.at("dtype").get<std::string>() != "f32") throw IoError("unsupported dtype");
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        const uint64_t begin = e.at("data_offsets")[0].get<uint64_t>();
        const uint64_t end = e.at("data_offsets")[1].get<uint64_t>();
        if (begin != expect_begin || end < begin || end > data_size)
            throw IoError("NTC1 offsets out of order for tensor " + it.key());
        const uint64_t numel = static_cast<uint64_t>(Tensor::numel_of(shape));
        if (end - begin != numel * 4) throw IoError("NTC1 size mismatch for tensor " + it.key());
        Tensor t(shape);
        for (uint64_t i = 0; i < numel; ++i)
            t.data[i] = static_cast<double>(get_f32_le(bytes.data() + data_start + begin + i * 4));
        c.tensors.emplace(it.key(), std::move(t));
        expect_begin = end;
    }
    if (expect_begin != data_size) throw IoError("NTC1 trailing bytes after last tensor");
    return c;
}

void save_container(const std::filesystem::path& path, const Container& c) {
    const std::vector<uint8_t> bytes = serialize_container(c);
    std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
    // write-temp-then-rename so readers never see a partial checkpoint
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open for write: " + tmp.string());
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("short write: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Container load_container(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing artifact: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_container(bytes);
}

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

std::string container_digest(const Container& c) {
    const std::vector<uint8_t> bytes = serialize_container(c);
    return hex64(fnv1a64_bytes(bytes.data(), bytes.size()));
}

std::string file_digest(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("missing artifact: " + path.string());
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return hex64(fnv1a64_bytes(bytes.data(), bytes.size()));
}

} // namespace maskgen
