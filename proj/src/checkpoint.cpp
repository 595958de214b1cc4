#include "rfedit/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "json.hpp"

namespace rfedit {

namespace {

using ordered_json = nlohmann::ordered_json;

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

// f32 payloads are written byte-wise little-endian so files are portable
// across hosts.
void put_f32(std::string& out, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

float get_f32(const uint8_t* p) {
    const uint32_t bits = get_u32(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

ordered_json config_to_json(const ModelConfig& c) {
    ordered_json j;
    j["image_size"] = c.image_size;
    j["channels"] = c.channels;
    j["patch_size"] = c.patch_size;
    j["hidden_dim"] = c.hidden_dim;
    j["num_heads"] = c.num_heads;
    j["num_blocks"] = c.num_blocks;
    j["d_pool"] = c.d_pool;
    j["d_ctxt"] = c.d_ctxt;
    j["max_text_tokens"] = c.max_text_tokens;
    return j;
}

ModelConfig config_from_json(const ordered_json& j, const std::vector<std::string>& vocab) {
    ModelConfig c;
    c.image_size = j.at("image_size").get<int>();
    c.channels = j.at("channels").get<int>();
    c.patch_size = j.at("patch_size").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.num_heads = j.at("num_heads").get<int>();
    c.num_blocks = j.at("num_blocks").get<int>();
    c.d_pool = j.at("d_pool").get<int>();
    c.d_ctxt = j.at("d_ctxt").get<int>();
    c.max_text_tokens = j.at("max_text_tokens").get<int>();
    c.vocab = Vocabulary::from_tokens(vocab);
    return c;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ordered_json header;
    header["model"] = config_to_json(ckpt.config);
    header["vocabulary"] = ckpt.config.vocab.tokens;
    ordered_json dir = ordered_json::array();
    uint64_t offset = 0;
    for (const auto& t : ckpt.tensors) {
        size_t n = 1;
        for (int d : t.shape) n *= static_cast<size_t>(d);
        if (n != t.data.size())
            throw CheckpointError(CheckpointError::Kind::kBadHeader,
                                  "tensor size mismatch: " + t.name);
        ordered_json e;
        e["name"] = t.name;
        e["dtype"] = "f32";
        e["shape"] = t.shape;
        e["offset"] = offset;
        dir.push_back(std::move(e));
        offset += n * 4;
    }
    header["tensors"] = std::move(dir);

    std::string buf;
    buf += "FXSP";
    put_u32(buf, kCheckpointVersion);
    const std::string htext = header.dump();
    put_u64(buf, htext.size());
    buf += htext;
    for (const auto& t : ckpt.tensors)
        for (float f : t.data) put_f32(buf, f);

    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open for writing: " + path);
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError(CheckpointError::Kind::kIo, "cannot open: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                               std::istreambuf_iterator<char>());
    if (f.bad()) throw CheckpointError(CheckpointError::Kind::kIo, "read failed: " + path);

    if (bytes.size() < 16)
        throw CheckpointError(CheckpointError::Kind::kTruncated, "file too short: " + path);
    if (std::memcmp(bytes.data(), "FXSP", 4) != 0)
        throw CheckpointError(CheckpointError::Kind::kBadMagic, "bad magic: " + path);
    const uint32_t version = get_u32(bytes.data() + 4);
    if (version != kCheckpointVersion)
        throw CheckpointError(CheckpointError::Kind::kBadVersion,
                              "unsupported version " + std::to_string(version) + ": " + path);
    const uint64_t hlen = get_u64(bytes.data() + 8);
    if (16 + hlen > bytes.size())
        throw CheckpointError(CheckpointError::Kind::kTruncated, "truncated header: " + path);

    ordered_json header;
    try {
        header = ordered_json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<long>(hlen));
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::kBadHeader,
                              std::string("header parse error: ") + e.what());
    }

    Checkpoint ckpt;
    const size_t payload_start = 16 + hlen;
    const size_t payload_size = bytes.size() - payload_start;
    try {
        auto vocab = header.at("vocabulary").get<std::vector<std::string>>();
        ckpt.config = config_from_json(header.at("model"), vocab);
        for (const auto& e : header.at("tensors")) {
            TensorEntry t;
            t.name = e.at("name").get<std::string>();
            if (e.at("dtype").get<std::string>() != "f32")
                throw CheckpointError(CheckpointError::Kind::kBadHeader,
                                      "unsupported dtype for " + t.name);
            t.shape = e.at("shape").get<std::vector<int>>();
            const uint64_t off = e.at("offset").get<uint64_t>();
            size_t n = 1;
            for (int d : t.shape) {
                if (d < 0)
                    throw CheckpointError(CheckpointError::Kind::kBadHeader,
                                          "negative dimension for " + t.name);
                n *= static_cast<size_t>(d);
            }
            if (off % 4 != 0 || off > payload_size || off + n * 4 > payload_size)
                throw CheckpointError(CheckpointError::Kind::kBadOffset,
                                      "tensor data out of bounds for " + t.name);
            t.data.resize(n);
            const uint8_t* p = bytes.data() + payload_start + off;
            for (size_t i = 0; i < n; ++i) t.data[i] = get_f32(p + i * 4);
            ckpt.tensors.push_back(std::move(t));
        }
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(CheckpointError::Kind::kBadHeader,
                              std::string("malformed header: ") + e.what());
    }
    return ckpt;
}

}  // namespace rfedit
