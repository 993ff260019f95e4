#include "quiltclean/nn/serialize.hpp"

#include "quiltclean/core/error.hpp"
#include "quiltclean/core/files.hpp"

#include <cstring>
#include <map>

namespace quiltclean::nn {

namespace {

constexpr char kMagic[4] = {'Q', 'C', 'W', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > bytes.size()) throw IoError("weights file truncated");
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
};

std::map<std::string, Tensor*> named_tensors(Network& net) {
    std::map<std::string, Tensor*> out;
    for (auto* p : net.parameters()) out[p->name] = &p->value;
    for (auto& b : net.buffers()) out[b.name] = b.value;
    return out;
}

}  // namespace

void save_weights(Network& net, const std::filesystem::path& path) {
    const auto tensors = named_tensors(net);
    std::vector<std::uint8_t> out(kMagic, kMagic + 4);
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        for (int d : {t->n, t->c, t->h, t->w}) put_u32(out, static_cast<std::uint32_t>(d));
        for (float f : t->data) {
            std::uint32_t bits;
            std::memcpy(&bits, &f, 4);
            put_u32(out, bits);
        }
    }
    write_file_bytes(path, out);
}

void load_weights(Network& net, const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw IoError("not a weights file: " + path.string());
    r.pos = 4;
    auto tensors = named_tensors(net);
    const std::uint32_t count = r.u32();
    std::size_t loaded = 0;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t len = r.u32();
        r.need(len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + r.pos), len);
        r.pos += len;
        int dims[4];
        for (int& d : dims) d = static_cast<int>(r.u32());
        const auto it = tensors.find(name);
        if (it == tensors.end()) throw InvalidArgument("unexpected tensor in weights file: " + name);
        Tensor& t = *it->second;
        if (t.n != dims[0] || t.c != dims[1] || t.h != dims[2] || t.w != dims[3])
            throw InvalidArgument("shape mismatch for " + name);
        for (auto& f : t.data) {
            const std::uint32_t bits = r.u32();
            std::memcpy(&f, &bits, 4);
        }
        ++loaded;
    }
    if (loaded != tensors.size()) throw InvalidArgument("weights file is missing tensors");
}

}  // namespace quiltclean::nn
