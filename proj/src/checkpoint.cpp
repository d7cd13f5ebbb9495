#include "msshare/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>

#include "msshare/model_zoo.hpp"

namespace msshare {
namespace {

constexpr char kMagic[8] = {'M', 'S', 'S', 'H', 'A', 'R', 'E', '\0'};
constexpr std::uint64_t kMaxExactStep = std::uint64_t{1} << 24;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void text(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    std::vector<std::uint8_t>& buffer() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    Reader(const std::uint8_t* data, std::size_t size, const std::string& source)
        : data_(data), size_(size), source_(source) {}

    std::uint32_t u32() {
        need(4);
        const std::uint8_t* p = data_ + pos_;
        pos_ += 4;
        return std::uint32_t{p[0]} | std::uint32_t{p[1]} << 8 | std::uint32_t{p[2]} << 16 | std::uint32_t{p[3]} << 24;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string text() {
        const std::uint32_t n = u32();
        need(n);
        std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == size_; }
    void need(std::size_t n) const {
        if (size_ - pos_ < n) throw CheckpointError(source_ + ": truncated checkpoint");
    }

private:
    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
    const std::string& source_;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t size) {
    uLong crc = crc32(0L, Z_NULL, 0);
    while (size > 0) {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(size, 1u << 30));
        crc = crc32(crc, data, chunk);
        data += chunk;
        size -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

const std::string kVelocityPrefix = "optim.velocity.";
const std::string kStepName = "optim.step";

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointContents& contents) {
    Writer w;
    w.bytes(kMagic, sizeof kMagic);
    w.u32(contents.version);
    w.text(contents.arch_text);
    w.u32(static_cast<std::uint32_t>(contents.entries.size()));
    for (const CheckpointEntry& e : contents.entries) {
        if (e.shape.count() != e.values.size()) throw CheckpointError("entry " + e.name + ": payload/shape mismatch");
        w.text(e.name);
        for (std::size_t extent : {e.shape.n, e.shape.c, e.shape.h, e.shape.w}) {
            w.u32(static_cast<std::uint32_t>(extent));
        }
        for (float v : e.values) w.f32(v);
    }
    std::vector<std::uint8_t>& buf = w.buffer();
    const std::uint32_t crc = crc_of(buf.data(), buf.size());
    w.u32(crc);
    return std::move(buf);
}

CheckpointContents decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& source) {
    if (bytes.size() < sizeof kMagic + 8 || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
        throw CheckpointError(source + ": not a checkpoint (bad magic)");
    }
    const std::size_t body = bytes.size() - 4;
    Reader tail(bytes.data() + body, 4, source);
    const std::uint32_t stored = tail.u32();
    const std::uint32_t actual = crc_of(bytes.data(), body);
    if (stored != actual) {
        char buf[96];
        std::snprintf(buf, sizeof buf, ": CRC mismatch (stored %08x, computed %08x)", stored, actual);
        throw CheckpointError(source + buf);
    }
    Reader r(bytes.data() + sizeof kMagic, body - sizeof kMagic, source);
    CheckpointContents c;
    c.version = r.u32();
    if (c.version != kCheckpointVersion) {
        throw CheckpointError(source + ": unsupported checkpoint version " + std::to_string(c.version) +
                              " (expected " + std::to_string(kCheckpointVersion) + ")");
    }
    c.arch_text = r.text();
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        CheckpointEntry e;
        e.name = r.text();
        e.shape.n = r.u32();
        e.shape.c = r.u32();
        e.shape.h = r.u32();
        e.shape.w = r.u32();
        const std::size_t n = e.shape.count();
        r.need(n * 4);
        e.values.resize(n);
        for (float& v : e.values) v = r.f32();
        c.entries.push_back(std::move(e));
    }
    if (!r.done()) throw CheckpointError(source + ": trailing bytes after the last entry");
    return c;
}

CheckpointContents snapshot(Model& model, const OptimState* optim) {
    CheckpointContents c;
    c.arch_text = model.spec().to_config_text();
    for (const StateEntry& e : model.state()) {
        c.entries.push_back({e.name, e.value->shape(), {e.value->values().begin(), e.value->values().end()}});
    }
    if (optim) {
        const std::vector<StateEntry> params = model.trainable_parameters();
        if (params.size() != optim->velocity.size()) {
            throw CheckpointError("optimizer state does not match the model's trainable parameters");
        }
        for (std::size_t i = 0; i < params.size(); ++i) {
            const Tensor& v = optim->velocity[i];
            c.entries.push_back({kVelocityPrefix + params[i].name, v.shape(), {v.values().begin(), v.values().end()}});
        }
        if (optim->step > kMaxExactStep) throw CheckpointError("optimizer step count exceeds 2^24");
        c.entries.push_back({kStepName, Shape{1, 1, 1, 1}, {static_cast<float>(optim->step)}});
    }
    return c;
}

void save_checkpoint(Model& model, const OptimState* optim, const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = encode_checkpoint(snapshot(model, optim));
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("write failed for " + path.string());
}

namespace {

void apply(const CheckpointContents& c, Model& model, OptimState* optim, const std::string& source) {
    std::vector<StateEntry> state = model.state();
    if (c.entries.size() < state.size()) {
        throw CheckpointError(source + ": has " + std::to_string(c.entries.size()) + " entries, model needs " +
                              std::to_string(state.size()));
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
        const CheckpointEntry& e = c.entries[i];
        if (e.name != state[i].name) {
            throw CheckpointError(source + ": entry '" + e.name + "' where the model expects '" + state[i].name + "'");
        }
        if (e.shape != state[i].value->shape()) {
            throw CheckpointError(source + ": shape mismatch at entry '" + e.name + "': checkpoint " + e.shape.str() +
                                  ", model " + state[i].value->shape().str());
        }
    }
    for (std::size_t i = 0; i < state.size(); ++i) {
        std::copy(c.entries[i].values.begin(), c.entries[i].values.end(), state[i].value->data());
    }

    std::map<std::string, const CheckpointEntry*, std::less<>> extra;
    for (std::size_t i = state.size(); i < c.entries.size(); ++i) extra[c.entries[i].name] = &c.entries[i];
    for (const auto& [name, entry] : extra) {
        if (!name.starts_with("optim.")) throw CheckpointError(source + ": unexpected entry '" + name + "'");
    }
    if (!optim) return;
    *optim = OptimState::for_model(model);
    const std::vector<StateEntry> params = model.trainable_parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto it = extra.find(kVelocityPrefix + params[i].name);
        if (it == extra.end()) continue;
        if (it->second->shape != params[i].value->shape()) {
            throw CheckpointError(source + ": shape mismatch at entry '" + it->first + "'");
        }
        std::copy(it->second->values.begin(), it->second->values.end(), optim->velocity[i].data());
    }
    if (const auto it = extra.find(kStepName); it != extra.end() && !it->second->values.empty()) {
        optim->step = static_cast<std::uint64_t>(it->second->values.front());
    }
}

bool has_optim(const CheckpointContents& c) {
    for (const CheckpointEntry& e : c.entries) {
        if (e.name == kStepName) return true;
    }
    return false;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    const std::string source = path.string();
    const CheckpointContents c = decode_checkpoint(read_file(path), source);
    const ArchSpec spec = ArchSpec::from_config(KeyValueConfig::parse(c.arch_text));
    LoadedCheckpoint loaded{build_topology(spec), std::nullopt};
    if (has_optim(c)) {
        OptimState optim;
        apply(c, loaded.model, &optim, source);
        loaded.optim = std::move(optim);
    } else {
        apply(c, loaded.model, nullptr, source);
    }
    return loaded;
}

void load_checkpoint_into(const std::filesystem::path& path, Model& model, OptimState* optim) {
    const std::string source = path.string();
    apply(decode_checkpoint(read_file(path), source), model, optim, source);
}

}  // namespace msshare
