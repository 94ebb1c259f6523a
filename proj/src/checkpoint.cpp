#include "lvd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace lvd {

using nlohmann::json;

uint32_t crc32(const void* data, size_t len, uint32_t crc) {
    static uint32_t table[256];
    static bool init = [] {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            table[i] = c;
        }
        return true;
    }();
    (void)init;
    crc = ~crc;
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) crc = table[(crc ^ p[i]) & 0xFF] ^ (crc >> 8);
    return ~crc;
}

namespace {

constexpr char kMagic[8] = {'L', 'V', 'D', 'C', 'K', 'P', 'T', '1'};

void append_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void append_doubles(std::string& out, const double* p, int64_t n) {
    static_assert(sizeof(double) == 8);
    size_t old = out.size();
    out.resize(old + static_cast<size_t>(n) * 8);
    std::memcpy(out.data() + old, p, static_cast<size_t>(n) * 8);
}

}  // namespace

void save_checkpoint(const std::string& path, const GenerativeModel& model,
                     const RunConfig& config, const TrainState& state, const RngSuite& rng,
                     const CheckpointMeta& meta) {
    json header;
    header["version"] = 1;
    header["config"] = config.serialize();
    json vocab = json::array();
    for (int64_t i = 0; i < model.vocab.size(); ++i) vocab.push_back(model.vocab.word(i));
    header["vocab"] = vocab;

    std::string payload;
    json index = json::array();
    auto put_array = [&](const std::string& name, const Shape& shape, const double* p,
                         int64_t n) {
        json e;
        e["name"] = name;
        e["shape"] = shape;
        e["dtype"] = "f64";
        e["offset"] = payload.size();
        index.push_back(e);
        append_doubles(payload, p, n);
    };

    ParamStore& ps = const_cast<ParamStore&>(model.params);
    for (size_t i = 0; i < ps.size(); ++i) {
        const Tensor& t = ps.tensor(i);
        put_array("p." + ps.name(i), t.shape(), t.data(), t.numel());
    }
    if (state.opt.initialized()) {
        for (size_t i = 0; i < ps.size(); ++i) {
            const Tensor& t = ps.tensor(i);
            put_array("opt.m." + ps.name(i), t.shape(), state.opt.m[i].data(), t.numel());
            put_array("opt.v." + ps.name(i), t.shape(), state.opt.v[i].data(), t.numel());
        }
    }
    header["params"] = index;
    header["opt"] = {{"present", state.opt.initialized()},
                     {"step_count", state.opt.step_count},
                     {"lr", state.opt.lr},
                     {"beta1", state.opt.beta1},
                     {"beta2", state.opt.beta2},
                     {"eps", state.opt.eps}};
    header["rng"] = {{"master", rng.master()}, {"streams", rng.serialize()}};
    header["meta"] = {{"global_step", meta.global_step}, {"note", meta.note}};

    std::string header_bytes = header.dump();
    std::string file;
    file.append(kMagic, sizeof(kMagic));
    append_u64(file, header_bytes.size());
    file += header_bytes;
    file += payload;
    uint32_t crc = crc32(header_bytes.data(), header_bytes.size());
    crc = crc32(payload.data(), payload.size(), crc);
    for (int i = 0; i < 4; ++i) file.push_back(static_cast<char>((crc >> (8 * i)) & 0xFF));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint: " + path);
    out.write(file.data(), static_cast<std::streamsize>(file.size()));
    if (!out) throw CheckpointError("short write on checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint: " + path);
    std::string file((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (file.size() < sizeof(kMagic) + 12 ||
        std::memcmp(file.data(), kMagic, sizeof(kMagic)) != 0)
        throw CheckpointError("not a checkpoint file: " + path);

    uint64_t header_len = 0;
    for (int i = 0; i < 8; ++i)
        header_len |= static_cast<uint64_t>(
                          static_cast<unsigned char>(file[sizeof(kMagic) + i]))
                      << (8 * i);
    size_t header_off = sizeof(kMagic) + 8;
    if (file.size() < header_off + header_len + 4)
        throw CheckpointError("truncated checkpoint: " + path);
    std::string header_bytes = file.substr(header_off, header_len);
    size_t payload_off = header_off + header_len;
    size_t payload_len = file.size() - payload_off - 4;

    uint32_t stored = 0;
    for (int i = 0; i < 4; ++i)
        stored |= static_cast<uint32_t>(
                      static_cast<unsigned char>(file[file.size() - 4 + i]))
                  << (8 * i);
    uint32_t crc = crc32(header_bytes.data(), header_bytes.size());
    crc = crc32(file.data() + payload_off, payload_len, crc);
    if (crc != stored) throw CheckpointError("checkpoint checksum mismatch: " + path);

    json header = json::parse(header_bytes);
    if (header.at("version").get<int>() != 1)
        throw CheckpointError("unsupported checkpoint version");

    LoadedCheckpoint out;
    out.config = RunConfig::parse(header.at("config").get<std::string>());
    std::vector<std::string> words;
    for (const auto& w : header.at("vocab")) words.push_back(w.get<std::string>());
    // stored list includes the specials at the front; from_words re-adds them
    Vocabulary vocab = Vocabulary::from_words(words);

    out.model = GenerativeModel::build(out.config.model, vocab, /*init_seed=*/0);

    // arrange the stored arrays by name, validating coverage of the payload
    struct Entry {
        Shape shape;
        size_t offset;
    };
    std::map<std::string, Entry> entries;
    size_t expected_off = 0;
    for (const auto& e : header.at("params")) {
        Entry ent;
        ent.offset = e.at("offset").get<size_t>();
        for (const auto& d : e.at("shape")) ent.shape.push_back(d.get<int64_t>());
        if (e.at("dtype").get<std::string>() != "f64")
            throw CheckpointError("unsupported dtype in checkpoint");
        if (ent.offset != expected_off)
            throw CheckpointError("checkpoint index has gaps or overlaps");
        expected_off += static_cast<size_t>(shape_numel(ent.shape)) * 8;
        entries[e.at("name").get<std::string>()] = ent;
    }
    if (expected_off != payload_len)
        throw CheckpointError("checkpoint index does not cover the payload");

    auto read_into = [&](const std::string& name, const Shape& want, double* dst) {
        auto it = entries.find(name);
        if (it == entries.end())
            throw CheckpointError("checkpoint missing array: " + name);
        if (it->second.shape != want)
            throw CheckpointError("checkpoint shape mismatch for " + name);
        std::memcpy(dst, file.data() + payload_off + it->second.offset,
                    static_cast<size_t>(shape_numel(want)) * 8);
    };

    ParamStore& ps = out.model.params;
    for (size_t i = 0; i < ps.size(); ++i)
        read_into("p." + ps.name(i), ps.tensor(i).shape(), ps.tensor(i).data());

    const json& opt = header.at("opt");
    if (opt.at("present").get<bool>()) {
        out.state.opt.init(ps);
        out.state.opt.step_count = opt.at("step_count").get<int64_t>();
        out.state.opt.lr = opt.at("lr").get<double>();
        out.state.opt.beta1 = opt.at("beta1").get<double>();
        out.state.opt.beta2 = opt.at("beta2").get<double>();
        out.state.opt.eps = opt.at("eps").get<double>();
        for (size_t i = 0; i < ps.size(); ++i) {
            read_into("opt.m." + ps.name(i), ps.tensor(i).shape(),
                      out.state.opt.m[i].data());
            read_into("opt.v." + ps.name(i), ps.tensor(i).shape(),
                      out.state.opt.v[i].data());
        }
    }

    out.rng = RngSuite(header.at("rng").at("master").get<uint64_t>());
    std::map<std::string, std::string> streams;
    for (const auto& [k, v] : header.at("rng").at("streams").items())
        streams[k] = v.get<std::string>();
    out.rng.deserialize(streams);

    out.meta.global_step = header.at("meta").at("global_step").get<int64_t>();
    out.meta.note = header.at("meta").at("note").get<std::string>();
    out.state.global_step = out.meta.global_step;
    return out;
}

}  // namespace lvd
