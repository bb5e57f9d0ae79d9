#pragma once

#include <cstdint>
#include <fstream>
#include <string>

#include "json.hpp"

#include "coordx/config.hpp"
#include "coordx/errors.hpp"
#include "coordx/model.hpp"
#include "coordx/tensor.hpp"

namespace coordx {

// Layout: "CXCK", u32 header length, JSON header, then one tensor block per
// layer tensor in first, trunk, tail order (weight before bias). Payloads
// are f64, so f64 models round-trip bit-exactly.

inline constexpr char kCheckpointMagic[4] = {'C', 'X', 'C', 'K'};

struct Checkpoint {
    ModelParams<double> params;
    json meta;  // free-form: task, signal, epochs, git describe...
};

inline void save_checkpoint(std::ostream& os, const ModelParams<double>& params, const json& meta = json::object()) {
    json header{{"format", 1}, {"model", model_to_json(params.spec)}, {"meta", meta}};
    const std::string text = header.dump();
    os.write(kCheckpointMagic, 4);
    detail::put_u32(os, static_cast<std::uint32_t>(text.size()));
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    params.for_each_tensor([&](const Tensor<double>& t) { write_tensor(os, t); });
    if (!os) throw IoError("checkpoint: write failed");
}

inline void save_checkpoint(const std::string& path, const ModelParams<double>& params, const json& meta = json::object()) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write checkpoint '" + path + "'");
    save_checkpoint(os, params, meta);
}

inline Checkpoint load_checkpoint(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) throw ParseError("checkpoint: bad magic");
    const std::uint32_t len = detail::get_u32(is);
    if (len > (1u << 24)) throw ParseError("checkpoint: implausible header length");
    std::string text(len, '\0');
    if (!is.read(text.data(), len)) throw ParseError("checkpoint: truncated header");
    json header = json::parse(text, nullptr, false);
    if (header.is_discarded() || !header.is_object() || !header.contains("model")) {
        throw ParseError("checkpoint: malformed header");
    }
    Checkpoint ck;
    ck.meta = header.value("meta", json::object());
    ModelSpec spec;
    try {
        spec = model_from_json(header.at("model"), "checkpoint.model");
    } catch (const ConfigError& e) {
        throw ParseError(e.what());
    }
    Rng unused(0);
    ck.params = init_params<double>(spec, unused);
    ck.params.for_each_tensor([&](Tensor<double>& t) {
        auto loaded = read_tensor<double>(is);
        if (loaded.shape() != t.shape()) {
            throw ParseError("checkpoint: tensor shape " + shape_string(loaded.shape()) + " does not match spec " +
                             shape_string(t.shape()));
        }
        t = std::move(loaded);
    });
    return ck;
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint '" + path + "'");
    return load_checkpoint(is);
}

}  // namespace coordx
