#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "train.hpp"

namespace umixer {

// Binary layout, little-endian:
//   "UMIXCKPT" | u32 version | u64 body_size | body | u32 crc32(all preceding bytes)
// body = u32 record_count, then records:
//   u8 kind (1 tensor, 2 text) | u32 name_len | name
//   tensor: u32 rank | u64 dims[rank] | f64 values[prod(dims)]
//   text:   u64 len | bytes
inline constexpr char kCheckpointMagic[8] = {'U', 'M', 'I', 'X', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t version = kCheckpointVersion;
    RunConfig config;
    ChannelScaler scaler;
    TrainState state;
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class ByteWriter {
public:
    void u8(std::uint8_t v) { bytes_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) { raw(&v, sizeof v); }
    void u64(std::uint64_t v) { raw(&v, sizeof v); }
    void f64s(std::span<const double> v) { raw(v.data(), v.size() * sizeof(double)); }
    void str(const std::string& s) { raw(s.data(), s.size()); }
    void raw(const void* p, std::size_t n) { bytes_.append(static_cast<const char*>(p), n); }
    std::string& bytes() { return bytes_; }

private:
    std::string bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint32_t u32() { return read_pod<std::uint32_t>(); }
    std::uint64_t u64() { return read_pod<std::uint64_t>(); }
    std::string str(std::size_t n) { return std::string(take(n)); }
    std::vector<double> f64s(std::size_t n) {
        if (n > bytes_.size() / sizeof(double)) throw CheckpointError("checkpoint truncated: record exceeds file size");
        std::vector<double> v(n);
        const auto src = take(n * sizeof(double));
        std::memcpy(v.data(), src.data(), src.size());
        return v;
    }
    bool done() const { return pos_ == bytes_.size(); }

private:
    template <typename T>
    T read_pod() {
        T v;
        const auto src = take(sizeof(T));
        std::memcpy(&v, src.data(), sizeof(T));
        return v;
    }
    std::string_view take(std::size_t n) {
        if (n > bytes_.size() - pos_) throw CheckpointError("checkpoint truncated: unexpected end of data");
        const auto out = bytes_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(std::string_view bytes) {
    return static_cast<std::uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

inline std::string history_to_text(const std::vector<EpochRecord>& history) {
    std::string out;
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + " " + format_double(r.train_l1) + " " + format_double(r.val_l1) + "\n";
    }
    return out;
}

inline std::vector<EpochRecord> history_from_text(const std::string& text) {
    std::vector<EpochRecord> out;
    std::istringstream in(text);
    std::string epoch, train_l1, val_l1;
    while (in >> epoch >> train_l1 >> val_l1) {
        EpochRecord r;
        r.epoch = parse_unsigned<std::size_t>("history", epoch);
        const auto parse = [](const std::string& s) {
            double v = 0.0;
            std::from_chars(s.data(), s.data() + s.size(), v);
            return v;
        };
        r.train_l1 = parse(train_l1);
        r.val_l1 = parse(val_l1);
        out.push_back(r);
    }
    return out;
}

inline void put_tensor(ByteWriter& w, std::uint32_t& count, const std::string& name, const Shape& shape,
                       std::span<const double> values) {
    w.u8(1);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u32(static_cast<std::uint32_t>(shape.size()));
    for (auto d : shape) w.u64(d);
    w.f64s(values);
    ++count;
}

inline void put_text(ByteWriter& w, std::uint32_t& count, const std::string& name, const std::string& text) {
    w.u8(2);
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u64(text.size());
    w.str(text);
    ++count;
}

struct Records {
    std::map<std::string, std::pair<Shape, std::vector<double>>> tensors;
    std::map<std::string, std::string> texts;

    const std::string& text(const std::string& name) const {
        auto it = texts.find(name);
        if (it == texts.end()) throw CheckpointError("checkpoint is missing record '" + name + "'");
        return it->second;
    }

    void fill(const std::string& name, Tensor& t) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        if (it->second.first != t.shape()) {
            throw CheckpointError("checkpoint tensor '" + name + "' has shape " + shape_str(it->second.first) +
                                  ", config expects " + shape_str(t.shape()));
        }
        std::copy(it->second.second.begin(), it->second.second.end(), t.mutable_data().begin());
    }

    std::vector<double> vec(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw CheckpointError("checkpoint is missing tensor '" + name + "'");
        return it->second.second;
    }
};

inline std::map<std::string, std::string> parse_meta(const std::string& text) {
    std::map<std::string, std::string> out;
    std::istringstream in(text);
    std::string key, value;
    while (in >> key >> value) out[key] = value;
    return out;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
    detail::ByteWriter body;
    std::uint32_t count = 0;
    const auto& st = ck.state;

    detail::put_text(body, count, "config", config_to_text(ck.config));
    std::string meta;
    meta += "epochs_done " + std::to_string(st.epochs_done) + "\n";
    meta += "best_score " + detail::format_double(st.best_score) + "\n";
    meta += "best_epoch " + std::to_string(st.best_epoch) + "\n";
    meta += "epochs_since_best " + std::to_string(st.epochs_since_best) + "\n";
    meta += "stopped " + std::string(st.stopped ? "1" : "0") + "\n";
    meta += "adam_step " + std::to_string(st.adam.step) + "\n";
    meta += "adam_lr " + detail::format_double(st.adam.lr) + "\n";
    meta += "adam_beta1 " + detail::format_double(st.adam.beta1) + "\n";
    meta += "adam_beta2 " + detail::format_double(st.adam.beta2) + "\n";
    meta += "adam_eps " + detail::format_double(st.adam.eps) + "\n";
    detail::put_text(body, count, "meta", meta);
    detail::put_text(body, count, "rng", st.rng.state());
    detail::put_text(body, count, "history", detail::history_to_text(st.history));
    detail::put_tensor(body, count, "scaler.mean", {std::max<std::size_t>(ck.scaler.mean.size(), 1)},
                       ck.scaler.mean.empty() ? std::vector<double>{0.0} : ck.scaler.mean);
    detail::put_tensor(body, count, "scaler.std", {std::max<std::size_t>(ck.scaler.std.size(), 1)},
                       ck.scaler.std.empty() ? std::vector<double>{1.0} : ck.scaler.std);

    const auto params = st.params.named();
    const auto best = st.best.named();
    for (const auto& [name, t] : params) detail::put_tensor(body, count, "param/" + name, t.shape(), t.data());
    for (const auto& [name, t] : best) detail::put_tensor(body, count, "best/" + name, t.shape(), t.data());
    for (std::size_t i = 0; i < params.size(); ++i) {
        detail::put_tensor(body, count, "adam.m/" + params[i].first, params[i].second.shape(), st.adam.m[i]);
        detail::put_tensor(body, count, "adam.v/" + params[i].first, params[i].second.shape(), st.adam.v[i]);
    }

    detail::ByteWriter out;
    out.raw(kCheckpointMagic, sizeof kCheckpointMagic);
    out.u32(ck.version);
    out.u64(body.bytes().size() + sizeof(std::uint32_t));
    out.u32(count);
    out.str(body.bytes());
    out.u32(detail::crc32_of(out.bytes()));
    return std::move(out.bytes());
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
    constexpr std::size_t header = sizeof kCheckpointMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t);
    if (bytes.size() < sizeof kCheckpointMagic || std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw CheckpointError(bytes.size() < sizeof kCheckpointMagic ? "checkpoint truncated: missing header"
                                                                     : "not a checkpoint file (bad magic bytes)");
    }
    if (bytes.size() < header) throw CheckpointError("checkpoint truncated: missing header");
    detail::ByteReader head(bytes.substr(sizeof kCheckpointMagic, header - sizeof kCheckpointMagic));
    const std::uint32_t version = head.u32();
    const std::uint64_t body_size = head.u64();
    if (version != kCheckpointVersion) {
        throw CheckpointError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    if (bytes.size() < header + body_size + sizeof(std::uint32_t)) {
        throw CheckpointError("checkpoint truncated: expected " + std::to_string(header + body_size + 4) + " bytes, found " +
                              std::to_string(bytes.size()));
    }
    if (bytes.size() > header + body_size + sizeof(std::uint32_t)) throw CheckpointError("checkpoint has trailing bytes");
    const std::size_t crc_pos = bytes.size() - sizeof(std::uint32_t);
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + crc_pos, sizeof stored_crc);
    if (stored_crc != detail::crc32_of(bytes.substr(0, crc_pos))) throw CheckpointError("checkpoint checksum mismatch");

    detail::ByteReader r(bytes.substr(header, crc_pos - header));
    detail::Records rec;
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto kind = r.u8();
        const auto name = r.str(r.u32());
        if (kind == 1) {
            Shape shape(r.u32());
            for (auto& d : shape) d = r.u64();
            auto values = r.f64s(shape_numel(shape));
            rec.tensors[name] = {std::move(shape), std::move(values)};
        } else if (kind == 2) {
            rec.texts[name] = r.str(r.u64());
        } else {
            throw CheckpointError("checkpoint record '" + name + "' has unknown kind " + std::to_string(kind));
        }
    }
    if (!r.done()) throw CheckpointError("checkpoint body has unparsed bytes");

    Checkpoint ck;
    ck.version = version;
    ck.config = config_from_text(rec.text("config"));
    const auto meta = detail::parse_meta(rec.text("meta"));
    const auto meta_value = [&](const std::string& key) -> const std::string& {
        auto it = meta.find(key);
        if (it == meta.end()) throw CheckpointError("checkpoint meta is missing '" + key + "'");
        return it->second;
    };

    auto& st = ck.state;
    RngStream shape_rng(0);
    st.params = init_params(ck.config.model, shape_rng);
    st.best = st.params.clone();
    auto params = st.params.named();
    auto best = st.best.named();
    st.adam = AdamState::for_params(params, 0.0);
    for (std::size_t i = 0; i < params.size(); ++i) {
        rec.fill("param/" + params[i].first, params[i].second);
        rec.fill("best/" + best[i].first, best[i].second);
        st.adam.m[i] = rec.vec("adam.m/" + params[i].first);
        st.adam.v[i] = rec.vec("adam.v/" + params[i].first);
    }
    st.epochs_done = detail::parse_unsigned<std::size_t>("epochs_done", meta_value("epochs_done"));
    st.best_score = meta_value("best_score") == "inf" ? std::numeric_limits<double>::infinity()
                                                      : detail::parse_real("best_score", meta_value("best_score"));
    st.best_epoch = detail::parse_unsigned<std::size_t>("best_epoch", meta_value("best_epoch"));
    st.epochs_since_best = detail::parse_unsigned<std::size_t>("epochs_since_best", meta_value("epochs_since_best"));
    st.stopped = meta_value("stopped") == "1";
    st.adam.step = detail::parse_unsigned<std::uint64_t>("adam_step", meta_value("adam_step"));
    st.adam.lr = detail::parse_real("adam_lr", meta_value("adam_lr"));
    st.adam.beta1 = detail::parse_real("adam_beta1", meta_value("adam_beta1"));
    st.adam.beta2 = detail::parse_real("adam_beta2", meta_value("adam_beta2"));
    st.adam.eps = detail::parse_real("adam_eps", meta_value("adam_eps"));
    st.rng.restore(rec.text("rng"));
    st.history = detail::history_from_text(rec.text("history"));
    ck.scaler.mean = rec.vec("scaler.mean");
    ck.scaler.std = rec.vec("scaler.std");
    return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
    const auto bytes = serialize_checkpoint(ck);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_checkpoint(ss.str());
}

}  // namespace umixer
