#include "tdmr/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace tdmr::checkpoint {

namespace {

constexpr char kMagic[4] = {'T', 'D', 'C', 'K'};
constexpr std::uint16_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!is) throw FormatError("checkpoint: truncated");
    return v;
}

void write_string(std::ostream& os, const std::string& s) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& is) {
    const auto n = read_pod<std::uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw FormatError("checkpoint: truncated string");
    return s;
}

void write_mat(std::ostream& os, const Mat& m) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.rows()));
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(m.cols()));
    os.write(reinterpret_cast<const char*>(m.data()),
             static_cast<std::streamsize>(m.size() * sizeof(double)));
}

Mat read_mat(std::istream& is) {
    const auto rows = read_pod<std::uint32_t>(is);
    const auto cols = read_pod<std::uint32_t>(is);
    Mat m(rows, cols);
    is.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw FormatError("checkpoint: truncated tensor");
    return m;
}

void write_config(std::ostream& os, const model::ModelConfig& c) {
    write_pod<std::int64_t>(os, c.video_dim);
    write_pod<std::int64_t>(os, c.text_dim);
    write_pod<std::int64_t>(os, c.hidden);
    write_pod<std::int32_t>(os, c.depth);
    write_pod<std::int32_t>(os, c.num_queries);
    write_pod<std::int32_t>(os, c.heads);
    write_pod<std::int64_t>(os, c.ffn_dim);
    write_pod<double>(os, c.dropout_transformer);
    write_pod<double>(os, c.dropout_input);
    write_pod<double>(os, c.beta);
    write_pod<std::int32_t>(os, c.dynamics_layers);
}

model::ModelConfig read_config(std::istream& is) {
    model::ModelConfig c;
    c.video_dim = read_pod<std::int64_t>(is);
    c.text_dim = read_pod<std::int64_t>(is);
    c.hidden = read_pod<std::int64_t>(is);
    c.depth = read_pod<std::int32_t>(is);
    c.num_queries = read_pod<std::int32_t>(is);
    c.heads = read_pod<std::int32_t>(is);
    c.ffn_dim = read_pod<std::int64_t>(is);
    c.dropout_transformer = read_pod<double>(is);
    c.dropout_input = read_pod<double>(is);
    c.beta = read_pod<double>(is);
    c.dynamics_layers = read_pod<std::int32_t>(is);
    return c;
}

}  // namespace

void save(const std::filesystem::path& path, const CheckpointData& data) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot write checkpoint: " + path.string());
    os.write(kMagic, 4);
    write_pod<std::uint16_t>(os, kVersion);
    write_config(os, data.config);
    write_pod<std::uint64_t>(os, data.step);
    write_pod<std::uint64_t>(os, data.epoch);
    write_string(os, data.rng_state);
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(data.params.size()));
    for (const auto& [name, m] : data.params) {
        write_string(os, name);
        write_mat(os, m);
    }
    write_pod<std::uint8_t>(os, data.opt_m.empty() ? 0 : 1);
    if (!data.opt_m.empty()) {
        for (const Mat& m : data.opt_m) write_mat(os, m);
        for (const Mat& m : data.opt_v) write_mat(os, m);
    }
    if (!os) throw IoError("short write: " + path.string());
}

CheckpointData load(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path.string());
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, kMagic, 4) != 0) {
        throw FormatError(path.string() + ": not a checkpoint file");
    }
    const auto version = read_pod<std::uint16_t>(is);
    if (version != kVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version");
    }
    CheckpointData data;
    data.config = read_config(is);
    data.step = read_pod<std::uint64_t>(is);
    data.epoch = read_pod<std::uint64_t>(is);
    data.rng_state = read_string(is);
    const auto n = read_pod<std::uint32_t>(is);
    data.params.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) {
        std::string name = read_string(is);
        data.params.emplace_back(std::move(name), read_mat(is));
    }
    if (read_pod<std::uint8_t>(is) != 0) {
        data.opt_m.reserve(n);
        data.opt_v.reserve(n);
        for (std::uint32_t i = 0; i < n; ++i) data.opt_m.push_back(read_mat(is));
        for (std::uint32_t i = 0; i < n; ++i) data.opt_v.push_back(read_mat(is));
    }
    return data;
}

void restore_model(model::TdDetr& m, const CheckpointData& data) {
    if (!(m.config() == data.config)) {
        throw ValidationError("checkpoint config does not match model config");
    }
    const auto& items = m.registry().items;
    if (items.size() != data.params.size()) {
        throw ValidationError("checkpoint parameter count mismatch");
    }
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& [name, stored] = data.params[i];
        if (name != items[i].first) {
            throw ValidationError("checkpoint parameter name mismatch: " + name + " vs " +
                                  items[i].first);
        }
        if (stored.rows() != items[i].second->value.rows() ||
            stored.cols() != items[i].second->value.cols()) {
            throw ValidationError("checkpoint parameter shape mismatch: " + name);
        }
        items[i].second->value = stored;
        items[i].second->zero_grad();
    }
}

}  // namespace tdmr::checkpoint
