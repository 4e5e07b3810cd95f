#include "debias/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "checkpoint format is little-endian");

namespace debias {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;

void write_u32(std::ofstream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
void write_u64(std::ofstream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
std::uint64_t read_u64(std::ifstream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u32(out, kVersion);
    write_u64(out, header_json.size());
    out.write(header_json.data(), static_cast<std::streamsize>(header_json.size()));
    write_u64(out, arrays.size());
    for (const auto& a : arrays) {
        write_u64(out, a.name.size());
        out.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        write_u64(out, a.rows);
        write_u64(out, a.cols);
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    }
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(in);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version in " + path);
    Checkpoint ckpt;
    const std::uint64_t hlen = read_u64(in);
    ckpt.header_json.resize(hlen);
    in.read(ckpt.header_json.data(), static_cast<std::streamsize>(hlen));
    const std::uint64_t count = read_u64(in);
    ckpt.arrays.resize(count);
    for (auto& a : ckpt.arrays) {
        const std::uint64_t nlen = read_u64(in);
        a.name.resize(nlen);
        in.read(a.name.data(), static_cast<std::streamsize>(nlen));
        a.rows = read_u64(in);
        a.cols = read_u64(in);
        a.data.resize(a.rows * a.cols);
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(float)));
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
    }
    return ckpt;
}

const Checkpoint::Array* Checkpoint::find(const std::string& name) const {
    for (const auto& a : arrays)
        if (a.name == name) return &a;
    return nullptr;
}

template <typename Real>
Checkpoint make_checkpoint(const std::vector<ParamRef<Real>>& params,
                           const std::string& header_json) {
    Checkpoint ckpt;
    ckpt.header_json = header_json;
    ckpt.arrays.reserve(params.size());
    for (const auto& p : params) {
        Checkpoint::Array a;
        a.name = p.name;
        a.rows = p.value->rows();
        a.cols = p.value->cols();
        a.data.reserve(p.value->size());
        for (Real v : p.value->data()) a.data.push_back(static_cast<float>(v));
        ckpt.arrays.push_back(std::move(a));
    }
    return ckpt;
}

template <typename Real>
void restore_params(const Checkpoint& ckpt, const std::vector<ParamRef<Real>>& params) {
    for (const auto& p : params) {
        const auto* a = ckpt.find(p.name);
        if (!a) throw std::runtime_error("checkpoint missing array: " + p.name);
        if (a->rows != p.value->rows() || a->cols != p.value->cols())
            throw std::runtime_error("checkpoint shape mismatch for " + p.name);
        for (std::size_t i = 0; i < a->data.size(); ++i)
            p.value->data()[i] = static_cast<Real>(a->data[i]);
    }
}

template Checkpoint make_checkpoint<float>(const std::vector<ParamRef<float>>&,
                                           const std::string&);
template Checkpoint make_checkpoint<double>(const std::vector<ParamRef<double>>&,
                                            const std::string&);
template void restore_params<float>(const Checkpoint&, const std::vector<ParamRef<float>>&);
template void restore_params<double>(const Checkpoint&,
                                     const std::vector<ParamRef<double>>&);

}  // namespace debias
