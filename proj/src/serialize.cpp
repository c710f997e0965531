#include "td/serialize.hpp"

#include <cstring>
#include <fstream>

#include "td/errors.hpp"

namespace td {

namespace {

void put_bytes(std::string& out, const void* p, size_t n) {
    out.append(static_cast<const char*>(p), n);
}
template <class T>
void put_int(std::string& out, T v) {
    put_bytes(out, &v, sizeof(v));  // host is little-endian (x86/aarch64 LE)
}

struct Reader {
    const char* p;
    const char* end;
    size_t base;
    size_t offset() const { return static_cast<size_t>(p - (end - base)); }
    void need(size_t n, const char* what) {
        if (static_cast<size_t>(end - p) < n)
            throw IoError(std::string("tensor file truncated while reading ") + what);
    }
    template <class T>
    T get_int(const char* what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        return v;
    }
    std::string get_str(size_t n, const char* what) {
        need(n, what);
        std::string s(p, n);
        p += n;
        return s;
    }
};

}  // namespace

Tensor TensorRecord::to_tensor() const {
    if (dtype != 0) throw IoError("tensor record '" + name + "' is not f32");
    return Tensor(shape, f32);
}
Tensor64 TensorRecord::to_tensor64() const {
    if (dtype != 1) throw IoError("tensor record '" + name + "' is not f64");
    return Tensor64(shape, f64);
}

void write_tensor_file(const std::filesystem::path& path, std::span<const TensorRecord> records) {
    std::string buf;
    buf.reserve(1024);
    buf.append("TDW1");
    put_int<uint32_t>(buf, static_cast<uint32_t>(records.size()));
    for (const auto& r : records) {
        if (r.name.size() > 0xffff) throw IoError("tensor name too long: " + r.name);
        put_int<uint16_t>(buf, static_cast<uint16_t>(r.name.size()));
        put_bytes(buf, r.name.data(), r.name.size());
        put_int<uint8_t>(buf, r.dtype);
        put_int<uint8_t>(buf, static_cast<uint8_t>(r.shape.size()));
        for (size_t d : r.shape) put_int<uint32_t>(buf, static_cast<uint32_t>(d));
    }
    for (const auto& r : records) {
        size_t n = shape_numel(r.shape);
        if (r.dtype == 0) {
            if (r.f32.size() != n) throw IoError("record '" + r.name + "' payload/shape mismatch");
            put_bytes(buf, r.f32.data(), n * sizeof(float));
        } else if (r.dtype == 1) {
            if (r.f64.size() != n) throw IoError("record '" + r.name + "' payload/shape mismatch");
            put_bytes(buf, r.f64.data(), n * sizeof(double));
        } else {
            throw IoError("record '" + r.name + "' has unknown dtype code");
        }
    }
    atomic_write_file(path, std::span<const char>(buf.data(), buf.size()));
}

std::vector<TensorRecord> read_tensor_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open tensor file: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    Reader rd{bytes.data(), bytes.data() + bytes.size(), bytes.size()};
    if (rd.get_str(4, "magic") != "TDW1")
        throw IoError("bad magic in tensor file " + path.string() + " (expected TDW1)");
    uint32_t count = rd.get_int<uint32_t>("entry count");
    std::vector<TensorRecord> records(count);
    for (auto& r : records) {
        uint16_t name_len = rd.get_int<uint16_t>("name length");
        r.name = rd.get_str(name_len, "name");
        r.dtype = rd.get_int<uint8_t>("dtype");
        if (r.dtype > 1) throw IoError("record '" + r.name + "' has unknown dtype code");
        uint8_t ndim = rd.get_int<uint8_t>("ndim");
        r.shape.resize(ndim);
        for (auto& d : r.shape) d = rd.get_int<uint32_t>("dim");
    }
    for (auto& r : records) {
        size_t n = shape_numel(r.shape);
        if (r.dtype == 0) {
            rd.need(n * sizeof(float), r.name.c_str());
            r.f32.resize(n);
            std::memcpy(r.f32.data(), rd.p, n * sizeof(float));
            rd.p += n * sizeof(float);
        } else {
            rd.need(n * sizeof(double), r.name.c_str());
            r.f64.resize(n);
            std::memcpy(r.f64.data(), rd.p, n * sizeof(double));
            rd.p += n * sizeof(double);
        }
    }
    if (rd.p != rd.end) throw IoError("trailing bytes in tensor file " + path.string());
    return records;
}

std::vector<TensorRecord> records_from_params(const ParamSet& params, const std::string& prefix) {
    std::vector<TensorRecord> out;
    out.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i)
        out.push_back(TensorRecord::from(prefix + params.names()[i], params.tensors()[i]));
    return out;
}

void load_params_from_records(ParamSet& params, const std::vector<TensorRecord>& records,
                              const std::string& prefix) {
    for (size_t i = 0; i < params.size(); ++i) {
        const std::string want = prefix + params.names()[i];
        const TensorRecord* found = nullptr;
        for (const auto& r : records)
            if (r.name == want) {
                found = &r;
                break;
            }
        if (!found) throw IoError("missing parameter record '" + want + "'");
        Tensor& dst = params.tensors()[i];
        if (found->shape != dst.shape())
            throw ShapeError("parameter '" + want + "' stored shape " + shape_str(found->shape) +
                             " does not match model shape " + shape_str(dst.shape()));
        if (found->dtype != 0) throw IoError("parameter '" + want + "' is not f32");
        dst.vec() = found->f32;
    }
}

void atomic_write_file(const std::filesystem::path& path, std::span<const char> bytes) {
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open for writing: " + tmp.string());
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace td
