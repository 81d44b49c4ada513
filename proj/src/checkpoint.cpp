#include "raise/checkpoint.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "raise/errors.hpp"

namespace ranking {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + path);
}

void put_u16(std::string& out, uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;
    const std::string& path;

    void need(size_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(path + ": truncated " + what + " at byte offset " +
                              std::to_string(pos));
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i)
            v = static_cast<uint16_t>(
                v | static_cast<uint16_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i));
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos++])) << (8 * i);
        return v;
    }
    double f32(const char* what) {
        const uint32_t bits = u32(what);
        float f;
        std::memcpy(&f, &bits, 4);
        return static_cast<double>(f);
    }
    std::string bytes(size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
    bool done() const { return pos == buf.size(); }
};

void append_tensor(std::string& out, const std::string& name, const DenseMatrix& value) {
    if (!value.all_finite())
        throw NumericError("refusing to save non-finite tensor " + name);
    if (name.size() > 0xffff)
        throw FormatError("tensor name too long: " + name.substr(0, 64) + "...");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    put_u32(out, static_cast<uint32_t>(value.rows));
    put_u32(out, static_cast<uint32_t>(value.cols));
    for (double v : value.values) put_f32(out, v);
}

std::map<std::string, DenseMatrix> read_tensors(ByteReader& r, uint32_t count) {
    std::map<std::string, DenseMatrix> tensors;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16("tensor name length");
        const std::string name = r.bytes(name_len, "tensor name");
        const uint32_t rows = r.u32("tensor rows");
        const uint32_t cols = r.u32("tensor cols");
        DenseMatrix value(rows, cols);
        for (size_t k = 0; k < value.size(); ++k) {
            const double v = r.f32("tensor value");
            if (!std::isfinite(v))
                throw FormatError(r.path + ": non-finite value in tensor " + name);
            value.values[k] = v;
        }
        if (!tensors.emplace(name, std::move(value)).second)
            throw FormatError(r.path + ": duplicate tensor " + name);
    }
    if (!r.done())
        throw FormatError(r.path + ": trailing bytes after the last tensor");
    return tensors;
}

DenseMatrix take_tensor(std::map<std::string, DenseMatrix>& tensors,
                        const std::string& name, size_t rows, size_t cols,
                        const std::string& path) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError(path + ": missing tensor " + name);
    if (it->second.rows != rows || it->second.cols != cols)
        throw FormatError(path + ": tensor " + name + " has shape " +
                          it->second.shape_str() + ", expected " +
                          std::to_string(rows) + "x" + std::to_string(cols));
    DenseMatrix out = std::move(it->second);
    tensors.erase(it);
    return out;
}

void check_header_field(const std::string& path, const char* name, uint32_t stored,
                        size_t configured) {
    if (stored != configured)
        throw FormatError(path + ": header " + name + "=" + std::to_string(stored) +
                          " does not match configured " + name + "=" +
                          std::to_string(configured));
}

}  // namespace

// ---- GMF1 ----

void save_gmf_checkpoint(const GmfModel& model, const std::string& path) {
    std::string out;
    out += "GMF1";
    put_u32(out, 1);  // format version
    put_u32(out, static_cast<uint32_t>(model.dim));
    put_u32(out, static_cast<uint32_t>(model.user_count()));
    put_u32(out, static_cast<uint32_t>(model.item_count()));
    put_u32(out, 3);  // tensor count
    append_tensor(out, model.p.name, model.p.value);
    append_tensor(out, model.q.name, model.q.value);
    append_tensor(out, model.h.name, model.h.value);
    write_file(path, out);
}

GmfModel load_gmf_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    ByteReader r{buf, 0, path};
    if (r.bytes(4, "magic") != "GMF1")
        throw FormatError(path + ": bad magic, expected GMF1");
    const uint32_t version = r.u32("format version");
    if (version != 1)
        throw FormatError(path + ": unsupported format version " +
                          std::to_string(version));
    const uint32_t d = r.u32("header d");
    const uint32_t users = r.u32("header user count");
    const uint32_t items = r.u32("header item count");
    if (d == 0 || users == 0 || items == 0)
        throw FormatError(path + ": empty model dimensions in header");
    const uint32_t count = r.u32("tensor count");
    auto tensors = read_tensors(r, count);

    GmfModel model = GmfModel::init(users, items, d, 0);
    model.p.value = take_tensor(tensors, model.p.name, users, d, path);
    model.q.value = take_tensor(tensors, model.q.name, items, d, path);
    model.h.value = take_tensor(tensors, model.h.name, 1, d, path);
    if (!tensors.empty())
        throw FormatError(path + ": unexpected tensor " + tensors.begin()->first);
    return model;
}

// ---- RAISE1 ----

void save_raise_checkpoint(const RaiseParameters& params, const std::string& path) {
    const RaiseConfig& cfg = params.config;
    std::string out;
    out += "RAISE1";
    put_u32(out, 1);  // format version
    put_u32(out, static_cast<uint32_t>(cfg.d));
    put_u32(out, static_cast<uint32_t>(cfg.n));
    put_u32(out, static_cast<uint32_t>(cfg.t));
    put_u32(out, static_cast<uint32_t>(cfg.b));
    put_u32(out, static_cast<uint32_t>(cfg.l_u));
    put_u32(out, static_cast<uint32_t>(cfg.l_i));
    const auto all = params.all_parameters();
    put_u32(out, static_cast<uint32_t>(all.size()));
    for (const Parameter* p : all) append_tensor(out, p->name, p->value);
    write_file(path, out);
}

RaiseParameters load_raise_checkpoint(const std::string& path, const RaiseConfig& cfg) {
    cfg.validate();
    const std::string buf = read_file(path);
    ByteReader r{buf, 0, path};
    if (r.bytes(6, "magic") != "RAISE1")
        throw FormatError(path + ": bad magic, expected RAISE1");
    const uint32_t version = r.u32("format version");
    if (version != 1)
        throw FormatError(path + ": unsupported format version " +
                          std::to_string(version));
    check_header_field(path, "d", r.u32("header d"), cfg.d);
    check_header_field(path, "n", r.u32("header n"), cfg.n);
    check_header_field(path, "t", r.u32("header t"), cfg.t);
    check_header_field(path, "b", r.u32("header b"), cfg.b);
    check_header_field(path, "l_u", r.u32("header l_u"), cfg.l_u);
    check_header_field(path, "l_i", r.u32("header l_i"), cfg.l_i);
    const uint32_t count = r.u32("tensor count");
    auto tensors = read_tensors(r, count);

    const auto p_it = tensors.find("gmf.p");
    const auto q_it = tensors.find("gmf.q");
    if (p_it == tensors.end()) throw FormatError(path + ": missing tensor gmf.p");
    if (q_it == tensors.end()) throw FormatError(path + ": missing tensor gmf.q");
    const size_t users = p_it->second.rows;
    const size_t items = q_it->second.rows;
    if (users == 0 || items == 0)
        throw FormatError(path + ": base ranker tensors are empty");

    RaiseParameters params =
        RaiseParameters::init(cfg, GmfModel::init(users, items, cfg.d, cfg.seed));
    for (Parameter* p : params.all_parameters())
        p->value = take_tensor(tensors, p->name, p->value.rows, p->value.cols, path);
    if (!tensors.empty())
        throw FormatError(path + ": unexpected tensor " + tensors.begin()->first);
    return params;
}

}  // namespace ranking
