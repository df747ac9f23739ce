#include "tensor_file.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_set>

#include "errors.hpp"

namespace scseg {

namespace {

void put_bytes(std::string& out, uint64_t v, int nbytes) {
    for (int i = 0; i < nbytes; ++i) out.push_back(char((v >> (8 * i)) & 0xff));
}

bool valid_utf8(const std::string& s) {
    size_t i = 0;
    while (i < s.size()) {
        const unsigned char c = (unsigned char)s[i];
        size_t len = 0;
        if (c < 0x80) len = 1;
        else if ((c >> 5) == 0x6) len = 2;
        else if ((c >> 4) == 0xe) len = 3;
        else if ((c >> 3) == 0x1e) len = 4;
        else return false;
        if (i + len > s.size()) return false;
        for (size_t j = 1; j < len; ++j)
            if (((unsigned char)s[i + j] >> 6) != 0x2) return false;
        i += len;
    }
    return true;
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    std::string context = "header";

    void need(size_t n) {
        if (pos + n > buf.size())
            throw IoError("tensor file truncated while reading " + context + " at byte " +
                          std::to_string(pos) + " (need " + std::to_string(n) + " more bytes)");
    }
    uint64_t get(int nbytes) {
        need(size_t(nbytes));
        uint64_t v = 0;
        for (int i = 0; i < nbytes; ++i) v |= uint64_t((unsigned char)buf[pos + size_t(i)]) << (8 * i);
        pos += size_t(nbytes);
        return v;
    }
    std::string get_string(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void write_file_atomic(const std::string& path, const std::string& contents) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + tmp + "' for writing");
        f.write(contents.data(), std::streamsize(contents.size()));
        if (!f) throw IoError("write failed for '" + tmp + "'");
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot rename '" + tmp + "' to '" + path + "': " + ec.message());
}

void write_tensor_file(const std::string& path, const std::vector<TensorFileEntry>& entries) {
    std::unordered_set<std::string> names;
    for (const TensorFileEntry& e : entries) {
        if (!names.insert(e.name).second)
            throw IoError("duplicate tensor entry name '" + e.name + "'");
        if (!valid_utf8(e.name)) throw IoError("tensor entry name is not valid UTF-8");
        if (e.name.size() > 0xffff) throw IoError("tensor entry name too long");
    }

    std::string out;
    out += "SETF";
    put_bytes(out, kTensorFileVersion, 2);
    put_bytes(out, uint64_t(entries.size()), 4);
    for (const TensorFileEntry& e : entries) {
        put_bytes(out, e.name.size(), 2);
        out += e.name;
        if (const Tensor* t = std::get_if<Tensor>(&e.value)) {
            put_bytes(out, 0, 1);
            put_bytes(out, uint64_t(t->rank()), 1);
            for (int64_t ext : t->shape()) put_bytes(out, uint64_t(ext), 8);
            for (int64_t i = 0; i < t->numel(); ++i) {
                uint64_t bits;
                const double v = (*t)[i];
                std::memcpy(&bits, &v, 8);
                put_bytes(out, bits, 8);
            }
        } else {
            const IntTensor& u = std::get<IntTensor>(e.value);
            put_bytes(out, 1, 1);
            put_bytes(out, uint64_t(u.rank()), 1);
            for (int64_t ext : u.shape()) put_bytes(out, uint64_t(ext), 8);
            for (int64_t i = 0; i < u.numel(); ++i) put_bytes(out, u[i], 4);
        }
    }
    write_file_atomic(path, out);
}

std::vector<TensorFileEntry> read_tensor_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf};
    if (r.get_string(4) != "SETF") throw IoError("'" + path + "' is not a tensor file");
    const uint64_t version = r.get(2);
    if (version != kTensorFileVersion)
        throw IoError("'" + path + "' has unsupported tensor file version " +
                      std::to_string(version));
    const uint64_t count = r.get(4);

    std::vector<TensorFileEntry> entries;
    entries.reserve(count);
    std::unordered_set<std::string> names;
    for (uint64_t i = 0; i < count; ++i) {
        r.context = "entry " + std::to_string(i) + " header";
        const size_t name_len = size_t(r.get(2));
        const std::string name = r.get_string(name_len);
        if (!names.insert(name).second)
            throw IoError("'" + path + "' contains duplicate entry '" + name + "'");
        r.context = "entry '" + name + "'";
        const uint64_t dtype = r.get(1);
        const uint64_t rank = r.get(1);
        std::vector<int64_t> shape;
        int64_t numel = 1;
        for (uint64_t a = 0; a < rank; ++a) {
            const int64_t ext = int64_t(r.get(8));
            shape.push_back(ext);
            numel *= ext;
        }
        r.context = "payload of entry '" + name + "'";
        if (dtype == 0) {
            std::vector<double> data(static_cast<size_t>(numel));
            for (int64_t k = 0; k < numel; ++k) {
                const uint64_t bits = r.get(8);
                std::memcpy(&data[size_t(k)], &bits, 8);
            }
            entries.push_back({name, Tensor(std::move(shape), std::move(data))});
        } else if (dtype == 1) {
            std::vector<uint32_t> data(static_cast<size_t>(numel));
            for (int64_t k = 0; k < numel; ++k) data[size_t(k)] = uint32_t(r.get(4));
            entries.push_back({name, IntTensor(std::move(shape), std::move(data))});
        } else {
            throw IoError("'" + path + "' entry '" + name + "' has unknown dtype code " +
                          std::to_string(dtype));
        }
    }
    return entries;
}

} // namespace scseg
