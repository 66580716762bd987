#include "volume.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace comodal {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'C', 'V'};
constexpr uint8_t kFormatVersion = 1;
constexpr uint8_t kDtypeReal32 = 0;
constexpr uint8_t kDtypeInt16 = 1;

void append_bytes(std::string& out, const void* src, size_t n) {
    out.append(static_cast<const char*>(src), n);
}

void put_u8(std::string& out, uint8_t v) { append_bytes(out, &v, 1); }

void put_u16(std::string& out, uint16_t v) {
    uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
    append_bytes(out, b, 2);
}

void put_u32(std::string& out, uint32_t v) {
    uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
    append_bytes(out, b, 4);
}

void put_f64(std::string& out, double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(bits >> (8 * i));
    append_bytes(out, b, 8);
}

class Reader {
public:
    Reader(const std::string& bytes, const std::string& path)
        : bytes_(bytes), path_(path) {}

    void take(void* dst, size_t n, const char* what) {
        if (pos_ + n > bytes_.size())
            fail(ErrorCode::format, path_ + ": truncated header while reading " + std::string(what));
        std::memcpy(dst, bytes_.data() + pos_, n);
        pos_ += n;
    }

    uint8_t u8(const char* what) {
        uint8_t v;
        take(&v, 1, what);
        return v;
    }
    uint16_t u16(const char* what) {
        uint8_t b[2];
        take(b, 2, what);
        return static_cast<uint16_t>(b[0] | (b[1] << 8));
    }
    uint32_t u32(const char* what) {
        uint8_t b[4];
        take(b, 4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
        return v;
    }
    double f64(const char* what) {
        uint8_t b[8];
        take(b, 8, what);
        uint64_t bits = 0;
        for (int i = 0; i < 8; ++i) bits |= static_cast<uint64_t>(b[i]) << (8 * i);
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }

    size_t remaining() const { return bytes_.size() - pos_; }
    const char* payload() const { return bytes_.data() + pos_; }
    const std::string& path() const { return path_; }

private:
    const std::string& bytes_;
    std::string path_;
    size_t pos_{0};
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorCode::io, path + ": cannot open for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) fail(ErrorCode::io, path + ": read failed");
    return bytes;
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::io, path + ": cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) fail(ErrorCode::io, path + ": write failed");
}

struct Header {
    uint8_t dtype;
    std::array<int, 3> shape;
    std::array<double, 3> spacing;
};

Header read_header(Reader& r) {
    char magic[4];
    r.take(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0)
        fail(ErrorCode::format, r.path() + ": bad magic bytes (not a CMCV file)");
    uint8_t version = r.u8("version");
    if (version != kFormatVersion)
        fail(ErrorCode::format, r.path() + ": unsupported format version " + std::to_string(version));
    Header h;
    h.dtype = r.u8("dtype");
    if (h.dtype != kDtypeReal32 && h.dtype != kDtypeInt16)
        fail(ErrorCode::format, r.path() + ": unknown dtype code " + std::to_string(h.dtype));
    for (int i = 0; i < 3; ++i) {
        uint32_t d = r.u32("dims");
        if (d == 0 || d > static_cast<uint32_t>(std::numeric_limits<int>::max()))
            fail(ErrorCode::invariant, r.path() + ": dimension " + std::to_string(i) +
                                           " out of range (" + std::to_string(d) + ")");
        h.shape[i] = static_cast<int>(d);
    }
    for (int i = 0; i < 3; ++i) {
        h.spacing[i] = r.f64("spacing");
        if (!(h.spacing[i] > 0.0) || !std::isfinite(h.spacing[i]))
            fail(ErrorCode::invariant, r.path() + ": spacing component " + std::to_string(i) +
                                           " must be positive and finite");
    }
    return h;
}

void check_payload_size(const Reader& r, int64_t numel, size_t elem_size) {
    size_t expected = static_cast<size_t>(numel) * elem_size;
    if (r.remaining() != expected)
        fail(ErrorCode::format, r.path() + ": payload size mismatch (have " +
                                    std::to_string(r.remaining()) + " bytes, header implies " +
                                    std::to_string(expected) + ")");
}

}  // namespace

Volume Volume::zeros(std::array<int, 3> shape, std::array<double, 3> spacing, Modality modality) {
    Volume v;
    v.shape = shape;
    v.spacing = spacing;
    v.modality = modality;
    v.data.assign(static_cast<size_t>(v.numel()), 0.0f);
    v.validate();
    return v;
}

void Volume::validate() const {
    for (int i = 0; i < 3; ++i) {
        require(shape[i] >= 1, ErrorCode::invariant,
                "volume dimension " + std::to_string(i) + " must be >= 1");
        require(spacing[i] > 0.0 && std::isfinite(spacing[i]), ErrorCode::invariant,
                "volume spacing component " + std::to_string(i) + " must be positive");
    }
    require(static_cast<int64_t>(data.size()) == numel(), ErrorCode::invariant,
            "volume payload size does not match its shape");
    for (float v : data)
        require(std::isfinite(v), ErrorCode::invariant, "volume contains a non-finite intensity");
}

LabelMask LabelMask::zeros(std::array<int, 3> shape, int num_classes) {
    LabelMask m;
    m.shape = shape;
    m.num_classes = num_classes;
    m.data.assign(static_cast<size_t>(m.numel()), 0);
    m.validate();
    return m;
}

int64_t LabelMask::class_count(int k) const {
    int64_t n = 0;
    for (int16_t v : data)
        if (v == k) ++n;
    return n;
}

void LabelMask::validate() const {
    for (int i = 0; i < 3; ++i)
        require(shape[i] >= 1, ErrorCode::invariant,
                "mask dimension " + std::to_string(i) + " must be >= 1");
    require(num_classes >= 2, ErrorCode::invariant, "mask must have at least 2 classes");
    require(static_cast<int64_t>(data.size()) == numel(), ErrorCode::invariant,
            "mask payload size does not match its shape");
    for (int16_t v : data)
        require(v >= 0 && v < num_classes, ErrorCode::invariant,
                "mask voxel value " + std::to_string(v) + " outside [0, K-1]");
}

void save_volume(const Volume& vol, const std::string& path) {
    try {
        vol.validate();
    } catch (const Error& e) {
        fail(e.code(), path + ": refusing to write invalid volume: " + e.what());
    }
    std::string out;
    out.reserve(32 + vol.data.size() * 4);
    append_bytes(out, kMagic, 4);
    put_u8(out, kFormatVersion);
    put_u8(out, kDtypeReal32);
    for (int i = 0; i < 3; ++i) put_u32(out, static_cast<uint32_t>(vol.shape[i]));
    for (int i = 0; i < 3; ++i) put_f64(out, vol.spacing[i]);
    for (float v : vol.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
    }
    write_file(path, out);
}

Volume load_volume(const std::string& path) {
    std::string bytes = read_file(path);
    Reader r(bytes, path);
    Header h = read_header(r);
    if (h.dtype != kDtypeReal32)
        fail(ErrorCode::format, path + ": expected a real32 volume, found a mask");
    Volume vol;
    vol.shape = h.shape;
    vol.spacing = h.spacing;
    check_payload_size(r, vol.numel(), 4);
    vol.data.resize(static_cast<size_t>(vol.numel()));
    const char* p = r.payload();
    for (size_t i = 0; i < vol.data.size(); ++i) {
        uint32_t bits = 0;
        for (int k = 0; k < 4; ++k)
            bits |= static_cast<uint32_t>(static_cast<uint8_t>(p[i * 4 + k])) << (8 * k);
        std::memcpy(&vol.data[i], &bits, 4);
    }
    try {
        vol.validate();
    } catch (const Error& e) {
        fail(e.code(), path + ": " + e.what());
    }
    return vol;
}

void save_mask(const LabelMask& mask, const std::string& path) {
    try {
        mask.validate();
    } catch (const Error& e) {
        fail(e.code(), path + ": refusing to write invalid mask: " + e.what());
    }
    require(mask.num_classes <= std::numeric_limits<uint16_t>::max(), ErrorCode::invariant,
            path + ": num_classes too large for the mask container");
    std::string out;
    out.reserve(34 + mask.data.size() * 2);
    append_bytes(out, kMagic, 4);
    put_u8(out, kFormatVersion);
    put_u8(out, kDtypeInt16);
    for (int i = 0; i < 3; ++i) put_u32(out, static_cast<uint32_t>(mask.shape[i]));
    for (int i = 0; i < 3; ++i) put_f64(out, 1.0);  // masks carry unit spacing
    put_u16(out, static_cast<uint16_t>(mask.num_classes));
    for (int16_t v : mask.data) put_u16(out, static_cast<uint16_t>(v));
    write_file(path, out);
}

LabelMask load_mask(const std::string& path) {
    std::string bytes = read_file(path);
    Reader r(bytes, path);
    Header h = read_header(r);
    if (h.dtype != kDtypeInt16)
        fail(ErrorCode::format, path + ": expected an int16 mask, found a volume");
    LabelMask mask;
    mask.shape = h.shape;
    mask.num_classes = r.u16("num_classes");
    check_payload_size(r, mask.numel(), 2);
    mask.data.resize(static_cast<size_t>(mask.numel()));
    const char* p = r.payload();
    for (size_t i = 0; i < mask.data.size(); ++i) {
        uint16_t bits = static_cast<uint16_t>(static_cast<uint8_t>(p[i * 2]) |
                                              (static_cast<uint8_t>(p[i * 2 + 1]) << 8));
        mask.data[i] = static_cast<int16_t>(bits);
    }
    try {
        mask.validate();
    } catch (const Error& e) {
        fail(e.code(), path + ": " + e.what());
    }
    return mask;
}

Volume zscore_normalize(const Volume& vol) {
    vol.validate();
    double sum = 0.0, sum_sq = 0.0;
    for (float v : vol.data) {
        sum += v;
        sum_sq += static_cast<double>(v) * v;
    }
    double n = static_cast<double>(vol.numel());
    double mean = sum / n;
    double var = sum_sq / n - mean * mean;
    Volume out = vol;
    if (var <= 1e-24) {
        std::fill(out.data.begin(), out.data.end(), 0.0f);
        return out;
    }
    double inv_std = 1.0 / std::sqrt(var);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<float>((vol.data[i] - mean) * inv_std);
    return out;
}

}  // namespace comodal
