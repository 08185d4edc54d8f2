#ifndef PVE_TENSOR_HPP
#define PVE_TENSOR_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "pve/errors.hpp"

namespace pve {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

struct Shape4 {
    int64_t f = 0, h = 0, w = 0, c = 0;

    int64_t size() const { return f * h * w * c; }
    bool operator==(const Shape4&) const = default;
};

// Dense [frames, height, width, channels] float32 tensor, row-major,
// channel-fastest. Used both for media in [0,1] and unbounded latents.
class VideoTensor {
public:
    VideoTensor() = default;

    VideoTensor(int64_t f, int64_t h, int64_t w, int64_t c) : dims_{f, h, w, c} {
        check_dims(dims_);
        data_.assign(static_cast<size_t>(dims_.size()), 0.0f);
    }

    explicit VideoTensor(Shape4 dims) : VideoTensor(dims.f, dims.h, dims.w, dims.c) {}

    static VideoTensor from_flat(Shape4 dims, std::vector<float> data) {
        check_dims(dims);
        if (static_cast<int64_t>(data.size()) != dims.size())
            throw ShapeError("from_flat: data length does not match extents");
        VideoTensor t;
        t.dims_ = dims;
        t.data_ = std::move(data);
        return t;
    }

    const Shape4& dims() const { return dims_; }
    int64_t size() const { return static_cast<int64_t>(data_.size()); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    float& at(int64_t f, int64_t y, int64_t x, int64_t c) {
        return data_[static_cast<size_t>(((f * dims_.h + y) * dims_.w + x) * dims_.c + c)];
    }
    float at(int64_t f, int64_t y, int64_t x, int64_t c) const {
        return data_[static_cast<size_t>(((f * dims_.h + y) * dims_.w + x) * dims_.c + c)];
    }

    float& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

    bool same_shape(const VideoTensor& o) const { return dims_ == o.dims_; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void ensure_finite(const char* who) const {
        if (!all_finite()) throw ContractError(std::string(who) + ": non-finite entries");
    }

private:
    static void check_dims(const Shape4& d) {
        if (d.f <= 0 || d.h <= 0 || d.w <= 0 || d.c <= 0)
            throw ShapeError("tensor extents must be positive");
    }

    Shape4 dims_;
    std::vector<float> data_;
};

namespace detail {

inline void write_u16(std::ostream& os, uint16_t v) { os.write(reinterpret_cast<const char*>(&v), 2); }
inline void write_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }

inline uint16_t read_u16(std::istream& is) {
    uint16_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 2);
    if (!is) throw FormatError("truncated header");
    return v;
}
inline uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    if (!is) throw FormatError("truncated header");
    return v;
}

}  // namespace detail

// "VTEN" | version u16 = 1 | rank u16 = 4 | four u32 LE extents | f32 LE payload.
inline void save_tensor(const VideoTensor& t, std::ostream& os) {
    os.write("VTEN", 4);
    detail::write_u16(os, 1);
    detail::write_u16(os, 4);
    detail::write_u32(os, static_cast<uint32_t>(t.dims().f));
    detail::write_u32(os, static_cast<uint32_t>(t.dims().h));
    detail::write_u32(os, static_cast<uint32_t>(t.dims().w));
    detail::write_u32(os, static_cast<uint32_t>(t.dims().c));
    os.write(reinterpret_cast<const char*>(t.data()), t.size() * 4);
}

inline void save_tensor(const VideoTensor& t, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot open for writing: " + path);
    save_tensor(t, os);
    if (!os) throw FormatError("write failed: " + path);
}

inline VideoTensor load_tensor(std::istream& is) {
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "VTEN", 4) != 0) throw FormatError("bad magic, expected VTEN");
    uint16_t version = detail::read_u16(is);
    if (version != 1) throw FormatError("unsupported VTEN version");
    uint16_t rank = detail::read_u16(is);
    if (rank != 4) throw FormatError("VTEN rank must be 4");
    Shape4 d;
    d.f = detail::read_u32(is);
    d.h = detail::read_u32(is);
    d.w = detail::read_u32(is);
    d.c = detail::read_u32(is);
    if (d.f <= 0 || d.h <= 0 || d.w <= 0 || d.c <= 0) throw FormatError("non-positive extent");
    std::vector<float> data(static_cast<size_t>(d.size()));
    is.read(reinterpret_cast<char*>(data.data()), d.size() * 4);
    if (is.gcount() != d.size() * 4) throw FormatError("truncated payload");
    return VideoTensor::from_flat(d, std::move(data));
}

inline VideoTensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw FormatError("cannot open: " + path);
    return load_tensor(is);
}

// round-half-up quantization to 8 bits
inline uint8_t quantize_u8(float x) {
    float c = x < 0.0f ? 0.0f : (x > 1.0f ? 1.0f : x);
    return static_cast<uint8_t>(std::floor(255.0f * c + 0.5f));
}

// One binary PPM (C=3, P6) or PGM (C=1, P5) file per frame, frame_0000.ppm ascending.
inline void export_frames(const VideoTensor& t, const std::string& dir) {
    const auto& d = t.dims();
    if (d.c != 1 && d.c != 3)
        throw ShapeError("export_frames: unsupported channel count " + std::to_string(d.c));
    std::filesystem::create_directories(dir);
    for (int64_t f = 0; f < d.f; ++f) {
        char name[32];
        std::snprintf(name, sizeof(name), "frame_%04lld.ppm", static_cast<long long>(f));
        std::ofstream os(std::filesystem::path(dir) / name, std::ios::binary);
        if (!os) throw FormatError("cannot open frame file in " + dir);
        os << (d.c == 3 ? "P6" : "P5") << "\n" << d.w << " " << d.h << "\n255\n";
        std::vector<uint8_t> row(static_cast<size_t>(d.w * d.c));
        for (int64_t y = 0; y < d.h; ++y) {
            for (int64_t x = 0; x < d.w; ++x)
                for (int64_t c = 0; c < d.c; ++c)
                    row[static_cast<size_t>(x * d.c + c)] = quantize_u8(t.at(f, y, x, c));
            os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
        }
    }
}

// elementwise helpers shared by the samplers and editing pipeline

inline VideoTensor axpby(float a, const VideoTensor& x, float b, const VideoTensor& y) {
    if (!x.same_shape(y)) throw ShapeError("axpby: shape mismatch");
    VideoTensor out(x.dims());
    for (int64_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * y[i];
    return out;
}

inline float max_abs_diff(const VideoTensor& a, const VideoTensor& b) {
    if (!a.same_shape(b)) throw ShapeError("max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

}  // namespace pve

#endif
