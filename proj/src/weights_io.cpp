#include "corrflow/weights_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace corrflow {

namespace {

void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

class Reader {
public:
    Reader(std::string data, std::string path) : data_(std::move(data)), path_(std::move(path)) {}

    std::string bytes(std::size_t n) {
        need(n);
        std::string out = data_.substr(pos_, n);
        pos_ += n;
        return out;
    }
    std::uint16_t u16() { return static_cast<std::uint16_t>(u(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    float f32() {
        std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void expect_consumed() const {
        if (pos_ != data_.size())
            throw std::runtime_error(path_ + ": trailing bytes, expected " +
                                     std::to_string(pos_) + " total, file has " +
                                     std::to_string(data_.size()));
    }

private:
    void need(std::size_t n) const {
        if (pos_ + n > data_.size())
            throw std::runtime_error(path_ + ": truncated, expected at least " +
                                     std::to_string(pos_ + n) + " bytes, file has " +
                                     std::to_string(data_.size()));
    }
    std::uint64_t u(int n) {
        need(n);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += n;
        return v;
    }
    std::string data_;
    std::string path_;
    std::size_t pos_ = 0;
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error(path + ": cannot open for reading");
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

void save_conv_layers(const std::string& path, const std::vector<ConvParams>& layers) {
    if (layers.size() > 0xffff)
        throw std::runtime_error("save_conv_layers: too many layers");
    std::string buf;
    buf += "CMWT";
    put_u16(buf, static_cast<std::uint16_t>(kWeightFileVersion));
    put_u16(buf, static_cast<std::uint16_t>(layers.size()));
    for (const ConvParams& p : layers) {
        p.validate();
        put_u32(buf, static_cast<std::uint32_t>(p.k));
        put_u32(buf, static_cast<std::uint32_t>(p.c_in));
        put_u32(buf, static_cast<std::uint32_t>(p.c_out));
        put_u32(buf, static_cast<std::uint32_t>(p.stride));
        for (real v : p.kernel) put_f32(buf, static_cast<float>(v));
        for (real v : p.bias) put_f32(buf, static_cast<float>(v));
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error(path + ": cannot open for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error(path + ": write failed");
}

std::vector<ConvParams> load_conv_layers(const std::string& path) {
    Reader r(read_file(path), path);
    if (r.bytes(4) != "CMWT")
        throw std::runtime_error(path + ": bad magic, expected CMWT");
    const unsigned version = r.u16();
    if (version != kWeightFileVersion)
        throw std::runtime_error(path + ": unsupported weight file version " +
                                 std::to_string(version));
    const unsigned count = r.u16();
    std::vector<ConvParams> layers;
    layers.reserve(count);
    for (unsigned i = 0; i < count; ++i) {
        const int k = static_cast<int>(r.u32());
        const int c_in = static_cast<int>(r.u32());
        const int c_out = static_cast<int>(r.u32());
        const int stride = static_cast<int>(r.u32());
        if (k <= 0 || k > 63 || c_in <= 0 || c_out <= 0 || stride <= 0 ||
            c_in > (1 << 16) || c_out > (1 << 16))
            throw std::runtime_error(path + ": implausible layer header in layer " +
                                     std::to_string(i));
        ConvParams p;
        p.k = k;
        p.c_in = c_in;
        p.c_out = c_out;
        p.stride = stride;
        p.padding = k / 2;
        p.kernel.resize(static_cast<std::size_t>(k) * k * c_in * c_out);
        p.bias.resize(c_out);
        for (real& v : p.kernel) v = static_cast<real>(r.f32());
        for (real& v : p.bias) v = static_cast<real>(r.f32());
        p.validate();  // rejects even kernels and inconsistent shapes
        layers.push_back(std::move(p));
    }
    r.expect_consumed();
    return layers;
}

}  // namespace corrflow
