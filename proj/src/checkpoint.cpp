#include "milfcn/checkpoint.hpp"

#include <bit>
#include <cstring>

#include "milfcn/errors.hpp"
#include "milfcn/netpbm.hpp"

namespace milfcn {

namespace {

constexpr char kMagic[8] = {'M', 'I', 'L', 'F', 'C', 'N', '1', '\0'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    std::vector<std::uint8_t> bytes;

    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        bytes.insert(bytes.end(), b, b + n);
    }

    void tensor(const std::string& name, const Tensor& t) {
        u32(static_cast<std::uint32_t>(name.size()));
        raw(name.data(), name.size());
        u32(static_cast<std::uint32_t>(t.rank()));
        for (int d : t.shape()) {
            u32(static_cast<std::uint32_t>(d));
        }
        for (double v : t.values()) {
            f64(v);
        }
    }
};

struct Reader {
    const std::vector<std::uint8_t>& bytes;
    std::size_t pos = 0;

    [[noreturn]] void fail(const std::string& what) const {
        throw IoError("checkpoint: " + what + " at offset " + std::to_string(pos));
    }
    void need(std::size_t n) {
        if (bytes.size() - pos < n) {
            fail("truncated, need " + std::to_string(n) + " more bytes");
        }
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) {
            v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
        }
        pos += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) {
            v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
        }
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
        pos += n;
        return s;
    }

    Tensor tensor(const std::string& expect_name, const std::vector<int>& expect_shape) {
        const std::uint32_t name_len = u32();
        if (name_len > 4096) {
            fail("implausible tensor name length " + std::to_string(name_len));
        }
        const std::string name = str(name_len);
        if (name != expect_name) {
            fail("expected tensor \"" + expect_name + "\", found \"" + name + "\"");
        }
        const std::uint32_t rank = u32();
        if (rank != expect_shape.size()) {
            fail("tensor \"" + name + "\" has rank " + std::to_string(rank));
        }
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < rank; ++i) {
            shape.push_back(static_cast<int>(u32()));
        }
        if (shape != expect_shape) {
            fail("tensor \"" + name + "\" has shape " + shape_str(shape) + ", expected " + shape_str(expect_shape));
        }
        Tensor t = Tensor::zeros(shape);
        for (double& v : t.values()) {
            v = f64();
        }
        return t;
    }
};

}  // namespace

void save_checkpoint(const Network& net, const OptimState& state, const std::filesystem::path& path) {
    const auto named = net.named_parameters();
    if (state.velocities.size() != named.size()) {
        throw std::invalid_argument("save_checkpoint: optimizer state does not mirror the parameters");
    }

    Writer w;
    w.raw(kMagic, sizeof(kMagic));
    w.u32(kVersion);

    const NetworkConfig& c = net.config;
    w.u32(static_cast<std::uint32_t>(c.num_fg_classes));
    w.u32(static_cast<std::uint32_t>(c.num_stages()));
    for (int width : c.stage_widths) {
        w.u32(static_cast<std::uint32_t>(width));
    }
    w.u32(static_cast<std::uint32_t>(c.kernel_size));
    w.u32(static_cast<std::uint32_t>(c.downsample));

    w.u32(static_cast<std::uint32_t>(named.size()));
    for (const auto& [name, tensor] : named) {
        w.tensor(name, tensor);
    }
    w.u32(static_cast<std::uint32_t>(state.velocities.size()));
    for (std::size_t i = 0; i < named.size(); ++i) {
        w.tensor(named[i].first, state.velocities[i]);
    }
    w.u64(state.iteration);

    write_file(path, w.bytes);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    const std::vector<std::uint8_t> bytes = read_file(path);
    Reader r{bytes};

    r.need(sizeof(kMagic));
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw IoError("checkpoint: bad magic in " + path.string() + ", expected \"MILFCN1\\0\"");
    }
    r.pos = sizeof(kMagic);
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        throw IoError("checkpoint: unsupported version " + std::to_string(version) + ", expected " +
                      std::to_string(kVersion));
    }

    NetworkConfig config;
    config.num_fg_classes = static_cast<int>(r.u32());
    const std::uint32_t stages = r.u32();
    if (stages == 0 || stages > 64) {
        r.fail("implausible stage count " + std::to_string(stages));
    }
    config.stage_widths.clear();
    for (std::uint32_t i = 0; i < stages; ++i) {
        config.stage_widths.push_back(static_cast<int>(r.u32()));
    }
    config.kernel_size = static_cast<int>(r.u32());
    config.downsample = static_cast<int>(r.u32());
    config.input_channels = 3;  // the format fixes RGB input
    config.validate();

    // canonical shapes implied by the config
    Network skeleton = build_network(config, 0);
    const auto named = skeleton.named_parameters();

    Checkpoint ckpt;
    ckpt.net.config = config;

    const std::uint32_t param_count = r.u32();
    if (param_count != named.size()) {
        r.fail("parameter count " + std::to_string(param_count) + ", expected " + std::to_string(named.size()));
    }
    std::vector<Tensor> params;
    for (const auto& [name, t] : named) {
        params.push_back(r.tensor(name, t.shape()));
    }
    const std::uint32_t vel_count = r.u32();
    if (vel_count != named.size()) {
        r.fail("velocity count " + std::to_string(vel_count) + ", expected " + std::to_string(named.size()));
    }
    for (const auto& [name, t] : named) {
        ckpt.state.velocities.push_back(r.tensor(name, t.shape()));
    }
    ckpt.state.iteration = r.u64();
    if (r.pos != bytes.size()) {
        r.fail("trailing bytes");
    }

    // params order: stage kernels/biases, then the score layer
    std::size_t i = 0;
    for (int s = 0; s < config.num_stages(); ++s) {
        ckpt.net.stage_kernels.push_back(params[i++]);
        ckpt.net.stage_biases.push_back(params[i++]);
    }
    ckpt.net.score_kernel = params[i++];
    ckpt.net.score_bias = params[i++];
    return ckpt;
}

std::size_t checkpoint_byte_size(const Network& net) {
    std::size_t n = sizeof(kMagic) + 4;                               // magic + version
    n += 4 * (1 + 1 + net.config.stage_widths.size() + 1 + 1);        // config block
    const auto frame = [](const std::string& name, const Tensor& t) {
        return 4 + name.size() + 4 + 4 * static_cast<std::size_t>(t.rank()) + 8 * static_cast<std::size_t>(t.size());
    };
    for (int pass = 0; pass < 2; ++pass) {  // parameters, then velocities
        n += 4;
        for (const auto& [name, t] : net.named_parameters()) {
            n += frame(name, t);
        }
    }
    return n + 8;  // iteration counter
}

}  // namespace milfcn
