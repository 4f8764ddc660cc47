#include "volshift/nets.hpp"

#include <cstring>

namespace volshift {

namespace {

Tensor gaussian_init(Shape shape, Rng& rng, double std_dev = 0.02) {
    auto t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.values()) v = float(rng.normal() * std_dev);
    return t;
}

// He-uniform fan-in
Tensor he_init(Shape shape, Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 1; i < shape.size(); ++i) fan_in *= shape[i];
    double limit = std::sqrt(6.0 / double(fan_in));
    auto t = Tensor::zeros(std::move(shape), true);
    for (auto& v : t.values()) v = float(rng.uniform(-limit, limit));
    return t;
}

ConvParams make_conv(int64_t cout, int64_t cin, int64_t k, Rng& rng, bool he = false) {
    ConvParams p;
    p.weight = he ? he_init({cout, cin, k, k, k}, rng) : gaussian_init({cout, cin, k, k, k}, rng);
    p.bias = Tensor::zeros({cout}, true);
    return p;
}

// transposed layout [cin, cout, k, k, k]
ConvParams make_deconv(int64_t cin, int64_t cout, int64_t k, Rng& rng, bool he = false) {
    ConvParams p;
    p.weight = he ? he_init({cin, cout, k, k, k}, rng) : gaussian_init({cin, cout, k, k, k}, rng);
    p.bias = Tensor::zeros({cout}, true);
    return p;
}

void push(NamedParams& out, const std::string& name, const ConvParams& p) {
    out.emplace_back(name + ".w", p.weight);
    out.emplace_back(name + ".b", p.bias);
}

void check_divisible(const Tensor& x, int64_t divisor, const char* net) {
    for (int axis = 2; axis < 5; ++axis)
        if (x.extent(axis) % divisor != 0)
            throw ShapeError(strf(net, ": spatial extent ", x.extent(axis), " on axis ", axis,
                                  " must be divisible by ", divisor));
}

int64_t count(const NamedParams& params) {
    int64_t n = 0;
    for (const auto& [name, t] : params) n += t.numel();
    return n;
}

std::vector<Tensor> values_of(const NamedParams& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back(t);
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// generator

std::string GeneratorConfig::descriptor() const {
    return strf("generator/bf=", base_filters, ",res=", n_resblocks, ",ch=", channels,
                ",resize=", use_resize_conv ? 1 : 0, ",inorm=", use_instance_norm ? 1 : 0);
}

GeneratorNet::GeneratorNet(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.base_filters < 1 || cfg.channels < 1 || cfg.n_resblocks < 0)
        throw ConfigError(strf("generator config invalid: ", cfg.descriptor()));
    const int64_t bf = cfg.base_filters, c = cfg.channels;
    head_ = make_conv(bf, c, 7, rng);
    down1_ = make_conv(2 * bf, bf, 3, rng);
    down2_ = make_conv(4 * bf, 2 * bf, 3, rng);
    resblocks_.resize(size_t(cfg.n_resblocks));
    for (auto& rb : resblocks_) {
        rb[0] = make_conv(4 * bf, 4 * bf, 3, rng);
        rb[1] = make_conv(4 * bf, 4 * bf, 3, rng);
    }
    refine_ = make_conv(4 * bf, 4 * bf, 3, rng);
    if (cfg.use_resize_conv) {
        up1_ = make_conv(2 * bf, 4 * bf, 3, rng);
        up2_ = make_conv(bf, 2 * bf, 3, rng);
    } else {
        up1_ = make_deconv(4 * bf, 2 * bf, 3, rng);
        up2_ = make_deconv(2 * bf, bf, 3, rng);
    }
    tail_ = make_conv(c, bf, 7, rng);
}

Tensor GeneratorNet::forward(TapeF& tape, const Tensor& x) const {
    detail::check_rank5(x, "generator", "input");
    if (x.extent(1) != cfg_.channels)
        throw ShapeError(strf("generator: ", x.extent(1), " input channels, expected ", cfg_.channels));
    check_divisible(x, 4, "generator");

    auto maybe_norm = [&](const Tensor& t) { return cfg_.use_instance_norm ? instance_norm3d(tape, t, 1e-5) : t; };

    auto h = relu(tape, maybe_norm(conv3d(tape, x, head_.weight, head_.bias, 1, PadSpec::reflect(3))));
    h = relu(tape, maybe_norm(conv3d(tape, h, down1_.weight, down1_.bias, 2, PadSpec::zero(1))));
    h = relu(tape, maybe_norm(conv3d(tape, h, down2_.weight, down2_.bias, 2, PadSpec::zero(1))));
    for (const auto& rb : resblocks_) {
        auto t = relu(tape, maybe_norm(conv3d(tape, h, rb[0].weight, rb[0].bias, 1, PadSpec::zero(1))));
        t = relu(tape, maybe_norm(conv3d(tape, t, rb[1].weight, rb[1].bias, 1, PadSpec::zero(1))));
        h = add(tape, h, t);
    }
    h = relu(tape, maybe_norm(conv3d(tape, h, refine_.weight, refine_.bias, 1, PadSpec::zero(1))));

    auto upstage = [&](const Tensor& in, const ConvParams& p) {
        if (cfg_.use_resize_conv) {
            auto u = upsample_nearest3d(tape, in, 2);
            return conv3d(tape, u, p.weight, p.bias, 1, PadSpec::zero(1));
        }
        // transposed k3 s2 produces 2D+1; crop the trailing voxel to stay
        // shape-preserving while keeping the interior artifact pattern
        auto u = conv_transpose3d(tape, in, p.weight, p.bias, 2);
        std::array<int64_t, 3> ext{in.extent(2) * 2, in.extent(3) * 2, in.extent(4) * 2};
        return crop3d(tape, u, {0, 0, 0}, ext);
    };
    h = relu(tape, maybe_norm(upstage(h, up1_)));
    h = relu(tape, maybe_norm(upstage(h, up2_)));
    return conv3d(tape, h, tail_.weight, tail_.bias, 1, PadSpec::reflect(3));
}

NamedParams GeneratorNet::named_parameters() const {
    NamedParams out;
    push(out, "head", head_);
    push(out, "down1", down1_);
    push(out, "down2", down2_);
    for (size_t i = 0; i < resblocks_.size(); ++i) {
        push(out, strf("res", i, ".c1"), resblocks_[i][0]);
        push(out, strf("res", i, ".c2"), resblocks_[i][1]);
    }
    push(out, "refine", refine_);
    push(out, "up1", up1_);
    push(out, "up2", up2_);
    push(out, "tail", tail_);
    return out;
}

std::vector<Tensor> GeneratorNet::parameters() const { return values_of(named_parameters()); }
int64_t GeneratorNet::parameter_count() const { return count(named_parameters()); }
void GeneratorNet::zero_grad() const {
    for (auto& p : parameters()) p.zero_grad();
}

// ---------------------------------------------------------------------------
// discriminator

std::string DiscriminatorConfig::descriptor() const {
    return strf("discriminator/bf=", base_filters, ",ch=", channels, ",slope=", leaky_slope);
}

DiscriminatorNet::DiscriminatorNet(const DiscriminatorConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.base_filters < 1 || cfg.channels < 1)
        throw ConfigError(strf("discriminator config invalid: ", cfg.descriptor()));
    const int64_t bf = cfg.base_filters;
    layers_[0] = make_conv(bf, cfg.channels, 4, rng);
    layers_[1] = make_conv(2 * bf, bf, 3, rng);
    layers_[2] = make_conv(4 * bf, 2 * bf, 3, rng);
    layers_[3] = make_conv(8 * bf, 4 * bf, 3, rng);
    layers_[4] = make_conv(1, 8 * bf, 4, rng);
}

Tensor DiscriminatorNet::forward(TapeF& tape, const Tensor& x) const {
    detail::check_rank5(x, "discriminator", "input");
    if (x.extent(1) != cfg_.channels)
        throw ShapeError(strf("discriminator: ", x.extent(1), " input channels, expected ", cfg_.channels));
    const int strides[5] = {2, 2, 2, 1, 1};
    Tensor h = x;
    for (int i = 0; i < 5; ++i) {
        h = conv3d_same(tape, h, layers_[size_t(i)].weight, layers_[size_t(i)].bias, strides[i]);
        if (i >= 1 && i <= 3) h = instance_norm3d(tape, h, 1e-5);
        if (i <= 2)
            h = leaky_relu(tape, h, cfg_.leaky_slope);
        else if (i == 3)
            h = relu(tape, h);
        else
            h = sigmoid(tape, h);
    }
    return h;
}

NamedParams DiscriminatorNet::named_parameters() const {
    NamedParams out;
    for (size_t i = 0; i < layers_.size(); ++i) push(out, strf("conv", i + 1), layers_[i]);
    return out;
}

std::vector<Tensor> DiscriminatorNet::parameters() const { return values_of(named_parameters()); }
int64_t DiscriminatorNet::parameter_count() const { return count(named_parameters()); }
void DiscriminatorNet::zero_grad() const {
    for (auto& p : parameters()) p.zero_grad();
}

// ---------------------------------------------------------------------------
// segmenter

std::string SegmenterConfig::descriptor() const {
    return strf("segmenter/bf=", base_filters, ",in=", in_channels, ",out=", out_classes);
}

SegmenterNet::SegmenterNet(const SegmenterConfig& cfg, Rng& rng) : cfg_(cfg) {
    if (cfg.base_filters < 1 || cfg.in_channels < 1 || cfg.out_classes < 2)
        throw ConfigError(strf("segmenter config invalid: ", cfg.descriptor()));
    const int64_t bf = cfg.base_filters;
    const int64_t enc_ch[5] = {cfg.in_channels, bf, 2 * bf, 4 * bf, 8 * bf};
    for (int i = 0; i < 4; ++i) {
        enc_[size_t(i)].c1 = make_conv(enc_ch[i + 1], enc_ch[i], 3, rng, true);
        enc_[size_t(i)].c2 = make_conv(enc_ch[i + 1], enc_ch[i + 1], 3, rng, true);
    }
    bottleneck_.c1 = make_conv(8 * bf, 8 * bf, 3, rng, true);
    bottleneck_.c2 = make_conv(8 * bf, 8 * bf, 3, rng, true);
    const int64_t dec_ch[5] = {8 * bf, 8 * bf, 4 * bf, 2 * bf, bf};
    for (int i = 0; i < 4; ++i) {
        // additive skips require the upsampled channels to equal the
        // matching encoder output channels
        int64_t skip_ch = enc_ch[4 - i];
        if (dec_ch[i + 1] != skip_ch)
            throw ConfigError(strf("segmenter: decoder channels ", dec_ch[i + 1], " != skip channels ", skip_ch,
                                   " at level ", i));
        up_[size_t(i)] = make_deconv(dec_ch[i], dec_ch[i + 1], 2, rng, true);
        dec_[size_t(i)].c1 = make_conv(dec_ch[i + 1], dec_ch[i + 1], 3, rng, true);
        dec_[size_t(i)].c2 = make_conv(dec_ch[i + 1], dec_ch[i + 1], 3, rng, true);
    }
    final_ = make_conv(cfg.out_classes, bf, 1, rng, true);
}

int SegmenterNet::encoder_filters(int level) const {
    return cfg_.base_filters << level;
}

Tensor SegmenterNet::forward(TapeF& tape, const Tensor& x) const {
    detail::check_rank5(x, "segmenter", "input");
    if (x.extent(1) != cfg_.in_channels)
        throw ShapeError(strf("segmenter: ", x.extent(1), " input channels, expected ", cfg_.in_channels));
    check_divisible(x, 16, "segmenter");

    auto block = [&](const Tensor& in, const Block& b) {
        auto t = relu(tape, conv3d(tape, in, b.c1.weight, b.c1.bias, 1, PadSpec::zero(1)));
        return relu(tape, conv3d(tape, t, b.c2.weight, b.c2.bias, 1, PadSpec::zero(1)));
    };

    std::array<Tensor, 4> skips;
    Tensor h = x;
    for (int i = 0; i < 4; ++i) {
        h = block(h, enc_[size_t(i)]);
        skips[size_t(i)] = h;
        h = maxpool3d(tape, h, 2);
    }
    h = block(h, bottleneck_);
    for (int i = 0; i < 4; ++i) {
        h = conv_transpose3d(tape, h, up_[size_t(i)].weight, up_[size_t(i)].bias, 2);
        h = add(tape, h, skips[size_t(3 - i)]);
        h = block(h, dec_[size_t(i)]);
    }
    h = conv3d(tape, h, final_.weight, final_.bias, 1, PadSpec::zero(0));
    return softmax_channels(tape, h);
}

NamedParams SegmenterNet::named_parameters() const {
    NamedParams out;
    for (size_t i = 0; i < 4; ++i) {
        push(out, strf("enc", i + 1, ".c1"), enc_[i].c1);
        push(out, strf("enc", i + 1, ".c2"), enc_[i].c2);
    }
    push(out, "bott.c1", bottleneck_.c1);
    push(out, "bott.c2", bottleneck_.c2);
    for (size_t i = 0; i < 4; ++i) {
        push(out, strf("up", i + 1), up_[i]);
        push(out, strf("dec", i + 1, ".c1"), dec_[i].c1);
        push(out, strf("dec", i + 1, ".c2"), dec_[i].c2);
    }
    push(out, "final", final_);
    return out;
}

std::vector<Tensor> SegmenterNet::parameters() const { return values_of(named_parameters()); }
int64_t SegmenterNet::parameter_count() const { return count(named_parameters()); }
void SegmenterNet::zero_grad() const {
    for (auto& p : parameters()) p.zero_grad();
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {
constexpr char kCkptMagic[5] = {'V', 'S', 'C', 'K', '1'};

template <typename T>
void append(std::vector<uint8_t>& out, T v) {
    size_t off = out.size();
    out.resize(off + sizeof(T));
    std::memcpy(out.data() + off, &v, sizeof(T));
}

template <typename T>
T take(const std::vector<uint8_t>& bytes, size_t& off) {
    if (off + sizeof(T) > bytes.size())
        throw ParseError(strf("checkpoint: truncated at byte ", bytes.size(), ", needed ", off + sizeof(T)));
    T v;
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}
}  // namespace

std::vector<uint8_t> serialize_params(const std::string& descriptor, uint64_t seed, uint64_t step,
                                      const NamedParams& params) {
    std::vector<uint8_t> out;
    out.insert(out.end(), kCkptMagic, kCkptMagic + 5);
    append<uint64_t>(out, fnv1a64(descriptor));
    append<uint64_t>(out, seed);
    append<uint64_t>(out, step);
    for (const auto& [name, t] : params) {
        append<uint32_t>(out, uint32_t(name.size()));
        out.insert(out.end(), name.begin(), name.end());
        append<uint32_t>(out, uint32_t(t.rank()));
        for (int64_t e : t.shape()) append<uint32_t>(out, uint32_t(e));
        size_t off = out.size();
        out.resize(off + size_t(t.numel()) * 4);
        std::memcpy(out.data() + off, t.data(), size_t(t.numel()) * 4);
    }
    return out;
}

std::pair<uint64_t, uint64_t> deserialize_params(const std::vector<uint8_t>& bytes, const std::string& descriptor,
                                                 NamedParams params) {
    size_t off = 0;
    if (bytes.size() < 5 || std::memcmp(bytes.data(), kCkptMagic, 5) != 0)
        throw ParseError("checkpoint: bad magic");
    off = 5;
    uint64_t hash = take<uint64_t>(bytes, off);
    uint64_t expect = fnv1a64(descriptor);
    if (hash != expect)
        throw CheckpointError(strf("checkpoint architecture hash ", hash, " does not match ", expect, " (",
                                   descriptor, ")"));
    uint64_t seed = take<uint64_t>(bytes, off);
    uint64_t step = take<uint64_t>(bytes, off);

    // parse everything before touching the live parameters
    std::vector<std::vector<float>> staged(params.size());
    for (size_t pi = 0; pi < params.size(); ++pi) {
        const auto& [name, t] = params[pi];
        uint32_t len = take<uint32_t>(bytes, off);
        if (off + len > bytes.size())
            throw ParseError(strf("checkpoint: truncated name at byte ", off));
        std::string got(reinterpret_cast<const char*>(bytes.data() + off), len);
        off += len;
        if (got != name)
            throw CheckpointError(strf("checkpoint: parameter '", got, "' where '", name, "' expected"));
        uint32_t rank = take<uint32_t>(bytes, off);
        if (rank != uint32_t(t.rank()))
            throw CheckpointError(strf("checkpoint: '", name, "' rank ", rank, " vs ", t.rank()));
        int64_t n = 1;
        for (uint32_t r = 0; r < rank; ++r) {
            uint32_t e = take<uint32_t>(bytes, off);
            if (int64_t(e) != t.shape()[r])
                throw CheckpointError(strf("checkpoint: '", name, "' extent ", e, " vs ", t.shape()[r],
                                           " on axis ", r));
            n *= e;
        }
        if (off + size_t(n) * 4 > bytes.size())
            throw ParseError(strf("checkpoint: truncated data for '", name, "' at byte ", bytes.size(),
                                  ", needed ", off + size_t(n) * 4));
        staged[pi].resize(size_t(n));
        std::memcpy(staged[pi].data(), bytes.data() + off, size_t(n) * 4);
        off += size_t(n) * 4;
    }
    if (off != bytes.size())
        throw ParseError(strf("checkpoint: ", bytes.size() - off, " trailing bytes"));
    for (size_t pi = 0; pi < params.size(); ++pi) params[pi].second.values() = std::move(staged[pi]);
    return {seed, step};
}

}  // namespace volshift
