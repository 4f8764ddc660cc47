#pragma once

// The three architectures: encoder-decoder generator with residual blocks,
// patch discriminator, and additive-skip 3D U-Net, plus checkpoint I/O.

#include <string>
#include <utility>
#include <vector>

#include "volshift/adam.hpp"
#include "volshift/conv.hpp"
#include "volshift/volume.hpp"

namespace volshift {

struct CheckpointError : Error {
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

struct ConvParams {
    Tensor weight, bias;
};

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// ---------------------------------------------------------------------------

struct GeneratorConfig {
    int base_filters = 32;
    int n_resblocks = 10;
    int channels = 2;
    bool use_resize_conv = true;   // false: transposed k3 s2 upsampling (artifact demo)
    bool use_instance_norm = false;  // ablation; the reference table has none
    std::string descriptor() const;
};

class GeneratorNet {
  public:
    GeneratorNet(const GeneratorConfig& cfg, Rng& rng);

    // requires spatial extents divisible by 4; preserves spatial shape
    Tensor forward(TapeF& tape, const Tensor& x) const;
    Tensor operator()(TapeF& tape, const Tensor& x) const { return forward(tape, x); }

    const GeneratorConfig& config() const { return cfg_; }
    std::string descriptor() const { return cfg_.descriptor(); }
    std::vector<Tensor> parameters() const;
    NamedParams named_parameters() const;
    int64_t parameter_count() const;
    void zero_grad() const;

  private:
    GeneratorConfig cfg_;
    ConvParams head_, down1_, down2_, refine_, up1_, up2_, tail_;
    std::vector<std::array<ConvParams, 2>> resblocks_;
};

// ---------------------------------------------------------------------------

struct DiscriminatorConfig {
    int base_filters = 64;
    int channels = 2;
    double leaky_slope = 0.2;
    std::string descriptor() const;
};

// Five convolutions, kernels 4,3,3,3,4, strides 2,2,2,1,1, SAME padding;
// instance norm on the middle three; sigmoid patch map output.
class DiscriminatorNet {
  public:
    DiscriminatorNet(const DiscriminatorConfig& cfg, Rng& rng);

    Tensor forward(TapeF& tape, const Tensor& x) const;
    Tensor operator()(TapeF& tape, const Tensor& x) const { return forward(tape, x); }

    const DiscriminatorConfig& config() const { return cfg_; }
    std::string descriptor() const { return cfg_.descriptor(); }
    std::vector<Tensor> parameters() const;
    NamedParams named_parameters() const;
    int64_t parameter_count() const;
    void zero_grad() const;

  private:
    DiscriminatorConfig cfg_;
    std::array<ConvParams, 5> layers_;
};

// ---------------------------------------------------------------------------

struct SegmenterConfig {
    int base_filters = 32;
    int in_channels = 2;
    int out_classes = 2;
    std::string descriptor() const;
};

// U-Net with additive skips; requires spatial extents divisible by 16.
class SegmenterNet {
  public:
    SegmenterNet(const SegmenterConfig& cfg, Rng& rng);

    Tensor forward(TapeF& tape, const Tensor& x) const;  // softmax probabilities
    Tensor operator()(TapeF& tape, const Tensor& x) const { return forward(tape, x); }

    const SegmenterConfig& config() const { return cfg_; }
    std::string descriptor() const { return cfg_.descriptor(); }
    std::vector<Tensor> parameters() const;
    NamedParams named_parameters() const;
    int64_t parameter_count() const;
    void zero_grad() const;
    int encoder_filters(int level) const;  // for contract checks

  private:
    SegmenterConfig cfg_;
    struct Block {
        ConvParams c1, c2;
    };
    std::array<Block, 4> enc_;
    Block bottleneck_;
    std::array<ConvParams, 4> up_;  // transposed k2 s2
    std::array<Block, 4> dec_;
    ConvParams final_;
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "VSCK1", little-endian; u64 architecture hash, u64 seed,
// u64 step; then records [name-length u32, name, rank u32, extents u32 x rank,
// f32 data]. Loads are all-or-nothing.

std::vector<uint8_t> serialize_params(const std::string& descriptor, uint64_t seed, uint64_t step,
                                      const NamedParams& params);
// Returns (seed, step); throws CheckpointError on hash mismatch, ParseError on damage.
std::pair<uint64_t, uint64_t> deserialize_params(const std::vector<uint8_t>& bytes, const std::string& descriptor,
                                                 NamedParams params);

template <typename Net>
std::vector<uint8_t> save_params(const Net& net, uint64_t seed = 0, uint64_t step = 0) {
    return serialize_params(net.descriptor(), seed, step, net.named_parameters());
}

template <typename Net>
std::pair<uint64_t, uint64_t> load_params(const std::vector<uint8_t>& bytes, Net& net) {
    return deserialize_params(bytes, net.descriptor(), net.named_parameters());
}

}  // namespace volshift
