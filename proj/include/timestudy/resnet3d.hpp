// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "timestudy/nn.hpp"

namespace ts {

struct ResNetConfig {
    std::size_t input_channels = 3;
    std::size_t model_depth = 50;
    std::size_t num_classes = 4;
    std::array<std::size_t, 4> stage_block_counts{3, 4, 6, 3};
    std::size_t stem_out_channels = 64;
    std::array<std::size_t, 4> bottleneck_mid_channels{64, 128, 256, 512};
    std::array<std::size_t, 4> stage_spatial_strides{1, 2, 2, 2};
    std::array<std::size_t, 4> stage_temporal_strides{1, 1, 1, 1};

    std::size_t stage_out_channels(std::size_t i) const { return 4 * bottleneck_mid_channels[i]; }

    void validate() const {
        if (model_depth != 50) throw std::invalid_argument("resnet3d: unsupported depth " + std::to_string(model_depth));
        if (stage_block_counts != std::array<std::size_t, 4>{3, 4, 6, 3})
            throw std::invalid_argument("resnet3d: depth 50 requires block counts [3,4,6,3]");
        if (num_classes < 2) throw std::invalid_argument("resnet3d: num_classes must be >= 2");
        for (auto c : bottleneck_mid_channels)
            if (c < 1) throw std::invalid_argument("resnet3d: mid channels must be >= 1");
    }
};

template <typename T>
struct Bottleneck {
    nn::Conv3dParams<T> reduce;   // 1x1x1 channel reduction
    nn::Conv3dParams<T> center;   // 3x3x3 spatiotemporal, carries the stride
    nn::Conv3dParams<T> restore;  // 1x1x1 channel restoration
    nn::BatchNorm3dState<T> bn1, bn2, bn3;
    bool has_projection = false;
    nn::Conv3dParams<T> proj;  // 1x1x1 shortcut when shape changes
    nn::BatchNorm3dState<T> proj_bn;

    Bottleneck(std::size_t mid, std::size_t out)
        : bn1(mid), bn2(mid), bn3(out), proj_bn(out) {}
};

template <typename T>
Tensor<T> bottleneck_forward(const Tensor<T>& x, Bottleneck<T>& b) {
    auto h = nn::relu(nn::batchnorm3d(nn::conv3d(x, b.reduce), b.bn1));
    h = nn::relu(nn::batchnorm3d(nn::conv3d(h, b.center), b.bn2));
    h = nn::batchnorm3d(nn::conv3d(h, b.restore), b.bn3);
    Tensor<T> shortcut = b.has_projection ? nn::batchnorm3d(nn::conv3d(x, b.proj), b.proj_bn) : x;
    return nn::relu(h + shortcut);
}

template <typename T>
class ResNet3d {
public:
    explicit ResNet3d(const ResNetConfig& cfg, std::uint64_t seed) : cfg_(cfg), stem_bn_(cfg.stem_out_channels) {
        cfg_.validate();
        Rng rng(seed);

        stem_conv_.weight = init_conv(cfg_.stem_out_channels, cfg_.input_channels, {1, 7, 7}, rng);
        stem_conv_.stride = {1, 2, 2};
        stem_conv_.padding = {0, 3, 3};

        std::size_t in_ch = cfg_.stem_out_channels;
        for (std::size_t s = 0; s < 4; ++s) {
            std::size_t mid = cfg_.bottleneck_mid_channels[s];
            std::size_t out = cfg_.stage_out_channels(s);
            stages_.emplace_back();
            for (std::size_t bi = 0; bi < cfg_.stage_block_counts[s]; ++bi) {
                std::size_t st_sp = bi == 0 ? cfg_.stage_spatial_strides[s] : 1;
                std::size_t st_t = bi == 0 ? cfg_.stage_temporal_strides[s] : 1;
                Bottleneck<T> b(mid, out);
                b.reduce.weight = init_conv(mid, in_ch, {1, 1, 1}, rng);
                b.center.weight = init_conv(mid, mid, {3, 3, 3}, rng);
                b.center.stride = {st_t, st_sp, st_sp};
                b.center.padding = {1, 1, 1};
                b.restore.weight = init_conv(out, mid, {1, 1, 1}, rng);
                b.has_projection = in_ch != out || st_sp != 1 || st_t != 1;
                if (b.has_projection) {
                    b.proj.weight = init_conv(out, in_ch, {1, 1, 1}, rng);
                    b.proj.stride = {st_t, st_sp, st_sp};
                }
                stages_[s].push_back(std::move(b));
                in_ch = out;
            }
        }

        std::size_t feat = cfg_.stage_out_channels(3);
        fc_weight_ = Tensor<T>::zeros({feat, cfg_.num_classes});
        for (auto& v : fc_weight_.data()) v = static_cast<T>(rng.next_normal()) * T(0.01);
        fc_bias_ = Tensor<T>::zeros({cfg_.num_classes});

        for (auto& [name, p] : parameters()) p.set_requires_grad(true);
    }

    // [N, C, T, H, W] -> logits [N, num_classes]
    Tensor<T> forward(const Tensor<T>& x) {
        auto h = nn::relu(nn::batchnorm3d(nn::conv3d(x, stem_conv_), stem_bn_));
        h = nn::maxpool3d(h, {1, 3, 3}, {1, 2, 2}, {0, 1, 1});
        for (auto& stage : stages_)
            for (auto& b : stage) h = bottleneck_forward(h, b);
        h = nn::global_avg_pool(h);
        return nn::linear(h, fc_weight_, fc_bias_);
    }

    void set_training(bool train) {
        training_ = train;
        stem_bn_.training = train;
        for (auto& stage : stages_)
            for (auto& b : stage) {
                b.bn1.training = train;
                b.bn2.training = train;
                b.bn3.training = train;
                b.proj_bn.training = train;
            }
    }
    bool training() const { return training_; }

    std::vector<std::pair<std::string, Tensor<T>>> parameters() {
        std::vector<std::pair<std::string, Tensor<T>>> out;
        out.emplace_back("stem.conv.weight", stem_conv_.weight);
        out.emplace_back("stem.bn.gamma", stem_bn_.gamma);
        out.emplace_back("stem.bn.beta", stem_bn_.beta);
        for (std::size_t s = 0; s < stages_.size(); ++s)
            for (std::size_t bi = 0; bi < stages_[s].size(); ++bi) {
                auto& b = stages_[s][bi];
                std::string pre = "stage" + std::to_string(s + 1) + ".block" + std::to_string(bi) + ".";
                out.emplace_back(pre + "reduce.weight", b.reduce.weight);
                out.emplace_back(pre + "bn1.gamma", b.bn1.gamma);
                out.emplace_back(pre + "bn1.beta", b.bn1.beta);
                out.emplace_back(pre + "center.weight", b.center.weight);
                out.emplace_back(pre + "bn2.gamma", b.bn2.gamma);
                out.emplace_back(pre + "bn2.beta", b.bn2.beta);
                out.emplace_back(pre + "restore.weight", b.restore.weight);
                out.emplace_back(pre + "bn3.gamma", b.bn3.gamma);
                out.emplace_back(pre + "bn3.beta", b.bn3.beta);
                if (b.has_projection) {
                    out.emplace_back(pre + "proj.weight", b.proj.weight);
                    out.emplace_back(pre + "proj_bn.gamma", b.proj_bn.gamma);
                    out.emplace_back(pre + "proj_bn.beta", b.proj_bn.beta);
                }
            }
        out.emplace_back("fc.weight", fc_weight_);
        out.emplace_back("fc.bias", fc_bias_);
        return out;
    }

    std::vector<std::pair<std::string, std::vector<T>*>> buffers() {
        std::vector<std::pair<std::string, std::vector<T>*>> out;
        auto add = [&](const std::string& pre, nn::BatchNorm3dState<T>& bn) {
            out.emplace_back(pre + ".running_mean", &bn.running_mean);
            out.emplace_back(pre + ".running_var", &bn.running_var);
        };
        add("stem.bn", stem_bn_);
        for (std::size_t s = 0; s < stages_.size(); ++s)
            for (std::size_t bi = 0; bi < stages_[s].size(); ++bi) {
                auto& b = stages_[s][bi];
                std::string pre = "stage" + std::to_string(s + 1) + ".block" + std::to_string(bi) + ".";
                add(pre + "bn1", b.bn1);
                add(pre + "bn2", b.bn2);
                add(pre + "bn3", b.bn3);
                if (b.has_projection) add(pre + "proj_bn", b.proj_bn);
            }
        return out;
    }

    const ResNetConfig& config() const { return cfg_; }
    std::vector<std::vector<Bottleneck<T>>>& stages() { return stages_; }
    nn::Conv3dParams<T>& stem_conv() { return stem_conv_; }
    nn::BatchNorm3dState<T>& stem_bn() { return stem_bn_; }

private:
    static Tensor<T> init_conv(std::size_t out_ch, std::size_t in_ch, nn::Dims3 k, Rng& rng) {
        // fan-out scaled Gaussian
        std::size_t fan_out = out_ch * k[0] * k[1] * k[2];
        T stddev = std::sqrt(T(2) / static_cast<T>(fan_out));
        auto w = Tensor<T>::zeros({out_ch, in_ch, k[0], k[1], k[2]});
        for (auto& v : w.data()) v = static_cast<T>(rng.next_normal()) * stddev;
        return w;
    }

    ResNetConfig cfg_;
    nn::Conv3dParams<T> stem_conv_;
    nn::BatchNorm3dState<T> stem_bn_;
    std::vector<std::vector<Bottleneck<T>>> stages_;
    Tensor<T> fc_weight_, fc_bias_;
    bool training_ = true;
};

template <typename T>
std::size_t count_parameters(ResNet3d<T>& model) {
    std::size_t n = 0;
    for (auto& [name, p] : model.parameters()) n += p.numel();
    return n;
}

}  // namespace ts
